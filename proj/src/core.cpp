#include "unimdp/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace unimdp {

MdpModel::MdpModel(std::size_t num_states, std::size_t num_actions, numvec transition,
                   numvec reward, double discount)
    : num_states_(num_states), num_actions_(num_actions), transition_(std::move(transition)),
      reward_(std::move(reward)), discount_(discount) {
    if (num_states_ == 0 || num_actions_ == 0)
        throw std::invalid_argument("MdpModel: num_states and num_actions must be positive");
    if (transition_.size() != num_states_ * num_actions_ * num_states_)
        throw std::invalid_argument("MdpModel: transition tensor has wrong size");
    if (reward_.size() != num_states_ * num_actions_)
        throw std::invalid_argument("MdpModel: reward matrix has wrong size");
}

std::span<const double> MdpModel::transition_row(std::size_t s, std::size_t a) const {
    if (s >= num_states_ || a >= num_actions_) throw std::out_of_range("transition_row index");
    return {transition_.data() + (s * num_actions_ + a) * num_states_, num_states_};
}

MdpModel MdpModel::with_rewards(numvec reward) const {
    return MdpModel(num_states_, num_actions_, transition_, std::move(reward), discount_);
}

bool MdpModel::same_tuple(const MdpModel& other) const {
    return num_states_ == other.num_states_ && num_actions_ == other.num_actions_ &&
           discount_ == other.discount_ && transition_ == other.transition_;
}

Policy::Policy(std::size_t num_states, std::size_t num_actions)
    : num_states_(num_states), num_actions_(num_actions),
      probs_(num_states * num_actions, 1.0 / static_cast<double>(num_actions)) {}

Policy::Policy(std::size_t num_states, std::size_t num_actions, numvec probs)
    : num_states_(num_states), num_actions_(num_actions), probs_(std::move(probs)) {
    if (probs_.size() != num_states_ * num_actions_)
        throw std::invalid_argument("Policy: probability table has wrong size");
}

bool Policy::is_valid(double tol) const {
    for (std::size_t s = 0; s < num_states_; ++s)
        if (!is_probability_row(row(s), tol)) return false;
    return true;
}

double Policy::sup_distance(const Policy& other) const {
    if (probs_.size() != other.probs_.size())
        throw std::invalid_argument("Policy::sup_distance: shape mismatch");
    return sup_norm_distance(probs_, other.probs_);
}

bool is_probability_row(std::span<const double> row, double tol) {
    double total = 0.0;
    for (double p : row) {
        if (!std::isfinite(p) || p < -tol) return false;
        total += p;
    }
    return std::abs(total - 1.0) <= tol;
}

std::vector<Violation> validate_model(const MdpModel& model) {
    std::vector<Violation> out;
    const auto S = model.num_states();
    const auto A = model.num_actions();
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            const auto row = model.transition_row(s, a);
            double total = 0.0;
            bool negative = false;
            bool finite = true;
            for (double p : row) {
                if (!std::isfinite(p)) finite = false;
                if (p < 0.0) negative = true;
                total += p;
            }
            if (!finite) out.push_back({s, a, "transition entry not finite"});
            if (negative) out.push_back({s, a, "transition entry negative"});
            if (finite && std::abs(total - 1.0) > 1e-12) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "transition row sums to " << total << ", not 1";
                out.push_back({s, a, msg.str()});
            }
            if (!std::isfinite(model.reward(s, a))) out.push_back({s, a, "reward not finite"});
        }
    }
    const double g = model.discount();
    if (!(g >= 0.0)) out.push_back({0, 0, "discount negative"});
    if (!(g < 1.0)) out.push_back({0, 0, "discount not < 1"});
    return out;
}

QVector q_vector(const MdpModel& model, std::span<const double> value, std::size_t state) {
    if (value.size() != model.num_states())
        throw std::invalid_argument("q_vector: value function has wrong length");
    if (state >= model.num_states()) throw std::out_of_range("q_vector: state index");
    const auto A = model.num_actions();
    QVector w(A);
    for (std::size_t a = 0; a < A; ++a)
        w[a] = model.reward(state, a) + model.discount() * dot(model.transition_row(state, a), value);
    return w;
}

BackupResult standard_backup(std::span<const double> w) {
    BackupResult out;
    out.policy.assign(w.size(), 0.0);
    const auto best = std::max_element(w.begin(), w.end());  // first maximum
    out.value = *best;
    out.policy[static_cast<std::size_t>(best - w.begin())] = 1.0;
    return out;
}

std::pair<ValueFunction, Policy> bellman_sweep(const MdpModel& model, const BackupOperator& op,
                                               std::span<const double> value) {
    const auto S = model.num_states();
    const auto A = model.num_actions();
    ValueFunction next(S);
    numvec probs(S * A);
    for (std::size_t s = 0; s < S; ++s) {
        const auto w = q_vector(model, value, s);
        auto res = op.backup(w, s);
        if (res.policy.size() != A)
            throw std::logic_error("backup operator returned a policy row of wrong length");
        next[s] = res.value;
        std::copy(res.policy.begin(), res.policy.end(), probs.begin() + static_cast<long>(s * A));
    }
    return {std::move(next), Policy(S, A, std::move(probs))};
}

SolveResult value_iteration(const MdpModel& model, const BackupOperator& op,
                            const SolveOptions& opts) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
    SolveResult result;
    result.value.assign(model.num_states(), 0.0);
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t it = 1; it <= opts.max_iter; ++it) {
        auto [next, policy] = bellman_sweep(model, op, result.value);
        residual = sup_norm_distance(next, result.value);
        if (!std::isfinite(residual))
            throw NumericalError("value_iteration: non-finite Bellman residual");
        result.value = std::move(next);
        result.policy = std::move(policy);
        result.iterations = it;
        result.residual = residual;
        if (residual <= opts.tol) return result;
    }
    throw ConvergenceError("value_iteration: no convergence within max_iter sweeps", residual,
                           opts.max_iter);
}

ValueFunction policy_evaluation_exact(const MdpModel& model, const Policy& policy,
                                      std::span<const double> state_bonus) {
    const auto S = model.num_states();
    const auto A = model.num_actions();
    if (policy.num_states() != S || policy.num_actions() != A)
        throw std::invalid_argument("policy_evaluation_exact: policy shape mismatch");
    if (!state_bonus.empty() && state_bonus.size() != S)
        throw std::invalid_argument("policy_evaluation_exact: bonus has wrong length");

    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(static_cast<long>(S), static_cast<long>(S));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<long>(S));
    const double g = model.discount();
    for (std::size_t s = 0; s < S; ++s) {
        const auto si = static_cast<long>(s);
        if (!state_bonus.empty()) rhs(si) += state_bonus[s];
        for (std::size_t a = 0; a < A; ++a) {
            const double p = policy(s, a);
            if (p == 0.0) continue;
            rhs(si) += p * model.reward(s, a);
            const auto row = model.transition_row(s, a);
            for (std::size_t n = 0; n < S; ++n) system(si, static_cast<long>(n)) -= g * p * row[n];
        }
    }
    const Eigen::VectorXd v = system.partialPivLu().solve(rhs);
    const double resid = (system * v - rhs).lpNorm<Eigen::Infinity>();
    if (!(resid <= 1e-8))
        throw NumericalError("policy_evaluation_exact: linear solve residual too large");
    return ValueFunction(v.data(), v.data() + v.size());
}

MdpModel random_mdp(std::size_t num_states, std::size_t num_actions, std::uint64_t seed,
                    double reward_lo, double reward_hi, double discount) {
    if (num_states == 0 || num_actions == 0)
        throw std::invalid_argument("random_mdp: sizes must be positive");
    if (!std::isfinite(reward_lo) || !std::isfinite(reward_hi) || reward_lo > reward_hi)
        throw std::invalid_argument("random_mdp: invalid reward range");
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> unif(reward_lo, reward_hi);

    numvec transition(num_states * num_actions * num_states);
    for (std::size_t sa = 0; sa < num_states * num_actions; ++sa) {
        double* row = transition.data() + sa * num_states;
        double total = 0.0;
        for (std::size_t n = 0; n < num_states; ++n) total += (row[n] = expo(rng));
        for (std::size_t n = 0; n < num_states; ++n) row[n] /= total;
        // absorb the rounding error so rows sum to one well within 1e-12
        double drift = 1.0;
        for (std::size_t n = 0; n < num_states; ++n) drift -= row[n];
        *std::max_element(row, row + num_states) += drift;
    }
    numvec reward(num_states * num_actions);
    for (auto& r : reward) r = (reward_lo == reward_hi) ? reward_lo : unif(rng);
    return MdpModel(num_states, num_actions, std::move(transition), std::move(reward), discount);
}

double sup_norm_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("sup_norm_distance: length mismatch");
    double out = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double out = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) out += a[i] * b[i];
    return out;
}

}  // namespace unimdp
