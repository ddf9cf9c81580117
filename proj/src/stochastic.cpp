#include "unimdp/stochastic.hpp"

#include "unimdp/regularized.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace unimdp {

namespace {

std::size_t row_index(std::size_t rows, std::size_t state, const char* who) {
    if (rows == 1) return 0;
    if (state >= rows) throw std::out_of_range(std::string(who) + ": no noise row for state");
    return state;
}

class Welford {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }
    EmaxEstimate result() const {
        const double var = n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
        return {mean_, std::sqrt(var / static_cast<double>(n_)), n_};
    }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

// One pass over `samples` noise draws, feeding max and argmax to the sinks.
template <class Draw>
McBackup accumulate(std::span<const double> w, std::size_t samples, Draw&& draw) {
    const std::size_t n = w.size();
    Welford acc;
    std::vector<std::size_t> counts(n, 0);
    numvec eps(n);
    for (std::size_t k = 0; k < samples; ++k) {
        const double* e = draw(k, eps);
        std::size_t best = 0;
        double top = w[0] + e[0];
        for (std::size_t a = 1; a < n; ++a) {
            const double v = w[a] + e[a];
            if (v > top) {
                top = v;
                best = a;
            }
        }
        acc.add(top);
        ++counts[best];
    }
    McBackup out;
    out.emax = acc.result();
    out.policy.resize(n);
    for (std::size_t a = 0; a < n; ++a)
        out.policy[a] = static_cast<double>(counts[a]) / static_cast<double>(samples);
    return out;
}

}  // namespace

NoiseModel mean_zero_gumbel(double eta) { return GumbelIid{eta, -eta * kEulerGamma}; }

NoiseModel zero_noise(std::size_t num_actions) {
    return UniformPerEntry{num_actions, numvec(num_actions, 0.0), numvec(num_actions, 0.0)};
}

numvec noise_mean(const NoiseModel& noise, std::size_t state, std::size_t num_actions) {
    return std::visit(
        [&](const auto& m) -> numvec {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, GumbelIid>) {
                return numvec(num_actions, m.location + m.scale * kEulerGamma);
            } else if constexpr (std::is_same_v<T, UniformPerEntry>) {
                const auto r = row_index(m.lo.size() / m.num_actions, state, "noise_mean");
                numvec out(num_actions);
                for (std::size_t a = 0; a < num_actions; ++a)
                    out[a] = 0.5 * (m.lo[r * m.num_actions + a] + m.hi[r * m.num_actions + a]);
                return out;
            } else {
                return numvec(num_actions, 0.0);
            }
        },
        noise);
}

NoiseSampler::NoiseSampler(NoiseModel noise, std::size_t num_actions)
    : noise_(std::move(noise)), num_actions_(num_actions) {
    if (num_actions_ == 0) throw std::invalid_argument("NoiseSampler: no actions");
    if (const auto* g = std::get_if<GumbelIid>(&noise_)) {
        if (!(g->scale > 0.0) || !std::isfinite(g->scale) || !std::isfinite(g->location))
            throw std::invalid_argument("gumbel noise: scale must be positive and finite");
    } else if (const auto* u = std::get_if<UniformPerEntry>(&noise_)) {
        if (u->num_actions != num_actions_ || u->lo.size() != u->hi.size() || u->lo.empty() ||
            u->lo.size() % num_actions_ != 0)
            throw std::invalid_argument("uniform noise: bounds do not match the action count");
        for (std::size_t i = 0; i < u->lo.size(); ++i)
            if (!std::isfinite(u->lo[i]) || !std::isfinite(u->hi[i]) || u->lo[i] > u->hi[i])
                throw std::invalid_argument("uniform noise: each entry needs finite lo <= hi");
    } else {
        const auto& gj = std::get<GaussianJoint>(noise_);
        if (gj.num_actions != num_actions_ || gj.cov.empty())
            throw std::invalid_argument("gaussian noise: covariance does not match the action count");
        const auto n = static_cast<long>(num_actions_);
        for (const auto& c : gj.cov) {
            if (c.size() != num_actions_ * num_actions_)
                throw std::invalid_argument("gaussian noise: covariance has wrong size");
            Eigen::Map<const Eigen::MatrixXd> m(c.data(), n, n);
            if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10)
                throw std::invalid_argument("gaussian noise: covariance not symmetric");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
            if (eig.info() != Eigen::Success)
                throw NumericalError("gaussian noise: eigendecomposition failed");
            if (eig.eigenvalues().minCoeff() < -1e-10)
                throw std::invalid_argument("gaussian noise: covariance not positive semidefinite");
            const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
            const Eigen::MatrixXd f = eig.eigenvectors() * root.asDiagonal();
            numvec flat(num_actions_ * num_actions_);
            Eigen::Map<Eigen::MatrixXd>(flat.data(), n, n) = f;  // column-major
            gaussian_factor_.push_back(std::move(flat));
        }
    }
}

void NoiseSampler::draw(std::size_t state, std::mt19937_64& rng, std::span<double> out) const {
    const std::size_t n = num_actions_;
    if (const auto* g = std::get_if<GumbelIid>(&noise_)) {
        std::extreme_value_distribution<double> gumbel(g->location, g->scale);
        for (std::size_t a = 0; a < n; ++a) out[a] = gumbel(rng);
    } else if (const auto* u = std::get_if<UniformPerEntry>(&noise_)) {
        const auto r = row_index(u->lo.size() / n, state, "uniform noise");
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t a = 0; a < n; ++a) {
            const double lo = u->lo[r * n + a], hi = u->hi[r * n + a];
            const double t = unit(rng);
            out[a] = lo == hi ? lo : lo + (hi - lo) * t;
        }
    } else {
        const auto r = row_index(gaussian_factor_.size(), state, "gaussian noise");
        const auto& f = gaussian_factor_[r];
        std::normal_distribution<double> normal(0.0, 1.0);
        thread_local numvec z;
        z.resize(n);
        for (auto& v : z) v = normal(rng);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += f[j * n + i] * z[j];
            out[i] = s;
        }
    }
}

std::mt19937_64 state_stream(std::uint64_t seed, std::size_t state) {
    const auto st = static_cast<std::uint64_t>(state);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(st), static_cast<std::uint32_t>(st >> 32)};
    return std::mt19937_64(seq);
}

McBackup mc_backup(std::span<const double> w, const NoiseModel& noise, std::size_t samples,
                   std::uint64_t seed, std::size_t state) {
    if (samples < 100) throw std::invalid_argument("Monte Carlo backups need at least 100 samples");
    if (w.empty()) throw std::invalid_argument("mc_backup: empty w");
    NoiseSampler sampler(noise, w.size());
    auto rng = state_stream(seed, state);
    return accumulate(w, samples, [&](std::size_t, numvec& eps) {
        sampler.draw(state, rng, eps);
        return eps.data();
    });
}

EmaxEstimate mc_emax(std::span<const double> w, const NoiseModel& noise, std::size_t samples,
                     std::uint64_t seed, std::size_t state) {
    return mc_backup(w, noise, samples, seed, state).emax;
}

numvec mc_policy(std::span<const double> w, const NoiseModel& noise, std::size_t samples,
                 std::uint64_t seed, std::size_t state) {
    return mc_backup(w, noise, samples, seed, state).policy;
}

EvBackupResult ev_backup(std::span<const double> w, double eta) {
    auto r = entropy_backup(w, eta);
    return {r.value, std::move(r.argmax), eta * kEulerGamma};
}

EvBackup::EvBackup(double eta) : eta_(eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("EvBackup: eta must be positive");
}

BackupResult EvBackup::backup(std::span<const double> w, std::size_t) const {
    auto r = ev_backup(w, eta_);
    return {r.value, std::move(r.policy)};
}

SmdpBackup::SmdpBackup(const NoiseModel& noise, std::size_t num_states, std::size_t num_actions,
                       std::size_t samples, std::uint64_t seed)
    : num_actions_(num_actions), samples_(samples) {
    if (samples < 100) throw std::invalid_argument("SmdpBackup: need at least 100 samples");
    NoiseSampler sampler(noise, num_actions);
    draws_.resize(num_states);
    for (std::size_t s = 0; s < num_states; ++s) {
        auto rng = state_stream(seed, s);
        auto& d = draws_[s];
        d.resize(samples * num_actions);
        for (std::size_t k = 0; k < samples; ++k)
            sampler.draw(s, rng, std::span<double>(d.data() + k * num_actions, num_actions));
    }
}

McBackup SmdpBackup::estimate(std::span<const double> w, std::size_t state) const {
    if (w.size() != num_actions_) throw std::invalid_argument("SmdpBackup: wrong action count");
    const auto& d = draws_.at(state);
    return accumulate(w, samples_,
                      [&](std::size_t k, numvec&) { return d.data() + k * num_actions_; });
}

BackupResult SmdpBackup::backup(std::span<const double> w, std::size_t state) const {
    auto r = estimate(w, state);
    return {r.emax.mean, std::move(r.policy)};
}

SmdpBackup smdp_backup_operator(const NoiseModel& noise, std::size_t num_states,
                                std::size_t num_actions, std::size_t samples, std::uint64_t seed) {
    return SmdpBackup(noise, num_states, num_actions, samples, seed);
}

double aggregate_std_error(const MdpModel& model, const SmdpBackup& op,
                           std::span<const double> value) {
    double worst = 0.0;
    for (std::size_t s = 0; s < model.num_states(); ++s)
        worst = std::max(worst, op.estimate(q_vector(model, value, s), s).emax.std_error);
    return worst / (1.0 - model.discount());
}

MdpModel fork_model(double r1, double r2, double discount) {
    numvec q(3 * 2 * 3, 0.0);
    auto set = [&](std::size_t s, std::size_t a, std::size_t n) { q[(s * 2 + a) * 3 + n] = 1.0; };
    set(0, 0, 1);
    set(0, 1, 2);
    set(1, 0, 1);
    set(1, 1, 1);
    set(2, 0, 2);
    set(2, 1, 2);
    numvec r(6, 0.0);
    r[0] = r1;
    r[1] = r2;
    return MdpModel(3, 2, std::move(q), std::move(r), discount);
}

NoiseModel fork_uniform_noise() {
    numvec lo(6, 0.0), hi(6, 0.0);
    hi[0] = 1.0;
    return UniformPerEntry{2, lo, hi};
}

double uniform_counterexample_ratio(double r1, double r2, double beta) {
    const double x = r2 - r1 + beta;
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return std::numeric_limits<double>::infinity();
    return x / (1.0 - x);
}

double fork_uniform_ratio_exact(double r1, double r2, double beta) {
    const double x = r2 - r1 + beta;
    if (x <= 0.0) return std::numeric_limits<double>::infinity();
    if (x >= 1.0) return 0.0;
    return (1.0 - x) / x;
}

SoftmaxFit softmax_ratio_fit(std::span<const double> x, std::span<const double> log_ratio,
                             bool allow_offset) {
    if (x.size() != log_ratio.size() || x.empty())
        throw std::invalid_argument("softmax_ratio_fit: need matching nonempty inputs");
    for (double y : log_ratio)
        if (!std::isfinite(y)) throw std::invalid_argument("softmax_ratio_fit: log-ratios must be finite");

    // For a slope m the best offset is the midrange of y - m x; the residual
    // is then convex in m, so a golden-section search over m <= 0 suffices.
    auto evaluate = [&](double m) {
        SoftmaxFit f;
        f.slope = m;
        if (allow_offset) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double r = log_ratio[i] - m * x[i];
                lo = std::min(lo, r);
                hi = std::max(hi, r);
            }
            f.offset = 0.5 * (lo + hi);
            f.residual = 0.5 * (hi - lo);
        } else {
            for (std::size_t i = 0; i < x.size(); ++i)
                f.residual = std::max(f.residual, std::abs(log_ratio[i] - m * x[i]));
        }
        return f;
    };
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = -1e8, b = 0.0;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    SoftmaxFit fc = evaluate(c), fd = evaluate(d);
    for (int i = 0; i < 400 && b - a > 1e-14; ++i) {
        if (fc.residual > fd.residual) {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = evaluate(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = evaluate(c);
        }
    }
    SoftmaxFit best = fc.residual <= fd.residual ? fc : fd;
    for (double m : {a, b, 0.0}) {
        auto f = evaluate(m);
        if (f.residual < best.residual) best = f;
    }
    return best;
}

}  // namespace unimdp
