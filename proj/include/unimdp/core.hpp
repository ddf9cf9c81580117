#pragma once

// Tabular MDP substrate shared by every framework: the model tuple, policies,
// value functions, the generic value-iteration engine and exact policy
// evaluation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unimdp {

using numvec = std::vector<double>;

/// Raised by iterative solvers that exhaust their budget. Carries the last
/// residual so callers can report how far off the iteration was.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual, std::size_t iterations)
        : std::runtime_error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    double residual_;
    std::size_t iterations_;
};

/// Raised when a dense linear solve or eigendecomposition is not trustworthy.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Tabular MDP (S, A, q, r, gamma) with dense storage.
 *
 * The transition tensor is stored row-major as (s, a, s') and the reward
 * matrix as (s, a). The constructor only checks array shapes; the numeric
 * invariants (stochastic rows, finite rewards, discount < 1) are reported by
 * validate_model so that loaders can list every defect at once.
 */
class MdpModel {
public:
    MdpModel(std::size_t num_states, std::size_t num_actions, numvec transition,
             numvec reward, double discount);

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }
    double discount() const noexcept { return discount_; }

    /// q(. | s, a) as a row of length num_states
    std::span<const double> transition_row(std::size_t s, std::size_t a) const;
    double transition(std::size_t s, std::size_t a, std::size_t next) const {
        return transition_[(s * num_actions_ + a) * num_states_ + next];
    }
    double reward(std::size_t s, std::size_t a) const {
        return reward_[s * num_actions_ + a];
    }
    std::span<const double> reward_row(std::size_t s) const {
        return {reward_.data() + s * num_actions_, num_actions_};
    }

    const numvec& transitions() const noexcept { return transition_; }
    const numvec& rewards() const noexcept { return reward_; }

    /// Same (S, A, q, gamma) with a different reward matrix.
    MdpModel with_rewards(numvec reward) const;

    /// True when (S, A, q, gamma) coincide bitwise.
    bool same_tuple(const MdpModel& other) const;

private:
    std::size_t num_states_;
    std::size_t num_actions_;
    numvec transition_;
    numvec reward_;
    double discount_;
};

/// Row-stochastic table pi(a|s).
class Policy {
public:
    Policy() = default;
    Policy(std::size_t num_states, std::size_t num_actions);
    Policy(std::size_t num_states, std::size_t num_actions, numvec probs);

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }

    std::span<const double> row(std::size_t s) const {
        return {probs_.data() + s * num_actions_, num_actions_};
    }
    std::span<double> row(std::size_t s) { return {probs_.data() + s * num_actions_, num_actions_}; }
    double operator()(std::size_t s, std::size_t a) const { return probs_[s * num_actions_ + a]; }

    const numvec& probs() const noexcept { return probs_; }

    /// Every row nonnegative and summing to one within tol.
    bool is_valid(double tol = 1e-10) const;

    /// Largest absolute entrywise difference.
    double sup_distance(const Policy& other) const;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    numvec probs_;
};

using ValueFunction = numvec;

/// w_{sa} = r(a|s) + gamma sum_{s'} q(s'|s,a) V(s') for one state.
using QVector = numvec;

/// Per-state result of a Bellman backup.
struct BackupResult {
    double value = 0.0;
    numvec policy;
};

/**
 * A per-state map from the one-step lookahead vector to the backed-up value
 * and the policy row attaining it. Every framework module supplies one.
 * Implementations must be pure: the result may depend only on (w, state).
 */
class BackupOperator {
public:
    virtual ~BackupOperator() = default;
    virtual BackupResult backup(std::span<const double> w, std::size_t state) const = 0;
};

struct SolveResult {
    ValueFunction value;
    Policy policy;
    std::size_t iterations = 0;
    double residual = 0.0;
};

struct SolveOptions {
    double tol = 1e-10;
    std::size_t max_iter = 100000;
};

/// One finding of validate_model.
struct Violation {
    std::size_t state = 0;
    std::size_t action = 0;
    std::string rule;
};

std::vector<Violation> validate_model(const MdpModel& model);

/// Validates a single probability row (used for policies and references).
bool is_probability_row(std::span<const double> row, double tol = 1e-10);

QVector q_vector(const MdpModel& model, std::span<const double> value, std::size_t state);

/// max_a w_a with a one-hot row; ties go to the lowest action index.
BackupResult standard_backup(std::span<const double> w);

class StandardBackup final : public BackupOperator {
public:
    BackupResult backup(std::span<const double> w, std::size_t) const override {
        return standard_backup(w);
    }
};

/// One Bellman sweep V -> B[V], with the policy rows produced by the backup.
std::pair<ValueFunction, Policy> bellman_sweep(const MdpModel& model, const BackupOperator& op,
                                               std::span<const double> value);

/**
 * Fixed-point iteration V_{k+1} = B[V_k] from V_0 = 0 until the sup-norm step
 * drops to opts.tol. Throws ConvergenceError after opts.max_iter sweeps.
 */
SolveResult value_iteration(const MdpModel& model, const BackupOperator& op,
                            const SolveOptions& opts = {});

/**
 * Solves V = r_pi + b + gamma P_pi V by a dense LU solve, where b is an
 * optional per-state bonus (the regularizer value of the policy row).
 */
ValueFunction policy_evaluation_exact(const MdpModel& model, const Policy& policy,
                                      std::span<const double> state_bonus = {});

/// Dirichlet(1) transition rows and uniform rewards in [reward_lo, reward_hi].
MdpModel random_mdp(std::size_t num_states, std::size_t num_actions, std::uint64_t seed,
                    double reward_lo = -1.0, double reward_hi = 1.0, double discount = 0.9);

double sup_norm_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace unimdp
