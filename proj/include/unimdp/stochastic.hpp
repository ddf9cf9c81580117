#pragma once

// Stochastic-reward MDPs: additive per-state reward noise, Monte Carlo
// estimates of E[max_a (w_a + eps_a)], the Gumbel closed form, and the
// uniform-noise fork example that no single softmax temperature reproduces.

#include "unimdp/core.hpp"

#include <cstdint>
#include <random>
#include <variant>

namespace unimdp {

/// Euler-Mascheroni constant, the mean of a standard location-0 Gumbel.
inline constexpr double kEulerGamma = 0.57721566490153286061;

/// i.i.d. Gumbel(location, scale) noise on every action.
struct GumbelIid {
    double scale = 1.0;
    double location = 0.0;
};

/// Independent Uniform[lo, hi] per (s, a); lo == hi gives a constant entry.
/// Bounds are stored state-major; a single row of length |A| is broadcast.
struct UniformPerEntry {
    std::size_t num_actions = 0;
    numvec lo;
    numvec hi;
};

/// Zero-mean joint Gaussian per state; one row-major |A|x|A| matrix per state
/// or a single matrix broadcast to every state.
struct GaussianJoint {
    std::size_t num_actions = 0;
    std::vector<numvec> cov;
};

using NoiseModel = std::variant<GumbelIid, UniformPerEntry, GaussianJoint>;

/// Gumbel with location -eta * gamma_E, so E[eps] = 0.
NoiseModel mean_zero_gumbel(double eta);

/// Noise identically zero on |A| actions.
NoiseModel zero_noise(std::size_t num_actions);

/// Per-state mean of eps_a (used for the Jensen lower bound).
numvec noise_mean(const NoiseModel& noise, std::size_t state, std::size_t num_actions);

/**
 * Draws eps_s vectors for one noise model. Gaussian square-root factors are
 * computed once at construction; the constructor validates the model.
 */
class NoiseSampler {
public:
    NoiseSampler(NoiseModel noise, std::size_t num_actions);
    void draw(std::size_t state, std::mt19937_64& rng, std::span<double> out) const;
    std::size_t num_actions() const noexcept { return num_actions_; }
    const NoiseModel& model() const noexcept { return noise_; }

private:
    NoiseModel noise_;
    std::size_t num_actions_;
    std::vector<numvec> gaussian_factor_;
};

/// Reproducible stream for one state, derived only from (seed, state).
std::mt19937_64 state_stream(std::uint64_t seed, std::size_t state);

struct EmaxEstimate {
    double mean = 0.0;
    double std_error = 0.0;  ///< sample standard deviation / sqrt(samples)
    std::size_t samples = 0;
};

struct McBackup {
    EmaxEstimate emax;
    numvec policy;  ///< empirical argmax frequencies
};

/// E[max_a (w_a + eps_a)] by Monte Carlo; samples >= 100.
EmaxEstimate mc_emax(std::span<const double> w, const NoiseModel& noise, std::size_t samples,
                     std::uint64_t seed, std::size_t state = 0);

/// Empirical frequency of argmax_a (w_a + eps_a), ties to the lowest index.
numvec mc_policy(std::span<const double> w, const NoiseModel& noise, std::size_t samples,
                 std::uint64_t seed, std::size_t state = 0);

/// Both estimates from one pass over the same draws.
McBackup mc_backup(std::span<const double> w, const NoiseModel& noise, std::size_t samples,
                   std::uint64_t seed, std::size_t state = 0);

struct EvBackupResult {
    double value = 0.0;  ///< eta ln sum exp(w/eta): E[max] under mean-zero Gumbel noise
    numvec policy;       ///< softmax(w/eta)
    /// Add this to value to compare with location-0 Gumbel samples.
    double location_shift = 0.0;
};

EvBackupResult ev_backup(std::span<const double> w, double eta);

class EvBackup final : public BackupOperator {
public:
    explicit EvBackup(double eta);
    BackupResult backup(std::span<const double> w, std::size_t state) const override;

private:
    double eta_;
};

/**
 * Monte Carlo S-MDP backup with common random numbers: the draws for each
 * state are generated once from (seed, state) and reused in every sweep, so
 * the operator is a deterministic monotone gamma-contraction.
 */
class SmdpBackup final : public BackupOperator {
public:
    SmdpBackup(const NoiseModel& noise, std::size_t num_states, std::size_t num_actions,
               std::size_t samples, std::uint64_t seed);
    BackupResult backup(std::span<const double> w, std::size_t state) const override;
    McBackup estimate(std::span<const double> w, std::size_t state) const;
    std::size_t samples() const noexcept { return samples_; }

private:
    std::size_t num_actions_;
    std::size_t samples_;
    std::vector<numvec> draws_;  // per state, samples x actions
};

SmdpBackup smdp_backup_operator(const NoiseModel& noise, std::size_t num_states,
                                std::size_t num_actions, std::size_t samples, std::uint64_t seed);

/// max_s se_s / (1 - gamma): the per-backup MC error propagated to the values.
double aggregate_std_error(const MdpModel& model, const SmdpBackup& op,
                           std::span<const double> value);

/**
 * Three states, two actions: from s0 action a1 leads to s1 and a2 to s2; s1
 * and s2 are absorbing with zero reward. Only r(a1|s0) = r1 and r(a2|s0) = r2
 * are nonzero.
 */
MdpModel fork_model(double r1, double r2, double discount = 0.9);

/// eps(a1|s0) ~ Uniform[0, 1], every other entry zero, for fork_model.
NoiseModel fork_uniform_noise();

/**
 * pi(a1|s0) / pi(a2|s0) of the fork model with uniform noise on a1, as the
 * printed case split in x = r2 - r1 + beta: 0 for x <= 0, +inf for x >= 1 and
 * x / (1 - x) in between. The event {eps >= x} that drives pi(a1|s0) actually
 * gives (1 - x) / x; see fork_uniform_ratio_exact.
 */
double uniform_counterexample_ratio(double r1, double r2, double beta);

/// P[eps >= x] / P[eps < x] for eps ~ Uniform[0, 1] with x = r2 - r1 + beta.
double fork_uniform_ratio_exact(double r1, double r2, double beta);

struct SoftmaxFit {
    double residual = 0.0;  ///< minimax error in log-ratio space
    double slope = 0.0;     ///< -1/eta (0 means the eta -> infinity limit)
    double offset = 0.0;    ///< b / eta
};

/**
 * Best fit of log-ratios y_i by the softmax family y = (b - x_i) / eta over
 * eta > 0, minimizing max_i |y_i - fit_i|. With allow_offset = false, b = 0.
 * A residual bounded away from zero means no single temperature (and reward
 * offset, if allowed) reproduces the observed ratios.
 */
SoftmaxFit softmax_ratio_fit(std::span<const double> x, std::span<const double> log_ratio,
                             bool allow_offset);

}  // namespace unimdp
