#pragma once

// Randomized equivalence checks between framework instances on a shared
// (S, A, q, gamma), and the suite of confirmations and counterexamples that
// places the frameworks relative to each other.
//
// Two instances are equivalent when, for every reward r, the first solved
// under r and the second under r - alpha give the same values and policies.
// Only finitely many rewards are tried, so a passing check reads
// "consistent over N trials" and nothing stronger.

#include "unimdp/constrained.hpp"
#include "unimdp/distributional.hpp"
#include "unimdp/stochastic.hpp"

#include <optional>
#include <string>

namespace unimdp {

struct StandardFramework {};
struct RegularizedFramework {
    std::vector<RegularizerPtr> phi;  ///< one per state or a single broadcast entry
};
/// Reward noise eps. Without monte_carlo the backup is evaluated in closed
/// form, which exists only for i.i.d. Gumbel noise.
struct StochasticFramework {
    NoiseModel noise;
    bool monte_carlo = true;
    std::size_t samples = 100000;
    std::uint64_t seed = 0;
};
struct DistributionalFramework {
    AmbiguitySet ambiguity;
};
struct ConstrainedFramework {
    std::vector<ConstraintSet> sets;  ///< one per state or a single broadcast entry
};

using Framework = std::variant<StandardFramework, RegularizedFramework, StochasticFramework,
                               DistributionalFramework, ConstrainedFramework>;

struct FrameworkInstance {
    MdpModel model;
    Framework framework;
};

/// The instances being compared do not share (S, A, q, gamma).
class ShapeMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string framework_name(const Framework& f);
bool is_monte_carlo(const Framework& f);

struct InstanceSolution {
    SolveResult result;
    double value_error = 0.0;   ///< 0 for exact paths, aggregate MC std error otherwise
    double policy_error = 0.0;  ///< 0 for exact paths, 1/sqrt(samples) otherwise
};

/// Solves the instance with its own rewards replaced by reward (state-major).
InstanceSolution solve_instance(const FrameworkInstance& x, std::span<const double> reward,
                                const SolveOptions& opts = {});

enum class Verdict { consistent, refuted, inconclusive };
std::string verdict_name(Verdict v);

struct TrialGap {
    double value_gap = 0.0;
    double policy_gap = 0.0;
    double value_allowed = 0.0;
    double policy_allowed = 0.0;
};

struct EquivalenceWitness {
    std::size_t trial = 0;
    numvec reward;  ///< the reward given to x; y received reward - offset
    ValueFunction value_x;
    ValueFunction value_y;
    Policy policy_x;
    Policy policy_y;
    double value_gap = 0.0;
    double policy_gap = 0.0;
};

struct EquivalenceReport {
    std::string framework_x;
    std::string framework_y;
    numvec offset;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    double tol = 0.0;
    bool monte_carlo = false;
    std::vector<TrialGap> gaps;
    Verdict verdict = Verdict::consistent;
    std::optional<EquivalenceWitness> witness;
    std::string summary;  ///< e.g. "consistent over 50 trials"
};

struct EquivalenceOptions {
    std::size_t trials = 50;
    std::uint64_t seed = 0;
    double tol = 1e-6;
    SolveOptions solve{};
};

/**
 * Reward for one trial, drawn only from (seed, trial). With three or more
 * trials the last two are corners: all rewards tied at zero, and +-5
 * alternating over (s + a). Every other trial is uniform on [-5, 5].
 */
numvec trial_reward(std::size_t num_states, std::size_t num_actions, std::size_t trial,
                    std::size_t trials, std::uint64_t seed);

/**
 * Solves x under each trial reward r and y under r - offset and compares
 * values and policies in the sup norm. An empty offset means zero.
 *
 * Exact comparisons are consistent iff every gap is within tol; otherwise
 * the first failing trial is kept as the witness. When either side is Monte
 * Carlo the allowance grows by 4 times the combined standard errors. A gap
 * beyond that allowance but within twice it is inconclusive; only gaps past
 * twice the allowance refute.
 */
EquivalenceReport check_equivalence(const FrameworkInstance& x, const FrameworkInstance& y,
                                    std::span<const double> offset,
                                    const EquivalenceOptions& opts = {});

/// Re-solves the stored witness and returns its (value gap, policy gap).
std::pair<double, double> replay_witness(const FrameworkInstance& x, const FrameworkInstance& y,
                                         std::span<const double> offset,
                                         const EquivalenceWitness& w,
                                         const SolveOptions& opts = {});

struct RelationEdge {
    std::string name;
    std::string relation;
    Verdict expected = Verdict::consistent;
    Verdict actual = Verdict::consistent;
    bool monte_carlo = false;
    std::size_t trials = 0;  ///< randomized trials backing the edge (0 for constructive witnesses)
    bool as_expected = false;  ///< actual == expected, or an inconclusive MC edge
    std::vector<std::pair<std::string, double>> evidence;
    std::string note;
};

struct CurvePoint {
    double x = 0.0;
    double y1 = 0.0;
    double y2 = 0.0;
};

struct NestedRelationReport {
    std::uint64_t seed = 0;
    std::vector<RelationEdge> edges;
    /// Uniform-noise fork: x = r2 - r1 against the printed and the exact ratio.
    std::vector<CurvePoint> ratio_curve;
    /// Entropy fork sweep: reward gap against pi(a1|s0) and the CT full-simplex policy.
    std::vector<CurvePoint> sweep_curve;
    bool all_as_expected() const;
};

struct SuiteOptions {
    std::uint64_t seed = 0;
    std::size_t trials = 50;
    std::size_t mc_samples = 100000;
    std::size_t mc_trials = 5;  ///< capped by trials
};

/**
 * Runs every edge:
 *  - entropy-regularized vs Gumbel noise, closed form and Monte Carlo (consistent)
 *  - entropy-regularized vs standard (refuted)
 *  - uniform-noise fork vs any single-temperature softmax (refuted)
 *  - regularized vs distributional for the marginal-distribution, marginal-moment
 *    and covariance families (consistent)
 *  - a three-action quadratic regularizer with a positive cross derivative
 *    d pi_1 / d w_2, which no additive-noise model produces (refuted)
 *  - entropy-regularized not reachable by constraints, and a singleton
 *    constraint not reachable by a bounded regularizer (refuted)
 * Failures are recorded in the edges; the suite itself does not throw.
 */
NestedRelationReport counterexample_suite(const SuiteOptions& opts = {});

}  // namespace unimdp
