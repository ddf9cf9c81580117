#pragma once

// Constrained Bellman backups max_{pi in D_s} w.pi over per-state feasible
// sets, the conversions between constrained and regularized models, and the
// executable witnesses that neither family contains the other.

#include "unimdp/regularized.hpp"

#include <stdexcept>
#include <variant>

namespace unimdp {

/// KL(pi || reference) <= radius
struct KlBall {
    numvec reference;
    double radius = 0.0;
};
/// ||pi - reference||_1 <= radius, radius in [0, 2]
struct L1Ball {
    numvec reference;
    double radius = 0.0;
};
/// sum_a (pi_a - ref_a)^2 / ref_a <= radius
struct L2ChiSquareBall {
    numvec reference;
    double radius = 0.0;
};
struct Singleton {
    numvec row;
};
struct FullSimplex {};
/// -phi(pi) <= level for a concave phi: the sets built by r_to_ct_convert.
struct LevelSet {
    RegularizerPtr phi;
    double level = 0.0;
};

using ConstraintSet = std::variant<KlBall, L1Ball, L2ChiSquareBall, Singleton, FullSimplex, LevelSet>;

/// A violated conversion precondition (no Slater point, unsupported set).
class ConversionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ConstrainedResult {
    double value = 0.0;
    numvec policy;
    double multiplier = 0.0;   ///< optimal dual variable of the constraint (0 when inactive)
    double dual_value = 0.0;   ///< dual objective at the multiplier
    std::size_t evaluations = 0;
};

/// Checks the reference/radius and the nonemptiness of the set for |A| actions.
void validate_constraint(const ConstraintSet& set, std::size_t num_actions);

/// max(0, l(pi) - c) for balls and level sets, sup distance for Singleton, 0 for FullSimplex.
double constraint_violation(const ConstraintSet& set, std::span<const double> pi);

double chi_square_divergence(std::span<const double> p, std::span<const double> ref);

/**
 * max_{KL(pi||ref) <= c} w.pi through the scalar dual
 *   D(y) = c y + y ln sum_a ref_a exp(w_a / y),  D'(y) = c - KL(pi_y || ref),
 * with pi_y proportional to ref exp(w / y). The bracket starts at [1e-8, 1]
 * and is widened until D' changes sign, then bisected in ln y to roundoff.
 * The returned row comes from the feasible end of the final bracket.
 */
ConstrainedResult kl_constrained_backup(std::span<const double> w, std::span<const double> ref,
                                        double c, double tol = 1e-12);

/// Exact greedy: move min(c/2, 1 - ref_top) onto the best action, taking it
/// from the worst actions first.
ConstrainedResult l1_constrained_backup(std::span<const double> w, std::span<const double> ref,
                                        double c);

/**
 * max_{chi2(pi||ref) <= c} w.pi. The maximizer is the chi-square
 * water-filling row pi_kappa = argmax w.pi - kappa chi2(pi || ref) with kappa
 * bisected in ln kappa until chi2(pi_kappa) = c; multiplier is kappa.
 */
ConstrainedResult l2_constrained_backup(std::span<const double> w, std::span<const double> ref,
                                        double c, double tol = 1e-12);

/**
 * The same problem by projected gradient ascent in the metric weighted by
 * 1/ref, where the ball is round. The projection onto simplex and ball is
 * computed by Dykstra's alternating projections (at most 10^4 rounds).
 * Stops when an outer step moves the iterate less than tol; throws
 * ConvergenceError otherwise.
 */
ConstrainedResult l2_constrained_backup_projected(std::span<const double> w,
                                                  std::span<const double> ref, double c,
                                                  double tol = 1e-10,
                                                  std::size_t max_steps = 100000);

/**
 * max_{-phi(pi) <= level} w.pi by bisection on the multiplier lambda of
 *   max_pi w.pi + lambda (phi(pi) + level),
 * whose maximizer's -phi decreases in lambda. The returned value is the
 * smaller dual value at the ends of the final bracket (second-order accurate);
 * the row is the maximizer at the feasible end.
 */
ConstrainedResult level_set_backup(std::span<const double> w, const Regularizer& phi,
                                   double level, const ConjugateOptions& opts = {});

/// Dispatches to the specialized backup for the set.
ConstrainedResult constrained_backup(std::span<const double> w, const ConstraintSet& set,
                                     const ConjugateOptions& opts = {});

/// Brute force over the barycentric grid {k / resolution}, |A| <= 3.
ConstrainedResult grid_oracle_backup(std::span<const double> w, const ConstraintSet& set,
                                     std::size_t resolution);

/**
 * Closed dual expressions for the L1 and chi-square backups next to the exact
 * value. The printed forms drop parts of the Lagrangian (the mu term of the
 * linear part for L1, the multiplier of sum pi = 1 for chi-square); the
 * corrected forms keep them and are tight.
 */
struct DualDiscrepancy {
    double exact = 0.0;
    double printed_dual = 0.0;
    double corrected_dual = 0.0;
    double difference = 0.0;      ///< printed_dual - exact
};

/// printed:   w.ref + c/2 min_{mu >= 0} (max(w + mu) - min(w + mu))
/// corrected: min_{mu >= 0} ref.(w + mu) + c/2 (max(w + mu) - min(w + mu))
DualDiscrepancy l1_dual_report(std::span<const double> w, std::span<const double> ref, double c);

/// printed:   min_{mu >= 0} ref.(w + mu) + sqrt(c sum_a ref_a (w_a + mu_a)^2)
/// corrected: min_{mu >= 0} ref.(w + mu) + sqrt(c Var_ref(w + mu))
DualDiscrepancy l2_dual_report(std::span<const double> w, std::span<const double> ref, double c);

class CtBackup final : public BackupOperator {
public:
    explicit CtBackup(std::vector<ConstraintSet> per_state, ConjugateOptions opts = {});
    BackupResult backup(std::span<const double> w, std::size_t state) const override;
    const ConstraintSet& set(std::size_t state) const;
    std::size_t num_states() const noexcept { return per_state_.size(); }

private:
    std::vector<ConstraintSet> per_state_;
    ConjugateOptions opts_;
};

/// One set per state; a single entry is broadcast to every state.
CtBackup ct_backup_operator(std::vector<ConstraintSet> sets, ConjugateOptions opts = {});

struct RToCtConversion {
    MdpModel model;                  ///< rewards shifted by -c_s
    std::vector<ConstraintSet> sets; ///< {pi : -phi_s(pi) <= c_s}
    numvec levels;                   ///< c_s = -phi_s(pi*_s)
    SolveResult regularized;         ///< the R-MDP solution the levels came from
};

/**
 * Solves the regularized model and builds the constrained model with the same
 * optimal policy. Entropy and KL regularizers become KL balls (the entropy
 * level c becomes KL(pi || uniform) <= c/eta + ln|A|); other regularizers
 * become LevelSet constraints.
 */
RToCtConversion r_to_ct_convert(const MdpModel& model, std::vector<RegularizerPtr> phi_per_state,
                                const SolveOptions& solve = {}, const ConjugateOptions& opts = {});

struct LagrangeConversion {
    numvec multipliers;                  ///< lambda_s >= 0
    std::vector<RegularizerPtr> regularizers;  ///< phi_s = -lambda_s (l_s - c_s)
    SolveResult constrained;             ///< the CT-MDP solution the multipliers came from
    numvec slackness;                    ///< |lambda_s (l_s(pi*_s) - c_s)|
};

/**
 * Solves the constrained model, reads each state's optimal multiplier off the
 * backup at the fixed point, and returns the regularizers whose R-MDP has the
 * same optimal value and policy. Accepts KL, chi-square and level-set
 * constraints with a positive radius (Slater point); anything else throws
 * ConversionError.
 */
LagrangeConversion ct_to_r_convert(const MdpModel& model, const std::vector<ConstraintSet>& sets,
                                   const SolveOptions& solve = {}, const ConjugateOptions& opts = {});

/// Entropy-regularized fork model with eta = 1 swept over reward gaps.
struct InteriorSweepWitness {
    numvec reward_gaps;
    numvec probabilities;          ///< pi(a1 | s0) of the regularized model
    std::size_t distinct = 0;      ///< pairwise distinct interior probabilities
    bool constrained_is_deterministic = false;  ///< the full-simplex CT model on the same rewards
    bool holds = false;
};

InteriorSweepWitness er_interior_sweep_witness(std::size_t settings = 50, double discount = 0.9);

/// Singleton [1, 0] at s0 against a given bounded regularizer.
struct SingletonWitness {
    numvec rewards;               ///< t with r(a1 | s0) = t, r(a2 | s0) = -t
    numvec values;                ///< V_CT(s0) at each t
    bool policy_constant = false;
    bool value_varies = false;
    double phi_lower = 0.0;       ///< L: min of phi over the 2-simplex
    double phi_upper = 0.0;       ///< U: max of phi over the 2-simplex
    double breaking_reward = 0.0; ///< r(a2 | s0) = |U - L| + 1
    double regularized_p1 = 1.0;  ///< pi(a1 | s0) of the R-MDP at that reward
    bool holds = false;
};

SingletonWitness singleton_witness(const Regularizer& phi, double discount = 0.9);

}  // namespace unimdp
