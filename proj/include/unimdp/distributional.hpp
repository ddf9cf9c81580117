#pragma once

// Distributionally robust stochastic backups. Each supported ambiguity family
// is turned into its equivalent concave regularizer, so a DS backup is a
// regularized backup with that regularizer:
//   marginal distributions  phi(pi) = sum_a int_{1-pi_a}^1 F_a^{-1}(t) dt
//   marginal moments        phi(pi) = sum_a sigma_a sqrt(pi_a (1 - pi_a))
//   covariance              phi(pi) = tr((S^{1/2} (Diag(pi) - pi pi^T) S^{1/2})^{1/2})

#include "unimdp/regularized.hpp"

#include <cstdint>
#include <functional>
#include <variant>

namespace unimdp {

struct ExponentialMarginal {
    double rate = 1.0;
};
struct UniformMarginal {
    double lo = 0.0;
    double hi = 1.0;
};
/// Gumbel(location, scale): F^{-1}(t) = location - scale ln(-ln t)
struct GumbelMarginal {
    double scale = 1.0;
    double location = 0.0;
};
/// Piecewise-linear F^{-1} through knots (t_i, x_i) with t_0 = 0, t_last = 1.
struct TabulatedMarginal {
    numvec t;
    numvec x;
};

using Marginal = std::variant<ExponentialMarginal, UniformMarginal, GumbelMarginal, TabulatedMarginal>;

/// F^{-1}(t) for t in (0, 1).
double inverse_cdf(const Marginal& m, double t);

/// int_{1-p}^1 F^{-1}(t) dt for p in [0, 1]; closed forms except for tables.
double marginal_tail_integral(const Marginal& m, double p);

/// Checks monotonicity on a 10^3-point probe grid and parameter ranges.
void validate_marginal(const Marginal& m);

/**
 * Adaptive Gauss-Legendre quadrature. A panel's error is the gap between the
 * 10-point rule on it and on its two halves; the worst panel is split until
 * the summed error is below abs_tol. Throws NumericalError after max_panels.
 */
double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tol = 1e-10, std::size_t max_panels = 10000);

/// One marginal per (s, a), state-major; a single row of |A| is broadcast.
struct MarginalDistributionModel {
    std::size_t num_actions = 0;
    std::vector<Marginal> marginals;
};
/// Zero-mean marginals with standard deviations sigma per (s, a).
struct MarginalMomentModel {
    std::size_t num_actions = 0;
    numvec sigma;
};
/// Zero-mean noise with covariance Sigma_s (row-major), one per state or broadcast.
struct CovarianceModel {
    std::size_t num_actions = 0;
    std::vector<numvec> matrices;
};

using AmbiguitySet = std::variant<MarginalDistributionModel, MarginalMomentModel, CovarianceModel>;

class MdmRegularizer final : public Regularizer {
public:
    explicit MdmRegularizer(std::vector<Marginal> per_action);
    double value(std::span<const double> pi) const override;
    /// d/dpi_a = F_a^{-1}(1 - pi_a)
    numvec gradient(std::span<const double> pi) const override;
    /// 1/rate (1 + logsumexp(rate w)) when every marginal is exponential with one rate.
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "mdm"; }
    const std::vector<Marginal>& marginals() const noexcept { return marginals_; }

private:
    std::vector<Marginal> marginals_;
};

class MmmRegularizer final : public Regularizer {
public:
    explicit MmmRegularizer(numvec sigma);
    double value(std::span<const double> pi) const override;
    numvec gradient(std::span<const double> pi) const override;
    /// Standard backup when every sigma is zero.
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "mmm"; }

private:
    numvec sigma_;
};

/**
 * The covariance regularizer. The inner matrix always annihilates the ones
 * vector, so it is evaluated in an orthonormal basis of the complement:
 * with A = U^T (Diag(pi) - pi pi^T) U, K = U^T Sigma U = L L^T,
 * phi = sum sqrt(eig(L^T A L)). This drops the structural zero eigenvalue
 * whose roundoff would otherwise leak through the square root.
 */
class CovarianceRegularizer final : public Regularizer {
public:
    CovarianceRegularizer(std::size_t num_actions, numvec sigma);
    double value(std::span<const double> pi) const override;
    /// Central differences along e_a - 1/n (the simplex tangent space).
    numvec gradient(std::span<const double> pi) const override;
    std::string name() const override { return "covariance"; }

private:
    std::size_t n_;
    numvec basis_;    // n x (n-1), column-major
    numvec chol_;     // (n-1) x (n-1) lower factor of U^T Sigma U, column-major
};

/// Shape and parameter checks (PD covariance, sigma >= 0, valid marginals).
void validate_ambiguity(const AmbiguitySet& set);

std::size_t ambiguity_actions(const AmbiguitySet& set);

/// Regularizer equivalent to the ambiguity set at one state.
RegularizerPtr ambiguity_regularizer(const AmbiguitySet& set, std::size_t state);

double mdm_regularizer(const MarginalDistributionModel& model, std::size_t state,
                       std::span<const double> pi);
double mmm_regularizer(const MarginalMomentModel& model, std::size_t state,
                       std::span<const double> pi);
double covariance_regularizer(const CovarianceModel& model, std::size_t state,
                              std::span<const double> pi);

/// sup over the ambiguity set of E[max_a (w_a + eps_a)] and the attaining policy.
ConjugateResult ds_backup(std::span<const double> w, const AmbiguitySet& set, std::size_t state,
                          const ConjugateOptions& opts = {});

/// The regularized backup operator with the per-state equivalent regularizers.
RegularizedBackup ds_backup_operator(const AmbiguitySet& set, std::size_t num_states,
                                     const ConjugateOptions& opts = {});

struct LowerBoundCheck {
    double mc_value = 0.0;
    double std_error = 0.0;
    double ds_value = 0.0;
    bool ok = false;  ///< mc_value <= ds_value + 3 std_error
};

/**
 * Samples E[max(w + eps)] under one member of the set (independent marginals,
 * independent two-point +-sigma, or the joint Gaussian) and compares it with
 * the DS value, which must dominate it.
 */
LowerBoundCheck ds_lower_bound_check(std::span<const double> w, const AmbiguitySet& set,
                                     std::size_t state, std::size_t samples, std::uint64_t seed);

/// max_a (w_a + E[eps_a]) under the set's members: the DS value never drops below it.
double ds_value_floor(std::span<const double> w, const AmbiguitySet& set, std::size_t state);

}  // namespace unimdp
