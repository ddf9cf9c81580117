#pragma once

// Regularized Bellman backups: the Legendre-Fenchel conjugate
//   phi*(w) = max_{pi in simplex} w.pi + phi(pi)
// in closed form for the entropy/KL family and by mirror ascent otherwise.

#include "unimdp/core.hpp"

#include <memory>
#include <optional>
#include <string>

namespace unimdp {

struct ConjugateResult {
    double value = 0.0;  ///< phi*(w)
    numvec argmax;       ///< maximizing policy row
    std::size_t iterations = 0;
};

/// Thrown by numeric_conjugate when the step budget runs out.
class ConjugateError : public ConvergenceError {
public:
    ConjugateError(const std::string& what, double residual, std::size_t iterations,
                   ConjugateResult best)
        : ConvergenceError(what, residual, iterations), best_(std::move(best)) {}
    const ConjugateResult& best() const noexcept { return best_; }

private:
    ConjugateResult best_;
};

/**
 * A concave function on the action simplex.
 *
 * value() must be defined (and bounded) on the whole simplex. gradient() is
 * only required on the interior. closed_form() returns the conjugate directly
 * when the family admits one; otherwise backups fall back to mirror ascent.
 */
class Regularizer {
public:
    virtual ~Regularizer() = default;
    virtual double value(std::span<const double> pi) const = 0;
    virtual numvec gradient(std::span<const double> pi) const = 0;
    virtual std::optional<ConjugateResult> closed_form(std::span<const double> /*w*/) const {
        return std::nullopt;
    }
    virtual std::string name() const = 0;
};

using RegularizerPtr = std::shared_ptr<const Regularizer>;

class ZeroRegularizer final : public Regularizer {
public:
    double value(std::span<const double>) const override { return 0.0; }
    numvec gradient(std::span<const double> pi) const override { return numvec(pi.size(), 0.0); }
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "zero"; }
};

/// phi(pi) = -eta sum_a pi_a ln pi_a
class EntropyRegularizer final : public Regularizer {
public:
    explicit EntropyRegularizer(double eta);
    double eta() const noexcept { return eta_; }
    double value(std::span<const double> pi) const override;
    numvec gradient(std::span<const double> pi) const override;
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "entropy"; }

private:
    double eta_;
};

/// phi(pi) = -eta KL(pi || reference)
class KlRegularizer final : public Regularizer {
public:
    KlRegularizer(double eta, numvec reference);
    double eta() const noexcept { return eta_; }
    const numvec& reference() const noexcept { return reference_; }
    double value(std::span<const double> pi) const override;
    numvec gradient(std::span<const double> pi) const override;
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "kl"; }

private:
    double eta_;
    numvec reference_;
};

/// phi(pi) = -sum_a (pi_a - ref_a)^2 / ref_a, the negated chi-square divergence.
class ChiSquareRegularizer final : public Regularizer {
public:
    explicit ChiSquareRegularizer(numvec reference);
    const numvec& reference() const noexcept { return reference_; }
    double value(std::span<const double> pi) const override;
    numvec gradient(std::span<const double> pi) const override;
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "chi_square"; }

private:
    numvec reference_;
};

/// phi(pi) = -1/2 pi^T H pi for a symmetric positive definite H (row-major).
class QuadraticRegularizer final : public Regularizer {
public:
    QuadraticRegularizer(std::size_t num_actions, numvec hessian);
    double value(std::span<const double> pi) const override;
    numvec gradient(std::span<const double> pi) const override;
    std::string name() const override { return "quadratic"; }

private:
    std::size_t n_;
    numvec h_;
};

/// scale * base(pi) + offset, scale > 0. Keeps the closed form of the base.
class ScaledRegularizer final : public Regularizer {
public:
    ScaledRegularizer(RegularizerPtr base, double scale, double offset = 0.0);
    const Regularizer& base() const noexcept { return *base_; }
    double scale() const noexcept { return scale_; }
    double offset() const noexcept { return offset_; }
    double value(std::span<const double> pi) const override;
    numvec gradient(std::span<const double> pi) const override;
    std::optional<ConjugateResult> closed_form(std::span<const double> w) const override;
    std::string name() const override { return "scaled(" + base_->name() + ")"; }

private:
    RegularizerPtr base_;
    double scale_;
    double offset_;
};

/// Overflow-safe log sum_a exp(x_a).
double logsumexp(std::span<const double> x);

/// eta ln sum exp(w/eta) with the softmax row.
ConjugateResult entropy_backup(std::span<const double> w, double eta);

/// eta ln sum ref_a exp(w_a/eta) with argmax proportional to ref_a exp(w_a/eta).
ConjugateResult kl_backup(std::span<const double> w, double eta, std::span<const double> reference);

/**
 * max_pi w.pi - lambda sum_a (pi_a - ref_a)^2/ref_a by water-filling:
 * pi_a = ref_a max(0, 1 + (w_a - nu)/(2 lambda)) with nu fixed by sum pi = 1.
 */
ConjugateResult chi_square_backup(std::span<const double> w, double lambda,
                                  std::span<const double> reference);

struct ConjugateOptions {
    double tol = 1e-15;            ///< optimality-gap / stall threshold
    std::size_t max_steps = 200000;
    std::size_t stall_window = 50;
};

/**
 * max_{pi in simplex} w.pi + phi(pi) by entropic mirror ascent from the
 * uniform row with step-halving line search.
 *
 * Stops when the Frank-Wolfe gap max_a g_a - g.pi (an upper bound on the
 * suboptimality for concave phi) drops below tol, or when the relative
 * objective improvement over stall_window consecutive steps falls below tol.
 */
ConjugateResult numeric_conjugate(std::span<const double> w, const Regularizer& phi,
                                  const ConjugateOptions& opts = {});

/// Closed form when phi has one, otherwise numeric_conjugate.
ConjugateResult regularized_conjugate(std::span<const double> w, const Regularizer& phi,
                                      const ConjugateOptions& opts = {});

class RegularizedBackup final : public BackupOperator {
public:
    explicit RegularizedBackup(std::vector<RegularizerPtr> per_state, ConjugateOptions opts = {});
    BackupResult backup(std::span<const double> w, std::size_t state) const override;
    const Regularizer& regularizer(std::size_t state) const;
    std::size_t num_states() const noexcept { return per_state_.size(); }

private:
    std::vector<RegularizerPtr> per_state_;
    ConjugateOptions opts_;
};

/// One regularizer per state; a single entry is broadcast to every state.
RegularizedBackup regularized_backup_operator(std::vector<RegularizerPtr> phi_per_state,
                                              ConjugateOptions opts = {});

/// phi(pi) for every state row, as the per-state bonus of policy evaluation.
numvec regularizer_bonus(const RegularizedBackup& op, const Policy& policy);

/**
 * Bregman divergence generated by -phi:
 *   BD(p || q) = -phi(p) + phi(q) + grad phi(q).(p - q).
 * q must lie in the simplex interior.
 */
double bregman_divergence(const Regularizer& phi, std::span<const double> p,
                          std::span<const double> q);

double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace unimdp
