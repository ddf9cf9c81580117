#include "unimdp/regularized.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace unimdp {

namespace {

constexpr double kReferenceFloor = 1e-12;
constexpr double kGradientFloor = 1e-300;
constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_reference(std::span<const double> reference, const char* who) {
    if (!is_probability_row(reference, 1e-10))
        throw std::invalid_argument(std::string(who) + ": reference is not a probability row");
    for (double r : reference)
        if (r < kReferenceFloor)
            throw std::invalid_argument(std::string(who) + ": reference entries must be >= 1e-12");
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

double logsumexp(std::span<const double> x) {
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
    double out = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        if (p[a] <= 0.0) continue;
        if (q[a] <= 0.0) return std::numeric_limits<double>::infinity();
        out += p[a] * std::log(p[a] / q[a]);
    }
    return out;
}

ConjugateResult entropy_backup(std::span<const double> w, double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("entropy_backup: eta must be positive");
    const double m = *std::max_element(w.begin(), w.end());
    ConjugateResult out;
    out.argmax.resize(w.size());
    double s = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a) s += (out.argmax[a] = std::exp((w[a] - m) / eta));
    for (auto& p : out.argmax) p /= s;
    out.value = m + eta * std::log(s);
    return out;
}

ConjugateResult kl_backup(std::span<const double> w, double eta, std::span<const double> reference) {
    if (!(eta > 0.0)) throw std::invalid_argument("kl_backup: eta must be positive");
    if (reference.size() != w.size()) throw std::invalid_argument("kl_backup: length mismatch");
    check_reference(reference, "kl_backup");
    const double m = *std::max_element(w.begin(), w.end());
    ConjugateResult out;
    out.argmax.resize(w.size());
    double s = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a)
        s += (out.argmax[a] = reference[a] * std::exp((w[a] - m) / eta));
    for (auto& p : out.argmax) p /= s;
    out.value = m + eta * std::log(s);
    return out;
}

ConjugateResult chi_square_backup(std::span<const double> w, double lambda,
                                  std::span<const double> reference) {
    if (!(lambda > 0.0)) throw std::invalid_argument("chi_square_backup: lambda must be positive");
    if (reference.size() != w.size())
        throw std::invalid_argument("chi_square_backup: length mismatch");
    check_reference(reference, "chi_square_backup");
    const std::size_t n = w.size();
    const double top = *std::max_element(w.begin(), w.end());
    numvec shifted(n);
    for (std::size_t a = 0; a < n; ++a) shifted[a] = w[a] - top;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return shifted[i] > shifted[j]; });

    // Water-filling over the top-k support.
    const double kappa = 2.0 * lambda;
    double nu = 0.0;
    double mass = 0.0;
    double weighted = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t a = order[k];
        mass += reference[a];
        weighted += reference[a] * (kappa + shifted[a]);
        nu = (weighted - kappa) / mass;
        const bool next_out = (k + 1 == n) || (kappa + shifted[order[k + 1]] - nu <= 0.0);
        if (next_out) break;
    }
    ConjugateResult out;
    out.argmax.resize(n);
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        total += (out.argmax[a] = reference[a] * std::max(0.0, 1.0 + (shifted[a] - nu) / kappa));
    for (auto& p : out.argmax) p /= total;
    double chi = 0.0;
    double lin = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        const double d = out.argmax[a] - reference[a];
        chi += d * d / reference[a];
        lin += shifted[a] * out.argmax[a];
    }
    out.value = top + lin - lambda * chi;
    return out;
}

std::optional<ConjugateResult> ZeroRegularizer::closed_form(std::span<const double> w) const {
    auto best = standard_backup(w);
    return ConjugateResult{best.value, std::move(best.policy), 0};
}

EntropyRegularizer::EntropyRegularizer(double eta) : eta_(eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("EntropyRegularizer: eta must be positive");
}

double EntropyRegularizer::value(std::span<const double> pi) const {
    double s = 0.0;
    for (double p : pi) s += xlogx(p);
    return -eta_ * s;
}

numvec EntropyRegularizer::gradient(std::span<const double> pi) const {
    numvec g(pi.size());
    for (std::size_t a = 0; a < pi.size(); ++a) g[a] = -eta_ * (std::log(pi[a]) + 1.0);
    return g;
}

std::optional<ConjugateResult> EntropyRegularizer::closed_form(std::span<const double> w) const {
    return entropy_backup(w, eta_);
}

KlRegularizer::KlRegularizer(double eta, numvec reference)
    : eta_(eta), reference_(std::move(reference)) {
    if (!(eta > 0.0)) throw std::invalid_argument("KlRegularizer: eta must be positive");
    check_reference(reference_, "KlRegularizer");
}

double KlRegularizer::value(std::span<const double> pi) const {
    return -eta_ * kl_divergence(pi, reference_);
}

numvec KlRegularizer::gradient(std::span<const double> pi) const {
    numvec g(pi.size());
    for (std::size_t a = 0; a < pi.size(); ++a)
        g[a] = -eta_ * (std::log(pi[a] / reference_[a]) + 1.0);
    return g;
}

std::optional<ConjugateResult> KlRegularizer::closed_form(std::span<const double> w) const {
    return kl_backup(w, eta_, reference_);
}

ChiSquareRegularizer::ChiSquareRegularizer(numvec reference) : reference_(std::move(reference)) {
    check_reference(reference_, "ChiSquareRegularizer");
}

double ChiSquareRegularizer::value(std::span<const double> pi) const {
    double s = 0.0;
    for (std::size_t a = 0; a < pi.size(); ++a) {
        const double d = pi[a] - reference_[a];
        s += d * d / reference_[a];
    }
    return -s;
}

numvec ChiSquareRegularizer::gradient(std::span<const double> pi) const {
    numvec g(pi.size());
    for (std::size_t a = 0; a < pi.size(); ++a) g[a] = -2.0 * (pi[a] - reference_[a]) / reference_[a];
    return g;
}

std::optional<ConjugateResult> ChiSquareRegularizer::closed_form(std::span<const double> w) const {
    return chi_square_backup(w, 1.0, reference_);
}

QuadraticRegularizer::QuadraticRegularizer(std::size_t num_actions, numvec hessian)
    : n_(num_actions), h_(std::move(hessian)) {
    if (h_.size() != n_ * n_) throw std::invalid_argument("QuadraticRegularizer: bad matrix size");
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j)
            if (std::abs(h_[i * n_ + j] - h_[j * n_ + i]) > 1e-12)
                throw std::invalid_argument("QuadraticRegularizer: matrix not symmetric");
}

double QuadraticRegularizer::value(std::span<const double> pi) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j) s += pi[i] * h_[i * n_ + j] * pi[j];
    return -0.5 * s;
}

numvec QuadraticRegularizer::gradient(std::span<const double> pi) const {
    numvec g(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j) g[i] -= h_[i * n_ + j] * pi[j];
    return g;
}

ScaledRegularizer::ScaledRegularizer(RegularizerPtr base, double scale, double offset)
    : base_(std::move(base)), scale_(scale), offset_(offset) {
    if (!base_) throw std::invalid_argument("ScaledRegularizer: null base");
    if (!(scale > 0.0)) throw std::invalid_argument("ScaledRegularizer: scale must be positive");
}

double ScaledRegularizer::value(std::span<const double> pi) const {
    return scale_ * base_->value(pi) + offset_;
}

numvec ScaledRegularizer::gradient(std::span<const double> pi) const {
    auto g = base_->gradient(pi);
    for (auto& v : g) v *= scale_;
    return g;
}

std::optional<ConjugateResult> ScaledRegularizer::closed_form(std::span<const double> w) const {
    numvec scaled(w.begin(), w.end());
    for (auto& v : scaled) v /= scale_;
    auto inner = base_->closed_form(scaled);
    if (!inner) return std::nullopt;
    inner->value = scale_ * inner->value + offset_;
    return inner;
}

ConjugateResult numeric_conjugate(std::span<const double> w, const Regularizer& phi,
                                  const ConjugateOptions& opts) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("numeric_conjugate: tol must be positive");
    const std::size_t n = w.size();
    if (n == 0) throw std::invalid_argument("numeric_conjugate: empty w");

    // Work on w - max(w): the maximizer is unchanged and the objective stays
    // O(phi) in size, so tolerances do not depend on the value level.
    const double top = *std::max_element(w.begin(), w.end());
    numvec ws(w.begin(), w.end());
    for (auto& v : ws) v -= top;
    auto objective = [&](const numvec& p) { return dot(ws, p) + phi.value(p); };
    auto normalize = [&](numvec& logp, numvec& p) {
        const double lse = logsumexp(logp);
        for (std::size_t a = 0; a < n; ++a) {
            logp[a] -= lse;
            p[a] = std::exp(logp[a]);
        }
    };

    numvec logp(n, -std::log(static_cast<double>(n)));
    numvec p(n, 1.0 / static_cast<double>(n));
    double f = objective(p);
    double step = 1.0;
    std::deque<double> history{f};
    std::deque<double> gaps{std::numeric_limits<double>::infinity()};
    numvec logq(n), q(n), clamped(n), g(n), diff(n), next_grad;

    for (std::size_t k = 1; k <= opts.max_steps; ++k) {
        for (std::size_t a = 0; a < n; ++a) clamped[a] = std::max(p[a], kGradientFloor);
        if (next_grad.empty()) next_grad = phi.gradient(clamped);
        for (std::size_t a = 0; a < n; ++a) g[a] = ws[a] + next_grad[a];
        next_grad.clear();
        const double gmax = *std::max_element(g.begin(), g.end());
        const double gap = gmax - dot(g, p);
        const double scale = std::max(1.0, std::abs(f));
        if (gap <= opts.tol * scale) return {f + top, p, k - 1};

        double t = step;
        bool accepted = false;
        while (t > 1e-300) {
            for (std::size_t a = 0; a < n; ++a) logq[a] = logp[a] + t * (g[a] - gmax);
            normalize(logq, q);
            const double fq = objective(q);
            // Centered gradients and q - p from the log ratio keep the sign of
            // these inner products resolvable when the gap is near roundoff.
            double ascent = 0.0;
            for (std::size_t a = 0; a < n; ++a) {
                diff[a] = p[a] * std::expm1(logq[a] - logp[a]);
                ascent += (g[a] - gmax) * diff[a];
            }
            if (std::isfinite(fq) && fq >= f + 1e-4 * ascent) {
                accepted = (fq > f) || (fq == f && ascent > 0.0);
                if (fq >= f) {
                    logp.swap(logq);
                    p.swap(q);
                    f = fq;
                }
                break;
            }
            // Near the optimum the objective is flat to roundoff while the
            // argmax is still off by ~sqrt(eps). The slope at q still resolves
            // it: accept while q has not overshot the maximum along the path.
            if (std::isfinite(fq) && std::abs(fq - f) <= 64.0 * kEps * scale && ascent > 0.0) {
                for (std::size_t a = 0; a < n; ++a) clamped[a] = std::max(q[a], kGradientFloor);
                auto gq = phi.gradient(clamped);
                double qmax = -std::numeric_limits<double>::infinity();
                for (std::size_t a = 0; a < n; ++a) qmax = std::max(qmax, ws[a] + gq[a]);
                double slope = 0.0;
                for (std::size_t a = 0; a < n; ++a) slope += (ws[a] + gq[a] - qmax) * diff[a];
                if (slope >= 0.0) {
                    next_grad = std::move(gq);
                    logp.swap(logq);
                    p.swap(q);
                    f = std::max(f, fq);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if (!accepted) return {f + top, p, k};  // no ascent direction left at double precision
        step = std::min(2.0 * t, 1e12);

        // stalled: neither the objective nor the optimality gap is improving
        history.push_back(f);
        gaps.push_back(std::min(gaps.back(), gap));  // running best, robust to a noisy gap
        if (history.size() > opts.stall_window + 1) history.pop_front(), gaps.pop_front();
        if (history.size() == opts.stall_window + 1 &&
            history.back() - history.front() <= opts.tol * scale &&
            gaps.back() >= 0.5 * gaps.front())
            return {f + top, p, k};
    }
    throw ConjugateError("numeric_conjugate: step budget exhausted", 0.0, opts.max_steps,
                         ConjugateResult{f + top, p, opts.max_steps});
}

ConjugateResult regularized_conjugate(std::span<const double> w, const Regularizer& phi,
                                      const ConjugateOptions& opts) {
    if (auto cf = phi.closed_form(w)) return std::move(*cf);
    return numeric_conjugate(w, phi, opts);
}

RegularizedBackup::RegularizedBackup(std::vector<RegularizerPtr> per_state, ConjugateOptions opts)
    : per_state_(std::move(per_state)), opts_(opts) {
    if (per_state_.empty()) throw std::invalid_argument("RegularizedBackup: no regularizers");
    for (const auto& r : per_state_)
        if (!r) throw std::invalid_argument("RegularizedBackup: null regularizer");
}

const Regularizer& RegularizedBackup::regularizer(std::size_t state) const {
    return per_state_.size() == 1 ? *per_state_.front() : *per_state_.at(state);
}

BackupResult RegularizedBackup::backup(std::span<const double> w, std::size_t state) const {
    auto res = regularized_conjugate(w, regularizer(state), opts_);
    return {res.value, std::move(res.argmax)};
}

RegularizedBackup regularized_backup_operator(std::vector<RegularizerPtr> phi_per_state,
                                              ConjugateOptions opts) {
    return RegularizedBackup(std::move(phi_per_state), opts);
}

numvec regularizer_bonus(const RegularizedBackup& op, const Policy& policy) {
    numvec bonus(policy.num_states());
    for (std::size_t s = 0; s < policy.num_states(); ++s)
        bonus[s] = op.regularizer(s).value(policy.row(s));
    return bonus;
}

double bregman_divergence(const Regularizer& phi, std::span<const double> p,
                          std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("bregman_divergence: length mismatch");
    for (double v : q)
        if (!(v > 0.0))
            throw std::domain_error("bregman_divergence: gradient undefined on the simplex boundary");
    const auto grad = phi.gradient(q);
    double lin = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) lin += grad[a] * (p[a] - q[a]);
    return -phi.value(p) + phi.value(q) + lin;
}

}  // namespace unimdp
