#include "unimdp/distributional.hpp"

#include "unimdp/stochastic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>

namespace unimdp {

namespace {

constexpr std::array<double, 5> kGlNodes{0.1488743389816312108848260, 0.4333953941292471907992659,
                                         0.6794095682990244062343274, 0.8650633666889845107320967,
                                         0.9739065285171717200779640};
constexpr std::array<double, 5> kGlWeights{0.2955242247147528701738930, 0.2692667193099963550912269,
                                           0.2190863625159820439955349, 0.1494513491505805931457763,
                                           0.0666713443086881375935688};

double gauss_legendre_10(const std::function<double(double)>& f, double a, double b) {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (std::size_t i = 0; i < kGlNodes.size(); ++i)
        s += kGlWeights[i] * (f(mid - half * kGlNodes[i]) + f(mid + half * kGlNodes[i]));
    return s * half;
}

// F^{-1}(1 - p), written so that small p keeps full precision.
double upper_quantile(const Marginal& m, double p) {
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, ExponentialMarginal>) {
                return -std::log(p) / d.rate;
            } else if constexpr (std::is_same_v<T, UniformMarginal>) {
                return d.lo + (d.hi - d.lo) * (1.0 - p);
            } else if constexpr (std::is_same_v<T, GumbelMarginal>) {
                return d.location - d.scale * std::log(-std::log1p(-p));
            } else {
                return inverse_cdf(m, 1.0 - p);
            }
        },
        m);
}

// e^{-U} ln U + E1(U) + gamma_E with U = -ln(1 - p); the Gumbel tail integral
// divided by the scale.
double gumbel_tail_core(double p) {
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return kEulerGamma;
    const double u = -std::log1p(-p);
    if (u < 1.0) {
        // E1(u) = -gamma - ln u - sum_k (-u)^k / (k k!) cancels the log singularity
        double series = 0.0, term = 1.0;
        for (int k = 1; k < 40; ++k) {
            term *= -u / k;
            series += term / k;
        }
        return std::expm1(-u) * std::log(u) - series;
    }
    return std::exp(-u) * std::log(u) - std::expint(-u) + kEulerGamma;
}

std::size_t rows_of(std::size_t total, std::size_t per_row) { return per_row ? total / per_row : 0; }

std::size_t pick_row(std::size_t rows, std::size_t state) {
    if (rows == 1) return 0;
    if (state >= rows) throw std::out_of_range("ambiguity set has no entry for this state");
    return state;
}

Eigen::MatrixXd helmert_basis(std::size_t n) {
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(static_cast<long>(n), static_cast<long>(n ? n - 1 : 0));
    for (std::size_t k = 1; k < n; ++k) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
        for (std::size_t i = 0; i < k; ++i) u(static_cast<long>(i), static_cast<long>(k - 1)) = scale;
        u(static_cast<long>(k), static_cast<long>(k - 1)) = -static_cast<double>(k) * scale;
    }
    return u;
}

void check_covariance(const numvec& c, std::size_t n) {
    if (c.size() != n * n) throw std::invalid_argument("covariance matrix has wrong size");
    Eigen::Map<const Eigen::MatrixXd> m(c.data(), static_cast<long>(n), static_cast<long>(n));
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("covariance matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
    if (!(eig.eigenvalues().minCoeff() > 0.0))
        throw std::invalid_argument("covariance matrix not positive definite");
}

}  // namespace

double inverse_cdf(const Marginal& m, double t) {
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, ExponentialMarginal>) {
                return -std::log1p(-t) / d.rate;
            } else if constexpr (std::is_same_v<T, UniformMarginal>) {
                return d.lo + (d.hi - d.lo) * t;
            } else if constexpr (std::is_same_v<T, GumbelMarginal>) {
                return d.location - d.scale * std::log(-std::log(t));
            } else {
                if (t <= 0.0) return d.x.front();
                if (t >= 1.0) return d.x.back();
                const auto it = std::upper_bound(d.t.begin(), d.t.end(), t);
                const auto i = static_cast<std::size_t>(it - d.t.begin()) - 1;
                const double frac = (t - d.t[i]) / (d.t[i + 1] - d.t[i]);
                return d.x[i] + frac * (d.x[i + 1] - d.x[i]);
            }
        },
        m);
}

double marginal_tail_integral(const Marginal& m, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("marginal_tail_integral: p outside [0, 1]");
    if (p == 0.0) return 0.0;
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, ExponentialMarginal>) {
                return (p - p * std::log(p)) / d.rate;
            } else if constexpr (std::is_same_v<T, UniformMarginal>) {
                return d.lo * p + (d.hi - d.lo) * (p - 0.5 * p * p);
            } else if constexpr (std::is_same_v<T, GumbelMarginal>) {
                return d.scale * gumbel_tail_core(p) + d.location * p;
            } else {
                // panel breaks at the knots keep the integrand smooth on each piece
                const auto f = [&](double t) { return inverse_cdf(m, t); };
                double lo = 1.0 - p, total = 0.0;
                for (double knot : d.t) {
                    if (knot <= lo) continue;
                    total += integrate(f, lo, knot, 1e-10 / static_cast<double>(d.t.size()));
                    lo = knot;
                }
                return total;
            }
        },
        m);
}

void validate_marginal(const Marginal& m) {
    std::visit(
        [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, ExponentialMarginal>) {
                if (!(d.rate > 0.0) || !std::isfinite(d.rate))
                    throw std::invalid_argument("exponential marginal: rate must be positive");
            } else if constexpr (std::is_same_v<T, UniformMarginal>) {
                if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || d.lo > d.hi)
                    throw std::invalid_argument("uniform marginal: need finite lo <= hi");
            } else if constexpr (std::is_same_v<T, GumbelMarginal>) {
                if (!(d.scale > 0.0) || !std::isfinite(d.scale) || !std::isfinite(d.location))
                    throw std::invalid_argument("gumbel marginal: scale must be positive");
            } else {
                if (d.t.size() != d.x.size() || d.t.size() < 2)
                    throw std::invalid_argument("tabulated marginal: need at least two (t, x) knots");
                if (d.t.front() != 0.0 || d.t.back() != 1.0)
                    throw std::invalid_argument("tabulated marginal: knots must span [0, 1]");
                for (std::size_t i = 0; i < d.t.size(); ++i) {
                    if (!std::isfinite(d.x[i]))
                        throw std::invalid_argument("tabulated marginal: values must be finite");
                    if (i > 0 && !(d.t[i] > d.t[i - 1]))
                        throw std::invalid_argument("tabulated marginal: t must increase strictly");
                }
            }
        },
        m);
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 1; i < 1000; ++i) {
        const double v = inverse_cdf(m, i / 1000.0);
        if (v < prev) throw std::invalid_argument("inverse CDF is not nondecreasing");
        prev = v;
    }
}

double integrate(const std::function<double(double)>& f, double a, double b, double abs_tol,
                 std::size_t max_panels) {
    if (a == b) return 0.0;
    struct Panel {
        double lo, hi, estimate, error;
        bool operator<(const Panel& o) const { return error < o.error; }
    };
    auto make = [&](double lo, double hi) {
        const double mid = 0.5 * (lo + hi);
        const double whole = gauss_legendre_10(f, lo, hi);
        const double halves = gauss_legendre_10(f, lo, mid) + gauss_legendre_10(f, mid, hi);
        return Panel{lo, hi, halves, std::abs(halves - whole)};
    };
    // Global error budget: keep splitting the worst panel. Unlike a per-panel
    // share, this converges at integrable endpoint singularities.
    std::priority_queue<Panel> panels;
    panels.push(make(a, b));
    double error = panels.top().error;
    std::size_t count = 1;
    while (error > abs_tol) {
        if (count >= max_panels) throw NumericalError("integrate: subdivision cap reached");
        const Panel worst = panels.top();
        const double mid = 0.5 * (worst.lo + worst.hi);
        if (mid == worst.lo || mid == worst.hi) break;  // cannot split further
        panels.pop();
        const Panel left = make(worst.lo, mid), right = make(mid, worst.hi);
        error += left.error + right.error - worst.error;
        panels.push(left);
        panels.push(right);
        ++count;
    }
    double total = 0.0;
    while (!panels.empty()) {
        total += panels.top().estimate;
        panels.pop();
    }
    return total;
}

MdmRegularizer::MdmRegularizer(std::vector<Marginal> per_action) : marginals_(std::move(per_action)) {
    if (marginals_.empty()) throw std::invalid_argument("MdmRegularizer: no marginals");
    for (const auto& m : marginals_) validate_marginal(m);
}

double MdmRegularizer::value(std::span<const double> pi) const {
    double s = 0.0;
    for (std::size_t a = 0; a < marginals_.size(); ++a)
        s += marginal_tail_integral(marginals_[a], std::clamp(pi[a], 0.0, 1.0));
    return s;
}

numvec MdmRegularizer::gradient(std::span<const double> pi) const {
    numvec g(marginals_.size());
    for (std::size_t a = 0; a < g.size(); ++a) g[a] = upper_quantile(marginals_[a], pi[a]);
    return g;
}

std::optional<ConjugateResult> MdmRegularizer::closed_form(std::span<const double> w) const {
    const auto* first = std::get_if<ExponentialMarginal>(&marginals_.front());
    if (!first) return std::nullopt;
    for (const auto& m : marginals_) {
        const auto* e = std::get_if<ExponentialMarginal>(&m);
        if (!e || e->rate != first->rate) return std::nullopt;
    }
    auto r = entropy_backup(w, 1.0 / first->rate);
    r.value += 1.0 / first->rate;
    return r;
}

MmmRegularizer::MmmRegularizer(numvec sigma) : sigma_(std::move(sigma)) {
    for (double s : sigma_)
        if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("MmmRegularizer: sigma must be >= 0");
}

double MmmRegularizer::value(std::span<const double> pi) const {
    double s = 0.0;
    for (std::size_t a = 0; a < sigma_.size(); ++a)
        s += sigma_[a] * std::sqrt(std::max(0.0, pi[a] * (1.0 - pi[a])));
    return s;
}

numvec MmmRegularizer::gradient(std::span<const double> pi) const {
    numvec g(sigma_.size());
    for (std::size_t a = 0; a < g.size(); ++a) {
        const double q = std::max(pi[a] * (1.0 - pi[a]), 1e-300);
        g[a] = sigma_[a] * (1.0 - 2.0 * pi[a]) / (2.0 * std::sqrt(q));
    }
    return g;
}

std::optional<ConjugateResult> MmmRegularizer::closed_form(std::span<const double> w) const {
    for (double s : sigma_)
        if (s != 0.0) return std::nullopt;
    auto best = standard_backup(w);
    return ConjugateResult{best.value, std::move(best.policy), 0};
}

CovarianceRegularizer::CovarianceRegularizer(std::size_t num_actions, numvec sigma) : n_(num_actions) {
    if (n_ == 0) throw std::invalid_argument("CovarianceRegularizer: no actions");
    check_covariance(sigma, n_);
    const auto n = static_cast<long>(n_);
    const Eigen::MatrixXd u = helmert_basis(n_);
    const Eigen::MatrixXd s = Eigen::Map<const Eigen::MatrixXd>(sigma.data(), n, n);
    const Eigen::MatrixXd k = u.transpose() * s * u;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) throw NumericalError("CovarianceRegularizer: Cholesky failed");
    const Eigen::MatrixXd l = llt.matrixL();
    basis_.assign(u.data(), u.data() + u.size());
    chol_.assign(l.data(), l.data() + l.size());
}

double CovarianceRegularizer::value(std::span<const double> pi) const {
    if (n_ == 1) return 0.0;
    const auto n = static_cast<long>(n_), m = n - 1;
    Eigen::Map<const Eigen::MatrixXd> u(basis_.data(), n, m);
    Eigen::Map<const Eigen::MatrixXd> l(chol_.data(), m, m);
    Eigen::Map<const Eigen::VectorXd> p(pi.data(), n);
    const Eigen::VectorXd up = u.transpose() * p;
    const Eigen::MatrixXd inner = u.transpose() * p.asDiagonal() * u - up * up.transpose();
    const Eigen::MatrixXd c = l.transpose() * inner * l;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("covariance regularizer: eigensolver failed");
    double s = 0.0;
    for (long i = 0; i < m; ++i) s += std::sqrt(std::max(0.0, eig.eigenvalues()(i)));
    return s;
}

numvec CovarianceRegularizer::gradient(std::span<const double> pi) const {
    numvec g(n_, 0.0);
    if (n_ == 1) return g;
    const double lowest = *std::min_element(pi.begin(), pi.end());
    const double h = std::max(std::min(1e-6, 0.5 * lowest), 1e-12);
    const double inv_n = 1.0 / static_cast<double>(n_);
    numvec plus(pi.begin(), pi.end()), minus(pi.begin(), pi.end());
    for (std::size_t a = 0; a < n_; ++a) {
        for (std::size_t b = 0; b < n_; ++b) {
            const double d = (a == b ? 1.0 : 0.0) - inv_n;
            plus[b] = pi[b] + h * d;
            minus[b] = pi[b] - h * d;
        }
        g[a] = (value(plus) - value(minus)) / (2.0 * h);
    }
    return g;
}

void validate_ambiguity(const AmbiguitySet& set) {
    std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if (m.num_actions == 0) throw std::invalid_argument("ambiguity set: no actions");
            if constexpr (std::is_same_v<T, MarginalDistributionModel>) {
                if (m.marginals.empty() || m.marginals.size() % m.num_actions != 0)
                    throw std::invalid_argument("marginal model: need |A| marginals per state");
                for (const auto& d : m.marginals) validate_marginal(d);
            } else if constexpr (std::is_same_v<T, MarginalMomentModel>) {
                if (m.sigma.empty() || m.sigma.size() % m.num_actions != 0)
                    throw std::invalid_argument("moment model: need |A| deviations per state");
                for (double s : m.sigma)
                    if (!(s >= 0.0) || !std::isfinite(s))
                        throw std::invalid_argument("moment model: sigma must be finite and >= 0");
            } else {
                if (m.matrices.empty()) throw std::invalid_argument("covariance model: no matrices");
                for (const auto& c : m.matrices) check_covariance(c, m.num_actions);
            }
        },
        set);
}

std::size_t ambiguity_actions(const AmbiguitySet& set) {
    return std::visit([](const auto& m) { return m.num_actions; }, set);
}

RegularizerPtr ambiguity_regularizer(const AmbiguitySet& set, std::size_t state) {
    return std::visit(
        [&](const auto& m) -> RegularizerPtr {
            using T = std::decay_t<decltype(m)>;
            const std::size_t n = m.num_actions;
            if constexpr (std::is_same_v<T, MarginalDistributionModel>) {
                const auto r = pick_row(rows_of(m.marginals.size(), n), state);
                return std::make_shared<MdmRegularizer>(
                    std::vector<Marginal>(m.marginals.begin() + static_cast<long>(r * n),
                                          m.marginals.begin() + static_cast<long>((r + 1) * n)));
            } else if constexpr (std::is_same_v<T, MarginalMomentModel>) {
                const auto r = pick_row(rows_of(m.sigma.size(), n), state);
                return std::make_shared<MmmRegularizer>(
                    numvec(m.sigma.begin() + static_cast<long>(r * n),
                           m.sigma.begin() + static_cast<long>((r + 1) * n)));
            } else {
                const auto r = pick_row(m.matrices.size(), state);
                return std::make_shared<CovarianceRegularizer>(n, m.matrices[r]);
            }
        },
        set);
}

double mdm_regularizer(const MarginalDistributionModel& model, std::size_t state,
                       std::span<const double> pi) {
    return ambiguity_regularizer(model, state)->value(pi);
}

double mmm_regularizer(const MarginalMomentModel& model, std::size_t state,
                       std::span<const double> pi) {
    return ambiguity_regularizer(model, state)->value(pi);
}

double covariance_regularizer(const CovarianceModel& model, std::size_t state,
                              std::span<const double> pi) {
    return ambiguity_regularizer(model, state)->value(pi);
}

ConjugateResult ds_backup(std::span<const double> w, const AmbiguitySet& set, std::size_t state,
                          const ConjugateOptions& opts) {
    if (w.size() != ambiguity_actions(set)) throw std::invalid_argument("ds_backup: wrong action count");
    return regularized_conjugate(w, *ambiguity_regularizer(set, state), opts);
}

RegularizedBackup ds_backup_operator(const AmbiguitySet& set, std::size_t num_states,
                                     const ConjugateOptions& opts) {
    validate_ambiguity(set);
    std::vector<RegularizerPtr> per_state;
    per_state.reserve(num_states);
    for (std::size_t s = 0; s < num_states; ++s) per_state.push_back(ambiguity_regularizer(set, s));
    return RegularizedBackup(std::move(per_state), opts);
}

LowerBoundCheck ds_lower_bound_check(std::span<const double> w, const AmbiguitySet& set,
                                     std::size_t state, std::size_t samples, std::uint64_t seed) {
    if (samples < 100) throw std::invalid_argument("ds_lower_bound_check: need at least 100 samples");
    validate_ambiguity(set);
    const std::size_t n = w.size();
    if (n != ambiguity_actions(set)) throw std::invalid_argument("ds_lower_bound_check: wrong action count");

    std::function<void(std::mt19937_64&, numvec&)> draw;
    std::optional<NoiseSampler> gaussian;
    if (const auto* mdm = std::get_if<MarginalDistributionModel>(&set)) {
        const auto r = pick_row(rows_of(mdm->marginals.size(), n), state);
        draw = [mdm, r, n](std::mt19937_64& rng, numvec& eps) {
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (std::size_t a = 0; a < n; ++a) {
                double t = unit(rng);
                while (t <= 0.0) t = unit(rng);
                eps[a] = inverse_cdf(mdm->marginals[r * n + a], t);
            }
        };
    } else if (const auto* mmm = std::get_if<MarginalMomentModel>(&set)) {
        const auto r = pick_row(rows_of(mmm->sigma.size(), n), state);
        draw = [mmm, r, n](std::mt19937_64& rng, numvec& eps) {
            std::bernoulli_distribution coin(0.5);
            for (std::size_t a = 0; a < n; ++a)
                eps[a] = coin(rng) ? mmm->sigma[r * n + a] : -mmm->sigma[r * n + a];
        };
    } else {
        const auto& cov = std::get<CovarianceModel>(set);
        gaussian.emplace(GaussianJoint{n, cov.matrices}, n);
        draw = [&gaussian, state](std::mt19937_64& rng, numvec& eps) { gaussian->draw(state, rng, eps); };
    }

    auto rng = state_stream(seed, state);
    numvec eps(n);
    double mean = 0.0, m2 = 0.0;
    for (std::size_t k = 1; k <= samples; ++k) {
        draw(rng, eps);
        double top = w[0] + eps[0];
        for (std::size_t a = 1; a < n; ++a) top = std::max(top, w[a] + eps[a]);
        const double d = top - mean;
        mean += d / static_cast<double>(k);
        m2 += d * (top - mean);
    }
    LowerBoundCheck out;
    out.mc_value = mean;
    out.std_error = std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));
    out.ds_value = ds_backup(w, set, state).value;
    out.ok = out.mc_value <= out.ds_value + 3.0 * out.std_error;
    return out;
}

double ds_value_floor(std::span<const double> w, const AmbiguitySet& set, std::size_t state) {
    const std::size_t n = w.size();
    if (const auto* mdm = std::get_if<MarginalDistributionModel>(&set)) {
        const auto r = pick_row(rows_of(mdm->marginals.size(), n), state);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a)
            best = std::max(best, w[a] + marginal_tail_integral(mdm->marginals[r * n + a], 1.0));
        return best;
    }
    return *std::max_element(w.begin(), w.end());
}

}  // namespace unimdp
