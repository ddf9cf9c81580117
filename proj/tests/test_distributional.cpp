#include "doctest.h"
#include "support.hpp"

#include "unimdp/distributional.hpp"
#include "unimdp/stochastic.hpp"

using namespace unimdp;
using testsupport::sup_gap;

namespace {

// Hides the closed form so the same regularizer goes through mirror ascent.
class NumericOnly final : public Regularizer {
public:
    explicit NumericOnly(RegularizerPtr inner) : inner_(std::move(inner)) {}
    double value(std::span<const double> p) const override { return inner_->value(p); }
    numvec gradient(std::span<const double> p) const override { return inner_->gradient(p); }
    std::string name() const override { return "numeric-only"; }

private:
    RegularizerPtr inner_;
};

numvec random_pd(std::mt19937_64& rng, std::size_t n) {
    auto b = testsupport::random_vector(rng, n * n, -1, 1);
    numvec s(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < n; ++k) s[i * n + j] += b[i * n + k] * b[j * n + k];
            if (i == j) s[i * n + j] += 0.2;
        }
    return s;
}

// sum of square roots of the two nonzero eigenvalues of M Sigma (|A| = 3):
// sqrt(tr + 2 sqrt(c2)), c2 the sum of principal 2x2 minors, in long double.
long double covariance_phi_3(const numvec& sigma, const numvec& pi) {
    long double m[3][3], ms[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            m[i][j] = (i == j ? (long double)pi[i] : 0.0L) - (long double)pi[i] * (long double)pi[j];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            ms[i][j] = 0.0L;
            for (int k = 0; k < 3; ++k) ms[i][j] += m[i][k] * (long double)sigma[k * 3 + j];
        }
    const long double tr = ms[0][0] + ms[1][1] + ms[2][2];
    const long double c2 = ms[0][0] * ms[1][1] - ms[0][1] * ms[1][0] + ms[0][0] * ms[2][2] -
                           ms[0][2] * ms[2][0] + ms[1][1] * ms[2][2] - ms[1][2] * ms[2][1];
    return std::sqrt(tr + 2.0L * std::sqrt(std::max(0.0L, c2)));
}

double mmm_two_action_policy(double delta, double sigma) {
    return 0.5 * (1.0 + delta / std::sqrt(delta * delta + 4.0 * sigma * sigma));
}

}  // namespace

// F^{-1}(1 - u) written directly in u, so the oracle never forms 1 - u.
double top_quantile(const Marginal& m, double u) {
    if (auto* e = std::get_if<ExponentialMarginal>(&m)) return -std::log(u) / e->rate;
    if (auto* g = std::get_if<GumbelMarginal>(&m)) return g->location - g->scale * std::log(-std::log1p(-u));
    const auto& uni = std::get<UniformMarginal>(m);
    return uni.hi - (uni.hi - uni.lo) * u;
}

TEST_CASE("marginal tail integrals match quadrature") {
    std::vector<Marginal> families{ExponentialMarginal{1.0}, ExponentialMarginal{2.5}, UniformMarginal{0.0, 1.0},
                                   UniformMarginal{-1.0, 3.0}, GumbelMarginal{1.0, 0.0}, GumbelMarginal{0.7, 0.3}};
    for (const auto& m : families) {
        for (double p : {1e-6, 0.01, 0.2, 0.5, 0.77, 0.999, 1.0}) {
            const double q = integrate([&](double u) { return top_quantile(m, u); }, 0.0, p, 1e-12);
            CHECK(marginal_tail_integral(m, p) == doctest::Approx(q).epsilon(1e-9));
            CHECK(std::abs(marginal_tail_integral(m, p) - q) <= 1e-9);
        }
        CHECK(marginal_tail_integral(m, 0.0) == 0.0);
    }
    // Gumbel full mass is the mean scale * gamma_E + location
    CHECK(marginal_tail_integral(GumbelMarginal{0.7, 0.3}, 1.0) == doctest::Approx(0.7 * kEulerGamma + 0.3));
    // exponential(1): int_0^p -ln u du = p - p ln p
    CHECK(marginal_tail_integral(ExponentialMarginal{1.0}, 0.3) == doctest::Approx(0.3 - 0.3 * std::log(0.3)).epsilon(1e-15));

    // piecewise-linear table: exact integral by trapezoids on the knots
    TabulatedMarginal tab{{0.0, 0.2, 0.5, 1.0}, {-2.0, -0.5, 0.0, 4.0}};
    auto exact = [&](double p) {
        const double lo = 1.0 - p;
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < tab.t.size(); ++i) {
            const double a = std::max(lo, tab.t[i]), b = tab.t[i + 1];
            if (b <= a) continue;
            auto at = [&](double t) {
                return tab.x[i] + (t - tab.t[i]) / (tab.t[i + 1] - tab.t[i]) * (tab.x[i + 1] - tab.x[i]);
            };
            total += 0.5 * (b - a) * (at(a) + at(b));
        }
        return total;
    };
    for (double p : {0.1, 0.45, 0.8, 1.0}) CHECK(std::abs(marginal_tail_integral(tab, p) - exact(p)) <= 1e-10);

    CHECK_THROWS_AS(validate_marginal(TabulatedMarginal{{0.0, 0.5, 1.0}, {0.0, -1.0, 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(validate_marginal(TabulatedMarginal{{0.1, 1.0}, {0.0, 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(validate_marginal(ExponentialMarginal{-1.0}), std::invalid_argument);
}

TEST_CASE("mdm regularizer") {
    MarginalDistributionModel expo{3, {ExponentialMarginal{1.0}, ExponentialMarginal{1.0}, ExponentialMarginal{1.0}}};
    numvec pi{0.2, 0.3, 0.5};
    double ent = 0.0;
    for (double p : pi) ent -= p * std::log(p);
    CHECK(mdm_regularizer(expo, 0, pi) == doctest::Approx(1.0 + ent).epsilon(1e-14));

    MarginalDistributionModel unif{3, {UniformMarginal{0, 1}, UniformMarginal{0, 1}, UniformMarginal{0, 1}}};
    CHECK(mdm_regularizer(unif, 0, numvec{1, 0, 0}) == doctest::Approx(0.5).epsilon(1e-15));

    MarginalDistributionModel mixed{3, {GumbelMarginal{1.3, 0.0}, UniformMarginal{-1, 2}, ExponentialMarginal{0.5}}};
    for (std::size_t a = 0; a < 3; ++a) {
        numvec vertex(3, 0.0);
        vertex[a] = 1.0;
        const double q = integrate([&](double u) { return top_quantile(mixed.marginals[a], u); }, 0.0, 1.0, 1e-12);
        CHECK(std::abs(mdm_regularizer(mixed, 0, vertex) - q) <= 1e-9);
    }
}

TEST_CASE("mmm and covariance regularizers") {
    MarginalMomentModel two{2, {1.0, 1.0}};
    CHECK(mmm_regularizer(two, 0, numvec{1, 0}) == 0.0);
    CHECK(mmm_regularizer(two, 0, numvec{0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-15));
    MarginalMomentModel three{3, {1.0, 2.0, 3.0}};
    const double third = 1.0 / 3.0;
    CHECK(mmm_regularizer(three, 0, numvec{third, third, third}) == doctest::Approx(2.828427).epsilon(1e-6));
    CHECK(mmm_regularizer(three, 0, numvec{third, third, third}) ==
          doctest::Approx(6.0 * std::sqrt(2.0 / 9.0)).epsilon(1e-14));

    std::mt19937_64 rng(19);
    CovarianceModel iso{2, {{2.25, 0.0, 0.0, 2.25}}};
    for (double p : {0.1, 0.3, 0.5, 0.9}) {
        CHECK(std::abs(covariance_regularizer(iso, 0, numvec{p, 1 - p}) - 1.5 * std::sqrt(2 * p * (1 - p))) <= 1e-8);
    }
    CHECK(covariance_regularizer(iso, 0, numvec{1, 0}) == 0.0);

    for (int t = 0; t < 50; ++t) {
        auto sigma = random_pd(rng, 3);
        CovarianceModel cov{3, {sigma}};
        auto pi = testsupport::random_simplex(rng, 3);
        const double got = covariance_regularizer(cov, 0, pi);
        CHECK(std::abs(got - static_cast<double>(covariance_phi_3(sigma, pi))) <= 1e-8);
        numvec vertex{0, 0, 1};
        CHECK(covariance_regularizer(cov, 0, vertex) == doctest::Approx(0.0));
    }
    CHECK_THROWS_AS(validate_ambiguity(CovarianceModel{2, {{1.0, 1.0, 1.0, 1.0}}}), std::invalid_argument);
    CHECK_THROWS_AS(validate_ambiguity(MarginalMomentModel{2, {1.0, -1.0}}), std::invalid_argument);
}

TEST_CASE("ds_backup") {
    SUBCASE("zero moments give the standard backup") {
        numvec w{0.2, 1.5, -0.3};
        auto r = ds_backup(w, MarginalMomentModel{3, {0, 0, 0}}, 0);
        CHECK(r.value == 1.5);
        CHECK(r.argmax == numvec{0, 1, 0});
    }
    SUBCASE("two actions with equal deviations") {
        std::mt19937_64 rng(23);
        for (int t = 0; t < 20; ++t) {
            auto w = testsupport::random_vector(rng, 2, -2, 2);
            const double sigma = 0.1 + std::uniform_real_distribution<>(0, 2)(rng);
            auto r = ds_backup(w, MarginalMomentModel{2, {sigma, sigma}}, 0);
            const double formula = mmm_two_action_policy(w[0] - w[1], sigma);
            CHECK(std::abs(r.argmax[0] - formula) <= 1e-7);
            auto grid = testsupport::grid_maximize(2, 100000, [&](const numvec& p) {
                return testsupport::plain_dot(w, p) + 2 * sigma * std::sqrt(p[0] * p[1]);
            });
            CHECK(std::abs(grid.point[0] - formula) <= 2e-5);
            CHECK(r.value >= grid.value - 1e-12);
        }
    }
    SUBCASE("exponential marginals give 1 + logsumexp") {
        MarginalDistributionModel expo{3, {ExponentialMarginal{1.0}, ExponentialMarginal{1.0}, ExponentialMarginal{1.0}}};
        numvec w{0.5, -0.2, 1.0};
        auto r = ds_backup(w, expo, 0);
        CHECK(std::abs(r.value - (1.0 + logsumexp(w))) <= 1e-12);
        CHECK(sup_gap(r.argmax, entropy_backup(w, 1.0).argmax) <= 1e-15);
        // the numeric path on the same regularizer agrees
        auto numeric = numeric_conjugate(w, NumericOnly(ambiguity_regularizer(expo, 0)));
        CHECK(std::abs(numeric.value - r.value) <= 1e-9);
        CHECK(sup_gap(numeric.argmax, r.argmax) <= 1e-6);
    }
    SUBCASE("other families agree with the grid on three actions") {
        std::mt19937_64 rng(29);
        std::vector<AmbiguitySet> sets{
            MarginalDistributionModel{3, {GumbelMarginal{0.8, 0.0}, UniformMarginal{-0.5, 1.0}, ExponentialMarginal{2.0}}},
            MarginalMomentModel{3, {0.3, 1.0, 0.6}}, CovarianceModel{3, {random_pd(rng, 3)}}};
        for (const auto& set : sets) {
            auto phi = ambiguity_regularizer(set, 0);
            for (int t = 0; t < 5; ++t) {
                auto w = testsupport::random_vector(rng, 3, -1, 1);
                auto r = ds_backup(w, set, 0);
                auto grid = testsupport::grid_maximize(3, 1000, [&](const numvec& p) {
                    return testsupport::plain_dot(w, p) + phi->value(p);
                });
                CHECK(r.value >= grid.value - 1e-10);
                CHECK(r.value - grid.value <= 1e-3);
            }
        }
    }
}

TEST_CASE("ds_lower_bound_check") {
    std::mt19937_64 rng(31);
    numvec w{0.4, 0.1, -0.2};
    auto zero = ds_lower_bound_check(w, MarginalMomentModel{3, {0, 0, 0}}, 0, 1000, 1);
    CHECK(zero.mc_value == 0.4);
    CHECK(zero.ds_value == 0.4);
    CHECK(zero.ok);

    std::vector<AmbiguitySet> sets{MarginalMomentModel{3, {0.5, 1.0, 0.2}},
                                   CovarianceModel{3, {random_pd(rng, 3)}},
                                   MarginalDistributionModel{3, {GumbelMarginal{1.0, 0.0}, UniformMarginal{0, 1},
                                                                 ExponentialMarginal{1.5}}}};
    for (const auto& set : sets) {
        auto r = ds_lower_bound_check(w, set, 0, 1000000, 7);
        CHECK(r.ok);
        CHECK(r.mc_value <= r.ds_value + 3 * r.std_error);
    }
}

TEST_CASE("DS backup properties") {
    std::mt19937_64 rng(37);
    for (int t = 0; t < 10; ++t) {
        const auto n = testsupport::random_size(rng, 2, 4);
        numvec sig = testsupport::random_vector(rng, n, 0.1, 1.5);
        std::vector<Marginal> marg;
        for (std::size_t a = 0; a < n; ++a) {
            if (a % 3 == 0) marg.push_back(GumbelMarginal{0.5 + sig[a], 0.1});
            else if (a % 3 == 1) marg.push_back(UniformMarginal{-sig[a], sig[a]});
            else marg.push_back(ExponentialMarginal{1.0 / sig[a]});
        }
        std::vector<AmbiguitySet> sets{MarginalDistributionModel{n, marg}, MarginalMomentModel{n, sig},
                                       CovarianceModel{n, {random_pd(rng, n)}}};
        for (const auto& set : sets) {
            auto phi = ambiguity_regularizer(set, 0);
            auto w = testsupport::random_vector(rng, n, -2, 2);
            auto r = ds_backup(w, set, 0);

            numvec shifted = w;
            for (auto& v : shifted) v += 1.75;
            CHECK(std::abs(ds_backup(shifted, set, 0).value - (r.value + 1.75)) <= 1e-12);

            CHECK(r.value >= ds_value_floor(w, set, 0) - 1e-9);

            auto fd = testsupport::fd_gradient([&](const numvec& x) { return ds_backup(x, set, 0).value; }, w, 1e-5);
            CHECK(sup_gap(fd, r.argmax) <= 1e-5);

            auto p = testsupport::random_simplex(rng, n, 0.01);
            auto q = testsupport::random_simplex(rng, n, 0.01);
            numvec mid(n);
            for (std::size_t a = 0; a < n; ++a) mid[a] = 0.5 * (p[a] + q[a]);
            CHECK(phi->value(mid) >= 0.5 * phi->value(p) + 0.5 * phi->value(q) - 1e-9);
        }
    }
}

TEST_CASE("DS value iteration is regularized value iteration") {
    MdpModel m = random_mdp(4, 3, 3);
    std::vector<AmbiguitySet> sets{
        MarginalDistributionModel{3, {ExponentialMarginal{1.0}, ExponentialMarginal{1.0}, ExponentialMarginal{1.0}}},
        MarginalMomentModel{3, {0.3, 0.5, 0.7}}, CovarianceModel{3, {{1.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.5}}}};
    for (const auto& set : sets) {
        auto ds = value_iteration(m, ds_backup_operator(set, 4));
        std::vector<RegularizerPtr> phis;
        for (std::size_t s = 0; s < 4; ++s) phis.push_back(ambiguity_regularizer(set, s));
        auto reg = value_iteration(m, regularized_backup_operator(phis));
        CHECK(ds.value == reg.value);
        CHECK(ds.policy.probs() == reg.policy.probs());
    }
    auto expo = value_iteration(m, ds_backup_operator(sets[0], 4));
    auto er = value_iteration(m, regularized_backup_operator({std::make_shared<EntropyRegularizer>(1.0)}));
    // the exponential family adds one unit of reward per step
    for (std::size_t s = 0; s < 4; ++s) CHECK(expo.value[s] == doctest::Approx(er.value[s] + 1.0 / (1.0 - 0.9)).epsilon(1e-9));
    CHECK(sup_gap(expo.policy.probs(), er.policy.probs()) <= 1e-9);
}
