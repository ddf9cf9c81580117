#include "doctest.h"
#include "support.hpp"

#include "unimdp/regularized.hpp"

using namespace unimdp;
using testsupport::sup_gap;

namespace {

double entropy_of(const numvec& p) {
    double s = 0.0;
    for (double x : p)
        if (x > 0) s -= x * std::log(x);
    return s;
}

double kl_of(const numvec& p, const numvec& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

std::vector<RegularizerPtr> sample_regularizers(std::mt19937_64& rng, std::size_t n) {
    std::vector<RegularizerPtr> out;
    out.push_back(std::make_shared<EntropyRegularizer>(0.7));
    out.push_back(std::make_shared<KlRegularizer>(1.3, testsupport::random_simplex(rng, n, 0.05)));
    out.push_back(std::make_shared<ChiSquareRegularizer>(testsupport::random_simplex(rng, n, 0.05)));
    numvec h(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 2.0 + static_cast<double>(i);
    if (n > 1) h[1] = h[n] = 0.5;
    out.push_back(std::make_shared<QuadraticRegularizer>(n, h));
    out.push_back(std::make_shared<ScaledRegularizer>(out[0], 2.5, 1.0));
    return out;
}

}  // namespace

TEST_CASE("entropy_backup closed form") {
    auto a = entropy_backup(numvec{0, 0}, 1.0);
    CHECK(a.value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(a.argmax[0] == doctest::Approx(0.5));

    auto b = entropy_backup(numvec{1, 0}, 1.0);
    CHECK(b.argmax[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
    CHECK(b.argmax[0] == doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(b.argmax[1] == doctest::Approx(0.268941).epsilon(1e-6));

    auto c = entropy_backup(numvec{1000, 0}, 1.0);
    CHECK(std::isfinite(c.value));
    CHECK(c.value == doctest::Approx(1000.0).epsilon(1e-12));

    CHECK_THROWS_AS(entropy_backup(numvec{1}, 0.0), std::invalid_argument);
}

TEST_CASE("kl_backup") {
    std::mt19937_64 rng(8);
    SUBCASE("uniform reference shifts the entropy value by eta ln|A|") {
        for (int t = 0; t < 20; ++t) {
            const auto n = testsupport::random_size(rng, 2, 5);
            auto w = testsupport::random_vector(rng, n, -3, 3);
            const double eta = 0.2 + 2.0 * std::uniform_real_distribution<>(0, 1)(rng);
            auto e = entropy_backup(w, eta);
            auto k = kl_backup(w, eta, numvec(n, 1.0 / static_cast<double>(n)));
            CHECK(k.value == doctest::Approx(e.value - eta * std::log(static_cast<double>(n))).epsilon(1e-12));
            CHECK(sup_gap(k.argmax, e.argmax) <= 1e-14);
        }
    }
    SUBCASE("equal w returns the reference") {
        numvec ref{0.2, 0.3, 0.5};
        auto k = kl_backup(numvec{4, 4, 4}, 0.5, ref);
        CHECK(sup_gap(k.argmax, ref) <= 1e-15);
        CHECK(k.value == doctest::Approx(4.0).epsilon(1e-15));
    }
    SUBCASE("grid oracle for w=[1,0], ref=[0.9,0.1]") {
        numvec w{1, 0}, ref{0.9, 0.1};
        auto k = kl_backup(w, 1.0, ref);
        auto best = testsupport::grid_maximize(2, 100000, [&](const numvec& p) {
            return testsupport::plain_dot(w, p) - kl_of(p, ref);
        });
        CHECK(std::abs(k.value - best.value) <= 1e-8);
        CHECK(std::abs(k.argmax[0] - best.point[0]) <= 1e-4);
        CHECK(k.value >= best.value - 1e-12);
    }
    SUBCASE("reference floor") {
        CHECK_THROWS_AS(KlRegularizer(1.0, numvec{1.0, 0.0}), std::invalid_argument);
        CHECK_THROWS_AS(kl_backup(numvec{1, 2}, 1.0, numvec{1.0 - 1e-13, 1e-13}), std::invalid_argument);
    }
    SUBCASE("equals entropy on the log-shifted vector") {
        for (int t = 0; t < 50; ++t) {
            const auto n = testsupport::random_size(rng, 2, 5);
            auto w = testsupport::random_vector(rng, n, -4, 4);
            auto ref = testsupport::random_simplex(rng, n, 0.01);
            const double eta = 0.1 + 3.0 * std::uniform_real_distribution<>(0, 1)(rng);
            numvec shifted = w;
            for (std::size_t a = 0; a < n; ++a) shifted[a] += eta * std::log(ref[a]);
            auto k = kl_backup(w, eta, ref);
            auto e = entropy_backup(shifted, eta);
            CHECK(k.value == doctest::Approx(e.value).epsilon(1e-12));
            CHECK(sup_gap(k.argmax, e.argmax) <= 1e-12);
        }
    }
}

TEST_CASE("chi_square_backup against the grid") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 30; ++t) {
        const auto n = testsupport::random_size(rng, 2, 3);
        auto w = testsupport::random_vector(rng, n, -2, 2);
        auto ref = testsupport::random_simplex(rng, n, 0.05);
        const double lambda = 0.05 + std::uniform_real_distribution<>(0, 2)(rng);
        auto r = chi_square_backup(w, lambda, ref);
        CHECK(is_probability_row(r.argmax, 1e-12));
        auto obj = [&](const numvec& p) {
            double chi = 0.0;
            for (std::size_t a = 0; a < n; ++a) chi += (p[a] - ref[a]) * (p[a] - ref[a]) / ref[a];
            return testsupport::plain_dot(w, p) - lambda * chi;
        };
        CHECK(r.value == doctest::Approx(obj(r.argmax)).epsilon(1e-12));
        auto best = testsupport::grid_maximize(n, n == 2 ? 100000 : 600, obj);
        CHECK(r.value >= best.value - 1e-12);
        CHECK(r.value - best.value <= (n == 2 ? 1e-6 : 1e-3));
    }
}

TEST_CASE("numeric_conjugate") {
    std::mt19937_64 rng(5);
    SUBCASE("reproduces the entropy closed form") {
        EntropyRegularizer ent(1.0);
        for (int t = 0; t < 30; ++t) {
            const auto n = testsupport::random_size(rng, 2, 5);
            auto w = testsupport::random_vector(rng, n, -3, 3);
            auto num = numeric_conjugate(w, ent);
            auto cf = entropy_backup(w, 1.0);
            CHECK(num.value == doctest::Approx(cf.value).epsilon(1e-7));
            CHECK(sup_gap(num.argmax, cf.argmax) <= 1e-5);
        }
    }
    SUBCASE("zero regularizer gives the max") {
        ZeroRegularizer zero;
        auto r = numeric_conjugate(numvec{0.3, 2.0, -1.0}, zero);
        CHECK(r.value == doctest::Approx(2.0).epsilon(1e-10));
        CHECK(is_probability_row(r.argmax, 1e-10));
    }
    SUBCASE("certified against the grid for non-closed-form regularizers") {
        for (int t = 0; t < 20; ++t) {
            const auto n = testsupport::random_size(rng, 2, 3);
            auto w = testsupport::random_vector(rng, n, -2, 2);
            numvec h(n * n, 0.0);
            for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 0.5 + std::uniform_real_distribution<>(0, 2)(rng);
            QuadraticRegularizer quad(n, h);
            ChiSquareRegularizer chi(testsupport::random_simplex(rng, n, 0.05));
            for (const Regularizer* phi : {static_cast<const Regularizer*>(&quad), static_cast<const Regularizer*>(&chi)}) {
                auto r = numeric_conjugate(w, *phi);
                auto best = testsupport::grid_maximize(n, n == 2 ? 100000 : 1000, [&](const numvec& p) {
                    return testsupport::plain_dot(w, p) + phi->value(p);
                });
                CHECK(r.value >= best.value - 10 * 1e-12);
            }
            auto r = numeric_conjugate(w, chi);
            CHECK(r.value == doctest::Approx(chi.closed_form(w)->value).epsilon(1e-9));
        }
    }
    SUBCASE("budget exhaustion carries the best iterate") {
        QuadraticRegularizer quad(2, numvec{1, 0, 0, 1});
        ConjugateOptions opts;
        opts.max_steps = 1;
        opts.tol = 1e-300;
        try {
            numeric_conjugate(numvec{5.0, 0.0}, quad, opts);
            FAIL("expected ConjugateError");
        } catch (const ConjugateError& e) {
            CHECK(is_probability_row(e.best().argmax));
        }
    }
}

TEST_CASE("regularized backup operator limits") {
    numvec w{0.4, -1.0, 2.5};
    auto hot = RegularizedBackup({std::make_shared<EntropyRegularizer>(1e6)}).backup(w, 0);
    const double mean = (0.4 - 1.0 + 2.5) / 3.0;
    CHECK(hot.value == doctest::Approx(1e6 * std::log(3.0) + mean).epsilon(1e-9));
    for (double p : hot.policy) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-5));

    auto cold = RegularizedBackup({std::make_shared<EntropyRegularizer>(1e-6)}).backup(w, 2);
    CHECK(sup_gap(cold.policy, standard_backup(w).policy) <= 1e-3);

    numvec ref{0.6, 0.3, 0.1};
    auto kl = RegularizedBackup({std::make_shared<KlRegularizer>(0.8, ref)}).backup(w, 0);
    auto direct = kl_backup(w, 0.8, ref);
    CHECK(kl.value == direct.value);
    CHECK(kl.policy == direct.argmax);
}

TEST_CASE("entropy value iteration reaches the soft Bellman fixed point") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        MdpModel m = random_mdp(6, 3, seed, -1, 1, 0.9);
        const double eta = 0.5;
        auto op = regularized_backup_operator({std::make_shared<EntropyRegularizer>(eta)});
        auto res = value_iteration(m, op);
        for (std::size_t s = 0; s < 6; ++s) {
            auto w = q_vector(m, res.value, s);
            double lse = 0.0;
            const double top = *std::max_element(w.begin(), w.end());
            for (double x : w) lse += std::exp((x - top) / eta);
            CHECK(res.value[s] == doctest::Approx(top + eta * std::log(lse)).epsilon(1e-9));
        }
        auto bonus = regularizer_bonus(op, res.policy);
        auto exact = policy_evaluation_exact(m, res.policy, bonus);
        CHECK(sup_gap(exact, res.value) <= 1e-8);
    }
}

TEST_CASE("conjugate duality on the entropy path") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 100; ++t) {
        const auto n = testsupport::random_size(rng, 1, 6);
        auto w = testsupport::random_vector(rng, n, -10, 10);
        const double eta = 0.05 + std::uniform_real_distribution<>(0, 3)(rng);
        EntropyRegularizer ent(eta);
        auto r = entropy_backup(w, eta);
        CHECK(std::abs(r.value - testsupport::plain_dot(w, r.argmax) - ent.value(r.argmax)) <= 1e-8);
    }
}

TEST_CASE("regularizer gradients match central differences") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 20; ++t) {
        const auto n = testsupport::random_size(rng, 2, 5);
        for (const auto& phi : sample_regularizers(rng, n)) {
            auto p = testsupport::random_simplex(rng, n, 0.1);
            auto g = phi->gradient(p);
            auto fd = testsupport::fd_gradient([&](const numvec& x) { return phi->value(x); }, p, 1e-6);
            for (std::size_t a = 0; a < n; ++a)
                CHECK(std::abs(fd[a] - g[a]) <= 1e-5 * std::max(1.0, std::abs(g[a])));
        }
    }
}

TEST_CASE("regularizers are concave and bounded on the simplex") {
    std::mt19937_64 rng(37);
    for (int t = 0; t < 50; ++t) {
        const auto n = testsupport::random_size(rng, 2, 5);
        for (const auto& phi : sample_regularizers(rng, n)) {
            auto p = testsupport::random_simplex(rng, n, 0.01);
            auto q = testsupport::random_simplex(rng, n, 0.01);
            numvec mid(n);
            for (std::size_t a = 0; a < n; ++a) mid[a] = 0.5 * (p[a] + q[a]);
            CHECK(phi->value(mid) >= 0.5 * phi->value(p) + 0.5 * phi->value(q) - 1e-9);
            numvec vertex(n, 0.0);
            vertex[0] = 1.0;
            CHECK(std::isfinite(phi->value(vertex)));
        }
    }
    EntropyRegularizer ent(2.0);
    CHECK(ent.value(numvec(4, 0.25)) == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-14));
    numvec ref{0.1, 0.2, 0.7};
    CHECK(KlRegularizer(3.0, ref).value(ref) == 0.0);
}

TEST_CASE("envelope: the backup gradient is the policy") {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 20; ++t) {
        const auto n = testsupport::random_size(rng, 2, 4);
        auto w = testsupport::random_vector(rng, n, -2, 2);
        for (const auto& phi : sample_regularizers(rng, n)) {
            auto value_at = [&](const numvec& x) { return regularized_conjugate(x, *phi).value; };
            auto pol = regularized_conjugate(w, *phi).argmax;
            auto fd = testsupport::fd_gradient(value_at, w, 1e-5);
            CHECK(sup_gap(fd, pol) <= 1e-5);
        }
    }
}

TEST_CASE("bregman_divergence") {
    std::mt19937_64 rng(43);
    EntropyRegularizer ent(1.0);
    for (int t = 0; t < 30; ++t) {
        const auto n = testsupport::random_size(rng, 2, 5);
        auto p = testsupport::random_simplex(rng, n);
        auto q = testsupport::random_simplex(rng, n, 0.01);
        CHECK(std::abs(bregman_divergence(ent, q, q)) <= 1e-14);
        CHECK(bregman_divergence(ent, p, q) >= -1e-14);
        numvec uniform(n, 1.0 / static_cast<double>(n));
        CHECK(bregman_divergence(ent, p, uniform) == doctest::Approx(kl_of(p, uniform)).epsilon(1e-12));
        // -H(p) + H(u) + grad.(p-u) = sum p ln p + ln n = KL(p||u)
        CHECK(kl_of(p, uniform) == doctest::Approx(std::log(static_cast<double>(n)) - entropy_of(p)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(bregman_divergence(ent, numvec{0.5, 0.5}, numvec{1.0, 0.0}), std::domain_error);
}
