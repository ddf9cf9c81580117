#pragma once

// Generators and brute-force oracles shared by the unit tests and the
// acceptance suite. Nothing here calls into the solvers it is used to check.

#include "unimdp/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace testsupport {

using unimdp::numvec;

inline numvec random_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    numvec v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

/// Dirichlet(1) row bounded away from zero by `floor` (then renormalized).
inline numvec random_simplex(std::mt19937_64& rng, std::size_t n, double floor = 0.0) {
    std::exponential_distribution<double> e(1.0);
    numvec v(n);
    double total = 0.0;
    for (auto& x : v) total += (x = e(rng) + floor);
    for (auto& x : v) x /= total;
    return v;
}

inline std::size_t random_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/**
 * Visits every point of the barycentric grid {k / res} on the simplex with
 * n in {1, 2, 3} vertices.
 */
inline void for_each_grid_point(std::size_t n, std::size_t res,
                                const std::function<void(const numvec&)>& visit) {
    const double h = 1.0 / static_cast<double>(res);
    numvec p(n);
    if (n == 1) {
        p[0] = 1.0;
        visit(p);
    } else if (n == 2) {
        for (std::size_t i = 0; i <= res; ++i) {
            p[0] = static_cast<double>(i) * h;
            p[1] = static_cast<double>(res - i) * h;
            visit(p);
        }
    } else if (n == 3) {
        for (std::size_t i = 0; i <= res; ++i)
            for (std::size_t j = 0; i + j <= res; ++j) {
                p[0] = static_cast<double>(i) * h;
                p[1] = static_cast<double>(j) * h;
                p[2] = static_cast<double>(res - i - j) * h;
                visit(p);
            }
    } else {
        throw std::invalid_argument("grid only for up to three actions");
    }
}

struct GridBest {
    double value = -std::numeric_limits<double>::infinity();
    numvec point;
};

/// max over the grid of objective(p), skipping points rejected by `feasible`.
inline GridBest grid_maximize(std::size_t n, std::size_t res,
                              const std::function<double(const numvec&)>& objective,
                              const std::function<bool(const numvec&)>& feasible = {}) {
    GridBest best;
    for_each_grid_point(n, res, [&](const numvec& p) {
        if (feasible && !feasible(p)) return;
        const double v = objective(p);
        if (v > best.value) {
            best.value = v;
            best.point = p;
        }
    });
    return best;
}

/// Golden-section maximization of a concave function of one variable on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         int iters = 200) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc < fd) {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        }
    }
    return 0.5 * (a + b);
}

inline double plain_dot(const numvec& a, const numvec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sup_gap(const numvec& a, const numvec& b) {
    double g = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, std::abs(a[i] - b[i]));
    return g;
}

/**
 * Value of a fixed policy by forward propagation of the state distribution
 * for `steps` steps from each start state (truncated discounted sum). The
 * truncation error is at most gamma^steps * max|r| / (1 - gamma).
 */
inline numvec rollout_value(const unimdp::MdpModel& m, const unimdp::Policy& pi,
                            std::size_t steps, const numvec& bonus = {}) {
    const auto S = m.num_states();
    const auto A = m.num_actions();
    numvec r_pi(S, 0.0);
    std::vector<numvec> p_pi(S, numvec(S, 0.0));
    for (std::size_t s = 0; s < S; ++s) {
        if (!bonus.empty()) r_pi[s] += bonus[s];
        for (std::size_t a = 0; a < A; ++a) {
            r_pi[s] += pi(s, a) * m.reward(s, a);
            for (std::size_t n = 0; n < S; ++n) p_pi[s][n] += pi(s, a) * m.transition(s, a, n);
        }
    }
    numvec out(S);
    for (std::size_t start = 0; start < S; ++start) {
        numvec dist(S, 0.0), next(S);
        dist[start] = 1.0;
        double disc = 1.0, total = 0.0;
        for (std::size_t t = 0; t < steps; ++t) {
            total += disc * plain_dot(dist, r_pi);
            std::fill(next.begin(), next.end(), 0.0);
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t n = 0; n < S; ++n) next[n] += dist[s] * p_pi[s][n];
            dist.swap(next);
            disc *= m.discount();
        }
        out[start] = total;
    }
    return out;
}

/// Central difference of f along direction d.
inline double directional_fd(const std::function<double(const numvec&)>& f, const numvec& x,
                             const numvec& d, double h) {
    numvec xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += h * d[i];
        xm[i] -= h * d[i];
    }
    return (f(xp) - f(xm)) / (2.0 * h);
}

/// Partial derivatives of f by central differences with step h.
inline numvec fd_gradient(const std::function<double(const numvec&)>& f, const numvec& x,
                          double h = 1e-6) {
    numvec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        numvec e(x.size(), 0.0);
        e[i] = 1.0;
        g[i] = directional_fd(f, x, e, h);
    }
    return g;
}

}  // namespace testsupport
