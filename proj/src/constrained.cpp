#include "unimdp/constrained.hpp"

#include "unimdp/stochastic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace unimdp {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

void check_row(std::span<const double> row, bool strictly_positive, const char* who) {
    if (!is_probability_row(row)) throw std::invalid_argument(std::string(who) + ": reference is not a probability row");
    if (strictly_positive)
        for (double p : row)
            if (!(p > 0.0)) throw std::invalid_argument(std::string(who) + ": reference must be strictly positive");
}

void check_lengths(std::span<const double> w, std::span<const double> ref, const char* who) {
    if (w.empty() || w.size() != ref.size()) throw std::invalid_argument(std::string(who) + ": length mismatch");
}

double max_of(std::span<const double> w) { return *std::max_element(w.begin(), w.end()); }

/// Reference restricted to the argmax set of w and renormalized, with its mass.
std::pair<numvec, double> restrict_to_top(std::span<const double> w, std::span<const double> ref) {
    const double top = max_of(w);
    numvec p(w.size(), 0.0);
    double mass = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a)
        if (w[a] == top) mass += (p[a] = ref[a]);
    for (auto& v : p) v /= mass;
    return {p, mass};
}

ConstrainedResult fixed_row(std::span<const double> w, numvec row, double multiplier) {
    ConstrainedResult out;
    out.value = dot(w, row);
    out.dual_value = out.value;
    out.policy = std::move(row);
    out.multiplier = multiplier;
    return out;
}

bool all_equal(std::span<const double> w) {
    return std::all_of(w.begin(), w.end(), [&](double v) { return v == w[0]; });
}

/// l(pi) - c of the set; 0 for sets without a scalar constraint.
double excess(const ConstraintSet& set, std::span<const double> pi) {
    return std::visit(overloaded{
                          [&](const KlBall& b) { return kl_divergence(pi, b.reference) - b.radius; },
                          [&](const L1Ball& b) {
                              double d = 0.0;
                              for (std::size_t a = 0; a < pi.size(); ++a) d += std::abs(pi[a] - b.reference[a]);
                              return d - b.radius;
                          },
                          [&](const L2ChiSquareBall& b) { return chi_square_divergence(pi, b.reference) - b.radius; },
                          [&](const Singleton& s) { return sup_norm_distance(pi, s.row); },
                          [&](const FullSimplex&) { return 0.0; },
                          [&](const LevelSet& l) { return -l.phi->value(pi) - l.level; },
                      },
                      set);
}

/// Bisects ln x on [lo, hi] while `above(x)` holds at lo and fails at hi.
template <class Pred>
std::pair<double, double> log_bisect(double lo, double hi, Pred above, std::size_t& evals,
                                     double rel = 4.0 * kEps) {
    for (std::size_t k = 0; k < 400 && hi / lo - 1.0 > rel; ++k) {
        const double mid = std::sqrt(lo * hi);
        if (mid <= lo || mid >= hi) break;
        ++evals;
        if (above(mid))
            lo = mid;
        else
            hi = mid;
    }
    return {lo, hi};
}

/// Euclidean projection onto {x >= 0, sum x = 1} in the metric sum z_a^2 / ref_a.
numvec weighted_simplex_projection(std::span<const double> y, std::span<const double> ref) {
    const std::size_t n = y.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return y[i] / ref[i] > y[j] / ref[j]; });
    double sy = 0.0, sr = 0.0, nu = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        sy += y[order[k]];
        sr += ref[order[k]];
        nu = (sy - 1.0) / sr;
        if (k + 1 == n || y[order[k + 1]] / ref[order[k + 1]] <= nu) break;
    }
    numvec x(n);
    for (std::size_t a = 0; a < n; ++a) x[a] = std::max(0.0, y[a] - nu * ref[a]);
    return x;
}

numvec weighted_ball_projection(std::span<const double> y, std::span<const double> ref, double c) {
    const double r = std::sqrt(chi_square_divergence(y, ref));
    numvec x(y.begin(), y.end());
    if (r <= std::sqrt(c)) return x;
    const double f = std::sqrt(c) / r;
    for (std::size_t a = 0; a < x.size(); ++a) x[a] = ref[a] + (y[a] - ref[a]) * f;
    return x;
}

double weighted_norm(std::span<const double> a, std::span<const double> b, std::span<const double> ref) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]) / ref[i];
    return std::sqrt(s);
}

/// Dykstra's alternating projections onto simplex and chi-square ball.
numvec project_simplex_ball(std::span<const double> z, std::span<const double> ref, double c) {
    const std::size_t n = z.size();
    numvec x(z.begin(), z.end()), p(n, 0.0), q(n, 0.0), y(n), t(n);
    for (std::size_t k = 0; k < 10000; ++k) {
        for (std::size_t a = 0; a < n; ++a) t[a] = x[a] + p[a];
        y = weighted_simplex_projection(t, ref);
        for (std::size_t a = 0; a < n; ++a) p[a] = t[a] - y[a];
        for (std::size_t a = 0; a < n; ++a) t[a] = y[a] + q[a];
        numvec next = weighted_ball_projection(t, ref, c);
        for (std::size_t a = 0; a < n; ++a) q[a] = t[a] - next[a];
        const double move = weighted_norm(next, x, ref) + weighted_norm(next, y, ref);
        x = std::move(next);
        if (move <= 1e-15) break;
    }
    return y;  // on the simplex; within the Dykstra tolerance of the ball
}

/// Golden-section search for the minimizer of a unimodal f on [lo, hi].
std::pair<double, double> golden_argmin(double lo, double hi, const std::function<double(double)>& f) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int k = 0; k < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a) + std::abs(b)); ++k) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    std::pair<double, double> best{lo, f(lo)};
    for (double x : {hi, 0.5 * (a + b)}) {
        const double v = f(x);
        if (v < best.second) best = {x, v};
    }
    return best;
}

/// min_{mu >= 0} f(w + mu) by cyclic coordinate golden-section searches on
/// mu_a in [0, span]; f must be convex.
double coordinate_minimize(std::span<const double> w, double span,
                           const std::function<double(std::span<const double>)>& f) {
    numvec v(w.begin(), w.end());
    double best = f(v);
    for (int sweep = 0; sweep < 500; ++sweep) {
        const double before = best;
        for (std::size_t a = 0; a < v.size(); ++a) {
            const double keep = v[a];
            auto [mu, val] = golden_argmin(0.0, span, [&](double m) {
                v[a] = w[a] + m;
                return f(v);
            });
            if (val < best) {
                v[a] = w[a] + mu;
                best = val;
            } else {
                v[a] = keep;
            }
        }
        if (before - best <= 1e-15 * std::max(1.0, std::abs(best))) break;
    }
    return best;
}

RegularizerPtr borrow(const Regularizer& phi) {
    return RegularizerPtr(RegularizerPtr(), &phi);
}

}  // namespace

double chi_square_divergence(std::span<const double> p, std::span<const double> ref) {
    double s = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) s += (p[a] - ref[a]) * (p[a] - ref[a]) / ref[a];
    return s;
}

void validate_constraint(const ConstraintSet& set, std::size_t num_actions) {
    auto check_ball = [&](const numvec& ref, double radius, bool positive, const char* who) {
        if (ref.size() != num_actions) throw std::invalid_argument(std::string(who) + ": reference length mismatch");
        check_row(ref, positive, who);
        if (!(radius >= 0.0) || !std::isfinite(radius))
            throw std::invalid_argument(std::string(who) + ": radius must be finite and nonnegative");
    };
    std::visit(overloaded{
                   [&](const KlBall& b) { check_ball(b.reference, b.radius, true, "kl_ball"); },
                   [&](const L1Ball& b) {
                       check_ball(b.reference, b.radius, false, "l1_ball");
                       if (b.radius > 2.0) throw std::invalid_argument("l1_ball: radius must be in [0, 2]");
                   },
                   [&](const L2ChiSquareBall& b) { check_ball(b.reference, b.radius, true, "l2_ball"); },
                   [&](const Singleton& s) {
                       if (s.row.size() != num_actions) throw std::invalid_argument("singleton: row length mismatch");
                       if (!is_probability_row(s.row)) throw std::invalid_argument("singleton: row is not a probability row");
                   },
                   [&](const FullSimplex&) {},
                   [&](const LevelSet& l) {
                       if (!l.phi) throw std::invalid_argument("level_set: null regularizer");
                       if (!std::isfinite(l.level)) throw std::invalid_argument("level_set: level must be finite");
                   },
               },
               set);
}

double constraint_violation(const ConstraintSet& set, std::span<const double> pi) {
    double simplex = std::abs(std::accumulate(pi.begin(), pi.end(), 0.0) - 1.0);
    for (double p : pi) simplex = std::max(simplex, -p);
    return std::max({0.0, simplex, excess(set, pi)});
}

ConstrainedResult kl_constrained_backup(std::span<const double> w, std::span<const double> ref,
                                        double c, double tol) {
    check_lengths(w, ref, "kl_constrained_backup");
    check_row(ref, true, "kl_constrained_backup");
    if (!(c >= 0.0)) throw std::invalid_argument("kl_constrained_backup: c must be nonnegative");
    if (!(tol > 0.0)) throw std::invalid_argument("kl_constrained_backup: tol must be positive");

    const numvec reference(ref.begin(), ref.end());
    if (c == 0.0) return fixed_row(w, reference, std::numeric_limits<double>::infinity());
    if (all_equal(w)) return fixed_row(w, reference, 0.0);
    auto [top_row, mass] = restrict_to_top(w, ref);
    if (c >= -std::log(mass)) return fixed_row(w, std::move(top_row), 0.0);

    const std::size_t n = w.size();
    const double top = max_of(w);
    numvec shifted(n);
    for (std::size_t a = 0; a < n; ++a) shifted[a] = w[a] - top;

    std::size_t evals = 0;
    numvec pi(n);
    // KL(pi_y || ref) and ln Z(y) with Z = sum ref exp(shifted / y)
    auto eval = [&](double y, numvec& out) {
        ++evals;
        double z = 0.0;
        for (std::size_t a = 0; a < n; ++a) z += (out[a] = ref[a] * std::exp(shifted[a] / y));
        double lin = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            out[a] /= z;
            lin += out[a] * shifted[a];
        }
        return std::pair{lin / y - std::log(z), std::log(z)};
    };
    auto too_far = [&](double y) { return eval(y, pi).first > c; };

    double lo = 1e-8, hi = 1.0;
    while (!too_far(lo)) {
        hi = lo;
        lo *= 0.5;
    }
    while (too_far(hi)) {
        lo = hi;
        hi *= 2.0;
        if (!std::isfinite(hi)) throw NumericalError("kl_constrained_backup: dual bracket diverged");
    }
    std::tie(lo, hi) = log_bisect(lo, hi, too_far, evals);

    ConstrainedResult out;
    const auto [kl, log_z] = eval(hi, pi);
    double lin = 0.0;
    for (std::size_t a = 0; a < n; ++a) lin += pi[a] * shifted[a];
    out.value = top + lin;
    out.dual_value = c * hi + top + hi * log_z;
    out.multiplier = hi;
    out.policy = pi;
    out.evaluations = evals;
    const double gap = out.dual_value - out.value;
    if (kl > c || gap > tol * std::max(1.0, std::abs(out.value)))
        throw ConvergenceError("kl_constrained_backup: duality gap not certified", gap, evals);
    return out;
}

ConstrainedResult l1_constrained_backup(std::span<const double> w, std::span<const double> ref, double c) {
    check_lengths(w, ref, "l1_constrained_backup");
    check_row(ref, false, "l1_constrained_backup");
    if (!(c >= 0.0 && c <= 2.0)) throw std::invalid_argument("l1_constrained_backup: c must be in [0, 2]");
    const std::size_t n = w.size();
    const std::size_t best = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    numvec pi(ref.begin(), ref.end());
    const double budget = std::min(0.5 * c, 1.0 - ref[best]);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return w[i] < w[j]; });
    double remaining = budget;
    double marginal = w[best];
    for (std::size_t a : order) {
        if (a == best || remaining <= 0.0) continue;
        const double take = std::min(pi[a], remaining);
        if (take > 0.0) marginal = w[a];
        pi[a] -= take;
        remaining -= take;
    }
    pi[best] += budget - remaining;

    ConstrainedResult out = fixed_row(w, std::move(pi), 0.0);
    // shadow price of the radius: half the gap between the best action and the last donor
    if (0.5 * c <= 1.0 - ref[best]) out.multiplier = 0.5 * (w[best] - marginal);
    out.evaluations = 1;
    return out;
}

ConstrainedResult l2_constrained_backup(std::span<const double> w, std::span<const double> ref,
                                        double c, double tol) {
    check_lengths(w, ref, "l2_constrained_backup");
    check_row(ref, true, "l2_constrained_backup");
    if (!(c >= 0.0)) throw std::invalid_argument("l2_constrained_backup: c must be nonnegative");
    if (!(tol > 0.0)) throw std::invalid_argument("l2_constrained_backup: tol must be positive");

    const numvec reference(ref.begin(), ref.end());
    if (c == 0.0) return fixed_row(w, reference, std::numeric_limits<double>::infinity());
    if (all_equal(w)) return fixed_row(w, reference, 0.0);
    auto [top_row, mass] = restrict_to_top(w, ref);
    if (c >= 1.0 / mass - 1.0) return fixed_row(w, std::move(top_row), 0.0);

    std::size_t evals = 0;
    ConjugateResult cur;
    auto too_far = [&](double kappa) {
        cur = chi_square_backup(w, kappa, ref);
        return chi_square_divergence(cur.argmax, ref) > c;
    };
    double lo = 1e-8, hi = 1.0;
    ++evals;
    while (!too_far(lo)) {
        hi = lo;
        lo *= 0.5;
        ++evals;
        if (lo < 1e-300) throw NumericalError("l2_constrained_backup: dual bracket collapsed");
    }
    ++evals;
    while (too_far(hi)) {
        lo = hi;
        hi *= 2.0;
        ++evals;
        if (!std::isfinite(hi)) throw NumericalError("l2_constrained_backup: dual bracket diverged");
    }
    std::tie(lo, hi) = log_bisect(lo, hi, too_far, evals);

    too_far(hi);
    ConstrainedResult out;
    out.policy = cur.argmax;
    out.value = dot(w, out.policy);
    const double chi = chi_square_divergence(out.policy, ref);
    out.multiplier = hi;
    out.dual_value = cur.value + hi * c;
    out.evaluations = evals;
    const double gap = out.dual_value - out.value;
    if (chi > c * (1.0 + 1e-12) || gap > tol * std::max(1.0, std::abs(out.value)))
        throw ConvergenceError("l2_constrained_backup: duality gap not certified", gap, evals);
    return out;
}

ConstrainedResult l2_constrained_backup_projected(std::span<const double> w, std::span<const double> ref,
                                                  double c, double tol, std::size_t max_steps) {
    check_lengths(w, ref, "l2_constrained_backup_projected");
    check_row(ref, true, "l2_constrained_backup_projected");
    if (!(c >= 0.0)) throw std::invalid_argument("l2_constrained_backup_projected: c must be nonnegative");
    const std::size_t n = w.size();
    numvec x(ref.begin(), ref.end());
    if (c == 0.0 || all_equal(w)) return fixed_row(w, x, 0.0);

    const double top = max_of(w);
    numvec dir(n);
    double scale = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        dir[a] = ref[a] * (w[a] - top);
        scale += dir[a] * dir[a] / ref[a];
    }
    // a step of about the ball radius in the weighted norm
    const double step = std::sqrt(std::min(c, 1.0 / *std::min_element(ref.begin(), ref.end())) / scale);
    numvec z(n);
    for (std::size_t k = 0; k < max_steps; ++k) {
        for (std::size_t a = 0; a < n; ++a) z[a] = x[a] + step * dir[a];
        numvec next = project_simplex_ball(z, ref, c);
        const double move = weighted_norm(next, x, ref);
        x = std::move(next);
        if (move < tol) {
            ConstrainedResult out = fixed_row(w, x, 0.0);
            out.evaluations = k + 1;
            return out;
        }
    }
    throw ConvergenceError("l2_constrained_backup_projected: step budget exhausted", 0.0, max_steps);
}

ConstrainedResult level_set_backup(std::span<const double> w, const Regularizer& phi, double level,
                                   const ConjugateOptions& opts) {
    if (w.empty()) throw std::invalid_argument("level_set_backup: empty w");
    const std::size_t n = w.size();
    const std::size_t best = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    numvec vertex(n, 0.0);
    vertex[best] = 1.0;
    if (-phi.value(vertex) <= level) return fixed_row(w, std::move(vertex), 0.0);

    const double slack = 1e-12 * std::max(1.0, std::abs(level));
    const RegularizerPtr base = borrow(phi);
    std::size_t evals = 0;
    ConjugateResult cur;
    auto too_far = [&](double lambda) {
        ++evals;
        cur = regularized_conjugate(w, ScaledRegularizer(base, lambda), opts);
        return -phi.value(cur.argmax) > level;
    };
    double lo = 1e-8, hi = 1.0;
    while (!too_far(lo)) {
        hi = lo;
        lo *= 0.5;
        if (lo < 1e-300) throw NumericalError("level_set_backup: multiplier bracket collapsed");
    }
    while (too_far(hi)) {
        if (-phi.value(cur.argmax) <= level + slack) break;
        lo = hi;
        hi *= 2.0;
        if (hi > 1e15) break;  // level at the maximum of phi: the set is a single point
    }
    std::tie(lo, hi) = log_bisect(lo, hi, too_far, evals, 1e-11);
    too_far(lo);
    const double lo_dual = cur.value + lo * level;
    too_far(hi);
    ConstrainedResult out;
    out.policy = cur.argmax;
    out.multiplier = hi;
    out.dual_value = cur.value + hi * level;
    // Every dual value bounds the optimum from above and is flat at the
    // optimal multiplier, so it is accurate to second order; w.pi is only
    // as accurate as the numerically maximized row.
    out.value = std::min(out.dual_value, lo_dual);
    out.evaluations = evals;
    return out;
}

ConstrainedResult constrained_backup(std::span<const double> w, const ConstraintSet& set,
                                     const ConjugateOptions& opts) {
    return std::visit(overloaded{
                          [&](const KlBall& b) { return kl_constrained_backup(w, b.reference, b.radius); },
                          [&](const L1Ball& b) { return l1_constrained_backup(w, b.reference, b.radius); },
                          [&](const L2ChiSquareBall& b) { return l2_constrained_backup(w, b.reference, b.radius); },
                          [&](const Singleton& s) {
                              if (s.row.size() != w.size()) throw std::invalid_argument("singleton: length mismatch");
                              return fixed_row(w, s.row, 0.0);
                          },
                          [&](const FullSimplex&) {
                              auto b = standard_backup(w);
                              return fixed_row(w, std::move(b.policy), 0.0);
                          },
                          [&](const LevelSet& l) { return level_set_backup(w, *l.phi, l.level, opts); },
                      },
                      set);
}

ConstrainedResult grid_oracle_backup(std::span<const double> w, const ConstraintSet& set,
                                     std::size_t resolution) {
    const std::size_t n = w.size();
    if (n == 0 || n > 3) throw std::invalid_argument("grid_oracle_backup: needs 1 to 3 actions");
    if (resolution == 0) throw std::invalid_argument("grid_oracle_backup: resolution must be positive");
    if (const auto* s = std::get_if<Singleton>(&set)) return fixed_row(w, s->row, 0.0);

    const double h = 1.0 / static_cast<double>(resolution);
    ConstrainedResult out;
    out.value = -std::numeric_limits<double>::infinity();
    numvec p(n);
    auto visit = [&] {
        ++out.evaluations;
        if (excess(set, p) > 0.0) return;
        const double v = dot(w, p);
        if (v > out.value) {
            out.value = v;
            out.policy = p;
        }
    };
    if (n == 1) {
        p[0] = 1.0;
        visit();
    } else if (n == 2) {
        for (std::size_t i = 0; i <= resolution; ++i) {
            p[0] = static_cast<double>(i) * h;
            p[1] = static_cast<double>(resolution - i) * h;
            visit();
        }
    } else {
        for (std::size_t i = 0; i <= resolution; ++i)
            for (std::size_t j = 0; i + j <= resolution; ++j) {
                p[0] = static_cast<double>(i) * h;
                p[1] = static_cast<double>(j) * h;
                p[2] = static_cast<double>(resolution - i - j) * h;
                visit();
            }
    }
    if (out.policy.empty()) throw NumericalError("grid_oracle_backup: no feasible grid point");
    out.dual_value = out.value;
    return out;
}

DualDiscrepancy l1_dual_report(std::span<const double> w, std::span<const double> ref, double c) {
    DualDiscrepancy r;
    r.exact = l1_constrained_backup(w, ref, c).value;
    // Lifting every entry to max w makes the spread vanish.
    const double top = max_of(w);
    double hi = -std::numeric_limits<double>::infinity(), lo = -hi;
    for (double v : w) {
        const double lifted = v + (top - v);
        hi = std::max(hi, lifted);
        lo = std::min(lo, lifted);
    }
    r.printed_dual = dot(w, ref) + 0.5 * c * (hi - lo);

    // With the floor theta = min(w + mu), the best mu lifts only the entries
    // below theta; the objective is piecewise linear in theta with kinks at w.
    r.corrected_dual = std::numeric_limits<double>::infinity();
    for (double theta : w) {
        double lin = 0.0;
        for (std::size_t a = 0; a < w.size(); ++a) lin += ref[a] * std::max(w[a], theta);
        r.corrected_dual = std::min(r.corrected_dual, lin + 0.5 * c * (top - theta));
    }
    r.difference = r.printed_dual - r.exact;
    return r;
}

DualDiscrepancy l2_dual_report(std::span<const double> w, std::span<const double> ref, double c) {
    DualDiscrepancy r;
    r.exact = l2_constrained_backup(w, ref, c).value;
    const double top = max_of(w);
    const double bottom = *std::min_element(w.begin(), w.end());
    const double span = 2.0 * (top - bottom) + std::abs(top) + 1.0;
    auto mean = [&](std::span<const double> v) { return dot(ref, v); };
    r.printed_dual = coordinate_minimize(w, span, [&](std::span<const double> v) {
        double sq = 0.0;
        for (std::size_t a = 0; a < v.size(); ++a) sq += ref[a] * v[a] * v[a];
        return mean(v) + std::sqrt(c * sq);
    });
    r.corrected_dual = coordinate_minimize(w, span, [&](std::span<const double> v) {
        const double m = mean(v);
        double var = 0.0;
        for (std::size_t a = 0; a < v.size(); ++a) var += ref[a] * (v[a] - m) * (v[a] - m);
        return m + std::sqrt(c * var);
    });
    r.difference = r.printed_dual - r.exact;
    return r;
}

CtBackup::CtBackup(std::vector<ConstraintSet> per_state, ConjugateOptions opts)
    : per_state_(std::move(per_state)), opts_(opts) {
    if (per_state_.empty()) throw std::invalid_argument("CtBackup: no constraint sets");
}

const ConstraintSet& CtBackup::set(std::size_t state) const {
    return per_state_.size() == 1 ? per_state_.front() : per_state_.at(state);
}

BackupResult CtBackup::backup(std::span<const double> w, std::size_t state) const {
    auto r = constrained_backup(w, set(state), opts_);
    return {r.value, std::move(r.policy)};
}

CtBackup ct_backup_operator(std::vector<ConstraintSet> sets, ConjugateOptions opts) {
    return CtBackup(std::move(sets), opts);
}

RToCtConversion r_to_ct_convert(const MdpModel& model, std::vector<RegularizerPtr> phi_per_state,
                                const SolveOptions& solve, const ConjugateOptions& opts) {
    const std::size_t S = model.num_states(), A = model.num_actions();
    if (phi_per_state.size() == 1) phi_per_state.assign(S, phi_per_state.front());
    if (phi_per_state.size() != S) throw std::invalid_argument("r_to_ct_convert: need one regularizer per state");

    auto solved = value_iteration(model, regularized_backup_operator(phi_per_state, opts), solve);
    numvec levels(S);
    numvec reward = model.rewards();
    std::vector<ConstraintSet> sets;
    sets.reserve(S);
    for (std::size_t s = 0; s < S; ++s) {
        const auto& phi = phi_per_state[s];
        levels[s] = -phi->value(solved.policy.row(s));
        for (std::size_t a = 0; a < A; ++a) reward[s * A + a] -= levels[s];
        if (const auto* e = dynamic_cast<const EntropyRegularizer*>(phi.get())) {
            const double radius = levels[s] / e->eta() + std::log(static_cast<double>(A));
            sets.emplace_back(KlBall{numvec(A, 1.0 / static_cast<double>(A)), std::max(0.0, radius)});
        } else if (const auto* k = dynamic_cast<const KlRegularizer*>(phi.get())) {
            sets.emplace_back(KlBall{k->reference(), std::max(0.0, levels[s] / k->eta())});
        } else {
            sets.emplace_back(LevelSet{phi, levels[s]});
        }
    }
    return {model.with_rewards(std::move(reward)), std::move(sets), std::move(levels), std::move(solved)};
}

LagrangeConversion ct_to_r_convert(const MdpModel& model, const std::vector<ConstraintSet>& sets,
                                   const SolveOptions& solve, const ConjugateOptions& opts) {
    const std::size_t S = model.num_states(), A = model.num_actions();
    if (sets.size() != 1 && sets.size() != S) throw std::invalid_argument("ct_to_r_convert: need one set per state");
    auto set_of = [&](std::size_t s) -> const ConstraintSet& { return sets.size() == 1 ? sets.front() : sets[s]; };

    for (std::size_t s = 0; s < sets.size(); ++s) {
        validate_constraint(sets[s], A);
        std::visit(overloaded{
                       [](const KlBall& b) {
                           if (b.radius == 0.0) throw ConversionError("ct_to_r_convert: KL radius c = 0 has no Slater point");
                       },
                       [](const L2ChiSquareBall& b) {
                           if (b.radius == 0.0)
                               throw ConversionError("ct_to_r_convert: chi-square radius c = 0 has no Slater point");
                       },
                       [](const L1Ball&) {
                           throw ConversionError("ct_to_r_convert: the L1 distance is not strictly convex");
                       },
                       [](const Singleton&) {
                           throw ConversionError("ct_to_r_convert: a singleton set has no Slater point");
                       },
                       [](const FullSimplex&) {},
                       [&](const LevelSet& l) {
                           const double peak = regularized_conjugate(numvec(A, 0.0), *l.phi, opts).value;
                           if (!(-peak < l.level))
                               throw ConversionError("ct_to_r_convert: level set has no Slater point");
                       },
                   },
                   sets[s]);
    }

    LagrangeConversion out;
    out.constrained = value_iteration(model, ct_backup_operator(sets, opts), solve);
    out.multipliers.resize(S);
    out.slackness.resize(S);
    out.regularizers.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
        const auto w = q_vector(model, out.constrained.value, s);
        const auto& set = set_of(s);
        const auto r = constrained_backup(w, set, opts);
        const double lambda = r.multiplier;
        out.multipliers[s] = lambda;
        out.slackness[s] = std::holds_alternative<FullSimplex>(set) ? 0.0 : std::abs(lambda * excess(set, r.policy));
        if (lambda == 0.0) {
            out.regularizers[s] = std::make_shared<ZeroRegularizer>();
            continue;
        }
        out.regularizers[s] = std::visit(
            overloaded{
                [&](const KlBall& b) -> RegularizerPtr {
                    return std::make_shared<ScaledRegularizer>(std::make_shared<KlRegularizer>(1.0, b.reference),
                                                               lambda, lambda * b.radius);
                },
                [&](const L2ChiSquareBall& b) -> RegularizerPtr {
                    return std::make_shared<ScaledRegularizer>(std::make_shared<ChiSquareRegularizer>(b.reference),
                                                               lambda, lambda * b.radius);
                },
                [&](const LevelSet& l) -> RegularizerPtr {
                    return std::make_shared<ScaledRegularizer>(l.phi, lambda, lambda * l.level);
                },
                [&](const auto&) -> RegularizerPtr { return std::make_shared<ZeroRegularizer>(); },
            },
            set);
    }
    return out;
}

InteriorSweepWitness er_interior_sweep_witness(std::size_t settings, double discount) {
    if (settings < 2) throw std::invalid_argument("er_interior_sweep_witness: need at least two settings");
    InteriorSweepWitness out;
    auto entropy = regularized_backup_operator({std::make_shared<EntropyRegularizer>(1.0)});
    auto full = ct_backup_operator({FullSimplex{}});
    out.constrained_is_deterministic = true;
    bool interior = true;
    for (std::size_t k = 0; k < settings; ++k) {
        // gaps in [-4, 4], avoiding 0 so the unconstrained argmax is unique
        const double gap = -4.0 + 8.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(settings);
        const MdpModel m = fork_model(0.0, gap, discount);
        const double p = value_iteration(m, entropy).policy(0, 0);
        out.reward_gaps.push_back(gap);
        out.probabilities.push_back(p);
        interior = interior && p > 0.0 && p < 1.0;
        const double q = value_iteration(m, full).policy(0, 0);
        out.constrained_is_deterministic = out.constrained_is_deterministic && (q == 0.0 || q == 1.0);
    }
    numvec sorted = out.probabilities;
    std::sort(sorted.begin(), sorted.end());
    out.distinct = 1;
    for (std::size_t k = 1; k < sorted.size(); ++k)
        if (sorted[k] - sorted[k - 1] > 1e-9) ++out.distinct;
    out.holds = interior && out.distinct == settings && out.constrained_is_deterministic;
    return out;
}

SingletonWitness singleton_witness(const Regularizer& phi, double discount) {
    SingletonWitness out;
    const std::vector<ConstraintSet> sets{Singleton{{1.0, 0.0}}, FullSimplex{}, FullSimplex{}};
    auto op = ct_backup_operator(sets);
    out.policy_constant = true;
    for (double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
        const auto res = value_iteration(fork_model(t, -t, discount), op);
        out.rewards.push_back(t);
        out.values.push_back(res.value[0]);
        out.policy_constant = out.policy_constant && res.policy(0, 0) == 1.0 && res.policy(0, 1) == 0.0;
    }
    out.value_varies = std::any_of(out.values.begin(), out.values.end(),
                                   [&](double v) { return std::abs(v - out.values.front()) > 1e-9; });

    // phi is concave on the 2-simplex: the minimum sits at a vertex and the
    // maximum is found by golden section on p = pi(a1).
    auto along = [&](double p) { return phi.value(numvec{p, 1.0 - p}); };
    out.phi_lower = std::min(along(0.0), along(1.0));
    out.phi_upper = -golden_argmin(0.0, 1.0, [&](double p) { return -along(p); }).second;
    out.breaking_reward = std::abs(out.phi_upper - out.phi_lower) + 1.0;

    const auto reg = value_iteration(fork_model(0.0, out.breaking_reward, discount),
                                     regularized_backup_operator({borrow(phi)}));
    out.regularized_p1 = reg.policy(0, 0);
    out.holds = out.policy_constant && out.value_varies && out.regularized_p1 < 1.0 - 1e-9;
    return out;
}

}  // namespace unimdp
