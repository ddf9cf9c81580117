#include "unimdp/equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace unimdp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// E[max_a (w_a + eps_a)] for i.i.d. Gumbel(location, scale) noise.
class GumbelClosedForm final : public BackupOperator {
public:
    explicit GumbelClosedForm(const GumbelIid& g)
        : eta_(g.scale), shift_(g.location + g.scale * kEulerGamma) {}
    BackupResult backup(std::span<const double> w, std::size_t) const override {
        auto ev = ev_backup(w, eta_);
        return {ev.value + shift_, std::move(ev.policy)};
    }

private:
    double eta_;
    double shift_;
};

std::vector<RegularizerPtr> ambiguity_regularizers(const AmbiguitySet& set, std::size_t num_states) {
    std::vector<RegularizerPtr> out;
    for (std::size_t s = 0; s < num_states; ++s) out.push_back(ambiguity_regularizer(set, s));
    return out;
}

RelationEdge make_edge(std::string name, std::string relation, Verdict expected, Verdict actual,
                       bool monte_carlo) {
    RelationEdge e;
    e.name = std::move(name);
    e.relation = std::move(relation);
    e.expected = expected;
    e.actual = actual;
    e.monte_carlo = monte_carlo;
    e.as_expected = actual == expected || (monte_carlo && actual == Verdict::inconclusive);
    return e;
}

RelationEdge edge_from_report(std::string name, std::string relation, Verdict expected,
                              const EquivalenceReport& r) {
    auto e = make_edge(std::move(name), std::move(relation), expected, r.verdict, r.monte_carlo);
    e.trials = r.gaps.size();
    double vmax = 0.0, pmax = 0.0;
    for (const auto& g : r.gaps) {
        vmax = std::max(vmax, g.value_gap);
        pmax = std::max(pmax, g.policy_gap);
    }
    e.evidence = {{"max_value_gap", vmax}, {"max_policy_gap", pmax}};
    if (r.witness) {
        e.evidence.emplace_back("witness_trial", static_cast<double>(r.witness->trial));
        e.evidence.emplace_back("witness_value_gap", r.witness->value_gap);
        e.evidence.emplace_back("witness_policy_gap", r.witness->policy_gap);
    }
    e.note = r.summary;
    return e;
}

// Guards the suite: an edge that throws is recorded as an unexpected result.
template <class F>
RelationEdge guarded(std::string name, std::string relation, Verdict expected, bool mc, F&& f) {
    try {
        return f();
    } catch (const std::exception& ex) {
        auto e = make_edge(std::move(name), std::move(relation), expected, Verdict::inconclusive, false);
        e.as_expected = false;
        e.monte_carlo = mc;
        e.note = std::string("error: ") + ex.what();
        return e;
    }
}

}  // namespace

std::string framework_name(const Framework& f) {
    return std::visit(overloaded{
                          [](const StandardFramework&) -> std::string { return "standard"; },
                          [](const RegularizedFramework&) -> std::string { return "regularized"; },
                          [](const StochasticFramework& s) -> std::string {
                              return s.monte_carlo ? "stochastic-mc" : "stochastic-closed-form";
                          },
                          [](const DistributionalFramework&) -> std::string { return "distributional"; },
                          [](const ConstrainedFramework&) -> std::string { return "constrained"; },
                      },
                      f);
}

bool is_monte_carlo(const Framework& f) {
    const auto* s = std::get_if<StochasticFramework>(&f);
    return s && s->monte_carlo;
}

std::string verdict_name(Verdict v) {
    switch (v) {
        case Verdict::consistent: return "consistent";
        case Verdict::refuted: return "refuted";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "unknown";
}

InstanceSolution solve_instance(const FrameworkInstance& x, std::span<const double> reward,
                                const SolveOptions& opts) {
    const std::size_t nS = x.model.num_states();
    const std::size_t nA = x.model.num_actions();
    if (reward.size() != nS * nA) throw ShapeMismatchError("solve_instance: reward has the wrong size");
    const MdpModel m = x.model.with_rewards(numvec(reward.begin(), reward.end()));
    InstanceSolution out;
    std::visit(overloaded{
                   [&](const StandardFramework&) { out.result = value_iteration(m, StandardBackup{}, opts); },
                   [&](const RegularizedFramework& f) {
                       out.result = value_iteration(m, regularized_backup_operator(f.phi), opts);
                   },
                   [&](const StochasticFramework& f) {
                       if (!f.monte_carlo) {
                           const auto* g = std::get_if<GumbelIid>(&f.noise);
                           if (!g)
                               throw std::invalid_argument(
                                   "solve_instance: closed form needs i.i.d. Gumbel noise");
                           out.result = value_iteration(m, GumbelClosedForm(*g), opts);
                           return;
                       }
                       auto op = smdp_backup_operator(f.noise, nS, nA, f.samples, f.seed);
                       out.result = value_iteration(m, op, opts);
                       out.value_error = aggregate_std_error(m, op, out.result.value);
                       out.policy_error = 1.0 / std::sqrt(static_cast<double>(f.samples));
                   },
                   [&](const DistributionalFramework& f) {
                       out.result = value_iteration(m, ds_backup_operator(f.ambiguity, nS), opts);
                   },
                   [&](const ConstrainedFramework& f) {
                       out.result = value_iteration(m, ct_backup_operator(f.sets), opts);
                   },
               },
               x.framework);
    return out;
}

numvec trial_reward(std::size_t num_states, std::size_t num_actions, std::size_t trial,
                    std::size_t trials, std::uint64_t seed) {
    numvec r(num_states * num_actions, 0.0);
    if (trials >= 3 && trial + 2 >= trials) {
        if (trial + 1 == trials) return r;  // all tied
        for (std::size_t s = 0; s < num_states; ++s)
            for (std::size_t a = 0; a < num_actions; ++a)
                r[s * num_actions + a] = (s + a) % 2 == 0 ? 5.0 : -5.0;
        return r;
    }
    auto rng = state_stream(seed, trial);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (double& v : r) v = u(rng);
    return r;
}

EquivalenceReport check_equivalence(const FrameworkInstance& x, const FrameworkInstance& y,
                                    std::span<const double> offset,
                                    const EquivalenceOptions& opts) {
    if (!x.model.same_tuple(y.model))
        throw ShapeMismatchError("check_equivalence: instances do not share (S, A, q, gamma)");
    const std::size_t nS = x.model.num_states();
    const std::size_t nA = x.model.num_actions();
    if (!offset.empty() && offset.size() != nS * nA)
        throw ShapeMismatchError("check_equivalence: offset must have |S| x |A| entries");
    if (opts.trials == 0) throw std::invalid_argument("check_equivalence: trials must be positive");
    if (!(opts.tol > 0.0)) throw std::invalid_argument("check_equivalence: tol must be positive");

    EquivalenceReport rep;
    rep.framework_x = framework_name(x.framework);
    rep.framework_y = framework_name(y.framework);
    rep.offset = offset.empty() ? numvec(nS * nA, 0.0) : numvec(offset.begin(), offset.end());
    rep.seed = opts.seed;
    rep.tol = opts.tol;
    rep.monte_carlo = is_monte_carlo(x.framework) || is_monte_carlo(y.framework);

    bool noisy_miss = false;
    for (std::size_t t = 0; t < opts.trials; ++t) {
        const numvec r = trial_reward(nS, nA, t, opts.trials, opts.seed);
        numvec ry = r;
        for (std::size_t i = 0; i < ry.size(); ++i) ry[i] -= rep.offset[i];
        const auto sx = solve_instance(x, r, opts.solve);
        const auto sy = solve_instance(y, ry, opts.solve);

        TrialGap g;
        g.value_gap = sup_norm_distance(sx.result.value, sy.result.value);
        g.policy_gap = sx.result.policy.sup_distance(sy.result.policy);
        g.value_allowed = opts.tol + 4.0 * (sx.value_error + sy.value_error);
        g.policy_allowed = opts.tol + 4.0 * (sx.policy_error + sy.policy_error);
        rep.gaps.push_back(g);

        const bool within = g.value_gap <= g.value_allowed && g.policy_gap <= g.policy_allowed;
        if (within) continue;
        const bool beyond_noise = !rep.monte_carlo || g.value_gap > 2.0 * g.value_allowed ||
                                  g.policy_gap > 2.0 * g.policy_allowed;
        if (!beyond_noise) {
            noisy_miss = true;
            continue;
        }
        rep.verdict = Verdict::refuted;
        rep.witness = EquivalenceWitness{t, r, sx.result.value, sy.result.value, sx.result.policy,
                                         sy.result.policy, g.value_gap, g.policy_gap};
        break;
    }
    rep.trials = rep.gaps.size();
    if (rep.verdict != Verdict::refuted && noisy_miss) rep.verdict = Verdict::inconclusive;
    const std::string n = std::to_string(rep.trials);
    switch (rep.verdict) {
        case Verdict::consistent: rep.summary = "consistent over " + n + " trials"; break;
        case Verdict::inconclusive:
            rep.summary = "inconclusive over " + n + " trials (gaps within twice the Monte Carlo allowance)";
            break;
        case Verdict::refuted:
            rep.summary = "refuted at trial " + std::to_string(rep.witness->trial) + " of " + n;
            break;
    }
    return rep;
}

std::pair<double, double> replay_witness(const FrameworkInstance& x, const FrameworkInstance& y,
                                         std::span<const double> offset,
                                         const EquivalenceWitness& w, const SolveOptions& opts) {
    numvec ry = w.reward;
    if (!offset.empty()) {
        if (offset.size() != ry.size()) throw ShapeMismatchError("replay_witness: offset size");
        for (std::size_t i = 0; i < ry.size(); ++i) ry[i] -= offset[i];
    }
    const auto sx = solve_instance(x, w.reward, opts);
    const auto sy = solve_instance(y, ry, opts);
    return {sup_norm_distance(sx.result.value, sy.result.value),
            sx.result.policy.sup_distance(sy.result.policy)};
}

bool NestedRelationReport::all_as_expected() const {
    return std::all_of(edges.begin(), edges.end(), [](const RelationEdge& e) { return e.as_expected; });
}

NestedRelationReport counterexample_suite(const SuiteOptions& opts) {
    NestedRelationReport rep;
    rep.seed = opts.seed;
    const std::size_t trials = std::max<std::size_t>(opts.trials, 1);
    const std::size_t mc_trials = std::max<std::size_t>(std::min(opts.mc_trials, trials), 1);
    const MdpModel base = random_mdp(3, 2, opts.seed, -1.0, 1.0, 0.5);
    const MdpModel base3 = random_mdp(3, 3, opts.seed + 1, -1.0, 1.0, 0.5);
    const auto entropy = std::make_shared<EntropyRegularizer>(1.0);
    const FrameworkInstance er{base, RegularizedFramework{{entropy}}};

    EquivalenceOptions eq;
    eq.trials = trials;
    eq.seed = opts.seed;

    rep.edges.push_back(guarded("ER-EV closed form", "ER == EV", Verdict::consistent, false, [&] {
        const FrameworkInstance ev{base, StochasticFramework{mean_zero_gumbel(1.0), false}};
        return edge_from_report("ER-EV closed form", "ER == EV", Verdict::consistent,
                                check_equivalence(er, ev, {}, eq));
    }));

    rep.edges.push_back(guarded("ER-EV Monte Carlo", "ER == EV", Verdict::consistent, true, [&] {
        const FrameworkInstance ev{base, StochasticFramework{mean_zero_gumbel(1.0), true, opts.mc_samples,
                                                             opts.seed}};
        EquivalenceOptions mc = eq;
        mc.trials = mc_trials;
        auto e = edge_from_report("ER-EV Monte Carlo", "ER == EV", Verdict::consistent,
                                  check_equivalence(er, ev, {}, mc));
        e.evidence.emplace_back("samples", static_cast<double>(opts.mc_samples));
        return e;
    }));

    rep.edges.push_back(guarded("ER-standard", "ER != standard", Verdict::refuted, false, [&] {
        const FrameworkInstance st{base, StandardFramework{}};
        return edge_from_report("ER-standard", "ER != standard", Verdict::refuted,
                                check_equivalence(er, st, {}, eq));
    }));

    rep.edges.push_back(guarded("S-EV uniform fork", "S > EV", Verdict::refuted, true, [&] {
        // printed ratio pair and the simulated ratios of the fork model
        const numvec xs{0.25, 0.75};
        const numvec printed{uniform_counterexample_ratio(0.0, 0.25, 0.0),
                             uniform_counterexample_ratio(0.0, 0.75, 0.0)};
        const numvec logp{std::log(printed[0]), std::log(printed[1])};
        const auto fit_printed = softmax_ratio_fit(xs, logp, true);
        const numvec xs3{0.02, 0.3, 0.5};
        numvec loge;
        for (double x : xs3) loge.push_back(std::log(fork_uniform_ratio_exact(0.0, x, 0.0)));
        const auto fit_exact = softmax_ratio_fit(xs3, loge, true);
        const numvec w{0.0, 0.25};
        const numvec p = mc_policy(w, fork_uniform_noise(), opts.mc_samples, opts.seed, 0);
        const bool refuted = fit_printed.residual > 0.1 && fit_exact.residual > 0.1;
        auto e = make_edge("S-EV uniform fork", "S > EV", Verdict::refuted,
                           refuted ? Verdict::refuted : Verdict::consistent, false);
        e.evidence = {{"printed_ratio_x0.25", printed[0]},
                      {"printed_ratio_x0.75", printed[1]},
                      {"printed_fit_residual", fit_printed.residual},
                      {"exact_three_point_fit_residual", fit_exact.residual},
                      {"mc_ratio_x0.25", p[1] > 0.0 ? p[0] / p[1] : 0.0},
                      {"samples", static_cast<double>(opts.mc_samples)}};
        e.note = "no single temperature and reward offset reproduces the uniform-noise ratios";
        return e;
    }));

    const std::vector<std::pair<std::string, AmbiguitySet>> families{
        {"marginal distributions (exponential)",
         MarginalDistributionModel{3, {ExponentialMarginal{1.0}, ExponentialMarginal{1.0},
                                       ExponentialMarginal{1.0}}}},
        {"marginal moments", MarginalMomentModel{3, {0.5, 1.0, 1.5}}},
        {"covariance", CovarianceModel{3, {{1.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.5}}}},
    };
    for (const auto& [family, set] : families) {
        const std::string name = "R-DS " + family;
        rep.edges.push_back(guarded(name, "R == DS", Verdict::consistent, false, [&] {
            const FrameworkInstance ds{base3, DistributionalFramework{set}};
            const FrameworkInstance r{base3, RegularizedFramework{ambiguity_regularizers(set, 3)}};
            auto e = edge_from_report(name, "R == DS", Verdict::consistent, check_equivalence(ds, r, {}, eq));
            e.note += "; family: " + family;
            return e;
        }));
    }

    rep.edges.push_back(guarded("R-S complementarity", "R > S", Verdict::refuted, true, [&] {
        // pi = M (w - nu 1) in the interior for phi = -1/2 pi^T M^{-1} pi,
        // so d pi_1 / d w_2 = M_12 - (M1)_1 (M1)_2 / 1^T M 1 > 0 here. Any
        // additive-noise model has d pi_1 / d w_2 <= 0.
        const numvec cov{1.0, 0.9, 0.0, 0.9, 1.0, 0.0, 0.0, 0.0, 1.0};
        const double det = 1.0 - 0.81;
        const numvec hessian{1.0 / det, -0.9 / det, 0.0, -0.9 / det, 1.0 / det, 0.0, 0.0, 0.0, 1.0};
        const QuadraticRegularizer phi(3, hessian);
        const double h = 1e-3;
        const numvec w0{0.0, 0.0, 0.0};
        const numvec w1{0.0, h, 0.0};
        const double deriv = (numeric_conjugate(w1, phi).argmax[0] - numeric_conjugate(w0, phi).argmax[0]) / h;
        const GaussianJoint noise{3, {cov}};
        const auto p0 = mc_policy(w0, noise, opts.mc_samples, opts.seed, 0);
        const auto p1 = mc_policy(std::vector<double>{0.0, 0.1, 0.0}, noise, opts.mc_samples, opts.seed, 0);
        const bool refuted = deriv > 0.1 && p1[0] - p0[0] <= 0.0;
        auto e = make_edge("R-S complementarity", "R > S", Verdict::refuted,
                           refuted ? Verdict::refuted : Verdict::consistent, false);
        e.evidence = {{"regularized_dpi1_dw2", deriv},
                      {"gaussian_noise_pi1_change", p1[0] - p0[0]},
                      {"samples", static_cast<double>(opts.mc_samples)}};
        e.note = "quadratic regularizer makes actions 1 and 2 complements; noise models only produce substitutes";
        return e;
    }));

    rep.edges.push_back(guarded("CT-ER interior sweep", "ER !< CT", Verdict::refuted, false, [&] {
        const auto w = er_interior_sweep_witness();
        auto e = make_edge("CT-ER interior sweep", "ER !< CT", Verdict::refuted,
                           w.holds ? Verdict::refuted : Verdict::consistent, false);
        e.evidence = {{"settings", static_cast<double>(w.reward_gaps.size())},
                      {"distinct_interior_probabilities", static_cast<double>(w.distinct)},
                      {"constrained_is_deterministic", w.constrained_is_deterministic ? 1.0 : 0.0}};
        e.note = "entropy policies fill the simplex interior; a constraint set covering them is the full simplex";
        const auto full = ct_backup_operator({FullSimplex{}});
        for (std::size_t k = 0; k < w.reward_gaps.size(); ++k) {
            const double q = value_iteration(fork_model(0.0, w.reward_gaps[k]), full).policy(0, 0);
            rep.sweep_curve.push_back({w.reward_gaps[k], w.probabilities[k], q});
        }
        return e;
    }));

    rep.edges.push_back(guarded("CT-R singleton", "CT !< R", Verdict::refuted, false, [&] {
        const auto w = singleton_witness(EntropyRegularizer(1.0));
        auto e = make_edge("CT-R singleton", "CT !< R", Verdict::refuted,
                           w.holds ? Verdict::refuted : Verdict::consistent, false);
        e.evidence = {{"policy_constant", w.policy_constant ? 1.0 : 0.0},
                      {"value_varies", w.value_varies ? 1.0 : 0.0},
                      {"phi_lower", w.phi_lower},
                      {"phi_upper", w.phi_upper},
                      {"breaking_reward", w.breaking_reward},
                      {"regularized_p1", w.regularized_p1}};
        e.note = "a singleton constraint fixes the policy for every reward; a bounded regularizer moves it";
        return e;
    }));

    for (int k = 1; k < 40; ++k) {
        const double x = k / 40.0;
        const double printed = uniform_counterexample_ratio(0.0, x, 0.0);
        const double exact = fork_uniform_ratio_exact(0.0, x, 0.0);
        rep.ratio_curve.push_back({x, printed, exact});
    }
    return rep;
}

}  // namespace unimdp
