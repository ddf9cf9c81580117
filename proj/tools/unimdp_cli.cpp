// unimdp: solve, compare and convert MDP framework models from JSON files,
// and regenerate the nested-relation report.
//
// Exit codes: 0 success, 2 invalid input, 3 shape mismatch, 4 conversion
// precondition, 5 non-convergence, 1 anything else. Errors are printed to
// stderr as one JSON object.

#include "unimdp/io.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace unimdp;
namespace fs = std::filesystem;

namespace {

struct Config {
    double tol = 1e-10;
    std::size_t max_iter = 100000;
    std::size_t mc_samples = 100000;
    std::uint64_t seed = 0;
    std::size_t trials = 50;
    std::string out;
    bool timings = false;
};

json config_json(const Config& c) {
    return {{"tol", c.tol}, {"max_iter", c.max_iter}, {"mc_samples", c.mc_samples},
            {"seed", c.seed}, {"trials", c.trials}};
}

SolveOptions solve_options(const Config& c) {
    SolveOptions o;
    o.tol = c.tol;
    o.max_iter = c.max_iter;
    return o;
}

void check_config(const Config& c) {
    if (!(c.tol > 0.0)) throw ValidationError("--tol must be positive", {"--tol must be positive"});
    if (c.max_iter == 0) throw ValidationError("--max-iter must be positive", {"--max-iter must be positive"});
    if (c.mc_samples < 100)
        throw ValidationError("--mc-samples must be at least 100", {"--mc-samples must be at least 100"});
    if (c.trials == 0) throw ValidationError("--trials must be positive", {"--trials must be positive"});
    if (c.out.empty()) return;
    std::error_code ec;
    fs::create_directories(c.out, ec);
    const fs::path probe = fs::path(c.out) / ".write_check";
    std::ofstream f(probe);
    if (!f) throw ValidationError("output directory is not writable: " + c.out, {"--out not writable"});
    f.close();
    fs::remove(probe, ec);
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

// The JSON report goes to <out>/<stem>.json and each CSV to <out>/<stem>_<name>.csv;
// without --out only the JSON is printed.
void emit(const Config& c, const std::string& stem, const json& report,
          const std::vector<std::pair<std::string, std::string>>& csvs) {
    const std::string text = report.dump(2) + "\n";
    if (c.out.empty()) {
        std::cout << text;
        return;
    }
    write_file(fs::path(c.out) / (stem + ".json"), text);
    for (const auto& [name, body] : csvs) write_file(fs::path(c.out) / (stem + "_" + name + ".csv"), body);
}

json policy_json(const Policy& p) {
    json rows = json::array();
    for (std::size_t s = 0; s < p.num_states(); ++s) {
        auto r = p.row(s);
        rows.push_back(numvec(r.begin(), r.end()));
    }
    return rows;
}

std::string value_csv(const ValueFunction& v) {
    std::ostringstream o;
    o << "state,value\n";
    for (std::size_t s = 0; s < v.size(); ++s) o << s << "," << format_double(v[s]) << "\n";
    return o.str();
}

std::string policy_csv(const Policy& p) {
    std::ostringstream o;
    o << "state,action,probability\n";
    for (std::size_t s = 0; s < p.num_states(); ++s)
        for (std::size_t a = 0; a < p.num_actions(); ++a) o << s << "," << a << "," << format_double(p(s, a)) << "\n";
    return o.str();
}

json discrepancy_json(const DualDiscrepancy& d) {
    return {{"exact", d.exact}, {"printed_dual", d.printed_dual}, {"corrected_dual", d.corrected_dual},
            {"difference", d.difference}};
}

// Closed dual expressions next to the exact backup at the fixed point, for
// every state constrained by an L1 or chi-square ball.
json dual_notes(const FrameworkInstance& x, const ValueFunction& v) {
    json notes = json::array();
    const auto* ct = std::get_if<ConstrainedFramework>(&x.framework);
    if (!ct) return notes;
    for (std::size_t s = 0; s < x.model.num_states(); ++s) {
        const auto& set = ct->sets.size() == 1 ? ct->sets[0] : ct->sets[s];
        const auto w = q_vector(x.model, v, s);
        if (const auto* b = std::get_if<L1Ball>(&set))
            notes.push_back({{"state", s}, {"set", "l1_ball"}, {"dual", discrepancy_json(l1_dual_report(w, b->reference, b->radius))}});
        if (const auto* b = std::get_if<L2ChiSquareBall>(&set))
            notes.push_back({{"state", s}, {"set", "l2_ball"}, {"dual", discrepancy_json(l2_dual_report(w, b->reference, b->radius))}});
    }
    return notes;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

McConfig mc_config(const Config& c) { return {c.mc_samples, c.seed}; }

int cmd_solve(const std::string& file, const Config& c) {
    const auto loaded = load_model(file, mc_config(c));
    const auto& x = loaded.instance;
    const auto t0 = std::chrono::steady_clock::now();
    const auto sol = solve_instance(x, x.model.rewards(), solve_options(c));
    const double elapsed = seconds_since(t0);

    json report;
    report["command"] = "solve";
    report["config"] = config_json(c);
    report["model"] = file;
    report["framework"] = framework_name(x.framework);
    report["value"] = sol.result.value;
    report["policy"] = policy_json(sol.result.policy);
    report["iterations"] = sol.result.iterations;
    report["residual"] = sol.result.residual;
    if (is_monte_carlo(x.framework)) report["value_std_error"] = sol.value_error;
    const auto notes = dual_notes(x, sol.result.value);
    if (!notes.empty()) report["dual_discrepancies"] = notes;
    if (c.timings) report["timings"] = {{"solve_seconds", elapsed}};
    emit(c, "solve", report, {{"values", value_csv(sol.result.value)}, {"policy", policy_csv(sol.result.policy)}});
    return 0;
}

numvec read_offset(const std::string& file, const MdpModel& m) {
    if (file.empty()) return {};
    json j = read_json(file);
    if (j.is_object() && j.contains("offset")) j = j["offset"];
    numvec out;
    const auto bad = [&] {
        throw ShapeMismatchError("offset must be a " + std::to_string(m.num_states()) + " x " +
                                 std::to_string(m.num_actions()) + " matrix");
    };
    if (!j.is_array() || j.size() != m.num_states()) bad();
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != m.num_actions()) bad();
        for (const auto& v : row) {
            if (!v.is_number()) bad();
            out.push_back(v.get<double>());
        }
    }
    return out;
}

json report_json(const EquivalenceReport& r, std::size_t nA) {
    json j;
    j["framework_x"] = r.framework_x;
    j["framework_y"] = r.framework_y;
    j["trials"] = r.trials;
    j["seed"] = r.seed;
    j["tol"] = r.tol;
    j["monte_carlo"] = r.monte_carlo;
    j["verdict"] = verdict_name(r.verdict);
    j["summary"] = r.summary;
    json offset = json::array();
    for (std::size_t i = 0; i < r.offset.size(); i += nA)
        offset.push_back(numvec(r.offset.begin() + static_cast<std::ptrdiff_t>(i),
                                r.offset.begin() + static_cast<std::ptrdiff_t>(i + nA)));
    j["offset"] = offset;
    double vmax = 0.0, pmax = 0.0;
    for (const auto& g : r.gaps) {
        vmax = std::max(vmax, g.value_gap);
        pmax = std::max(pmax, g.policy_gap);
    }
    j["max_value_gap"] = vmax;
    j["max_policy_gap"] = pmax;
    if (r.witness) {
        const auto& w = *r.witness;
        json reward = json::array();
        for (std::size_t i = 0; i < w.reward.size(); i += nA)
            reward.push_back(numvec(w.reward.begin() + static_cast<std::ptrdiff_t>(i),
                                    w.reward.begin() + static_cast<std::ptrdiff_t>(i + nA)));
        j["witness"] = {{"trial", w.trial},
                        {"reward", reward},
                        {"value_x", w.value_x},
                        {"value_y", w.value_y},
                        {"policy_x", policy_json(w.policy_x)},
                        {"policy_y", policy_json(w.policy_y)},
                        {"value_gap", w.value_gap},
                        {"policy_gap", w.policy_gap}};
    }
    return j;
}

std::string trials_csv(const EquivalenceReport& r) {
    std::ostringstream o;
    o << "trial,value_gap,policy_gap,value_allowed,policy_allowed\n";
    for (std::size_t t = 0; t < r.gaps.size(); ++t) {
        const auto& g = r.gaps[t];
        o << t << "," << format_double(g.value_gap) << "," << format_double(g.policy_gap) << ","
          << format_double(g.value_allowed) << "," << format_double(g.policy_allowed) << "\n";
    }
    return o.str();
}

int cmd_compare(const std::string& fx, const std::string& fy, const std::string& foffset, double eq_tol,
                const Config& c) {
    const auto x = load_model(fx, mc_config(c));
    const auto y = load_model(fy, mc_config(c));
    if (!x.instance.model.same_tuple(y.instance.model))
        throw ShapeMismatchError("compare: the models do not share (S, A, q, gamma)");
    const numvec offset = read_offset(foffset, x.instance.model);
    EquivalenceOptions opts;
    opts.trials = c.trials;
    opts.seed = c.seed;
    opts.tol = eq_tol;
    opts.solve = solve_options(c);
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = check_equivalence(x.instance, y.instance, offset, opts);
    json j;
    j["command"] = "compare";
    j["config"] = config_json(c);
    j["model_x"] = fx;
    j["model_y"] = fy;
    j["report"] = report_json(rep, x.instance.model.num_actions());
    if (c.timings) j["timings"] = {{"compare_seconds", seconds_since(t0)}};
    emit(c, "compare", j, {{"trials", trials_csv(rep)}});
    return 0;
}

int cmd_figure1(const Config& c) {
    SuiteOptions opts;
    opts.seed = c.seed;
    opts.trials = c.trials;
    opts.mc_samples = c.mc_samples;
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = counterexample_suite(opts);
    json edges = json::array();
    for (const auto& e : rep.edges) {
        json ev_list = json::array();
        for (const auto& [k, v] : e.evidence) ev_list.push_back({{"name", k}, {"value", v == 0.0 ? 0.0 : v}});
        edges.push_back({{"name", e.name},
                         {"relation", e.relation},
                         {"expected", verdict_name(e.expected)},
                         {"actual", verdict_name(e.actual)},
                         {"as_expected", e.as_expected},
                         {"monte_carlo", e.monte_carlo},
                         {"trials", e.trials},
                         {"evidence", ev_list},
                         {"note", e.note}});
    }
    json j;
    j["command"] = "figure1";
    j["config"] = config_json(c);
    j["edges"] = edges;
    j["all_as_expected"] = rep.all_as_expected();
    if (c.timings) j["timings"] = {{"suite_seconds", seconds_since(t0)}};

    std::ostringstream ratio, sweep;
    ratio << "x,printed_ratio,simulated_ratio\n";
    for (const auto& p : rep.ratio_curve)
        ratio << format_double(p.x) << "," << format_double(p.y1) << "," << format_double(p.y2) << "\n";
    sweep << "reward_gap,entropy_p1,constrained_p1\n";
    for (const auto& p : rep.sweep_curve)
        sweep << format_double(p.x) << "," << format_double(p.y1) << "," << format_double(p.y2) << "\n";
    emit(c, "figure1", j, {{"ratio", ratio.str()}, {"sweep", sweep.str()}});
    return rep.all_as_expected() ? 0 : 1;
}

// Regularizer block of one state in the source file.
json source_block(const json& block, std::size_t s) { return block.is_array() ? block[s] : block; }

json constraint_json(const ConstraintSet& set, const json& source_regularizer) {
    return std::visit(
        [&](const auto& c) -> json {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, KlBall>)
                return {{"kind", "kl_ball"}, {"reference", c.reference}, {"radius", c.radius}};
            else if constexpr (std::is_same_v<T, L1Ball>)
                return {{"kind", "l1_ball"}, {"reference", c.reference}, {"radius", c.radius}};
            else if constexpr (std::is_same_v<T, L2ChiSquareBall>)
                return {{"kind", "l2_ball"}, {"reference", c.reference}, {"radius", c.radius}};
            else if constexpr (std::is_same_v<T, Singleton>)
                return {{"kind", "singleton"}, {"row", c.row}};
            else if constexpr (std::is_same_v<T, FullSimplex>)
                return {{"kind", "full"}};
            else
                return {{"kind", "level_set"}, {"regularizer", source_regularizer}, {"level", c.level}};
        },
        set);
}

// phi_s = -lambda (l_s - c_s) as a regularizer block.
json lagrange_regularizer_json(const ConstraintSet& set, double lambda, const json& source_constraint) {
    if (lambda == 0.0) return {{"kind", "zero"}};
    if (const auto* b = std::get_if<KlBall>(&set))
        return {{"kind", "scaled"},
                {"scale", lambda},
                {"offset", lambda * b->radius},
                {"base", {{"kind", "kl"}, {"eta", 1.0}, {"reference", b->reference}}}};
    if (const auto* b = std::get_if<L2ChiSquareBall>(&set))
        return {{"kind", "scaled"},
                {"scale", lambda},
                {"offset", lambda * b->radius},
                {"base", {{"kind", "chi_square"}, {"reference", b->reference}}}};
    if (const auto* b = std::get_if<LevelSet>(&set))
        return {{"kind", "scaled"},
                {"scale", lambda},
                {"offset", lambda * b->level},
                {"base", source_constraint.at("regularizer")}};
    return {{"kind", "zero"}};  // full simplex: the constraint never binds
}

int cmd_convert(const std::string& file, const std::string& direction, const Config& c) {
    const auto loaded = load_model(file, mc_config(c));
    const auto& x = loaded.instance;
    const std::size_t nS = x.model.num_states();
    const auto solve = solve_options(c);
    json out;
    json verification;
    if (direction == "r2ct") {
        const auto* reg = std::get_if<RegularizedFramework>(&x.framework);
        if (!reg) throw ConversionError("r2ct needs a model with a regularizer block");
        const auto conv = r_to_ct_convert(x.model, reg->phi, solve);
        out = model_to_json(conv.model);
        json sets = json::array();
        for (std::size_t s = 0; s < nS; ++s)
            sets.push_back(constraint_json(conv.sets[s], source_block(loaded.source["regularizer"], s)));
        out["constraint"] = sets;
        const auto ct = value_iteration(conv.model, ct_backup_operator(conv.sets), solve);
        verification = {{"levels", conv.levels},
                        {"policy_gap", ct.policy.sup_distance(conv.regularized.policy)}};
    } else {
        const auto* ct = std::get_if<ConstrainedFramework>(&x.framework);
        if (!ct) throw ConversionError("ct2r needs a model with a constraint block");
        const auto conv = ct_to_r_convert(x.model, ct->sets, solve);
        out = model_to_json(x.model);
        json regs = json::array();
        for (std::size_t s = 0; s < nS; ++s) {
            const auto& set = ct->sets.size() == 1 ? ct->sets[0] : ct->sets[s];
            regs.push_back(lagrange_regularizer_json(set, conv.multipliers[s],
                                                     source_block(loaded.source["constraint"], s)));
        }
        out["regularizer"] = regs;
        const auto r = value_iteration(x.model, regularized_backup_operator(conv.regularizers), solve);
        double slack = 0.0;
        for (double v : conv.slackness) slack = std::max(slack, v);
        verification = {{"multipliers", conv.multipliers},
                        {"policy_gap", r.policy.sup_distance(conv.constrained.policy)},
                        {"value_gap", sup_norm_distance(r.value, conv.constrained.value)},
                        {"max_slackness", slack}};
    }
    json j;
    j["command"] = "convert";
    j["direction"] = direction;
    j["config"] = config_json(c);
    j["model"] = file;
    j["verification"] = verification;
    if (c.out.empty()) {
        j["converted"] = out;
        std::cout << j.dump(2) << "\n";
    } else {
        write_file(fs::path(c.out) / "converted.json", out.dump(2) + "\n");
        write_file(fs::path(c.out) / "convert.json", j.dump(2) + "\n");
    }
    return 0;
}

int cmd_gen(std::size_t states, std::size_t actions, double discount, double lo, double hi, const Config& c) {
    const auto m = random_mdp(states, actions, c.seed, lo, hi, discount);
    const std::string text = model_to_json(m).dump(2) + "\n";
    if (c.out.empty())
        std::cout << text;
    else
        write_file(fs::path(c.out) / "model.json", text);
    return 0;
}

int report_error(const std::string& kind, const std::string& message, int code, json extra = json::object()) {
    json e = {{"error", kind}, {"message", message}, {"exit_code", code}};
    for (auto& [k, v] : extra.items()) e[k] = v;
    std::cerr << e.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unimdp: solve and compare MDP framework models"};
    app.require_subcommand(1);
    Config c;
    const auto common = [&](CLI::App* sub) {
        sub->add_option("--tol", c.tol, "value iteration tolerance (sup norm)")->envname("UNIMDP_TOL");
        sub->add_option("--max-iter", c.max_iter, "value iteration sweep budget")->envname("UNIMDP_MAX_ITER");
        sub->add_option("--mc-samples", c.mc_samples, "Monte Carlo samples per state")->envname("UNIMDP_MC_SAMPLES");
        sub->add_option("--seed", c.seed, "random seed")->envname("UNIMDP_SEED");
        sub->add_option("--trials", c.trials, "randomized reward trials")->envname("UNIMDP_TRIALS");
        sub->add_option("--out", c.out, "output directory (stdout when omitted)")->envname("UNIMDP_OUT");
        sub->add_flag("--timings", c.timings, "include wall-clock timings in reports");
    };

    std::string model_file, other_file, offset_file, direction = "r2ct";
    double eq_tol = 1e-6;
    std::size_t states = 5, actions = 3;
    double discount = 0.9, lo = -1.0, hi = 1.0;

    auto* solve = app.add_subcommand("solve", "solve one model file");
    common(solve);
    solve->add_option("model", model_file, "model file")->required();

    auto* compare = app.add_subcommand("compare", "randomized equivalence check of two model files");
    common(compare);
    compare->add_option("model_x", model_file, "first model file")->required();
    compare->add_option("model_y", other_file, "second model file")->required();
    compare->add_option("--offset", offset_file, "JSON file with the reward offset matrix");
    compare->add_option("--equivalence-tol", eq_tol, "allowed value/policy gap for exact paths");

    auto* figure1 = app.add_subcommand("figure1", "run the confirmation and counterexample suite");
    common(figure1);

    auto* convert = app.add_subcommand("convert", "convert between regularized and constrained models");
    common(convert);
    convert->add_option("model", model_file, "model file")->required();
    convert->add_option("--direction", direction, "r2ct or ct2r")->check(CLI::IsMember({"r2ct", "ct2r"}));

    auto* gen = app.add_subcommand("gen", "write a random model file");
    common(gen);
    gen->add_option("--states", states)->check(CLI::PositiveNumber);
    gen->add_option("--actions", actions)->check(CLI::PositiveNumber);
    gen->add_option("--discount", discount);
    gen->add_option("--lo", lo);
    gen->add_option("--hi", hi);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", e.what(), 2);
    }

    try {
        check_config(c);
        if (*solve) return cmd_solve(model_file, c);
        if (*compare) return cmd_compare(model_file, other_file, offset_file, eq_tol, c);
        if (*figure1) return cmd_figure1(c);
        if (*convert) return cmd_convert(model_file, direction, c);
        if (*gen) return cmd_gen(states, actions, discount, lo, hi, c);
    } catch (const ValidationError& e) {
        return report_error("validation", e.what(), 2, {{"issues", e.issues()}});
    } catch (const ShapeMismatchError& e) {
        return report_error("shape_mismatch", e.what(), 3);
    } catch (const ConversionError& e) {
        return report_error("conversion_precondition", e.what(), 4);
    } catch (const ConvergenceError& e) {
        return report_error("non_convergence", e.what(), 5,
                            {{"residual", e.residual()}, {"iterations", e.iterations()}});
    } catch (const std::invalid_argument& e) {
        return report_error("validation", e.what(), 2);
    } catch (const std::exception& e) {
        return report_error("internal", e.what(), 1);
    }
    return 1;
}
