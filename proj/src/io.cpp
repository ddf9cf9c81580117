#include "unimdp/io.hpp"

#include <cstdio>
#include <fstream>

namespace unimdp {

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : "; ") + s;
    return out;
}

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg, {msg}); }

double number(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) fail(where + ": missing \"" + key + "\"");
    if (!j[key].is_number()) fail(where + ": \"" + key + "\" must be a number");
    return j[key].get<double>();
}

double number_or(const json& j, const char* key, double fallback, const std::string& where) {
    return j.contains(key) ? number(j, key, where) : fallback;
}

numvec vector_of(const json& j, const std::string& where) {
    if (!j.is_array()) fail(where + " must be an array");
    numvec out;
    for (const auto& v : j) {
        if (!v.is_number()) fail(where + " must contain only numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

numvec vector_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) fail(where + ": missing \"" + key + "\"");
    return vector_of(j[key], where + "." + key);
}

numvec sized_vector(const json& j, const char* key, std::size_t n, const std::string& where) {
    numvec v = vector_field(j, key, where);
    if (v.size() != n)
        fail(where + "." + key + " must have " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
    return v;
}

// n x n matrix given nested or flat, returned row-major.
numvec matrix_of(const json& j, std::size_t n, const std::string& where) {
    if (!j.is_array()) fail(where + " must be an array");
    numvec out;
    if (!j.empty() && j[0].is_array()) {
        if (j.size() != n) fail(where + " must have " + std::to_string(n) + " rows");
        for (std::size_t r = 0; r < n; ++r) {
            numvec row = vector_of(j[r], where);
            if (row.size() != n) fail(where + " rows must have " + std::to_string(n) + " entries");
            out.insert(out.end(), row.begin(), row.end());
        }
    } else {
        out = vector_of(j, where);
        if (out.size() != n * n) fail(where + " must have " + std::to_string(n * n) + " entries");
    }
    return out;
}

std::string kind_of(const json& j, const std::string& where) {
    if (!j.is_object()) fail(where + " must be an object");
    if (!j.contains("kind") || !j["kind"].is_string()) fail(where + ": missing string \"kind\"");
    return j["kind"].get<std::string>();
}

// One object broadcast, or an array with one object per state.
template <class T, class F>
std::vector<T> per_state(const json& j, std::size_t num_states, const std::string& where, F parse) {
    std::vector<T> out;
    if (j.is_array()) {
        if (j.size() != num_states)
            fail(where + " array must have one entry per state (" + std::to_string(num_states) + ")");
        for (std::size_t s = 0; s < j.size(); ++s) out.push_back(parse(j[s], where + "[" + std::to_string(s) + "]"));
    } else {
        out.push_back(parse(j, where));
    }
    return out;
}

Marginal parse_marginal(const json& j, const std::string& where) {
    const std::string family = j.contains("family") ? j["family"].get<std::string>() : "exponential";
    if (family == "exponential") return ExponentialMarginal{number_or(j, "rate", 1.0, where)};
    if (family == "uniform") return UniformMarginal{number(j, "lo", where), number(j, "hi", where)};
    if (family == "gumbel")
        return GumbelMarginal{number_or(j, "scale", 1.0, where), number_or(j, "location", 0.0, where)};
    if (family == "tabulated") return TabulatedMarginal{vector_field(j, "t", where), vector_field(j, "x", where)};
    fail(where + ": unknown marginal family \"" + family + "\"");
}

template <class F>
auto rethrow_as_validation(const std::string& where, F f) -> decltype(f()) {
    try {
        return f();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        fail(where + ": " + e.what());
    }
}

}  // namespace

ValidationError::ValidationError(const std::string& what, std::vector<std::string> issues)
    : std::invalid_argument(what), issues_(std::move(issues)) {}

std::string format_double(double x) {
    if (x == 0.0) x = 0.0;  // no "-0"
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

RegularizerPtr parse_regularizer(const json& j, std::size_t nA) {
    const std::string where = "regularizer";
    const std::string kind = kind_of(j, where);
    return rethrow_as_validation(where, [&]() -> RegularizerPtr {
        if (kind == "zero") return std::make_shared<ZeroRegularizer>();
        if (kind == "entropy") return std::make_shared<EntropyRegularizer>(number_or(j, "eta", 1.0, where));
        if (kind == "kl")
            return std::make_shared<KlRegularizer>(number_or(j, "eta", 1.0, where),
                                                   sized_vector(j, "reference", nA, where));
        if (kind == "chi_square") {
            RegularizerPtr base = std::make_shared<ChiSquareRegularizer>(sized_vector(j, "reference", nA, where));
            const double eta = number_or(j, "eta", 1.0, where);
            return eta == 1.0 ? base : std::make_shared<ScaledRegularizer>(base, eta);
        }
        if (kind == "quadratic") {
            if (!j.contains("hessian")) fail(where + ": missing \"hessian\"");
            return std::make_shared<QuadraticRegularizer>(nA, matrix_of(j["hessian"], nA, where + ".hessian"));
        }
        if (kind == "mmm") return std::make_shared<MmmRegularizer>(sized_vector(j, "sigma", nA, where));
        if (kind == "covariance") {
            if (!j.contains("matrix")) fail(where + ": missing \"matrix\"");
            return std::make_shared<CovarianceRegularizer>(nA, matrix_of(j["matrix"], nA, where + ".matrix"));
        }
        if (kind == "scaled") {
            if (!j.contains("base")) fail(where + ": missing \"base\"");
            return std::make_shared<ScaledRegularizer>(parse_regularizer(j["base"], nA),
                                                       number(j, "scale", where),
                                                       number_or(j, "offset", 0.0, where));
        }
        fail(where + ": unknown kind \"" + kind + "\"");
    });
}

ConstraintSet parse_constraint(const json& j, std::size_t nA) {
    const std::string where = "constraint";
    const std::string kind = kind_of(j, where);
    ConstraintSet set = [&]() -> ConstraintSet {
        if (kind == "kl_ball") return KlBall{sized_vector(j, "reference", nA, where), number(j, "radius", where)};
        if (kind == "l1_ball") return L1Ball{sized_vector(j, "reference", nA, where), number(j, "radius", where)};
        if (kind == "l2_ball")
            return L2ChiSquareBall{sized_vector(j, "reference", nA, where), number(j, "radius", where)};
        if (kind == "singleton") return Singleton{sized_vector(j, "row", nA, where)};
        if (kind == "full") return FullSimplex{};
        if (kind == "level_set") {
            if (!j.contains("regularizer")) fail(where + ": missing \"regularizer\"");
            return LevelSet{parse_regularizer(j["regularizer"], nA), number(j, "level", where)};
        }
        fail(where + ": unknown kind \"" + kind + "\"");
    }();
    rethrow_as_validation(where, [&] {
        validate_constraint(set, nA);
        return 0;
    });
    return set;
}

NoiseModel parse_noise(const json& j, std::size_t nS, std::size_t nA) {
    const std::string where = "noise";
    const std::string kind = kind_of(j, where);
    NoiseModel noise = [&]() -> NoiseModel {
        if (kind == "gumbel_iid") {
            const double eta = number_or(j, "eta", 1.0, where);
            return GumbelIid{eta, number_or(j, "location", -eta * kEulerGamma, where)};
        }
        if (kind == "uniform") {
            if (!j.contains("bounds") || !j["bounds"].is_array()) fail(where + ": missing array \"bounds\"");
            const auto& b = j["bounds"];
            if (b.size() != nA && b.size() != nS * nA)
                fail(where + ".bounds must have |A| or |S||A| [lo, hi] pairs");
            UniformPerEntry u{nA, {}, {}};
            for (const auto& pair : b) {
                numvec p = vector_of(pair, where + ".bounds");
                if (p.size() != 2) fail(where + ".bounds entries must be [lo, hi]");
                u.lo.push_back(p[0]);
                u.hi.push_back(p[1]);
            }
            return u;
        }
        if (kind == "gaussian") {
            if (!j.contains("cov") || !j["cov"].is_array() || j["cov"].empty())
                fail(where + ": missing array \"cov\"");
            const auto& c = j["cov"];
            // a single nested matrix or a list of per-state matrices
            const bool single = c[0].is_array() && !c[0].empty() && c[0][0].is_number() && c.size() == nA &&
                                c[0].size() == nA;
            GaussianJoint g{nA, {}};
            if (single) {
                g.cov.push_back(matrix_of(c, nA, where + ".cov"));
            } else {
                if (c.size() != 1 && c.size() != nS) fail(where + ".cov must hold 1 or |S| matrices");
                for (const auto& m : c) g.cov.push_back(matrix_of(m, nA, where + ".cov"));
            }
            return g;
        }
        fail(where + ": unknown kind \"" + kind + "\"");
    }();
    rethrow_as_validation(where, [&] { return NoiseSampler(noise, nA).num_actions(); });
    return noise;
}

AmbiguitySet parse_ambiguity(const json& j, std::size_t nS, std::size_t nA) {
    const std::string where = "ambiguity";
    const std::string kind = kind_of(j, where);
    AmbiguitySet set = [&]() -> AmbiguitySet {
        if (kind == "mdm") {
            MarginalDistributionModel m{nA, {}};
            if (j.contains("marginals")) {
                const auto& ms = j["marginals"];
                if (!ms.is_array() || (ms.size() != nA && ms.size() != nS * nA))
                    fail(where + ".marginals must have |A| or |S||A| entries");
                for (const auto& e : ms) m.marginals.push_back(parse_marginal(e, where + ".marginals"));
            } else {
                m.marginals.assign(nA, parse_marginal(j, where));
            }
            return m;
        }
        if (kind == "mmm") {
            numvec sigma = vector_field(j, "sigma", where);
            if (sigma.size() != nA && sigma.size() != nS * nA) fail(where + ".sigma must have |A| or |S||A| entries");
            return MarginalMomentModel{nA, sigma};
        }
        if (kind == "covariance") {
            if (!j.contains("matrices") || !j["matrices"].is_array()) fail(where + ": missing array \"matrices\"");
            const auto& ms = j["matrices"];
            if (ms.size() != 1 && ms.size() != nS) fail(where + ".matrices must hold 1 or |S| matrices");
            CovarianceModel c{nA, {}};
            for (const auto& m : ms) c.matrices.push_back(matrix_of(m, nA, where + ".matrices"));
            return c;
        }
        fail(where + ": unknown kind \"" + kind + "\"");
    }();
    rethrow_as_validation(where, [&] {
        validate_ambiguity(set);
        return 0;
    });
    return set;
}

LoadedModel parse_model(const json& j, const McConfig& mc) {
    if (!j.is_object()) fail("model file must hold a JSON object");
    std::vector<std::string> issues;
    auto count = [&](const char* key) -> std::size_t {
        if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() <= 0) {
            issues.push_back(std::string("\"") + key + "\" must be a positive integer");
            return 0;
        }
        return j[key].get<std::size_t>();
    };
    const std::size_t nS = count("num_states");
    const std::size_t nA = count("num_actions");
    double gamma = 0.0;
    if (!j.contains("discount") || !j["discount"].is_number())
        issues.push_back("\"discount\" must be a number");
    else
        gamma = j["discount"].get<double>();
    if (!issues.empty()) throw ValidationError(join(issues), issues);

    numvec reward(nS * nA, 0.0), transition(nS * nA * nS, 0.0);
    const auto& r = j.contains("reward") ? j["reward"] : json();
    if (!r.is_array() || r.size() != nS) {
        issues.push_back("\"reward\" must have one row per state");
    } else {
        for (std::size_t s = 0; s < nS; ++s) {
            if (!r[s].is_array() || r[s].size() != nA) {
                issues.push_back("reward[" + std::to_string(s) + "] must have num_actions entries");
                continue;
            }
            for (std::size_t a = 0; a < nA; ++a) {
                if (!r[s][a].is_number())
                    issues.push_back("reward[" + std::to_string(s) + "][" + std::to_string(a) + "] is not a number");
                else
                    reward[s * nA + a] = r[s][a].get<double>();
            }
        }
    }
    const auto& q = j.contains("transition") ? j["transition"] : json();
    if (!q.is_array() || q.size() != nS) {
        issues.push_back("\"transition\" must have one block per state");
    } else {
        for (std::size_t s = 0; s < nS; ++s) {
            if (!q[s].is_array() || q[s].size() != nA) {
                issues.push_back("transition[" + std::to_string(s) + "] must have num_actions rows");
                continue;
            }
            for (std::size_t a = 0; a < nA; ++a) {
                const auto& row = q[s][a];
                const std::string at = "transition[" + std::to_string(s) + "][" + std::to_string(a) + "]";
                if (!row.is_array() || row.size() != nS) {
                    issues.push_back(at + " must have num_states entries");
                    continue;
                }
                for (std::size_t t = 0; t < nS; ++t) {
                    if (!row[t].is_number())
                        issues.push_back(at + "[" + std::to_string(t) + "] is not a number");
                    else
                        transition[(s * nA + a) * nS + t] = row[t].get<double>();
                }
            }
        }
    }
    if (!issues.empty()) throw ValidationError(join(issues), issues);

    MdpModel model(nS, nA, std::move(transition), std::move(reward), gamma);
    for (const auto& v : validate_model(model))
        issues.push_back("state " + std::to_string(v.state) + " action " + std::to_string(v.action) + ": " + v.rule);

    Framework framework = StandardFramework{};
    int blocks = 0;
    try {
        if (j.contains("regularizer")) {
            ++blocks;
            framework = RegularizedFramework{per_state<RegularizerPtr>(
                j["regularizer"], nS, "regularizer", [&](const json& e, const std::string&) {
                    return parse_regularizer(e, nA);
                })};
        }
        if (j.contains("noise")) {
            ++blocks;
            const auto& n = j["noise"];
            const bool closed = kind_of(n, "noise") == "gumbel_iid" && !n.value("monte_carlo", false);
            framework = StochasticFramework{parse_noise(n, nS, nA), !closed, mc.samples, mc.seed};
        }
        if (j.contains("ambiguity")) {
            ++blocks;
            framework = DistributionalFramework{parse_ambiguity(j["ambiguity"], nS, nA)};
        }
        if (j.contains("constraint")) {
            ++blocks;
            framework = ConstrainedFramework{per_state<ConstraintSet>(
                j["constraint"], nS, "constraint",
                [&](const json& e, const std::string&) { return parse_constraint(e, nA); })};
        }
    } catch (const ValidationError& e) {
        issues.insert(issues.end(), e.issues().begin(), e.issues().end());
    } catch (const json::exception& e) {
        issues.push_back(std::string("framework block: ") + e.what());
    }
    if (blocks > 1) issues.push_back("at most one of regularizer, noise, ambiguity, constraint may be given");
    if (!issues.empty()) throw ValidationError(join(issues), issues);
    return {FrameworkInstance{std::move(model), std::move(framework)}, j};
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        fail(path.string() + ": " + e.what());
    }
}

LoadedModel load_model(const std::filesystem::path& path, const McConfig& mc) {
    return parse_model(read_json(path), mc);
}

json model_to_json(const MdpModel& m) {
    const std::size_t nS = m.num_states(), nA = m.num_actions();
    json reward = json::array(), transition = json::array();
    for (std::size_t s = 0; s < nS; ++s) {
        json rr = json::array(), qs = json::array();
        for (std::size_t a = 0; a < nA; ++a) {
            rr.push_back(m.reward(s, a));
            auto row = m.transition_row(s, a);
            qs.push_back(json(numvec(row.begin(), row.end())));
        }
        reward.push_back(rr);
        transition.push_back(qs);
    }
    json j;
    j["num_states"] = nS;
    j["num_actions"] = nA;
    j["discount"] = m.discount();
    j["reward"] = reward;
    j["transition"] = transition;
    return j;
}

}  // namespace unimdp
