#include "doctest.h"

#include "unimdp/io.hpp"

#include <cstdlib>

using namespace unimdp;

namespace {

json two_state() {
    return json::parse(R"({
        "num_states": 2, "num_actions": 2, "discount": 0.9,
        "reward": [[1.0, 0.0], [0.0, 0.5]],
        "transition": [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.0, 1.0]]]
    })");
}

std::vector<std::string> issues_of(const json& j) {
    try {
        parse_model(j);
    } catch (const ValidationError& e) {
        return e.issues();
    }
    return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
    for (const auto& s : issues)
        if (s.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_CASE("model round trip") {
    const auto m = random_mdp(3, 2, 4);
    const auto back = parse_model(model_to_json(m)).instance.model;
    CHECK(back.same_tuple(m));
    CHECK(back.rewards() == m.rewards());
    const auto loaded = parse_model(two_state());
    CHECK(std::holds_alternative<StandardFramework>(loaded.instance.framework));
    CHECK(loaded.instance.model.reward(1, 1) == 0.5);
    CHECK(loaded.instance.model.transition(1, 0, 1) == 0.5);
}

TEST_CASE("validation lists every defect") {
    auto j = two_state();
    j["transition"][0][1] = json::array({0.7, 0.7});
    j["transition"][1][0] = json::array({-0.5, 1.5});
    j["discount"] = 1.0;
    const auto issues = issues_of(j);
    CHECK(issues.size() >= 3);
    CHECK(mentions(issues, "state 0 action 1"));
    CHECK(mentions(issues, "state 1 action 0"));

    auto shape = two_state();
    shape["reward"][1] = json::array({1.0});
    shape["transition"][0][0] = json::array({1.0});
    const auto si = issues_of(shape);
    CHECK(si.size() == 2);
    CHECK(mentions(si, "reward[1]"));
    CHECK(mentions(si, "transition[0][0]"));

    auto counts = two_state();
    counts["num_actions"] = 0;
    counts.erase("discount");
    CHECK(issues_of(counts).size() == 2);
}

TEST_CASE("framework blocks") {
    SUBCASE("regularizer broadcast and per state") {
        auto j = two_state();
        j["regularizer"] = {{"kind", "entropy"}, {"eta", 0.5}};
        auto fw = std::get<RegularizedFramework>(parse_model(j).instance.framework);
        REQUIRE(fw.phi.size() == 1);
        CHECK(fw.phi[0]->name() == "entropy");
        j["regularizer"] = json::array({{{"kind", "kl"}, {"eta", 1.0}, {"reference", {0.3, 0.7}}},
                                        {{"kind", "scaled"},
                                         {"scale", 2.0},
                                         {"offset", 1.0},
                                         {"base", {{"kind", "chi_square"}, {"reference", {0.5, 0.5}}}}}});
        fw = std::get<RegularizedFramework>(parse_model(j).instance.framework);
        REQUIRE(fw.phi.size() == 2);
        const numvec p{0.5, 0.5};
        CHECK(fw.phi[1]->value(p) == doctest::Approx(1.0));
        j["regularizer"] = json::array({{{"kind", "entropy"}}});
        CHECK(mentions(issues_of(j), "one entry per state"));
        j["regularizer"] = {{"kind", "kl"}, {"eta", 1.0}, {"reference", {0.3, 0.3}}};
        CHECK_FALSE(issues_of(j).empty());
    }
    SUBCASE("noise") {
        auto j = two_state();
        j["noise"] = {{"kind", "gumbel_iid"}, {"eta", 2.0}};
        auto fw = std::get<StochasticFramework>(parse_model(j, {5000, 3}).instance.framework);
        CHECK_FALSE(fw.monte_carlo);
        const auto g = std::get<GumbelIid>(fw.noise);
        CHECK(g.location == doctest::Approx(-2.0 * kEulerGamma));
        j["noise"]["monte_carlo"] = true;
        fw = std::get<StochasticFramework>(parse_model(j, {5000, 3}).instance.framework);
        CHECK(fw.monte_carlo);
        CHECK(fw.samples == 5000);
        CHECK(fw.seed == 3);
        j["noise"] = {{"kind", "uniform"}, {"bounds", {{0.0, 1.0}, {0.0, 0.0}}}};
        CHECK(std::get<StochasticFramework>(parse_model(j).instance.framework).monte_carlo);
        j["noise"] = {{"kind", "gaussian"}, {"cov", {{1.0, 0.2}, {0.2, 1.0}}}};
        CHECK(std::get<GaussianJoint>(std::get<StochasticFramework>(parse_model(j).instance.framework).noise)
                  .cov.size() == 1);
        j["noise"] = {{"kind", "gaussian"}, {"cov", {{1.0, 2.0}, {2.0, 1.0}}}};
        CHECK_FALSE(issues_of(j).empty());
    }
    SUBCASE("ambiguity") {
        auto j = two_state();
        j["ambiguity"] = {{"kind", "mdm"}, {"family", "exponential"}, {"rate", 2.0}};
        CHECK(std::get<MarginalDistributionModel>(
                  std::get<DistributionalFramework>(parse_model(j).instance.framework).ambiguity)
                  .marginals.size() == 2);
        j["ambiguity"] = {{"kind", "mmm"}, {"sigma", {1.0, 0.5}}};
        CHECK(issues_of(j).empty());
        j["ambiguity"] = {{"kind", "covariance"}, {"matrices", {{{1.0, 0.0}, {0.0, 1.0}}}}};
        CHECK(issues_of(j).empty());
        j["ambiguity"] = {{"kind", "mmm"}, {"sigma", {-1.0, 0.5}}};
        CHECK_FALSE(issues_of(j).empty());
    }
    SUBCASE("constraints") {
        auto j = two_state();
        j["constraint"] = json::array({{{"kind", "singleton"}, {"row", {1.0, 0.0}}}, {{"kind", "full"}}});
        auto fw = std::get<ConstrainedFramework>(parse_model(j).instance.framework);
        CHECK(std::holds_alternative<Singleton>(fw.sets[0]));
        CHECK(std::holds_alternative<FullSimplex>(fw.sets[1]));
        for (const char* kind : {"kl_ball", "l1_ball", "l2_ball"}) {
            j["constraint"] = {{"kind", kind}, {"reference", {0.5, 0.5}}, {"radius", 0.2}};
            CHECK(issues_of(j).empty());
        }
        j["constraint"] = {{"kind", "level_set"}, {"regularizer", {{"kind", "entropy"}}}, {"level", -0.5}};
        CHECK(std::holds_alternative<LevelSet>(std::get<ConstrainedFramework>(parse_model(j).instance.framework).sets[0]));
        j["constraint"] = {{"kind", "kl_ball"}, {"reference", {0.5, 0.5}}, {"radius", -1.0}};
        CHECK_FALSE(issues_of(j).empty());
        j["constraint"] = {{"kind", "box"}};
        CHECK(mentions(issues_of(j), "unknown kind"));
    }
    SUBCASE("one block at most") {
        auto j = two_state();
        j["regularizer"] = {{"kind", "entropy"}};
        j["constraint"] = {{"kind", "full"}};
        CHECK(mentions(issues_of(j), "at most one"));
    }
}

TEST_CASE("number formatting round-trips") {
    for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) CHECK(std::strtod(format_double(x).c_str(), nullptr) == x);
    CHECK(format_double(-0.0) == "0");
    CHECK(format_double(0.5) == "0.5");
}
