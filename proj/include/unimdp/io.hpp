#pragma once

// JSON model files. The top-level object holds num_states, num_actions,
// discount, reward[s][a] and transition[s][a][s'], plus at most one framework
// block:
//   "regularizer"  entropy | kl | chi_square | quadratic | mmm | zero | scaled
//   "noise"        gumbel_iid | uniform | gaussian
//   "ambiguity"    mdm | mmm | covariance
//   "constraint"   kl_ball | l1_ball | l2_ball | singleton | full | level_set
// Regularizer and constraint blocks are either one object broadcast to every
// state or an array with one object per state.

#include "unimdp/equivalence.hpp"

#include "json.hpp"

#include <filesystem>

namespace unimdp {

using json = nlohmann::json;

/// Malformed or invalid input; issues lists every defect found.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(const std::string& what, std::vector<std::string> issues);
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    std::vector<std::string> issues_;
};

/// Sample count and seed for Monte Carlo noise blocks.
struct McConfig {
    std::size_t samples = 100000;
    std::uint64_t seed = 0;
};

struct LoadedModel {
    FrameworkInstance instance;
    json source;
};

/// Parses and validates; throws ValidationError listing every violation.
LoadedModel parse_model(const json& j, const McConfig& mc = {});
LoadedModel load_model(const std::filesystem::path& path, const McConfig& mc = {});
json read_json(const std::filesystem::path& path);

RegularizerPtr parse_regularizer(const json& j, std::size_t num_actions);
ConstraintSet parse_constraint(const json& j, std::size_t num_actions);
NoiseModel parse_noise(const json& j, std::size_t num_states, std::size_t num_actions);
AmbiguitySet parse_ambiguity(const json& j, std::size_t num_states, std::size_t num_actions);

/// The five model fields only.
json model_to_json(const MdpModel& m);

/// %.17g: round-trips every double.
std::string format_double(double x);

}  // namespace unimdp
