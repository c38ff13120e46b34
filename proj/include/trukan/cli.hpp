#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace trukan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Every accepted key with its default; the type of each default is the
// schema for that key.
nlohmann::json default_config();

// Merges `patch` into `base`, rejecting keys or value types that the default
// config does not have. Errors name the dotted key path.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

// "train.seed=7": the value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Entry point; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace trukan::cli
