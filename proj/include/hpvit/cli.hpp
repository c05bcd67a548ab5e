#pragma once

// Command-line front end. run_cli is the whole program minus process setup, so
// tests can drive it in-process.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//
// Settings resolve as built-in defaults < --config JSON file < --set key=value
// < dedicated flags. The resolved document is written next to the outputs.

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hpvit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Environment variable naming the directory used when --out is omitted.
inline constexpr const char* kOutputRootEnv = "HPVIT_OUTPUT_ROOT";

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Built-in defaults for every configurable key.
nlohmann::json default_config();
// Overlays `patch` onto `base`; unknown keys and object/scalar mismatches throw ConfigError.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "");
// Applies one dotted `key=value`; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

}  // namespace hpvit
