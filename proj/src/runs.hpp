#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ldreg::runs {

using nlohmann::json;

/// Config-driven workflows. Each writes one run directory holding
/// manifest.json, the resolved config and its artifacts. Errors propagate as
/// ldreg::Error after a manifest with status "failed" has been written.
void dataset(const json& cfg, const std::string& csv_path);
void train(const json& cfg, const std::string& run_dir);
void anneal(const json& cfg, const std::string& run_dir);
void refine(const json& cfg, const std::string& run_dir);
void eval(const json& cfg, const std::string& run_dir);
void demo_ldr_only(const json& cfg, const std::string& run_dir);

/// Markdown table over run directories, grouped by dataset size and method.
std::string report(const std::vector<std::string>& run_dirs);

/// Parse config text; JSON syntax errors become ConfigError.
json parse_config(const std::string& text);

/// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const json& cfg);

}  // namespace ldreg::runs
