#pragma once

#include "nelson/config.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace nelson {

struct CommandOptions {
  std::string command;   // solve-dual | check-gap | simulate | catalog | mfg-solve | validate-cost
  std::string out;       // report path; artifacts are written next to it
  std::string solution;  // solution JSON for check-gap / simulate --drift recovered
  std::string drift = "recovered";
  std::string catalog;   // gaussian | bessel | nonuniversality
  std::map<std::string, std::string> params;
  int export_paths = 100;
};

/// Parses "k=v,k=v" into a map.
std::map<std::string, std::string> parse_params(const std::string& text);

/// Runs one command, writes the JSON report to `opts.out` (plus CSV artifacts
/// named after it) and returns the report. Module errors propagate.
nlohmann::json run_command(const CommandOptions& opts, const std::optional<RunConfig>& config, std::ostream& log);

/// Exit status contract: 0 iff the report's "pass" is true; 1 on a failed
/// check; 2 on an error (the error JSON is written to `opts.out` if set).
int run_pipeline(const CommandOptions& opts, const std::optional<RunConfig>& config, std::ostream& log);

/// JSON form of a dual solution (theta, knots, values, certificate).
nlohmann::json solution_to_json(const DualSolution& sol);
/// Rebuilds a solution written by solve-dual against the basis the config
/// produces; throws if the knots differ.
DualSolution solution_from_json(const nlohmann::json& j, const RunConfig& config);

}  // namespace nelson
