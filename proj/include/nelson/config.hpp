#pragma once

#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"
#include "nelson/dual_solver.hpp"
#include "nelson/function_space.hpp"
#include "nelson/marginals.hpp"
#include "nelson/mfg.hpp"
#include "nelson/primal.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

namespace nelson {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// Schema violation in a run configuration; the message names the key.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Validated run configuration. `effective` is the input with every default
/// filled in, as echoed to the log and embedded in reports.
struct RunConfig {
  nlohmann::json effective;
  std::string hash;  // FNV-1a of the canonical dump of `effective`
  std::string base_dir;  // relative data files resolve against this

  std::uint64_t seed = 1;
  int workers = 0;  // 0: leave the thread count alone

  CostFunction cost = CostFunction::quadratic();
  DiffusionSpec spec;
  MarginalFlow flow;
  BasisOptions basis;
  SolverOptions solver;
  McOptions mc;
  int slices = 17;
  std::optional<InteractionFunctional> R;
  int mfg_params = 5;
  MkvOptions mfg;
};

/// Parses and validates. Unknown keys, p <= 1, a missing "marginals" section
/// and singular sigma are errors.
RunConfig parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");
RunConfig parse_config_file(const std::string& path);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace nelson
