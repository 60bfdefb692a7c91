// Command-line front end: nelson <command> [options]. See README for examples.
#include "nelson/config.hpp"
#include "nelson/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

std::optional<nelson::RunConfig> load(const std::string& path, std::optional<std::uint64_t> seed,
                                      std::optional<int> workers) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw nelson::ConfigError("cannot open config file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw nelson::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (seed && doc.is_object()) doc["seed"] = *seed;
  if (workers && doc.is_object()) doc["workers"] = *workers;
  const auto dir = std::filesystem::path(path).parent_path();
  return nelson::parse_config(doc, dir.empty() ? "." : dir.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nelson-process dual solver, Monte-Carlo checks and catalog cases"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--workers", workers, "worker threads (default: $NELSON_WORKERS)");

  nelson::CommandOptions opts;
  std::string config, params;

  auto* solve = app.add_subcommand("solve-dual", "maximize the dual over the test-function basis");
  solve->add_option("--config", config, "run config JSON")->required();
  solve->add_option("--out", opts.out, "solution JSON");

  auto* gap = app.add_subcommand("check-gap", "Monte-Carlo duality gap and marginal check");
  gap->add_option("--config", config, "run config JSON")->required();
  gap->add_option("--solution", opts.solution, "solution JSON from solve-dual")->required();
  gap->add_option("--out", opts.out, "report JSON");

  auto* sim = app.add_subcommand("simulate", "simulate under the recovered or reference drift");
  sim->add_option("--config", config, "run config JSON")->required();
  sim->add_option("--drift", opts.drift, "recovered | reference")->check(CLI::IsMember({"recovered", "reference"}));
  sim->add_option("--solution", opts.solution, "solution JSON (recovered drift)");
  sim->add_option("--export-paths", opts.export_paths, "paths written to CSV");
  sim->add_option("--out", opts.out, "report JSON");

  auto* cat = app.add_subcommand("catalog", "closed-form catalog cases");
  auto* run = cat->add_subcommand("run", "run one case");
  cat->require_subcommand(1);
  run->add_option("name", opts.catalog, "gaussian | bessel | nonuniversality")
      ->required()
      ->check(CLI::IsMember({"gaussian", "bessel", "nonuniversality"}));
  run->add_option("--params", params, "comma-separated key=value pairs");
  run->add_option("--out", opts.out, "report JSON");

  auto* mfg = app.add_subcommand("mfg-solve", "potential mean-field game equilibrium");
  mfg->add_option("--config", config, "run config JSON with an \"R\" section")->required();
  mfg->add_option("--out", opts.out, "report JSON");

  auto* val = app.add_subcommand("validate-cost", "numerical checks of the cost structure");
  val->add_option("--config", config, "run config JSON")->required();
  val->add_option("--out", opts.out, "report JSON");

  CLI11_PARSE(app, argc, argv);

  if (!workers)
    if (const char* env = std::getenv("NELSON_WORKERS")) workers = std::atoi(env);
#ifdef _OPENMP
  if (workers && *workers > 0) omp_set_num_threads(*workers);
#endif

  for (auto* sub : {solve, gap, sim, cat, mfg, val})
    if (sub->parsed()) opts.command = sub->get_name();

  std::optional<nelson::RunConfig> rc;
  try {
    rc = load(config, seed, workers);
    if (opts.command == "catalog") {
      opts.params = nelson::parse_params(params);
      if (seed && !opts.params.count("seed")) opts.params["seed"] = std::to_string(*seed);
    }
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", {{"type", "config_error"}, {"message", e.what()}, {"command", opts.command}}},
                          {"version", nelson::kLibraryVersion},
                          {"pass", false}};
    std::cerr << err.dump(2) << "\n";
    if (!opts.out.empty()) std::ofstream(opts.out) << err.dump(2) << "\n";
    return 2;
  }
  return nelson::run_pipeline(opts, rc, std::clog);
}
