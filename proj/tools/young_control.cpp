// young-control <experiment> --config <file> [--seed S] [--threads N]
//               [--paper-scale] [--out DIR]
//
// Exit codes: 0 ok, 2 bad arguments or config, 3 numeric failure,
// 4 infeasible problem.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "ycontrol/config.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/experiments.hpp"

namespace {

int exit_code(ycontrol::ErrorKind kind) {
  switch (kind) {
    case ycontrol::ErrorKind::kUsage:
    case ycontrol::ErrorKind::kConfiguration: return 2;
    case ycontrol::ErrorKind::kNumeric: return 3;
    case ycontrol::ErrorKind::kInfeasible: return 4;
  }
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimum-variance control with signal-dependent noise"};
  std::string experiment, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool paper_scale = false;
  app.add_option("experiment", experiment,
                 "linear-check | integrand-sweep | arm-reach | scaling-study | alpha-sweep | "
                 "pulse-control")
      ->required();
  app.add_option("--config", config_path, "YAML configuration file")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--paper-scale", paper_scale, "arm integration step 0.01 ms");
  app.add_option("--out", out_dir, "artifact directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // A failed run removes the directory it created, so no partial artifact
  // set survives. A directory that existed beforehand is left alone.
  std::filesystem::path created;
  auto fail = [&](int code) {
    std::error_code ignored;
    if (!created.empty()) std::filesystem::remove_all(created, ignored);
    return code;
  };

  try {
    ycontrol::ExperimentConfig config =
        ycontrol::load_config(config_path, ycontrol::parse_experiment(experiment));
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (!out_dir.empty()) config.output = out_dir;
    config.paper_scale = paper_scale;
    ycontrol::finalize_config(config);
    if (!std::filesystem::exists(config.output)) created = config.output;
    const ycontrol::RunReport report = ycontrol::run_experiment(config, std::cout);
    if (report.inconclusive) std::cout << "status: inconclusive\n";
    return 0;
  } catch (const ycontrol::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << " (best residual " << e.best_residual() << ")\n";
    return fail(4);
  } catch (const ycontrol::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return fail(exit_code(e.kind()));
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return fail(2);
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return fail(3);
  }
}
