// SPDX-License-Identifier: Apache-2.0
// Command-line driver: init | pretrain | align | eval | report | critic-eval.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ipo/config.hpp"
#include "ipo/errors.hpp"
#include "ipo/run.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::string run_dir = "runs/default";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> iterations;
  std::vector<std::string> overrides;
};

// Config file: --config if given, else <run-dir>/config.json, else defaults.
// Flag overrides are applied as tree edits so they go through the same
// strict parser as the file.
ipo::RunConfig resolve_config(const GlobalOptions& g) {
  ipo::json tree = ipo::to_json(ipo::RunConfig{});
  const std::filesystem::path run_config = ipo::RunPaths{g.run_dir}.config();
  if (!g.config.empty()) {
    if (!std::filesystem::exists(g.config)) throw ipo::ConfigError("config file not found: " + g.config);
    tree = ipo::read_json_file(g.config);
  } else if (std::filesystem::exists(run_config)) {
    tree = ipo::read_json_file(run_config);
  }
  for (const auto& o : g.overrides) ipo::apply_override(tree, o);
  if (g.seed) tree["seed"] = *g.seed;
  if (g.method) tree["align"]["method"] = *g.method;
  if (g.iterations) tree["loop"]["iterations"] = *g.iterations;
  ipo::RunConfig cfg = ipo::run_config_from_json(tree);
  ipo::validate(cfg);
  return cfg;
}

int run(const std::string& command, const GlobalOptions& g) {
  const ipo::RunPaths paths{g.run_dir};
  const ipo::RunConfig cfg = resolve_config(g);
  std::filesystem::create_directories(paths.root);

  if (command == "init") {
    const std::filesystem::path target = g.config.empty() ? paths.config() : std::filesystem::path(g.config);
    if (!g.config.empty() && std::filesystem::exists(target)) {
      // init with an existing --config copies it (plus overrides) into the run dir
      ipo::write_run_config(paths.config(), cfg);
    } else {
      if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
      ipo::write_run_config(target, cfg);
      if (target != paths.config()) ipo::write_run_config(paths.config(), cfg);
    }
    std::cout << "wrote " << paths.config().string() << '\n';
    return 0;
  }

  ipo::write_run_config(paths.config(), cfg);
  if (command == "pretrain") {
    ipo::pretrain(cfg, paths, &std::cerr);
    std::cout << "wrote " << paths.base_checkpoint().string() << ".{bin,json}\n";
  } else if (command == "align") {
    const auto result = ipo::align(cfg, paths, &std::cerr);
    std::cout << "wrote " << paths.metrics().string() << " (" << result.metrics.size() << " rows)\n";
  } else if (command == "eval") {
    const auto report = ipo::evaluate_run(cfg, paths);
    std::cout << "wrote " << paths.report().string() << " (" << report.rows.size() << " snapshots)\n";
  } else if (command == "report") {
    std::cout << ipo::write_report(paths);
  } else if (command == "critic-eval") {
    const auto r = ipo::critic_eval(cfg, paths);
    std::cout << "pairwise_accuracy " << r.pairwise_accuracy << "\npointwise_accuracy " << r.pointwise_accuracy
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative preference optimization on a toy conditional diffusion task"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "config file (JSON)");
  app.add_option("--run-dir", g.run_dir, "run directory")->capture_default_str();
  app.add_option("--seed", g.seed, "root seed (overrides config)");
  app.add_option("--method", g.method, "dpo or kto (overrides align.method)");
  app.add_option("--iterations", g.iterations, "number of rounds (overrides loop.iterations)");
  app.add_option("--set", g.overrides, "dotted.key=value override, repeatable");

  std::string command;
  for (const char* name : {"init", "pretrain", "align", "eval", "report", "critic-eval"}) {
    app.add_subcommand(name)->fallthrough()->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& token : app.remaining()) std::cerr << "unrecognized argument: " << token << '\n';
    return 2;
  }

  try {
    return run(command, g);
  } catch (const ipo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ipo::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
