// Command-line front end: sequential Boltzmann generator workflows on
// synthetic targets.  See README.md for the config schema.

#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "sbg/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Sequential Boltzmann generator workflows (desk scale)"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  uint64_t seed_override = 0;
  bool seed_given = false;
  int workers = 0;
  bool reproducible = false;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    cmd->add_option("--output", output_override, "output directory (overrides the config)");
    cmd->add_option("--seed", seed_override, "run seed (overrides the config)")
        ->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--workers", workers, "worker threads (results are worker-count invariant)");
    cmd->add_flag("--reproducible", reproducible,
                  "record strict reproducibility in the snapshot (default on)");
  };

  std::map<std::string, std::function<void(const sbg::cli::RunConfig&)>> commands = {
      {"generate-data", sbg::cli::cmd_generate_data},
      {"train", sbg::cli::cmd_train},
      {"sample", sbg::cli::cmd_sample},
      {"transport", sbg::cli::cmd_transport},
      {"evaluate", sbg::cli::cmd_evaluate},
      {"report", sbg::cli::cmd_report},
  };
  for (auto& [name, fn] : commands) add_common(app.add_subcommand(name));

  CLI11_PARSE(app, argc, argv);

  return sbg::cli::run_guarded([&] {
    sbg::cli::RunConfig config = sbg::cli::load_run_config(config_path);
    if (!output_override.empty()) config.output_dir = output_override;
    if (seed_given) config.seed = seed_override;
    if (workers > 0) config.workers = workers;
    if (reproducible) config.reproducible = true;
    for (auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) {
        fn(config);
        return;
      }
    }
  });
}
