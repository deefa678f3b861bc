// latscat: run configured experiments and report on finished runs.

#include "latscat/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Lattice long-range scattering experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, stage = "all";
  std::uint64_t seed = 0;
  int jobs = 0;
  auto* run = app.add_subcommand("run", "Run one stage (or all) of a configured experiment");
  run->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run->add_option("--stage", stage, "extend | classical | hj | evolve | cook | waveop | all")
      ->check(CLI::IsMember(latscat::stage_names()));
  auto* seed_opt = run->add_option("--seed", seed, "RNG seed (overrides the config)");
  run->add_option("--jobs", jobs, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  std::string run_dir, json_out;
  auto* report = app.add_subcommand("report", "Print the tables of a finished run");
  report->add_option("dir", run_dir, "Run directory")->required();
  report->add_option("--json", json_out, "JSON output (default: <dir>.report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : latscat::kExitConfig;
  }

  if (*run) {
    try {
      latscat::ExperimentConfig cfg = latscat::ExperimentConfig::load(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (*seed_opt) cfg.seed = seed;
      if (jobs > 0) cfg.jobs = jobs;
      return latscat::run_experiment(cfg, stage, std::cerr);
    } catch (const latscat::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return latscat::kExitConfig;
    } catch (const latscat::IoError& e) {
      std::cerr << "i/o error: " << e.what() << '\n';
      return latscat::kExitIo;
    }
  }
  std::filesystem::path dir(run_dir);
  while (!dir.empty() && dir.filename().empty()) dir = dir.parent_path();
  const std::filesystem::path target = json_out.empty() ? std::filesystem::path(dir.string() + ".report.json")
                                                        : std::filesystem::path(json_out);
  return latscat::report_run(dir, target, std::cout, std::cerr);
}
