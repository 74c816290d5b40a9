#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prostseg/pipeline.hpp"
#include "prostseg/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"prostate zone segmentation benchmark harness"};
  app.set_version_flag("--version", std::string(prostseg::version()));
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic dataset");
  int patients = 0, slices = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--patients", patients, "number of patients (>= 2)")->required();
  synth->add_option("--slices", slices, "slices per patient (>= 1)")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* pipeline = app.add_subcommand("pipeline", "run the full benchmark from a config file");
  std::string config_file;
  pipeline->add_option("--config", config_file, "run configuration file")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate saved checkpoints on a test set");
  std::vector<std::string> checkpoints;
  std::string test_root, eval_out;
  evaluate->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)")->required();
  evaluate->add_option("--test", test_root, "test dataset directory or manifest.csv")->required();
  evaluate->add_option("--out", eval_out, "report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return prostseg::kExitConfig;
  }

  if (synth->parsed()) return prostseg::cmd_synth(patients, slices, synth_seed, synth_out);
  if (pipeline->parsed()) return prostseg::cmd_pipeline(config_file);
  if (evaluate->parsed()) {
    std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
    return prostseg::cmd_evaluate(paths, test_root, eval_out);
  }
  return prostseg::kExitConfig;
}
