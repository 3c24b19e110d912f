#include <CLI11.hpp>
#include <iostream>

#include "mrgnn/cli.hpp"

int main(int argc, char** argv) {
  using namespace mrgnn::cli;
  CLI::App app{"Multimodal bike-sharing demand forecasting with a multi-relational graph network"};
  app.require_subcommand(1);

  Options options;
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int stop_after = 0;
  auto* config_opt = app.add_option("--config", config_path, "experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "run a single seed instead of the configured list");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  app.add_flag("--resume", options.resume, "continue interrupted training from saved state");
  auto* stop_opt = app.add_option("--stop-after-epoch", stop_after)->group("");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"ingest", "bin raw records into a dataset archive"},
      {"build-graphs", "build the multi-relational graph set"},
      {"train", "train one model per seed and report test metrics"},
      {"evaluate", "score checkpoints and the HA/LR baselines"},
      {"ablate", "compare mode combinations"},
      {"synth", "write a synthetic raw dataset"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (*config_opt) options.config = config_path;
  if (*seed_opt) options.seed = seed;
  if (*out_opt) options.out = out_dir;
  if (*stop_opt) options.stop_after_epoch = stop_after;
  return run(app.get_subcommands().front()->get_name(), options, std::cout, std::cerr);
}
