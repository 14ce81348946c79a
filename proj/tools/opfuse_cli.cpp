// opfuse command-line entry point. See README.md for usage.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "opfuse/commands.hpp"

namespace {

int emit(const opfuse::CommandResult& r, bool quiet) {
  std::cout << r.report << std::flush;
  for (const auto& m : r.messages)
    if (!quiet || r.exit_code != opfuse::kExitOk) std::cerr << m << '\n';
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deferred-normalization fusion: equivalence checks, weight folding and latency simulation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--seed", seed, "Override the config's seed");
  app.add_flag("-q,--quiet", quiet, "Print only the JSON report");

  std::string config;
  auto* verify = app.add_subcommand("verify", "Compare fused and conventional paths on random inputs");
  verify->add_option("config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);

  auto* simulate = app.add_subcommand("simulate", "Schedule the block graph on the two-engine model");
  simulate->add_option("config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  bool fused = false, conventional = false, both = false, timeline = false;
  std::optional<std::string> csv;
  auto* f_fused = simulate->add_flag("--fused", fused, "Schedule only the fused graph");
  auto* f_conv = simulate->add_flag("--conventional", conventional, "Schedule only the conventional graph");
  auto* f_both = simulate->add_flag("--both", both, "Schedule both and report the saving (default)");
  f_fused->excludes(f_conv)->excludes(f_both);
  f_conv->excludes(f_both);
  simulate->add_option("--csv", csv, "Write the timeline as CSV; with --both, <stem>.conventional<ext> and "
                                     "<stem>.fused<ext>");
  simulate->add_flag("--timeline", timeline, "Embed the timelines in the JSON report");

  std::string weights_in, weights_out;
  auto* fold = app.add_subcommand("fold", "Fold normalization parameters into the following weights");
  fold->add_option("config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  fold->add_option("weights_in", weights_in, "Block weights (JSON)")->required()->check(CLI::ExistingFile);
  fold->add_option("weights_out", weights_out, "Folded weights output (JSON)")->required();

  auto* gen = app.add_subcommand("gen-weights", "Write seeded random block weights");
  gen->add_option("config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("weights_out", weights_out, "Block weights output (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return opfuse::kExitUsage;
  }

  const opfuse::CommonOptions common{seed};
  if (verify->parsed()) return emit(opfuse::cmd_verify(config, common), quiet);
  if (simulate->parsed()) {
    opfuse::SimulateOptions sim;
    sim.mode = fused ? opfuse::SimMode::fused : conventional ? opfuse::SimMode::conventional : opfuse::SimMode::both;
    sim.csv_path = csv;
    sim.include_timeline = timeline;
    return emit(opfuse::cmd_simulate(config, sim, common), quiet);
  }
  if (fold->parsed()) return emit(opfuse::cmd_fold(config, weights_in, weights_out, common), quiet);
  if (gen->parsed()) return emit(opfuse::cmd_gen_weights(config, weights_out, common), quiet);
  return opfuse::kExitUsage;
}
