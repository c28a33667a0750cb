#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "lorasim/harness.hpp"
#include "lorasim/scenario.hpp"

namespace {

using lorasim::harness::Report;
using lorasim::harness::RunOptions;
using lorasim::harness::Scenario;

struct CommonArgs {
  std::string scenario_file;
  std::string out_dir = "results";
  int trials = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int parallel = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool scenario_required) {
  auto* sc = cmd->add_option("--scenario", args.scenario_file,
                             "Scenario file (JSON)");
  if (scenario_required) sc->check(CLI::ExistingFile);
  cmd->add_option("--trials,-n", args.trials, "Trials per parameter cell");
  cmd->add_option("--seed,-s", args.seed, "Base seed (trial k uses seed+k)")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out,-o", args.out_dir, "Output directory for CSV files");
  cmd->add_option("--parallel,-j", args.parallel, "Worker threads")
      ->check(CLI::PositiveNumber);
}

RunOptions to_options(const CommonArgs& args) {
  RunOptions opt;
  if (args.trials > 0) opt.trials = args.trials;
  if (args.seed_set) opt.seed = args.seed;
  opt.parallel = args.parallel;
  return opt;
}

Scenario load_or_default(const CommonArgs& args, Scenario fallback) {
  if (args.scenario_file.empty()) return fallback;
  return Scenario::from_json_file(args.scenario_file);
}

void finish(const Report& report, const CommonArgs& args) {
  lorasim::harness::emit_report(report, args.out_dir);
  std::printf("%s: %zu rows -> %s (seed %llu, %d trials)\n",
              report.experiment.c_str(),
              report.baseline.size() + report.adr.size() + report.beacon.size(),
              args.out_dir.c_str(),
              static_cast<unsigned long long>(report.seed), report.trials);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRaWAN attack simulator: Class A/B network model with an "
               "attacker layer and CSV experiment harness"};
  app.require_subcommand(1);

  CommonArgs baseline_args, adr_args, beacon_args;
  std::string report_dir;

  auto* baseline = app.add_subcommand(
      "baseline", "Channel measurement without attacker, per data rate");
  add_common(baseline, baseline_args, false);

  auto* adr = app.add_subcommand(
      "adr-spoof", "Wormhole-based ADR spoofing across the parameter cells");
  add_common(adr, adr_args, false);

  auto* beacon = app.add_subcommand(
      "beacon-spoof", "Class B beacon drifting across the step sizes");
  add_common(beacon, beacon_args, false);

  auto* report = app.add_subcommand(
      "report", "Recompute summary tables from emitted CSV files");
  report->add_option("--out,-o", report_dir, "Directory holding the CSVs")
      ->required()
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (baseline->parsed()) {
      auto s = load_or_default(baseline_args, Scenario::defaults_baseline());
      finish(lorasim::harness::run_baseline(s, to_options(baseline_args)),
             baseline_args);
    } else if (adr->parsed()) {
      auto s = load_or_default(adr_args, Scenario::defaults_adr_spoofing());
      finish(lorasim::harness::run_adr_spoofing(s, to_options(adr_args)),
             adr_args);
    } else if (beacon->parsed()) {
      auto s =
          load_or_default(beacon_args, Scenario::defaults_beacon_drifting());
      finish(lorasim::harness::run_beacon_spoofing(s, to_options(beacon_args)),
             beacon_args);
    } else if (report->parsed()) {
      lorasim::harness::summarize_directory(report_dir);
      std::printf("summaries refreshed in %s\n", report_dir.c_str());
    }
  } catch (const lorasim::harness::ScenarioError& e) {
    std::fprintf(stderr, "scenario error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
