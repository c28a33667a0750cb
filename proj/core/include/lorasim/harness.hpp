#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lorasim/attacker.hpp"
#include "lorasim/enddevice.hpp"
#include "lorasim/netserver.hpp"
#include "lorasim/scenario.hpp"
#include "lorasim/simkit.hpp"

namespace lorasim::harness {

struct BaselineRow {
  int datarate = 0;
  int sent = 0;
  int received = 0;
  double receive_rate = 0.0;
  std::optional<double> rssi_mean, rssi_std, snr_mean, snr_std;
};

struct AdrRow {
  int trial = 0;
  std::string wormhole;
  int datarate = 0;
  int preceding_uplinks = 0;
  std::string trigger;  // wormhole_frame | other_frame | failed
  std::optional<int> transactions_to_target;
  std::optional<double> retention_uplink_success_rate;
  bool retained = false;
};

struct BeaconRow {
  int trial = 0;
  int step_size = 0;
  int period = 0;  // relative to attack start
  bool downlink_received = false;
  std::string beacon_status;  // valid | spoofed | lost
  std::optional<double> beacon_snr;
};

// Everything one experiment run produced, ready for CSV emission.
struct Report {
  std::string experiment;  // baseline | adr_spoofing | beacon_spoofing
  Scenario scenario;
  std::uint64_t seed = 0;
  int trials = 0;
  std::vector<BaselineRow> baseline;
  std::vector<AdrRow> adr;
  std::vector<BeaconRow> beacon;
};

struct RunOptions {
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  int parallel = 1;
};

// One assembled simulation world. Nodes are created in topology order, so
// per-seed runs are reproducible down to the RNG draw sequence.
struct TrialWorld {
  std::unique_ptr<sim::Engine> engine;
  std::unique_ptr<sim::RadioMedium> radio;
  std::map<std::string, sim::NodeId> node_ids;
  std::unique_ptr<server::NetworkServer> ns;
  std::unique_ptr<device::EndDevice> ed;

  sim::NodeId node(const std::string& name) const;
};

TrialWorld build_world(const Scenario& s, std::uint64_t seed);

// Per-trial outcomes, exposed so test suites can drive single cells.
struct AdrTrialOutcome {
  std::string trigger = "failed";
  std::optional<int> transactions_to_target;
  std::optional<double> retention_uplink_success_rate;
  bool retained = false;
  int uplinks_after_attack = 0;
  int attacker_downlinks_accepted = 0;
  int attacker_downlinks_rejected = 0;
  int max_adr_ack_cnt_after_switch = 0;
};

AdrTrialOutcome run_adr_trial(const Scenario& s, const AdrSpoofCell& cell,
                              std::uint64_t seed);

struct BeaconPeriodOutcome {
  int period = 0;
  bool downlink_received = false;
  std::string beacon_status;
  std::optional<double> beacon_snr;
};

std::vector<BeaconPeriodOutcome> run_beacon_trial(const Scenario& s,
                                                  int step_symbols,
                                                  std::uint64_t seed);

Report run_baseline(const Scenario& s, const RunOptions& opt = {});
Report run_adr_spoofing(const Scenario& s, const RunOptions& opt = {});
Report run_beacon_spoofing(const Scenario& s, const RunOptions& opt = {});

// Writes one CSV per experiment plus summary tables and the effective
// scenario + seed (run_config.json); reruns with the same inputs produce
// byte-identical files.
void emit_report(const Report& report, const std::filesystem::path& out_dir);

// Rebuilds the summary CSVs from previously emitted per-row files.
void summarize_directory(const std::filesystem::path& dir);

double mean_of(const std::vector<double>& xs);
double sd_of(const std::vector<double>& xs);

}  // namespace lorasim::harness
