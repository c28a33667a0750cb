#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lorasim/enddevice.hpp"
#include "lorasim/frames.hpp"
#include "lorasim/netserver.hpp"
#include "lorasim/time.hpp"

namespace lorasim::harness {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TopologyNode {
  std::string name;
  bool gateway = false;
};

struct TopologyLink {
  std::string from;
  std::string to;
  double db = 0.0;
};

struct Topology {
  std::vector<TopologyNode> nodes;
  std::vector<TopologyLink> links;
};

enum class AttackType : std::uint8_t { none, adr_spoofing, beacon_drifting };

struct AdrSpoofCell {
  std::string wormhole = "rx2";  // "rx2" | "downlink_delayed"
  int datarate = 0;
  int preceding_uplinks = 1;
};

struct AdrAttackSpec {
  std::string entry_node = "atk_entry";
  std::string exit_node = "atk_exit";
  Micros uplink_replay_delay = 150 * kMillisecond;
  Micros downlink_replay_delay = 50 * kMillisecond;
  int target_datarate = 5;
  int replay_power_dbm = 14;
  int jam_power_dbm = 16;
  int trial_budget_transactions = 60;  // spoofing declared failed past this
  int retention_uplinks = 340;         // horizon after the budget window
  int spoof_forward_limit = 20;
  std::vector<AdrSpoofCell> cells;
};

struct BeaconAttackSpec {
  std::string node = "atk_entry";
  std::vector<int> step_symbols = {1, 2, 3, 4, 6, 8};
  int jam_payload_bytes = 34;
  int power_dbm = 14;
  int sync_period = 2;        // true beacon index the attacker locks to
  int preceding_periods = 1;  // rows recorded before the attack
  int periods_after_stop = 3;
};

struct BaselineSpec {
  int frames_per_dr = 300;
  std::vector<int> datarates = {0, 1, 2, 3, 4, 5};
};

struct DeviceSpec {
  std::uint32_t dev_addr = 0x01A2B3C4;
  std::uint64_t session_secret = 0x5eed;
  Micros uplink_period = 12 * kSecond;
  Micros first_uplink_at = 5 * kSecond;
  std::size_t payload_bytes = 1;
  int initial_datarate = 0;
  int adr_ack_limit = 32;
  int adr_ack_delay = 32;
  bool adr = true;
  bool class_b = false;
  device::ClassBConfig class_b_cfg;
};

// One experiment description: topology, channel plan, device and server
// parameters, the attack and its parameter cells, plus trial bookkeeping.
struct Scenario {
  std::string name = "scenario";
  std::uint64_t base_seed = 1;
  int trials = 20;
  frames::MicPolicy policy = frames::MicPolicy::V11;
  std::vector<int> channels_hz = {868'100'000, 868'300'000, 868'500'000};
  server::RxWindowPlan rx;
  double noise_floor_dbm = -117.0;
  double snr_jitter_sigma_db = 1.0;
  Topology topology;
  DeviceSpec device;
  int gateway_power_dbm = 14;
  double adr_margin_db = 10.0;
  int adr_resend_budget = 8;
  AttackType attack = AttackType::none;
  AdrAttackSpec adr;
  BeaconAttackSpec beacon;
  BaselineSpec baseline;
  Micros t_end = 0;  // 0: runner picks per experiment

  void validate() const;

  std::string to_json() const;
  static Scenario from_json(const std::string& text);
  static Scenario from_json_file(const std::string& path);

  // Desk-scale defaults reproducing the tuned testbed topology.
  static Scenario defaults_baseline();
  static Scenario defaults_adr_spoofing();
  static Scenario defaults_beacon_drifting();
};

// Default four-node topology: the device-gateway link sits just below the
// DR5 demodulation floor, attacker nodes are colocated with each end.
Topology default_topology();

}  // namespace lorasim::harness
