#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lorasim/frames.hpp"
#include "lorasim/phy.hpp"
#include "lorasim/simkit.hpp"
#include "lorasim/time.hpp"

namespace lorasim::attacker {

// Uplinks of silence after which a single-channel observer concludes (at
// 99% confidence) that the device stopped using the observed channel:
// ceil(log_{(n-1)/n}(0.01)) for an n-channel network.
int silence_timeout_uplinks(int n_channels);

// Static timing predicate for the rx2 replay path: processing delays plus
// both frame airtimes (the downlink is observed in the replayed
// transaction's rx1, hence at the uplink data rate) must fit into the gap
// between the receive windows.
bool rx2_feasible(phy::DataRate dr_up, std::size_t uplink_len,
                  std::size_t downlink_len, Micros uplink_replay_delay,
                  Micros downlink_replay_delay, Micros rx2_gap = kSecond);

enum class WormholeVariant : std::uint8_t {
  unidirectional,
  rx2,
  downlink_delayed,
};

struct WormholeConfig {
  WormholeVariant variant = WormholeVariant::rx2;
  sim::NodeId entry = -1;  // near the target device
  sim::NodeId exit = -1;   // near the gateways
  int sniff_freq_hz = 868'100'000;
  int sniff_dr = 0;
  Micros uplink_replay_delay = 150 * kMillisecond;
  Micros downlink_replay_delay = 50 * kMillisecond;
  bool jam_enabled = true;
  std::uint32_t target_dev_addr = 0;
  int replay_power_dbm = 14;
  int jam_power_dbm = 16;
  Micros rx1_delay = kSecond;
  Micros rx2_gap = kSecond;
  int rx2_freq_hz = phy::kBeaconFreqHz;
  int rx2_datarate = 0;
};

struct WormholeStats {
  int uplinks_sniffed = 0;
  int uplinks_forwarded = 0;
  int jams_fired = 0;
  int downlinks_captured = 0;
  int downlinks_replayed = 0;
  int downlinks_missed = 0;  // rx2 timing infeasible
};

// Store-and-forward relay between two single-channel vantage points.
// Frame bytes pass through unmodified; only timing, location, and received
// signal metadata change. The exit node triggers selective jamming from its
// own preamble detection (header DevAddr and FCtrl flags are readable once
// the header is on the air).
class Wormhole {
 public:
  Wormhole(sim::Engine& engine, sim::RadioMedium& radio, WormholeConfig cfg);

  void activate();
  void deactivate();
  bool active() const { return active_; }

  // Policy hooks; defaults jam and forward everything from the target.
  std::function<bool(const frames::Frame& header)> should_jam;
  std::function<bool(const frames::Frame& header)> should_forward;
  // Fires when the entry node holds a full uplink copy.
  std::function<void(const frames::Frame&, const phy::TxParams&,
                     Micros uplink_end)>
      on_uplink_sniffed;

  const WormholeStats& stats() const { return stats_; }
  const WormholeConfig& config() const { return cfg_; }

 private:
  void handle_exit_preamble(const sim::Transmission& tx);
  void handle_entry_rx(const sim::Reception& r);
  void handle_exit_rx(const sim::Reception& r);
  void replay_uplink_from_exit(const sim::Transmission& uplink, Micros at);
  void replay_downlink_from_entry(const std::vector<std::uint8_t>& bytes,
                                  const phy::TxParams& params, Micros at);
  void exit_listen_from(Micros at);

  sim::Engine& engine_;
  sim::RadioMedium& radio_;
  WormholeConfig cfg_;
  WormholeStats stats_;
  bool active_ = false;
  std::uint64_t activation_ = 0;  // invalidates stale scheduled callbacks

  // per-transaction context
  std::optional<Micros> ed_uplink_end_;
  bool awaiting_downlink_ = false;

  struct StoredDownlink {
    std::vector<std::uint8_t> bytes;
    phy::TxParams params;
  };
  std::optional<StoredDownlink> stored_downlink_;
};

enum class SpoofPhase : std::uint8_t { spoofing, retention, done };

struct AdrSpoofConfig {
  std::uint32_t target_dev_addr = 0;
  int initial_dr = 0;
  int target_dr = 5;
  int observed_channel_hz = 868'100'000;
  Micros uplink_period = 12 * kSecond;  // public metadata
  int n_channels = 3;
  int spoof_forward_limit = 20;
  // Forced wormhole variant; empty picks by initial data rate.
  std::optional<WormholeVariant> variant_override;
  WormholeConfig link;  // nodes, delays, powers, rx2 plan
};

// Two-phase ADR spoofing. Spoofing runs the DR-appropriate wormhole
// (downlink-delayed for DR0/DR1, rx2 otherwise) on the initial data rate
// until the observed channel falls silent for the Eq-style timeout or the
// forward limit is reached, then retunes to the target data rate and
// retains the device by forwarding only ADRACKReq transactions.
class AdrSpoofer {
 public:
  AdrSpoofer(sim::Engine& engine, sim::RadioMedium& radio, AdrSpoofConfig cfg);

  void start();
  SpoofPhase phase() const { return phase_; }
  const WormholeStats& spoof_stats() const { return spoof_stats_; }
  const Wormhole* wormhole() const { return wormhole_ ? &*wormhole_ : nullptr; }
  std::optional<Micros> retention_entered_at() const { return retention_at_; }

 private:
  void enter_retention();
  void arm_watchdog();

  sim::Engine& engine_;
  sim::RadioMedium& radio_;
  AdrSpoofConfig cfg_;
  SpoofPhase phase_ = SpoofPhase::spoofing;
  std::optional<Wormhole> wormhole_;
  WormholeStats spoof_stats_;
  Micros last_sniff_ = 0;
  std::uint64_t watchdog_gen_ = 0;
  std::optional<Micros> retention_at_;
};

struct BeaconDriftConfig {
  sim::NodeId node = -1;
  int step_symbols = 1;
  int jam_payload_bytes = 34;  // roughly one extra beacon airtime
  int power_dbm = 14;
  std::array<std::uint8_t, 13> gw_info_tag = {'A', 'T', 'K'};
  Micros listen_from = 0;
  // Stop shifting once the drift covers a beacon airtime plus half a
  // preamble; 0 selects that default.
  Micros total_target_shift = 0;
};

enum class DriftPhase : std::uint8_t { syncing, drifting, holding };

// Self-synchronizes on a legitimate beacon, then prepones its own spoofed
// beacons by step_symbols per period until the total target shift is
// reached, holding the schedule afterwards. Each spoofed beacon carries the
// true GPS time for its period, a distinct origin tag, and an appended
// random jamming payload.
class BeaconDrifter {
 public:
  BeaconDrifter(sim::Engine& engine, sim::RadioMedium& radio,
                BeaconDriftConfig cfg);

  void start();
  DriftPhase phase() const { return phase_; }
  Micros accumulated_shift() const { return accumulated_shift_; }
  Micros total_target_shift() const { return total_target_; }
  int beacons_sent() const { return beacons_sent_; }
  // Shift applied to the k-th spoofed beacon (k >= 1).
  Micros shift_for(int k) const;
  // Drifting periods needed to reach the full shift.
  int drifting_periods() const;

 private:
  void handle_rx(const sim::Reception& r);
  void emit_spoofed_beacon();

  sim::Engine& engine_;
  sim::RadioMedium& radio_;
  BeaconDriftConfig cfg_;
  DriftPhase phase_ = DriftPhase::syncing;
  Micros sync_arrival_ = 0;
  frames::BeaconPayload sync_payload_{};
  int next_index_ = 1;
  Micros accumulated_shift_ = 0;
  Micros total_target_ = 0;
  int beacons_sent_ = 0;
};

}  // namespace lorasim::attacker
