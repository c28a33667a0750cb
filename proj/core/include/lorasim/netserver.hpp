#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "lorasim/frames.hpp"
#include "lorasim/phy.hpp"
#include "lorasim/simkit.hpp"
#include "lorasim/time.hpp"

namespace lorasim::server {

// Class A receive-window plan. rx1 opens rx1_delay after the uplink ends on
// the uplink's channel and data rate; rx2 opens rx2_gap later on the fixed
// rx2 channel.
struct RxWindowPlan {
  Micros rx1_delay = kSecond;  // configurable within [1 s, 15 s]
  Micros rx2_gap = kSecond;    // fixed
  int rx2_freq_hz = phy::kBeaconFreqHz;
  int rx2_datarate = 0;
};

struct UplinkMeta {
  int freq_hz = 0;
  int datarate = 0;
  double snr_db = 0.0;
  double rssi_dbm = 0.0;
  Micros end_time = 0;
  std::uint32_t fcnt = 0;
};

struct PendingAdrCommand {
  frames::LinkAdrReq cmd;
  bool unacked = true;
  int sends_left = 8;
};

// Server-side per-device state.
struct NsDeviceRecord {
  frames::DeviceSession session;
  std::deque<double> snr_history;  // FIFO, capacity snr_history_cap
  std::optional<PendingAdrCommand> pending_adr;
  std::vector<frames::MacCommand> pending_other;
  std::optional<UplinkMeta> last_uplink;
  int assumed_tp_index = 0;
  bool class_b = false;
  std::optional<std::vector<std::uint8_t>> app_downlink;  // newest wins
  std::uint8_t app_fport = 1;
};

struct ServerConfig {
  double adr_margin_db = 10.0;
  std::size_t snr_history_cap = 20;
  int adr_resend_budget = 8;  // total downlink attachments per command
  RxWindowPlan rx;
  int gw_power_dbm = 14;
  frames::MicPolicy policy = frames::MicPolicy::V11;
  std::vector<int> channels_hz = {868'100'000, 868'300'000, 868'500'000};
  bool beacons_enabled = false;
  Micros first_beacon_at = 128 * kSecond;
  // Queue a one-byte application downlink for every Class B device each
  // beacon period (availability probing).
  bool probe_downlink_each_period = false;
};

struct ServerObserver {
  std::function<void(Micros, std::uint32_t dev_addr, const UplinkMeta&,
                     const frames::Frame&)>
      uplink_accepted;
  std::function<void(Micros, frames::VerifyStatus)> uplink_rejected;
  std::function<void(Micros at, std::uint32_t dev_addr, const frames::Frame&,
                     const phy::TxParams&, bool in_rx2)>
      downlink_sent;
  std::function<void(Micros, std::uint32_t dev_addr,
                     const frames::LinkAdrReq&)>
      adr_command_issued;
  std::function<void(Micros at, std::uint32_t gps_time_s)> beacon_sent;
};

// Max-SNR ADR decision over the record's history, stepping the data rate up
// 3 dB at a time toward DR5 and spending leftover margin on transmit-power
// reduction. Negative margin restores power but never lowers the data rate
// (that is the device's own backoff job). Returns a command only when the
// outcome differs from the current settings. nbTrans is pinned to 1.
std::optional<frames::LinkAdrReq> adr_decision(const NsDeviceRecord& record,
                                               double margin_db,
                                               std::uint16_t ch_mask);

// Network server plus its gateways. Gateways demodulate every channel and
// data rate concurrently; reception handlers are installed on attach.
class NetworkServer {
 public:
  NetworkServer(sim::Engine& engine, sim::RadioMedium& radio, ServerConfig cfg);

  void attach_gateway(sim::NodeId gw);
  NsDeviceRecord& register_device(std::uint32_t dev_addr,
                                  std::uint64_t session_secret,
                                  bool class_b = false);
  void start();  // begins beacon broadcasting when enabled

  // Verify gate plus SNR bookkeeping; duplicates collapse via the monotone
  // frame counter. Returns true when the uplink was accepted.
  bool ingest_uplink(sim::NodeId gw, const frames::Frame& frame,
                     const UplinkMeta& meta);

  // Emits at most one downlink per transaction, preferring rx1.
  bool plan_downlink(NsDeviceRecord& record, Micros uplink_end,
                     bool adr_ack_req, bool rx1_free = true);

  void queue_app_downlink(std::uint32_t dev_addr,
                          std::vector<std::uint8_t> payload,
                          std::uint8_t fport = 1);

  NsDeviceRecord* find_device(std::uint32_t dev_addr);
  const ServerConfig& config() const { return cfg_; }
  ServerObserver& observer() { return obs_; }
  std::uint64_t uplinks_accepted() const { return uplinks_accepted_; }

 private:
  void on_gateway_rx(sim::NodeId gw, const sim::Reception& r);
  void beacon_tick();
  void send_class_b_probe(NsDeviceRecord& record, Micros beacon_time,
                          const frames::BeaconPayload& payload);
  frames::Frame build_downlink(NsDeviceRecord& record, bool force_empty_ok);

  sim::Engine& engine_;
  sim::RadioMedium& radio_;
  ServerConfig cfg_;
  std::vector<sim::NodeId> gateways_;
  std::map<std::uint32_t, NsDeviceRecord> devices_;
  ServerObserver obs_;
  std::uint64_t uplinks_accepted_ = 0;
};

}  // namespace lorasim::server
