#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lorasim/frames.hpp"
#include "lorasim/phy.hpp"
#include "lorasim/simkit.hpp"
#include "lorasim/time.hpp"

namespace lorasim::device {

inline constexpr Micros kBeaconPeriod = phy::kBeaconPeriod;
inline constexpr Micros kBeaconReserved = 2'120'000;
inline constexpr Micros kPingSlotUnit = 30'000;
inline constexpr int kPingSlotCount = 4096;

// EU868-style power ladder: index 0 is max power, each step -2 dBm.
inline constexpr int kMaxTpIndex = 7;
inline int tp_index_to_dbm(int index) { return 16 - 2 * index; }

// Device-side ADR bookkeeping (counter, thresholds, current radio settings).
struct AdrState {
  int adr_ack_cnt = 0;
  int adr_ack_limit = 64;
  int adr_ack_delay = 32;
  int current_dr = 0;
  int current_tp_index = 0;
};

inline bool adr_ack_requested(const AdrState& s) {
  return s.adr_ack_cnt >= s.adr_ack_limit;
}

// Counter update at the end of one Class A transaction. Without a downlink
// the counter grows; once it reaches limit + delay (and every further
// delay transactions) the device takes one recovery step: first restore
// full transmit power, then walk the data rate down one step toward DR0.
void on_transaction_end(AdrState& s, bool received_downlink);

// Applies a LinkADRReq if every field validates (atomically rejects
// otherwise) and answers it. A request identical to the last acknowledged
// one is re-applied silently: commands are only acknowledged once.
std::optional<frames::LinkAdrAns> process_link_adr_req(
    AdrState& s, std::optional<frames::LinkAdrReq>& last_acked,
    const frames::LinkAdrReq& req, std::uint16_t enabled_ch_mask,
    std::uint16_t* active_ch_mask = nullptr);

enum class ClassBMode : std::uint8_t { class_a, acquiring, locked, beaconless };

struct ClassBConfig {
  double window_guard_symbols = 3.0;      // beacon window half-width
  double ping_slot_guard_symbols = 9.0;   // ping timing tolerance
  double widen_per_miss_symbols = 1.0;
  double guard_cap_symbols = 32.0;
  Micros beaconless_timeout = 7200 * kSecond;  // then back to Class A
  int ping_slots_per_period = 1;
};

struct ClassBState {
  ClassBMode mode = ClassBMode::class_a;
  Micros expected_beacon_time = 0;
  double window_guard_symbols = 3.0;  // current, widened while beaconless
  std::optional<Micros> beaconless_since;
  int ping_period_s = 128;
  frames::BeaconPayload last_beacon_payload{};
  Micros last_beacon_arrival = 0;
};

struct ObservedBeacon {
  frames::BeaconPayload payload;
  Micros arrival = 0;
  double snr_db = 0.0;
};

struct BeaconWindowOutcome {
  bool accepted = false;
  bool reverted_to_class_a = false;
};

// One beacon-window decision. An observed beacon within the guard keeps or
// regains the lock and advances the expectation by one period from the
// observation; a miss widens the window and, two hours in, drops Class B.
// In acquiring mode any decodable beacon locks.
BeaconWindowOutcome on_beacon_window(ClassBState& s, const ClassBConfig& cfg,
                                     Micros now,
                                     const std::optional<ObservedBeacon>& obs);

// Deterministic pseudo-random ping-slot offsets for one beacon period,
// derived from (beacon gps time, device address) and quantized to 30 ms
// slot units inside [beacon_reserved, 128 s).
std::vector<Micros> ping_slot_times(Micros beacon_arrival,
                                    const frames::BeaconPayload& payload,
                                    std::uint32_t dev_addr,
                                    int slots_per_period = 1);

// Extra guard width accumulated by beacon-less widening, in symbols.
double widened_by_symbols(const ClassBState& s, const ClassBConfig& cfg);

// Timing gate for a Class B downlink: the transmission must start within
// the ping guard (in beacon-symbol durations) of a scheduled slot.
bool ping_slot_timing_ok(const ClassBState& s, const ClassBConfig& cfg,
                         std::span<const Micros> slots, Micros tx_start);

struct DeviceConfig {
  std::uint32_t dev_addr = 0x01A2B3C4;
  std::uint64_t session_secret = 0x5eed;
  std::vector<int> channels_hz = {868'100'000, 868'300'000, 868'500'000};
  int initial_datarate = 0;
  int initial_tp_index = 0;
  Micros uplink_period = 12 * kSecond;  // 0 disables the uplink loop
  Micros first_uplink_at = 5 * kSecond;
  std::size_t app_payload_bytes = 1;
  std::uint8_t app_fport = 1;
  int adr_ack_limit = 64;
  int adr_ack_delay = 32;
  bool adr = true;
  bool class_b = false;
  frames::MicPolicy policy = frames::MicPolicy::V11;
  Micros rx1_delay = kSecond;
  Micros rx2_gap = kSecond;
  int rx2_freq_hz = phy::kBeaconFreqHz;
  int rx2_datarate = 0;
  ClassBConfig class_b_cfg;
};

struct DeviceObserver {
  std::function<void(Micros, const frames::Frame&, const phy::TxParams&)>
      uplink_sent;
  // Frame arrives revealed; in_rx2 tells which window delivered it.
  std::function<void(Micros, sim::NodeId source, const frames::Frame&,
                     bool in_rx2)>
      downlink_accepted;
  std::function<void(Micros, sim::NodeId source, frames::VerifyStatus)>
      downlink_rejected;
  std::function<void(int new_dr, int new_tp_index)> settings_changed;
  // One call per beacon window once locked; seq counts windows from lock.
  std::function<void(int seq, const BeaconWindowOutcome&,
                     const std::optional<ObservedBeacon>&)>
      beacon_window;
  // One call per beacon period with a scheduled ping slot.
  std::function<void(int seq, bool received, sim::NodeId source)> ping_result;
};

// Event-driven Class A/B end device. All state transitions run in engine
// event context; the pure helpers above carry the protocol rules.
class EndDevice {
 public:
  EndDevice(sim::Engine& engine, sim::RadioMedium& radio, sim::NodeId node,
            DeviceConfig cfg);

  void start();

  // Builds the next uplink and advances the session counter; channel drawn
  // uniformly from the active channel set, nbTrans pinned to 1.
  std::pair<frames::Frame, phy::TxParams> next_uplink(Micros now);

  const AdrState& adr() const { return adr_; }
  const ClassBState& class_b() const { return classb_; }
  const frames::DeviceSession& session() const { return session_; }
  const DeviceConfig& config() const { return cfg_; }
  sim::NodeId node() const { return node_; }
  DeviceObserver& observer() { return obs_; }
  int uplinks_sent() const { return uplinks_sent_; }

 private:
  void do_uplink();
  void open_rx2_if_idle();
  void end_transaction();
  void handle_reception(const sim::Reception& r);
  void handle_class_a_downlink(const sim::Reception& r, frames::Frame frame,
                               bool in_rx2);
  void handle_ping(const sim::Reception& r, frames::Frame frame);
  void process_downlink_commands(const frames::Frame& revealed,
                                 sim::NodeId source);
  void begin_acquisition();
  void schedule_beacon_window();
  void close_beacon_window(Micros expected_snapshot);
  void schedule_ping_slots();
  void enter_beaconless(Micros now);
  phy::TxParams beacon_params() const;

  sim::Engine& engine_;
  sim::RadioMedium& radio_;
  sim::NodeId node_;
  DeviceConfig cfg_;
  frames::DeviceSession session_;
  AdrState adr_;
  ClassBState classb_;
  std::uint16_t active_ch_mask_;
  std::optional<frames::LinkAdrReq> last_acked_req_;
  std::vector<frames::MacCommand> pending_answers_;
  DeviceObserver obs_;

  // Class A transaction bookkeeping
  std::optional<Micros> rx1_open_at_;
  std::optional<Micros> rx2_open_at_;
  int rx1_freq_ = 0;
  int rx1_sf_ = 0;
  bool rx1_busy_ = false;
  bool downlink_this_txn_ = false;
  int uplinks_sent_ = 0;

  // Class B bookkeeping
  std::vector<ObservedBeacon> window_candidates_;
  bool beacon_window_open_ = false;
  int beacon_seq_ = 0;
  std::vector<Micros> current_slots_;
  bool ping_received_ = false;
  int ping_seq_ = 0;
};

}  // namespace lorasim::device
