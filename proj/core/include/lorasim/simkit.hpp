#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lorasim/phy.hpp"
#include "lorasim/time.hpp"

namespace lorasim::sim {

using NodeId = int;

// Deterministic discrete-event engine. Events run in (time, seq) order where
// seq is the insertion counter, so equal-time events execute in the order
// they were scheduled. All randomness flows through the engine RNG; the
// event trace hash is a pure function of (scenario, seed).
class Engine {
 public:
  explicit Engine(std::uint64_t seed);

  Micros now() const { return now_; }
  std::uint64_t seed() const { return seed_; }

  // Handlers may only schedule at or after the current time.
  void schedule_at(Micros t, std::function<void()> action);
  void schedule_in(Micros dt, std::function<void()> action) {
    schedule_at(now_ + dt, std::move(action));
  }

  // Runs every event with time <= t_end; returns the number executed.
  std::size_t run_until(Micros t_end);

  double uniform();                     // [0, 1)
  std::uint32_t uniform_int(std::uint32_t n);  // [0, n)
  // Box-Muller over the engine RNG; std::normal_distribution is avoided so
  // draw sequences are identical across standard libraries.
  double gaussian(double mean, double sigma);

  void set_trace_enabled(bool on) { trace_store_ = on; }
  void trace(const std::string& node, const std::string& kind,
             const std::string& detail);
  std::uint64_t trace_hash() const { return trace_hash_; }
  const std::vector<std::string>& trace_lines() const { return trace_lines_; }

 private:
  struct Event {
    Micros time;
    std::uint64_t seq;
    std::function<void()> action;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  Micros now_ = 0;
  std::uint64_t seed_;
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::mt19937_64 rng_;
  bool trace_store_ = false;
  std::uint64_t trace_hash_ = 1469598103934665603ULL;  // FNV-1a basis
  std::vector<std::string> trace_lines_;
};

enum class TxKind : std::uint8_t { data, beacon, jam };

// An emission placed on the virtual channel.
struct Transmission {
  NodeId source = -1;
  phy::TxParams params;
  Micros start = 0;
  Micros duration = 0;
  std::vector<std::uint8_t> payload;
  TxKind kind = TxKind::data;
  std::uint64_t id = 0;

  Micros end() const { return start + duration; }
};

struct Reception {
  std::shared_ptr<const Transmission> tx;
  double rx_power_dbm = 0.0;
  double rx_snr_db = 0.0;
  bool decoded = false;  // false: observed but jammed / below capture
};

// Per-link attenuation plus receiver noise. Absent links attenuate
// infinitely (no delivery, no interference).
struct ChannelModel {
  std::map<std::pair<NodeId, NodeId>, double> attenuation_db;
  double noise_floor_dbm = -117.0;
  double snr_jitter_sigma_db = 1.0;

  void set_link(NodeId from, NodeId to, double db);
  void set_symmetric(NodeId a, NodeId b, double db);
  std::optional<double> attenuation(NodeId from, NodeId to) const;
};

// Shared medium: tracks who listens where, resolves overlapping
// transmissions per receiver with the phy capture rule, and delivers
// decoded frames (or jammed observations) at transmission end.
//
// Single-radio nodes hold one (freq, sf) configuration at a time and reject
// overlapping listen requests; gateways are multi-channel and exempt.
class RadioMedium {
 public:
  RadioMedium(Engine& engine, ChannelModel channel);

  NodeId add_node(std::string name, bool multi_channel = false);
  const std::string& node_name(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  ChannelModel& channel() { return channel_; }

  void listen(NodeId node, int freq_hz, int sf);
  void listen_window(NodeId node, int freq_hz, int sf, Micros open,
                     Micros duration);
  void stop_listening(NodeId node);
  bool is_listening(NodeId node) const;

  // Fires at preamble end for every compatible listener; the frame header
  // (DevAddr, FCtrl flags) is treated as readable from this point on.
  void set_preamble_handler(NodeId node,
                            std::function<void(const Transmission&)> h);
  void set_reception_handler(NodeId node,
                             std::function<void(const Reception&)> h);

  // tx.start may lie in the future; the medium schedules the emission.
  // Returns the transmission id.
  std::uint64_t transmit(Transmission tx);

 private:
  struct ListenSpan {
    int freq_hz;
    int sf;
    Micros open;
    Micros close;  // max() while open-ended
  };
  struct Node {
    std::string name;
    bool multi_channel = false;
    std::vector<ListenSpan> spans;
    std::function<void(const Transmission&)> on_preamble;
    std::function<void(const Reception&)> on_reception;
  };

  void begin_transmission(std::shared_ptr<Transmission> tx);
  void finish_transmission(const std::shared_ptr<Transmission>& tx);
  bool span_matches(const Node& n, const ListenSpan& s, const Transmission& tx) const;
  const ListenSpan* listening_span_at(const Node& n, const Transmission& tx,
                                      Micros t) const;
  void prune(Micros before);

  Engine& engine_;
  ChannelModel channel_;
  std::vector<Node> nodes_;
  std::uint64_t next_tx_id_ = 1;
  std::vector<std::shared_ptr<Transmission>> log_;
  // Jitter per (transmission, receiver), drawn in node order at emission
  // start so draw order never depends on listen state.
  std::unordered_map<std::uint64_t, std::vector<double>> jitter_;
};

}  // namespace lorasim::sim
