#include "lorasim/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace lorasim::sim {

Engine::Engine(std::uint64_t seed) : seed_(seed), rng_(seed) {}

void Engine::schedule_at(Micros t, std::function<void()> action) {
  if (t < now_) throw std::logic_error("event scheduled into the past");
  queue_.push(Event{t, next_seq_++, std::move(action)});
}

std::size_t Engine::run_until(Micros t_end) {
  std::size_t count = 0;
  while (!queue_.empty() && queue_.top().time <= t_end) {
    // priority_queue::top is const; move out via const_cast-free copy of the
    // handle then pop. The action is moved from a temporary copy.
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    now_ = ev.time;
    ++count;
    ev.action();
  }
  now_ = std::max(now_, t_end);
  return count;
}

double Engine::uniform() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

std::uint32_t Engine::uniform_int(std::uint32_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int needs n > 0");
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng_();
  } while (v >= limit);
  return static_cast<std::uint32_t>(v % n);
}

double Engine::gaussian(double mean, double sigma) {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return mean + sigma * std::sqrt(-2.0 * std::log(u1)) *
                    std::cos(2.0 * std::numbers::pi * u2);
}

void Engine::trace(const std::string& node, const std::string& kind,
                   const std::string& detail) {
  std::string line = "t=" + std::to_string(now_) + " node=" + node + " " +
                     kind + " " + detail;
  for (unsigned char c : line) {
    trace_hash_ ^= c;
    trace_hash_ *= 1099511628211ULL;
  }
  trace_hash_ ^= '\n';
  trace_hash_ *= 1099511628211ULL;
  if (trace_store_) trace_lines_.push_back(std::move(line));
}

void ChannelModel::set_link(NodeId from, NodeId to, double db) {
  if (db < 0) throw std::invalid_argument("attenuation must be >= 0 dB");
  attenuation_db[{from, to}] = db;
}

void ChannelModel::set_symmetric(NodeId a, NodeId b, double db) {
  set_link(a, b, db);
  set_link(b, a, db);
}

std::optional<double> ChannelModel::attenuation(NodeId from, NodeId to) const {
  auto it = attenuation_db.find({from, to});
  if (it == attenuation_db.end()) return std::nullopt;
  return it->second;
}

RadioMedium::RadioMedium(Engine& engine, ChannelModel channel)
    : engine_(engine), channel_(std::move(channel)) {}

NodeId RadioMedium::add_node(std::string name, bool multi_channel) {
  Node n;
  n.name = std::move(name);
  n.multi_channel = multi_channel;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const std::string& RadioMedium::node_name(NodeId id) const {
  return nodes_.at(id).name;
}

void RadioMedium::listen(NodeId node, int freq_hz, int sf) {
  listen_window(node, freq_hz, sf, engine_.now(),
                std::numeric_limits<Micros>::max() - engine_.now());
}

void RadioMedium::listen_window(NodeId node, int freq_hz, int sf, Micros open,
                                Micros duration) {
  Node& n = nodes_.at(node);
  if (open < engine_.now()) throw std::logic_error("listen window in the past");
  const Micros close = duration > std::numeric_limits<Micros>::max() - open
                           ? std::numeric_limits<Micros>::max()
                           : open + duration;
  if (!n.multi_channel) {
    for (const auto& s : n.spans) {
      if (open < s.close && s.open < close) {
        throw std::logic_error("overlapping listen request on node " + n.name);
      }
    }
  }
  n.spans.push_back(ListenSpan{freq_hz, sf, open, close});
}

void RadioMedium::stop_listening(NodeId node) {
  Node& n = nodes_.at(node);
  const Micros t = engine_.now();
  for (auto& s : n.spans) {
    if (s.open <= t && t < s.close) s.close = t;
    if (s.open > t) s.close = s.open;  // cancel scheduled windows
  }
}

bool RadioMedium::is_listening(NodeId node) const {
  const Node& n = nodes_.at(node);
  const Micros t = engine_.now();
  return std::any_of(n.spans.begin(), n.spans.end(), [&](const ListenSpan& s) {
    return s.open <= t && t < s.close;
  });
}

void RadioMedium::set_preamble_handler(
    NodeId node, std::function<void(const Transmission&)> h) {
  nodes_.at(node).on_preamble = std::move(h);
}

void RadioMedium::set_reception_handler(
    NodeId node, std::function<void(const Reception&)> h) {
  nodes_.at(node).on_reception = std::move(h);
}

bool RadioMedium::span_matches(const Node& n, const ListenSpan& s,
                               const Transmission& tx) const {
  if (n.multi_channel) return true;
  return s.freq_hz == tx.params.freq_hz && s.sf == tx.params.sf;
}

const RadioMedium::ListenSpan* RadioMedium::listening_span_at(
    const Node& n, const Transmission& tx, Micros t) const {
  if (n.multi_channel) {
    static const ListenSpan any{0, 0, 0, std::numeric_limits<Micros>::max()};
    return &any;
  }
  for (const auto& s : n.spans) {
    if (s.open <= t && t < s.close && span_matches(n, s, tx)) return &s;
  }
  return nullptr;
}

std::uint64_t RadioMedium::transmit(Transmission tx) {
  if (tx.source < 0 || tx.source >= static_cast<NodeId>(nodes_.size())) {
    throw std::invalid_argument("transmission from unknown node");
  }
  if (tx.start < engine_.now()) {
    throw std::logic_error("transmission start in the past");
  }
  tx.id = next_tx_id_++;
  auto shared = std::make_shared<Transmission>(std::move(tx));
  const std::uint64_t id = shared->id;
  engine_.schedule_at(shared->start,
                      [this, shared]() { begin_transmission(shared); });
  return id;
}

void RadioMedium::begin_transmission(std::shared_ptr<Transmission> tx) {
  // Stable jitter: one draw per node in id order, regardless of who listens.
  auto& jit = jitter_[tx->id];
  jit.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    jit.push_back(engine_.gaussian(0.0, channel_.snr_jitter_sigma_db));
  }
  log_.push_back(tx);
  engine_.trace(nodes_[tx->source].name, "tx",
                "freq=" + std::to_string(tx->params.freq_hz) +
                    " sf=" + std::to_string(tx->params.sf) +
                    " len=" + std::to_string(tx->payload.size()) +
                    " dur=" + std::to_string(tx->duration));

  const Micros preamble_at =
      tx->start + static_cast<Micros>(tx->params.preamble_symbols) *
                      phy::symbol_duration(tx->params);
  engine_.schedule_at(preamble_at, [this, tx]() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (static_cast<NodeId>(i) == tx->source || !n.on_preamble) continue;
      const auto att = channel_.attenuation(tx->source, static_cast<NodeId>(i));
      if (!att) continue;
      const double snr = tx->params.power_dbm - *att -
                         channel_.noise_floor_dbm + jitter_.at(tx->id)[i];
      if (snr < phy::required_snr(phy::DataRate::from_sf(tx->params.sf))) {
        continue;
      }
      const ListenSpan* s = listening_span_at(n, *tx, tx->start);
      if (!s || s->close < engine_.now()) continue;
      n.on_preamble(*tx);
    }
  });
  engine_.schedule_at(tx->end(), [this, tx]() { finish_transmission(tx); });
}

void RadioMedium::finish_transmission(const std::shared_ptr<Transmission>& tx) {
  // Candidate set: everything overlapping this frame on its frequency,
  // independent of anyone's listen state (interference is physics).
  std::vector<std::shared_ptr<Transmission>> overlapping;
  for (const auto& other : log_) {
    if (other->params.freq_hz != tx->params.freq_hz) continue;
    if (other->start < tx->end() && tx->start < other->end()) {
      overlapping.push_back(other);
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const NodeId rx_node = static_cast<NodeId>(i);
    const Node& n = nodes_[i];
    if (rx_node == tx->source || !n.on_reception) continue;
    if (!listening_span_at(n, *tx, tx->start)) continue;
    const auto att = channel_.attenuation(tx->source, rx_node);
    if (!att) continue;

    std::vector<phy::ReceptionCandidate> cands;
    std::size_t subject = 0;
    double subject_power = 0, subject_snr = 0;
    for (const auto& other : overlapping) {
      const auto link = channel_.attenuation(other->source, rx_node);
      if (!link) continue;  // inaudible here, no interference
      phy::ReceptionCandidate c;
      c.sf = other->params.sf;
      c.rx_power_dbm = other->params.power_dbm - *link;
      c.rx_snr_db = c.rx_power_dbm - channel_.noise_floor_dbm +
                    jitter_.at(other->id)[i];
      c.start = other->start;
      c.end = other->end();
      c.is_jam = other->kind == TxKind::jam;
      c.is_beacon = other->kind == TxKind::beacon;
      if (other->id == tx->id) {
        subject = cands.size();
        subject_power = c.rx_power_dbm;
        subject_snr = c.rx_snr_db;
      }
      cands.push_back(c);
    }
    const auto decodable = phy::resolve_reception(cands);
    Reception r;
    r.tx = tx;
    r.rx_power_dbm = subject_power;
    r.rx_snr_db = subject_snr;
    r.decoded = decodable[subject];
    engine_.trace(n.name, r.decoded ? "rx" : "rx-jammed",
                  "from=" + nodes_[tx->source].name +
                      " snr=" + std::to_string(r.rx_snr_db));
    n.on_reception(r);
  }

  prune(tx->start);
}

void RadioMedium::prune(Micros before) {
  // Keep a generous horizon so late deliveries still find their overlaps.
  const Micros horizon = 10 * kSecond;
  const Micros cutoff = before > horizon ? before - horizon : 0;
  std::erase_if(log_, [&](const std::shared_ptr<Transmission>& t) {
    const bool dead = t->end() < cutoff;
    if (dead) jitter_.erase(t->id);
    return dead;
  });
}

}  // namespace lorasim::sim
