#include "lorasim/attacker.hpp"

#include <cmath>
#include <stdexcept>

namespace lorasim::attacker {

int silence_timeout_uplinks(int n_channels) {
  if (n_channels < 2) throw std::invalid_argument("needs at least 2 channels");
  const double ratio =
      (static_cast<double>(n_channels) - 1.0) / static_cast<double>(n_channels);
  return static_cast<int>(std::ceil(std::log(0.01) / std::log(ratio)));
}

bool rx2_feasible(phy::DataRate dr_up, std::size_t uplink_len,
                  std::size_t downlink_len, Micros uplink_replay_delay,
                  Micros downlink_replay_delay, Micros rx2_gap) {
  if (uplink_len < 12 || downlink_len < 12) {
    throw std::invalid_argument("data frames are at least 12 bytes");
  }
  const auto p = phy::TxParams::uplink(dr_up, 868'100'000);
  const Micros t_uplink = phy::time_on_air(p, uplink_len);
  const Micros t_downlink = phy::time_on_air(p, downlink_len);
  return uplink_replay_delay + t_uplink + t_downlink + downlink_replay_delay <=
         rx2_gap;
}

namespace {

// Header fields (DevAddr, FCtrl) parsed from an on-air frame; full decode
// is fine here since the attacker only acts on the cleartext header.
std::optional<frames::Frame> peek_data_frame(const sim::Transmission& tx) {
  if (tx.kind != sim::TxKind::data) return std::nullopt;
  for (auto dir : {frames::Direction::uplink, frames::Direction::downlink}) {
    try {
      return frames::decode(tx.payload, dir);
    } catch (const frames::DecodeError&) {
    }
  }
  return std::nullopt;
}

}  // namespace

Wormhole::Wormhole(sim::Engine& engine, sim::RadioMedium& radio,
                   WormholeConfig cfg)
    : engine_(engine), radio_(radio), cfg_(cfg) {}

void Wormhole::activate() {
  if (active_) return;
  active_ = true;
  ++activation_;
  const int sf = phy::DataRate(cfg_.sniff_dr).sf();
  radio_.listen(cfg_.entry, cfg_.sniff_freq_hz, sf);
  radio_.listen(cfg_.exit, cfg_.sniff_freq_hz, sf);
  radio_.set_reception_handler(
      cfg_.entry, [this](const sim::Reception& r) { handle_entry_rx(r); });
  radio_.set_reception_handler(
      cfg_.exit, [this](const sim::Reception& r) { handle_exit_rx(r); });
  radio_.set_preamble_handler(
      cfg_.exit, [this](const sim::Transmission& tx) { handle_exit_preamble(tx); });
  ed_uplink_end_.reset();
  awaiting_downlink_ = false;
}

void Wormhole::deactivate() {
  if (!active_) return;
  active_ = false;
  ++activation_;
  radio_.stop_listening(cfg_.entry);
  radio_.stop_listening(cfg_.exit);
  radio_.set_reception_handler(cfg_.entry, nullptr);
  radio_.set_reception_handler(cfg_.exit, nullptr);
  radio_.set_preamble_handler(cfg_.exit, nullptr);
}

void Wormhole::exit_listen_from(Micros at) {
  const auto gen = activation_;
  const int sf = phy::DataRate(cfg_.sniff_dr).sf();
  engine_.schedule_at(at, [this, gen, sf]() {
    if (gen != activation_) return;
    radio_.listen(cfg_.exit, cfg_.sniff_freq_hz, sf);
  });
}

void Wormhole::handle_exit_preamble(const sim::Transmission& tx) {
  if (!active_ || tx.source == cfg_.entry || tx.source == cfg_.exit) return;
  const auto header = peek_data_frame(tx);
  if (!header || header->direction != frames::Direction::uplink) return;
  if (header->dev_addr != cfg_.target_dev_addr) return;
  if (!cfg_.jam_enabled) return;
  if (should_jam && !should_jam(*header)) return;

  radio_.stop_listening(cfg_.exit);
  sim::Transmission jam;
  jam.source = cfg_.exit;
  jam.params = tx.params;
  jam.params.power_dbm = cfg_.jam_power_dbm;
  jam.start = engine_.now();
  jam.duration = tx.end() - engine_.now() + 2 * phy::symbol_duration(tx.params);
  jam.kind = sim::TxKind::jam;
  radio_.transmit(std::move(jam));
  ++stats_.jams_fired;
  engine_.trace(radio_.node_name(cfg_.exit), "jam",
                "target=" + std::to_string(header->dev_addr));
}

void Wormhole::handle_entry_rx(const sim::Reception& r) {
  if (!active_ || !r.decoded) return;
  if (r.tx->source == cfg_.entry || r.tx->source == cfg_.exit) return;
  const auto frame = peek_data_frame(*r.tx);
  if (!frame || frame->direction != frames::Direction::uplink) return;
  if (frame->dev_addr != cfg_.target_dev_addr) return;

  ++stats_.uplinks_sniffed;
  const Micros uplink_end = r.tx->end();
  if (on_uplink_sniffed) on_uplink_sniffed(*frame, r.tx->params, uplink_end);

  const bool forward = !should_forward || should_forward(*frame);
  if (!forward) {
    exit_listen_from(uplink_end + 2 * phy::symbol_duration(r.tx->params) + 1);
    return;
  }

  if (cfg_.variant == WormholeVariant::downlink_delayed && stored_downlink_) {
    // Deliver the stored downlink into this transaction's rx1, then push
    // the uplink on to the network server.
    const StoredDownlink stored = *stored_downlink_;
    stored_downlink_.reset();
    const Micros rx1_at = uplink_end + cfg_.rx1_delay;
    phy::TxParams dl_params =
        phy::TxParams::downlink(r.tx->params.datarate(), r.tx->params.freq_hz,
                                cfg_.replay_power_dbm);
    replay_downlink_from_entry(stored.bytes, dl_params, rx1_at);
    const Micros dl_end =
        rx1_at + phy::time_on_air(dl_params, stored.bytes.size());
    replay_uplink_from_exit(*r.tx, dl_end + cfg_.downlink_replay_delay);
  } else {
    replay_uplink_from_exit(*r.tx, uplink_end + cfg_.uplink_replay_delay);
  }
  ed_uplink_end_ = uplink_end;
  awaiting_downlink_ = cfg_.variant != WormholeVariant::unidirectional;
}

void Wormhole::replay_uplink_from_exit(const sim::Transmission& uplink,
                                       Micros at) {
  // The exit may still be listening (not every forwarded frame was jammed);
  // it retunes to transmit.
  const auto gen = activation_;
  engine_.schedule_at(at, [this, gen]() {
    if (gen != activation_) return;
    radio_.stop_listening(cfg_.exit);
  });
  sim::Transmission replay;
  replay.source = cfg_.exit;
  replay.params = uplink.params;
  replay.params.power_dbm = cfg_.replay_power_dbm;
  replay.start = at;
  replay.duration = uplink.duration;
  replay.payload = uplink.payload;  // byte-identical
  replay.kind = sim::TxKind::data;
  radio_.transmit(std::move(replay));
  ++stats_.uplinks_forwarded;
  exit_listen_from(at + uplink.duration + 1);
}

void Wormhole::replay_downlink_from_entry(
    const std::vector<std::uint8_t>& bytes, const phy::TxParams& params,
    Micros at) {
  const auto gen = activation_;
  engine_.schedule_at(at, [this, gen]() {
    if (gen != activation_) return;
    radio_.stop_listening(cfg_.entry);
  });
  sim::Transmission replay;
  replay.source = cfg_.entry;
  replay.params = params;
  replay.start = at;
  replay.duration = phy::time_on_air(params, bytes.size());
  replay.payload = bytes;
  replay.kind = sim::TxKind::data;
  const Micros end = at + replay.duration;
  radio_.transmit(std::move(replay));
  ++stats_.downlinks_replayed;
  const int sf = phy::DataRate(cfg_.sniff_dr).sf();
  engine_.schedule_at(end + 1, [this, gen, sf]() {
    if (gen != activation_) return;
    radio_.listen(cfg_.entry, cfg_.sniff_freq_hz, sf);
  });
}

void Wormhole::handle_exit_rx(const sim::Reception& r) {
  if (!active_ || !r.decoded) return;
  if (r.tx->source == cfg_.entry || r.tx->source == cfg_.exit) return;
  const auto frame = peek_data_frame(*r.tx);
  if (!frame) return;
  if (frame->direction != frames::Direction::downlink) return;
  if (frame->dev_addr != cfg_.target_dev_addr) return;
  if (!awaiting_downlink_) return;
  ++stats_.downlinks_captured;
  awaiting_downlink_ = false;

  switch (cfg_.variant) {
    case WormholeVariant::unidirectional:
      break;
    case WormholeVariant::rx2: {
      // Downlink transmission parameters are not integrity-protected, so
      // the copy moves to the rx2 channel and data rate.
      const Micros ready = r.tx->end() + cfg_.downlink_replay_delay;
      const Micros rx2_open = *ed_uplink_end_ + cfg_.rx1_delay + cfg_.rx2_gap;
      if (ready <= rx2_open) {
        auto params = phy::TxParams::downlink(phy::DataRate(cfg_.rx2_datarate),
                                              cfg_.rx2_freq_hz,
                                              cfg_.replay_power_dbm);
        replay_downlink_from_entry(r.tx->payload, params, rx2_open);
      } else {
        ++stats_.downlinks_missed;
      }
      break;
    }
    case WormholeVariant::downlink_delayed:
      stored_downlink_ = StoredDownlink{r.tx->payload, r.tx->params};
      break;
  }
}

AdrSpoofer::AdrSpoofer(sim::Engine& engine, sim::RadioMedium& radio,
                       AdrSpoofConfig cfg)
    : engine_(engine), radio_(radio), cfg_(cfg) {}

void AdrSpoofer::start() {
  WormholeConfig wc = cfg_.link;
  wc.variant = cfg_.variant_override.value_or(
      cfg_.initial_dr <= 1 ? WormholeVariant::downlink_delayed
                           : WormholeVariant::rx2);
  wc.sniff_freq_hz = cfg_.observed_channel_hz;
  wc.sniff_dr = cfg_.initial_dr;
  wc.target_dev_addr = cfg_.target_dev_addr;
  wormhole_.emplace(engine_, radio_, wc);
  wormhole_->on_uplink_sniffed = [this](const frames::Frame&,
                                        const phy::TxParams& params, Micros) {
    if (phase_ != SpoofPhase::spoofing) return;
    last_sniff_ = engine_.now();
    arm_watchdog();
    if (params.datarate().index() == cfg_.target_dr) {
      // Already observing the target data rate: the switch happened.
      enter_retention();
      return;
    }
    if (wormhole_->stats().uplinks_forwarded >= cfg_.spoof_forward_limit) {
      enter_retention();
    }
  };
  wormhole_->activate();
  last_sniff_ = engine_.now();
  arm_watchdog();
}

void AdrSpoofer::arm_watchdog() {
  const auto gen = ++watchdog_gen_;
  const Micros timeout =
      cfg_.uplink_period *
      static_cast<Micros>(silence_timeout_uplinks(cfg_.n_channels));
  engine_.schedule_in(timeout, [this, gen]() {
    if (gen != watchdog_gen_ || phase_ != SpoofPhase::spoofing) return;
    enter_retention();
  });
}

void AdrSpoofer::enter_retention() {
  if (phase_ != SpoofPhase::spoofing) return;
  spoof_stats_ = wormhole_->stats();
  wormhole_->deactivate();
  phase_ = SpoofPhase::retention;
  retention_at_ = engine_.now();
  ++watchdog_gen_;
  engine_.trace(radio_.node_name(cfg_.link.entry), "phase", "retention");

  WormholeConfig wc = cfg_.link;
  wc.variant = WormholeVariant::rx2;
  wc.sniff_freq_hz = cfg_.observed_channel_hz;
  wc.sniff_dr = cfg_.target_dr;
  wc.target_dev_addr = cfg_.target_dev_addr;
  wormhole_.emplace(engine_, radio_, wc);
  // Suppress everything except transactions demanding a counter reset.
  wormhole_->should_jam = [](const frames::Frame& header) {
    return !header.flags.adr_ack_req;
  };
  wormhole_->should_forward = [](const frames::Frame& header) {
    return header.flags.adr_ack_req;
  };
  wormhole_->activate();
}

BeaconDrifter::BeaconDrifter(sim::Engine& engine, sim::RadioMedium& radio,
                             BeaconDriftConfig cfg)
    : engine_(engine), radio_(radio), cfg_(cfg) {
  const auto params = phy::TxParams::beacon();
  const Micros beacon_air = phy::time_on_air(params, phy::kBeaconFrameBytes);
  total_target_ = cfg_.total_target_shift != 0
                      ? cfg_.total_target_shift
                      : beacon_air + 5 * phy::symbol_duration(params);
}

Micros BeaconDrifter::shift_for(int k) const {
  const Micros step = static_cast<Micros>(cfg_.step_symbols) *
                      phy::symbol_duration(phy::TxParams::beacon());
  const Micros want = static_cast<Micros>(k) * step;
  return want < total_target_ ? want : total_target_;
}

int BeaconDrifter::drifting_periods() const {
  const Micros step = static_cast<Micros>(cfg_.step_symbols) *
                      phy::symbol_duration(phy::TxParams::beacon());
  return static_cast<int>((total_target_ + step - 1) / step);
}

void BeaconDrifter::start() {
  radio_.set_reception_handler(
      cfg_.node, [this](const sim::Reception& r) { handle_rx(r); });
  engine_.schedule_at(cfg_.listen_from, [this]() {
    radio_.listen(cfg_.node, phy::kBeaconFreqHz, phy::TxParams::beacon().sf);
  });
}

void BeaconDrifter::handle_rx(const sim::Reception& r) {
  if (phase_ != DriftPhase::syncing) return;
  if (!r.decoded || r.tx->kind != sim::TxKind::beacon) return;
  if (r.tx->source == cfg_.node) return;
  frames::Frame f;
  try {
    f = frames::decode(r.tx->payload, frames::Direction::beacon);
  } catch (const frames::DecodeError&) {
    return;
  }
  sync_arrival_ = r.tx->start;
  sync_payload_ = *f.beacon;
  radio_.stop_listening(cfg_.node);
  phase_ = DriftPhase::drifting;
  engine_.trace(radio_.node_name(cfg_.node), "beacon-sync",
                "gps=" + std::to_string(sync_payload_.gps_time_s));
  const Micros first = sync_arrival_ + phy::kBeaconPeriod - shift_for(1);
  engine_.schedule_at(first, [this]() { emit_spoofed_beacon(); });
}

void BeaconDrifter::emit_spoofed_beacon() {
  const int k = next_index_;
  accumulated_shift_ = shift_for(k);
  phase_ = accumulated_shift_ >= total_target_ ? DriftPhase::holding
                                               : DriftPhase::drifting;

  frames::Frame f;
  f.direction = frames::Direction::beacon;
  frames::BeaconPayload p;
  p.gps_time_s = sync_payload_.gps_time_s +
                 static_cast<std::uint32_t>(k * (phy::kBeaconPeriod / kSecond));
  p.gw_info = cfg_.gw_info_tag;
  f.beacon = p;
  auto bytes = frames::encode(f);

  const auto params = phy::TxParams::beacon(cfg_.power_dbm);
  sim::Transmission tx;
  tx.source = cfg_.node;
  tx.params = params;
  tx.start = engine_.now();
  tx.duration = phy::time_on_air(params, bytes.size());
  tx.payload = std::move(bytes);
  tx.kind = sim::TxKind::beacon;
  const Micros beacon_end = tx.start + tx.duration;
  radio_.transmit(std::move(tx));
  ++beacons_sent_;

  if (cfg_.jam_payload_bytes > 0) {
    // Random bytes appended past the fixed implicit-header length: extends
    // channel occupancy, discarded by every receiver.
    sim::Transmission jam;
    jam.source = cfg_.node;
    jam.params = params;
    jam.start = beacon_end;
    jam.duration =
        phy::time_on_air(params,
                         phy::kBeaconFrameBytes + cfg_.jam_payload_bytes) -
        phy::time_on_air(params, phy::kBeaconFrameBytes);
    jam.kind = sim::TxKind::jam;
    radio_.transmit(std::move(jam));
  }

  next_index_ = k + 1;
  const Micros next =
      sync_arrival_ + static_cast<Micros>(k + 1) * phy::kBeaconPeriod -
      shift_for(k + 1);
  engine_.schedule_at(next, [this]() { emit_spoofed_beacon(); });
}

}  // namespace lorasim::attacker
