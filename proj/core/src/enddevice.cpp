#include "lorasim/enddevice.hpp"

#include <algorithm>
#include <cmath>

#include "lorasim/siphash.hpp"

namespace lorasim::device {

void on_transaction_end(AdrState& s, bool received_downlink) {
  if (received_downlink) {
    s.adr_ack_cnt = 0;
    return;
  }
  s.adr_ack_cnt += 1;
  const int threshold = s.adr_ack_limit + s.adr_ack_delay;
  if (s.adr_ack_cnt >= threshold &&
      (s.adr_ack_cnt - threshold) % s.adr_ack_delay == 0) {
    if (s.current_tp_index != 0) {
      s.current_tp_index = 0;  // full power restore counts as one step
    } else if (s.current_dr > phy::DataRate::kMin) {
      s.current_dr -= 1;
    }
  }
}

std::optional<frames::LinkAdrAns> process_link_adr_req(
    AdrState& s, std::optional<frames::LinkAdrReq>& last_acked,
    const frames::LinkAdrReq& req, std::uint16_t enabled_ch_mask,
    std::uint16_t* active_ch_mask) {
  frames::LinkAdrAns ans;
  ans.dr_ok = req.datarate >= phy::DataRate::kMin &&
              req.datarate <= phy::DataRate::kMax;
  ans.power_ok = req.tp_index >= 0 && req.tp_index <= kMaxTpIndex;
  ans.ch_ok = req.ch_mask != 0 && (req.ch_mask & ~enabled_ch_mask) == 0 &&
              req.nb_trans >= 1;
  const bool duplicate = last_acked && *last_acked == req;
  if (ans.accepted()) {
    s.current_dr = req.datarate;
    s.current_tp_index = req.tp_index;
    if (active_ch_mask) *active_ch_mask = req.ch_mask;
  }
  if (duplicate) return std::nullopt;
  last_acked = req;
  return ans;
}

BeaconWindowOutcome on_beacon_window(ClassBState& s, const ClassBConfig& cfg,
                                     Micros now,
                                     const std::optional<ObservedBeacon>& obs) {
  BeaconWindowOutcome out;
  const Micros sym = phy::symbol_duration(phy::TxParams::beacon());
  const Micros tolerance =
      static_cast<Micros>(s.window_guard_symbols * static_cast<double>(sym));
  const bool in_window =
      obs && (s.mode == ClassBMode::acquiring ||
              abs_diff(obs->arrival, s.expected_beacon_time) <= tolerance);
  if (in_window) {
    s.mode = ClassBMode::locked;
    s.expected_beacon_time = obs->arrival + kBeaconPeriod;
    s.window_guard_symbols = cfg.window_guard_symbols;
    s.beaconless_since.reset();
    s.last_beacon_payload = obs->payload;
    s.last_beacon_arrival = obs->arrival;
    out.accepted = true;
    return out;
  }
  if (s.mode == ClassBMode::locked) {
    s.mode = ClassBMode::beaconless;
    s.beaconless_since = now;
  }
  if (s.mode == ClassBMode::beaconless) {
    s.window_guard_symbols = std::min(
        s.window_guard_symbols + cfg.widen_per_miss_symbols,
        cfg.guard_cap_symbols);
    // Extrapolate the grid from the last beacon actually seen.
    s.expected_beacon_time += kBeaconPeriod;
    s.last_beacon_arrival += kBeaconPeriod;
    s.last_beacon_payload.gps_time_s += kBeaconPeriod / kSecond;
    if (now - *s.beaconless_since >= cfg.beaconless_timeout) {
      s.mode = ClassBMode::class_a;
      s.beaconless_since.reset();
      out.reverted_to_class_a = true;
    }
  }
  return out;
}

std::vector<Micros> ping_slot_times(Micros beacon_arrival,
                                    const frames::BeaconPayload& payload,
                                    std::uint32_t dev_addr,
                                    int slots_per_period) {
  static constexpr std::array<std::uint8_t, 16> kSlotKey = {
      'p', 'i', 'n', 'g', '-', 's', 'l', 'o', 't', '-', 'p', 'r', 'f',
      0, 0, 0};
  std::vector<Micros> slots;
  slots.reserve(slots_per_period);
  std::array<std::uint8_t, 9> msg{};
  for (int i = 0; i < 4; ++i) {
    msg[i] = static_cast<std::uint8_t>(payload.gps_time_s >> (8 * i));
    msg[4 + i] = static_cast<std::uint8_t>(dev_addr >> (8 * i));
  }
  for (int slot = 0; slot < slots_per_period; ++slot) {
    msg[8] = static_cast<std::uint8_t>(slot);
    const std::uint64_t h = siphash24(kSlotKey, msg);
    const Micros offset = kBeaconReserved +
                          static_cast<Micros>(h % kPingSlotCount) * kPingSlotUnit;
    slots.push_back(beacon_arrival + offset);
  }
  std::sort(slots.begin(), slots.end());
  return slots;
}

double widened_by_symbols(const ClassBState& s, const ClassBConfig& cfg) {
  return std::max(0.0, s.window_guard_symbols - cfg.window_guard_symbols);
}

bool ping_slot_timing_ok(const ClassBState& s, const ClassBConfig& cfg,
                         std::span<const Micros> slots, Micros tx_start) {
  if (s.mode != ClassBMode::locked && s.mode != ClassBMode::beaconless) {
    return false;
  }
  const Micros sym = phy::symbol_duration(phy::TxParams::beacon());
  const double guard = cfg.ping_slot_guard_symbols + widened_by_symbols(s, cfg);
  const Micros tolerance = static_cast<Micros>(guard * static_cast<double>(sym));
  return std::any_of(slots.begin(), slots.end(), [&](Micros slot) {
    return abs_diff(tx_start, slot) <= tolerance;
  });
}

EndDevice::EndDevice(sim::Engine& engine, sim::RadioMedium& radio,
                     sim::NodeId node, DeviceConfig cfg)
    : engine_(engine),
      radio_(radio),
      node_(node),
      cfg_(std::move(cfg)),
      session_(frames::DeviceSession::derive(cfg_.dev_addr,
                                             cfg_.session_secret)) {
  adr_.adr_ack_limit = cfg_.adr_ack_limit;
  adr_.adr_ack_delay = cfg_.adr_ack_delay;
  adr_.current_dr = cfg_.initial_datarate;
  adr_.current_tp_index = cfg_.initial_tp_index;
  classb_.window_guard_symbols = cfg_.class_b_cfg.window_guard_symbols;
  active_ch_mask_ =
      static_cast<std::uint16_t>((1u << cfg_.channels_hz.size()) - 1);
  radio_.set_reception_handler(node_,
                               [this](const sim::Reception& r) { handle_reception(r); });
}

void EndDevice::start() {
  if (cfg_.uplink_period > 0) {
    engine_.schedule_at(cfg_.first_uplink_at, [this]() { do_uplink(); });
  }
  if (cfg_.class_b) begin_acquisition();
}

phy::TxParams EndDevice::beacon_params() const { return phy::TxParams::beacon(); }

std::pair<frames::Frame, phy::TxParams> EndDevice::next_uplink(Micros) {
  frames::Frame f;
  f.direction = frames::Direction::uplink;
  f.dev_addr = cfg_.dev_addr;
  f.fcnt = ++session_.fcnt_up;
  f.flags.adr = cfg_.adr;
  f.flags.adr_ack_req = cfg_.adr && adr_ack_requested(adr_);
  f.flags.class_b = classb_.mode == ClassBMode::locked ||
                    classb_.mode == ClassBMode::beaconless;
  f.fopts = frames::encode_mac_commands(pending_answers_);
  pending_answers_.clear();
  if (cfg_.app_payload_bytes > 0) {
    f.fport = cfg_.app_fport;
    f.frm_payload.resize(cfg_.app_payload_bytes);
    for (std::size_t i = 0; i < f.frm_payload.size(); ++i) {
      f.frm_payload[i] = static_cast<std::uint8_t>(f.fcnt + i);
    }
  }

  std::vector<int> active;
  for (std::size_t i = 0; i < cfg_.channels_hz.size(); ++i) {
    if (active_ch_mask_ & (1u << i)) active.push_back(cfg_.channels_hz[i]);
  }
  if (active.empty()) active = cfg_.channels_hz;
  const int freq = active[engine_.uniform_int(static_cast<std::uint32_t>(active.size()))];
  auto params = phy::TxParams::uplink(phy::DataRate(adr_.current_dr), freq,
                                      tp_index_to_dbm(adr_.current_tp_index));
  return {std::move(f), params};
}

void EndDevice::do_uplink() {
  auto [frame, params] = next_uplink(engine_.now());
  frame = frames::conceal(std::move(frame), session_, cfg_.policy);
  frame.mic = frames::compute_mic(session_, frame, params, cfg_.policy);
  auto bytes = frames::encode(frame);
  const Micros duration = phy::time_on_air(params, bytes.size());

  sim::Transmission tx;
  tx.source = node_;
  tx.params = params;
  tx.start = engine_.now();
  tx.duration = duration;
  tx.payload = std::move(bytes);
  tx.kind = sim::TxKind::data;
  radio_.transmit(std::move(tx));
  ++uplinks_sent_;
  if (obs_.uplink_sent) obs_.uplink_sent(engine_.now(), frame, params);

  const Micros end = engine_.now() + duration;
  rx1_open_at_ = end + cfg_.rx1_delay;
  rx2_open_at_ = *rx1_open_at_ + cfg_.rx2_gap;
  rx1_freq_ = params.freq_hz;
  rx1_sf_ = params.sf;
  rx1_busy_ = false;
  downlink_this_txn_ = false;

  const Micros rx1_dur = 8 * phy::symbol_duration(params);
  radio_.listen_window(node_, params.freq_hz, params.sf, *rx1_open_at_, rx1_dur);
  engine_.schedule_at(*rx2_open_at_, [this]() { open_rx2_if_idle(); });
  engine_.schedule_at(*rx2_open_at_ + 4 * kSecond, [this]() { end_transaction(); });
  engine_.schedule_at(engine_.now() + cfg_.uplink_period, [this]() { do_uplink(); });
}

void EndDevice::open_rx2_if_idle() {
  if (downlink_this_txn_ || rx1_busy_) return;
  auto params = phy::TxParams::downlink(phy::DataRate(cfg_.rx2_datarate),
                                        cfg_.rx2_freq_hz);
  const Micros dur = 8 * phy::symbol_duration(params);
  radio_.listen_window(node_, cfg_.rx2_freq_hz, params.sf, *rx2_open_at_, dur);
}

void EndDevice::end_transaction() {
  const int dr_before = adr_.current_dr;
  const int tp_before = adr_.current_tp_index;
  if (cfg_.adr) on_transaction_end(adr_, downlink_this_txn_);
  if ((adr_.current_dr != dr_before || adr_.current_tp_index != tp_before) &&
      obs_.settings_changed) {
    obs_.settings_changed(adr_.current_dr, adr_.current_tp_index);
  }
  rx1_open_at_.reset();
  rx2_open_at_.reset();
}

void EndDevice::handle_reception(const sim::Reception& r) {
  if (!r.decoded) return;
  if (r.tx->kind == sim::TxKind::beacon) {
    if (!cfg_.class_b) return;
    try {
      auto f = frames::decode(r.tx->payload, frames::Direction::beacon);
      ObservedBeacon ob{*f.beacon, r.tx->start, r.rx_snr_db};
      if (classb_.mode == ClassBMode::acquiring) {
        radio_.stop_listening(node_);
        auto outcome = on_beacon_window(classb_, cfg_.class_b_cfg,
                                        engine_.now(), ob);
        if (obs_.beacon_window) obs_.beacon_window(beacon_seq_, outcome, ob);
        ++beacon_seq_;
        schedule_ping_slots();
        schedule_beacon_window();
      } else if (beacon_window_open_) {
        window_candidates_.push_back(ob);
      }
    } catch (const frames::DecodeError&) {
    }
    return;
  }
  if (r.tx->kind != sim::TxKind::data) return;

  frames::Frame frame;
  try {
    frame = frames::decode(r.tx->payload, frames::Direction::downlink);
  } catch (const frames::DecodeError&) {
    return;
  }
  if (frame.dev_addr != cfg_.dev_addr) return;

  const bool in_rx1 = rx1_open_at_ && r.tx->start == *rx1_open_at_ &&
                      !downlink_this_txn_;
  const bool in_rx2 = rx2_open_at_ && r.tx->start == *rx2_open_at_ &&
                      !downlink_this_txn_;
  if (in_rx1 || in_rx2) {
    if (in_rx1) rx1_busy_ = true;
    handle_class_a_downlink(r, std::move(frame), in_rx2);
    return;
  }
  if (cfg_.class_b && !current_slots_.empty() && !ping_received_) {
    handle_ping(r, std::move(frame));
  }
}

void EndDevice::handle_class_a_downlink(const sim::Reception& r,
                                        frames::Frame frame, bool in_rx2) {
  const auto status = frames::verify(frame, session_, r.tx->params,
                                     cfg_.policy, session_.fcnt_up);
  if (status != frames::VerifyStatus::ok) {
    if (obs_.downlink_rejected) obs_.downlink_rejected(engine_.now(), r.tx->source, status);
    return;
  }
  session_.fcnt_down = frame.fcnt;
  downlink_this_txn_ = true;
  adr_.adr_ack_cnt = 0;
  auto revealed = frames::reveal(frame, session_, cfg_.policy);
  process_downlink_commands(revealed, r.tx->source);
  if (obs_.downlink_accepted) {
    obs_.downlink_accepted(engine_.now(), r.tx->source, revealed, in_rx2);
  }
}

void EndDevice::handle_ping(const sim::Reception& r, frames::Frame frame) {
  if (!ping_slot_timing_ok(classb_, cfg_.class_b_cfg, current_slots_,
                           r.tx->start)) {
    return;
  }
  const auto status =
      frames::verify(frame, session_, r.tx->params, cfg_.policy, std::nullopt);
  if (status != frames::VerifyStatus::ok) {
    if (obs_.downlink_rejected) obs_.downlink_rejected(engine_.now(), r.tx->source, status);
    return;
  }
  session_.fcnt_down = frame.fcnt;
  adr_.adr_ack_cnt = 0;
  ping_received_ = true;
  auto revealed = frames::reveal(frame, session_, cfg_.policy);
  process_downlink_commands(revealed, r.tx->source);
  if (obs_.ping_result) obs_.ping_result(ping_seq_, true, r.tx->source);
}

void EndDevice::process_downlink_commands(const frames::Frame& revealed,
                                          sim::NodeId) {
  std::vector<frames::MacCommand> cmds;
  try {
    cmds = frames::decode_mac_commands(revealed.fopts,
                                       frames::Direction::downlink);
  } catch (const frames::DecodeError&) {
    return;
  }
  const int dr_before = adr_.current_dr;
  const int tp_before = adr_.current_tp_index;
  const std::uint16_t enabled =
      static_cast<std::uint16_t>((1u << cfg_.channels_hz.size()) - 1);
  for (const auto& cmd : cmds) {
    if (const auto* req = std::get_if<frames::LinkAdrReq>(&cmd)) {
      auto ans = process_link_adr_req(adr_, last_acked_req_, *req, enabled,
                                      &active_ch_mask_);
      if (ans) pending_answers_.emplace_back(*ans);
    }
    // DeviceTimeAns would land here; instantaneous initial lock makes the
    // device-side use unnecessary.
  }
  if ((adr_.current_dr != dr_before || adr_.current_tp_index != tp_before) &&
      obs_.settings_changed) {
    obs_.settings_changed(adr_.current_dr, adr_.current_tp_index);
  }
}

void EndDevice::begin_acquisition() {
  classb_.mode = ClassBMode::acquiring;
  radio_.listen(node_, phy::kBeaconFreqHz, beacon_params().sf);
}

void EndDevice::schedule_beacon_window() {
  const Micros sym = phy::symbol_duration(beacon_params());
  const Micros guard =
      static_cast<Micros>(classb_.window_guard_symbols * static_cast<double>(sym));
  const Micros open = classb_.expected_beacon_time - guard - sym;
  const Micros beacon_air =
      phy::time_on_air(beacon_params(), phy::kBeaconFrameBytes);
  const Micros close = classb_.expected_beacon_time + guard + beacon_air + sym;
  radio_.listen_window(node_, phy::kBeaconFreqHz, beacon_params().sf, open,
                       close - open);
  window_candidates_.clear();
  beacon_window_open_ = true;
  const Micros expected_snapshot = classb_.expected_beacon_time;
  engine_.schedule_at(close, [this, expected_snapshot]() {
    close_beacon_window(expected_snapshot);
  });
}

void EndDevice::close_beacon_window(Micros expected_snapshot) {
  if (classb_.mode == ClassBMode::class_a) return;
  beacon_window_open_ = false;
  const Micros sym = phy::symbol_duration(beacon_params());
  const Micros tolerance = static_cast<Micros>(classb_.window_guard_symbols *
                                               static_cast<double>(sym));
  std::optional<ObservedBeacon> best;
  for (const auto& c : window_candidates_) {
    if (abs_diff(c.arrival, expected_snapshot) > tolerance) continue;
    if (!best || c.snr_db > best->snr_db) best = c;
  }
  const bool was_locked = classb_.mode == ClassBMode::locked;
  auto outcome =
      on_beacon_window(classb_, cfg_.class_b_cfg, engine_.now(), best);
  if (was_locked && classb_.mode == ClassBMode::beaconless) {
    const Micros since = *classb_.beaconless_since;
    engine_.schedule_at(since + cfg_.class_b_cfg.beaconless_timeout,
                        [this, since]() {
                          if (classb_.mode == ClassBMode::beaconless &&
                              classb_.beaconless_since == since) {
                            classb_.mode = ClassBMode::class_a;
                            classb_.beaconless_since.reset();
                            radio_.stop_listening(node_);
                          }
                        });
  }
  if (obs_.beacon_window) obs_.beacon_window(beacon_seq_, outcome, best);
  ++beacon_seq_;
  if (classb_.mode == ClassBMode::class_a) return;
  schedule_ping_slots();
  schedule_beacon_window();
}

void EndDevice::schedule_ping_slots() {
  current_slots_ = ping_slot_times(classb_.last_beacon_arrival,
                                   classb_.last_beacon_payload, cfg_.dev_addr,
                                   cfg_.class_b_cfg.ping_slots_per_period);
  ping_received_ = false;
  const Micros sym = phy::symbol_duration(beacon_params());
  const double guard = cfg_.class_b_cfg.ping_slot_guard_symbols +
                       widened_by_symbols(classb_, cfg_.class_b_cfg);
  const Micros tol = static_cast<Micros>(guard * static_cast<double>(sym));
  auto ping_params = phy::TxParams::downlink(phy::DataRate(cfg_.rx2_datarate),
                                             cfg_.rx2_freq_hz);
  const Micros max_air = phy::time_on_air(ping_params, 32);
  Micros last_close = 0;
  for (const Micros slot : current_slots_) {
    radio_.listen_window(node_, cfg_.rx2_freq_hz, ping_params.sf, slot - tol,
                         2 * tol);
    last_close = std::max(last_close, slot + tol + max_air + 1);
  }
  const int seq = ping_seq_;
  engine_.schedule_at(last_close, [this, seq]() {
    if (seq == ping_seq_) {
      if (!ping_received_ && obs_.ping_result) obs_.ping_result(seq, false, -1);
      ++ping_seq_;
    }
  });
}

}  // namespace lorasim::device
