#include "lorasim/netserver.hpp"

#include <algorithm>
#include <cmath>

#include "lorasim/enddevice.hpp"

namespace lorasim::server {

std::optional<frames::LinkAdrReq> adr_decision(const NsDeviceRecord& record,
                                               double margin_db,
                                               std::uint16_t ch_mask) {
  if (record.snr_history.empty() || !record.last_uplink) return std::nullopt;
  const double snr_max =
      *std::max_element(record.snr_history.begin(), record.snr_history.end());
  const int current_dr = record.last_uplink->datarate;
  const double snr_margin =
      snr_max - phy::required_snr(phy::DataRate(current_dr)) - margin_db;
  int n_step = static_cast<int>(std::floor(snr_margin / 3.0));

  int dr = current_dr;
  int tp = record.assumed_tp_index;
  while (n_step > 0) {
    if (dr < phy::DataRate::kMax) {
      ++dr;
    } else if (tp < device::kMaxTpIndex) {
      ++tp;
    } else {
      break;
    }
    --n_step;
  }
  while (n_step < 0 && tp > 0) {
    --tp;
    ++n_step;
  }
  if (dr == current_dr && tp == record.assumed_tp_index) return std::nullopt;
  frames::LinkAdrReq req;
  req.datarate = dr;
  req.tp_index = tp;
  req.ch_mask = ch_mask;
  req.nb_trans = 1;
  return req;
}

NetworkServer::NetworkServer(sim::Engine& engine, sim::RadioMedium& radio,
                             ServerConfig cfg)
    : engine_(engine), radio_(radio), cfg_(std::move(cfg)) {}

void NetworkServer::attach_gateway(sim::NodeId gw) {
  gateways_.push_back(gw);
  radio_.set_reception_handler(
      gw, [this, gw](const sim::Reception& r) { on_gateway_rx(gw, r); });
}

NsDeviceRecord& NetworkServer::register_device(std::uint32_t dev_addr,
                                               std::uint64_t session_secret,
                                               bool class_b) {
  NsDeviceRecord rec;
  rec.session = frames::DeviceSession::derive(dev_addr, session_secret);
  rec.class_b = class_b;
  auto [it, _] = devices_.insert_or_assign(dev_addr, std::move(rec));
  return it->second;
}

void NetworkServer::start() {
  if (cfg_.beacons_enabled && !gateways_.empty()) {
    engine_.schedule_at(cfg_.first_beacon_at, [this]() { beacon_tick(); });
  }
}

void NetworkServer::on_gateway_rx(sim::NodeId gw, const sim::Reception& r) {
  if (!r.decoded || r.tx->kind != sim::TxKind::data) return;
  frames::Frame frame;
  try {
    frame = frames::decode(r.tx->payload, frames::Direction::uplink);
  } catch (const frames::DecodeError&) {
    return;  // downlink-direction or foreign traffic
  }
  UplinkMeta meta;
  meta.freq_hz = r.tx->params.freq_hz;
  meta.datarate = r.tx->params.datarate().index();
  meta.snr_db = r.rx_snr_db;
  meta.rssi_dbm = r.rx_power_dbm;
  meta.end_time = r.tx->end();
  meta.fcnt = frame.fcnt;
  ingest_uplink(gw, frame, meta);
}

bool NetworkServer::ingest_uplink(sim::NodeId gw, const frames::Frame& frame,
                                  const UplinkMeta& meta) {
  auto it = devices_.find(frame.dev_addr);
  if (it == devices_.end()) return false;
  NsDeviceRecord& rec = it->second;

  auto rx_params = phy::TxParams::uplink(phy::DataRate(meta.datarate),
                                         meta.freq_hz);
  const auto status =
      frames::verify(frame, rec.session, rx_params, cfg_.policy);
  if (status != frames::VerifyStatus::ok) {
    if (obs_.uplink_rejected) obs_.uplink_rejected(engine_.now(), status);
    return false;
  }
  rec.session.fcnt_up = frame.fcnt;
  rec.snr_history.push_back(meta.snr_db);
  while (rec.snr_history.size() > cfg_.snr_history_cap) {
    rec.snr_history.pop_front();
  }
  rec.last_uplink = meta;
  ++uplinks_accepted_;

  const auto revealed = frames::reveal(frame, rec.session, cfg_.policy);
  std::vector<frames::MacCommand> cmds;
  try {
    cmds = frames::decode_mac_commands(revealed.fopts,
                                       frames::Direction::uplink);
  } catch (const frames::DecodeError&) {
    cmds.clear();
  }
  for (const auto& cmd : cmds) {
    if (const auto* ans = std::get_if<frames::LinkAdrAns>(&cmd)) {
      // Acknowledged (positively or not): leave the queue.
      if (rec.pending_adr && ans->accepted()) {
        rec.assumed_tp_index = rec.pending_adr->cmd.tp_index;
      }
      rec.pending_adr.reset();
    } else if (std::holds_alternative<frames::DeviceTimeReq>(cmd)) {
      rec.pending_other.emplace_back(
          frames::DeviceTimeAns{engine_.now()});
    }
  }

  if (frame.flags.adr) {
    const auto mask =
        static_cast<std::uint16_t>((1u << cfg_.channels_hz.size()) - 1);
    if (auto req = adr_decision(rec, cfg_.adr_margin_db, mask)) {
      if (!rec.pending_adr || !(rec.pending_adr->cmd == *req)) {
        rec.pending_adr =
            PendingAdrCommand{*req, true, cfg_.adr_resend_budget};
        if (obs_.adr_command_issued) {
          obs_.adr_command_issued(engine_.now(), frame.dev_addr, *req);
        }
      }
    }
  }

  if (obs_.uplink_accepted) {
    obs_.uplink_accepted(engine_.now(), frame.dev_addr, meta, revealed);
  }
  (void)gw;
  plan_downlink(rec, meta.end_time, frame.flags.adr_ack_req);
  return true;
}

frames::Frame NetworkServer::build_downlink(NsDeviceRecord& record, bool) {
  frames::Frame f;
  f.direction = frames::Direction::downlink;
  f.dev_addr = record.session.dev_addr;
  f.fcnt = ++record.session.fcnt_down;
  std::vector<frames::MacCommand> cmds;
  if (record.pending_adr && record.pending_adr->sends_left > 0) {
    cmds.emplace_back(record.pending_adr->cmd);
    record.pending_adr->sends_left -= 1;
    if (record.pending_adr->sends_left == 0) {
      // Timed out: no further resends.
      record.pending_adr.reset();
    }
  }
  for (auto& c : record.pending_other) cmds.push_back(c);
  record.pending_other.clear();
  f.fopts = frames::encode_mac_commands(cmds);
  if (record.app_downlink) {
    f.fport = record.app_fport;
    f.frm_payload = *record.app_downlink;
    record.app_downlink.reset();
  }
  return f;
}

bool NetworkServer::plan_downlink(NsDeviceRecord& record, Micros uplink_end,
                                  bool adr_ack_req, bool rx1_free) {
  const bool pending_mac =
      (record.pending_adr.has_value() && record.pending_adr->sends_left > 0) ||
      !record.pending_other.empty();
  if (!pending_mac && !adr_ack_req && !record.app_downlink) return false;
  if (gateways_.empty() || !record.last_uplink) return false;

  frames::Frame f = build_downlink(record, adr_ack_req);
  const bool in_rx2 = !rx1_free;
  phy::TxParams params =
      in_rx2 ? phy::TxParams::downlink(phy::DataRate(cfg_.rx.rx2_datarate),
                                       cfg_.rx.rx2_freq_hz, cfg_.gw_power_dbm)
             : phy::TxParams::downlink(
                   phy::DataRate(record.last_uplink->datarate),
                   record.last_uplink->freq_hz, cfg_.gw_power_dbm);
  const Micros at = in_rx2
                        ? uplink_end + cfg_.rx.rx1_delay + cfg_.rx.rx2_gap
                        : uplink_end + cfg_.rx.rx1_delay;

  const frames::Frame cleartext = f;
  f = frames::conceal(std::move(f), record.session, cfg_.policy);
  f.mic = frames::compute_mic(record.session, f, params, cfg_.policy,
                              record.last_uplink->fcnt);
  auto bytes = frames::encode(f);

  sim::Transmission tx;
  tx.source = gateways_.front();
  tx.params = params;
  tx.start = at;
  tx.duration = phy::time_on_air(params, bytes.size());
  tx.payload = std::move(bytes);
  tx.kind = sim::TxKind::data;
  radio_.transmit(std::move(tx));
  if (obs_.downlink_sent) {
    obs_.downlink_sent(at, record.session.dev_addr, cleartext, params, in_rx2);
  }
  return true;
}

void NetworkServer::queue_app_downlink(std::uint32_t dev_addr,
                                       std::vector<std::uint8_t> payload,
                                       std::uint8_t fport) {
  auto* rec = find_device(dev_addr);
  if (!rec) return;
  rec->app_downlink = std::move(payload);  // newest wins
  rec->app_fport = fport;
}

NsDeviceRecord* NetworkServer::find_device(std::uint32_t dev_addr) {
  auto it = devices_.find(dev_addr);
  return it == devices_.end() ? nullptr : &it->second;
}

void NetworkServer::beacon_tick() {
  const Micros now = engine_.now();
  frames::BeaconPayload payload;
  payload.gps_time_s = static_cast<std::uint32_t>(now / kSecond);
  const auto params = phy::TxParams::beacon(cfg_.gw_power_dbm);
  for (std::size_t i = 0; i < gateways_.size(); ++i) {
    frames::Frame f;
    f.direction = frames::Direction::beacon;
    frames::BeaconPayload p = payload;
    p.gw_info[0] = 'G';
    p.gw_info[1] = static_cast<std::uint8_t>(i);
    f.beacon = p;
    auto bytes = frames::encode(f);

    sim::Transmission tx;
    tx.source = gateways_[i];
    tx.params = params;
    tx.start = now;
    tx.duration = phy::time_on_air(params, bytes.size());
    tx.payload = std::move(bytes);
    tx.kind = sim::TxKind::beacon;
    radio_.transmit(std::move(tx));
  }
  if (obs_.beacon_sent) obs_.beacon_sent(now, payload.gps_time_s);

  if (cfg_.probe_downlink_each_period) {
    for (auto& [addr, rec] : devices_) {
      if (!rec.class_b) continue;
      queue_app_downlink(addr, std::vector<std::uint8_t>{static_cast<std::uint8_t>(now / phy::kBeaconPeriod)});
      frames::BeaconPayload slot_basis = payload;
      slot_basis.gw_info[0] = 'G';
      slot_basis.gw_info[1] = 0;
      send_class_b_probe(rec, now, slot_basis);
    }
  }
  engine_.schedule_at(now + phy::kBeaconPeriod, [this]() { beacon_tick(); });
}

void NetworkServer::send_class_b_probe(NsDeviceRecord& record,
                                       Micros beacon_time,
                                       const frames::BeaconPayload& payload) {
  if (!record.app_downlink) return;
  const auto slots = device::ping_slot_times(beacon_time, payload,
                                             record.session.dev_addr);
  frames::Frame f;
  f.direction = frames::Direction::downlink;
  f.dev_addr = record.session.dev_addr;
  f.fcnt = ++record.session.fcnt_down;
  f.fport = record.app_fport;
  f.frm_payload = *record.app_downlink;
  record.app_downlink.reset();
  auto params = phy::TxParams::downlink(phy::DataRate(cfg_.rx.rx2_datarate),
                                        cfg_.rx.rx2_freq_hz, cfg_.gw_power_dbm);
  const frames::Frame cleartext = f;
  f = frames::conceal(std::move(f), record.session, cfg_.policy);
  f.mic = frames::compute_mic(record.session, f, params, cfg_.policy);
  auto bytes = frames::encode(f);

  sim::Transmission tx;
  tx.source = gateways_.front();
  tx.params = params;
  tx.start = slots.front();
  tx.duration = phy::time_on_air(params, bytes.size());
  tx.payload = std::move(bytes);
  tx.kind = sim::TxKind::data;
  radio_.transmit(std::move(tx));
  if (obs_.downlink_sent) {
    obs_.downlink_sent(slots.front(), record.session.dev_addr, cleartext,
                       params, false);
  }
}

}  // namespace lorasim::server
