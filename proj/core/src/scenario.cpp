#include "lorasim/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lorasim::harness {

using nlohmann::json;

Topology default_topology() {
  Topology t;
  t.nodes = {{"ed", false}, {"gw", true}, {"atk_entry", false},
             {"atk_exit", false}};
  // ed->gw tuned so uplink SNR means about -10.5 dB at full power; the
  // downlink direction is stronger (the tuning attenuator sits on the
  // uplink path). Attacker nodes sit close to their respective ends.
  t.links = {
      {"ed", "gw", 143.5},        {"gw", "ed", 137.5},
      {"ed", "atk_entry", 122.0}, {"atk_entry", "ed", 122.0},
      {"ed", "atk_exit", 100.0},  {"atk_exit", "gw", 123.5},
      {"gw", "atk_exit", 60.0},   {"gw", "atk_entry", 137.5},
      {"atk_exit", "atk_entry", 150.0},
      {"atk_entry", "atk_exit", 150.0},
      {"atk_entry", "gw", 160.0},
  };
  return t;
}

void Scenario::validate() const {
  if (trials < 1) throw ScenarioError("trials must be >= 1");
  if (channels_hz.empty() || channels_hz.size() > 16) {
    throw ScenarioError("between 1 and 16 channels required");
  }
  if (topology.nodes.empty()) throw ScenarioError("topology has no nodes");
  std::set<std::string> names;
  bool has_gateway = false;
  for (const auto& n : topology.nodes) {
    if (!names.insert(n.name).second) {
      throw ScenarioError("duplicate node name: " + n.name);
    }
    has_gateway = has_gateway || n.gateway;
  }
  if (!has_gateway) throw ScenarioError("topology needs a gateway node");
  for (const auto& l : topology.links) {
    if (!names.count(l.from) || !names.count(l.to)) {
      throw ScenarioError("link references unknown node: " + l.from + "->" +
                          l.to);
    }
    if (l.db < 0) throw ScenarioError("attenuation must be >= 0 dB");
  }
  if (!names.count("ed")) throw ScenarioError("device node 'ed' missing");
  if (device.initial_datarate < phy::DataRate::kMin ||
      device.initial_datarate > phy::DataRate::kMax) {
    throw ScenarioError("device initial data rate out of range");
  }
  if (device.uplink_period != 0 && device.uplink_period < 8 * kSecond) {
    throw ScenarioError("uplink period below 8 s breaks the rx window plan");
  }
  if (device.adr_ack_limit < 1 || device.adr_ack_delay < 1) {
    throw ScenarioError("ADR thresholds must be >= 1");
  }
  if (rx.rx1_delay < kSecond || rx.rx1_delay > 15 * kSecond) {
    throw ScenarioError("rx1 delay outside [1 s, 15 s]");
  }
  if (attack == AttackType::adr_spoofing) {
    if (!names.count(adr.entry_node) || !names.count(adr.exit_node)) {
      throw ScenarioError("attack references unknown wormhole nodes");
    }
    for (const auto& c : adr.cells) {
      if (c.wormhole != "rx2" && c.wormhole != "downlink_delayed") {
        throw ScenarioError("unknown wormhole variant: " + c.wormhole);
      }
      if (c.datarate < phy::DataRate::kMin || c.datarate > phy::DataRate::kMax) {
        throw ScenarioError("cell data rate out of range");
      }
      if (c.preceding_uplinks < 1) {
        throw ScenarioError("preceding_uplinks must be >= 1");
      }
    }
    if (adr.cells.empty()) throw ScenarioError("adr attack has no cells");
  }
  if (attack == AttackType::beacon_drifting) {
    if (!names.count(beacon.node)) {
      throw ScenarioError("attack references unknown beacon node");
    }
    if (beacon.step_symbols.empty()) {
      throw ScenarioError("beacon attack has no step sizes");
    }
    for (int s : beacon.step_symbols) {
      if (s < 1 || s > 64) throw ScenarioError("step size out of range");
    }
    if (!device.class_b) {
      throw ScenarioError("beacon attack requires a Class B device");
    }
  }
}

namespace {

std::string policy_name(frames::MicPolicy p) {
  switch (p) {
    case frames::MicPolicy::V10: return "V10";
    case frames::MicPolicy::V11: return "V11";
    case frames::MicPolicy::Hardened: return "Hardened";
  }
  return "V11";
}

frames::MicPolicy policy_from(const std::string& s) {
  if (s == "V10") return frames::MicPolicy::V10;
  if (s == "V11") return frames::MicPolicy::V11;
  if (s == "Hardened") return frames::MicPolicy::Hardened;
  throw ScenarioError("unknown mic_policy: " + s);
}

std::string attack_name(AttackType a) {
  switch (a) {
    case AttackType::none: return "none";
    case AttackType::adr_spoofing: return "adr_spoofing";
    case AttackType::beacon_drifting: return "beacon_drifting";
  }
  return "none";
}

AttackType attack_from(const std::string& s) {
  if (s == "none") return AttackType::none;
  if (s == "adr_spoofing") return AttackType::adr_spoofing;
  if (s == "beacon_drifting") return AttackType::beacon_drifting;
  throw ScenarioError("unknown attack type: " + s);
}

Micros seconds_to_micros(double s) {
  return static_cast<Micros>(s * static_cast<double>(kSecond) + 0.5);
}

double micros_to_seconds(Micros us) {
  return static_cast<double>(us) / static_cast<double>(kSecond);
}

}  // namespace

std::string Scenario::to_json() const {
  json j;
  j["name"] = name;
  j["seed"] = base_seed;
  j["trials"] = trials;
  j["mic_policy"] = policy_name(policy);
  j["channels_hz"] = channels_hz;
  j["rx_windows"] = {{"rx1_delay_s", micros_to_seconds(rx.rx1_delay)},
                     {"rx2_gap_s", micros_to_seconds(rx.rx2_gap)},
                     {"rx2_freq_hz", rx.rx2_freq_hz},
                     {"rx2_datarate", rx.rx2_datarate}};
  j["channel_model"] = {{"noise_floor_dbm", noise_floor_dbm},
                        {"snr_jitter_sigma_db", snr_jitter_sigma_db}};
  json nodes = json::array();
  for (const auto& n : topology.nodes) {
    nodes.push_back({{"name", n.name}, {"gateway", n.gateway}});
  }
  json links = json::array();
  for (const auto& l : topology.links) {
    links.push_back({{"from", l.from}, {"to", l.to}, {"db", l.db}});
  }
  j["topology"] = {{"nodes", nodes}, {"links", links}};
  j["device"] = {
      {"dev_addr", device.dev_addr},
      {"session_secret", device.session_secret},
      {"uplink_period_s", micros_to_seconds(device.uplink_period)},
      {"first_uplink_s", micros_to_seconds(device.first_uplink_at)},
      {"payload_bytes", device.payload_bytes},
      {"initial_datarate", device.initial_datarate},
      {"adr_ack_limit", device.adr_ack_limit},
      {"adr_ack_delay", device.adr_ack_delay},
      {"adr", device.adr},
      {"class_b", device.class_b},
      {"class_b_cfg",
       {{"window_guard_symbols", device.class_b_cfg.window_guard_symbols},
        {"ping_slot_guard_symbols", device.class_b_cfg.ping_slot_guard_symbols},
        {"widen_per_miss_symbols", device.class_b_cfg.widen_per_miss_symbols},
        {"guard_cap_symbols", device.class_b_cfg.guard_cap_symbols},
        {"beaconless_timeout_s",
         micros_to_seconds(device.class_b_cfg.beaconless_timeout)}}}};
  j["gateway_power_dbm"] = gateway_power_dbm;
  j["adr_margin_db"] = adr_margin_db;
  j["adr_resend_budget"] = adr_resend_budget;
  j["attack"]["type"] = attack_name(attack);
  if (attack == AttackType::adr_spoofing) {
    json cells = json::array();
    for (const auto& c : adr.cells) {
      cells.push_back({{"wormhole", c.wormhole},
                       {"datarate", c.datarate},
                       {"preceding_uplinks", c.preceding_uplinks}});
    }
    j["attack"]["entry_node"] = adr.entry_node;
    j["attack"]["exit_node"] = adr.exit_node;
    j["attack"]["uplink_replay_delay_ms"] =
        static_cast<double>(adr.uplink_replay_delay) / 1000.0;
    j["attack"]["downlink_replay_delay_ms"] =
        static_cast<double>(adr.downlink_replay_delay) / 1000.0;
    j["attack"]["target_datarate"] = adr.target_datarate;
    j["attack"]["replay_power_dbm"] = adr.replay_power_dbm;
    j["attack"]["jam_power_dbm"] = adr.jam_power_dbm;
    j["attack"]["trial_budget_transactions"] = adr.trial_budget_transactions;
    j["attack"]["retention_uplinks"] = adr.retention_uplinks;
    j["attack"]["spoof_forward_limit"] = adr.spoof_forward_limit;
    j["attack"]["cells"] = cells;
  }
  if (attack == AttackType::beacon_drifting) {
    j["attack"]["node"] = beacon.node;
    j["attack"]["step_symbols"] = beacon.step_symbols;
    j["attack"]["jam_payload_bytes"] = beacon.jam_payload_bytes;
    j["attack"]["power_dbm"] = beacon.power_dbm;
    j["attack"]["sync_period"] = beacon.sync_period;
    j["attack"]["preceding_periods"] = beacon.preceding_periods;
    j["attack"]["periods_after_stop"] = beacon.periods_after_stop;
  }
  j["baseline"] = {{"frames_per_dr", baseline.frames_per_dr},
                   {"datarates", baseline.datarates}};
  j["t_end_s"] = micros_to_seconds(t_end);
  return j.dump(2) + "\n";
}

Scenario Scenario::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
  }
  Scenario s;
  try {
    s.name = j.value("name", s.name);
    s.base_seed = j.value("seed", s.base_seed);
    s.trials = j.value("trials", s.trials);
    s.policy = policy_from(j.value("mic_policy", std::string("V11")));
    if (j.contains("channels_hz")) {
      s.channels_hz = j["channels_hz"].get<std::vector<int>>();
    }
    if (j.contains("rx_windows")) {
      const auto& r = j["rx_windows"];
      s.rx.rx1_delay = seconds_to_micros(r.value("rx1_delay_s", 1.0));
      s.rx.rx2_gap = seconds_to_micros(r.value("rx2_gap_s", 1.0));
      s.rx.rx2_freq_hz = r.value("rx2_freq_hz", s.rx.rx2_freq_hz);
      s.rx.rx2_datarate = r.value("rx2_datarate", s.rx.rx2_datarate);
    }
    if (j.contains("channel_model")) {
      const auto& c = j["channel_model"];
      s.noise_floor_dbm = c.value("noise_floor_dbm", s.noise_floor_dbm);
      s.snr_jitter_sigma_db =
          c.value("snr_jitter_sigma_db", s.snr_jitter_sigma_db);
    }
    if (j.contains("topology")) {
      s.topology = Topology{};
      for (const auto& n : j["topology"].value("nodes", json::array())) {
        s.topology.nodes.push_back(
            {n.at("name").get<std::string>(), n.value("gateway", false)});
      }
      for (const auto& l : j["topology"].value("links", json::array())) {
        s.topology.links.push_back({l.at("from").get<std::string>(),
                                    l.at("to").get<std::string>(),
                                    l.at("db").get<double>()});
      }
    } else {
      s.topology = default_topology();
    }
    if (j.contains("device")) {
      const auto& d = j["device"];
      s.device.dev_addr = d.value("dev_addr", s.device.dev_addr);
      s.device.session_secret =
          d.value("session_secret", s.device.session_secret);
      s.device.uplink_period =
          seconds_to_micros(d.value("uplink_period_s", 12.0));
      s.device.first_uplink_at =
          seconds_to_micros(d.value("first_uplink_s", 5.0));
      s.device.payload_bytes = d.value("payload_bytes", s.device.payload_bytes);
      s.device.initial_datarate =
          d.value("initial_datarate", s.device.initial_datarate);
      s.device.adr_ack_limit = d.value("adr_ack_limit", s.device.adr_ack_limit);
      s.device.adr_ack_delay = d.value("adr_ack_delay", s.device.adr_ack_delay);
      s.device.adr = d.value("adr", s.device.adr);
      s.device.class_b = d.value("class_b", s.device.class_b);
      if (d.contains("class_b_cfg")) {
        const auto& cb = d["class_b_cfg"];
        auto& cfg = s.device.class_b_cfg;
        cfg.window_guard_symbols =
            cb.value("window_guard_symbols", cfg.window_guard_symbols);
        cfg.ping_slot_guard_symbols =
            cb.value("ping_slot_guard_symbols", cfg.ping_slot_guard_symbols);
        cfg.widen_per_miss_symbols =
            cb.value("widen_per_miss_symbols", cfg.widen_per_miss_symbols);
        cfg.guard_cap_symbols =
            cb.value("guard_cap_symbols", cfg.guard_cap_symbols);
        cfg.beaconless_timeout =
            seconds_to_micros(cb.value("beaconless_timeout_s", 7200.0));
      }
    }
    s.gateway_power_dbm = j.value("gateway_power_dbm", s.gateway_power_dbm);
    s.adr_margin_db = j.value("adr_margin_db", s.adr_margin_db);
    s.adr_resend_budget = j.value("adr_resend_budget", s.adr_resend_budget);
    if (j.contains("attack")) {
      const auto& a = j["attack"];
      s.attack = attack_from(a.value("type", std::string("none")));
      if (s.attack == AttackType::adr_spoofing) {
        s.adr.entry_node = a.value("entry_node", s.adr.entry_node);
        s.adr.exit_node = a.value("exit_node", s.adr.exit_node);
        s.adr.uplink_replay_delay = static_cast<Micros>(
            a.value("uplink_replay_delay_ms", 150.0) * 1000.0);
        s.adr.downlink_replay_delay = static_cast<Micros>(
            a.value("downlink_replay_delay_ms", 50.0) * 1000.0);
        s.adr.target_datarate = a.value("target_datarate", 5);
        s.adr.replay_power_dbm =
            a.value("replay_power_dbm", s.adr.replay_power_dbm);
        s.adr.jam_power_dbm = a.value("jam_power_dbm", s.adr.jam_power_dbm);
        s.adr.trial_budget_transactions = a.value(
            "trial_budget_transactions", s.adr.trial_budget_transactions);
        s.adr.retention_uplinks =
            a.value("retention_uplinks", s.adr.retention_uplinks);
        s.adr.spoof_forward_limit =
            a.value("spoof_forward_limit", s.adr.spoof_forward_limit);
        s.adr.cells.clear();
        for (const auto& c : a.value("cells", json::array())) {
          s.adr.cells.push_back({c.value("wormhole", std::string("rx2")),
                                 c.value("datarate", 0),
                                 c.value("preceding_uplinks", 1)});
        }
      }
      if (s.attack == AttackType::beacon_drifting) {
        s.beacon.node = a.value("node", s.beacon.node);
        if (a.contains("step_symbols")) {
          s.beacon.step_symbols = a["step_symbols"].get<std::vector<int>>();
        }
        s.beacon.jam_payload_bytes =
            a.value("jam_payload_bytes", s.beacon.jam_payload_bytes);
        s.beacon.power_dbm = a.value("power_dbm", s.beacon.power_dbm);
        s.beacon.sync_period = a.value("sync_period", s.beacon.sync_period);
        s.beacon.preceding_periods =
            a.value("preceding_periods", s.beacon.preceding_periods);
        s.beacon.periods_after_stop =
            a.value("periods_after_stop", s.beacon.periods_after_stop);
      }
    }
    if (j.contains("baseline")) {
      s.baseline.frames_per_dr =
          j["baseline"].value("frames_per_dr", s.baseline.frames_per_dr);
      if (j["baseline"].contains("datarates")) {
        s.baseline.datarates =
            j["baseline"]["datarates"].get<std::vector<int>>();
      }
    }
    s.t_end = seconds_to_micros(j.value("t_end_s", 0.0));
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("scenario field error: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario Scenario::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

Scenario Scenario::defaults_baseline() {
  Scenario s;
  s.name = "baseline-channel";
  s.topology = default_topology();
  s.attack = AttackType::none;
  s.device.adr = false;  // pin the data rate for channel measurement
  return s;
}

Scenario Scenario::defaults_adr_spoofing() {
  Scenario s;
  s.name = "adr-spoofing";
  s.topology = default_topology();
  s.attack = AttackType::adr_spoofing;
  s.device.adr_ack_limit = 32;
  s.device.adr_ack_delay = 32;
  for (const std::string wh : {"downlink_delayed", "rx2"}) {
    for (int dr = 0; dr <= 3; ++dr) {
      for (int preceding : {1, 10, 20}) {
        s.adr.cells.push_back({wh, dr, preceding});
      }
    }
  }
  return s;
}

Scenario Scenario::defaults_beacon_drifting() {
  Scenario s;
  s.name = "beacon-drifting";
  s.topology = default_topology();
  s.attack = AttackType::beacon_drifting;
  s.device.class_b = true;
  s.device.uplink_period = 0;  // downlink probing only
  return s;
}

}  // namespace lorasim::harness
