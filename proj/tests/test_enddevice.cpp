#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "lorasim/enddevice.hpp"

using namespace lorasim;
using namespace lorasim::device;

TEST_CASE("counter resets on any downlink and grows otherwise") {
  AdrState s;
  s.adr_ack_limit = 32;
  s.adr_ack_delay = 32;
  on_transaction_end(s, false);
  on_transaction_end(s, false);
  CHECK(s.adr_ack_cnt == 2);
  on_transaction_end(s, true);
  CHECK(s.adr_ack_cnt == 0);
}

TEST_CASE("adr ack request starts exactly at the limit") {
  AdrState s;
  s.adr_ack_limit = 32;
  s.adr_ack_cnt = 31;
  CHECK_FALSE(adr_ack_requested(s));
  s.adr_ack_cnt = 32;
  CHECK(adr_ack_requested(s));
}

TEST_CASE("backoff restores power first, then steps the data rate down") {
  AdrState s;
  s.adr_ack_limit = 32;
  s.adr_ack_delay = 32;
  s.current_dr = 5;
  s.current_tp_index = 3;
  // One step fires at limit + delay transactions: power restore only.
  for (int i = 0; i < 64; ++i) on_transaction_end(s, false);
  CHECK(s.current_tp_index == 0);
  CHECK(s.current_dr == 5);
}

TEST_CASE("DR5 reaches DR0 after limit + delay*(1+5) silent transactions") {
  AdrState s;
  s.adr_ack_limit = 32;
  s.adr_ack_delay = 32;
  s.current_dr = 5;
  s.current_tp_index = 2;
  int transactions = 0;
  while (s.current_dr > 0) {
    on_transaction_end(s, false);
    ++transactions;
    REQUIRE(transactions < 1000);
  }
  CHECK(transactions == 32 + 32 * (1 + 5));
  // Stays pinned at DR0 afterwards.
  for (int i = 0; i < 100; ++i) on_transaction_end(s, false);
  CHECK(s.current_dr == 0);
}

TEST_CASE("fuzzed command and backoff sequences keep state in range") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    AdrState s;
    s.adr_ack_limit = 1 + static_cast<int>(rng() % 64);
    s.adr_ack_delay = 1 + static_cast<int>(rng() % 64);
    s.current_dr = static_cast<int>(rng() % 6);
    std::optional<frames::LinkAdrReq> last_acked;
    for (int step = 0; step < 500; ++step) {
      if (rng() % 4 == 0) {
        frames::LinkAdrReq req;
        req.datarate = static_cast<int>(rng() % 8) - 1;  // includes invalid
        req.tp_index = static_cast<int>(rng() % 10) - 1;
        req.ch_mask = static_cast<std::uint16_t>(rng() % 16);
        req.nb_trans = 1;
        process_link_adr_req(s, last_acked, req, 0x0007);
      }
      const bool downlink = rng() % 8 == 0;
      on_transaction_end(s, downlink);
      CHECK(s.adr_ack_cnt >= 0);
      if (downlink) CHECK(s.adr_ack_cnt == 0);
      CHECK(s.current_dr >= 0);
      CHECK(s.current_dr <= 5);
      CHECK(s.current_tp_index >= 0);
      CHECK(s.current_tp_index <= kMaxTpIndex);
    }
  }
}

TEST_CASE("link adr request applies atomically and answers once") {
  AdrState s;
  s.current_dr = 0;
  std::optional<frames::LinkAdrReq> last_acked;
  frames::LinkAdrReq req{5, 0, 0x0007, 1};

  auto ans = process_link_adr_req(s, last_acked, req, 0x0007);
  REQUIRE(ans.has_value());
  CHECK(ans->accepted());
  CHECK(s.current_dr == 5);

  SUBCASE("duplicate delivery produces no additional answer") {
    CHECK_FALSE(process_link_adr_req(s, last_acked, req, 0x0007).has_value());
    CHECK(s.current_dr == 5);
  }
  SUBCASE("resent request re-applies after a backoff without a new answer") {
    s.current_dr = 3;  // device backed off meanwhile
    CHECK_FALSE(process_link_adr_req(s, last_acked, req, 0x0007).has_value());
    CHECK(s.current_dr == 5);
  }
  SUBCASE("empty channel mask is rejected without state change") {
    frames::LinkAdrReq bad{1, 1, 0x0000, 1};
    auto nack = process_link_adr_req(s, last_acked, bad, 0x0007);
    REQUIRE(nack.has_value());
    CHECK_FALSE(nack->accepted());
    CHECK_FALSE(nack->ch_ok);
    CHECK(s.current_dr == 5);
    CHECK(s.current_tp_index == 0);
  }
}

namespace {

ClassBState locked_state(Micros expected) {
  ClassBState s;
  s.mode = ClassBMode::locked;
  s.expected_beacon_time = expected;
  s.last_beacon_arrival = expected - kBeaconPeriod;
  s.last_beacon_payload.gps_time_s = 128;
  return s;
}

ObservedBeacon beacon_at(Micros arrival, std::uint32_t gps) {
  ObservedBeacon ob;
  ob.arrival = arrival;
  ob.payload.gps_time_s = gps;
  ob.snr_db = 5.0;
  return ob;
}

constexpr Micros kSym = 4096;  // beacon symbol duration at SF9

}  // namespace

TEST_CASE("on-time beacon keeps the lock and advances one period") {
  ClassBConfig cfg;
  auto s = locked_state(1'000'000'000);
  auto out = on_beacon_window(s, cfg, 1'000'200'000,
                              beacon_at(1'000'000'000, 256));
  CHECK(out.accepted);
  CHECK(s.mode == ClassBMode::locked);
  CHECK(s.expected_beacon_time == 1'000'000'000 + kBeaconPeriod);
}

TEST_CASE("three symbols early is tracked, four is missed") {
  ClassBConfig cfg;
  SUBCASE("early by 3 symbols") {
    auto s = locked_state(1'000'000'000);
    auto out = on_beacon_window(s, cfg, 1'000'200'000,
                                beacon_at(1'000'000'000 - 3 * kSym, 256));
    CHECK(out.accepted);
    CHECK(s.mode == ClassBMode::locked);
    CHECK(s.expected_beacon_time == 1'000'000'000 - 3 * kSym + kBeaconPeriod);
  }
  SUBCASE("early by 4 symbols") {
    auto s = locked_state(1'000'000'000);
    auto out = on_beacon_window(s, cfg, 1'000'200'000,
                                beacon_at(1'000'000'000 - 4 * kSym, 256));
    CHECK_FALSE(out.accepted);
    CHECK(s.mode == ClassBMode::beaconless);
  }
}

TEST_CASE("drift tracking boundary holds for any period count") {
  ClassBConfig cfg;
  for (int step = 1; step <= 3; ++step) {
    auto s = locked_state(kBeaconPeriod);
    Micros arrival = 0;
    for (int p = 0; p < 50; ++p) {
      arrival += kBeaconPeriod;
      arrival -= static_cast<Micros>(step) * kSym;  // relative drift per period
      auto out = on_beacon_window(s, cfg, arrival + 200'000,
                                  beacon_at(arrival, 0));
      REQUIRE(out.accepted);
      REQUIRE(s.mode == ClassBMode::locked);
    }
  }
  for (int step = 4; step <= 8; ++step) {
    auto s = locked_state(kBeaconPeriod);
    const Micros arrival = kBeaconPeriod - static_cast<Micros>(step) * kSym;
    auto out = on_beacon_window(s, cfg, arrival + 200'000,
                                beacon_at(arrival, 0));
    CHECK_FALSE(out.accepted);
    CHECK(s.mode == ClassBMode::beaconless);
  }
}

TEST_CASE("beaconless widening is monotone, capped, and re-locks") {
  ClassBConfig cfg;
  auto s = locked_state(kBeaconPeriod);
  Micros now = kBeaconPeriod;
  double prev_guard = s.window_guard_symbols;
  for (int miss = 0; miss < 40; ++miss) {
    on_beacon_window(s, cfg, now, std::nullopt);
    CHECK(s.window_guard_symbols >= prev_guard);
    CHECK(s.window_guard_symbols <= cfg.guard_cap_symbols);
    prev_guard = s.window_guard_symbols;
    now += kBeaconPeriod;
  }
  CHECK(s.mode == ClassBMode::beaconless);
  // A beacon inside the widened window restores the lock and the guard.
  const Micros arrival = s.expected_beacon_time - 10 * kSym;
  auto out = on_beacon_window(s, cfg, arrival + 200'000, beacon_at(arrival, 0));
  CHECK(out.accepted);
  CHECK(s.mode == ClassBMode::locked);
  CHECK(s.window_guard_symbols == cfg.window_guard_symbols);
}

TEST_CASE("beaconless mode expires into Class A after two hours") {
  ClassBConfig cfg;
  auto s = locked_state(kBeaconPeriod);
  Micros now = kBeaconPeriod;
  on_beacon_window(s, cfg, now, std::nullopt);  // lock lost here
  const Micros since = now;
  bool reverted = false;
  while (!reverted) {
    now += kBeaconPeriod;
    auto out = on_beacon_window(s, cfg, now, std::nullopt);
    reverted = out.reverted_to_class_a;
    if (now - since < cfg.beaconless_timeout) CHECK_FALSE(reverted);
  }
  CHECK(s.mode == ClassBMode::class_a);
  CHECK(now - since >= cfg.beaconless_timeout);
}

TEST_CASE("ping slots are deterministic, in range, and address-separated") {
  frames::BeaconPayload p;
  p.gps_time_s = 512;
  const auto a = ping_slot_times(1'000'000, p, 0x11223344);
  const auto b = ping_slot_times(1'000'000, p, 0x11223344);
  CHECK(a == b);
  REQUIRE(a.size() == 1);
  CHECK(a[0] >= 1'000'000 + kBeaconReserved);
  CHECK(a[0] < 1'000'000 + kBeaconPeriod);

  // gw_info is not timing-relevant.
  frames::BeaconPayload q = p;
  q.gw_info = {'X'};
  CHECK(ping_slot_times(1'000'000, q, 0x11223344) == a);

  std::mt19937 rng(5);
  int collisions = 0;
  const int pairs = 1000;
  for (int i = 0; i < pairs; ++i) {
    const auto addr1 = static_cast<std::uint32_t>(rng());
    const auto addr2 = static_cast<std::uint32_t>(rng());
    if (addr1 == addr2) continue;
    if (ping_slot_times(0, p, addr1) == ping_slot_times(0, p, addr2)) {
      ++collisions;
    }
  }
  CHECK(collisions < pairs / 100);
}

TEST_CASE("ping acceptance uses the nine-symbol guard") {
  ClassBConfig cfg;
  auto s = locked_state(kBeaconPeriod);
  const std::vector<Micros> slots{10'000'000};
  CHECK(ping_slot_timing_ok(s, cfg, slots, 10'000'000));
  CHECK(ping_slot_timing_ok(s, cfg, slots, 10'000'000 + 9 * kSym));
  CHECK_FALSE(ping_slot_timing_ok(s, cfg, slots, 10'000'000 + 9 * kSym + 1));
  CHECK_FALSE(ping_slot_timing_ok(s, cfg, slots, 10'000'000 - 10 * kSym));
  s.mode = ClassBMode::class_a;
  CHECK_FALSE(ping_slot_timing_ok(s, cfg, slots, 10'000'000));
}

TEST_CASE("uplink channel choice is uniform over the enabled channels") {
  sim::Engine engine(99);
  sim::RadioMedium radio(engine, sim::ChannelModel{});
  const auto node = radio.add_node("ed");
  DeviceConfig cfg;
  cfg.uplink_period = 0;
  EndDevice ed(engine, radio, node, cfg);

  std::map<int, int> counts;
  const int draws = 10'000;
  for (int i = 0; i < draws; ++i) {
    auto [frame, params] = ed.next_uplink(0);
    counts[params.freq_hz] += 1;
  }
  REQUIRE(counts.size() == 3);
  for (const auto& [freq, n] : counts) {
    CHECK(n > draws / 3 - 400);
    CHECK(n < draws / 3 + 400);
  }
}

TEST_CASE("uplink frames carry the adr flags and fixed nb_trans") {
  sim::Engine engine(1);
  sim::RadioMedium radio(engine, sim::ChannelModel{});
  const auto node = radio.add_node("ed");
  DeviceConfig cfg;
  cfg.uplink_period = 0;
  cfg.adr_ack_limit = 4;
  EndDevice ed(engine, radio, node, cfg);

  auto [f1, p1] = ed.next_uplink(0);
  CHECK(f1.flags.adr);
  CHECK_FALSE(f1.flags.adr_ack_req);
  CHECK(f1.fcnt == 1);
  auto [f2, p2] = ed.next_uplink(0);
  CHECK(f2.fcnt == 2);
}
