#include <vector>

#include "doctest.h"
#include "lorasim/simkit.hpp"

using namespace lorasim;
using namespace lorasim::sim;

namespace {

Transmission make_tx(NodeId src, int freq, int sf, Micros start, Micros dur,
                     TxKind kind = TxKind::data) {
  Transmission tx;
  tx.source = src;
  tx.params.freq_hz = freq;
  tx.params.sf = sf;
  tx.params.power_dbm = 14;
  tx.start = start;
  tx.duration = dur;
  tx.payload = {1, 2, 3};
  tx.kind = kind;
  return tx;
}

}  // namespace

TEST_CASE("empty queue runs zero events") {
  Engine e(1);
  CHECK(e.run_until(1'000'000) == 0);
  CHECK(e.now() == 1'000'000);
}

TEST_CASE("equal-time events run in insertion order") {
  Engine e(1);
  std::vector<int> order;
  e.schedule_at(100, [&]() { order.push_back(1); });
  e.schedule_at(100, [&]() { order.push_back(2); });
  e.schedule_at(50, [&]() { order.push_back(0); });
  e.run_until(200);
  CHECK(order == std::vector<int>{0, 1, 2});
}

TEST_CASE("scheduling into the past throws") {
  Engine e(1);
  e.schedule_at(100, []() {});
  e.run_until(100);
  CHECK_THROWS_AS(e.schedule_at(99, []() {}), std::logic_error);
}

TEST_CASE("identical seeds give identical trace hashes") {
  auto run = [](std::uint64_t seed) {
    Engine e(seed);
    for (int i = 0; i < 50; ++i) {
      e.schedule_at(i * 10, [&e]() {
        e.trace("n", "tick", std::to_string(e.gaussian(0, 1)));
      });
    }
    e.run_until(1000);
    return e.trace_hash();
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("delivery requires a matching listen configuration") {
  Engine e(1);
  ChannelModel ch;
  ch.snr_jitter_sigma_db = 0.0;
  RadioMedium radio(e, ch);
  const auto tx_node = radio.add_node("tx");
  const auto rx_node = radio.add_node("rx");
  radio.channel().set_link(tx_node, rx_node, 100.0);

  int received = 0;
  radio.set_reception_handler(rx_node, [&](const Reception& r) {
    if (r.decoded) ++received;
  });

  SUBCASE("matching frequency and sf") {
    radio.listen(rx_node, 868'100'000, 7);
    radio.transmit(make_tx(tx_node, 868'100'000, 7, 0, 1000));
    e.run_until(10'000);
    CHECK(received == 1);
  }
  SUBCASE("other frequency stays silent") {
    radio.listen(rx_node, 868'300'000, 7);
    radio.transmit(make_tx(tx_node, 868'100'000, 7, 0, 1000));
    e.run_until(10'000);
    CHECK(received == 0);
  }
  SUBCASE("other spreading factor stays silent") {
    radio.listen(rx_node, 868'100'000, 9);
    radio.transmit(make_tx(tx_node, 868'100'000, 7, 0, 1000));
    e.run_until(10'000);
    CHECK(received == 0);
  }
  SUBCASE("window that opens later misses the frame") {
    radio.listen_window(rx_node, 868'100'000, 7, 500, 10'000);
    radio.transmit(make_tx(tx_node, 868'100'000, 7, 0, 1000));
    e.run_until(20'000);
    CHECK(received == 0);
  }
}

TEST_CASE("snr floor separates delivery from silence") {
  Engine e(1);
  ChannelModel ch;
  ch.snr_jitter_sigma_db = 0.0;
  RadioMedium radio(e, ch);
  const auto tx_node = radio.add_node("tx");
  const auto rx_node = radio.add_node("rx");
  // 14 dBm - 140 dB - (-117 dBm) = -9 dB, above the DR2 floor of -15 but
  // below the DR5 floor of -7.5.
  radio.channel().set_link(tx_node, rx_node, 140.0);
  int decoded = 0;
  radio.set_reception_handler(rx_node, [&](const Reception& r) {
    if (r.decoded) ++decoded;
  });
  SUBCASE("DR2 frame decodes at -9 dB") {
    radio.listen(rx_node, 868'100'000, 10);
    radio.transmit(make_tx(tx_node, 868'100'000, 10, 0, 1000));
    e.run_until(10'000);
    CHECK(decoded == 1);
  }
  SUBCASE("DR5 frame stays below its floor") {
    radio.listen(rx_node, 868'100'000, 7);
    radio.transmit(make_tx(tx_node, 868'100'000, 7, 0, 1000));
    e.run_until(10'000);
    CHECK(decoded == 0);
  }
}

TEST_CASE("capture: jammer blinds the gateway while the sniffer decodes") {
  Engine e(1);
  ChannelModel ch;
  ch.snr_jitter_sigma_db = 0.0;
  RadioMedium radio(e, ch);
  const auto ed = radio.add_node("ed");
  const auto gw = radio.add_node("gw", true);
  const auto sniffer = radio.add_node("sniffer");
  const auto jammer = radio.add_node("jammer");
  radio.channel().set_link(ed, gw, 120.0);       // frame at -106 dBm
  radio.channel().set_link(jammer, gw, 110.0);   // jam at -96 dBm: 10 dB above
  radio.channel().set_link(ed, sniffer, 60.0);   // frame at -46 dBm
  radio.channel().set_link(jammer, sniffer, 150.0);  // jam 90 dB below

  bool gw_decoded = false, gw_observed = false, sniffer_decoded = false;
  radio.set_reception_handler(gw, [&](const Reception& r) {
    if (r.tx->kind != TxKind::data) return;
    gw_observed = true;
    gw_decoded = r.decoded;
  });
  radio.set_reception_handler(sniffer, [&](const Reception& r) {
    if (r.tx->kind == TxKind::data && r.decoded) sniffer_decoded = true;
  });
  radio.listen(sniffer, 868'100'000, 7);

  radio.transmit(make_tx(ed, 868'100'000, 7, 0, 10'000));
  radio.transmit(make_tx(jammer, 868'100'000, 7, 2'000, 9'000, TxKind::jam));
  e.run_until(100'000);
  CHECK(gw_observed);
  CHECK_FALSE(gw_decoded);
  CHECK(sniffer_decoded);
}

TEST_CASE("single-radio nodes reject overlapping listens, gateways do not") {
  Engine e(1);
  RadioMedium radio(e, ChannelModel{});
  const auto n = radio.add_node("n");
  const auto gw = radio.add_node("gw", true);
  radio.listen(n, 868'100'000, 7);
  CHECK_THROWS_AS(radio.listen(n, 868'300'000, 8), std::logic_error);
  radio.stop_listening(n);
  radio.listen(n, 868'300'000, 8);  // fine after closing
  radio.listen(gw, 868'100'000, 7);
  radio.listen(gw, 868'300'000, 8);  // multi-channel node is exempt
}

TEST_CASE("preamble handler sees the target frame header in time") {
  Engine e(1);
  ChannelModel ch;
  ch.snr_jitter_sigma_db = 0.0;
  RadioMedium radio(e, ch);
  const auto tx_node = radio.add_node("tx");
  const auto rx_node = radio.add_node("rx");
  radio.channel().set_link(tx_node, rx_node, 100.0);
  radio.listen(rx_node, 868'100'000, 7);
  Micros preamble_at = 0;
  radio.set_preamble_handler(rx_node, [&](const Transmission& tx) {
    preamble_at = e.now();
    CHECK(tx.payload.size() == 3);
  });
  auto tx = make_tx(tx_node, 868'100'000, 7, 0, 50'000);
  tx.params.preamble_symbols = 8;
  radio.transmit(tx);
  e.run_until(100'000);
  CHECK(preamble_at == 8 * 1024);  // eight SF7 symbols
}
