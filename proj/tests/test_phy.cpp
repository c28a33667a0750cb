#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "lorasim/phy.hpp"

using namespace lorasim;
using phy::DataRate;
using phy::TxParams;

namespace {

// Independent double-precision evaluation of the airtime relation, kept
// apart from the integer implementation it checks.
double airtime_oracle_us(const TxParams& p, std::size_t len) {
  const double tsym = std::pow(2.0, p.sf) / p.bw_hz * 1e6;
  const int de = p.low_dr_optimize_effective() ? 1 : 0;
  const int ih = p.explicit_header ? 0 : 1;
  const int crc = p.payload_crc ? 1 : 0;
  const double num = 8.0 * static_cast<double>(len) - 4.0 * p.sf + 28.0 +
                     16.0 * crc - 20.0 * ih;
  const double n_payload =
      8.0 + std::max(std::ceil(num / (4.0 * (p.sf - 2 * de))) * (p.cr + 4), 0.0);
  return (p.preamble_symbols + 4.25 + n_payload) * tsym;
}

TxParams data_params(int dr) {
  return TxParams::uplink(DataRate(dr), 868'100'000);
}

}  // namespace

TEST_CASE("symbol durations are exact for 125 kHz") {
  TxParams p;
  p.sf = 9;
  CHECK(phy::symbol_duration(p) == 4096);
  p.sf = 12;
  CHECK(phy::symbol_duration(p) == 32768);
  p.sf = 7;
  CHECK(phy::symbol_duration(p) == 1024);
}

TEST_CASE("beacon frame airtime") {
  CHECK(phy::time_on_air(TxParams::beacon(), phy::kBeaconFrameBytes) == 152576);
}

TEST_CASE("14-byte data frame endpoints") {
  CHECK(phy::time_on_air(data_params(5), 14) == 46336);
  CHECK(phy::time_on_air(data_params(0), 14) == 1155072);
  CHECK(phy::time_on_air(data_params(3), 14) == 164864);
}

TEST_CASE("airtime matches the floating-point oracle to 1 us") {
  for (int sf = 7; sf <= 12; ++sf) {
    for (int preamble : {8, 10}) {
      for (bool crc : {false, true}) {
        for (bool explicit_header : {false, true}) {
          TxParams p;
          p.sf = sf;
          p.preamble_symbols = preamble;
          p.payload_crc = crc;
          p.explicit_header = explicit_header;
          for (std::size_t len = 1; len <= 64; ++len) {
            const double oracle = airtime_oracle_us(p, len);
            const auto got = static_cast<double>(phy::time_on_air(p, len));
            CHECK(got >= oracle - 1e-6);
            CHECK(got <= oracle + 1.0);
          }
        }
      }
    }
  }
}

TEST_CASE("airtime rejects empty payload") {
  CHECK_THROWS_AS(phy::time_on_air(data_params(0), 0), std::invalid_argument);
}

TEST_CASE("airtime plateaus follow the symbol-group width") {
  for (int dr = 0; dr <= 5; ++dr) {
    const TxParams p = data_params(dr);
    const int de = p.low_dr_optimize_effective() ? 1 : 0;
    const double group = (p.sf - 2.0 * de) / 2.0;
    // Interior runs of equal airtime are floor(group) or ceil(group) long.
    std::vector<std::size_t> runs;
    std::size_t run = 1;
    Micros prev = phy::time_on_air(p, 4);
    for (std::size_t len = 5; len <= 60; ++len) {
      const Micros t = phy::time_on_air(p, len);
      CHECK(t >= prev);
      if (t == prev) {
        ++run;
      } else {
        runs.push_back(run);
        run = 1;
      }
      prev = t;
    }
    REQUIRE(runs.size() >= 3);
    for (std::size_t i = 1; i + 1 < runs.size(); ++i) {
      CHECK(runs[i] >= static_cast<std::size_t>(std::floor(group)));
      CHECK(runs[i] <= static_cast<std::size_t>(std::ceil(group)));
    }
  }
}

TEST_CASE("airtime strictly orders data rates") {
  for (std::size_t len = 12; len <= 30; ++len) {
    for (int dr = 0; dr < 5; ++dr) {
      CHECK(phy::time_on_air(data_params(dr), len) >
            phy::time_on_air(data_params(dr + 1), len));
    }
  }
}

TEST_CASE("500 ms boundary at 12-byte payload isolates DR0 and DR1") {
  for (int dr = 0; dr <= 5; ++dr) {
    const bool above = phy::time_on_air(data_params(dr), 12) > 500'000;
    CHECK(above == (dr <= 1));
  }
}

TEST_CASE("required snr table") {
  CHECK(phy::required_snr(DataRate(0)) == doctest::Approx(-20.0));
  CHECK(phy::required_snr(DataRate(1)) == doctest::Approx(-17.5));
  CHECK(phy::required_snr(DataRate(2)) == doctest::Approx(-15.0));
  CHECK(phy::required_snr(DataRate(3)) == doctest::Approx(-12.5));
  CHECK(phy::required_snr(DataRate(4)) == doctest::Approx(-10.0));
  CHECK(phy::required_snr(DataRate(5)) == doctest::Approx(-7.5));
  CHECK_THROWS_AS(DataRate(6), std::invalid_argument);
  CHECK_THROWS_AS(DataRate(-1), std::invalid_argument);
}

namespace {

phy::ReceptionCandidate cand(int sf, double power, double snr, Micros start,
                             Micros end, bool jam = false, bool beacon = false) {
  return phy::ReceptionCandidate{sf, power, snr, start, end, jam, beacon};
}

}  // namespace

TEST_CASE("single frame above its floor decodes") {
  const auto r = phy::resolve_reception(
      std::vector{cand(10, -120.0, -9.0, 0, 100)});  // DR2 floor is -15
  CHECK(r == std::vector{true});
}

TEST_CASE("five dB co-SF margin kills both frames") {
  const auto r = phy::resolve_reception(std::vector{
      cand(7, -100.0, 10.0, 0, 100), cand(7, -105.0, 5.0, 50, 150)});
  CHECK(r == std::vector{false, false});
}

TEST_CASE("six dB co-SF margin lets the stronger frame through") {
  const auto r = phy::resolve_reception(std::vector{
      cand(7, -100.0, 10.0, 0, 100), cand(7, -106.0, 4.0, 50, 150)});
  CHECK(r == std::vector{true, false});
}

TEST_CASE("cross-SF overlap does not interfere") {
  const auto r = phy::resolve_reception(std::vector{
      cand(7, -100.0, 10.0, 0, 100), cand(9, -90.0, 20.0, 0, 100)});
  CHECK(r == std::vector{true, true});
}

TEST_CASE("non-overlapping same-SF frames both decode") {
  const auto r = phy::resolve_reception(std::vector{
      cand(7, -100.0, 10.0, 0, 100), cand(7, -100.0, 10.0, 100, 200)});
  CHECK(r == std::vector{true, true});
}

TEST_CASE("jam bursts never decode but kill overlapping data") {
  const auto r = phy::resolve_reception(std::vector{
      cand(7, -100.0, 30.0, 0, 100), cand(7, -90.0, 40.0, 10, 60, true)});
  CHECK(r == std::vector{false, false});
}

TEST_CASE("jam bursts are transparent to beacon reception") {
  const auto r = phy::resolve_reception(std::vector{
      cand(9, -120.0, -5.0, 0, 100, false, true),
      cand(9, -90.0, 25.0, 10, 60, true)});
  CHECK(r == std::vector{true, false});
}

TEST_CASE("beacon-on-beacon overlap still follows capture") {
  const auto r = phy::resolve_reception(std::vector{
      cand(9, -123.0, -6.0, 0, 100, false, true),
      cand(9, -108.0, 9.0, 4, 104, false, true)});
  CHECK(r == std::vector{false, true});
}

TEST_CASE("resolve_reception is order-independent") {
  std::mt19937 rng(7);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<phy::ReceptionCandidate> cands;
    const int n = 2 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      const int sf = 7 + static_cast<int>(rng() % 6);
      const double power = -130.0 + static_cast<double>(rng() % 50);
      const double snr = power + 117.0;
      const Micros start = rng() % 200;
      cands.push_back(cand(sf, power, snr, start, start + 50 + rng() % 100,
                           rng() % 5 == 0, rng() % 5 == 1));
    }
    auto base = phy::resolve_reception(cands);
    std::vector<std::size_t> perm(cands.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<phy::ReceptionCandidate> shuffled;
    for (auto i : perm) shuffled.push_back(cands[i]);
    auto permuted = phy::resolve_reception(shuffled);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      CHECK(permuted[i] == base[perm[i]]);
    }
  }
}
