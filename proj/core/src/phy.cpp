#include "lorasim/phy.hpp"

#include <stdexcept>
#include <string>

namespace lorasim::phy {

DataRate::DataRate(int index) : index_(index) {
  if (index < kMin || index > kMax) {
    throw std::invalid_argument("data rate index out of range: " +
                                std::to_string(index));
  }
}

DataRate DataRate::from_sf(int sf) {
  if (sf < 7 || sf > 12) {
    throw std::invalid_argument("spreading factor out of range: " +
                                std::to_string(sf));
  }
  return DataRate(12 - sf);
}

TxParams TxParams::uplink(DataRate dr, int freq_hz, int power_dbm) {
  TxParams p;
  p.sf = dr.sf();
  p.freq_hz = freq_hz;
  p.power_dbm = power_dbm;
  return p;
}

TxParams TxParams::downlink(DataRate dr, int freq_hz, int power_dbm) {
  return uplink(dr, freq_hz, power_dbm);
}

TxParams TxParams::beacon(int power_dbm) {
  TxParams p;
  p.sf = 9;
  p.freq_hz = kBeaconFreqHz;
  p.power_dbm = power_dbm;
  p.preamble_symbols = 10;
  p.explicit_header = false;
  p.payload_crc = false;
  return p;
}

namespace {

void check_params(const TxParams& p) {
  if (p.sf < 7 || p.sf > 12) throw std::invalid_argument("sf out of [7,12]");
  if (p.bw_hz <= 0) throw std::invalid_argument("bandwidth must be positive");
  if (p.cr < 1 || p.cr > 4) throw std::invalid_argument("cr out of [1,4]");
  if (p.preamble_symbols < 1) {
    throw std::invalid_argument("preamble needs at least one symbol");
  }
}

// ceil(a / b) for positive b.
Micros ceil_div(Micros a, Micros b) { return (a + b - 1) / b; }

// Payload symbol count from the datasheet relation.
std::int64_t payload_symbols(const TxParams& p, std::size_t payload_len) {
  const std::int64_t pl = static_cast<std::int64_t>(payload_len);
  const std::int64_t crc = p.payload_crc ? 1 : 0;
  const std::int64_t ih = p.explicit_header ? 0 : 1;
  const std::int64_t de = p.low_dr_optimize_effective() ? 1 : 0;
  const std::int64_t num = 8 * pl - 4 * p.sf + 28 + 16 * crc - 20 * ih;
  const std::int64_t den = 4 * (p.sf - 2 * de);
  if (num <= 0) return 8;
  const std::int64_t ceil_frac = (num + den - 1) / den;
  return 8 + ceil_frac * (p.cr + 4);
}

}  // namespace

Micros symbol_duration(const TxParams& params) {
  check_params(params);
  const Micros num = (Micros{1} << params.sf) * kSecond;
  return ceil_div(num, static_cast<Micros>(params.bw_hz));
}

Micros time_on_air(const TxParams& params, std::size_t payload_len) {
  check_params(params);
  if (payload_len == 0) {
    throw std::invalid_argument("payload must be at least one byte");
  }
  // Work in quarter symbols so the 4.25-symbol preamble tail stays exact.
  const std::int64_t n_payload = payload_symbols(params, payload_len);
  const Micros quarter_symbols =
      4 * static_cast<Micros>(params.preamble_symbols) + 17 +
      4 * static_cast<Micros>(n_payload);
  const Micros num = quarter_symbols * (Micros{1} << params.sf) * kSecond;
  return ceil_div(num, 4 * static_cast<Micros>(params.bw_hz));
}

double required_snr(DataRate dr) {
  static constexpr double kFloorDb[6] = {-20.0, -17.5, -15.0,
                                         -12.5, -10.0, -7.5};
  return kFloorDb[dr.index()];
}

namespace {

bool overlaps(const ReceptionCandidate& a, const ReceptionCandidate& b) {
  return a.start < b.end && b.start < a.end;
}

}  // namespace

std::vector<bool> resolve_reception(
    std::span<const ReceptionCandidate> candidates) {
  std::vector<bool> decodable(candidates.size(), false);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.is_jam) continue;
    if (c.rx_snr_db < required_snr(DataRate::from_sf(c.sf))) continue;
    bool captured = true;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (j == i) continue;
      const auto& other = candidates[j];
      if (other.sf != c.sf) continue;
      if (!overlaps(c, other)) continue;
      if (other.is_jam && c.is_beacon) continue;
      if (other.rx_power_dbm > c.rx_power_dbm - kCoSfCaptureMarginDb) {
        captured = false;
        break;
      }
    }
    decodable[i] = captured;
  }
  return decodable;
}

}  // namespace lorasim::phy
