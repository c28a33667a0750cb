#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lorasim/time.hpp"

namespace lorasim::phy {

// EU868 uplink data rate: DR0..DR5 maps bijectively onto SF12..SF7 at
// 125 kHz bandwidth.
class DataRate {
 public:
  static constexpr int kMin = 0;
  static constexpr int kMax = 5;

  explicit DataRate(int index);
  static DataRate from_sf(int sf);

  int index() const { return index_; }
  int sf() const { return 12 - index_; }

  friend bool operator==(DataRate a, DataRate b) = default;

 private:
  int index_;
};

// Parameters of one radio emission.
struct TxParams {
  int sf = 7;
  int bw_hz = 125'000;
  int cr = 1;  // coding-rate denominator offset: 1 => 4/5 ... 4 => 4/8
  int freq_hz = 868'100'000;
  int power_dbm = 14;
  int preamble_symbols = 8;  // 8 for data frames, 10 for beacons
  bool explicit_header = true;
  bool payload_crc = true;
  // Auto-derived (sf >= 11 at 125 kHz) unless explicitly overridden.
  std::optional<bool> low_dr_optimize = std::nullopt;

  bool low_dr_optimize_effective() const {
    return low_dr_optimize.value_or(sf >= 11 && bw_hz == 125'000);
  }
  DataRate datarate() const { return DataRate::from_sf(sf); }

  static TxParams uplink(DataRate dr, int freq_hz, int power_dbm = 14);
  static TxParams downlink(DataRate dr, int freq_hz, int power_dbm = 14);
  // SF9, 10-symbol preamble, implicit header, no payload CRC, 869.525 MHz.
  static TxParams beacon(int power_dbm = 14);
};

inline constexpr int kBeaconFreqHz = 869'525'000;
inline constexpr std::size_t kBeaconFrameBytes = 17;
inline constexpr Micros kBeaconPeriod = 128 * kSecond;

// Duration of one chirp symbol, 2^sf / bw seconds in integer microseconds
// (exact for all 125 kHz configurations; rounded up otherwise).
Micros symbol_duration(const TxParams& params);

// SX127x frame airtime: (preamble_symbols + 4.25 + payload_symbols) symbol
// durations, where
//   payload_symbols = 8 + max(ceil((8*PL - 4*SF + 28 + 16*CRC - 20*IH)
//                                  / (4*(SF - 2*DE))) * (cr + 4), 0).
// Rounded up to the next microsecond. Rejects payload_len == 0.
Micros time_on_air(const TxParams& params, std::size_t payload_len);

// Demodulation floor per data rate: -20.0 dB (DR0) .. -7.5 dB (DR5).
double required_snr(DataRate dr);

inline constexpr double kCoSfCaptureMarginDb = 6.0;

// One transmission as seen by a single receiver.
struct ReceptionCandidate {
  int sf = 7;
  double rx_power_dbm = 0.0;
  double rx_snr_db = 0.0;
  Micros start = 0;
  Micros end = 0;
  bool is_jam = false;
  bool is_beacon = false;
};

// Co-SF capture rule over a set of (pairwise possibly overlapping)
// transmissions at one receiver. A candidate decodes iff its SNR sits at or
// above the floor for its data rate and every overlapping same-SF candidate
// is at least 6 dB weaker in received power. Cross-SF overlap does not
// interfere. Jam bursts never decode; they interfere with data frames but
// are transparent to beacon reception (random payload symbols do not break
// a beacon receiver's correlation-based sync).
std::vector<bool> resolve_reception(std::span<const ReceptionCandidate> candidates);

}  // namespace lorasim::phy
