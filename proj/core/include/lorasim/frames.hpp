#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "lorasim/phy.hpp"
#include "lorasim/time.hpp"

namespace lorasim::frames {

enum class Direction : std::uint8_t { uplink, downlink, beacon };

struct Flags {
  bool adr = false;
  bool adr_ack_req = false;
  bool ack = false;
  bool class_b = false;

  friend bool operator==(const Flags&, const Flags&) = default;
};

struct LinkAdrReq {
  int datarate = 0;   // target DR index
  int tp_index = 0;   // 0 = max power, each index steps -2 dBm
  std::uint16_t ch_mask = 0;
  int nb_trans = 1;

  friend bool operator==(const LinkAdrReq&, const LinkAdrReq&) = default;
};

struct LinkAdrAns {
  bool power_ok = false;
  bool dr_ok = false;
  bool ch_ok = false;

  bool accepted() const { return power_ok && dr_ok && ch_ok; }
  friend bool operator==(const LinkAdrAns&, const LinkAdrAns&) = default;
};

struct DeviceTimeReq {
  friend bool operator==(const DeviceTimeReq&, const DeviceTimeReq&) = default;
};

struct DeviceTimeAns {
  std::uint64_t gps_time_us = 0;

  friend bool operator==(const DeviceTimeAns&, const DeviceTimeAns&) = default;
};

using MacCommand =
    std::variant<LinkAdrReq, LinkAdrAns, DeviceTimeReq, DeviceTimeAns>;

inline constexpr std::size_t kMaxFOptsBytes = 15;

// Serialized MAC-command bytes as carried in the FOpts field. Throws
// std::length_error past the 15-byte FOpts cap.
std::vector<std::uint8_t> encode_mac_commands(std::span<const MacCommand> cmds);
std::vector<MacCommand> decode_mac_commands(std::span<const std::uint8_t> bytes,
                                            Direction dir);

struct BeaconPayload {
  std::uint32_t gps_time_s = 0;
  std::array<std::uint8_t, 13> gw_info{};  // origin tag, not timing-relevant

  friend bool operator==(const BeaconPayload&, const BeaconPayload&) = default;
};

// One LoRaWAN MAC frame. Data frames use the dev_addr/fcnt/flags/fopts/
// fport/frm_payload/mic fields; beacon frames carry only `beacon`.
// FOpts holds wire bytes so it can be masked in place; use the MAC-command
// codec above to interpret it.
struct Frame {
  Direction direction = Direction::uplink;
  std::uint32_t dev_addr = 0;
  std::uint32_t fcnt = 0;
  Flags flags;
  std::vector<std::uint8_t> fopts;
  std::optional<std::uint8_t> fport;
  std::vector<std::uint8_t> frm_payload;
  std::uint32_t mic = 0;
  std::optional<BeaconPayload> beacon;

  friend bool operator==(const Frame&, const Frame&) = default;
};

// Which fields the 32-bit integrity code covers:
//   V10       uplinks/downlinks: header + payload only.
//   V11       uplinks also bind (freq, dr); downlinks bind the answered
//             uplink FCnt only when the ack flag is set.
//   Hardened  downlinks additionally bind (freq, dr) and always bind the
//             transaction's uplink FCnt.
enum class MicPolicy : std::uint8_t { V10, V11, Hardened };

struct SessionKey {
  std::array<std::uint8_t, 16> bytes{};

  friend bool operator==(const SessionKey&, const SessionKey&) = default;
};

// ABP session state. fcnt_up / fcnt_down track the last counter used in the
// respective direction (sent on the device, accepted on the server, and
// vice versa for downlinks).
struct DeviceSession {
  std::uint32_t dev_addr = 0;
  SessionKey key_mic_up;
  SessionKey key_mic_down;
  SessionKey key_conf;
  std::uint32_t fcnt_up = 0;
  std::uint32_t fcnt_down = 0;

  static DeviceSession derive(std::uint32_t dev_addr, std::uint64_t secret);
};

// conf_fcnt is the uplink frame counter of the transaction a downlink
// answers; ignored for uplinks and for policies/flags that do not bind it.
std::uint32_t compute_mic(const DeviceSession& session, const Frame& frame,
                          const phy::TxParams& tx, MicPolicy policy,
                          std::optional<std::uint32_t> conf_fcnt = std::nullopt);

enum class VerifyStatus : std::uint8_t { ok, bad_mic, stale_fcnt };

// MIC check plus strictly-monotone frame-counter acceptance against the
// session's last counter for the frame's direction.
VerifyStatus verify(const Frame& frame, const DeviceSession& session,
                    const phy::TxParams& tx, MicPolicy policy,
                    std::optional<std::uint32_t> conf_fcnt = std::nullopt);

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wire codec. Data frames: MHDR(1) DevAddr(4) FCtrl(1) FCnt16(2)
// FOpts(0..15) [FPort(1) FRMPayload(n)] MIC(4), all little-endian; the
// minimal data frame is 12 bytes. Beacon frames: GpsTime(4) GwInfo(13),
// 17 bytes, no MIC. decode(encode(f)) == f for every valid frame with
// fcnt < 2^16 (only the low half goes on the wire).
std::vector<std::uint8_t> encode(const Frame& frame);
Frame decode(std::span<const std::uint8_t> bytes, Direction dir);

// Keystream-masks frm_payload (and FOpts under V11/Hardened) in place.
// XOR masking, so applying it twice restores the original; reveal() is the
// same operation under a readable name. Header flags stay cleartext.
Frame conceal(Frame frame, const DeviceSession& session, MicPolicy policy);
inline Frame reveal(Frame frame, const DeviceSession& session,
                    MicPolicy policy) {
  return conceal(std::move(frame), session, policy);
}

}  // namespace lorasim::frames
