#include "lorasim/frames.hpp"

#include <cstring>

#include "lorasim/siphash.hpp"

namespace lorasim::frames {

namespace {

constexpr std::uint8_t kMhdrUplink = 0x40;
constexpr std::uint8_t kMhdrDownlink = 0x60;

constexpr std::uint8_t kCidLinkAdr = 0x03;
constexpr std::uint8_t kCidDeviceTime = 0x0D;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

std::uint8_t flags_byte(const Flags& f, std::size_t fopts_len) {
  return static_cast<std::uint8_t>((f.adr ? 0x80 : 0) |
                                   (f.adr_ack_req ? 0x40 : 0) |
                                   (f.ack ? 0x20 : 0) | (f.class_b ? 0x10 : 0) |
                                   (fopts_len & 0x0f));
}

bool mic_covers_tx_params(Direction dir, MicPolicy policy) {
  if (dir == Direction::uplink) return policy != MicPolicy::V10;
  return policy == MicPolicy::Hardened;
}

bool mic_covers_conf_fcnt(const Frame& frame, MicPolicy policy) {
  if (frame.direction != Direction::downlink) return false;
  if (policy == MicPolicy::Hardened) return true;
  return policy == MicPolicy::V11 && frame.flags.ack;
}

}  // namespace

DeviceSession DeviceSession::derive(std::uint32_t dev_addr,
                                    std::uint64_t secret) {
  auto make_key = [&](std::uint8_t label) {
    SessionKey key;
    std::array<std::uint8_t, 16> seed_key{};
    for (int i = 0; i < 8; ++i) {
      seed_key[i] = static_cast<std::uint8_t>(secret >> (8 * i));
    }
    seed_key[8] = label;
    std::vector<std::uint8_t> msg;
    put_u32(msg, dev_addr);
    for (int half = 0; half < 2; ++half) {
      msg.push_back(static_cast<std::uint8_t>(half));
      const std::uint64_t h = siphash24(seed_key, msg);
      msg.pop_back();
      for (int i = 0; i < 8; ++i) {
        key.bytes[8 * half + i] = static_cast<std::uint8_t>(h >> (8 * i));
      }
    }
    return key;
  };
  DeviceSession s;
  s.dev_addr = dev_addr;
  s.key_mic_up = make_key('U');
  s.key_mic_down = make_key('D');
  s.key_conf = make_key('C');
  return s;
}

std::vector<std::uint8_t> encode_mac_commands(std::span<const MacCommand> cmds) {
  std::vector<std::uint8_t> out;
  for (const auto& cmd : cmds) {
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, LinkAdrReq>) {
            out.push_back(kCidLinkAdr);
            out.push_back(static_cast<std::uint8_t>((c.datarate << 4) |
                                                    (c.tp_index & 0x0f)));
            put_u16(out, c.ch_mask);
            out.push_back(static_cast<std::uint8_t>(c.nb_trans & 0x0f));
          } else if constexpr (std::is_same_v<T, LinkAdrAns>) {
            out.push_back(kCidLinkAdr);
            out.push_back(static_cast<std::uint8_t>(
                (c.power_ok ? 0x04 : 0) | (c.dr_ok ? 0x02 : 0) |
                (c.ch_ok ? 0x01 : 0)));
          } else if constexpr (std::is_same_v<T, DeviceTimeReq>) {
            out.push_back(kCidDeviceTime);
          } else if constexpr (std::is_same_v<T, DeviceTimeAns>) {
            out.push_back(kCidDeviceTime);
            put_u64(out, c.gps_time_us);
          }
        },
        cmd);
  }
  if (out.size() > kMaxFOptsBytes) {
    throw std::length_error("FOpts exceeds 15 bytes");
  }
  return out;
}

std::vector<MacCommand> decode_mac_commands(std::span<const std::uint8_t> bytes,
                                            Direction dir) {
  std::vector<MacCommand> cmds;
  std::size_t i = 0;
  const bool downlink = dir == Direction::downlink;
  auto need = [&](std::size_t n) {
    if (i + n > bytes.size()) throw DecodeError("truncated MAC command");
  };
  while (i < bytes.size()) {
    const std::uint8_t cid = bytes[i++];
    switch (cid) {
      case kCidLinkAdr:
        if (downlink) {
          need(4);
          LinkAdrReq req;
          req.datarate = bytes[i] >> 4;
          req.tp_index = bytes[i] & 0x0f;
          req.ch_mask = get_u16(bytes, i + 1);
          req.nb_trans = bytes[i + 3] & 0x0f;
          i += 4;
          cmds.emplace_back(req);
        } else {
          need(1);
          LinkAdrAns ans;
          ans.power_ok = (bytes[i] & 0x04) != 0;
          ans.dr_ok = (bytes[i] & 0x02) != 0;
          ans.ch_ok = (bytes[i] & 0x01) != 0;
          i += 1;
          cmds.emplace_back(ans);
        }
        break;
      case kCidDeviceTime:
        if (downlink) {
          need(8);
          DeviceTimeAns ans;
          ans.gps_time_us = get_u64(bytes, i);
          i += 8;
          cmds.emplace_back(ans);
        } else {
          cmds.emplace_back(DeviceTimeReq{});
        }
        break;
      default:
        throw DecodeError("unknown MAC command id");
    }
  }
  return cmds;
}

std::uint32_t compute_mic(const DeviceSession& session, const Frame& frame,
                          const phy::TxParams& tx, MicPolicy policy,
                          std::optional<std::uint32_t> conf_fcnt) {
  if (frame.direction == Direction::beacon) {
    throw std::invalid_argument("beacon frames carry no MIC");
  }
  if (frame.dev_addr != session.dev_addr) {
    throw std::invalid_argument("session does not match frame dev_addr");
  }
  // Canonical serialization (see README): direction tag, DevAddr, full
  // 32-bit FCnt, flags byte, FOpts, FPort, payload, then the policy-covered
  // extras in fixed order.
  std::vector<std::uint8_t> buf;
  buf.push_back(frame.direction == Direction::uplink ? 'U' : 'D');
  put_u32(buf, frame.dev_addr);
  put_u32(buf, frame.fcnt);
  buf.push_back(flags_byte(frame.flags, frame.fopts.size()));
  buf.push_back(static_cast<std::uint8_t>(frame.fopts.size()));
  buf.insert(buf.end(), frame.fopts.begin(), frame.fopts.end());
  buf.push_back(frame.fport ? 1 : 0);
  buf.push_back(frame.fport.value_or(0));
  put_u16(buf, static_cast<std::uint16_t>(frame.frm_payload.size()));
  buf.insert(buf.end(), frame.frm_payload.begin(), frame.frm_payload.end());
  if (mic_covers_tx_params(frame.direction, policy)) {
    put_u32(buf, static_cast<std::uint32_t>(tx.freq_hz));
    buf.push_back(static_cast<std::uint8_t>(tx.sf));
  }
  if (mic_covers_conf_fcnt(frame, policy)) {
    put_u32(buf, conf_fcnt.value_or(0));
  }
  const auto& key = frame.direction == Direction::uplink
                        ? session.key_mic_up
                        : session.key_mic_down;
  return static_cast<std::uint32_t>(siphash24(key.bytes, buf));
}

VerifyStatus verify(const Frame& frame, const DeviceSession& session,
                    const phy::TxParams& tx, MicPolicy policy,
                    std::optional<std::uint32_t> conf_fcnt) {
  if (compute_mic(session, frame, tx, policy, conf_fcnt) != frame.mic) {
    return VerifyStatus::bad_mic;
  }
  const std::uint32_t last = frame.direction == Direction::uplink
                                 ? session.fcnt_up
                                 : session.fcnt_down;
  if (frame.fcnt <= last) return VerifyStatus::stale_fcnt;
  return VerifyStatus::ok;
}

std::vector<std::uint8_t> encode(const Frame& frame) {
  std::vector<std::uint8_t> out;
  if (frame.direction == Direction::beacon) {
    if (!frame.beacon) throw std::invalid_argument("beacon payload missing");
    put_u32(out, frame.beacon->gps_time_s);
    out.insert(out.end(), frame.beacon->gw_info.begin(),
               frame.beacon->gw_info.end());
    return out;
  }
  if (frame.fopts.size() > kMaxFOptsBytes) {
    throw std::length_error("FOpts exceeds 15 bytes");
  }
  if (!frame.frm_payload.empty() && !frame.fport) {
    throw std::invalid_argument("payload requires FPort");
  }
  out.push_back(frame.direction == Direction::uplink ? kMhdrUplink
                                                     : kMhdrDownlink);
  put_u32(out, frame.dev_addr);
  out.push_back(flags_byte(frame.flags, frame.fopts.size()));
  put_u16(out, static_cast<std::uint16_t>(frame.fcnt & 0xffff));
  out.insert(out.end(), frame.fopts.begin(), frame.fopts.end());
  if (frame.fport) {
    out.push_back(*frame.fport);
    out.insert(out.end(), frame.frm_payload.begin(), frame.frm_payload.end());
  }
  put_u32(out, frame.mic);
  return out;
}

Frame decode(std::span<const std::uint8_t> bytes, Direction dir) {
  Frame f;
  f.direction = dir;
  if (dir == Direction::beacon) {
    if (bytes.size() != phy::kBeaconFrameBytes) {
      throw DecodeError("beacon frame must be 17 bytes");
    }
    BeaconPayload p;
    p.gps_time_s = get_u32(bytes, 0);
    std::memcpy(p.gw_info.data(), bytes.data() + 4, p.gw_info.size());
    f.beacon = p;
    return f;
  }
  if (bytes.size() < 12) throw DecodeError("data frame shorter than 12 bytes");
  const std::uint8_t mhdr = bytes[0];
  if ((dir == Direction::uplink && mhdr != kMhdrUplink) ||
      (dir == Direction::downlink && mhdr != kMhdrDownlink)) {
    throw DecodeError("MHDR does not match direction");
  }
  f.dev_addr = get_u32(bytes, 1);
  const std::uint8_t fctrl = bytes[5];
  f.flags.adr = (fctrl & 0x80) != 0;
  f.flags.adr_ack_req = (fctrl & 0x40) != 0;
  f.flags.ack = (fctrl & 0x20) != 0;
  f.flags.class_b = (fctrl & 0x10) != 0;
  const std::size_t fopts_len = fctrl & 0x0f;
  f.fcnt = get_u16(bytes, 6);
  std::size_t at = 8;
  if (bytes.size() < at + fopts_len + 4) throw DecodeError("truncated FOpts");
  f.fopts.assign(bytes.begin() + at, bytes.begin() + at + fopts_len);
  at += fopts_len;
  const std::size_t rest = bytes.size() - at - 4;
  if (rest > 0) {
    f.fport = bytes[at];
    f.frm_payload.assign(bytes.begin() + at + 1, bytes.end() - 4);
    at += rest;
  }
  f.mic = get_u32(bytes, at);
  return f;
}

namespace {

void xor_keystream(std::vector<std::uint8_t>& data, const SessionKey& key,
                   std::uint8_t stream_tag, const Frame& frame) {
  std::vector<std::uint8_t> block_input;
  block_input.push_back(stream_tag);
  block_input.push_back(frame.direction == Direction::uplink ? 'U' : 'D');
  put_u32(block_input, frame.dev_addr);
  put_u32(block_input, frame.fcnt);
  put_u32(block_input, 0);  // block counter, patched below
  const std::size_t ctr_at = block_input.size() - 4;
  for (std::size_t block = 0; block * 8 < data.size(); ++block) {
    for (int i = 0; i < 4; ++i) {
      block_input[ctr_at + i] = static_cast<std::uint8_t>(block >> (8 * i));
    }
    const std::uint64_t ks = siphash24(key.bytes, block_input);
    for (std::size_t i = 0; i < 8 && block * 8 + i < data.size(); ++i) {
      data[block * 8 + i] ^= static_cast<std::uint8_t>(ks >> (8 * i));
    }
  }
}

}  // namespace

Frame conceal(Frame frame, const DeviceSession& session, MicPolicy policy) {
  if (frame.direction == Direction::beacon) {
    throw std::invalid_argument("beacons are never concealed");
  }
  xor_keystream(frame.frm_payload, session.key_conf, 'P', frame);
  if (policy != MicPolicy::V10) {
    xor_keystream(frame.fopts, session.key_conf, 'O', frame);
  }
  return frame;
}

}  // namespace lorasim::frames
