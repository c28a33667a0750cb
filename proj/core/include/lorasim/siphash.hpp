#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace lorasim {

// SipHash-2-4, the keyed 64-bit PRF. Serves as the MAC behind frame
// integrity codes, the keystream generator for payload masking, and the
// ping-slot offset PRF. Verified against the reference test vectors.
std::uint64_t siphash24(const std::array<std::uint8_t, 16>& key,
                        std::span<const std::uint8_t> msg);

}  // namespace lorasim
