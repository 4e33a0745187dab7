#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mxq {

/// Bytes needed for `numel` values of `bits` bits.
std::size_t packed_size(std::size_t numel, int bits);

/// Two's-complement values packed back to back; element i occupies bits
/// [i*b, (i+1)*b) of the stream, low bits first within each byte. Throws
/// naming the first value outside [-2^(b-1), 2^(b-1)-1].
std::vector<std::uint8_t> pack_tensor(std::span<const std::int32_t> values, int bits);

std::vector<std::int32_t> unpack_tensor(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t numel);

}  // namespace mxq
