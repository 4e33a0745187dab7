#include "mxq/packing.hpp"

#include <string>

#include "mxq/tensor.hpp"

namespace mxq {
namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 8) throw Error("pack: bit-width " + std::to_string(bits) + " not in [2, 8]");
}

}  // namespace

std::size_t packed_size(std::size_t numel, int bits) {
  return (numel * static_cast<std::size_t>(bits) + 7) / 8;
}

std::vector<std::uint8_t> pack_tensor(std::span<const std::int32_t> values, int bits) {
  check_bits(bits);
  const std::int32_t lo = -(1 << (bits - 1)), hi = (1 << (bits - 1)) - 1;
  const std::uint32_t mask = (1u << bits) - 1u;
  std::vector<std::uint8_t> out(packed_size(values.size(), bits), 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < values.size(); ++i, pos += static_cast<std::size_t>(bits)) {
    const std::int32_t v = values[i];
    if (v < lo || v > hi) {
      throw Error("pack: value " + std::to_string(v) + " at index " + std::to_string(i) +
                  " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "] for " +
                  std::to_string(bits) + " bits");
    }
    const std::uint32_t u = static_cast<std::uint32_t>(v) & mask;
    const std::size_t byte = pos / 8, shift = pos % 8;
    out[byte] |= static_cast<std::uint8_t>(u << shift);
    if (shift + static_cast<std::size_t>(bits) > 8)
      out[byte + 1] |= static_cast<std::uint8_t>(u >> (8 - shift));
  }
  return out;
}

std::vector<std::int32_t> unpack_tensor(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t numel) {
  check_bits(bits);
  if (bytes.size() != packed_size(numel, bits)) {
    throw Error("unpack: " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(packed_size(numel, bits)) + " for " + std::to_string(numel) +
                " values of " + std::to_string(bits) + " bits");
  }
  const std::size_t used = (numel * static_cast<std::size_t>(bits)) % 8;
  if (used != 0 && (bytes.back() >> used) != 0) throw Error("unpack: nonzero padding bits");
  const std::uint32_t mask = (1u << bits) - 1u, sign = 1u << (bits - 1);
  std::vector<std::int32_t> out(numel);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < numel; ++i, pos += static_cast<std::size_t>(bits)) {
    const std::size_t byte = pos / 8, shift = pos % 8;
    std::uint32_t u = bytes[byte] >> shift;
    if (shift + static_cast<std::size_t>(bits) > 8) u |= static_cast<std::uint32_t>(bytes[byte + 1]) << (8 - shift);
    u &= mask;
    out[i] = static_cast<std::int32_t>(u ^ sign) - static_cast<std::int32_t>(sign);
  }
  return out;
}

}  // namespace mxq
