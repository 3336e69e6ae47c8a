#include "metaworld/pongsim/frame.hpp"

#include <bit>

namespace metaworld::pongsim {

std::size_t Frame::count() const {
  std::size_t n = 0;
  for (Row r : rows_) n += static_cast<std::size_t>(std::popcount(r));
  return n;
}

void Frame::pack(std::span<std::uint8_t, kPackedFrameBytes> out) const {
  for (std::size_t r = 0; r < kFrameSize; ++r) {
    for (std::size_t b = 0; b < 8; ++b) out[r * 8 + b] = static_cast<std::uint8_t>(rows_[r] >> (56 - 8 * b));
  }
}

Frame Frame::unpack(std::span<const std::uint8_t, kPackedFrameBytes> in) {
  Frame f;
  for (std::size_t r = 0; r < kFrameSize; ++r) {
    Row row = 0;
    for (std::size_t b = 0; b < 8; ++b) row = (row << 8) | in[r * 8 + b];
    f.rows_[r] = row;
  }
  return f;
}

}  // namespace metaworld::pongsim
