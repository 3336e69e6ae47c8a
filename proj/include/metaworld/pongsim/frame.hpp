#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace metaworld::pongsim {

inline constexpr std::size_t kFrameSize = 64;
inline constexpr std::size_t kFramePixels = kFrameSize * kFrameSize;
inline constexpr std::size_t kPackedFrameBytes = kFramePixels / 8;

// 64x64 binary observation. Each row is one 64-bit word; column c lives in
// bit (63 - c), so serialising rows most-significant byte first gives the
// row-major MSB-first packing used on disk.
class Frame {
 public:
  using Row = std::uint64_t;

  bool get(std::size_t r, std::size_t c) const { return (rows_[r] >> (63 - c)) & 1u; }
  void set(std::size_t r, std::size_t c, bool on = true) {
    const Row bit = Row{1} << (63 - c);
    rows_[r] = on ? (rows_[r] | bit) : (rows_[r] & ~bit);
  }

  Row row(std::size_t r) const { return rows_[r]; }
  void set_row(std::size_t r, Row bits) { rows_[r] = bits; }

  std::size_t count() const;

  void pack(std::span<std::uint8_t, kPackedFrameBytes> out) const;
  static Frame unpack(std::span<const std::uint8_t, kPackedFrameBytes> in);

  // Writes the 4096 pixels as 0/1 values, row-major.
  template <typename T>
  void write_pixels(T* out) const {
    for (std::size_t r = 0; r < kFrameSize; ++r) {
      for (std::size_t c = 0; c < kFrameSize; ++c) out[r * kFrameSize + c] = get(r, c) ? T(1) : T(0);
    }
  }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  std::array<Row, kFrameSize> rows_{};
};

}  // namespace metaworld::pongsim
