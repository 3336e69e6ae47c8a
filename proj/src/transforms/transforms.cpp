#include "metaworld/transforms/transforms.hpp"

#include <bit>

namespace metaworld::transforms {

using pongsim::Frame;
using pongsim::kFrameSize;

namespace {

constexpr std::size_t kHalf = kFrameSize / 2;

Frame::Row reverse_bits(Frame::Row x) {
  x = ((x >> 1) & 0x5555555555555555ull) | ((x & 0x5555555555555555ull) << 1);
  x = ((x >> 2) & 0x3333333333333333ull) | ((x & 0x3333333333333333ull) << 2);
  x = ((x >> 4) & 0x0F0F0F0F0F0F0F0Full) | ((x & 0x0F0F0F0F0F0F0F0Full) << 4);
  return __builtin_bswap64(x);
}

}  // namespace

std::string_view name(TransformKind kind) {
  switch (kind) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Transpose: return "transpose";
    case TransformKind::HorizontalSwap: return "hswap";
    case TransformKind::ColorInvert: return "invert";
    case TransformKind::Mirror: return "mirror";
    case TransformKind::VerticalSwap: return "vswap";
  }
  return "?";
}

std::string_view env_tag(TransformKind kind) {
  switch (kind) {
    case TransformKind::Identity: return "o";
    case TransformKind::Transpose: return "t";
    case TransformKind::HorizontalSwap: return "h";
    case TransformKind::ColorInvert: return "c";
    case TransformKind::Mirror: return "m";
    case TransformKind::VerticalSwap: return "v";
  }
  return "?";
}

std::optional<TransformKind> parse_kind(std::string_view text) {
  for (auto k : kAllKinds) {
    if (text == name(k) || text == env_tag(k)) return k;
  }
  return std::nullopt;
}

Frame apply(TransformKind kind, const Frame& in) {
  Frame out;
  switch (kind) {
    case TransformKind::Identity:
      return in;
    case TransformKind::Transpose:
      // Clockwise quarter turn followed by a horizontal flip is the transpose.
      for (std::size_t r = 0; r < kFrameSize; ++r) {
        for (std::size_t c = 0; c < kFrameSize; ++c) {
          if (in.get(c, r)) out.set(r, c);
        }
      }
      return out;
    case TransformKind::HorizontalSwap:
      for (std::size_t r = 0; r < kFrameSize; ++r) out.set_row(r, std::rotl(in.row(r), kHalf));
      return out;
    case TransformKind::ColorInvert:
      for (std::size_t r = 0; r < kFrameSize; ++r) out.set_row(r, ~in.row(r));
      return out;
    case TransformKind::Mirror:
      for (std::size_t r = 0; r < kFrameSize; ++r) out.set_row(r, reverse_bits(in.row(r)));
      return out;
    case TransformKind::VerticalSwap:
      for (std::size_t r = 0; r < kFrameSize; ++r) out.set_row(r, in.row((r + kHalf) % kFrameSize));
      return out;
  }
  return in;
}

pongsim::Trajectory transform_trajectory(TransformKind kind, const pongsim::Trajectory& traj) {
  pongsim::Trajectory out;
  out.seed = traj.seed;
  out.actions = traj.actions;
  out.frames.reserve(traj.frames.size());
  for (const auto& f : traj.frames) out.frames.push_back(apply(kind, f));
  return out;
}

pongsim::Dataset transform_dataset(TransformKind kind, const pongsim::Dataset& data) {
  pongsim::Dataset out;
  out.reserve(data.size());
  for (const auto& t : data) out.push_back(transform_trajectory(kind, t));
  return out;
}

}  // namespace metaworld::transforms
