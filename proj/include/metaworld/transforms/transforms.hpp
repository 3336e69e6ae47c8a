#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "metaworld/pongsim/dataset.hpp"

namespace metaworld::transforms {

// Observation transforms that generate the environment variants. Every kind
// is an involution on frames; actions are never touched.
enum class TransformKind { Identity, Transpose, HorizontalSwap, ColorInvert, Mirror, VerticalSwap };

inline constexpr std::array<TransformKind, 6> kAllKinds = {
    TransformKind::Identity,    TransformKind::Transpose, TransformKind::HorizontalSwap,
    TransformKind::ColorInvert, TransformKind::Mirror,    TransformKind::VerticalSwap};

// Long names used on the command line and in configs: identity, transpose,
// hswap, invert, mirror, vswap.
std::string_view name(TransformKind kind);
// One-letter environment tags: o, t, h, c, m, v.
std::string_view env_tag(TransformKind kind);
std::optional<TransformKind> parse_kind(std::string_view text);

pongsim::Frame apply(TransformKind kind, const pongsim::Frame& frame);
pongsim::Trajectory transform_trajectory(TransformKind kind, const pongsim::Trajectory& traj);
pongsim::Dataset transform_dataset(TransformKind kind, const pongsim::Dataset& data);

}  // namespace metaworld::transforms
