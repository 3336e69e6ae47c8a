#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "metaworld/pongsim/sim.hpp"

namespace metaworld::pongsim {

using Dataset = std::vector<Trajectory>;

// Episode k is rollout(derive_seed(seed, k), steps).
Dataset generate_dataset(std::size_t episodes, std::size_t steps, std::uint64_t seed);

// MWD1 container, little-endian:
//   "MWD1" | u32 episode count | per episode: u32 T, u64 seed,
//   T-1 action bytes, T frames of 512 bit-packed bytes.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

std::uint64_t dataset_file_size(const Dataset& data);

}  // namespace metaworld::pongsim
