#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "metaworld/metatrain/train.hpp"

namespace metaworld::cli {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Block {
  std::string name;
  numcore::Shape shape;
  std::vector<float> data;
  friend bool operator==(const Block&, const Block&) = default;
};

// MWC1 container, little-endian:
//   "MWC1" | u32 version | u32 config length | config text |
//   blocks until end of file: u16 name length, name, u8 rank, u32 dims, f32 data.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<Block> blocks;

  const Block* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
// Truncation, bad magic and version mismatch raise DataError with the byte
// offset where reading stopped.
Checkpoint read_checkpoint(std::istream& in);

// Parameters, optimizer moments and step counts, cycle and iteration
// counters and the metric history. Per-step random streams are derived from
// the counters, so no generator state is stored.
Checkpoint capture(const metatrain::TrainState& state);
std::unique_ptr<metatrain::TrainState> restore(const Checkpoint& ckpt);

// Writes through a temporary file and rename, so an interrupted save leaves
// the previous checkpoint intact.
void save_state(const std::filesystem::path& path, const metatrain::TrainState& state);
std::unique_ptr<metatrain::TrainState> load_state(const std::filesystem::path& path);

}  // namespace metaworld::cli
