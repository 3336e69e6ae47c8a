#include "metaworld/pongsim/dataset.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "metaworld/errors.hpp"

namespace metaworld::pongsim {
namespace {

constexpr char kMagic[4] = {'M', 'W', 'D', '1'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw DataError("dataset: truncated while reading " + std::string(what) + " at offset " +
                      std::to_string(offset_));
    }
    offset_ += n;
  }

  template <typename U>
  U le(const char* what) {
    std::array<unsigned char, sizeof(U)> bytes;
    read(bytes.data(), bytes.size(), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

Dataset generate_dataset(std::size_t episodes, std::size_t steps, std::uint64_t seed) {
  Dataset data;
  data.reserve(episodes);
  for (std::size_t k = 0; k < episodes; ++k) data.push_back(rollout(derive_seed(seed, k), steps));
  return data;
}

void write_dataset(std::ostream& out, const Dataset& data) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  std::array<std::uint8_t, kPackedFrameBytes> packed;
  for (const auto& traj : data) {
    if (traj.frames.empty() || traj.actions.size() + 1 != traj.frames.size()) {
      throw DataError("dataset: trajectory with " + std::to_string(traj.frames.size()) + " frames and " +
                      std::to_string(traj.actions.size()) + " actions");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(traj.frames.size()));
    put_le<std::uint64_t>(out, traj.seed);
    for (Action a : traj.actions) out.put(static_cast<char>(a.value()));
    for (const auto& f : traj.frames) {
      f.pack(packed);
      out.write(reinterpret_cast<const char*>(packed.data()), packed.size());
    }
  }
  if (!out) throw DataError("dataset: write failed");
}

Dataset read_dataset(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("dataset: bad magic, expected MWD1");
  const auto episodes = r.le<std::uint32_t>("episode count");
  Dataset data;
  data.reserve(episodes);
  std::array<std::uint8_t, kPackedFrameBytes> packed;
  for (std::uint32_t e = 0; e < episodes; ++e) {
    Trajectory traj;
    const auto length = r.le<std::uint32_t>("episode length");
    if (length == 0) throw DataError("dataset: empty episode at offset " + std::to_string(r.offset() - 4));
    traj.seed = r.le<std::uint64_t>("episode seed");
    traj.actions.reserve(length - 1);
    for (std::uint32_t t = 0; t + 1 < length; ++t) {
      std::uint8_t byte;
      r.read(&byte, 1, "action");
      if (byte >= kNumActions) {
        throw DataError("dataset: invalid action " + std::to_string(byte) + " at offset " +
                        std::to_string(r.offset() - 1));
      }
      traj.actions.emplace_back(byte);
    }
    traj.frames.reserve(length);
    for (std::uint32_t t = 0; t < length; ++t) {
      r.read(packed.data(), packed.size(), "frame");
      traj.frames.push_back(Frame::unpack(packed));
    }
    data.push_back(std::move(traj));
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("dataset: cannot open " + path.string() + " for writing");
  write_dataset(out, data);
  out.flush();
  if (!out) throw DataError("dataset: write to " + path.string() + " failed");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open " + path.string());
  return read_dataset(in);
}

std::uint64_t dataset_file_size(const Dataset& data) {
  std::uint64_t size = 8;
  for (const auto& t : data) size += 4 + 8 + t.actions.size() + t.frames.size() * kPackedFrameBytes;
  return size;
}

}  // namespace metaworld::pongsim
