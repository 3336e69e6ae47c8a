#include "metaworld/cli/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include "metaworld/errors.hpp"

namespace metaworld::cli {

using metatrain::MetricRow;
using metatrain::Stage;
using metatrain::TrainState;

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'W', 'C', '1'};
constexpr std::size_t kMetricColumns = 10;

template <typename U>
void put_le(std::ostream& out, U value) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.put(static_cast<char>((value >> (8 * b)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw DataError("checkpoint truncated at byte " + std::to_string(offset_ + in_.gcount()) + " while reading " +
                      what);
    }
    offset_ += n;
  }

  template <typename U>
  U le(const char* what) {
    std::array<unsigned char, sizeof(U)> raw{};
    bytes(reinterpret_cast<char*>(raw.data()), raw.size(), what);
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(raw[b]) << (8 * b);
    return v;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

Block tensor_block(const std::string& name, const numcore::Tensor<float>& t) {
  return {name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

Block scalar_block(const std::string& name, double value) { return {name, {1}, {static_cast<float>(value)}}; }

float metric_cell(const std::optional<float>& v) { return v ? *v : std::numeric_limits<float>::quiet_NaN(); }

std::optional<float> metric_value(float v) {
  if (std::isnan(v)) return std::nullopt;
  return v;
}

void add_adam_blocks(std::vector<Block>& blocks, const std::string& group, const numcore::Adam<float>& adam) {
  blocks.push_back(scalar_block("adam/" + group + "/steps", static_cast<double>(adam.step_count())));
  for (std::size_t i = 0; i < adam.num_params(); ++i) {
    const auto& name = adam.param(i).name;
    blocks.push_back(tensor_block("adam/" + name + "/m", adam.first_moment(i)));
    blocks.push_back(tensor_block("adam/" + name + "/v", adam.second_moment(i)));
  }
}

class BlockTable {
 public:
  explicit BlockTable(const Checkpoint& ckpt) : ckpt_(ckpt) {}

  const Block& get(const std::string& name, const numcore::Shape& shape) {
    const Block* b = ckpt_.find(name);
    if (!b) throw DataError("checkpoint is missing block '" + name + "'");
    if (b->shape != shape) {
      throw DataError("checkpoint block '" + name + "' has shape " + numcore::to_string(b->shape) + ", expected " +
                      numcore::to_string(shape));
    }
    used_.insert(name);
    return *b;
  }

  void fill(const std::string& name, numcore::Tensor<float>& t) {
    const auto& b = get(name, t.shape());
    std::copy(b.data.begin(), b.data.end(), t.data().begin());
  }

  std::size_t counter(const std::string& name) {
    const float v = get(name, {1}).data[0];
    if (!(v >= 0) || v != std::floor(v)) throw DataError("checkpoint counter '" + name + "' is not a whole number");
    return static_cast<std::size_t>(v);
  }

  void check_all_used() const {
    for (const auto& b : ckpt_.blocks) {
      if (!used_.count(b.name)) throw DataError("checkpoint has unexpected block '" + b.name + "'");
    }
  }

 private:
  const Checkpoint& ckpt_;
  std::set<std::string> used_;
};

void restore_adam(BlockTable& table, const std::string& group, numcore::Adam<float>& adam) {
  adam.set_step_count(table.counter("adam/" + group + "/steps"));
  for (std::size_t i = 0; i < adam.num_params(); ++i) {
    const auto& name = adam.param(i).name;
    table.fill("adam/" + name + "/m", adam.first_moment(i));
    table.fill("adam/" + name + "/v", adam.second_moment(i));
  }
}

}  // namespace

const Block* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, ckpt.version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
  out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  for (const auto& b : ckpt.blocks) {
    if (b.name.size() > 0xFFFF) throw DataError("block name too long: " + b.name.substr(0, 40));
    if (b.shape.empty() || b.shape.size() > 0xFF) throw DataError("block '" + b.name + "' has unsupported rank");
    if (numcore::numel(b.shape) != b.data.size()) throw DataError("block '" + b.name + "' size mismatch");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(b.shape.size()));
    for (auto d : b.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : b.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw DataError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw DataError("not a checkpoint: bad magic at byte 0");
  Checkpoint ckpt;
  ckpt.version = r.le<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version) + " at byte 4 (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto config_size = r.le<std::uint32_t>("config length");
  ckpt.config_text.resize(config_size);
  r.bytes(ckpt.config_text.data(), config_size, "config text");
  while (!r.at_end()) {
    Block b;
    const auto name_size = r.le<std::uint16_t>("block name length");
    b.name.resize(name_size);
    r.bytes(b.name.data(), name_size, "block name");
    const auto rank = r.le<std::uint8_t>("block rank");
    if (rank == 0) throw DataError("block '" + b.name + "' has rank 0 at byte " + std::to_string(r.offset() - 1));
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint32_t>("block dims");
      if (d == 0) throw DataError("block '" + b.name + "' has a zero dimension at byte " + std::to_string(r.offset() - 4));
      b.shape.push_back(d);
    }
    const std::size_t count = numcore::numel(b.shape);
    if (count > (std::size_t{1} << 31)) throw DataError("block '" + b.name + "' is implausibly large");
    b.data.resize(count);
    for (auto& v : b.data) v = std::bit_cast<float>(r.le<std::uint32_t>("block data"));
    ckpt.blocks.push_back(std::move(b));
  }
  return ckpt;
}

Checkpoint capture(const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config_text = metatrain::to_yaml(state.config);
  auto& blocks = ckpt.blocks;
  for (const auto* p : state.vision_o.parameters()) blocks.push_back(tensor_block(p->name, p->value));
  for (const auto* p : state.vision_i.parameters()) blocks.push_back(tensor_block(p->name, p->value));
  for (const auto* p : state.memory.parameters()) blocks.push_back(tensor_block(p->name, p->value));
  add_adam_blocks(blocks, "vision_o", state.adam_o);
  add_adam_blocks(blocks, "vision_i", state.adam_i);
  add_adam_blocks(blocks, "memory", state.adam_memory);
  blocks.push_back(scalar_block("state/cycle", static_cast<double>(state.cycle)));
  blocks.push_back(scalar_block("state/iteration", static_cast<double>(state.iteration)));
  if (!state.history.empty()) {
    Block m{"state/metrics", {state.history.size(), kMetricColumns}, {}};
    m.data.reserve(state.history.size() * kMetricColumns);
    for (const auto& row : state.history) {
      m.data.insert(m.data.end(), {static_cast<float>(row.cycle), static_cast<float>(row.iter),
                                   static_cast<float>(static_cast<int>(row.stage)), static_cast<float>(row.env),
                                   metric_cell(row.L_r), metric_cell(row.L_p), metric_cell(row.L_kl),
                                   metric_cell(row.L_mmd), metric_cell(row.L_t), metric_cell(row.L_pt)});
    }
    blocks.push_back(std::move(m));
  }
  return ckpt;
}

std::unique_ptr<TrainState> restore(const Checkpoint& ckpt) {
  auto state = std::make_unique<TrainState>(metatrain::parse_config(ckpt.config_text));
  BlockTable table(ckpt);
  for (auto* p : state->parameters()) table.fill(p->name, p->value);
  restore_adam(table, "vision_o", state->adam_o);
  restore_adam(table, "vision_i", state->adam_i);
  restore_adam(table, "memory", state->adam_memory);
  state->cycle = table.counter("state/cycle");
  state->iteration = table.counter("state/iteration");
  if (const Block* m = ckpt.find("state/metrics")) {
    if (m->shape.size() != 2 || m->shape[1] != kMetricColumns) throw DataError("checkpoint metrics block malformed");
    table.get(m->name, m->shape);
    for (std::size_t r = 0; r < m->shape[0]; ++r) {
      const float* c = &m->data[r * kMetricColumns];
      MetricRow row;
      row.cycle = static_cast<std::size_t>(c[0]);
      row.iter = static_cast<std::size_t>(c[1]);
      const int stage = static_cast<int>(c[2]);
      if (stage < 0 || stage > 2) throw DataError("checkpoint metrics row " + std::to_string(r) + " has bad stage");
      row.stage = static_cast<Stage>(stage);
      row.env = static_cast<char>(c[3]);
      row.L_r = metric_value(c[4]);
      row.L_p = metric_value(c[5]);
      row.L_kl = metric_value(c[6]);
      row.L_mmd = metric_value(c[7]);
      row.L_t = metric_value(c[8]);
      row.L_pt = metric_value(c[9]);
      state->history.push_back(row);
    }
  }
  table.check_all_used();
  return state;
}

void save_state(const std::filesystem::path& path, const TrainState& state) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    write_checkpoint(out, capture(state));
    out.flush();
    if (!out) throw DataError("checkpoint write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

std::unique_ptr<TrainState> load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  try {
    return restore(read_checkpoint(in));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace metaworld::cli
