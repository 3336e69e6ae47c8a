#include "metaworld/eval/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "metaworld/errors.hpp"
#include "metaworld/numcore/ops.hpp"

namespace metaworld::eval {

namespace nc = numcore;
using vision::kLatentDim;
using vision::kPixels;

namespace {

constexpr std::size_t kChunk = 256;
constexpr std::size_t kHeldOutEpisodeSteps = 64;

double frame_error(const float* pred, const Frame& target) {
  return vision::recon_loss<float>(std::span<const float>(pred, kPixels), target);
}

double frame_error(const double* pred, const Frame& target) {
  return vision::recon_loss<double>(std::span<const double>(pred, kPixels), target);
}

double mean_of(std::span<const double> xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Indices of the `count` smallest values, ties broken by index.
std::vector<std::size_t> smallest(const std::vector<double>& values, std::size_t count) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  order.resize(count);
  return order;
}

}  // namespace

EvalSet make_eval_set(TransformKind kind, std::size_t pairs, std::size_t steps, std::uint64_t seed) {
  EvalSet set;
  set.kind = kind;
  for (std::size_t k = 0; k < pairs; ++k) {
    set.o.push_back(pongsim::rollout(pongsim::derive_seed(seed, k), steps));
    set.i.push_back(transforms::transform_trajectory(kind, set.o.back()));
  }
  return set;
}

std::vector<Frame> held_out_frames(std::size_t count, std::uint64_t seed) {
  std::vector<Frame> frames;
  frames.reserve(count);
  for (std::size_t k = 0; frames.size() < count; ++k) {
    auto traj = pongsim::rollout(pongsim::derive_seed(seed, k), kHeldOutEpisodeSteps);
    for (const auto& f : traj.frames) {
      if (frames.size() == count) break;
      frames.push_back(f);
    }
  }
  return frames;
}

std::vector<Frame> flatten_frames(std::span<const Trajectory> windows) {
  std::vector<Frame> frames;
  for (const auto& w : windows) frames.insert(frames.end(), w.frames.begin(), w.frames.end());
  return frames;
}

template <typename T>
T transformation_loss(VisionModel<T>& encoder, VisionModel<T>& decoder, std::span<const Frame> source,
                      std::span<const Frame> target) {
  if (source.size() != target.size() || source.empty()) {
    throw ShapeError("transformation_loss: " + std::to_string(source.size()) + " source frames, " +
                     std::to_string(target.size()) + " targets");
  }
  double total = 0;
  for (std::size_t start = 0; start < source.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, source.size() - start);
    auto mu = encoder.encode(vision::frames_to_tensor<T>(source.subspan(start, n))).mu;
    auto probs = decoder.decode(mu);
    for (std::size_t r = 0; r < n; ++r) total += frame_error(&probs.at(r, 0), target[start + r]);
  }
  return static_cast<T>(total / static_cast<double>(source.size()));
}

template <typename T>
T predicted_transformation_loss(VisionModel<T>& encoder, VisionModel<T>& decoder, MemoryModel<T>& memory,
                                std::span<const Trajectory> source, std::span<const Trajectory> target) {
  if (source.size() != target.size() || source.empty()) {
    throw ShapeError("predicted_transformation_loss: window counts differ");
  }
  double total = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < source.size(); start += kChunk / 16) {
    const std::size_t n = std::min(kChunk / 16, source.size() - start);
    auto batch = memory::make_sequence_batch<T>(source.subspan(start, n));
    nc::Graph<T> g;
    auto probs = memory::predict_sequence<T>(g, memory, encoder, decoder, g.constant(batch.frames),
                                             batch.action_one_hots, n, memory::SequenceOptions{}, std::nullopt)
                     .value();
    for (std::size_t t = 1; t < batch.steps; ++t) {
      for (std::size_t b = 0; b < n; ++b) {
        const auto& w = target[start + b];
        if (w.length() != batch.steps) throw ShapeError("predicted_transformation_loss: window lengths differ");
        total += frame_error(&probs.at((t - 1) * n + b, 0), w.frames[t]);
        ++count;
      }
    }
  }
  return static_cast<T>(total / static_cast<double>(count));
}

template <typename T>
PairMetrics evaluate_pair(VisionModel<T>& vision_o, VisionModel<T>& vision_i, MemoryModel<T>& memory,
                          const EvalSet& set) {
  const auto frames_o = flatten_frames(set.o);
  const auto frames_i = flatten_frames(set.i);
  PairMetrics m;
  m.o.L_r = transformation_loss(vision_o, vision_o, std::span<const Frame>(frames_o), frames_o);
  m.i.L_r = transformation_loss(vision_i, vision_i, std::span<const Frame>(frames_i), frames_i);
  m.o.L_t = transformation_loss(vision_i, vision_o, std::span<const Frame>(frames_i), frames_o);
  m.i.L_t = transformation_loss(vision_o, vision_i, std::span<const Frame>(frames_o), frames_i);
  m.o.L_p = predicted_transformation_loss(vision_o, vision_o, memory, std::span(set.o), std::span(set.o));
  m.i.L_p = predicted_transformation_loss(vision_i, vision_i, memory, std::span(set.i), std::span(set.i));
  m.o.L_pt = predicted_transformation_loss(vision_i, vision_o, memory, std::span(set.i), std::span(set.o));
  m.i.L_pt = predicted_transformation_loss(vision_o, vision_i, memory, std::span(set.o), std::span(set.i));
  return m;
}

template <typename T>
std::vector<double> output_gradient_mass(VisionModel<T>& decoder, const Tensor<T>& z) {
  nc::Graph<T> g;
  auto zv = g.variable(z);
  g.backward(nc::sum(decoder.decode(g, zv)));
  auto grad = g.grad(zv);
  std::vector<double> mass(kLatentDim, 0.0);
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    for (std::size_t d = 0; d < kLatentDim; ++d) mass[d] += std::abs(static_cast<double>(grad.at(r, d)));
  }
  for (auto& m : mass) m /= static_cast<double>(grad.rows());
  return mass;
}

template <typename T>
std::vector<double> decoder_weight_mass(const VisionModel<T>& decoder) {
  const auto& w = decoder.decoder_input_weights().value;
  std::vector<double> mass(kLatentDim, 0.0);
  for (std::size_t d = 0; d < kLatentDim; ++d) {
    for (std::size_t k = 0; k < w.cols(); ++k) mass[d] += std::abs(static_cast<double>(w.at(d, k)));
  }
  return mass;
}

template <typename T>
KeyElementReport key_element_report(VisionModel<T>& vision_i, VisionModel<T>& vision_j, std::span<const Frame> frames_i,
                                    std::span<const Frame> frames_j) {
  if (frames_i.size() != frames_j.size() || frames_i.empty()) {
    throw ShapeError("key_element_report: frame counts differ or are empty");
  }
  const auto enc_i = vision_i.encode(vision::frames_to_tensor<T>(frames_i));
  const auto enc_j = vision_j.encode(vision::frames_to_tensor<T>(frames_j));
  const auto grad_i = output_gradient_mass(vision_i, enc_i.mu);
  const auto grad_j = output_gradient_mass(vision_j, enc_j.mu);
  const auto weight_i = decoder_weight_mass(vision_i);
  const auto weight_j = decoder_weight_mass(vision_j);
  const double n = static_cast<double>(frames_i.size());

  KeyElementReport report;
  report.dims.resize(kLatentDim);
  for (std::size_t r = 0; r < frames_i.size(); ++r) {
    for (std::size_t d = 0; d < kLatentDim; ++d) {
      auto& s = report.dims[d];
      s.logstd_i += enc_i.logvar.at(r, d) / 2.0 / n;
      s.logstd_j += enc_j.logvar.at(r, d) / 2.0 / n;
      s.l1 += std::abs(static_cast<double>(enc_i.mu.at(r, d)) - enc_j.mu.at(r, d)) / n;
    }
  }
  std::vector<double> logstd_i, logstd_j, logstd_avg;
  for (std::size_t d = 0; d < kLatentDim; ++d) {
    auto& s = report.dims[d];
    s.weight_mass = (weight_i[d] + weight_j[d]) / 2;
    s.grad_mass = (grad_i[d] + grad_j[d]) / 2;
    logstd_i.push_back(s.logstd_i);
    logstd_j.push_back(s.logstd_j);
    logstd_avg.push_back((s.logstd_i + s.logstd_j) / 2);
  }

  const std::size_t quarter = kLatentDim / 4;
  const auto low_i = smallest(logstd_i, quarter);
  const auto low_j = smallest(logstd_j, quarter);
  for (std::size_t d : low_i) {
    if (std::find(low_j.begin(), low_j.end(), d) != low_j.end()) report.dims[d].is_key = true;
  }
  std::vector<double> key_grads, other_grads;
  for (std::size_t d = 0; d < kLatentDim; ++d) {
    if (report.dims[d].is_key) {
      report.key_elements.push_back(d);
      key_grads.push_back(report.dims[d].grad_mass);
    } else {
      other_grads.push_back(report.dims[d].grad_mass);
    }
  }
  report.key_grad_mass = mean_of(key_grads);
  std::sort(other_grads.begin(), other_grads.end());
  const std::size_t m = other_grads.size();
  report.nonkey_grad_median = m % 2 ? other_grads[m / 2] : (other_grads[m / 2 - 1] + other_grads[m / 2]) / 2;

  const auto order = smallest(logstd_avg, kLatentDim);
  for (std::size_t k = 0; k < quarter; ++k) {
    report.l1_low_quartile += report.dims[order[k]].l1 / quarter;
    report.l1_high_quartile += report.dims[order[kLatentDim - 1 - k]].l1 / quarter;
  }
  return report;
}

void write_report_csv(std::ostream& out, const KeyElementReport& report) {
  out << "dim,logstd_i,logstd_j,l1,weight_mass,grad_mass,is_key\n";
  for (std::size_t d = 0; d < report.dims.size(); ++d) {
    const auto& s = report.dims[d];
    out << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{}\n", d, s.logstd_i, s.logstd_j, s.l1, s.weight_mass,
                       s.grad_mass, s.is_key ? 1 : 0);
  }
}

std::string summary_line(const KeyElementReport& report) {
  return fmt::format("key_elements=[{}] l1_low_quartile={:.6g} l1_high_quartile={:.6g} key_grad_mass={:.6g} "
                     "nonkey_grad_median={:.6g}",
                     fmt::join(report.key_elements, ","), report.l1_low_quartile, report.l1_high_quartile,
                     report.key_grad_mass, report.nonkey_grad_median);
}

void write_pgm(const std::filesystem::path& path, std::span<const float> probs) {
  if (probs.size() != kPixels) throw ShapeError("write_pgm: expected 4096 values");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n64 64\n255\n";
  for (float p : probs) {
    const float clamped = std::clamp(p, 0.0f, 1.0f);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0f))));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::filesystem::path> cross_decode_grid(std::span<const GridColumn> columns,
                                                     std::span<const Frame> frames_o,
                                                     const std::filesystem::path& out_dir) {
  if (frames_o.empty()) throw ShapeError("cross_decode_grid: no frames");
  for (const auto& col : columns) {
    if (col.kind == TransformKind::Identity) throw ConfigError("cross_decode_grid: identity column is the input frame");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw DataError("cannot create output directory " + out_dir.string());
  }
  const auto x = vision::frames_to_tensor<float>(frames_o);
  std::vector<std::filesystem::path> written;
  for (std::size_t t = 0; t < frames_o.size(); ++t) {
    auto path = out_dir / fmt::format("t{}_{}.pgm", t, transforms::env_tag(TransformKind::Identity));
    write_pgm(path, std::span<const float>(&x.at(t, 0), kPixels));
    written.push_back(std::move(path));
  }
  for (const auto& col : columns) {
    auto probs = col.decoder->decode(col.encoder->encode(x).mu);
    for (std::size_t t = 0; t < frames_o.size(); ++t) {
      auto path = out_dir / fmt::format("t{}_{}.pgm", t, transforms::env_tag(col.kind));
      write_pgm(path, std::span<const float>(&probs.at(t, 0), kPixels));
      written.push_back(std::move(path));
    }
  }
  return written;
}

#define METAWORLD_INSTANTIATE_EVAL(T)                                                                              \
  template T transformation_loss<T>(VisionModel<T>&, VisionModel<T>&, std::span<const Frame>,                     \
                                    std::span<const Frame>);                                                       \
  template T predicted_transformation_loss<T>(VisionModel<T>&, VisionModel<T>&, MemoryModel<T>&,                   \
                                              std::span<const Trajectory>, std::span<const Trajectory>);           \
  template PairMetrics evaluate_pair<T>(VisionModel<T>&, VisionModel<T>&, MemoryModel<T>&, const EvalSet&);        \
  template std::vector<double> output_gradient_mass<T>(VisionModel<T>&, const Tensor<T>&);                         \
  template std::vector<double> decoder_weight_mass<T>(const VisionModel<T>&);                                      \
  template KeyElementReport key_element_report<T>(VisionModel<T>&, VisionModel<T>&, std::span<const Frame>,        \
                                                  std::span<const Frame>);

METAWORLD_INSTANTIATE_EVAL(float)
METAWORLD_INSTANTIATE_EVAL(double)

}  // namespace metaworld::eval
