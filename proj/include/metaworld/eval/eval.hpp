#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "metaworld/memory/memory.hpp"
#include "metaworld/transforms/transforms.hpp"
#include "metaworld/vision/vision.hpp"

namespace metaworld::eval {

using memory::MemoryModel;
using numcore::Tensor;
using pongsim::Frame;
using pongsim::Trajectory;
using transforms::TransformKind;
using vision::VisionModel;

// Held-out corresponding windows. Window k is rollout(derive_seed(seed, k),
// steps) in the original environment and its transform in the variant.
struct EvalSet {
  TransformKind kind = TransformKind::Identity;
  std::vector<Trajectory> o;
  std::vector<Trajectory> i;
};

EvalSet make_eval_set(TransformKind kind, std::size_t pairs, std::size_t steps, std::uint64_t seed);

// `count` frames from fresh episodes of 64 steps, episode k seeded with
// derive_seed(seed, k).
std::vector<Frame> held_out_frames(std::size_t count, std::uint64_t seed);

std::vector<Frame> flatten_frames(std::span<const Trajectory> windows);

// Mean over pairs of |target - decode_j(mean encode_i(source))|^2.
template <typename T>
T transformation_loss(VisionModel<T>& encoder, VisionModel<T>& decoder, std::span<const Frame> source,
                      std::span<const Frame> target);

// Teacher-forced prediction in the encoder's latent space with Gaussian
// means throughout, decoded by `decoder` and compared with the target
// windows' next frames. Averaged over all predicted steps and windows.
template <typename T>
T predicted_transformation_loss(VisionModel<T>& encoder, VisionModel<T>& decoder, MemoryModel<T>& memory,
                                std::span<const Trajectory> source, std::span<const Trajectory> target);

// Metrics for one environment row e. L_t and L_pt encode with the other
// environment and decode with e.
struct EnvMetrics {
  double L_r = 0;
  double L_p = 0;
  double L_t = 0;
  double L_pt = 0;
};

struct PairMetrics {
  EnvMetrics o;
  EnvMetrics i;
};

template <typename T>
PairMetrics evaluate_pair(VisionModel<T>& vision_o, VisionModel<T>& vision_i, MemoryModel<T>& memory,
                          const EvalSet& set);

// Mean over rows of |d sum(decode(z)) / dz|, one entry per latent dimension.
template <typename T>
std::vector<double> output_gradient_mass(VisionModel<T>& decoder, const Tensor<T>& z);

// Sum of absolute decoder weights fanning out of each latent dimension.
template <typename T>
std::vector<double> decoder_weight_mass(const VisionModel<T>& decoder);

struct DimStats {
  double logstd_i = 0;
  double logstd_j = 0;
  double l1 = 0;
  double weight_mass = 0;
  double grad_mass = 0;
  bool is_key = false;
};

struct KeyElementReport {
  std::vector<DimStats> dims;
  std::vector<std::size_t> key_elements;
  // Mean L1 over the quarter of dims with the lowest / highest average log-std.
  double l1_low_quartile = 0;
  double l1_high_quartile = 0;
  double key_grad_mass = 0;       // mean grad_mass over key elements, 0 if none
  double nonkey_grad_median = 0;  // median grad_mass over the remaining dims
};

// Posterior-mean statistics over corresponding frames. Weight and gradient
// mass are averaged over the two decoders, each at its own environment's
// latents. Key elements are dims in the lowest log-std quartile of both
// environments.
template <typename T>
KeyElementReport key_element_report(VisionModel<T>& vision_i, VisionModel<T>& vision_j, std::span<const Frame> frames_i,
                                    std::span<const Frame> frames_j);

void write_report_csv(std::ostream& out, const KeyElementReport& report);
std::string summary_line(const KeyElementReport& report);

// Binary PGM, probabilities scaled to 0..255.
void write_pgm(const std::filesystem::path& path, std::span<const float> probs);

struct GridColumn {
  TransformKind kind;
  VisionModel<float>* encoder;  // original-environment encoder
  VisionModel<float>* decoder;  // decoder of the `kind` environment
};

// Writes the original frames as t{t}_o.pgm, then t{t}_{env}.pgm for each
// variant column decoded from the original encoder's posterior mean. Returns
// the paths.
std::vector<std::filesystem::path> cross_decode_grid(std::span<const GridColumn> columns,
                                                     std::span<const Frame> frames_o,
                                                     const std::filesystem::path& out_dir);

}  // namespace metaworld::eval
