#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metaworld/numcore/graph.hpp"
#include "metaworld/pongsim/frame.hpp"

namespace metaworld::vision {

using numcore::Graph;
using numcore::Parameter;
using numcore::Shape;
using numcore::Tensor;
using numcore::Var;

inline constexpr std::size_t kLatentDim = 32;
inline constexpr std::size_t kHiddenUnits = 256;
inline constexpr std::size_t kPixels = pongsim::kFramePixels;
inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 4.0;

enum class Preset { Mini, Paper };

std::string_view preset_name(Preset p);
Preset parse_preset(std::string_view text);

// Diagonal Gaussian over the latent space, one row per frame.
template <typename T>
struct GaussianParams {
  Tensor<T> mu;      // [n, 32]
  Tensor<T> logvar;  // [n, 32], log sigma^2
};

template <typename T>
struct EncodedVars {
  Var<T> mu;
  Var<T> logvar;
};

// Variational vision model. "mini" preset: encoder 4096 -> 256 (tanh) ->
// 32 + 32, decoder 32 -> 256 (tanh) -> 4096 (sigmoid).
template <typename T>
class VisionModel {
 public:
  // `prefix` namespaces parameter names, e.g. "vision_o/".
  VisionModel(Preset preset, std::uint64_t seed, std::string prefix = "vision/");

  EncodedVars<T> encode(Graph<T>& g, Var<T> frames);
  Var<T> decode(Graph<T>& g, Var<T> z);

  // Value-level conveniences; each builds a throwaway graph.
  GaussianParams<T> encode(const Tensor<T>& frames);
  Tensor<T> decode(const Tensor<T>& z);

  Preset preset() const noexcept { return preset_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  // Weights fanning out of the latent vector, [32, 256].
  const Parameter<T>& decoder_input_weights() const { return dec_fc1_w_; }
  Parameter<T>& decoder_input_weights() { return dec_fc1_w_; }

 private:
  Preset preset_;
  Parameter<T> enc_fc1_w_, enc_fc1_b_;
  Parameter<T> enc_head_w_, enc_head_b_;
  Parameter<T> dec_fc1_w_, dec_fc1_b_;
  Parameter<T> dec_out_w_, dec_out_b_;
};

// [n, 4096] tensor of 0/1 pixels.
template <typename T>
Tensor<T> frames_to_tensor(std::span<const pongsim::Frame> frames);
template <typename T>
Tensor<T> frames_to_tensor(std::span<const pongsim::Frame* const> frames);

template <typename T>
Tensor<T> standard_normal(Shape shape, std::mt19937_64& rng);

// z = mu + exp(logvar / 2) * noise; differentiable in mu and logvar.
template <typename T>
Var<T> sample_latent(EncodedVars<T> params, const Tensor<T>& noise);
template <typename T>
Tensor<T> sample_latent(const GaussianParams<T>& params, std::mt19937_64& rng);

// Sum over all entries of (pred - target)^2.
template <typename T>
Var<T> squared_error(Var<T> pred, Var<T> target);
// Per-frame squared-error distance, value level.
template <typename T>
T recon_loss(std::span<const T> pred, const pongsim::Frame& target);

// 1/2 sum (exp(logvar) + mu^2 - 1 - logvar) over all rows and dims.
template <typename T>
Var<T> kl_loss(EncodedVars<T> params);
template <typename T>
T kl_loss(const GaussianParams<T>& params);

// Batch-mean KL per latent dimension with a free-information floor: dims
// whose mean KL is below `floor` nats contribute `floor` and no gradient.
template <typename T>
Var<T> kl_free_bits(EncodedVars<T> params, T floor);

}  // namespace metaworld::vision
