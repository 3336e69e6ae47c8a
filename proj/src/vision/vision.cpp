#include "metaworld/vision/vision.hpp"

#include <cmath>

#include "metaworld/errors.hpp"
#include "metaworld/numcore/ops.hpp"

namespace metaworld::vision {

namespace nc = numcore;

namespace {

template <typename T>
Parameter<T> xavier(std::string name, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> w({fan_in, fan_out});
  for (auto& x : w.data()) x = static_cast<T>(dist(rng));
  return Parameter<T>(std::move(name), std::move(w));
}

template <typename T>
Parameter<T> zeros(std::string name, std::size_t width) {
  return Parameter<T>(std::move(name), Tensor<T>({1, width}));
}

template <typename T>
Var<T> half_kl_terms(EncodedVars<T> p) {
  // exp(lv) + mu^2 - 1 - lv, halved
  auto terms = nc::exp(p.logvar) + nc::square(p.mu) - p.logvar;
  return nc::scale(nc::shift(terms, T(-1)), T(0.5));
}

}  // namespace

std::string_view preset_name(Preset p) { return p == Preset::Mini ? "mini" : "paper"; }

Preset parse_preset(std::string_view text) {
  if (text == "mini") return Preset::Mini;
  if (text == "paper") return Preset::Paper;
  throw ConfigError("unknown architecture preset '" + std::string(text) + "' (expected mini or paper)");
}

template <typename T>
VisionModel<T>::VisionModel(Preset preset, std::uint64_t seed, std::string prefix) : preset_(preset) {
  if (preset == Preset::Paper) {
    throw ConfigError(
        "architecture preset 'paper' needs a strided convolution primitive, which this build does not provide; "
        "use preset 'mini'");
  }
  std::mt19937_64 rng(seed);
  enc_fc1_w_ = xavier<T>(prefix + "enc.fc1.w", kPixels, kHiddenUnits, rng);
  enc_fc1_b_ = zeros<T>(prefix + "enc.fc1.b", kHiddenUnits);
  enc_head_w_ = xavier<T>(prefix + "enc.head.w", kHiddenUnits, 2 * kLatentDim, rng);
  enc_head_b_ = zeros<T>(prefix + "enc.head.b", 2 * kLatentDim);
  dec_fc1_w_ = xavier<T>(prefix + "dec.fc1.w", kLatentDim, kHiddenUnits, rng);
  dec_fc1_b_ = zeros<T>(prefix + "dec.fc1.b", kHiddenUnits);
  dec_out_w_ = xavier<T>(prefix + "dec.out.w", kHiddenUnits, kPixels, rng);
  dec_out_b_ = zeros<T>(prefix + "dec.out.b", kPixels);
}

template <typename T>
EncodedVars<T> VisionModel<T>::encode(Graph<T>& g, Var<T> frames) {
  auto hidden = nc::tanh(nc::add_bias(nc::matmul(frames, g.param(enc_fc1_w_)), g.param(enc_fc1_b_)));
  auto head = nc::add_bias(nc::matmul(hidden, g.param(enc_head_w_)), g.param(enc_head_b_));
  auto mu = nc::slice(head, 1, 0, kLatentDim);
  auto logvar = nc::clamp(nc::slice(head, 1, kLatentDim, 2 * kLatentDim), T(kLogvarMin), T(kLogvarMax));
  return {mu, logvar};
}

template <typename T>
Var<T> VisionModel<T>::decode(Graph<T>& g, Var<T> z) {
  auto hidden = nc::tanh(nc::add_bias(nc::matmul(z, g.param(dec_fc1_w_)), g.param(dec_fc1_b_)));
  return nc::sigmoid(nc::add_bias(nc::matmul(hidden, g.param(dec_out_w_)), g.param(dec_out_b_)));
}

template <typename T>
GaussianParams<T> VisionModel<T>::encode(const Tensor<T>& frames) {
  Graph<T> g;
  auto e = encode(g, g.constant(frames));
  return {e.mu.value(), e.logvar.value()};
}

template <typename T>
Tensor<T> VisionModel<T>::decode(const Tensor<T>& z) {
  Graph<T> g;
  return decode(g, g.constant(z)).value();
}

template <typename T>
std::vector<Parameter<T>*> VisionModel<T>::parameters() {
  return {&enc_fc1_w_, &enc_fc1_b_, &enc_head_w_, &enc_head_b_, &dec_fc1_w_, &dec_fc1_b_, &dec_out_w_, &dec_out_b_};
}

template <typename T>
std::vector<const Parameter<T>*> VisionModel<T>::parameters() const {
  return {&enc_fc1_w_, &enc_fc1_b_, &enc_head_w_, &enc_head_b_, &dec_fc1_w_, &dec_fc1_b_, &dec_out_w_, &dec_out_b_};
}

template <typename T>
Tensor<T> frames_to_tensor(std::span<const pongsim::Frame> frames) {
  if (frames.empty()) throw ShapeError("frames_to_tensor: no frames");
  Tensor<T> out({frames.size(), kPixels});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i].write_pixels(&out.at(i, 0));
  return out;
}

template <typename T>
Tensor<T> frames_to_tensor(std::span<const pongsim::Frame* const> frames) {
  if (frames.empty()) throw ShapeError("frames_to_tensor: no frames");
  Tensor<T> out({frames.size(), kPixels});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i]->write_pixels(&out.at(i, 0));
  return out;
}

template <typename T>
Tensor<T> standard_normal(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> out(std::move(shape));
  for (auto& x : out.data()) x = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Var<T> sample_latent(EncodedVars<T> params, const Tensor<T>& noise) {
  auto& g = params.mu.graph();
  auto sigma = nc::exp(nc::scale(params.logvar, T(0.5)));
  return params.mu + sigma * g.constant(noise);
}

template <typename T>
Tensor<T> sample_latent(const GaussianParams<T>& params, std::mt19937_64& rng) {
  Graph<T> g;
  auto noise = standard_normal<T>(params.mu.shape(), rng);
  return sample_latent<T>({g.constant(params.mu), g.constant(params.logvar)}, noise).value();
}

template <typename T>
Var<T> squared_error(Var<T> pred, Var<T> target) {
  return nc::sum(nc::square(pred - target));
}

template <typename T>
T recon_loss(std::span<const T> pred, const pongsim::Frame& target) {
  if (pred.size() != kPixels) throw ShapeError("recon_loss: prediction has " + std::to_string(pred.size()) + " pixels");
  T total = T(0);
  for (std::size_t r = 0; r < pongsim::kFrameSize; ++r) {
    for (std::size_t c = 0; c < pongsim::kFrameSize; ++c) {
      const T d = pred[r * pongsim::kFrameSize + c] - (target.get(r, c) ? T(1) : T(0));
      total += d * d;
    }
  }
  return total;
}

template <typename T>
Var<T> kl_loss(EncodedVars<T> params) {
  return nc::sum(half_kl_terms(params));
}

template <typename T>
T kl_loss(const GaussianParams<T>& params) {
  Graph<T> g;
  return kl_loss<T>({g.constant(params.mu), g.constant(params.logvar)}).value().item();
}

template <typename T>
Var<T> kl_free_bits(EncodedVars<T> params, T floor) {
  auto& g = params.mu.graph();
  auto per_dim = nc::mean(half_kl_terms(params), 0);
  Tensor<T> mask(per_dim.shape());
  T floor_total = T(0);
  for (std::size_t d = 0; d < mask.size(); ++d) {
    if (per_dim.value()[d] > floor) mask[d] = T(1);
    else floor_total += floor;
  }
  return nc::shift(nc::sum(per_dim * g.constant(mask)), floor_total);
}

#define METAWORLD_INSTANTIATE_VISION(T)                                                \
  template class VisionModel<T>;                                                       \
  template Tensor<T> frames_to_tensor<T>(std::span<const pongsim::Frame>);             \
  template Tensor<T> frames_to_tensor<T>(std::span<const pongsim::Frame* const>);      \
  template Tensor<T> standard_normal<T>(Shape, std::mt19937_64&);                      \
  template Var<T> sample_latent<T>(EncodedVars<T>, const Tensor<T>&);                  \
  template Tensor<T> sample_latent<T>(const GaussianParams<T>&, std::mt19937_64&);     \
  template Var<T> squared_error<T>(Var<T>, Var<T>);                                    \
  template T recon_loss<T>(std::span<const T>, const pongsim::Frame&);                 \
  template Var<T> kl_loss<T>(EncodedVars<T>);                                          \
  template T kl_loss<T>(const GaussianParams<T>&);                                     \
  template Var<T> kl_free_bits<T>(EncodedVars<T>, T);

METAWORLD_INSTANTIATE_VISION(float)
METAWORLD_INSTANTIATE_VISION(double)

}  // namespace metaworld::vision
