#include "metaworld/memory/memory.hpp"

#include <cmath>

#include "metaworld/errors.hpp"
#include "metaworld/numcore/ops.hpp"

namespace metaworld::memory {

namespace nc = numcore;
using vision::kLatentDim;

namespace {

constexpr std::size_t kInputDim = kLatentDim + kActionDim + kHiddenUnits;
constexpr std::size_t kGateDim = 4 * kHiddenUnits;

template <typename T>
Parameter<T> uniform(std::string name, std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> w({rows, cols});
  for (auto& x : w.data()) x = static_cast<T>(dist(rng));
  return Parameter<T>(std::move(name), std::move(w));
}

}  // namespace

template <typename T>
Hidden<T> init_hidden(std::size_t batch) {
  return {Tensor<T>({batch, kHiddenUnits}), Tensor<T>({batch, kHiddenUnits})};
}

template <typename T>
Tensor<T> one_hot(std::span<const pongsim::Action> actions) {
  Tensor<T> out({actions.size(), kActionDim});
  for (std::size_t i = 0; i < actions.size(); ++i) out.at(i, static_cast<std::size_t>(actions[i].value())) = T(1);
  return out;
}

template <typename T>
MemoryModel<T>::MemoryModel(std::uint64_t seed, std::string prefix) {
  std::mt19937_64 rng(seed);
  const double cell_bound = 1.0 / std::sqrt(static_cast<double>(kHiddenUnits));
  cell_w_ = uniform<T>(prefix + "lstm.w", kInputDim, kGateDim, cell_bound, rng);
  cell_b_ = Parameter<T>(prefix + "lstm.b", Tensor<T>({1, kGateDim}));
  // Forget gate starts open.
  for (std::size_t k = kHiddenUnits; k < 2 * kHiddenUnits; ++k) cell_b_.value[k] = T(1);
  head_w_ = uniform<T>(prefix + "head.w", kHiddenUnits, 2 * kLatentDim, cell_bound, rng);
  head_b_ = Parameter<T>(prefix + "head.b", Tensor<T>({1, 2 * kLatentDim}));
}

template <typename T>
typename MemoryModel<T>::State MemoryModel<T>::initial_state(Graph<T>& g, std::size_t batch) const {
  auto h0 = init_hidden<T>(batch);
  return {g.constant(std::move(h0.h)), g.constant(std::move(h0.c))};
}

template <typename T>
typename MemoryModel<T>::Output MemoryModel<T>::step(Graph<T>& g, Var<T> z, Var<T> action_one_hot, State state) {
  auto input = nc::concat<T>({z, action_one_hot, state.h}, 1);
  auto gates = nc::add_bias(nc::matmul(input, g.param(cell_w_)), g.param(cell_b_));
  const std::size_t H = kHiddenUnits;
  auto in_gate = nc::sigmoid(nc::slice(gates, 1, 0, H));
  auto forget_gate = nc::sigmoid(nc::slice(gates, 1, H, 2 * H));
  auto candidate = nc::tanh(nc::slice(gates, 1, 2 * H, 3 * H));
  auto out_gate = nc::sigmoid(nc::slice(gates, 1, 3 * H, 4 * H));
  auto c = forget_gate * state.c + in_gate * candidate;
  auto h = out_gate * nc::tanh(c);
  auto head = nc::add_bias(nc::matmul(h, g.param(head_w_)), g.param(head_b_));
  auto mu = nc::slice(head, 1, 0, kLatentDim);
  auto logvar = nc::clamp(nc::slice(head, 1, kLatentDim, 2 * kLatentDim), T(vision::kLogvarMin), T(vision::kLogvarMax));
  return {{mu, logvar}, {h, c}};
}

template <typename T>
std::pair<GaussianParams<T>, Hidden<T>> MemoryModel<T>::predict(const Tensor<T>& z,
                                                                std::span<const pongsim::Action> actions,
                                                                const Hidden<T>& hidden) {
  if (z.rows() != actions.size()) {
    throw ShapeError("predict: " + std::to_string(z.rows()) + " latents but " + std::to_string(actions.size()) +
                     " actions");
  }
  Graph<T> g;
  auto out = step(g, g.constant(z), g.constant(one_hot<T>(actions)), {g.constant(hidden.h), g.constant(hidden.c)});
  return {{out.next.mu.value(), out.next.logvar.value()}, {out.state.h.value(), out.state.c.value()}};
}

template <typename T>
std::vector<Parameter<T>*> MemoryModel<T>::parameters() {
  return {&cell_w_, &cell_b_, &head_w_, &head_b_};
}

template <typename T>
std::vector<const Parameter<T>*> MemoryModel<T>::parameters() const {
  return {&cell_w_, &cell_b_, &head_w_, &head_b_};
}

template <typename T>
Var<T> predict_sequence(Graph<T>& g, MemoryModel<T>& model, VisionModel<T>& encoder, VisionModel<T>& decoder,
                        Var<T> frames, const std::vector<Tensor<T>>& action_one_hots, std::size_t batch,
                        const SequenceOptions& options, const std::optional<SequenceNoise<T>>& noise,
                        EncodedVars<T>* encoded_out, Hidden<T>* final_hidden) {
  const std::size_t rows = frames.shape()[0];
  if (batch == 0 || rows % batch != 0) throw ShapeError("predict_sequence: frame rows not a multiple of batch");
  const std::size_t steps = rows / batch;
  if (steps < 2) throw ShapeError("predict_sequence: need at least two steps");
  if (action_one_hots.size() != steps - 1) {
    throw ShapeError("predict_sequence: " + std::to_string(steps) + " steps need " + std::to_string(steps - 1) +
                     " action sets, got " + std::to_string(action_one_hots.size()));
  }
  const bool sampled = noise.has_value();

  auto encoded = encoder.encode(g, frames);
  if (encoded_out) *encoded_out = encoded;
  Var<T> latents = (sampled && options.sample_inputs) ? vision::sample_latent(encoded, noise->latent) : encoded.mu;

  auto state = model.initial_state(g, batch);
  std::vector<Var<T>> predicted;
  predicted.reserve(steps - 1);
  Var<T> input = nc::slice(latents, 0, 0, batch);
  for (std::size_t t = 0; t + 1 < steps; ++t) {
    auto out = model.step(g, input, g.constant(action_one_hots[t]), state);
    state = out.state;
    Var<T> next = out.next.mu;
    if (sampled && options.sample_predictions) {
      Tensor<T> eps({batch, kLatentDim});
      std::copy_n(&noise->predicted.at(t * batch, 0), eps.size(), eps.data().begin());
      next = vision::sample_latent(out.next, eps);
    }
    predicted.push_back(next);
    input = options.teacher_forcing ? nc::slice(latents, 0, (t + 1) * batch, (t + 2) * batch) : next;
  }
  if (final_hidden) *final_hidden = {state.h.value(), state.c.value()};
  return decoder.decode(g, nc::concat(predicted, 0));
}

template <typename T>
Tensor<T> rollout_predict(MemoryModel<T>& model, VisionModel<T>& vision, std::span<const pongsim::Frame> frames,
                          std::span<const pongsim::Action> actions, std::mt19937_64* rng, Hidden<T>* final_hidden) {
  if (frames.size() < 2) throw ShapeError("rollout_predict: sequence length must be at least 2");
  if (actions.size() + 1 != frames.size()) {
    throw ShapeError("rollout_predict: " + std::to_string(frames.size()) + " frames need " +
                     std::to_string(frames.size() - 1) + " actions, got " + std::to_string(actions.size()));
  }
  std::vector<Tensor<T>> hots;
  for (const auto& a : actions) hots.push_back(one_hot<T>(std::span(&a, 1)));
  std::optional<SequenceNoise<T>> noise;
  if (rng) {
    noise = SequenceNoise<T>{vision::standard_normal<T>({frames.size(), kLatentDim}, *rng),
                             vision::standard_normal<T>({frames.size() - 1, kLatentDim}, *rng)};
  }
  Graph<T> g;
  auto probs = predict_sequence<T>(g, model, vision, vision, g.constant(vision::frames_to_tensor<T>(frames)), hots, 1,
                                SequenceOptions{}, noise, nullptr, final_hidden);
  return probs.value();
}

template <typename T>
SequenceBatch<T> make_sequence_batch(std::span<const pongsim::Trajectory> windows) {
  if (windows.empty()) throw ShapeError("make_sequence_batch: no windows");
  const std::size_t steps = windows.front().length();
  if (steps < 2) throw ShapeError("make_sequence_batch: windows need at least two frames");
  SequenceBatch<T> out;
  out.batch = windows.size();
  out.steps = steps;
  std::vector<const pongsim::Frame*> frames;
  frames.reserve(steps * out.batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (const auto& w : windows) {
      if (w.length() != steps) {
        throw ShapeError("make_sequence_batch: window lengths differ (" + std::to_string(w.length()) + " vs " +
                         std::to_string(steps) + ")");
      }
      frames.push_back(&w.frames[t]);
    }
  }
  out.frames = vision::frames_to_tensor<T>(std::span<const pongsim::Frame* const>(frames));
  std::vector<pongsim::Action> step_actions(out.batch, pongsim::Action(0));
  for (std::size_t t = 0; t + 1 < steps; ++t) {
    for (std::size_t b = 0; b < out.batch; ++b) step_actions[b] = windows[b].actions[t];
    out.action_one_hots.push_back(one_hot<T>(step_actions));
  }
  return out;
}

template <typename T>
T pred_loss(const Tensor<T>& predicted, std::span<const pongsim::Frame> targets) {
  if (predicted.rows() != targets.size()) {
    throw ShapeError("pred_loss: " + std::to_string(predicted.rows()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  }
  T total = T(0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    total += vision::recon_loss<T>(std::span<const T>(&predicted.at(i, 0), vision::kPixels), targets[i]);
  }
  return total;
}

#define METAWORLD_INSTANTIATE_MEMORY(T)                                                                           \
  template Hidden<T> init_hidden<T>(std::size_t);                                                                 \
  template Tensor<T> one_hot<T>(std::span<const pongsim::Action>);                                                \
  template class MemoryModel<T>;                                                                                  \
  template Var<T> predict_sequence<T>(Graph<T>&, MemoryModel<T>&, VisionModel<T>&, VisionModel<T>&, Var<T>,       \
                                      const std::vector<Tensor<T>>&, std::size_t, const SequenceOptions&,         \
                                      const std::optional<SequenceNoise<T>>&, EncodedVars<T>*, Hidden<T>*);       \
  template Tensor<T> rollout_predict<T>(MemoryModel<T>&, VisionModel<T>&, std::span<const pongsim::Frame>,        \
                                        std::span<const pongsim::Action>, std::mt19937_64*, Hidden<T>*);          \
  template SequenceBatch<T> make_sequence_batch<T>(std::span<const pongsim::Trajectory>);                         \
  template T pred_loss<T>(const Tensor<T>&, std::span<const pongsim::Frame>);

METAWORLD_INSTANTIATE_MEMORY(float)
METAWORLD_INSTANTIATE_MEMORY(double)

}  // namespace metaworld::memory
