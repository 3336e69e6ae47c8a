#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metaworld/pongsim/sim.hpp"
#include "metaworld/vision/vision.hpp"

namespace metaworld::memory {

using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;
using vision::EncodedVars;
using vision::GaussianParams;
using vision::VisionModel;

inline constexpr std::size_t kHiddenUnits = 32;
inline constexpr std::size_t kActionDim = pongsim::kNumActions;

template <typename T>
struct Hidden {
  Tensor<T> h;  // [batch, 32]
  Tensor<T> c;  // [batch, 32]
  friend bool operator==(const Hidden&, const Hidden&) = default;
};

template <typename T>
Hidden<T> init_hidden(std::size_t batch = 1);

// [batch, 6] one-hot rows.
template <typename T>
Tensor<T> one_hot(std::span<const pongsim::Action> actions);

// Shared recurrent predictor: an LSTM cell over [z, one_hot(a)] with a linear
// head emitting the next latent's mean and clamped log-variance.
template <typename T>
class MemoryModel {
 public:
  struct State {
    Var<T> h;
    Var<T> c;
  };
  struct Output {
    EncodedVars<T> next;
    State state;
  };

  explicit MemoryModel(std::uint64_t seed, std::string prefix = "memory/");

  State initial_state(Graph<T>& g, std::size_t batch) const;
  Output step(Graph<T>& g, Var<T> z, Var<T> action_one_hot, State state);

  // Value-level single step.
  std::pair<GaussianParams<T>, Hidden<T>> predict(const Tensor<T>& z, std::span<const pongsim::Action> actions,
                                                  const Hidden<T>& hidden);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

 private:
  Parameter<T> cell_w_, cell_b_;
  Parameter<T> head_w_, head_b_;
};

// Noise for the two sampling points of a sequence prediction. Absent means
// Gaussian means are used throughout.
template <typename T>
struct SequenceNoise {
  Tensor<T> latent;     // [steps * batch, 32] for the encoder samples
  Tensor<T> predicted;  // [(steps - 1) * batch, 32] for the predicted samples
};

struct SequenceOptions {
  bool sample_inputs = true;        // feed sampled z (else posterior mean)
  bool sample_predictions = true;   // decode sampled z~ (else predicted mean)
  bool teacher_forcing = true;      // feed the encoder's z each step (else own prediction)
};

// Rows of `frames` are time-major: row t * batch + b. `actions[t]` holds the
// batch's actions between step t and t + 1. Encodes with `encoder`, predicts
// with `model` from a zero hidden state, decodes with `decoder`.
template <typename T>
Var<T> predict_sequence(Graph<T>& g, MemoryModel<T>& model, VisionModel<T>& encoder, VisionModel<T>& decoder,
                        Var<T> frames, const std::vector<Tensor<T>>& action_one_hots, std::size_t batch,
                        const SequenceOptions& options, const std::optional<SequenceNoise<T>>& noise,
                        EncodedVars<T>* encoded_out = nullptr, Hidden<T>* final_hidden = nullptr);

// Equal-length windows laid out time-major for predict_sequence.
template <typename T>
struct SequenceBatch {
  Tensor<T> frames;                      // [steps * batch, 4096]
  std::vector<Tensor<T>> action_one_hots;  // steps - 1 entries of [batch, 6]
  std::size_t batch = 0;
  std::size_t steps = 0;
};

// Windows must all have the same length (at least 2).
template <typename T>
SequenceBatch<T> make_sequence_batch(std::span<const pongsim::Trajectory> windows);

// Teacher-forced rollout over one trajectory window, returning T-1 frame
// probability maps as [T-1, 4096]. With rng == nullptr Gaussian means are used.
template <typename T>
Tensor<T> rollout_predict(MemoryModel<T>& model, VisionModel<T>& vision, std::span<const pongsim::Frame> frames,
                          std::span<const pongsim::Action> actions, std::mt19937_64* rng = nullptr,
                          Hidden<T>* final_hidden = nullptr);

// Sum over steps of the squared-error distance between predicted maps
// [n, 4096] and the target frames.
template <typename T>
T pred_loss(const Tensor<T>& predicted, std::span<const pongsim::Frame> targets);

}  // namespace metaworld::memory
