#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "metaworld/eval/eval.hpp"
#include "metaworld/memory/memory.hpp"
#include "metaworld/metatrain/config.hpp"
#include "metaworld/numcore/adam.hpp"
#include "metaworld/pongsim/dataset.hpp"
#include "metaworld/vision/vision.hpp"

namespace metaworld::metatrain {

using numcore::Graph;
using numcore::Tensor;
using numcore::Var;
using pongsim::Dataset;
using pongsim::Trajectory;
using transforms::TransformKind;

// A batch is a list of equal-length windows cut from episodes.
using Batch = std::vector<Trajectory>;

struct BatchPair {
  Batch o;  // original environment
  Batch i;  // transformed environment
};

// Draws training windows. Corresponding mode transforms the o-batch
// frame by frame; NonCorresponding mode samples the i-batch independently
// from the second half of the episodes (by index) and the o-batch from the
// first half. Episodes shorter than the window are skipped with a warning.
class WindowSampler {
 public:
  WindowSampler(const Dataset& dataset, Mode mode, TransformKind kind, std::size_t batch_size,
                std::size_t sequence_length);

  BatchPair make_batches(std::mt19937_64& rng) const;

  std::size_t eligible_o() const noexcept { return episodes_o_.size(); }
  std::size_t eligible_i() const noexcept { return episodes_i_.size(); }

 private:
  Batch draw(const std::vector<std::size_t>& episodes, std::mt19937_64& rng) const;

  const Dataset* dataset_;
  Mode mode_;
  TransformKind kind_;
  std::size_t batch_size_;
  std::size_t sequence_length_;
  std::vector<std::size_t> episodes_o_;
  std::vector<std::size_t> episodes_i_;
};

BatchPair make_batches(Mode mode, const Dataset& dataset_o, TransformKind kind, std::size_t batch_size,
                       std::size_t sequence_length, std::mt19937_64& rng);

// Per-dimension batch means of mu and of log sigma, each [1, 32].
template <typename T>
struct LatentStats {
  Tensor<T> mu_mean;
  Tensor<T> logstd_mean;
};

template <typename T>
LatentStats<T> latent_stats(const vision::GaussianParams<T>& params);

// eta_mu |mean(mu) - anchor.mu_mean|^2 + eta_sigma |mean(logvar / 2) - anchor.logstd_mean|^2.
// The anchor enters as constants, so only `params` receives gradient.
template <typename T>
Var<T> mmd_loss(vision::EncodedVars<T> params, const LatentStats<T>& anchor, double eta_mu, double eta_sigma);
template <typename T>
T mmd_loss(const vision::GaussianParams<T>& params, const vision::GaussianParams<T>& anchor, double eta_mu,
           double eta_sigma);

enum class Stage { Prediction, Reconstruction, Eval };
std::string_view stage_name(Stage stage);

// One line of metrics.csv. Values are float-rounded so they survive the
// checkpoint's 32-bit blocks unchanged.
struct MetricRow {
  std::size_t cycle = 0;
  std::size_t iter = 0;
  Stage stage = Stage::Prediction;
  char env = 'o';
  std::optional<float> L_r, L_p, L_kl, L_mmd, L_t, L_pt;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline constexpr std::string_view kMetricsHeader = "cycle,iter,stage,env,L_r,L_p,L_kl,L_mmd,L_t,L_pt";

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(std::istream& in);

enum class Env { O, I };

// Everything a run mutates. Optimizers hold pointers into the models, so
// the state is pinned in memory.
class TrainState {
 public:
  explicit TrainState(TrainConfig config);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  TrainConfig config;
  vision::VisionModel<float> vision_o;
  vision::VisionModel<float> vision_i;
  memory::MemoryModel<float> memory;
  numcore::Adam<float> adam_o;
  numcore::Adam<float> adam_i;
  numcore::Adam<float> adam_memory;
  std::size_t cycle = 0;      // completed cycles
  std::size_t iteration = 0;  // completed optimizer steps
  std::vector<MetricRow> history;

  char variant_tag() const;
  vision::VisionModel<float>& vision(Env env) { return env == Env::O ? vision_o : vision_i; }
  std::vector<numcore::Parameter<float>*> parameters();
  void zero_grad();
};

// Random source for optimizer step `iteration`; resuming needs no rng state.
std::mt19937_64 iteration_rng(std::uint64_t seed, std::size_t iteration);

memory::SequenceNoise<float> draw_sequence_noise(std::mt19937_64& rng, std::size_t batch, std::size_t steps);

// Mean per-frame squared error of teacher-forced next-frame predictions.
Var<float> prediction_loss(Graph<float>& g, TrainState& state, Env env, const Batch& batch,
                           const memory::SequenceNoise<float>& noise);

struct PredictionLosses {
  float L_p_o = 0;
  float L_p_i = 0;
};

struct ReconstructionLosses {
  float L_r_o = 0, L_r_i = 0;
  float L_kl_o = 0, L_kl_i = 0;
  float L_mmd = 0;
};

// Zero every gradient, then accumulate this stage's gradients (o first,
// then i) without stepping any optimizer.
PredictionLosses accumulate_prediction_gradients(TrainState& state, const BatchPair& batches, std::mt19937_64& rng);
ReconstructionLosses accumulate_reconstruction_gradients(TrainState& state, const BatchPair& batches,
                                                         std::mt19937_64& rng);

// One optimizer step of each stage; appends metric rows and advances the
// iteration counter. Non-finite losses raise NumericalError before any
// parameter is touched.
void prediction_stage_step(TrainState& state, const BatchPair& batches, std::mt19937_64& rng);
void reconstruction_stage_step(TrainState& state, const BatchPair& batches, std::mt19937_64& rng);

// Appends eval rows for both environments at the current counters.
eval::PairMetrics evaluate(TrainState& state, const eval::EvalSet& set);

using CheckpointHook = std::function<void(const TrainState&)>;

// Runs the remaining cycles of state.config. `on_checkpoint` fires at the
// configured cadence and after the final cycle.
void train(TrainState& state, const Dataset& dataset, const CheckpointHook& on_checkpoint = {});

}  // namespace metaworld::metatrain
