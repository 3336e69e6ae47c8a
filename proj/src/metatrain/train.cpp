#include "metaworld/metatrain/train.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "metaworld/errors.hpp"
#include "metaworld/numcore/ops.hpp"

namespace metaworld::metatrain {

namespace nc = numcore;
using vision::kLatentDim;

namespace {

constexpr std::uint64_t kBatchStream = 0xBA7C4;
constexpr std::uint64_t kVisionOSeed = 1;
constexpr std::uint64_t kVisionISeed = 2;
constexpr std::uint64_t kMemorySeed = 3;

Trajectory cut_window(const Trajectory& episode, std::size_t start, std::size_t length) {
  Trajectory w;
  w.seed = episode.seed;
  w.frames.assign(episode.frames.begin() + start, episode.frames.begin() + start + length);
  w.actions.assign(episode.actions.begin() + start, episode.actions.begin() + start + length - 1);
  return w;
}

std::vector<pongsim::Frame> all_frames(const Batch& batch) { return eval::flatten_frames(batch); }

void require_finite(float value, const char* what, char env, const TrainState& state) {
  if (!std::isfinite(value)) {
    throw NumericalError(fmt::format("non-finite {} for env {} at cycle {}, iteration {}", what, env, state.cycle,
                                     state.iteration));
  }
}

MetricRow row(const TrainState& state, Stage stage, char env) {
  MetricRow r;
  r.cycle = state.cycle;
  r.iter = state.iteration;
  r.stage = stage;
  r.env = env;
  return r;
}

std::optional<float> parse_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  char* end = nullptr;
  const float v = std::strtof(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size()) throw DataError("metrics: bad value '" + cell + "'");
  return v;
}

std::string format_cell(const std::optional<float>& v) { return v ? fmt::format("{:.9g}", *v) : std::string(); }

}  // namespace

WindowSampler::WindowSampler(const Dataset& dataset, Mode mode, TransformKind kind, std::size_t batch_size,
                             std::size_t sequence_length)
    : dataset_(&dataset), mode_(mode), kind_(kind), batch_size_(batch_size), sequence_length_(sequence_length) {
  if (dataset.empty()) throw DataError("training dataset is empty");
  const std::size_t half = dataset.size() / 2;
  std::size_t skipped = 0;
  for (std::size_t k = 0; k < dataset.size(); ++k) {
    if (dataset[k].length() < sequence_length) {
      ++skipped;
      continue;
    }
    if (mode == Mode::Corresponding || k < half) {
      episodes_o_.push_back(k);
    } else {
      episodes_i_.push_back(k);
    }
  }
  if (skipped > 0) {
    spdlog::warn("skipped {} of {} episodes shorter than the {}-step window", skipped, dataset.size(),
                 sequence_length);
  }
  if (episodes_o_.empty() || (mode == Mode::NonCorresponding && episodes_i_.empty())) {
    throw DataError(fmt::format("no episodes long enough for {}-step windows in {} mode", sequence_length,
                                mode_name(mode)));
  }
}

Batch WindowSampler::draw(const std::vector<std::size_t>& episodes, std::mt19937_64& rng) const {
  Batch batch;
  batch.reserve(batch_size_);
  std::uniform_int_distribution<std::size_t> pick(0, episodes.size() - 1);
  for (std::size_t b = 0; b < batch_size_; ++b) {
    const auto& episode = (*dataset_)[episodes[pick(rng)]];
    std::uniform_int_distribution<std::size_t> start(0, episode.length() - sequence_length_);
    batch.push_back(cut_window(episode, start(rng), sequence_length_));
  }
  return batch;
}

BatchPair WindowSampler::make_batches(std::mt19937_64& rng) const {
  BatchPair pair;
  pair.o = draw(episodes_o_, rng);
  const Batch& source = mode_ == Mode::Corresponding ? pair.o : draw(episodes_i_, rng);
  pair.i.reserve(source.size());
  for (const auto& w : source) pair.i.push_back(transforms::transform_trajectory(kind_, w));
  return pair;
}

BatchPair make_batches(Mode mode, const Dataset& dataset_o, TransformKind kind, std::size_t batch_size,
                       std::size_t sequence_length, std::mt19937_64& rng) {
  return WindowSampler(dataset_o, mode, kind, batch_size, sequence_length).make_batches(rng);
}

template <typename T>
LatentStats<T> latent_stats(const vision::GaussianParams<T>& params) {
  LatentStats<T> s{Tensor<T>({1, kLatentDim}), Tensor<T>({1, kLatentDim})};
  const std::size_t n = params.mu.rows();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t d = 0; d < kLatentDim; ++d) {
      s.mu_mean[d] += params.mu.at(r, d);
      s.logstd_mean[d] += params.logvar.at(r, d) / T(2);
    }
  }
  for (std::size_t d = 0; d < kLatentDim; ++d) {
    s.mu_mean[d] /= static_cast<T>(n);
    s.logstd_mean[d] /= static_cast<T>(n);
  }
  return s;
}

template <typename T>
Var<T> mmd_loss(vision::EncodedVars<T> params, const LatentStats<T>& anchor, double eta_mu, double eta_sigma) {
  auto& g = params.mu.graph();
  auto mu_gap = nc::mean(params.mu, 0) - g.constant(anchor.mu_mean);
  auto logstd_gap = nc::scale(nc::mean(params.logvar, 0), T(0.5)) - g.constant(anchor.logstd_mean);
  return nc::scale(nc::sum(nc::square(mu_gap)), static_cast<T>(eta_mu)) +
         nc::scale(nc::sum(nc::square(logstd_gap)), static_cast<T>(eta_sigma));
}

template <typename T>
T mmd_loss(const vision::GaussianParams<T>& params, const vision::GaussianParams<T>& anchor, double eta_mu,
           double eta_sigma) {
  Graph<T> g;
  return mmd_loss<T>({g.constant(params.mu), g.constant(params.logvar)}, latent_stats(anchor), eta_mu, eta_sigma)
      .value()
      .item();
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::Prediction: return "prediction";
    case Stage::Reconstruction: return "reconstruction";
    case Stage::Eval: return "eval";
  }
  return "?";
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.cycle << ',' << r.iter << ',' << stage_name(r.stage) << ',' << r.env << ',' << format_cell(r.L_r) << ','
        << format_cell(r.L_p) << ',' << format_cell(r.L_kl) << ',' << format_cell(r.L_mmd) << ','
        << format_cell(r.L_t) << ',' << format_cell(r.L_pt) << '\n';
  }
}

std::vector<MetricRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError("metrics: missing or wrong header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 10) throw DataError("metrics: expected 10 columns in '" + line + "'");
    MetricRow r;
    r.cycle = std::stoull(cells[0]);
    r.iter = std::stoull(cells[1]);
    if (cells[2] == "prediction") r.stage = Stage::Prediction;
    else if (cells[2] == "reconstruction") r.stage = Stage::Reconstruction;
    else if (cells[2] == "eval") r.stage = Stage::Eval;
    else throw DataError("metrics: unknown stage '" + cells[2] + "'");
    if (cells[3].size() != 1) throw DataError("metrics: bad env '" + cells[3] + "'");
    r.env = cells[3][0];
    r.L_r = parse_cell(cells[4]);
    r.L_p = parse_cell(cells[5]);
    r.L_kl = parse_cell(cells[6]);
    r.L_mmd = parse_cell(cells[7]);
    r.L_t = parse_cell(cells[8]);
    r.L_pt = parse_cell(cells[9]);
    rows.push_back(r);
  }
  return rows;
}

TrainState::TrainState(TrainConfig cfg)
    : config((cfg.validate(), std::move(cfg))),
      vision_o(config.model.preset, pongsim::derive_seed(config.seeds.train, kVisionOSeed), "vision_o/"),
      vision_i(config.model.preset, pongsim::derive_seed(config.seeds.train, kVisionISeed), "vision_i/"),
      memory(pongsim::derive_seed(config.seeds.train, kMemorySeed), "memory/"),
      adam_o(vision_o.parameters(), {.learning_rate = config.optim.lr_vision_o}),
      adam_i(vision_i.parameters(), {.learning_rate = config.optim.lr_vision_i}),
      adam_memory(memory.parameters(), {.learning_rate = config.optim.lr_memory}) {}

char TrainState::variant_tag() const { return transforms::env_tag(config.envs.variant)[0]; }

std::vector<numcore::Parameter<float>*> TrainState::parameters() {
  auto params = vision_o.parameters();
  for (auto* p : vision_i.parameters()) params.push_back(p);
  for (auto* p : memory.parameters()) params.push_back(p);
  return params;
}

void TrainState::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::mt19937_64 iteration_rng(std::uint64_t seed, std::size_t iteration) {
  return std::mt19937_64(pongsim::derive_seed(pongsim::derive_seed(seed, kBatchStream), iteration));
}

memory::SequenceNoise<float> draw_sequence_noise(std::mt19937_64& rng, std::size_t batch, std::size_t steps) {
  auto latent = vision::standard_normal<float>({steps * batch, kLatentDim}, rng);
  auto predicted = vision::standard_normal<float>({(steps - 1) * batch, kLatentDim}, rng);
  return {std::move(latent), std::move(predicted)};
}

Var<float> prediction_loss(Graph<float>& g, TrainState& state, Env env, const Batch& batch,
                           const memory::SequenceNoise<float>& noise) {
  auto seq = memory::make_sequence_batch<float>(batch);
  auto& vis = state.vision(env);
  const memory::SequenceOptions options{state.config.memory.sample_inputs, state.config.memory.sample_predictions,
                                        state.config.memory.teacher_forcing};
  auto frames = g.constant(std::move(seq.frames));
  auto probs = memory::predict_sequence<float>(g, state.memory, vis, vis, frames, seq.action_one_hots, seq.batch,
                                               options, noise);
  auto targets = nc::slice(frames, 0, seq.batch, seq.batch * seq.steps);
  const auto predicted = static_cast<float>(seq.batch * (seq.steps - 1));
  return nc::scale(vision::squared_error(probs, targets), 1.0f / predicted);
}

PredictionLosses accumulate_prediction_gradients(TrainState& state, const BatchPair& batches, std::mt19937_64& rng) {
  state.zero_grad();
  PredictionLosses out;
  const float beta_p = static_cast<float>(state.config.loss.beta_p);
  for (Env env : {Env::O, Env::I}) {
    const Batch& batch = env == Env::O ? batches.o : batches.i;
    auto noise = draw_sequence_noise(rng, batch.size(), batch.front().length());
    Graph<float> g;
    auto loss = prediction_loss(g, state, env, batch, noise);
    (env == Env::O ? out.L_p_o : out.L_p_i) = loss.value().item();
    g.backward(nc::scale(loss, beta_p));
  }
  return out;
}

ReconstructionLosses accumulate_reconstruction_gradients(TrainState& state, const BatchPair& batches,
                                                         std::mt19937_64& rng) {
  state.zero_grad();
  const auto& cfg = state.config.loss;
  ReconstructionLosses out;
  LatentStats<float> anchor;
  for (Env env : {Env::O, Env::I}) {
    const auto frames = all_frames(env == Env::O ? batches.o : batches.i);
    const auto n = frames.size();
    auto noise = vision::standard_normal<float>({n, kLatentDim}, rng);
    auto& vis = state.vision(env);
    Graph<float> g;
    auto x = g.constant(vision::frames_to_tensor<float>(frames));
    auto enc = vis.encode(g, x);
    auto recon = nc::scale(vision::squared_error(vis.decode(g, vision::sample_latent(enc, noise)), x),
                           1.0f / static_cast<float>(n));
    auto kl = vision::kl_free_bits(enc, static_cast<float>(cfg.free_bits));
    auto loss = nc::scale(recon, static_cast<float>(cfg.beta_r)) + nc::scale(kl, static_cast<float>(cfg.kl_weight));
    if (env == Env::O) {
      out.L_r_o = recon.value().item();
      out.L_kl_o = kl.value().item();
      anchor = latent_stats<float>({enc.mu.value(), enc.logvar.value()});
    } else {
      out.L_r_i = recon.value().item();
      out.L_kl_i = kl.value().item();
      auto mmd = mmd_loss(enc, anchor, cfg.eta_mu, cfg.eta_sigma);
      out.L_mmd = mmd.value().item();
      if (cfg.eta != 0) loss = loss + nc::scale(mmd, static_cast<float>(cfg.eta));
    }
    g.backward(loss);
  }
  return out;
}

void prediction_stage_step(TrainState& state, const BatchPair& batches, std::mt19937_64& rng) {
  const auto losses = accumulate_prediction_gradients(state, batches, rng);
  const char tag = state.variant_tag();
  require_finite(losses.L_p_o, "L_p", 'o', state);
  require_finite(losses.L_p_i, "L_p", tag, state);
  state.adam_memory.step();
  state.adam_o.step();
  state.adam_i.step();
  auto ro = row(state, Stage::Prediction, 'o');
  ro.L_p = losses.L_p_o;
  auto ri = row(state, Stage::Prediction, tag);
  ri.L_p = losses.L_p_i;
  state.history.push_back(ro);
  state.history.push_back(ri);
  ++state.iteration;
}

void reconstruction_stage_step(TrainState& state, const BatchPair& batches, std::mt19937_64& rng) {
  const auto losses = accumulate_reconstruction_gradients(state, batches, rng);
  const char tag = state.variant_tag();
  require_finite(losses.L_r_o, "L_r", 'o', state);
  require_finite(losses.L_r_i, "L_r", tag, state);
  require_finite(losses.L_kl_o, "L_kl", 'o', state);
  require_finite(losses.L_kl_i, "L_kl", tag, state);
  require_finite(losses.L_mmd, "L_mmd", tag, state);
  state.adam_o.step();
  state.adam_i.step();
  auto ro = row(state, Stage::Reconstruction, 'o');
  ro.L_r = losses.L_r_o;
  ro.L_kl = losses.L_kl_o;
  auto ri = row(state, Stage::Reconstruction, tag);
  ri.L_r = losses.L_r_i;
  ri.L_kl = losses.L_kl_i;
  ri.L_mmd = losses.L_mmd;
  state.history.push_back(ro);
  state.history.push_back(ri);
  ++state.iteration;
}

eval::PairMetrics evaluate(TrainState& state, const eval::EvalSet& set) {
  auto metrics = eval::evaluate_pair(state.vision_o, state.vision_i, state.memory, set);
  auto record = [&](char env, const eval::EnvMetrics& m) {
    auto r = row(state, Stage::Eval, env);
    r.cycle = state.cycle == 0 ? 0 : state.cycle - 1;
    r.L_r = static_cast<float>(m.L_r);
    r.L_p = static_cast<float>(m.L_p);
    r.L_t = static_cast<float>(m.L_t);
    r.L_pt = static_cast<float>(m.L_pt);
    state.history.push_back(r);
  };
  record('o', metrics.o);
  record(state.variant_tag(), metrics.i);
  return metrics;
}

void train(TrainState& state, const Dataset& dataset, const CheckpointHook& on_checkpoint) {
  const auto& cfg = state.config;
  const WindowSampler sampler(dataset, cfg.envs.mode, cfg.envs.variant, cfg.batch.size, cfg.batch.sequence_length);
  const auto eval_set = eval::make_eval_set(cfg.envs.variant, cfg.eval.pairs, cfg.batch.sequence_length, cfg.seeds.eval);
  while (state.cycle < cfg.schedule.cycles) {
    for (std::size_t k = 0; k < cfg.schedule.prediction_iterations; ++k) {
      auto rng = iteration_rng(cfg.seeds.train, state.iteration);
      prediction_stage_step(state, sampler.make_batches(rng), rng);
    }
    for (std::size_t k = 0; k < cfg.schedule.reconstruction_iterations; ++k) {
      auto rng = iteration_rng(cfg.seeds.train, state.iteration);
      reconstruction_stage_step(state, sampler.make_batches(rng), rng);
    }
    ++state.cycle;
    const bool last = state.cycle == cfg.schedule.cycles;
    if (last || state.cycle % cfg.schedule.eval_every == 0) {
      const auto m = evaluate(state, eval_set);
      spdlog::info("cycle {}/{}: L_r {:.2f}/{:.2f} L_p {:.2f}/{:.2f} L_t {:.2f}/{:.2f} L_pt {:.2f}/{:.2f}", state.cycle,
                   cfg.schedule.cycles, m.o.L_r, m.i.L_r, m.o.L_p, m.i.L_p, m.o.L_t, m.i.L_t, m.o.L_pt, m.i.L_pt);
    }
    if (on_checkpoint && (last || state.cycle % cfg.schedule.checkpoint_every == 0)) on_checkpoint(state);
  }
}

template LatentStats<float> latent_stats<float>(const vision::GaussianParams<float>&);
template LatentStats<double> latent_stats<double>(const vision::GaussianParams<double>&);
template Var<float> mmd_loss<float>(vision::EncodedVars<float>, const LatentStats<float>&, double, double);
template Var<double> mmd_loss<double>(vision::EncodedVars<double>, const LatentStats<double>&, double, double);
template float mmd_loss<float>(const vision::GaussianParams<float>&, const vision::GaussianParams<float>&, double,
                               double);
template double mmd_loss<double>(const vision::GaussianParams<double>&, const vision::GaussianParams<double>&, double,
                                 double);

}  // namespace metaworld::metatrain
