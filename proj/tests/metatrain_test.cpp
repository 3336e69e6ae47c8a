#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "metaworld/errors.hpp"
#include "metaworld/metatrain/train.hpp"
#include "metaworld/numcore/ops.hpp"
#include "support/gradcheck.hpp"

namespace nc = metaworld::numcore;
using namespace metaworld::metatrain;
using metaworld::pongsim::generate_dataset;
using metaworld::transforms::TransformKind;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch.size = 2;
  c.batch.sequence_length = 4;
  c.schedule.cycles = 3;
  c.schedule.eval_every = 3;
  c.eval.pairs = 2;
  return c;
}

std::vector<float> flat(const std::vector<nc::Parameter<float>*>& params, bool grads) {
  std::vector<float> out;
  for (auto* p : params) {
    const auto& t = grads ? p->grad : p->value;
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return out;
}

void copy_vision(metaworld::vision::VisionModel<float>& from, metaworld::vision::VisionModel<float>& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k]->value = src[k]->value;
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughYaml) {
  TrainConfig c;
  c.loss.eta_sigma = 0.1;
  c.optim.lr_memory = 3e-4;
  c.dataset = "runs/a b:c.mwd";
  const auto text = to_yaml(c);
  EXPECT_EQ(parse_config(text), c);
  EXPECT_EQ(to_yaml(parse_config(text)), text);
  EXPECT_EQ(parse_config(""), TrainConfig{});
}

TEST(Config, NestedOverrides) {
  auto c = parse_config("envs: {variant: vswap, mode: noncorresponding}\nschedule:\n  cycles: 7\nloss: {eta: 0}\n");
  EXPECT_EQ(c.envs.variant, TransformKind::VerticalSwap);
  EXPECT_EQ(c.envs.mode, Mode::NonCorresponding);
  EXPECT_EQ(c.schedule.cycles, 7u);
  EXPECT_EQ(c.loss.eta, 0.0);
  EXPECT_EQ(c.batch.size, 16u);
}

TEST(Config, UnknownKeysAndBadValuesNameTheKey) {
  auto message = [](const char* text) {
    try {
      parse_config(text);
    } catch (const metaworld::ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("loss: {etta: 1}").find("loss.etta"), std::string::npos);
  EXPECT_NE(message("colour: red").find("colour"), std::string::npos);
  EXPECT_NE(message("batch: {size: -3}").find("batch.size"), std::string::npos);
  EXPECT_NE(message("loss: {eta: -1}").find("loss.eta"), std::string::npos);
  EXPECT_NE(message("envs: {variant: sideways}").find("envs.variant"), std::string::npos);
  EXPECT_NE(message("batch: {sequence_length: 1}").find("sequence_length"), std::string::npos);
}

TEST(MakeBatches, CorrespondingMirrorPairsFramesAndSharesActions) {
  auto data = generate_dataset(4, 40, 5);
  std::mt19937_64 rng(1);
  auto pair = make_batches(Mode::Corresponding, data, TransformKind::Mirror, 16, 25, rng);
  ASSERT_EQ(pair.o.size(), 16u);
  ASSERT_EQ(pair.i.size(), 16u);
  for (std::size_t b = 0; b < 16; ++b) {
    ASSERT_EQ(pair.o[b].length(), 25u);
    EXPECT_EQ(pair.o[b].actions, pair.i[b].actions);
    for (std::size_t t = 0; t < 25; ++t) {
      for (int r = 0; r < 64; r += 7) {
        for (int c = 0; c < 64; ++c) {
          ASSERT_EQ(pair.i[b].frames[t].get(r, c), pair.o[b].frames[t].get(r, 63 - c));
        }
      }
    }
  }
}

TEST(MakeBatches, NonCorrespondingDrawsFromDisjointHalves) {
  auto data = generate_dataset(10, 30, 6);
  std::set<std::uint64_t> first_half, second_half;
  for (std::size_t k = 0; k < 10; ++k) (k < 5 ? first_half : second_half).insert(data[k].seed);
  WindowSampler sampler(data, Mode::NonCorresponding, TransformKind::Transpose, 8, 25);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto pair = sampler.make_batches(rng);
    for (const auto& w : pair.o) EXPECT_TRUE(first_half.count(w.seed));
    for (const auto& w : pair.i) EXPECT_TRUE(second_half.count(w.seed));
  }
}

TEST(MakeBatches, ShortEpisodesAreSkipped) {
  auto data = generate_dataset(3, 30, 7);
  data.push_back(metaworld::pongsim::rollout(99, 10));
  WindowSampler sampler(data, Mode::Corresponding, TransformKind::Mirror, 4, 25);
  EXPECT_EQ(sampler.eligible_o(), 3u);
  auto too_short = generate_dataset(2, 10, 8);
  EXPECT_THROW(WindowSampler(too_short, Mode::Corresponding, TransformKind::Mirror, 4, 25), metaworld::DataError);
  EXPECT_THROW(WindowSampler({}, Mode::Corresponding, TransformKind::Mirror, 4, 25), metaworld::DataError);
}

TEST(Mmd, HandValues) {
  using metaworld::vision::GaussianParams;
  GaussianParams<double> anchor{Tensor<double>({3, 32}, 0.5), Tensor<double>({3, 32}, -1.0)};
  EXPECT_EQ(mmd_loss(anchor, anchor, 1.0, 1.0), 0.0);
  auto shifted = anchor;
  for (auto& x : shifted.mu.data()) x += 1.0;
  EXPECT_DOUBLE_EQ(mmd_loss(shifted, anchor, 1.0, 1.0), 32.0);
  EXPECT_DOUBLE_EQ(mmd_loss(shifted, anchor, 2.0, 1.0), 64.0);
  auto wider = anchor;
  for (auto& x : wider.logvar.data()) x += 2.0;  // log sigma + 1
  EXPECT_DOUBLE_EQ(mmd_loss(wider, anchor, 1.0, 0.1), 3.2);
}

TEST(Mmd, GradientFlowsOnlyIntoTheNonAnchorEnvironment) {
  std::mt19937_64 rng(3);
  auto mu = metaworld::testing::random_tensor(rng, {4, 32});
  auto lv = metaworld::testing::random_tensor(rng, {4, 32});
  metaworld::vision::GaussianParams<double> anchor{metaworld::testing::random_tensor(rng, {4, 32}),
                                                   metaworld::testing::random_tensor(rng, {4, 32})};
  const auto stats = latent_stats(anchor);
  auto build = [&](nc::Graph<double>&, const std::vector<nc::Var<double>>& v) {
    return mmd_loss<double>({v[0], v[1]}, stats, 1.0, 0.1);
  };
  EXPECT_LT(metaworld::testing::max_gradient_error(build, {mu, lv}), 1e-4);
}

TEST(Stages, ReconstructionLeavesMemoryUntouched) {
  auto data = generate_dataset(4, 20, 9);
  TrainState state(tiny_config());
  WindowSampler sampler(data, Mode::Corresponding, TransformKind::Mirror, 2, 4);
  const auto before = flat(state.memory.parameters(), false);
  const auto vision_before = flat(state.vision_o.parameters(), false);
  for (std::size_t k = 0; k < 3; ++k) {
    auto rng = iteration_rng(1, k);
    reconstruction_stage_step(state, sampler.make_batches(rng), rng);
    for (float g : flat(state.memory.parameters(), true)) ASSERT_EQ(g, 0.0f);
  }
  EXPECT_EQ(flat(state.memory.parameters(), false), before);
  EXPECT_NE(flat(state.vision_o.parameters(), false), vision_before);
  EXPECT_EQ(state.adam_memory.step_count(), 0u);
  EXPECT_EQ(state.iteration, 3u);
}

TEST(Stages, PredictionStepUpdatesThetaAndRecordsLp) {
  auto data = generate_dataset(4, 20, 10);
  TrainState state(tiny_config());
  WindowSampler sampler(data, Mode::Corresponding, TransformKind::Mirror, 2, 4);
  const auto before = flat(state.memory.parameters(), false);
  auto rng = iteration_rng(1, 0);
  prediction_stage_step(state, sampler.make_batches(rng), rng);
  EXPECT_NE(flat(state.memory.parameters(), false), before);
  ASSERT_EQ(state.history.size(), 2u);
  EXPECT_EQ(state.history[0].stage, Stage::Prediction);
  EXPECT_EQ(state.history[0].env, 'o');
  EXPECT_EQ(state.history[1].env, 'm');
  EXPECT_TRUE(state.history[0].L_p.has_value());
  EXPECT_GT(*state.history[0].L_p, 0.0f);
  EXPECT_FALSE(state.history[0].L_r.has_value());
}

TEST(Stages, IdenticalModelsAndBatchesGetIdenticalVisionGradients) {
  auto cfg = tiny_config();
  cfg.envs.variant = TransformKind::Identity;
  cfg.memory.sample_inputs = false;
  cfg.memory.sample_predictions = false;
  TrainState state(cfg);
  copy_vision(state.vision_o, state.vision_i);
  auto data = generate_dataset(4, 20, 11);
  std::mt19937_64 rng(4);
  auto pair = make_batches(Mode::Corresponding, data, TransformKind::Identity, 2, 4, rng);
  accumulate_prediction_gradients(state, pair, rng);
  EXPECT_EQ(flat(state.vision_o.parameters(), true), flat(state.vision_i.parameters(), true));
}

TEST(Stages, ThetaGradientIsTheSumOfPerEnvironmentGradients) {
  auto data = generate_dataset(4, 20, 12);
  TrainState state(tiny_config());
  std::mt19937_64 sampler_rng(5);
  auto pair = make_batches(Mode::Corresponding, data, TransformKind::Mirror, 2, 4, sampler_rng);

  std::mt19937_64 rng(6);
  accumulate_prediction_gradients(state, pair, rng);
  const auto combined = flat(state.memory.parameters(), true);

  std::mt19937_64 replay(6);
  std::vector<std::vector<float>> per_env;
  for (Env env : {Env::O, Env::I}) {
    const Batch& batch = env == Env::O ? pair.o : pair.i;
    auto noise = draw_sequence_noise(replay, batch.size(), batch.front().length());
    state.zero_grad();
    nc::Graph<float> g;
    g.backward(prediction_loss(g, state, env, batch, noise));
    per_env.push_back(flat(state.memory.parameters(), true));
  }
  ASSERT_EQ(combined.size(), per_env[0].size());
  std::size_t nonzero = 0;
  for (std::size_t k = 0; k < combined.size(); ++k) {
    ASSERT_EQ(combined[k], per_env[0][k] + per_env[1][k]) << k;
    nonzero += combined[k] != 0.0f;
  }
  EXPECT_GT(nonzero, combined.size() / 2);
}

TEST(Stages, MmdWeightNeverReachesAnchorOrPredictionGradients) {
  auto data = generate_dataset(4, 20, 13);
  std::mt19937_64 sampler_rng(7);
  auto pair = make_batches(Mode::Corresponding, data, TransformKind::Mirror, 2, 4, sampler_rng);
  auto grads = [&](double eta, bool prediction, bool anchor) {
    auto cfg = tiny_config();
    cfg.loss.eta = eta;
    TrainState state(cfg);
    std::mt19937_64 rng(8);
    if (prediction) accumulate_prediction_gradients(state, pair, rng);
    else accumulate_reconstruction_gradients(state, pair, rng);
    return flat(anchor ? state.vision_o.parameters() : state.vision_i.parameters(), true);
  };
  EXPECT_EQ(grads(0.0, false, true), grads(5.0, false, true));
  EXPECT_EQ(grads(0.0, true, true), grads(5.0, true, true));
  EXPECT_EQ(grads(0.0, true, false), grads(5.0, true, false));
  EXPECT_NE(grads(0.0, false, false), grads(5.0, false, false));
}

TEST(Stages, ZeroEtaIsIndependentVaeTraining) {
  auto cfg = tiny_config();
  cfg.loss.eta = 0;
  auto data = generate_dataset(4, 20, 14);
  std::mt19937_64 sampler_rng(9);
  auto pair = make_batches(Mode::Corresponding, data, TransformKind::Mirror, 2, 4, sampler_rng);
  TrainState state(cfg);
  std::mt19937_64 rng(10);
  accumulate_reconstruction_gradients(state, pair, rng);
  const auto combined = flat(state.vision_i.parameters(), true);

  // Plain VAE objective for the variant alone, same noise draw.
  std::mt19937_64 replay(10);
  const auto frames_o = metaworld::eval::flatten_frames(pair.o);
  metaworld::vision::standard_normal<float>({frames_o.size(), 32}, replay);
  const auto frames = metaworld::eval::flatten_frames(pair.i);
  auto noise = metaworld::vision::standard_normal<float>({frames.size(), 32}, replay);
  state.zero_grad();
  nc::Graph<float> g;
  auto x = g.constant(metaworld::vision::frames_to_tensor<float>(frames));
  auto enc = state.vision_i.encode(g, x);
  auto recon = nc::scale(metaworld::vision::squared_error(
                             state.vision_i.decode(g, metaworld::vision::sample_latent(enc, noise)), x),
                         1.0f / static_cast<float>(frames.size()));
  auto kl = metaworld::vision::kl_free_bits(enc, 0.5f);
  g.backward(nc::scale(recon, 1.0f) + nc::scale(kl, 1e-3f));
  EXPECT_EQ(flat(state.vision_i.parameters(), true), combined);
}

TEST(Stages, ReconstructionLossHalvesWithinFiveHundredIterations) {
  auto cfg = tiny_config();
  cfg.batch.size = 4;
  cfg.batch.sequence_length = 5;
  auto data = generate_dataset(4, 30, 15);
  TrainState state(cfg);
  WindowSampler sampler(data, Mode::Corresponding, TransformKind::Mirror, 4, 5);
  for (std::size_t k = 0; k < 500; ++k) {
    auto rng = iteration_rng(2, k);
    reconstruction_stage_step(state, sampler.make_batches(rng), rng);
  }
  const float first = *state.history.front().L_r;
  const float last = *state.history[state.history.size() - 2].L_r;
  EXPECT_LE(last, 0.5f * first) << first << " -> " << last;
}

TEST(Stages, NonFiniteLossAbortsBeforeAnyUpdate) {
  auto data = generate_dataset(4, 20, 16);
  TrainState state(tiny_config());
  state.vision_i.parameters()[1]->value[0] = std::numeric_limits<float>::quiet_NaN();
  const auto memory_before = flat(state.memory.parameters(), false);
  WindowSampler sampler(data, Mode::Corresponding, TransformKind::Mirror, 2, 4);
  auto rng = iteration_rng(1, 0);
  EXPECT_THROW(prediction_stage_step(state, sampler.make_batches(rng), rng), metaworld::NumericalError);
  EXPECT_EQ(flat(state.memory.parameters(), false), memory_before);
  EXPECT_EQ(state.iteration, 0u);
  EXPECT_TRUE(state.history.empty());
}

TEST(Train, ScheduleArithmeticAndDeterminism) {
  auto data = generate_dataset(4, 20, 17);
  auto run = [&] {
    auto state = std::make_unique<TrainState>(tiny_config());
    std::size_t checkpoints = 0;
    train(*state, data, [&](const TrainState&) { ++checkpoints; });
    EXPECT_EQ(checkpoints, 1u);
    return state;
  };
  auto a = run();
  std::size_t prediction = 0, reconstruction = 0, evals = 0;
  for (const auto& r : a->history) {
    prediction += r.stage == Stage::Prediction;
    reconstruction += r.stage == Stage::Reconstruction;
    evals += r.stage == Stage::Eval;
  }
  EXPECT_EQ(prediction, 2u * 60);
  EXPECT_EQ(reconstruction, 2u * 30);
  EXPECT_EQ(evals, 2u);
  EXPECT_EQ(a->cycle, 3u);
  EXPECT_EQ(a->iteration, 90u);
  for (std::size_t k = 1; k < a->history.size(); ++k) {
    EXPECT_LE(a->history[k - 1].iter, a->history[k].iter);
    EXPECT_LE(a->history[k - 1].cycle, a->history[k].cycle);
  }
  auto b = run();
  EXPECT_EQ(a->history, b->history);
}

TEST(Metrics, CsvRoundTripIsLossless) {
  std::vector<MetricRow> rows(3);
  rows[0].L_p = 1024.0f / 3.0f;
  rows[1].stage = Stage::Reconstruction;
  rows[1].env = 'm';
  rows[1].L_r = 1e-7f;
  rows[1].L_kl = 16.0f;
  rows[1].L_mmd = 0.1f;
  rows[2].stage = Stage::Eval;
  rows[2].cycle = 4;
  rows[2].iter = 150;
  rows[2].L_t = 3.14159274f;
  rows[2].L_pt = 123456.789f;
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  EXPECT_EQ(ss.str().substr(0, kMetricsHeader.size()), kMetricsHeader);
  EXPECT_EQ(read_metrics_csv(ss), rows);
}
