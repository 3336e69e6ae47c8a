#include <gtest/gtest.h>

#include "metaworld/errors.hpp"
#include "metaworld/memory/memory.hpp"
#include "metaworld/numcore/ops.hpp"
#include "support/gradcheck.hpp"

namespace nc = metaworld::numcore;
using namespace metaworld::memory;
using metaworld::pongsim::Action;
using metaworld::vision::Preset;
using metaworld::vision::standard_normal;

TEST(InitHidden, Zeros) {
  auto a = init_hidden<double>();
  EXPECT_EQ(a.h, Tensor<double>({1, 32}));
  EXPECT_EQ(a.c, Tensor<double>({1, 32}));
  EXPECT_EQ(a, init_hidden<double>());
}

TEST(Predict, DeterministicAndSized) {
  MemoryModel<double> model(1);
  std::mt19937_64 rng(2);
  auto z = standard_normal<double>({2, 32}, rng);
  std::vector<Action> actions{Action(2), Action(5)};
  auto [p1, h1] = model.predict(z, actions, init_hidden<double>(2));
  auto [p2, h2] = model.predict(z, actions, init_hidden<double>(2));
  EXPECT_EQ(p1.mu, p2.mu);
  EXPECT_EQ(h1, h2);
  EXPECT_EQ(p1.mu.shape(), (nc::Shape{2, 32}));
  EXPECT_EQ(p1.logvar.shape(), (nc::Shape{2, 32}));
  EXPECT_THROW(model.predict(z, std::vector<Action>{Action(1)}, init_hidden<double>(2)), metaworld::ShapeError);
}

TEST(Predict, GradientsMatchFiniteDifferences) {
  MemoryModel<double> model(3);
  std::mt19937_64 rng(4);
  auto z = metaworld::testing::random_tensor(rng, {2, 32});
  auto h = metaworld::testing::random_tensor(rng, {2, 32}, -0.5, 0.5);
  auto c = metaworld::testing::random_tensor(rng, {2, 32}, -0.5, 0.5);
  auto hot = one_hot<double>(std::vector<Action>{Action(3), Action(0)});
  auto step_loss = [&](nc::Graph<double>& g, nc::Var<double> zv) {
    auto out = model.step(g, zv, g.constant(hot), {g.constant(h), g.constant(c)});
    return metaworld::testing::weighted_sum(nc::concat<double>({out.next.mu, out.next.logvar, out.state.h}, 1), 5);
  };
  auto wrt_z = [&](nc::Graph<double>& g, const std::vector<nc::Var<double>>& v) { return step_loss(g, v[0]); };
  EXPECT_LT(metaworld::testing::max_gradient_error(wrt_z, {z}), 1e-4);
  auto wrt_theta = [&](nc::Graph<double>& g) { return step_loss(g, g.constant(z)); };
  EXPECT_LT(metaworld::testing::max_param_gradient_error(wrt_theta, model.parameters(), 150, 6), 1e-4);
}

TEST(RolloutPredict, LengthHiddenAndErrors) {
  MemoryModel<float> model(5);
  metaworld::vision::VisionModel<float> vision(Preset::Mini, 6);
  auto traj = metaworld::pongsim::rollout(9, 25);
  Hidden<float> final_hidden;
  auto probs = rollout_predict<float>(model, vision, traj.frames, traj.actions, nullptr, &final_hidden);
  EXPECT_EQ(probs.rows(), 24u);
  EXPECT_NE(final_hidden, init_hidden<float>());
  std::span<const Action> short_actions(traj.actions.data(), 10);
  EXPECT_THROW(rollout_predict<float>(model, vision, traj.frames, short_actions), metaworld::ShapeError);
}

TEST(PredLoss, HandValuesAndMonotone) {
  auto traj = metaworld::pongsim::rollout(1, 3);
  std::span<const metaworld::pongsim::Frame> targets(traj.frames.data() + 1, 2);
  auto perfect = metaworld::vision::frames_to_tensor<double>(targets);
  EXPECT_EQ(pred_loss(perfect, targets), 0.0);
  Tensor<double> half({1, 4096}, 0.5);
  EXPECT_EQ(pred_loss(half, targets.subspan(0, 1)), 1024.0);
  auto mismatched = perfect;
  mismatched.at(1, 0) = 1 - mismatched.at(1, 0);
  EXPECT_GT(pred_loss(mismatched, targets), pred_loss(perfect, targets));
}

TEST(Bptt, FirstStepLatentReceivesLastStepGradient) {
  MemoryModel<double> model(7);
  std::mt19937_64 rng(8);
  constexpr std::size_t kSteps = 25;
  std::vector<Tensor<double>> latents;
  for (std::size_t t = 0; t < kSteps; ++t) latents.push_back(metaworld::testing::random_tensor(rng, {1, 32}));
  std::vector<Tensor<double>> hots;
  for (std::size_t t = 0; t < kSteps; ++t) {
    hots.push_back(one_hot<double>(std::vector<Action>{Action(static_cast<int>(t % 6))}));
  }
  // Loss depends only on the final prediction; gradient w.r.t. z at step 1
  // must arrive through 24 recurrent steps.
  auto build = [&](nc::Graph<double>& g, const std::vector<nc::Var<double>>& v) {
    auto state = model.initial_state(g, 1);
    nc::Var<double> last;
    for (std::size_t t = 0; t < kSteps; ++t) {
      auto z = t == 0 ? v[0] : g.constant(latents[t]);
      auto out = model.step(g, z, g.constant(hots[t]), state);
      state = out.state;
      last = out.next.mu;
    }
    return metaworld::testing::weighted_sum(last, 9);
  };
  auto grad = metaworld::testing::autodiff(build, {latents[0]});
  double mass = 0;
  for (double x : grad[0].data()) mass += std::abs(x);
  EXPECT_GT(mass, 1e-8);
  EXPECT_LT(metaworld::testing::max_gradient_error(build, {latents[0]}), 1e-4);
}

TEST(PredictSequence, RecurrentCellGraphGradientMatchesFiniteDifferences) {
  MemoryModel<double> model(10);
  metaworld::vision::VisionModel<double> vision(Preset::Mini, 11);
  auto traj = metaworld::pongsim::rollout(12, 4);
  auto frames = metaworld::vision::frames_to_tensor<double>(traj.frames);
  std::vector<Tensor<double>> hots;
  for (auto a : traj.actions) hots.push_back(one_hot<double>(std::span(&a, 1)));
  std::mt19937_64 rng(13);
  SequenceNoise<double> noise{standard_normal<double>({4, 32}, rng), standard_normal<double>({3, 32}, rng)};
  auto build = [&](nc::Graph<double>& g) {
    auto probs = predict_sequence<double>(g, model, vision, vision, g.constant(frames), hots, 1, SequenceOptions{},
                                          noise);
    auto targets = g.constant(metaworld::vision::frames_to_tensor<double>(
        std::span<const metaworld::pongsim::Frame>(traj.frames.data() + 1, 3)));
    return metaworld::vision::squared_error(probs, targets);
  };
  auto params = model.parameters();
  for (auto* p : vision.parameters()) params.push_back(p);
  EXPECT_LT(metaworld::testing::max_param_gradient_error(build, params, 150, 14), 1e-4);
}
