#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "metaworld/pongsim/frame.hpp"

namespace metaworld::pongsim {

inline constexpr int kNumActions = 6;

// Discrete joystick action. 0,1: stay; 2,4: up; 3,5: down.
class Action {
 public:
  Action() = default;
  explicit Action(int value);
  int value() const noexcept { return value_; }
  friend bool operator==(Action, Action) = default;

 private:
  std::uint8_t value_ = 0;
};

// Sprite geometry and kinematics.
inline constexpr int kPaddleWidth = 2;
inline constexpr int kPaddleHeight = 8;
inline constexpr int kBallSize = 2;
inline constexpr int kLeftPaddleCol = 2;
inline constexpr int kRightPaddleCol = 60;
inline constexpr int kAgentPaddleSpeed = 2;
inline constexpr int kOpponentPaddleSpeed = 1;
// Ball top-left y stays in [kWallMargin, 64 - kBallSize - kWallMargin].
inline constexpr double kWallMargin = 2.0;
inline constexpr double kMaxVerticalSpeed = 1.5;
inline constexpr double kSpin = 0.5;
// Paddle centre row: sprite covers rows [centre - 4, centre + 3].
inline constexpr int kMinPaddleCentre = kPaddleHeight / 2;
inline constexpr int kMaxPaddleCentre = 64 - kPaddleHeight / 2;

// Full simulator state. The right paddle is the agent, the left paddle is a
// ball-tracking opponent.
struct SimState {
  double ball_x = 32;
  double ball_y = 32;
  double ball_dx = 0;
  double ball_dy = 0;
  int opponent_y = 32;
  int agent_y = 32;
  std::mt19937_64 rng;
  std::uint64_t steps = 0;

  friend bool operator==(const SimState&, const SimState&) = default;
};

SimState reset(std::uint64_t seed);
SimState step(SimState state, Action action);
Frame render(const SimState& state);

struct Trajectory {
  std::vector<Frame> frames;
  std::vector<Action> actions;  // frames.size() - 1 entries
  std::uint64_t seed = 0;

  std::size_t length() const noexcept { return frames.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// Episode under a uniform random policy. The policy draws from its own
// stream so the action sequence is a prefix-stable function of the seed.
Trajectory rollout(std::uint64_t seed, std::size_t max_steps);

// Replays a trajectory's actions from reset(seed) and checks every frame.
bool replays_exactly(const Trajectory& traj);

// Mixes a base seed and an index into an independent episode seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace metaworld::pongsim
