#include "metaworld/pongsim/sim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "metaworld/errors.hpp"

namespace metaworld::pongsim {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

int round_px(double v) { return static_cast<int>(std::floor(v + 0.5)); }

void serve(SimState& s) {
  static constexpr double kVerticalChoices[] = {-1.0, -0.5, 0.5, 1.0};
  s.ball_x = 32;
  s.ball_y = 32;
  s.ball_dx = std::uniform_int_distribution<int>(0, 1)(s.rng) ? 1.0 : -1.0;
  s.ball_dy = kVerticalChoices[std::uniform_int_distribution<int>(0, 3)(s.rng)];
}

int clamp_paddle(int centre) { return std::clamp(centre, kMinPaddleCentre, kMaxPaddleCentre); }

bool rows_overlap(int ball_row, int paddle_centre) {
  const int top = paddle_centre - kPaddleHeight / 2;
  const int bottom = top + kPaddleHeight - 1;
  return ball_row <= bottom && ball_row + kBallSize - 1 >= top;
}

void apply_spin(SimState& s, int paddle_centre) {
  const double offset = (s.ball_y + kBallSize / 2.0) - paddle_centre;
  if (offset > 0) s.ball_dy += kSpin;
  else if (offset < 0) s.ball_dy -= kSpin;
  s.ball_dy = std::clamp(s.ball_dy, -kMaxVerticalSpeed, kMaxVerticalSpeed);
  if (s.ball_dy == 0.0) s.ball_dy = offset > 0 ? kSpin : -kSpin;
}

void fill_rect(Frame& f, int top, int left, int height, int width) {
  for (int r = std::max(top, 0); r < std::min(top + height, 64); ++r) {
    for (int c = std::max(left, 0); c < std::min(left + width, 64); ++c) f.set(r, c);
  }
}

}  // namespace

Action::Action(int value) {
  if (value < 0 || value >= kNumActions) {
    throw std::invalid_argument("action " + std::to_string(value) + " outside [0, " + std::to_string(kNumActions) + ")");
  }
  value_ = static_cast<std::uint8_t>(value);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

SimState reset(std::uint64_t seed) {
  SimState s;
  s.rng.seed(seed);
  serve(s);
  return s;
}

SimState step(SimState s, Action action) {
  switch (action.value()) {
    case 2:
    case 4:
      s.agent_y = clamp_paddle(s.agent_y - kAgentPaddleSpeed);
      break;
    case 3:
    case 5:
      s.agent_y = clamp_paddle(s.agent_y + kAgentPaddleSpeed);
      break;
    default:
      break;
  }

  const double target = s.ball_y + kBallSize / 2.0;
  if (target - s.opponent_y >= 1.0) s.opponent_y = clamp_paddle(s.opponent_y + kOpponentPaddleSpeed);
  else if (target - s.opponent_y <= -1.0) s.opponent_y = clamp_paddle(s.opponent_y - kOpponentPaddleSpeed);

  const int prev_col = round_px(s.ball_x);
  s.ball_x += s.ball_dx;
  s.ball_y += s.ball_dy;

  const double top = kWallMargin;
  const double bottom = 64 - kBallSize - kWallMargin;
  if (s.ball_y < top) {
    s.ball_y = 2 * top - s.ball_y;
    s.ball_dy = -s.ball_dy;
  } else if (s.ball_y > bottom) {
    s.ball_y = 2 * bottom - s.ball_y;
    s.ball_dy = -s.ball_dy;
  }

  const int col = round_px(s.ball_x);
  const int row = round_px(s.ball_y);
  if (s.ball_dx > 0 && prev_col + kBallSize <= kRightPaddleCol && col + kBallSize > kRightPaddleCol &&
      rows_overlap(row, s.agent_y)) {
    s.ball_x = kRightPaddleCol - kBallSize;
    s.ball_dx = -s.ball_dx;
    apply_spin(s, s.agent_y);
  } else if (s.ball_dx < 0 && prev_col >= kLeftPaddleCol + kPaddleWidth && col < kLeftPaddleCol + kPaddleWidth &&
             rows_overlap(row, s.opponent_y)) {
    s.ball_x = kLeftPaddleCol + kPaddleWidth;
    s.ball_dx = -s.ball_dx;
    apply_spin(s, s.opponent_y);
  }

  const int final_col = round_px(s.ball_x);
  if (final_col < 0 || final_col > 64 - kBallSize) serve(s);

  ++s.steps;
  return s;
}

Frame render(const SimState& s) {
  Frame f;
  fill_rect(f, s.opponent_y - kPaddleHeight / 2, kLeftPaddleCol, kPaddleHeight, kPaddleWidth);
  fill_rect(f, s.agent_y - kPaddleHeight / 2, kRightPaddleCol, kPaddleHeight, kPaddleWidth);
  fill_rect(f, round_px(s.ball_y), round_px(s.ball_x), kBallSize, kBallSize);
  return f;
}

Trajectory rollout(std::uint64_t seed, std::size_t max_steps) {
  if (max_steps < 2) throw std::invalid_argument("rollout: max_steps must be at least 2");
  Trajectory traj;
  traj.seed = seed;
  traj.frames.reserve(max_steps);
  traj.actions.reserve(max_steps - 1);
  std::mt19937_64 policy(derive_seed(seed, 0x5EED));
  std::uniform_int_distribution<int> pick(0, kNumActions - 1);
  SimState s = reset(seed);
  traj.frames.push_back(render(s));
  for (std::size_t t = 1; t < max_steps; ++t) {
    Action a(pick(policy));
    s = step(std::move(s), a);
    traj.actions.push_back(a);
    traj.frames.push_back(render(s));
  }
  return traj;
}

bool replays_exactly(const Trajectory& traj) {
  if (traj.frames.empty() || traj.actions.size() + 1 != traj.frames.size()) return false;
  SimState s = reset(traj.seed);
  if (render(s) != traj.frames[0]) return false;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    s = step(std::move(s), traj.actions[t]);
    if (render(s) != traj.frames[t + 1]) return false;
  }
  return true;
}

}  // namespace metaworld::pongsim
