#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "metaworld/transforms/transforms.hpp"
#include "metaworld/vision/vision.hpp"

namespace metaworld::metatrain {

enum class Mode { Corresponding, NonCorresponding };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view text);

// Every field has a default. The YAML layout mirrors the nesting below, e.g.
//
//   envs: {variant: mirror, mode: corresponding}
//   schedule: {cycles: 100}
struct TrainConfig {
  std::string dataset = "data/pong.mwd";

  struct Envs {
    transforms::TransformKind variant = transforms::TransformKind::Mirror;
    Mode mode = Mode::Corresponding;
  } envs;

  struct Model {
    vision::Preset preset = vision::Preset::Mini;
  } model;

  struct Batch {
    std::size_t size = 16;
    std::size_t sequence_length = 25;
  } batch;

  struct Schedule {
    std::size_t cycles = 100;
    std::size_t prediction_iterations = 20;
    std::size_t reconstruction_iterations = 10;
    std::size_t eval_every = 10;        // cycles; the last cycle is always evaluated
    std::size_t checkpoint_every = 10;  // cycles; the last cycle is always saved
  } schedule;

  struct Loss {
    double beta_p = 1.0;
    double beta_r = 1.0;
    double eta = 1.0;
    double eta_mu = 1.0;
    double eta_sigma = 0.1;
    double kl_weight = 1e-3;
    double free_bits = 0.5;
  } loss;

  struct Optim {
    double lr_memory = 1e-4;
    double lr_vision_o = 1e-4;
    double lr_vision_i = 1e-4;
  } optim;

  // Latent handling inside the memory model during training.
  struct Memory {
    bool sample_inputs = true;
    bool sample_predictions = true;
    bool teacher_forcing = true;
  } memory;

  struct Seeds {
    std::uint64_t train = 1;
    std::uint64_t eval = 7919;
  } seeds;

  struct Eval {
    std::size_t pairs = 32;
  } eval;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Unknown keys and malformed values raise ConfigError naming the key.
TrainConfig parse_config(std::string_view yaml_text);
TrainConfig load_config(const std::string& path);
// Deterministic text; parse_config(to_yaml(c)) reproduces c exactly.
std::string to_yaml(const TrainConfig& config);

bool operator==(const TrainConfig& a, const TrainConfig& b);

}  // namespace metaworld::metatrain
