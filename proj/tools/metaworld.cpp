// metaworld: data generation, training, evaluation and rendering for the
// shared-dynamics Pong experiments.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "metaworld/cli/checkpoint.hpp"
#include "metaworld/errors.hpp"
#include "metaworld/eval/eval.hpp"
#include "metaworld/metatrain/train.hpp"
#include "metaworld/pongsim/dataset.hpp"
#include "metaworld/transforms/transforms.hpp"

namespace fs = std::filesystem;
using namespace metaworld;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

struct GenDataArgs {
  std::size_t episodes = 10000;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::string out;
};

struct TransformArgs {
  std::string in, kind, out;
};

struct TrainArgs {
  std::string config, out, resume;
};

struct EvalArgs {
  std::string ckpt;
  std::size_t pairs = 32;
  std::optional<std::uint64_t> seed;
  bool same_env = false;
};

struct AnalyzeArgs {
  std::string ckpt, out;
  std::size_t frames = 512;
  std::optional<std::uint64_t> seed;
};

struct RenderArgs {
  std::vector<std::string> ckpts;
  std::string out;
  std::size_t steps = 8;
  std::optional<std::uint64_t> seed;
};

void write_text_atomically(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string metrics_text(const std::vector<metatrain::MetricRow>& rows) {
  std::ostringstream out;
  metatrain::write_metrics_csv(out, rows);
  return out.str();
}

int cmd_gen_data(const GenDataArgs& a) {
  auto data = pongsim::generate_dataset(a.episodes, a.steps, a.seed);
  pongsim::save_dataset(a.out, data);
  spdlog::info("wrote {} episodes to {} ({} bytes)", data.size(), a.out, pongsim::dataset_file_size(data));
  return kOk;
}

int cmd_transform(const TransformArgs& a) {
  auto kind = transforms::parse_kind(a.kind);
  if (!kind) throw ConfigError("unknown transform '" + a.kind + "'");
  pongsim::save_dataset(a.out, transforms::transform_dataset(*kind, pongsim::load_dataset(a.in)));
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  const auto config = metatrain::load_config(a.config);
  if (!fs::exists(config.dataset)) throw DataError("dataset not found: " + config.dataset);
  const auto dataset = pongsim::load_dataset(config.dataset);

  std::unique_ptr<metatrain::TrainState> state;
  if (a.resume.empty()) {
    state = std::make_unique<metatrain::TrainState>(config);
  } else {
    state = cli::load_state(a.resume);
    auto expected = config;
    expected.schedule.cycles = state->config.schedule.cycles;
    if (!(expected == state->config)) {
      throw ConfigError("config " + a.config + " differs from the checkpoint's beyond schedule.cycles");
    }
    state->config.schedule.cycles = config.schedule.cycles;
    spdlog::info("resuming at cycle {} iteration {}", state->cycle, state->iteration);
  }

  const fs::path out_dir(a.out);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + a.out);
  write_text_atomically(out_dir / "config.yaml", metatrain::to_yaml(state->config));

  auto hook = [&](const metatrain::TrainState& s) {
    cli::save_state(out_dir / "checkpoint.mwc", s);
    write_text_atomically(out_dir / "metrics.csv", metrics_text(s.history));
  };
  try {
    metatrain::train(*state, dataset, hook);
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    const auto flush = out_dir / "checkpoint.flush.mwc";
    try {
      cli::save_state(flush, *state);
      spdlog::error("state flushed to {}", flush.string());
    } catch (const std::exception& again) {
      spdlog::error("final flush failed: {}", again.what());
    }
    throw;
  } catch (const NumericalError&) {
    write_text_atomically(out_dir / "metrics.diverged.csv", metrics_text(state->history));
    spdlog::error("training diverged; last good checkpoint left at {}", (out_dir / "checkpoint.mwc").string());
    throw;
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  auto state = cli::load_state(a.ckpt);
  const auto& cfg = state->config;
  const auto set = eval::make_eval_set(cfg.envs.variant, a.pairs, cfg.batch.sequence_length, a.seed.value_or(cfg.seeds.eval));
  auto m = eval::evaluate_pair(state->vision_o, state->vision_i, state->memory, set);
  if (a.same_env) {
    const auto fo = eval::flatten_frames(set.o);
    const auto fi = eval::flatten_frames(set.i);
    m.o.L_t = eval::transformation_loss(state->vision_o, state->vision_o, std::span<const pongsim::Frame>(fo), fo);
    m.i.L_t = eval::transformation_loss(state->vision_i, state->vision_i, std::span<const pongsim::Frame>(fi), fi);
    m.o.L_pt = eval::predicted_transformation_loss(state->vision_o, state->vision_o, state->memory, std::span(set.o),
                                                   std::span(set.o));
    m.i.L_pt = eval::predicted_transformation_loss(state->vision_i, state->vision_i, state->memory, std::span(set.i),
                                                   std::span(set.i));
  }
  std::cout << "env,L_r,L_p,L_t,L_pt\n";
  std::cout << fmt::format("o,{:.9g},{:.9g},{:.9g},{:.9g}\n", m.o.L_r, m.o.L_p, m.o.L_t, m.o.L_pt);
  std::cout << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", state->variant_tag(), m.i.L_r, m.i.L_p, m.i.L_t,
                           m.i.L_pt);
  return kOk;
}

int cmd_analyze(const AnalyzeArgs& a) {
  auto state = cli::load_state(a.ckpt);
  const auto frames_o = eval::held_out_frames(a.frames, a.seed.value_or(state->config.seeds.eval));
  std::vector<pongsim::Frame> frames_i;
  for (const auto& f : frames_o) frames_i.push_back(transforms::apply(state->config.envs.variant, f));
  const auto report = eval::key_element_report(state->vision_o, state->vision_i, std::span<const pongsim::Frame>(frames_o),
                                               std::span<const pongsim::Frame>(frames_i));
  if (a.out.empty()) {
    eval::write_report_csv(std::cout, report);
  } else {
    std::ofstream out(a.out);
    if (!out) throw DataError("cannot write " + a.out);
    eval::write_report_csv(out, report);
  }
  std::cerr << eval::summary_line(report) << '\n';
  return kOk;
}

int cmd_render(const RenderArgs& a) {
  std::vector<std::unique_ptr<metatrain::TrainState>> states;
  for (const auto& path : a.ckpts) states.push_back(cli::load_state(path));
  std::vector<eval::GridColumn> columns;
  std::set<transforms::TransformKind> seen;
  for (auto& s : states) {
    const auto kind = s->config.envs.variant;
    if (kind == transforms::TransformKind::Identity) throw ConfigError("render needs checkpoints of variant environments");
    if (!seen.insert(kind).second) throw ConfigError("more than one checkpoint for variant " + std::string(transforms::name(kind)));
    columns.push_back({kind, &s->vision_o, &s->vision_i});
  }
  const auto window = eval::make_eval_set(transforms::TransformKind::Identity, 1, a.steps,
                                          a.seed.value_or(states[0]->config.seeds.eval));
  const auto files = eval::cross_decode_grid(columns, window.o[0].frames, a.out);
  spdlog::info("wrote {} images to {}", files.size(), a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("metaworld"));

  CLI::App app{"Shared-dynamics world models on Pong variants"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate an MWD1 episode dataset");
  gen_cmd->add_option("--episodes", gen.episodes)->capture_default_str();
  gen_cmd->add_option("--steps", gen.steps)->capture_default_str()->check(CLI::Range(2, 1 << 20));
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out)->required();

  TransformArgs tr;
  auto* tr_cmd = app.add_subcommand("transform", "Apply a frame transform to every episode of a dataset");
  tr_cmd->add_option("--in", tr.in)->required();
  tr_cmd->add_option("--kind", tr.kind, "identity, transpose, hswap, invert, mirror or vswap")->required();
  tr_cmd->add_option("--out", tr.out)->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a vision pair and shared memory model");
  train_cmd->add_option("--config", train.config)->required();
  train_cmd->add_option("--out", train.out)->required();
  train_cmd->add_option("--resume", train.resume, "checkpoint to continue from");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Held-out L_r, L_p, L_t and L_pt for a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt)->required();
  eval_cmd->add_option("--pairs", ev.pairs)->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed, "defaults to the checkpoint's eval seed");
  eval_cmd->add_flag("--same-env", ev.same_env, "decode with the encoding environment's own decoder");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Per-dimension latent statistics and key elements");
  analyze_cmd->add_option("--ckpt", an.ckpt)->required();
  analyze_cmd->add_option("--frames", an.frames)->capture_default_str()->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--seed", an.seed);
  analyze_cmd->add_option("--out", an.out, "CSV path (default stdout)");

  RenderArgs rd;
  auto* render_cmd = app.add_subcommand("render", "Cross-decode grid as PGM images");
  render_cmd->add_option("--ckpt", rd.ckpts, "one checkpoint per variant")->required();
  render_cmd->add_option("--out", rd.out)->required();
  render_cmd->add_option("--steps", rd.steps)->capture_default_str()->check(CLI::PositiveNumber);
  render_cmd->add_option("--seed", rd.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*tr_cmd) return cmd_transform(tr);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(ev);
    if (*analyze_cmd) return cmd_analyze(an);
    if (*render_cmd) return cmd_render(rd);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return kDivergence;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kData;
  }
  return kUsage;
}
