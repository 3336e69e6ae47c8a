#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metaworld/cli/checkpoint.hpp"
#include "metaworld/errors.hpp"
#include "metaworld/pongsim/dataset.hpp"

namespace fs = std::filesystem;
using namespace metaworld;

#ifndef METAWORLD_CLI
#error "METAWORLD_CLI must point at the metaworld executable"
#endif

namespace {

const fs::path kWork = fs::temp_directory_path() / "metaworld_cli_test";

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const std::string& args) {
  const auto out = kWork / "stdout.txt";
  const auto err = kWork / "stderr.txt";
  const std::string cmd = std::string(METAWORLD_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

metatrain::TrainConfig tiny_config(const fs::path& dataset) {
  metatrain::TrainConfig c;
  c.dataset = dataset.string();
  c.batch.size = 2;
  c.batch.sequence_length = 4;
  c.schedule.cycles = 2;
  c.schedule.eval_every = 1;
  c.schedule.checkpoint_every = 1;
  c.eval.pairs = 2;
  return c;
}

void write_file(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::vector<float> flat_params(metatrain::TrainState& s) {
  std::vector<float> out;
  for (auto* p : s.parameters()) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    pongsim::save_dataset(kWork / "tiny.mwd", pongsim::generate_dataset(4, 20, 3));
  }
};

}  // namespace

TEST_F(CliTest, CheckpointBytesSurviveRoundTrip) {
  metatrain::TrainState state(tiny_config(kWork / "tiny.mwd"));
  train(state, pongsim::load_dataset(kWork / "tiny.mwd"));
  cli::save_state(kWork / "a.mwc", state);
  auto loaded = cli::load_state(kWork / "a.mwc");
  cli::save_state(kWork / "b.mwc", *loaded);
  EXPECT_EQ(slurp(kWork / "a.mwc"), slurp(kWork / "b.mwc"));
  EXPECT_EQ(loaded->history, state.history);
  EXPECT_EQ(loaded->cycle, 2u);
  EXPECT_EQ(loaded->iteration, 60u);
  EXPECT_EQ(loaded->adam_memory.step_count(), 40u);
  EXPECT_EQ(loaded->adam_o.step_count(), 60u);
}

TEST_F(CliTest, CheckpointRejectsVersionAndTruncation) {
  cli::Checkpoint ckpt;
  ckpt.config_text = "{}";
  ckpt.blocks.push_back({"w", {2, 3}, {1, 2, 3, 4, 5, 6}});
  std::stringstream ss;
  cli::write_checkpoint(ss, ckpt);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 + 2 + 1 + 1 + 8 + 24);

  std::stringstream back(bytes);
  auto read = cli::read_checkpoint(back);
  ASSERT_EQ(read.blocks.size(), 1u);
  EXPECT_EQ(read.blocks[0], ckpt.blocks[0]);

  auto bumped = bytes;
  bumped[4] = 2;
  std::stringstream bad_version(bumped);
  try {
    cli::read_checkpoint(bad_version);
    FAIL() << "version 2 accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  try {
    cli::read_checkpoint(truncated);
    FAIL() << "truncated checkpoint accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("byte " + std::to_string(bytes.size() - 3)), std::string::npos) << e.what();
  }

  std::stringstream garbage("MWD1xxxxxxxx");
  EXPECT_THROW(cli::read_checkpoint(garbage), DataError);
}

TEST_F(CliTest, RestoreRejectsMissingOrForeignBlocks) {
  metatrain::TrainState state(tiny_config(kWork / "tiny.mwd"));
  auto ckpt = cli::capture(state);
  auto missing = ckpt;
  missing.blocks.erase(missing.blocks.begin());
  EXPECT_THROW(cli::restore(missing), DataError);
  auto extra = ckpt;
  extra.blocks.push_back({"stray", {1}, {0}});
  EXPECT_THROW(cli::restore(extra), DataError);
  auto reshaped = ckpt;
  reshaped.blocks[0].shape = {reshaped.blocks[0].data.size()};
  EXPECT_THROW(cli::restore(reshaped), DataError);
}

TEST_F(CliTest, ResumedTrainingMatchesUninterrupted) {
  const auto data = pongsim::load_dataset(kWork / "tiny.mwd");
  auto cfg = tiny_config(kWork / "tiny.mwd");
  metatrain::TrainState straight(cfg);
  train(straight, data);

  cfg.schedule.cycles = 1;
  metatrain::TrainState first(cfg);
  train(first, data);
  std::stringstream ss;
  cli::write_checkpoint(ss, cli::capture(first));
  auto resumed = cli::restore(cli::read_checkpoint(ss));
  resumed->config.schedule.cycles = 2;
  train(*resumed, data);

  EXPECT_EQ(resumed->history, straight.history);
  EXPECT_EQ(flat_params(*resumed), flat_params(straight));
}

TEST_F(CliTest, GenDataIsDeterministicWithExpectedSize) {
  ASSERT_EQ(run("gen-data --episodes 200 --steps 200 --seed 5 --out " + (kWork / "g1.mwd").string()).code, 0);
  ASSERT_EQ(run("gen-data --episodes 200 --steps 200 --seed 5 --out " + (kWork / "g2.mwd").string()).code, 0);
  const auto size = fs::file_size(kWork / "g1.mwd");
  EXPECT_EQ(size, 8u + 200u * (4 + 8 + 199 + 200 * 512));
  const double approx = 200.0 * (8 + 8 + 199 + 200 * 512);
  EXPECT_LT(std::abs(static_cast<double>(size) - approx) / approx, 0.01);
  EXPECT_EQ(slurp(kWork / "g1.mwd"), slurp(kWork / "g2.mwd"));

  ASSERT_EQ(run("transform --kind mirror --in " + (kWork / "g1.mwd").string() + " --out " +
                (kWork / "g1m.mwd").string())
                .code,
            0);
  const auto a = pongsim::load_dataset(kWork / "g1.mwd");
  const auto b = pongsim::load_dataset(kWork / "g1m.mwd");
  EXPECT_EQ(b[7].frames[3], transforms::apply(transforms::TransformKind::Mirror, a[7].frames[3]));
  EXPECT_EQ(run("transform --kind sideways --in " + (kWork / "g1.mwd").string() + " --out x").code, 1);
}

TEST_F(CliTest, TrainErrorsUseDocumentedExitCodes) {
  write_file(kWork / "missing.yaml", "dataset: " + (kWork / "nope.mwd").string() + "\n");
  auto r = run("train --config " + (kWork / "missing.yaml").string() + " --out " + (kWork / "m").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.mwd"), std::string::npos) << r.err;

  write_file(kWork / "typo.yaml", "loss:\n  etta: 2\n");
  r = run("train --config " + (kWork / "typo.yaml").string() + " --out " + (kWork / "t").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("loss.etta"), std::string::npos) << r.err;

  EXPECT_EQ(run("train --out x").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST_F(CliTest, TrainEvalAnalyzeRenderPipeline) {
  const auto cfg_path = kWork / "tiny.yaml";
  write_file(cfg_path, metatrain::to_yaml(tiny_config(kWork / "tiny.mwd")));
  const auto out = kWork / "run";
  auto r = run("train --config " + cfg_path.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.yaml", "checkpoint.mwc", "metrics.csv"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(slurp(out / "config.yaml"), slurp(cfg_path));
  std::istringstream metrics(slurp(out / "metrics.csv"));
  const auto rows = metatrain::read_metrics_csv(metrics);
  EXPECT_EQ(rows.size(), 2u * 60 + 2u * 2);

  const auto ckpt = (out / "checkpoint.mwc").string();
  r = run("eval --ckpt " + ckpt + " --pairs 3 --same-env");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "env,L_r,L_p,L_t,L_pt");
  for (int k = 0; k < 2; ++k) {
    ASSERT_TRUE(std::getline(lines, line));
    std::vector<std::string> cells;
    std::stringstream cs(line);
    for (std::string c; std::getline(cs, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 5u);
    EXPECT_EQ(cells[0], k == 0 ? "o" : "m");
    EXPECT_EQ(cells[1], cells[3]);
    EXPECT_EQ(cells[2], cells[4]);
  }

  r = run("analyze --ckpt " + ckpt + " --frames 64 --out " + (kWork / "report.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream report(slurp(kWork / "report.csv"));
  std::size_t n = 0;
  while (std::getline(report, line)) ++n;
  EXPECT_EQ(n, 33u);
  EXPECT_FALSE(r.err.empty());

  const auto images = kWork / "images";
  r = run("render --ckpt " + ckpt + " --out " + images.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(images)) pgm += e.path().extension() == ".pgm";
  EXPECT_EQ(pgm, 16u);
  EXPECT_EQ(run("render --ckpt " + ckpt + " --ckpt " + ckpt + " --out " + images.string()).code, 1);

  const std::string bytes = slurp(out / "checkpoint.mwc");
  write_file(kWork / "cut.mwc", bytes.substr(0, bytes.size() / 2));
  r = run("eval --ckpt " + (kWork / "cut.mwc").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("byte"), std::string::npos) << r.err;
}

TEST_F(CliTest, CliResumeReproducesStraightRun) {
  auto cfg = tiny_config(kWork / "tiny.mwd");
  write_file(kWork / "two.yaml", metatrain::to_yaml(cfg));
  ASSERT_EQ(run("train --config " + (kWork / "two.yaml").string() + " --out " + (kWork / "straight").string()).code, 0);

  cfg.schedule.cycles = 1;
  write_file(kWork / "one.yaml", metatrain::to_yaml(cfg));
  ASSERT_EQ(run("train --config " + (kWork / "one.yaml").string() + " --out " + (kWork / "part").string()).code, 0);
  auto r = run("train --config " + (kWork / "two.yaml").string() + " --out " + (kWork / "part").string() +
               " --resume " + (kWork / "part" / "checkpoint.mwc").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(kWork / "part" / "metrics.csv"), slurp(kWork / "straight" / "metrics.csv"));
  EXPECT_EQ(slurp(kWork / "part" / "checkpoint.mwc"), slurp(kWork / "straight" / "checkpoint.mwc"));

  cfg.schedule.cycles = 3;
  cfg.loss.eta = 2;
  write_file(kWork / "changed.yaml", metatrain::to_yaml(cfg));
  r = run("train --config " + (kWork / "changed.yaml").string() + " --out " + (kWork / "part").string() +
          " --resume " + (kWork / "part" / "checkpoint.mwc").string());
  EXPECT_EQ(r.code, 1);
}
