#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "nacl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = nacl::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nacl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "config.yaml";
  std::ofstream(p) << body;
  return p;
}

const char* kTiny =
    "name: tiny\n"
    "preset: simclr\n"
    "dataset: {points: 90, dim: 4, seed: 3}\n"
    "encoder: {hidden_dims: [12], embed_dim: 4}\n"
    "train: {epochs: 3, batch_size: 16, learning_rate: 0.01}\n"
    "eval:\n"
    "  transfer: {points: 60, dim: 4, seed: 9}\n"
    "  probe: {epochs: 50}\n";

}  // namespace

TEST(Cli, PresetsListsEveryRow) {
  const Outcome o = call({"presets"});
  EXPECT_EQ(o.code, 0);
  for (const auto& name : nacl::preset_names()) EXPECT_NE(o.out.find(name), std::string::npos);
}

TEST(Cli, NoVerbIsAUsageError) { EXPECT_EQ(call({}).code, 2); }

TEST(Cli, HelpExitsCleanly) { EXPECT_EQ(call({"--help"}).code, 0); }

TEST(Cli, RunWritesResultsWithOverrides) {
  const auto dir = scratch("run");
  const auto cfg = write_config(dir, kTiny);
  const Outcome o = call({"run", cfg.string(), "--seed", "5", "--out", (dir / "o").string(),
                          "--preset", "adv"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto result = nlohmann::json::parse(std::ifstream(dir / "o" / "tiny-seed5" / "result.json"));
  EXPECT_EQ(result["method"], "adv");
  EXPECT_EQ(result["seeds"]["train"], 5);
  EXPECT_GT(result["attack_count"].get<int>(), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "ledger.csv"));
}

TEST(Cli, ConfigErrorsExitWithTwoAndNameTheField) {
  const auto dir = scratch("bad");
  const auto cfg = write_config(dir, "preset: simclr\ntrain: {epochs: 2}\n");
  const Outcome o = call({"run", cfg.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("dataset"), std::string::npos) << o.err;
  EXPECT_EQ(call({"run", (dir / "missing.yaml").string()}).code, 2);
}

TEST(Cli, NumericalFailureExitsWithThree) {
  const auto dir = scratch("nan");
  std::string body = kTiny;
  body.replace(body.find("learning_rate: 0.01"), 19, "learning_rate: 1e300");
  const auto cfg = write_config(dir, body);
  const Outcome o = call({"run", cfg.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(o.code, 3) << o.err;
  EXPECT_NE(o.err.find("epoch"), std::string::npos) << o.err;
  const auto rows = nacl::read_ledger(dir / "o" / "ledger.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].status, "failed");
}

TEST(Cli, SweepEvalAndFrontier) {
  const auto dir = scratch("sweep");
  const auto cfg = write_config(dir, std::string(kTiny) + "sweep: {positives: [1, 2], seeds: [0, 1]}\n");
  const auto out = (dir / "o").string();
  const Outcome s = call({"sweep", cfg.string(), "--out", out});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(nacl::read_ledger(dir / "o" / "ledger.csv").size(), 4u);

  const Outcome f = call({"export-frontier", (dir / "o" / "ledger.csv").string()});
  ASSERT_EQ(f.code, 0) << f.err;
  std::ifstream frontier(dir / "o" / "frontier.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(frontier, line);) ++lines;
  EXPECT_EQ(lines, 1u + 4u + 2u);

  const auto ckpt = dir / "o" / "tiny-simclr_M_1_-seed0" / "encoder.ckpt";
  const Outcome e = call({"eval", cfg.string(), "--checkpoint", ckpt.string(), "--out",
                          (dir / "eval.json").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto again = nlohmann::json::parse(std::ifstream(dir / "eval.json"));
  const auto original =
      nlohmann::json::parse(std::ifstream(dir / "o" / "tiny-simclr_M_1_-seed0" / "result.json"));
  EXPECT_EQ(again["standard_acc"], original["standard_acc"]);
  EXPECT_EQ(again["fgsm_acc"], original["fgsm_acc"]);
}

TEST(Cli, EvalRejectsAMismatchedCheckpoint) {
  const auto dir = scratch("mismatch");
  const auto cfg = write_config(dir, kTiny);
  nacl::EncoderConfig e;
  e.input_dim = 7;
  e.hidden_dims = {4};
  e.embed_dim = 2;
  nacl::save_checkpoint(nacl::Encoder::init(e), dir / "wrong.ckpt");
  EXPECT_EQ(call({"eval", cfg.string(), "--checkpoint", (dir / "wrong.ckpt").string()}).code, 2);
}
