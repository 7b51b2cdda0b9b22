#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nacl/error.hpp"
#include "nacl/experiment.hpp"

using namespace nacl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nacl_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough to train in well under a second.
json tiny_doc(const fs::path& out) {
  return json{{"name", "tiny"},
              {"preset", "simclr"},
              {"dataset", {{"points", 90}, {"dim", 4}, {"seed", 3}}},
              {"encoder", {{"hidden_dims", {12}}, {"embed_dim", 4}}},
              {"train", {{"epochs", 3}, {"batch_size", 16}, {"learning_rate", 0.01}}},
              {"eval",
               {{"transfer", {{"points", 60}, {"dim", 4}, {"seed", 9}}},
                {"probe", {{"epochs", 50}}}}},
              {"output", {{"dir", out.string()}}}};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string config_error_field(const json& doc) {
  try {
    experiment_from_json(doc);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

LedgerRow synthetic_row(const std::string& method, std::uint64_t seed, double base) {
  LedgerRow r;
  r.run = method + "-seed" + std::to_string(seed);
  r.method = method;
  r.seed = seed;
  r.standard_acc = base + 0.01 * static_cast<double>(seed);
  r.fgsm_acc = base - 0.1 + 0.02 * static_cast<double>(seed);
  r.pgd_acc = base - 0.2;
  r.transfer_acc = base - 0.05;
  r.transfer_fgsm_acc = base - 0.15 + 0.005 * static_cast<double>(seed);
  r.epsilon = 0.05;
  return r;
}

}  // namespace

TEST(DatasetSpec, ExactPointCountWithBalancedClasses) {
  const Dataset ds = DatasetSpec{}.generate();
  EXPECT_EQ(ds.size(), 512u);
  EXPECT_EQ(ds.dim(), 8u);
  std::map<std::size_t, std::size_t> counts;
  for (auto l : ds.labels) ++counts[l];
  EXPECT_EQ(counts[0], 171u);
  EXPECT_EQ(counts[1], 171u);
  EXPECT_EQ(counts[2], 170u);
  EXPECT_EQ(ds.features.values(), DatasetSpec{}.generate().features.values());
}

TEST(DatasetSpec, SplitFollowsTheFraction) {
  const auto [train, test] = DatasetSpec{}.split();
  EXPECT_EQ(train.size(), 410u);
  EXPECT_EQ(test.size(), 102u);
}

TEST(Yaml, ScalarsAreTyped) {
  const json j = parse_yaml(
      "a: 3\nb: -2\nc: 0.5\nd: 1e-3\ne: true\nf: ~\ng: \"12\"\nh: word\ni: [1, 2.5]\n");
  EXPECT_TRUE(j["a"].is_number_unsigned());
  EXPECT_EQ(j["a"].get<int>(), 3);
  EXPECT_TRUE(j["b"].is_number_integer());
  EXPECT_EQ(j["c"].get<double>(), 0.5);
  EXPECT_EQ(j["d"].get<double>(), 1e-3);
  EXPECT_EQ(j["e"].get<bool>(), true);
  EXPECT_TRUE(j["f"].is_null());
  EXPECT_TRUE(j["g"].is_string());
  EXPECT_EQ(j["h"], "word");
  EXPECT_EQ(j["i"][1].get<double>(), 2.5);
}

TEST(Yaml, SyntaxErrorsAreConfigErrors) {
  EXPECT_THROW(parse_yaml("a: [1, 2\nb: 3\n"), ConfigError);
}

TEST(Config, YamlAndJsonAgree) {
  const auto dir = scratch_dir("formats");
  const json doc = tiny_doc(dir);
  std::ofstream(dir / "c.json") << doc.dump(2);
  std::ofstream(dir / "c.yaml") << "name: tiny\npreset: simclr\n"
                                   "dataset: {points: 90, dim: 4, seed: 3}\n"
                                   "encoder:\n  hidden_dims: [12]\n  embed_dim: 4\n"
                                   "train: {epochs: 3, batch_size: 16, learning_rate: 0.01}\n"
                                   "eval:\n  transfer: {points: 60, dim: 4, seed: 9}\n"
                                   "  probe: {epochs: 50}\n"
                                << "output: {dir: " << dir.string() << "}\n";
  EXPECT_EQ(to_json(load_experiment(dir / "c.json")), to_json(load_experiment(dir / "c.yaml")));
}

TEST(Config, RoundTripThroughJson) {
  const ExperimentConfig c = experiment_from_json(tiny_doc("out"));
  EXPECT_EQ(to_json(experiment_from_json(to_json(c))), to_json(c));
}

TEST(Config, EncoderInputDimFollowsTheDataset) {
  const ExperimentConfig c = experiment_from_json(tiny_doc("out"));
  EXPECT_EQ(c.encoder.input_dim, 4u);
}

TEST(Config, MissingDatasetNamesTheField) {
  json doc = tiny_doc("out");
  doc.erase("dataset");
  EXPECT_EQ(config_error_field(doc), "dataset");
}

TEST(Config, FieldLevelErrors) {
  json doc = tiny_doc("out");
  doc["dataset"]["dims"] = 3;
  EXPECT_EQ(config_error_field(doc), "dataset.dims");

  doc = tiny_doc("out");
  doc["train"]["epochs"] = "many";
  EXPECT_EQ(config_error_field(doc), "train.epochs");

  doc = tiny_doc("out");
  doc["eval"]["epsilons"] = {0.05, 0.0};
  EXPECT_EQ(config_error_field(doc), "eval.epsilons");

  doc = tiny_doc("out");
  doc["preset"] = "simclr_v2";
  EXPECT_EQ(config_error_field(doc), "preset");

  doc = tiny_doc("out");
  doc["loss"] = {{"g1", {{"kind", "g1"}, {"tau_plus", -0.5}}}};
  EXPECT_EQ(config_error_field(doc), "loss.g1.tau_plus");

  doc = tiny_doc("out");
  doc["encoder"]["input_dim"] = 5;
  EXPECT_EQ(config_error_field(doc), "encoder.input_dim");

  doc = tiny_doc("out");
  doc["train"]["batch_size"] = 500;
  EXPECT_EQ(config_error_field(doc), "train.batch_size");

  doc = tiny_doc("out");
  doc["train"]["loss"] = json::object();
  EXPECT_EQ(config_error_field(doc), "train.loss");

  doc = tiny_doc("out");
  doc.erase("preset");
  EXPECT_EQ(config_error_field(doc), "preset");

  doc = tiny_doc("out");
  doc["colour"] = "blue";
  EXPECT_EQ(config_error_field(doc), "colour");
}

TEST(Config, ExplicitLossLayersOverThePreset) {
  json doc = tiny_doc("out");
  doc["preset"] = "intnacl_fig1";
  doc["loss"] = {{"positives", 3}, {"attack", {{"epsilon", 0.05}, {"step_size", 0.05}}}};
  const ExperimentConfig c = experiment_from_json(doc);
  EXPECT_EQ(c.train.loss.family, LossFamily::kMixNca);
  EXPECT_EQ(c.train.loss.positives, 3u);
  EXPECT_EQ(c.train.loss.attack.epsilon, 0.05);
  EXPECT_TRUE(c.train.loss.attack.is_fgsm());
  EXPECT_EQ(c.method(), "intnacl_fig1");
}

TEST(Config, TransferCanBeSwitchedOff) {
  json doc = tiny_doc("out");
  doc["eval"]["transfer"] = nullptr;
  EXPECT_FALSE(experiment_from_json(doc).eval.transfer.has_value());
}

TEST(Run, DefaultBlobsPopulateAllFiveAccuracies) {
  json doc = {{"preset", "simclr"}, {"dataset", json::object()}, {"train", {{"epochs", 2}}}};
  const ExperimentRun run = run_experiment(experiment_from_json(doc));
  const auto& r = run.result;
  for (double v : {r.standard_acc, r.fgsm_acc.value(), r.pgd_acc.value(), r.transfer_acc.value(),
                   r.transfer_fgsm_acc.value()}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_LE(*r.pgd_acc, *r.fgsm_acc);
  EXPECT_EQ(r.seeds["train"], 0);
  EXPECT_EQ(r.config["preset"], "simclr");
}

TEST(Run, RepeatedRunsGiveIdenticalResultsApartFromWallClock) {
  const ExperimentConfig c = experiment_from_json(tiny_doc("out")).with_seed(4);
  json a = run_experiment(c).result;
  json b = run_experiment(c).result;
  a.erase("wall_seconds");
  b.erase("wall_seconds");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Run, RecordWritesTheRunDirectoryAndAppendsTheLedger) {
  const auto dir = scratch_dir("record");
  const ExperimentConfig c = experiment_from_json(tiny_doc(dir));
  const ExperimentResult r = run_and_record(c);
  const fs::path run = dir / "tiny-seed0";
  for (const char* f : {"config.json", "result.json", "history.csv", "encoder.ckpt"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  EXPECT_EQ(json::parse(read_file(run / "config.json")), to_json(c));
  EXPECT_EQ(json::parse(read_file(run / "result.json"))["standard_acc"], r.standard_acc);
  EXPECT_EQ(lines_of(run / "history.csv").size(), 4u);

  const std::string before = read_file(dir / "ledger.csv");
  run_and_record(c.with_seed(1));
  const std::string after = read_file(dir / "ledger.csv");
  EXPECT_EQ(after.substr(0, before.size()), before);
  const auto rows = read_ledger(dir / "ledger.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].standard_acc, r.standard_acc);
  EXPECT_EQ(rows[1].seed, 1u);
}

TEST(Run, EvaluatingTheCheckpointReproducesTheResult) {
  const auto dir = scratch_dir("reeval");
  const ExperimentConfig c = experiment_from_json(tiny_doc(dir));
  const ExperimentResult r = run_and_record(c);
  const Encoder enc = load_checkpoint(dir / "tiny-seed0" / "encoder.ckpt");
  const ExperimentResult again = evaluate_encoder(c, enc);
  EXPECT_EQ(again.standard_acc, r.standard_acc);
  EXPECT_EQ(again.fgsm_acc, r.fgsm_acc);
  EXPECT_EQ(again.pgd_acc, r.pgd_acc);
  EXPECT_EQ(again.transfer_fgsm_acc, r.transfer_fgsm_acc);
}

TEST(Ledger, ForeignHeaderIsNeverAppendedTo) {
  const auto dir = scratch_dir("foreign");
  std::ofstream(dir / "ledger.csv") << "a,b,c\n1,2,3\n";
  EXPECT_THROW(append_ledger(dir / "ledger.csv", synthetic_row("x", 0, 0.9)), Error);
  EXPECT_EQ(read_file(dir / "ledger.csv"), "a,b,c\n1,2,3\n");
}

TEST(Ledger, RoundTripsQuotedMessages) {
  const auto dir = scratch_dir("quoted");
  LedgerRow r = synthetic_row("m", 2, 0.8);
  r.status = "failed";
  r.message = "loss.lambda: must lie in (0, 1], got \"1.5\"";
  r.fgsm_acc.reset();
  append_ledger(dir / "ledger.csv", r);
  const auto rows = read_ledger(dir / "ledger.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].message, r.message);
  EXPECT_FALSE(rows[0].fgsm_acc.has_value());
  EXPECT_EQ(rows[0].transfer_fgsm_acc, r.transfer_fgsm_acc);
}

TEST(Sweep, GridCountsAndLabels) {
  const ExperimentConfig base = experiment_from_json(tiny_doc("out"));
  SweepGrid g;
  g.presets = {"simclr", "intnacl_fig1"};
  g.positives = {1, 2};
  g.alphas = {0.0, 1.0};
  const auto cells = expand_grid(base, g);
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells[0].label, "simclr[M=1,alpha=0]");
  EXPECT_EQ(cells[7].label, "intnacl_fig1[M=2,alpha=1]");
  EXPECT_EQ(cells[7].config.train.loss.family, LossFamily::kMixNca);
  EXPECT_EQ(cells[7].config.train.loss.positives, 2u);
  EXPECT_EQ(cells[6].config.train.loss.alpha, 0.0);
}

TEST(Sweep, TwoCellsTwoSeedsGiveFourRowsAndTwoSummaries) {
  const auto dir = scratch_dir("sweep");
  const ExperimentConfig base = experiment_from_json(tiny_doc(dir));
  SweepGrid g;
  g.positives = {1, 2};
  g.seeds = {0, 1};
  const SweepReport report = run_sweep(base, g);
  const auto rows = read_ledger(dir / "ledger.csv");
  ASSERT_EQ(rows.size(), 4u);
  ASSERT_EQ(report.summary.size(), 2u);
  EXPECT_EQ(lines_of(dir / "summary.csv").size(), 3u);
  // Cell means recomputed from the ledger rows.
  for (const auto& s : report.summary) {
    double total = 0.0, fg = 0.0;
    std::vector<double> st;
    for (const auto& r : rows) {
      if (r.method != s.method) continue;
      total += r.standard_acc;
      fg += *r.fgsm_acc;
      st.push_back(r.standard_acc);
    }
    ASSERT_EQ(st.size(), 2u);
    EXPECT_DOUBLE_EQ(s.standard_acc.mean, total / 2.0);
    EXPECT_DOUBLE_EQ(s.fgsm_acc.mean, fg / 2.0);
    EXPECT_NEAR(s.standard_acc.std, std::abs(st[0] - st[1]) / std::sqrt(2.0), 1e-15);
    EXPECT_FALSE(s.single_seed);
  }
  EXPECT_TRUE(fs::exists(dir / "tiny-simclr_M_2_-seed1" / "result.json"));
}

TEST(Sweep, SingleSeedCellReportsZeroStdWithFlag) {
  const auto s = summarize({synthetic_row("only", 0, 0.9)});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(s[0].single_seed);
  EXPECT_EQ(s[0].standard_acc.std, 0.0);
  EXPECT_EQ(s[0].standard_acc.mean, 0.9);
}

TEST(Sweep, FailingCellsAreRecordedAndTheSweepContinues) {
  const auto dir = scratch_dir("failing");
  const ExperimentConfig base = experiment_from_json(tiny_doc(dir));
  SweepGrid g;
  g.presets = {"intnacl_fig1"};
  g.positives = {2};
  g.lambdas = {0.5, 1.5};
  g.seeds = {0};
  const SweepReport report = run_sweep(base, g);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].status, "ok");
  EXPECT_EQ(report.rows[1].status, "failed");
  EXPECT_NE(report.rows[1].message.find("loss.lambda"), std::string::npos);
  EXPECT_EQ(report.summary[1].failures, 1u);
  EXPECT_EQ(report.summary[1].standard_acc.count, 0u);
}

TEST(Sweep, ParallelJobsMatchSequentialLedger) {
  const auto seq = scratch_dir("seq");
  const auto par = scratch_dir("par");
  SweepGrid g;
  g.positives = {1, 2};
  g.seeds = {0, 1};
  run_sweep(experiment_from_json(tiny_doc(seq)), g);
  g.jobs = 3;
  run_sweep(experiment_from_json(tiny_doc(par)), g);
  EXPECT_EQ(read_file(seq / "ledger.csv"), read_file(par / "ledger.csv"));
}

TEST(Frontier, PointRowsThenMeanRows) {
  const auto dir = scratch_dir("frontier");
  std::vector<LedgerRow> rows;
  for (const char* m : {"simclr", "intnacl_fig1"})
    for (std::uint64_t s = 0; s < 5; ++s) {
      rows.push_back(synthetic_row(m, s, std::string(m) == "simclr" ? 0.9 : 0.92));
      append_ledger(dir / "ledger.csv", rows.back());
    }
  LedgerRow broken = synthetic_row("simclr", 9, 0.0);
  broken.status = "failed";
  append_ledger(dir / "ledger.csv", broken);

  export_frontier(dir / "ledger.csv", dir / "frontier.csv");
  const auto lines = lines_of(dir / "frontier.csv");
  ASSERT_EQ(lines.size(), 1u + 10u + 2u);
  EXPECT_EQ(lines[0], "method,std_acc,robust_acc,transfer_std,transfer_robust");
  EXPECT_EQ(lines[11].rfind("simclr:mean,", 0), 0u);
  EXPECT_EQ(lines[12].rfind("intnacl_fig1:mean,", 0), 0u);

  // Means agree with the sweep summary of the same rows.
  const auto summary = summarize(rows);
  for (std::size_t k = 0; k < 2; ++k) {
    std::stringstream line(lines[11 + k]);
    std::vector<std::string> f;
    for (std::string cell; std::getline(line, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 5u);
    EXPECT_EQ(std::stod(f[1]), summary[k].standard_acc.mean);
    EXPECT_EQ(std::stod(f[2]), summary[k].fgsm_acc.mean);
    EXPECT_EQ(std::stod(f[4]), summary[k].transfer_fgsm_acc.mean);
  }
}

TEST(Frontier, EmptyLedgerIsAnError) {
  const auto dir = scratch_dir("empty_frontier");
  LedgerRow broken = synthetic_row("simclr", 0, 0.0);
  broken.status = "failed";
  append_ledger(dir / "ledger.csv", broken);
  EXPECT_THROW(export_frontier(dir / "ledger.csv", dir / "f.csv"), Error);
}
