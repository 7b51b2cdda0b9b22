#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nacl/evaluation.hpp"
#include "nacl/training.hpp"

namespace nacl {

// Blob dataset recipe. `points` rows are taken from ceil(points / classes)
// per class, so the last classes may hold one point fewer.
struct DatasetSpec {
  std::size_t classes = 3;
  std::size_t dim = 8;
  std::size_t points = 512;
  double spread = 0.15;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;

  void validate(const std::string& field) const;
  Dataset generate() const;
  std::pair<Dataset, Dataset> split() const;
  bool operator==(const DatasetSpec&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct EvalSpec {
  // The first epsilon is the headline one.
  std::vector<double> epsilons = {0.05};
  std::vector<AttackKind> attacks = {AttackKind::kFgsm, AttackKind::kPgd};
  // Schedule for pgd; epsilon is filled in per entry of `epsilons`.
  double pgd_step_size = 1e-2;
  std::size_t pgd_iterations = 10;
  std::size_t pgd_restarts = 2;
  ProbeConfig probe;
  std::optional<DatasetSpec> transfer = DatasetSpec{3, 8, 512, 0.15, 1, 0.8};

  void validate() const;
  AttackConfig pgd_config(double epsilon, std::uint64_t seed) const;
  bool has(AttackKind k) const;
  bool operator==(const EvalSpec&) const = default;
};

void to_json(nlohmann::json& j, const EvalSpec& s);
void from_json(const nlohmann::json& j, EvalSpec& s);

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  EncoderConfig encoder;
  // train.loss is resolved from `preset` or the explicit loss section.
  TrainConfig train;
  std::optional<std::string> preset;
  EvalSpec eval;
  std::filesystem::path output_dir = "runs";
  // Relative paths resolve against output_dir.
  std::filesystem::path ledger = "ledger.csv";

  void validate() const;
  // Training and encoder-init seed; datasets keep their own seeds.
  ExperimentConfig with_seed(std::uint64_t seed) const;
  // Preset name, or "custom" for an explicit loss.
  std::string method() const;
  std::filesystem::path ledger_path() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
// Field-level ConfigError on unknown keys, wrong types, bad values, or a
// missing dataset section.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
// YAML or JSON, chosen by extension (.json) or content.
nlohmann::json read_config_document(const std::filesystem::path& path);
nlohmann::json parse_yaml(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

struct RobustPoint {
  double epsilon = 0.0;
  std::optional<double> fgsm_acc;
  std::optional<double> pgd_acc;
};

struct ExperimentResult {
  std::string name;
  std::string method;
  double standard_acc = 0.0;
  std::optional<double> fgsm_acc;
  std::optional<double> pgd_acc;
  std::optional<double> transfer_acc;
  std::optional<double> transfer_fgsm_acc;
  std::vector<RobustPoint> robust;
  double final_loss = 0.0;
  std::size_t attack_count = 0;
  double wall_seconds = 0.0;
  nlohmann::json config;
  nlohmann::json seeds;
};

void to_json(nlohmann::json& j, const ExperimentResult& r);

// Everything a run produced, kept in memory for audits.
struct ExperimentRun {
  ExperimentResult result;
  Encoder encoder;
  LinearProbe probe;
  TrainHistory history;
  Dataset train;
  Dataset test;
};

ExperimentResult evaluate_encoder(const ExperimentConfig& config, const Encoder& enc,
                                  LinearProbe* probe_out = nullptr);
ExperimentRun run_experiment(const ExperimentConfig& config);

// Directory for one run: <output_dir>/<name>-seed<k>.
std::filesystem::path run_directory(const ExperimentConfig& config);
// Writes config.json, result.json, history.csv and encoder.ckpt into the run
// directory and appends one ledger row.
ExperimentResult run_and_record(const ExperimentConfig& config);

// Append-only CSV of run outcomes.
struct LedgerRow {
  std::string run;
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string message;
  double standard_acc = 0.0;
  std::optional<double> fgsm_acc;
  std::optional<double> pgd_acc;
  std::optional<double> transfer_acc;
  std::optional<double> transfer_fgsm_acc;
  double epsilon = 0.0;
  double final_loss = 0.0;
  std::size_t attack_count = 0;
};

const std::vector<std::string>& ledger_header();
LedgerRow ledger_row(const ExperimentConfig& config, const ExperimentResult& r);
void append_ledger(const std::filesystem::path& path, const LedgerRow& row);
std::vector<LedgerRow> read_ledger(const std::filesystem::path& path);

struct SweepGrid {
  std::vector<std::string> presets;
  std::vector<std::size_t> positives;
  std::vector<double> lambdas;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t jobs = 1;

  void validate() const;
};

void from_json(const nlohmann::json& j, SweepGrid& g);
void to_json(nlohmann::json& j, const SweepGrid& g);

struct SweepCell {
  std::string label;
  ExperimentConfig config;
};

std::vector<SweepCell> expand_grid(const ExperimentConfig& base, const SweepGrid& grid);

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct SummaryRow {
  std::string method;
  std::size_t runs = 0;
  std::size_t failures = 0;
  // Only one successful seed: std is reported as 0.
  bool single_seed = false;
  Stat standard_acc, fgsm_acc, pgd_acc, transfer_acc, transfer_fgsm_acc;
};

// Groups ok rows by method. Sample standard deviation.
std::vector<SummaryRow> summarize(const std::vector<LedgerRow>& rows);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);

struct SweepReport {
  std::vector<LedgerRow> rows;
  std::vector<SummaryRow> summary;
};

// Runs every (cell, seed). A failing run is recorded as a failed ledger row
// and the sweep moves on. Writes summary.csv next to the ledger.
SweepReport run_sweep(const ExperimentConfig& base, const SweepGrid& grid);

const std::vector<std::string>& frontier_header();
// method,std_acc,robust_acc,transfer_std,transfer_robust: one row per ok
// ledger row, then one "<method>:mean" row per method.
void export_frontier(const std::filesystem::path& ledger, const std::filesystem::path& out);

}  // namespace nacl
