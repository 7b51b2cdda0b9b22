#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include "nacl/error.hpp"
#include "nacl/experiment.hpp"

namespace nacl::cli {

namespace {

using nlohmann::json;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> preset;
  std::optional<std::size_t> epochs;
  std::optional<std::string> ledger;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Training and encoder-init seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--preset", o.preset, "Loss preset (see `presets`)");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--ledger", o.ledger, "Results ledger CSV");
}

ExperimentConfig load(const std::string& path, const Overrides& o, json* doc_out = nullptr) {
  json doc = read_config_document(path);
  if (!doc.is_object()) throw ConfigError("config", "top level must be a mapping");
  if (o.preset) doc["preset"] = *o.preset;
  if (o.epochs) doc["train"]["epochs"] = *o.epochs;
  if (o.out) doc["output"]["dir"] = *o.out;
  if (o.ledger) doc["output"]["ledger"] = *o.ledger;
  ExperimentConfig c = experiment_from_json(doc);
  if (o.seed) c = c.with_seed(*o.seed);
  if (doc_out) *doc_out = std::move(doc);
  return c;
}

void print_result(std::ostream& out, const ExperimentResult& r) {
  auto show = [&](const char* label, const std::optional<double>& v) {
    out << "  " << std::left << std::setw(18) << label;
    if (v) {
      out << std::fixed << std::setprecision(4) << *v << '\n';
    } else {
      out << "-\n";
    }
  };
  out << r.name << " (" << r.method << ")\n";
  show("standard_acc", r.standard_acc);
  show("fgsm_acc", r.fgsm_acc);
  show("pgd_acc", r.pgd_acc);
  show("transfer_acc", r.transfer_acc);
  show("transfer_fgsm_acc", r.transfer_fgsm_acc);
  out.unsetf(std::ios::floatfield);
}

int cmd_presets(std::ostream& out) {
  out << std::left << std::setw(18) << "preset" << std::setw(8) << "family" << std::setw(4)
      << "M" << std::setw(8) << "lambda" << std::setw(7) << "alpha" << std::setw(5) << "g1"
      << std::setw(5) << "g2"
      << "weighting\n";
  for (const auto& name : preset_names()) {
    const LossConfig c = preset(name);
    out << std::setw(18) << name << std::setw(8) << to_string(c.family) << std::setw(4)
        << c.positives << std::setw(8) << c.lambda << std::setw(7) << c.alpha << std::setw(5)
        << to_string(c.g1.kind) << std::setw(5) << to_string(c.g2.kind) << to_string(c.weighting)
        << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive loss laboratory: train, evaluate and sweep on synthetic data", "nacl"};
  app.require_subcommand(1);

  Overrides run_o, sweep_o, eval_o;
  std::string config_path, checkpoint, ledger_path, eval_out, frontier_out;
  std::vector<std::uint64_t> sweep_seeds;
  std::optional<std::size_t> jobs;

  auto* run_cmd = app.add_subcommand("run", "Train, evaluate, write the run directory and a ledger row");
  run_cmd->add_option("config", config_path, "Experiment config (YAML or JSON)")->required();
  add_override_flags(run_cmd, run_o);

  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over presets, M, lambda and alpha");
  sweep_cmd->add_option("config", config_path, "Experiment config with a sweep section")->required();
  add_override_flags(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--seeds", sweep_seeds, "Seeds per cell")->delimiter(',');
  sweep_cmd->add_option("--jobs", jobs, "Concurrent runs");

  auto* eval_cmd = app.add_subcommand("eval", "Re-evaluate a saved encoder checkpoint");
  eval_cmd->add_option("config", config_path, "Experiment config (YAML or JSON)")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
  eval_cmd->add_option("--seed", eval_o.seed, "Seed recorded for the attack restarts");
  eval_cmd->add_option("--preset", eval_o.preset, "Loss preset recorded in the result");
  eval_cmd->add_option("--out", eval_out, "Write the result JSON here");

  auto* frontier_cmd = app.add_subcommand("export-frontier", "Standard-vs-robust scatter data");
  frontier_cmd->add_option("ledger", ledger_path, "Results ledger CSV")->required();
  frontier_cmd->add_option("--out", frontier_out, "Output CSV (default frontier.csv beside the ledger)");

  auto* presets_cmd = app.add_subcommand("presets", "List the loss presets");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*presets_cmd) return cmd_presets(out);

    if (*run_cmd) {
      const ExperimentConfig c = load(config_path, run_o);
      const ExperimentResult r = run_and_record(c);
      print_result(out, r);
      out << "wrote " << run_directory(c).string() << "\n";
      return kExitOk;
    }

    if (*sweep_cmd) {
      json doc;
      const ExperimentConfig c = load(config_path, sweep_o, &doc);
      SweepGrid grid;
      if (doc.contains("sweep")) doc["sweep"].get_to(grid);
      if (!sweep_seeds.empty()) grid.seeds = sweep_seeds;
      if (jobs) grid.jobs = *jobs;
      const SweepReport report = run_sweep(c, grid);
      std::size_t failed = 0;
      for (const auto& row : report.rows) failed += row.status != "ok";
      for (const auto& s : report.summary) {
        out << s.method << ": standard " << s.standard_acc.mean << " +- " << s.standard_acc.std
            << ", fgsm " << s.fgsm_acc.mean << " +- " << s.fgsm_acc.std
            << (s.single_seed ? " (single seed)" : "") << "\n";
      }
      out << report.rows.size() << " runs, " << failed << " failed; ledger "
          << c.ledger_path().string() << "\n";
      return failed == 0 ? kExitOk : kExitFailure;
    }

    if (*eval_cmd) {
      const ExperimentConfig c = load(config_path, eval_o);
      const Encoder enc = load_checkpoint(checkpoint);
      ExperimentResult r = evaluate_encoder(c, enc);
      const std::string text = json(r).dump(2) + "\n";
      if (eval_out.empty()) {
        out << text;
      } else {
        std::ofstream f(eval_out);
        if (!f) throw Error("cannot write " + eval_out);
        f << text;
        print_result(out, r);
      }
      return kExitOk;
    }

    if (*frontier_cmd) {
      const std::filesystem::path ledger(ledger_path);
      const std::filesystem::path dest =
          frontier_out.empty() ? ledger.parent_path() / "frontier.csv" : std::filesystem::path(frontier_out);
      export_frontier(ledger, dest);
      out << "wrote " << dest.string() << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace nacl::cli
