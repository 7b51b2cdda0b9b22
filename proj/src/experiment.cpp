#include "nacl/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "nacl/error.hpp"

namespace nacl {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

std::string kind_name(const json& v) {
  if (v.is_number_unsigned()) return "a non-negative integer";
  if (v.is_number_integer()) return "a negative integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_boolean()) return "a boolean";
  if (v.is_array()) return "a list";
  if (v.is_object()) return "a mapping";
  return "null";
}

bool same_kind(const json& input, const json& ref) {
  if (ref.is_null()) return true;
  if (ref.is_number_unsigned()) {
    return input.is_number_unsigned() || (input.is_number_integer() && input.get<std::int64_t>() >= 0);
  }
  if (ref.is_number_integer()) return input.is_number_integer();
  if (ref.is_number()) return input.is_number();
  return input.type() == ref.type();
}

// Rejects unknown keys and mismatched value kinds against a reference
// document built from defaults.
void check_against(const json& input, const json& ref, const std::string& path) {
  if (ref.is_null()) return;
  // null switches off an optional section
  if (input.is_null() && ref.is_object()) return;
  if (!same_kind(input, ref)) {
    throw ConfigError(path, "expected " + kind_name(ref) + ", got " + kind_name(input));
  }
  if (ref.is_object()) {
    for (const auto& [key, value] : input.items()) {
      if (!ref.contains(key)) throw ConfigError(join_path(path, key), "unknown field");
      check_against(value, ref[key], join_path(path, key));
    }
  } else if (ref.is_array() && !ref.empty()) {
    for (std::size_t i = 0; i < input.size(); ++i) {
      check_against(input[i], ref[0], path + "[" + std::to_string(i) + "]");
    }
  }
}

template <class T>
void read_section(const json& j, const std::string& key, T& out, json ref) {
  if (!j.contains(key)) return;
  check_against(j[key], ref, key);
  try {
    from_json(j[key], out);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_field(fields[i]);
  return out;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  s.count = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Undefined:
    case YAML::NodeType::Null:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json out = json::array();
      for (const auto& item : n) out.push_back(yaml_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      json out = json::object();
      for (const auto& kv : n) out[kv.first.Scalar()] = yaml_to_json(kv.second);
      return out;
    }
    case YAML::NodeType::Scalar:
      break;
  }
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "~" || s == "null" || s == "Null" || s == "NULL") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  std::uint64_t u = 0;
  if (auto r = std::from_chars(first, last, u); r.ec == std::errc() && r.ptr == last) return u;
  std::int64_t i = 0;
  if (auto r = std::from_chars(first, last, i); r.ec == std::errc() && r.ptr == last) return i;
  double d = 0.0;
  if (auto r = std::from_chars(first, last, d); r.ec == std::errc() && r.ptr == last) return d;
  return s;
}

std::mutex& ledger_mutex() {
  static std::mutex m;
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Runs and writes the per-run directory; no ledger row.
ExperimentResult execute_and_write(const ExperimentConfig& config) {
  const auto dir = run_directory(config);
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");
  ExperimentRun run = run_experiment(config);
  write_text(dir / "result.json", json(run.result).dump(2) + "\n");
  write_history_csv(run.history, dir / "history.csv");
  save_checkpoint(run.encoder, dir / "encoder.ckpt");
  return run.result;
}

LedgerRow failed_row(const ExperimentConfig& config, const std::string& method,
                     const std::string& what) {
  LedgerRow row;
  row.run = run_directory(config).filename().string();
  row.method = method;
  row.seed = config.train.seed;
  row.status = "failed";
  row.message = what;
  row.epsilon = config.eval.epsilons.empty() ? 0.0 : config.eval.epsilons.front();
  return row;
}

std::string format_label_value(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

// ---- dataset ----

void DatasetSpec::validate(const std::string& field) const {
  if (classes < 2) throw ConfigError(field + ".classes", "must be at least 2");
  if (dim < 2) throw ConfigError(field + ".dim", "must be at least 2");
  if (points < 2 * classes) {
    throw ConfigError(field + ".points", "need at least 2 points per class");
  }
  if (!(spread >= 0.0) || !std::isfinite(spread)) {
    throw ConfigError(field + ".spread", "must be finite and non-negative");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError(field + ".train_fraction", "must lie in (0, 1)");
  }
}

Dataset DatasetSpec::generate() const {
  validate("dataset");
  const std::size_t per_class = (points + classes - 1) / classes;
  Dataset full = make_blobs(classes, dim, per_class, spread, seed);
  if (full.size() == points) return full;
  std::vector<std::size_t> keep(points);
  // Rows are grouped by class; spread the shortfall over the last classes.
  const std::size_t short_classes = per_class * classes - points;
  std::size_t k = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t take = per_class - (c >= classes - short_classes ? 1 : 0);
    for (std::size_t i = 0; i < take; ++i) keep[k++] = c * per_class + i;
  }
  Dataset out = full.subset(keep);
  out.class_count = classes;
  out.seed = seed;
  return out;
}

std::pair<Dataset, Dataset> DatasetSpec::split() const {
  return train_test_split(generate(), train_fraction, seed);
}

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"classes", s.classes},     {"dim", s.dim},   {"points", s.points},
           {"spread", s.spread},       {"seed", s.seed}, {"train_fraction", s.train_fraction}};
}

void from_json(const json& j, DatasetSpec& s) {
  s.classes = j.value("classes", s.classes);
  s.dim = j.value("dim", s.dim);
  s.points = j.value("points", s.points);
  s.spread = j.value("spread", s.spread);
  s.seed = j.value("seed", s.seed);
  s.train_fraction = j.value("train_fraction", s.train_fraction);
}

// ---- eval spec ----

void EvalSpec::validate() const {
  if (epsilons.empty()) throw ConfigError("eval.epsilons", "need at least one value");
  for (double e : epsilons) {
    if (!(e > 0.0) || !std::isfinite(e)) {
      throw ConfigError("eval.epsilons", "values must be positive, got " + format_double(e));
    }
  }
  if (attacks.empty()) throw ConfigError("eval.attacks", "need at least one attack kind");
  probe.validate();
  pgd_config(epsilons.front(), 0).validate();
  if (transfer) transfer->validate("eval.transfer");
}

AttackConfig EvalSpec::pgd_config(double epsilon, std::uint64_t seed) const {
  AttackConfig c = AttackConfig::pgd(epsilon);
  c.step_size = pgd_step_size;
  c.iterations = pgd_iterations;
  c.restarts = pgd_restarts;
  c.seed = seed;
  return c;
}

bool EvalSpec::has(AttackKind k) const {
  return std::find(attacks.begin(), attacks.end(), k) != attacks.end();
}

void to_json(json& j, const EvalSpec& s) {
  json attacks = json::array();
  for (auto k : s.attacks) attacks.push_back(to_string(k));
  j = json{{"epsilons", s.epsilons},
           {"attacks", attacks},
           {"pgd_step_size", s.pgd_step_size},
           {"pgd_iterations", s.pgd_iterations},
           {"pgd_restarts", s.pgd_restarts},
           {"probe", s.probe},
           {"transfer", s.transfer ? json(*s.transfer) : json(nullptr)}};
}

void from_json(const json& j, EvalSpec& s) {
  s.epsilons = j.value("epsilons", s.epsilons);
  if (j.contains("attacks")) {
    s.attacks.clear();
    for (const auto& a : j["attacks"]) s.attacks.push_back(attack_kind_from_string(a.get<std::string>()));
  }
  s.pgd_step_size = j.value("pgd_step_size", s.pgd_step_size);
  s.pgd_iterations = j.value("pgd_iterations", s.pgd_iterations);
  s.pgd_restarts = j.value("pgd_restarts", s.pgd_restarts);
  if (j.contains("probe")) j["probe"].get_to(s.probe);
  if (j.contains("transfer")) {
    if (j["transfer"].is_null()) {
      s.transfer.reset();
    } else {
      DatasetSpec t = s.transfer.value_or(DatasetSpec{});
      check_against(j["transfer"], json(DatasetSpec{}), "eval.transfer");
      from_json(j["transfer"], t);
      s.transfer = t;
    }
  }
}

// ---- experiment config ----

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name", "must not be empty");
  dataset.validate("dataset");
  encoder.validate();
  if (encoder.input_dim != dataset.dim) {
    throw ConfigError("encoder.input_dim", "is " + std::to_string(encoder.input_dim) +
                                               " but dataset.dim is " +
                                               std::to_string(dataset.dim));
  }
  train.validate();
  const auto train_points = static_cast<std::size_t>(
      std::llround(dataset.train_fraction * static_cast<double>(dataset.points)));
  if (train.batch_size > train_points) {
    throw ConfigError("train.batch_size", std::to_string(train.batch_size) +
                                              " exceeds the " + std::to_string(train_points) +
                                              " training points");
  }
  if (preset) (void)nacl::preset(*preset);
  eval.validate();
  if (eval.transfer && eval.transfer->dim != dataset.dim) {
    throw ConfigError("eval.transfer.dim", "must equal dataset.dim (" +
                                               std::to_string(dataset.dim) + ")");
  }
}

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t seed) const {
  ExperimentConfig c = *this;
  c.encoder.seed = seed;
  c.train.seed = seed;
  return c;
}

std::string ExperimentConfig::method() const { return preset.value_or("custom"); }

std::filesystem::path ExperimentConfig::ledger_path() const {
  return ledger.is_absolute() ? ledger : output_dir / ledger;
}

json to_json(const ExperimentConfig& c) {
  json train = c.train;
  train.erase("loss");
  return json{{"name", c.name},
              {"dataset", c.dataset},
              {"encoder", c.encoder},
              {"train", train},
              {"preset", c.preset ? json(*c.preset) : json(nullptr)},
              {"loss", c.train.loss},
              {"eval", c.eval},
              {"output", {{"dir", c.output_dir.string()}, {"ledger", c.ledger.string()}}}};
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "top level must be a mapping");
  static const std::vector<std::string> top = {"name",  "dataset", "encoder", "train", "preset",
                                               "loss",  "eval",    "output",  "sweep"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(top.begin(), top.end(), key) == top.end()) {
      throw ConfigError(key, "unknown field");
    }
  }
  if (!j.contains("dataset")) throw ConfigError("dataset", "missing required section");

  ExperimentConfig c;
  if (j.contains("name")) {
    check_against(j["name"], json(""), "name");
    c.name = j["name"].get<std::string>();
  }
  read_section(j, "dataset", c.dataset, json(DatasetSpec{}));
  c.encoder.input_dim = c.dataset.dim;
  read_section(j, "encoder", c.encoder, json(EncoderConfig{}));

  json train_ref = TrainConfig{};
  train_ref.erase("loss");
  if (j.contains("train") && j["train"].is_object() && j["train"].contains("loss")) {
    throw ConfigError("train.loss", "set the loss at top level (preset or loss)");
  }
  read_section(j, "train", c.train, train_ref);

  if (j.contains("preset") && !j["preset"].is_null()) {
    check_against(j["preset"], json(""), "preset");
    c.preset = j["preset"].get<std::string>();
    c.train.loss = preset(*c.preset);
  }
  if (!c.preset && !j.contains("loss")) {
    throw ConfigError("preset", "give a preset or an explicit loss section");
  }
  read_section(j, "loss", c.train.loss, json(LossConfig{}));
  read_section(j, "eval", c.eval, json(EvalSpec{}));
  if (j.contains("output")) {
    const json ref = {{"dir", ""}, {"ledger", ""}};
    check_against(j["output"], ref, "output");
    c.output_dir = j["output"].value("dir", c.output_dir.string());
    c.ledger = j["output"].value("ledger", c.ledger.string());
  }
  c.validate();
  return c;
}

json parse_yaml(const std::string& text) {
  try {
    return yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError("config", "line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

json read_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return json::parse(buf.str());
    } catch (const json::parse_error& e) {
      throw ConfigError("config", path.string() + ": " + e.what());
    }
  }
  return parse_yaml(buf.str());
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(read_config_document(path));
}

// ---- results ----

void to_json(json& j, const ExperimentResult& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json robust = json::array();
  for (const auto& p : r.robust) {
    robust.push_back({{"epsilon", p.epsilon}, {"fgsm_acc", opt(p.fgsm_acc)},
                      {"pgd_acc", opt(p.pgd_acc)}});
  }
  j = json{{"name", r.name},
           {"method", r.method},
           {"standard_acc", r.standard_acc},
           {"fgsm_acc", opt(r.fgsm_acc)},
           {"pgd_acc", opt(r.pgd_acc)},
           {"transfer_acc", opt(r.transfer_acc)},
           {"transfer_fgsm_acc", opt(r.transfer_fgsm_acc)},
           {"robust", robust},
           {"final_loss", r.final_loss},
           {"attack_count", r.attack_count},
           {"wall_seconds", r.wall_seconds},
           {"config", r.config},
           {"seeds", r.seeds}};
}

ExperimentResult evaluate_encoder(const ExperimentConfig& config, const Encoder& enc,
                                  LinearProbe* probe_out) {
  config.eval.validate();
  if (enc.config().input_dim != config.dataset.dim) {
    throw ConfigError("encoder.input_dim", "checkpoint expects " +
                                               std::to_string(enc.config().input_dim) +
                                               " features but dataset.dim is " +
                                               std::to_string(config.dataset.dim));
  }
  const auto [train, test] = config.dataset.split();
  const LinearProbe probe = train_linear_probe(enc, train, config.eval.probe);
  ExperimentResult r;
  r.name = config.name;
  r.method = config.method();
  r.standard_acc = standard_accuracy(enc, probe, test);
  for (double eps : config.eval.epsilons) {
    RobustPoint p{eps, std::nullopt, std::nullopt};
    if (config.eval.has(AttackKind::kFgsm)) {
      p.fgsm_acc = robust_accuracy(enc, probe, test, AttackConfig::fgsm(eps), AttackKind::kFgsm);
    }
    if (config.eval.has(AttackKind::kPgd)) {
      p.pgd_acc = robust_accuracy(enc, probe, test, config.eval.pgd_config(eps, config.train.seed),
                                  AttackKind::kPgd);
    }
    r.robust.push_back(p);
  }
  r.fgsm_acc = r.robust.front().fgsm_acc;
  r.pgd_acc = r.robust.front().pgd_acc;
  if (config.eval.transfer) {
    const auto [tb, vb] = config.eval.transfer->split();
    const auto t = transfer_eval(enc, tb, vb, config.eval.probe,
                                 AttackConfig::fgsm(config.eval.epsilons.front()));
    r.transfer_acc = t.accuracy;
    r.transfer_fgsm_acc = t.robust_accuracy;
  }
  r.config = to_json(config);
  r.seeds = {{"dataset", config.dataset.seed},
             {"split", config.dataset.seed},
             {"encoder", config.encoder.seed},
             {"train", config.train.seed},
             {"attack", config.train.loss.attack.seed},
             {"transfer", config.eval.transfer ? json(config.eval.transfer->seed) : json(nullptr)}};
  if (probe_out) *probe_out = probe;
  return r;
}

ExperimentRun run_experiment(const ExperimentConfig& config) {
  config.validate();
  auto [train, test] = config.dataset.split();
  TrainResult trained = train_encoder(train, config.encoder, config.train);
  LinearProbe probe;
  ExperimentResult r = evaluate_encoder(config, trained.encoder, &probe);
  r.final_loss = trained.history.epoch_loss.back();
  r.attack_count = trained.history.attack_count;
  r.wall_seconds = trained.history.wall_seconds;
  return {std::move(r), std::move(trained.encoder), std::move(probe), std::move(trained.history),
          std::move(train), std::move(test)};
}

std::filesystem::path run_directory(const ExperimentConfig& config) {
  return config.output_dir / (config.name + "-seed" + std::to_string(config.train.seed));
}

ExperimentResult run_and_record(const ExperimentConfig& config) {
  config.validate();
  try {
    ExperimentResult r = execute_and_write(config);
    append_ledger(config.ledger_path(), ledger_row(config, r));
    return r;
  } catch (const Error& e) {
    append_ledger(config.ledger_path(), failed_row(config, config.method(), e.what()));
    throw;
  }
}

// ---- ledger ----

const std::vector<std::string>& ledger_header() {
  static const std::vector<std::string> h = {
      "run",          "method",       "seed",        "status",
      "message",      "epsilon",      "standard_acc", "fgsm_acc",
      "pgd_acc",      "transfer_acc", "transfer_fgsm_acc", "final_loss",
      "attack_count"};
  return h;
}

LedgerRow ledger_row(const ExperimentConfig& config, const ExperimentResult& r) {
  LedgerRow row;
  row.run = run_directory(config).filename().string();
  row.method = r.method;
  row.seed = config.train.seed;
  row.standard_acc = r.standard_acc;
  row.fgsm_acc = r.fgsm_acc;
  row.pgd_acc = r.pgd_acc;
  row.transfer_acc = r.transfer_acc;
  row.transfer_fgsm_acc = r.transfer_fgsm_acc;
  row.epsilon = r.robust.empty() ? 0.0 : r.robust.front().epsilon;
  row.final_loss = r.final_loss;
  row.attack_count = r.attack_count;
  return row;
}

void append_ledger(const std::filesystem::path& path, const LedgerRow& row) {
  std::lock_guard lock(ledger_mutex());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (first != join_csv(ledger_header())) {
      throw Error("ledger " + path.string() + " has an unexpected header; refusing to append");
    }
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  if (fresh) out << join_csv(ledger_header()) << '\n';
  out << join_csv({row.run, row.method, std::to_string(row.seed), row.status, row.message,
                   format_double(row.epsilon), format_double(row.standard_acc),
                   opt_field(row.fgsm_acc), opt_field(row.pgd_acc), opt_field(row.transfer_acc),
                   opt_field(row.transfer_fgsm_acc), format_double(row.final_loss),
                   std::to_string(row.attack_count)})
      << '\n';
}

std::vector<LedgerRow> read_ledger(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read ledger " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != join_csv(ledger_header())) {
    throw Error(path.string() + ":1: not a results ledger header");
  }
  std::vector<LedgerRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != ledger_header().size()) {
      throw Error(path.string() + ":" + std::to_string(number) + ": expected " +
                  std::to_string(ledger_header().size()) + " fields, got " +
                  std::to_string(f.size()));
    }
    try {
      LedgerRow r;
      r.run = f[0];
      r.method = f[1];
      r.seed = std::stoull(f[2]);
      r.status = f[3];
      r.message = f[4];
      r.epsilon = std::stod(f[5]);
      r.standard_acc = std::stod(f[6]);
      r.fgsm_acc = parse_opt(f[7]);
      r.pgd_acc = parse_opt(f[8]);
      r.transfer_acc = parse_opt(f[9]);
      r.transfer_fgsm_acc = parse_opt(f[10]);
      r.final_loss = std::stod(f[11]);
      r.attack_count = std::stoull(f[12]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw Error(path.string() + ":" + std::to_string(number) + ": bad number (" + e.what() + ")");
    }
  }
  return rows;
}

// ---- sweep ----

void SweepGrid::validate() const {
  if (seeds.empty()) throw ConfigError("sweep.seeds", "need at least one seed");
  if (jobs == 0) throw ConfigError("sweep.jobs", "must be at least 1");
  for (const auto& p : presets) (void)preset(p);
  for (auto m : positives) {
    if (m == 0) throw ConfigError("sweep.positives", "values must be at least 1");
  }
}

void from_json(const json& j, SweepGrid& g) {
  const json ref = g;
  check_against(j, ref, "sweep");
  g.presets = j.value("presets", g.presets);
  g.positives = j.value("positives", g.positives);
  g.lambdas = j.value("lambda", g.lambdas);
  g.alphas = j.value("alpha", g.alphas);
  g.seeds = j.value("seeds", g.seeds);
  g.jobs = j.value("jobs", g.jobs);
}

void to_json(json& j, const SweepGrid& g) {
  // Typed empty lists so key checks still see element kinds.
  j = json{{"presets", g.presets.empty() ? json::array({""}) : json(g.presets)},
           {"positives", g.positives.empty() ? json::array({1u}) : json(g.positives)},
           {"lambda", g.lambdas.empty() ? json::array({0.5}) : json(g.lambdas)},
           {"alpha", g.alphas.empty() ? json::array({0.0}) : json(g.alphas)},
           {"seeds", g.seeds},
           {"jobs", g.jobs}};
}

std::vector<SweepCell> expand_grid(const ExperimentConfig& base, const SweepGrid& grid) {
  grid.validate();
  const std::vector<std::optional<std::string>> presets =
      grid.presets.empty() ? std::vector<std::optional<std::string>>{std::nullopt}
                           : std::vector<std::optional<std::string>>(grid.presets.begin(),
                                                                     grid.presets.end());
  auto axis = [](const auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    std::vector<std::optional<T>> out;
    if (v.empty()) out.push_back(std::nullopt);
    for (const auto& x : v) out.push_back(x);
    return out;
  };
  std::vector<SweepCell> cells;
  for (const auto& p : presets) {
    for (const auto& m : axis(grid.positives)) {
      for (const auto& l : axis(grid.lambdas)) {
        for (const auto& a : axis(grid.alphas)) {
          ExperimentConfig c = base;
          std::string label = base.method();
          if (p) {
            // A preset replaces the loss; the training attack settings stay.
            const LossConfig prior = c.train.loss;
            c.preset = *p;
            c.train.loss = preset(*p);
            c.train.loss.attack = prior.attack;
            c.train.loss.attack_anchor = prior.attack_anchor;
            label = *p;
          }
          std::vector<std::string> tags;
          if (m) {
            c.train.loss.positives = *m;
            tags.push_back("M=" + std::to_string(*m));
          }
          if (l) {
            c.train.loss.lambda = *l;
            tags.push_back("lambda=" + format_label_value(*l));
          }
          if (a) {
            c.train.loss.alpha = *a;
            tags.push_back("alpha=" + format_label_value(*a));
          }
          if (!tags.empty()) {
            label += "[";
            for (std::size_t i = 0; i < tags.size(); ++i) label += (i ? "," : "") + tags[i];
            label += "]";
          }
          std::string slug;
          for (char ch : label) slug += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' ? ch : '_';
          c.name = base.name + "-" + slug;
          cells.push_back({label, std::move(c)});
        }
      }
    }
  }
  return cells;
}

std::vector<SummaryRow> summarize(const std::vector<LedgerRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const LedgerRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const auto& method : order) {
    SummaryRow s;
    s.method = method;
    std::vector<double> st, fg, pg, tr, tf;
    for (const auto* r : groups[method]) {
      ++s.runs;
      if (r->status != "ok") {
        ++s.failures;
        continue;
      }
      st.push_back(r->standard_acc);
      if (r->fgsm_acc) fg.push_back(*r->fgsm_acc);
      if (r->pgd_acc) pg.push_back(*r->pgd_acc);
      if (r->transfer_acc) tr.push_back(*r->transfer_acc);
      if (r->transfer_fgsm_acc) tf.push_back(*r->transfer_fgsm_acc);
    }
    s.standard_acc = stat_of(st);
    s.fgsm_acc = stat_of(fg);
    s.pgd_acc = stat_of(pg);
    s.transfer_acc = stat_of(tr);
    s.transfer_fgsm_acc = stat_of(tf);
    s.single_seed = st.size() == 1;
    out.push_back(s);
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,runs,failures,single_seed,standard_acc_mean,standard_acc_std,fgsm_acc_mean,"
         "fgsm_acc_std,pgd_acc_mean,pgd_acc_std,transfer_acc_mean,transfer_acc_std,"
         "transfer_fgsm_acc_mean,transfer_fgsm_acc_std\n";
  auto cols = [](const Stat& s) {
    if (s.count == 0) return std::string(",");
    return format_double(s.mean) + "," + format_double(s.std);
  };
  for (const auto& r : rows) {
    out << csv_field(r.method) << ',' << r.runs << ',' << r.failures << ','
        << (r.single_seed ? "true" : "false") << ',' << cols(r.standard_acc) << ','
        << cols(r.fgsm_acc) << ',' << cols(r.pgd_acc) << ',' << cols(r.transfer_acc) << ','
        << cols(r.transfer_fgsm_acc) << '\n';
  }
}

SweepReport run_sweep(const ExperimentConfig& base, const SweepGrid& grid) {
  const auto cells = expand_grid(base, grid);
  struct Job {
    const SweepCell* cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& cell : cells)
    for (auto seed : grid.seeds) jobs.push_back({&cell, seed});

  std::vector<std::optional<LedgerRow>> done(jobs.size());
  std::size_t next = 0, flushed = 0;
  std::mutex m;
  const auto ledger = base.ledger_path();
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard lock(m);
        if (next == jobs.size()) return;
        k = next++;
      }
      const ExperimentConfig config = jobs[k].cell->config.with_seed(jobs[k].seed);
      LedgerRow row;
      try {
        ExperimentResult r = execute_and_write(config);
        r.method = jobs[k].cell->label;
        row = ledger_row(config, r);
      } catch (const std::exception& e) {
        row = failed_row(config, jobs[k].cell->label, e.what());
      }
      std::lock_guard lock(m);
      done[k] = std::move(row);
      // Append in job order whatever prefix is complete.
      while (flushed < done.size() && done[flushed]) append_ledger(ledger, *done[flushed++]);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min(grid.jobs, std::max<std::size_t>(jobs.size(), 1));
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  SweepReport report;
  for (auto& row : done) report.rows.push_back(std::move(*row));
  report.summary = summarize(report.rows);
  write_summary_csv(report.summary, ledger.parent_path() / "summary.csv");
  return report;
}

// ---- frontier ----

const std::vector<std::string>& frontier_header() {
  static const std::vector<std::string> h = {"method", "std_acc", "robust_acc", "transfer_std",
                                             "transfer_robust"};
  return h;
}

void export_frontier(const std::filesystem::path& ledger, const std::filesystem::path& out_path) {
  const auto rows = read_ledger(ledger);
  std::vector<LedgerRow> ok;
  for (const auto& r : rows)
    if (r.status == "ok") ok.push_back(r);
  if (ok.empty()) throw Error("export_frontier: no successful runs in " + ledger.string());
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write " + out_path.string());
  out << join_csv(frontier_header()) << '\n';
  for (const auto& r : ok) {
    out << join_csv({r.method, format_double(r.standard_acc), opt_field(r.fgsm_acc),
                     opt_field(r.transfer_acc), opt_field(r.transfer_fgsm_acc)})
        << '\n';
  }
  auto mean_field = [](const Stat& s) { return s.count ? format_double(s.mean) : std::string(); };
  for (const auto& s : summarize(ok)) {
    out << join_csv({s.method + ":mean", mean_field(s.standard_acc), mean_field(s.fgsm_acc),
                     mean_field(s.transfer_acc), mean_field(s.transfer_fgsm_acc)})
        << '\n';
  }
}

}  // namespace nacl
