#include "nacl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "nacl/error.hpp"
#include "nacl/tape.hpp"

namespace nacl {

namespace {

void check_pairs(const std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape() != grads[k].shape()) {
      throw ShapeError("optimizer: parameter " + std::to_string(k) + " is " +
                       shape_str(params[k].shape()) + " but its gradient is " +
                       shape_str(grads[k].shape()));
    }
  }
}

// splitmix64 finalizer; decorrelates per-step attack seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("train.optimizer", "unknown optimizer '" + s + "' (adam|sgd)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs", "must be at least 1");
  if (batch_size < 2) throw ConfigError("train.batch_size", "must be at least 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate", "must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps", "must be positive");
  loss.validate();
  augment.validate();
  const bool debiased = loss.g1.kind != EstimatorKind::kG0 ||
                        (loss.alpha > 0.0 && loss.g2.kind != EstimatorKind::kG0);
  if (debiased && debias_count == 0) {
    throw ConfigError("train.debias_count", "debiased estimators need at least 1");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"optimizer", to_string(c.optimizer)},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"seed", c.seed},
                     {"loss", c.loss},
                     {"augment", c.augment},
                     {"debias_count", c.debias_count}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j["optimizer"].get<std::string>());
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss")) j["loss"].get_to(c.loss);
  if (j.contains("augment")) j["augment"].get_to(c.augment);
  c.debias_count = j.value("debias_count", c.debias_count);
}

void to_json(nlohmann::json& j, const TrainHistory& h) {
  j = nlohmann::json{{"epoch_loss", h.epoch_loss},
                     {"epoch_seconds", h.epoch_seconds},
                     {"wall_seconds", h.wall_seconds},
                     {"seed", h.seed},
                     {"attack_count", h.attack_count}};
}

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,loss,seconds\n";
  for (std::size_t e = 0; e < h.epoch_loss.size(); ++e) {
    out << e + 1 << ',' << h.epoch_loss[e] << ','
        << (e < h.epoch_seconds.size() ? h.epoch_seconds[e] : 0.0) << '\n';
  }
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  check_pairs(params, grads);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape()));
      state.v.push_back(Tensor::zeros(p.shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].mutable_values();
    auto& m = state.m[k].mutable_values();
    auto& v = state.v[k].mutable_values();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
  check_pairs(params, grads);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].mutable_values();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

TrainResult train_encoder(const Dataset& ds, const EncoderConfig& enc_config,
                          const TrainConfig& config) {
  config.validate();
  enc_config.validate();
  if (ds.dim() != enc_config.input_dim) {
    throw ConfigError("encoder.input_dim", "is " + std::to_string(enc_config.input_dim) +
                                               " but the dataset has " +
                                               std::to_string(ds.dim()) + " features");
  }
  if (config.batch_size > ds.size()) {
    throw ConfigError("train.batch_size", std::to_string(config.batch_size) + " exceeds the " +
                                              std::to_string(ds.size()) + " training points");
  }
  Encoder enc = Encoder::init(enc_config);
  TrainHistory history;
  history.seed = config.seed;
  AdamState adam;
  std::mt19937_64 rng(config.seed);
  const bool need_fresh = config.loss.family == LossFamily::kMixNca && config.loss.positives > 1;
  const std::size_t batches = ds.size() / config.batch_size;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::vector<std::size_t> rows(
          order.begin() + static_cast<std::ptrdiff_t>(b * config.batch_size),
          order.begin() + static_cast<std::ptrdiff_t>((b + 1) * config.batch_size));
      const ContrastiveBatch batch =
          build_contrastive_batch(ds.features, rows, config.loss.positives, need_fresh,
                                  config.augment, rng, config.debias_count);
      LossConfig loss_config = config.loss;
      loss_config.attack.seed = mix(config.loss.attack.seed ^ mix(step));
      Tape tape;
      Encoder tracked = enc.track(tape);
      const Tensor loss =
          intnacl_loss(tracked, batch, loss_config, {std::nullopt, std::nullopt,
                                                     &history.attack_count});
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << value << " at epoch " << epoch + 1 << ", batch "
            << b + 1;
        throw NumericalError(msg.str());
      }
      total += value;
      const auto grads_all = tape.backward(loss);
      std::vector<Tensor> grads;
      for (const auto& p : tracked.parameters()) grads.push_back(grads_all.grad(p));
      if (config.optimizer == OptimizerKind::kAdam) {
        adam_step(enc.mutable_parameters(), grads, adam, config.learning_rate, config.beta1,
                  config.beta2, config.eps);
      } else {
        sgd_step(enc.mutable_parameters(), grads, config.learning_rate);
      }
    }
    history.epoch_loss.push_back(total / static_cast<double>(batches));
    history.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count());
  }
  history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(enc), std::move(history)};
}

}  // namespace nacl
