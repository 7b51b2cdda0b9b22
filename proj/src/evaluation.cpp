#include "nacl/evaluation.hpp"

#include <cmath>

#include "nacl/error.hpp"
#include "nacl/ops.hpp"
#include "nacl/tape.hpp"
#include "nacl/training.hpp"

namespace nacl {

namespace {

void check_inputs(const Encoder& enc, const Dataset& ds, const char* who) {
  if (ds.features.rank() != 2 || ds.dim() != enc.config().input_dim) {
    throw ShapeError(std::string(who) + ": dataset has " + shape_str(ds.features.shape()) +
                     " features but the encoder expects input_dim " +
                     std::to_string(enc.config().input_dim));
  }
  if (ds.size() == 0) throw ValueError(std::string(who) + ": empty dataset");
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t r = logits.rows(), k = logits.cols();
  std::vector<std::size_t> out(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[i * k + c] > logits[i * k + out[i]]) out[i] = c;
    }
  }
  return out;
}

double match_rate(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

void ProbeConfig::validate() const {
  if (epochs == 0) throw ConfigError("probe.epochs", "must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("probe.learning_rate", "must be positive");
  }
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs}, {"learning_rate", c.learning_rate}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
}

Tensor LinearProbe::logits(const Tensor& embeddings) const {
  return add_bias(matmul(embeddings, weights), bias);
}

std::vector<std::size_t> LinearProbe::predict(const Encoder& enc, const Tensor& x) const {
  return argmax_rows(logits(enc.encode(x)));
}

LinearProbe train_linear_probe(const Encoder& enc, const Dataset& ds, const ProbeConfig& config) {
  config.validate();
  check_inputs(enc, ds, "train_linear_probe");
  ds.validate();
  const Tensor z = enc.encode(ds.features).detach();
  const std::size_t k = ds.class_count;
  LinearProbe probe{Tensor::zeros({z.cols(), k}), Tensor::zeros({k})};
  std::vector<Tensor> params{probe.weights, probe.bias};
  AdamState state;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tape tape;
    const LinearProbe tracked{tape.leaf(params[0]), tape.leaf(params[1])};
    const Tensor loss = mean(softmax_cross_entropy_rows(tracked.logits(z), ds.labels));
    const auto grads = tape.backward(loss);
    adam_step(params, {grads.grad(tracked.weights), grads.grad(tracked.bias)}, state,
              config.learning_rate, 0.9, 0.999, 1e-8);
  }
  probe.weights = params[0];
  probe.bias = params[1];
  return probe;
}

double standard_accuracy(const Encoder& enc, const LinearProbe& probe, const Dataset& ds) {
  check_inputs(enc, ds, "standard_accuracy");
  return match_rate(probe.predict(enc, ds.features), ds.labels);
}

std::string to_string(AttackKind k) { return k == AttackKind::kFgsm ? "fgsm" : "pgd"; }

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "fgsm") return AttackKind::kFgsm;
  if (s == "pgd") return AttackKind::kPgd;
  throw ConfigError("eval.attacks", "unknown attack '" + s + "' (fgsm|pgd)");
}

AttackedSet attack_probe(const Encoder& enc, const LinearProbe& probe, const Dataset& ds,
                         const AttackConfig& config, AttackKind kind) {
  config.validate();
  check_inputs(enc, ds, "attack_probe");
  const RowLossFn ce = [&](const Tensor& x) {
    return softmax_cross_entropy_rows(probe.logits(enc.encode(x)), ds.labels);
  };
  Tensor adv = fgsm(ce, ds.features, config.epsilon, config.domain_bounds);
  if (kind == AttackKind::kPgd) {
    PgdOptions opts;
    opts.warm_start = adv;
    opts.success = [&](const Tensor& x) {
      const auto pred = probe.predict(enc, x);
      std::vector<bool> fooled(pred.size());
      for (std::size_t i = 0; i < pred.size(); ++i) fooled[i] = pred[i] != ds.labels[i];
      return fooled;
    };
    adv = pgd(ce, ds.features, config, opts);
  }
  AttackedSet out;
  out.max_perturbation = linf_distance(adv, ds.features);
  if (out.max_perturbation > config.epsilon) {
    throw NumericalError("attack_probe: perturbation " + std::to_string(out.max_perturbation) +
                         " leaves the epsilon ball");
  }
  out.accuracy = match_rate(probe.predict(enc, adv), ds.labels);
  out.inputs = std::move(adv);
  return out;
}

double robust_accuracy(const Encoder& enc, const LinearProbe& probe, const Dataset& ds,
                       const AttackConfig& config, AttackKind kind) {
  return attack_probe(enc, probe, ds, config, kind).accuracy;
}

TransferResult transfer_eval(const Encoder& enc, const Dataset& train_b, const Dataset& test_b,
                             const ProbeConfig& probe_config, const AttackConfig& attack) {
  check_inputs(enc, train_b, "transfer_eval");
  check_inputs(enc, test_b, "transfer_eval");
  const LinearProbe probe = train_linear_probe(enc, train_b, probe_config);
  return {standard_accuracy(enc, probe, test_b),
          robust_accuracy(enc, probe, test_b, attack, AttackKind::kFgsm)};
}

}  // namespace nacl
