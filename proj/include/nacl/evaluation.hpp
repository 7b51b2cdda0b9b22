#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "nacl/adversarial.hpp"
#include "nacl/data.hpp"
#include "nacl/encoder.hpp"

namespace nacl {

struct ProbeConfig {
  std::size_t epochs = 200;
  double learning_rate = 1e-2;

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

// Softmax classifier on encoder outputs.
struct LinearProbe {
  Tensor weights;  // [embed_dim x K]
  Tensor bias;     // [K]

  std::size_t classes() const { return bias.numel(); }
  Tensor logits(const Tensor& embeddings) const;
  std::vector<std::size_t> predict(const Encoder& enc, const Tensor& x) const;
};

// Full-batch Adam on mean cross-entropy from a zero init. The encoder is only
// read; its outputs are computed once.
LinearProbe train_linear_probe(const Encoder& enc, const Dataset& ds, const ProbeConfig& config);

double standard_accuracy(const Encoder& enc, const LinearProbe& probe, const Dataset& ds);

enum class AttackKind { kFgsm, kPgd };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackedSet {
  Tensor inputs;
  double accuracy = 0.0;
  // max |x_adv - x|, audited against epsilon.
  double max_perturbation = 0.0;
};

// Per-sample cross-entropy attack on probe(encode(x)). kFgsm takes one signed
// step of size epsilon. kPgd runs the configured schedule warm-started from the
// FGSM point and ranks candidates by misclassification first, so its accuracy
// never exceeds the FGSM accuracy.
AttackedSet attack_probe(const Encoder& enc, const LinearProbe& probe, const Dataset& ds,
                         const AttackConfig& config, AttackKind kind);

double robust_accuracy(const Encoder& enc, const LinearProbe& probe, const Dataset& ds,
                       const AttackConfig& config, AttackKind kind);

struct TransferResult {
  double accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// Fresh probe on train_b through the frozen encoder, scored on test_b.
TransferResult transfer_eval(const Encoder& enc, const Dataset& train_b, const Dataset& test_b,
                             const ProbeConfig& probe_config, const AttackConfig& attack);

}  // namespace nacl
