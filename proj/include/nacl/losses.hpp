#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nacl/adversarial.hpp"
#include "nacl/batch.hpp"
#include "nacl/encoder.hpp"
#include "nacl/estimators.hpp"

// Contrastive losses over a ContrastiveBatch. With s = f(x)^T f(.) / t and K
// negatives per anchor, the per-anchor term for positives P is
//
//   -log( sum_{p in P} e^{s_p} / (sum_{p in P} e^{s_p} + K * G) )
//
// where G is the configured negative-term estimator. All losses average the
// per-anchor terms over anchors.
namespace nacl {

enum class LossFamily { kNca, kMixNca };
enum class Weighting { kConstantOne, kAdversarialHat };

std::string to_string(LossFamily f);
LossFamily loss_family_from_string(const std::string& s);
std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);

struct LossConfig {
  LossFamily family = LossFamily::kNca;
  EstimatorConfig g1;
  std::size_t positives = 1;  // M
  double lambda = 0.5;
  double alpha = 0.0;
  EstimatorConfig g2;
  Weighting weighting = Weighting::kConstantOne;
  AttackConfig attack = AttackConfig::fgsm(0.002);
  // Start the attack from the anchor view instead of the first positive.
  bool attack_anchor = false;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// simclr, debiased, debiased_hardneg, adv, intcl_fig1, intnacl_fig1.
const std::vector<std::string>& preset_names();
// Throws ConfigError listing the valid names.
LossConfig preset(const std::string& name);

// Per-anchor standard term with the first positive, shape [N].
Tensor per_anchor_loss(const Encoder& enc, const ContrastiveBatch& batch, const EstimatorConfig& g);

// Requires M = 1.
Tensor contrastive_loss(const Encoder& enc, const ContrastiveBatch& batch,
                        const EstimatorConfig& g);
// Uses the first M positives of the batch.
Tensor nca_loss(const Encoder& enc, const ContrastiveBatch& batch, const EstimatorConfig& g,
                std::size_t m);
// SimCLR-form term on the first positive plus, for j < M-1, the mixture
// lambda x+ + (1 - lambda) x-_j scored against fresh negative set j:
//   (lambda / (M-1)) sum_j -log Omega_j + ((1 - lambda) / (M-1)) sum_j -log(1 - Omega_j)
Tensor mixnca_loss(const Encoder& enc, const ContrastiveBatch& batch, const EstimatorConfig& g,
                   std::size_t m, double lambda);

// Omega_j for every anchor and mixed positive, [N x (M-1)]. Untracked.
Tensor mixnca_omegas(const Encoder& enc, const ContrastiveBatch& batch,
                     const EstimatorConfig& g, std::size_t m, double lambda);

// w-hat: per-anchor standard loss values, [N], never tracked.
Tensor adversarial_weight(const Encoder& enc, const ContrastiveBatch& batch,
                          const EstimatorConfig& g);

// mean_a w_a * term_a where term_a treats adv_inputs[a] as the positive.
// fixed_weights, when given, replaces w (useful for holding w-hat constant).
Tensor robust_loss(const Encoder& enc, const ContrastiveBatch& batch, const Tensor& adv_inputs,
                   const EstimatorConfig& g2, Weighting weighting,
                   const std::optional<Tensor>& fixed_weights = std::nullopt);

// Adversarial positives for every anchor: maximizes the per-anchor term with
// the candidate as positive, estimator g, encoder and negatives held fixed.
// Result is [N x D] and untracked.
Tensor contrastive_adv_positive(const Encoder& enc, const ContrastiveBatch& batch,
                                const EstimatorConfig& g, const AttackConfig& attack,
                                bool attack_anchor = false);

struct IntNaClOptions {
  // Precomputed adversarial positives; generated when absent and alpha > 0.
  std::optional<Tensor> adv_inputs;
  std::optional<Tensor> fixed_weights;
  // Incremented once per generated attack.
  std::size_t* attack_count = nullptr;
};

// NaCl(G1, M, lambda) + alpha * Robust(G2, w). alpha = 0 never attacks.
Tensor intnacl_loss(const Encoder& enc, const ContrastiveBatch& batch, const LossConfig& config,
                    const IntNaClOptions& options = {});

}  // namespace nacl
