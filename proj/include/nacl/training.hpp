#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "nacl/data.hpp"
#include "nacl/encoder.hpp"
#include "nacl/losses.hpp"

namespace nacl {

enum class OptimizerKind { kAdam, kSgd };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;  // N
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  LossConfig loss;
  AugmentConfig augment;
  // Extra positives per anchor for the debiased estimators.
  std::size_t debias_count = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> epoch_seconds;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  // Adversarial positive generations performed.
  std::size_t attack_count = 0;
};

void to_json(nlohmann::json& j, const TrainHistory& h);
// Columns epoch,loss,seconds.
void write_history_csv(const TrainHistory& h, const std::filesystem::path& path);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

// Bias-corrected Adam update in place. Moments are created on first use.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps);
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

struct TrainResult {
  Encoder encoder;
  TrainHistory history;
};

// Epoch loop: reshuffle, split into full batches of N (the remainder is
// dropped), build each contrastive batch, step the optimizer on the
// configured IntNaCl loss. Throws NumericalError on a non-finite loss.
TrainResult train_encoder(const Dataset& ds, const EncoderConfig& enc_config,
                          const TrainConfig& config);

}  // namespace nacl
