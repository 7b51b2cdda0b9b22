#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nacl/tensor.hpp"

namespace nacl {

class Tape;

enum class Activation { kRelu, kTanh };
enum class EncoderKind { kMlp, kPassThrough };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t input_dim = 8;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t embed_dim = 16;
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;
  // kPassThrough is a single linear layer without activation, used to
  // stipulate embeddings exactly in tests.
  EncoderKind kind = EncoderKind::kMlp;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// f(x) = h(x) / ||h(x)|| where h is an MLP whose last linear layer is the
// projection head. Parameters are stored as [W0, b0, W1, b1, ...] with
// W of shape [fan_in x fan_out].
class Encoder {
 public:
  static constexpr double kInitBias = 0.01;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, biases kInitBias.
  static Encoder init(const EncoderConfig& config);
  // Identity linear map on `dim` features with zero bias. Frozen unless
  // `frozen` is false.
  static Encoder pass_through(std::size_t dim, bool frozen = true);

  Encoder(EncoderConfig config, std::vector<Tensor> parameters, bool frozen = false);

  const EncoderConfig& config() const noexcept { return config_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  std::vector<Tensor>& mutable_parameters() noexcept { return params_; }
  std::size_t parameter_count() const;
  bool frozen() const noexcept { return frozen_; }

  // Copy whose parameters are leaves on `tape`.
  Encoder track(Tape& tape) const;

  // h(x), before normalization. x is [batch x input_dim].
  Tensor project(const Tensor& x) const;
  // f(x), unit-norm rows.
  Tensor encode(const Tensor& x) const;

 private:
  EncoderConfig config_;
  std::vector<Tensor> params_;
  bool frozen_ = false;
};

bool bitwise_equal(const Encoder& a, const Encoder& b);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Encoder& enc, const std::filesystem::path& path);
// Throws CheckpointError (kIo, kCorrupt or kVersion).
Encoder load_checkpoint(const std::filesystem::path& path);

}  // namespace nacl
