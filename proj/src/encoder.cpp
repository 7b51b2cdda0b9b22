#include "nacl/encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "nacl/error.hpp"
#include "nacl/ops.hpp"
#include "nacl/tape.hpp"

namespace nacl {

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("encoder.activation", "unknown activation '" + s + "' (relu|tanh)");
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder.input_dim", "must be positive");
  if (kind == EncoderKind::kPassThrough) {
    if (embed_dim != input_dim) {
      throw ConfigError("encoder.embed_dim", "pass-through encoder needs embed_dim == input_dim");
    }
    return;
  }
  if (hidden_dims.empty()) throw ConfigError("encoder.hidden_dims", "must be non-empty");
  for (auto h : hidden_dims) {
    if (h == 0) throw ConfigError("encoder.hidden_dims", "extents must be positive");
  }
  if (embed_dim < 2) throw ConfigError("encoder.embed_dim", "must be at least 2");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim},
                     {"hidden_dims", c.hidden_dims},
                     {"embed_dim", c.embed_dim},
                     {"activation", to_string(c.activation)},
                     {"seed", c.seed},
                     {"kind", c.kind == EncoderKind::kMlp ? "mlp" : "pass_through"}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
  c.seed = j.value("seed", c.seed);
  const std::string kind = j.value("kind", std::string("mlp"));
  if (kind == "mlp") {
    c.kind = EncoderKind::kMlp;
  } else if (kind == "pass_through") {
    c.kind = EncoderKind::kPassThrough;
  } else {
    throw ConfigError("encoder.kind", "unknown kind '" + kind + "' (mlp|pass_through)");
  }
}

Encoder Encoder::init(const EncoderConfig& config) {
  config.validate();
  if (config.kind == EncoderKind::kPassThrough) return pass_through(config.input_dim, false);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> dims{config.input_dim};
  dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  dims.push_back(config.embed_dim);

  std::vector<Tensor> params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = u(rng);
    params.emplace_back(Shape{fan_in, fan_out}, std::move(w));
    params.push_back(Tensor::filled({fan_out}, kInitBias));
  }
  return Encoder(config, std::move(params));
}

Encoder Encoder::pass_through(std::size_t dim, bool frozen) {
  EncoderConfig config;
  config.kind = EncoderKind::kPassThrough;
  config.input_dim = dim;
  config.embed_dim = dim;
  config.hidden_dims.clear();
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  return Encoder(config, {Tensor({dim, dim}, std::move(eye)), Tensor::zeros({dim})}, frozen);
}

Encoder::Encoder(EncoderConfig config, std::vector<Tensor> parameters, bool frozen)
    : config_(std::move(config)), params_(std::move(parameters)), frozen_(frozen) {
  config_.validate();
  const std::size_t layers =
      config_.kind == EncoderKind::kPassThrough ? 1 : config_.hidden_dims.size() + 1;
  if (params_.size() != 2 * layers) {
    throw ShapeError("encoder: expected " + std::to_string(2 * layers) + " parameter tensors, got " +
                     std::to_string(params_.size()));
  }
  std::size_t fan_in = config_.input_dim;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t fan_out = l + 1 == layers ? config_.embed_dim : config_.hidden_dims[l];
    if (params_[2 * l].shape() != Shape{fan_in, fan_out} ||
        params_[2 * l + 1].shape() != Shape{fan_out}) {
      throw ShapeError("encoder: layer " + std::to_string(l) + " has shapes " +
                       shape_str(params_[2 * l].shape()) + ", " +
                       shape_str(params_[2 * l + 1].shape()));
    }
    fan_in = fan_out;
  }
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

Encoder Encoder::track(Tape& tape) const {
  Encoder out = *this;
  for (auto& p : out.params_) p = tape.leaf(p);
  return out;
}

Tensor Encoder::project(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != config_.input_dim) {
    throw ShapeError("encode: expected [batch x " + std::to_string(config_.input_dim) +
                     "] input, got " + shape_str(x.shape()));
  }
  const std::size_t layers = params_.size() / 2;
  Tensor h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = add_bias(matmul(h, params_[2 * l]), params_[2 * l + 1]);
    if (l + 1 < layers) h = config_.activation == Activation::kRelu ? relu(h) : tanh(h);
  }
  return h;
}

Tensor Encoder::encode(const Tensor& x) const { return l2_normalize_rows(project(x)); }

bool bitwise_equal(const Encoder& a, const Encoder& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    if (!bitwise_equal(a.parameters()[i], b.parameters()[i])) return false;
  }
  return true;
}

void save_checkpoint(const Encoder& enc, const std::filesystem::path& path) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : enc.parameters()) {
    params.push_back({{"shape", p.shape()}, {"data", p.values()}});
  }
  const nlohmann::json doc{{"format", "nacl-encoder"},
                           {"version", kCheckpointVersion},
                           {"frozen", enc.frozen()},
                           {"config", enc.config()},
                           {"parameters", params}};
  std::ofstream out(path);
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path.string());
  }
  out << doc.dump() << '\n';
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + path.string());
}

Encoder load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt,
                          path.string() + ": corrupt checkpoint (" + e.what() + ")");
  }
  try {
    if (doc.at("format").get<std::string>() != "nacl-encoder") {
      throw CheckpointError(CheckpointError::Kind::kCorrupt,
                            path.string() + ": not an encoder checkpoint");
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointError::Kind::kVersion,
                            path.string() + ": checkpoint version " + std::to_string(version) +
                                " is not supported (expected " +
                                std::to_string(kCheckpointVersion) + ")");
    }
    const auto config = doc.at("config").get<EncoderConfig>();
    std::vector<Tensor> params;
    for (const auto& p : doc.at("parameters")) {
      params.emplace_back(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>());
    }
    return Encoder(config, std::move(params), doc.value("frozen", false));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt,
                          path.string() + ": corrupt checkpoint (" + e.what() + ")");
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt,
                          path.string() + ": corrupt checkpoint (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt,
                          path.string() + ": corrupt checkpoint (" + e.what() + ")");
  }
}

}  // namespace nacl
