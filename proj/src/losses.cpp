#include "nacl/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nacl/error.hpp"
#include "nacl/ops.hpp"

namespace nacl {

namespace {

struct Encoded {
  Tensor anchors;  // [N x E]
  Tensor sims;     // [N x P] raw inner products with every pooled view
};

Encoded encode_batch(const Encoder& enc, const ContrastiveBatch& batch) {
  batch.validate();
  const Tensor z = enc.encode(batch.views);
  Tensor a = gather_rows(z, batch.anchor_index);
  Tensor s = matmul(a, transpose(z));
  return {std::move(a), std::move(s)};
}

// K * G per anchor, [N].
Tensor negative_mass(const ContrastiveBatch& batch, const Encoded& e, const EstimatorConfig& g,
                     const std::vector<std::size_t>& negative_index) {
  const std::size_t k = batch.negatives_per_anchor;
  const Tensor u = take_along_rows(e.sims, negative_index, k);
  Tensor v = u;
  if (g.kind != EstimatorKind::kG0) {
    if (batch.debias_per_anchor == 0) {
      throw ValueError(to_string(g.kind) + " needs debias positives but the batch has none");
    }
    v = take_along_rows(e.sims, batch.debias_index, batch.debias_per_anchor);
  }
  return scale(estimate_rows(g, u, v), static_cast<double>(k));
}

// -log( sum e^{s/t} / (sum e^{s/t} + KG) ) per row of raw positive sims [N x p].
Tensor anchor_terms(const Tensor& positive_sims, const Tensor& kg, double t) {
  const Tensor num = sum_rows(exp(scale(positive_sims, 1.0 / t)));
  return sub(log(add(num, kg)), log(num));
}

std::vector<std::size_t> first_positives(const ContrastiveBatch& batch, std::size_t m) {
  if (m == 0 || m > batch.positives_per_anchor) {
    throw ValueError("loss: M = " + std::to_string(m) + " but the batch holds " +
                     std::to_string(batch.positives_per_anchor) + " positives per anchor");
  }
  if (m == batch.positives_per_anchor) return batch.positive_index;
  std::vector<std::size_t> idx;
  idx.reserve(batch.anchors * m);
  for (std::size_t a = 0; a < batch.anchors; ++a)
    for (std::size_t j = 0; j < m; ++j)
      idx.push_back(batch.positive_index[a * batch.positives_per_anchor + j]);
  return idx;
}

Tensor nca_rows(const ContrastiveBatch& batch, const Encoded& e, const EstimatorConfig& g,
                std::size_t m) {
  g.validate();
  const Tensor pos = take_along_rows(e.sims, first_positives(batch, m), m);
  return anchor_terms(pos, negative_mass(batch, e, g, batch.negative_index), g.t);
}

// Raw sims f(x)^T f(mix_j) and K * G_j for each mixed positive j < m - 1.
struct MixTerms {
  std::vector<Tensor> sims;  // each [N]
  std::vector<Tensor> kg;    // each [N]
};

MixTerms mix_terms(const Encoder& enc, const ContrastiveBatch& batch, const Encoded& e,
                   const EstimatorConfig& g, std::size_t m, double lambda) {
  MixTerms out;
  if (m <= 1) return out;
  if (!batch.has_fresh_negatives() || batch.fresh_negative_index.size() < m - 1) {
    throw ValueError("mixnca: M = " + std::to_string(m) + " needs " + std::to_string(m - 1) +
                     " fresh negative sets");
  }
  const std::size_t n = batch.anchors;
  const std::size_t mixes = batch.positives_per_anchor - 1;
  const std::vector<std::size_t> first = first_positives(batch, 1);
  // Rows ordered j-major so each j is a contiguous block of N.
  std::vector<std::size_t> partner;
  std::vector<std::size_t> positive;
  for (std::size_t j = 0; j + 1 < m; ++j) {
    for (std::size_t a = 0; a < n; ++a) {
      partner.push_back(batch.mix_partner_index[a * mixes + j]);
      positive.push_back(first[a]);
    }
  }
  const Tensor mixed = add(scale(gather_rows(batch.views, positive), lambda),
                           scale(gather_rows(batch.views, partner), 1.0 - lambda));
  const Tensor zm = enc.encode(mixed);
  for (std::size_t j = 0; j + 1 < m; ++j) {
    std::vector<std::size_t> block(n);
    for (std::size_t a = 0; a < n; ++a) block[a] = j * n + a;
    out.sims.push_back(row_dot(e.anchors, gather_rows(zm, block)));
    out.kg.push_back(negative_mass(batch, e, g, batch.fresh_negative_index[j]));
  }
  return out;
}

Tensor mixnca_rows(const Encoder& enc, const ContrastiveBatch& batch, const Encoded& e,
                   const EstimatorConfig& g, std::size_t m, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ValueError("mixnca: lambda must lie in (0, 1]");
  const Tensor base = nca_rows(batch, e, g, 1);
  if (m == 1) return base;
  const auto mix = mix_terms(enc, batch, e, g, m, lambda);
  Tensor neg_log_omega, neg_log_rest;
  for (std::size_t j = 0; j < mix.sims.size(); ++j) {
    const Tensor s = scale(mix.sims[j], 1.0 / g.t);
    const Tensor denom = log(add(exp(s), mix.kg[j]));
    const Tensor a = sub(denom, s);
    const Tensor b = sub(denom, log(mix.kg[j]));
    neg_log_omega = j ? add(neg_log_omega, a) : a;
    neg_log_rest = j ? add(neg_log_rest, b) : b;
  }
  const double c = 1.0 / static_cast<double>(m - 1);
  return add(base, add(scale(neg_log_omega, lambda * c), scale(neg_log_rest, (1.0 - lambda) * c)));
}

Tensor nacl_rows(const Encoder& enc, const ContrastiveBatch& batch, const Encoded& e,
                 const LossConfig& config) {
  if (config.family == LossFamily::kMixNca) {
    return mixnca_rows(enc, batch, e, config.g1, config.positives, config.lambda);
  }
  return nca_rows(batch, e, config.g1, config.positives);
}

Tensor robust_rows(const Encoder& enc, const ContrastiveBatch& batch, const Encoded& e,
                   const Tensor& adv_inputs, const EstimatorConfig& g2) {
  g2.validate();
  if (adv_inputs.rank() != 2 || adv_inputs.rows() != batch.anchors ||
      adv_inputs.cols() != batch.input_dim()) {
    throw ShapeError("robust_loss: adversarial inputs " + shape_str(adv_inputs.shape()) +
                     " do not match " + std::to_string(batch.anchors) + " anchors");
  }
  const Tensor s = row_dot(e.anchors, enc.encode(adv_inputs));
  const Tensor pos = reshape(s, {batch.anchors, 1});
  return anchor_terms(pos, negative_mass(batch, e, g2, batch.negative_index), g2.t);
}

Tensor weights_for(const ContrastiveBatch& batch, const Encoded& e, const EstimatorConfig& g2,
                   Weighting weighting, const std::optional<Tensor>& fixed) {
  if (fixed) {
    if (fixed->numel() != batch.anchors) throw ShapeError("robust_loss: one weight per anchor");
    return reshape(fixed->detach(), {batch.anchors});
  }
  if (weighting == Weighting::kConstantOne) return Tensor::filled({batch.anchors}, 1.0);
  return nca_rows(batch, e, g2, 1).detach();
}

Encoder untracked(const Encoder& enc) {
  std::vector<Tensor> params;
  for (const auto& p : enc.parameters()) params.push_back(p.detach());
  return Encoder(enc.config(), std::move(params), enc.frozen());
}

Tensor generate_adv(const Encoder& enc, const ContrastiveBatch& batch, const Encoded& e,
                    const EstimatorConfig& g, const AttackConfig& attack_config,
                    bool attack_anchor) {
  const Encoder fixed = untracked(enc);
  const Tensor anchors = e.anchors.detach();
  const Tensor kg = negative_mass(batch, e, g, batch.negative_index).detach();
  const double t = g.t;
  const RowLossFn loss = [&](const Tensor& p) {
    const Tensor s = reshape(row_dot(anchors, fixed.encode(p)), {batch.anchors, 1});
    return anchor_terms(s, kg, t);
  };
  const Tensor start = gather_rows(
      batch.views.detach(), attack_anchor ? batch.anchor_index : first_positives(batch, 1));
  return attack(loss, start, attack_config);
}

const std::vector<std::pair<LossFamily, std::string>> kFamilies = {{LossFamily::kNca, "nca"},
                                                                   {LossFamily::kMixNca, "mixnca"}};
const std::vector<std::pair<Weighting, std::string>> kWeightings = {
    {Weighting::kConstantOne, "constant_one"}, {Weighting::kAdversarialHat, "adversarial_hat"}};

template <typename E>
std::string name_of(const std::vector<std::pair<E, std::string>>& table, E v) {
  for (const auto& [k, s] : table)
    if (k == v) return s;
  return "?";
}

template <typename E>
E parse(const std::vector<std::pair<E, std::string>>& table, const std::string& s,
        const char* field) {
  std::string valid;
  for (const auto& [k, name] : table) {
    if (name == s) return k;
    valid += (valid.empty() ? "" : "|") + name;
  }
  throw ConfigError(field, "unknown value '" + s + "' (" + valid + ")");
}

}  // namespace

std::string to_string(LossFamily f) { return name_of(kFamilies, f); }
LossFamily loss_family_from_string(const std::string& s) {
  return parse(kFamilies, s, "loss.family");
}
std::string to_string(Weighting w) { return name_of(kWeightings, w); }
Weighting weighting_from_string(const std::string& s) {
  return parse(kWeightings, s, "loss.weighting");
}

namespace {

// Re-roots a sub-config error under its place in the loss section.
template <class F>
void under(const std::string& prefix, F&& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    const std::string& f = e.field();
    const auto dot = f.find('.');
    const std::string leaf = dot == std::string::npos ? f : f.substr(dot + 1);
    const std::string msg = std::string(e.what()).substr(f.size() + 2);
    throw ConfigError(prefix + "." + leaf, msg);
  }
}

}  // namespace

void LossConfig::validate() const {
  under("loss.g1", [&] { g1.validate(); });
  if (positives == 0) throw ConfigError("loss.positives", "M must be at least 1");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("loss.lambda", "must lie in (0, 1]");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("loss.alpha", "must be non-negative");
  }
  if (alpha > 0.0) {
    under("loss.g2", [&] { g2.validate(); });
    under("loss.attack", [&] { attack.validate(); });
  }
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"family", to_string(c.family)}, {"g1", c.g1},
                     {"positives", c.positives},      {"lambda", c.lambda},
                     {"alpha", c.alpha},              {"g2", c.g2},
                     {"weighting", to_string(c.weighting)},
                     {"attack", c.attack},            {"attack_anchor", c.attack_anchor}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  if (j.contains("family")) c.family = loss_family_from_string(j["family"].get<std::string>());
  if (j.contains("g1")) j["g1"].get_to(c.g1);
  c.positives = j.value("positives", c.positives);
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("g2")) j["g2"].get_to(c.g2);
  if (j.contains("weighting")) {
    c.weighting = weighting_from_string(j["weighting"].get<std::string>());
  }
  if (j.contains("attack")) j["attack"].get_to(c.attack);
  c.attack_anchor = j.value("attack_anchor", c.attack_anchor);
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "simclr", "debiased", "debiased_hardneg", "adv", "intcl_fig1", "intnacl_fig1"};
  return names;
}

LossConfig preset(const std::string& name) {
  LossConfig c;
  const EstimatorConfig g0{EstimatorKind::kG0};
  const EstimatorConfig g1{EstimatorKind::kG1};
  const EstimatorConfig g2{EstimatorKind::kG2};
  c.g1 = g0;
  c.g2 = g0;
  if (name == "simclr") return c;
  if (name == "debiased") {
    c.g1 = g1;
    return c;
  }
  if (name == "debiased_hardneg") {
    c.g1 = g2;
    return c;
  }
  if (name == "adv") {
    c.alpha = 1.0;
    return c;
  }
  if (name == "intcl_fig1" || name == "intnacl_fig1") {
    c.g1 = g2;
    c.g2 = g2;
    c.alpha = 1.0;
    c.weighting = Weighting::kAdversarialHat;
    if (name == "intnacl_fig1") {
      c.family = LossFamily::kMixNca;
      c.positives = 5;
      c.lambda = 0.5;
    }
    return c;
  }
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("preset", "unknown preset '" + name + "'; valid presets: " + valid);
}

Tensor per_anchor_loss(const Encoder& enc, const ContrastiveBatch& batch,
                       const EstimatorConfig& g) {
  return nca_rows(batch, encode_batch(enc, batch), g, 1);
}

Tensor contrastive_loss(const Encoder& enc, const ContrastiveBatch& batch,
                        const EstimatorConfig& g) {
  if (batch.positives_per_anchor != 1) {
    throw ValueError("contrastive_loss: batch has M = " +
                     std::to_string(batch.positives_per_anchor) + "; use nca_loss for M > 1");
  }
  return mean(per_anchor_loss(enc, batch, g));
}

Tensor nca_loss(const Encoder& enc, const ContrastiveBatch& batch, const EstimatorConfig& g,
                std::size_t m) {
  return mean(nca_rows(batch, encode_batch(enc, batch), g, m));
}

Tensor mixnca_loss(const Encoder& enc, const ContrastiveBatch& batch, const EstimatorConfig& g,
                   std::size_t m, double lambda) {
  return mean(mixnca_rows(enc, batch, encode_batch(enc, batch), g, m, lambda));
}

Tensor mixnca_omegas(const Encoder& enc, const ContrastiveBatch& batch,
                     const EstimatorConfig& g, std::size_t m, double lambda) {
  const Encoded e = encode_batch(enc, batch);
  const auto mix = mix_terms(enc, batch, e, g, m, lambda);
  const std::size_t n = batch.anchors, cols = mix.sims.size();
  std::vector<double> out(n * cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t a = 0; a < n; ++a) {
      const double es = std::exp(mix.sims[j][a] / g.t);
      out[a * cols + j] = es / (es + mix.kg[j][a]);
    }
  }
  return Tensor({n, cols}, std::move(out));
}

Tensor adversarial_weight(const Encoder& enc, const ContrastiveBatch& batch,
                          const EstimatorConfig& g) {
  return per_anchor_loss(enc, batch, g).detach();
}

Tensor robust_loss(const Encoder& enc, const ContrastiveBatch& batch, const Tensor& adv_inputs,
                   const EstimatorConfig& g2, Weighting weighting,
                   const std::optional<Tensor>& fixed_weights) {
  const Encoded e = encode_batch(enc, batch);
  const Tensor w = weights_for(batch, e, g2, weighting, fixed_weights);
  return mean(mul(robust_rows(enc, batch, e, adv_inputs, g2), w));
}

Tensor contrastive_adv_positive(const Encoder& enc, const ContrastiveBatch& batch,
                                const EstimatorConfig& g, const AttackConfig& attack,
                                bool attack_anchor) {
  const Encoder fixed = untracked(enc);
  ContrastiveBatch plain = batch;
  plain.views = batch.views.detach();
  return generate_adv(fixed, plain, encode_batch(fixed, plain), g, attack, attack_anchor);
}

Tensor intnacl_loss(const Encoder& enc, const ContrastiveBatch& batch, const LossConfig& config,
                    const IntNaClOptions& options) {
  config.validate();
  const Encoded e = encode_batch(enc, batch);
  const Tensor nacl = mean(nacl_rows(enc, batch, e, config));
  if (config.alpha == 0.0) return nacl;
  Tensor adv;
  if (options.adv_inputs) {
    adv = options.adv_inputs->detach();
  } else {
    adv = contrastive_adv_positive(enc, batch, config.g2, config.attack, config.attack_anchor);
    if (options.attack_count) ++*options.attack_count;
  }
  const Tensor w = weights_for(batch, e, config.g2, config.weighting, options.fixed_weights);
  const Tensor robust = mean(mul(robust_rows(enc, batch, e, adv, config.g2), w));
  return add(nacl, scale(robust, config.alpha));
}

}  // namespace nacl
