#pragma once

#include <string>

#include "json.hpp"
#include "nacl/tensor.hpp"

// Negative-term estimators. Each estimates E[exp(f(x)^T f(x^-) / t)] over the
// negatives of an anchor:
//
//   g0 = mean_i k_i                                      (plain average)
//   g1 = max{ (mean_i k_i - tau+ mean_j q_j) / (1 - tau+), e^{-1/t} }
//   g2 = max{ (sum k_i^{b+1} / sum k_i^b - tau+ mean_j q_j) / (1 - tau+), e^{-1/t} }
//
// with k_i = exp(f(x)^T f(u_i) / t) over negatives u and q_j = exp(f(x)^T f(v_j) / t)
// over extra positives v. The batched *_rows functions take raw inner products
// (not yet divided by t), one anchor per row, and return one estimate per row.
namespace nacl {

enum class EstimatorKind { kG0, kG1, kG2 };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_kind_from_string(const std::string& s);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kG0;
  double t = 1.0;
  double tau_plus = 0.01;
  double beta = 1.0;

  void validate() const;
  bool operator==(const EstimatorConfig&) const = default;
};

void to_json(nlohmann::json& j, const EstimatorConfig& c);
void from_json(const nlohmann::json& j, EstimatorConfig& c);

// Lower clamp of g1 and g2.
double estimator_floor(double t);

// [B x n] -> [B]
Tensor g0_rows(const Tensor& u_sims, double t);
// [B x n], [B x m] -> [B]
Tensor g1_rows(const Tensor& u_sims, const Tensor& v_sims, double tau_plus, double t);
Tensor g2_rows(const Tensor& u_sims, const Tensor& v_sims, double tau_plus, double beta,
               double t);
// Dispatch on config.kind. v_sims is ignored by g0.
Tensor estimate_rows(const EstimatorConfig& config, const Tensor& u_sims, const Tensor& v_sims);

// Single-anchor forms on unit vectors: anchor is [d] or [1 x d], the sets are
// [count x d]. Rows must be unit-norm.
double g0(const Tensor& anchor, const Tensor& negatives, double t);
double g1(const Tensor& anchor, const Tensor& u, const Tensor& v, double tau_plus, double t);
double g2(const Tensor& anchor, const Tensor& u, const Tensor& v, double tau_plus, double beta,
          double t);

}  // namespace nacl
