#include "nacl/estimators.hpp"

#include <cmath>

#include "nacl/error.hpp"
#include "nacl/ops.hpp"

namespace nacl {

namespace {

void require_sets(const std::string& op, const Tensor& u, const Tensor* v) {
  if (u.rank() != 2) {
    throw ShapeError(op + ": expected [batch x n] sims, got " + shape_str(u.shape()));
  }
  if (v && (v->rank() != 2 || v->rows() != u.rows())) {
    throw ShapeError(op + ": sims shape mismatch " + shape_str(u.shape()) + " vs " +
                     shape_str(v->shape()));
  }
  if (u.cols() == 0) throw ValueError(op + ": empty negative set");
  if (v && v->cols() == 0) throw ValueError(op + ": empty positive set v");
}

// Row mean as sum / count, so sum-of-powers ratios with exponent 0 agree with it.
Tensor row_average(const Tensor& a) {
  return div(sum_rows(a), Tensor::scalar(static_cast<double>(a.cols())));
}

// (pos - tau * mean(exp(v / t))) / (1 - tau), clamped below at e^{-1/t}.
Tensor debias(const Tensor& negative_term, const Tensor& v_sims, double tau_plus, double t) {
  const Tensor positive_term = row_average(exp(scale(v_sims, 1.0 / t)));
  const Tensor raw =
      scale(sub(negative_term, scale(positive_term, tau_plus)), 1.0 / (1.0 - tau_plus));
  return maximum(raw, estimator_floor(t));
}

void require_unit_rows(const std::string& op, const Tensor& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-9) {
      throw ValueError(op + ": row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

// Inner products of a single anchor with every row of `set`, as [1 x count].
Tensor anchor_sims(const std::string& op, const Tensor& anchor, const Tensor& set) {
  const Tensor a = anchor.rank() == 1 ? reshape(anchor, {1, anchor.numel()}) : anchor;
  if (a.rank() != 2 || a.rows() != 1) {
    throw ShapeError(op + ": anchor must be a single vector, got " + shape_str(anchor.shape()));
  }
  if (set.rank() != 2 || set.cols() != a.cols()) {
    throw ShapeError(op + ": set shape " + shape_str(set.shape()) + " does not match anchor " +
                     shape_str(anchor.shape()));
  }
  require_unit_rows(op, a);
  require_unit_rows(op, set);
  return matmul(a, transpose(set));
}

}  // namespace

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kG0: return "g0";
    case EstimatorKind::kG1: return "g1";
    case EstimatorKind::kG2: return "g2";
  }
  return "?";
}

EstimatorKind estimator_kind_from_string(const std::string& s) {
  if (s == "g0") return EstimatorKind::kG0;
  if (s == "g1") return EstimatorKind::kG1;
  if (s == "g2") return EstimatorKind::kG2;
  throw ConfigError("estimator.kind", "unknown estimator '" + s + "' (g0|g1|g2)");
}

void EstimatorConfig::validate() const {
  if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("estimator.t", "must be positive");
  if (!(tau_plus >= 0.0 && tau_plus < 1.0)) {
    throw ConfigError("estimator.tau_plus", "must lie in [0, 1)");
  }
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ConfigError("estimator.beta", "must be non-negative");
  }
}

void to_json(nlohmann::json& j, const EstimatorConfig& c) {
  j = nlohmann::json{
      {"kind", to_string(c.kind)}, {"t", c.t}, {"tau_plus", c.tau_plus}, {"beta", c.beta}};
}

void from_json(const nlohmann::json& j, EstimatorConfig& c) {
  c.kind = estimator_kind_from_string(j.value("kind", to_string(c.kind)));
  c.t = j.value("t", c.t);
  c.tau_plus = j.value("tau_plus", c.tau_plus);
  c.beta = j.value("beta", c.beta);
}

double estimator_floor(double t) { return std::exp(-1.0 / t); }

Tensor g0_rows(const Tensor& u_sims, double t) {
  require_sets("g0", u_sims, nullptr);
  return row_average(exp(scale(u_sims, 1.0 / t)));
}

Tensor g1_rows(const Tensor& u_sims, const Tensor& v_sims, double tau_plus, double t) {
  require_sets("g1", u_sims, &v_sims);
  return debias(row_average(exp(scale(u_sims, 1.0 / t))), v_sims, tau_plus, t);
}

Tensor g2_rows(const Tensor& u_sims, const Tensor& v_sims, double tau_plus, double beta,
               double t) {
  require_sets("g2", u_sims, &v_sims);
  // sum k^{b+1} / sum k^b with k = exp(s / t).
  const Tensor num = sum_rows(exp(scale(u_sims, (beta + 1.0) / t)));
  const Tensor den = sum_rows(exp(scale(u_sims, beta / t)));
  return debias(div(num, den), v_sims, tau_plus, t);
}

Tensor estimate_rows(const EstimatorConfig& config, const Tensor& u_sims, const Tensor& v_sims) {
  switch (config.kind) {
    case EstimatorKind::kG0: return g0_rows(u_sims, config.t);
    case EstimatorKind::kG1: return g1_rows(u_sims, v_sims, config.tau_plus, config.t);
    case EstimatorKind::kG2:
      return g2_rows(u_sims, v_sims, config.tau_plus, config.beta, config.t);
  }
  throw ValueError("estimate_rows: unknown estimator");
}

double g0(const Tensor& anchor, const Tensor& negatives, double t) {
  return g0_rows(anchor_sims("g0", anchor, negatives), t).item();
}

double g1(const Tensor& anchor, const Tensor& u, const Tensor& v, double tau_plus, double t) {
  return g1_rows(anchor_sims("g1", anchor, u), anchor_sims("g1", anchor, v), tau_plus, t).item();
}

double g2(const Tensor& anchor, const Tensor& u, const Tensor& v, double tau_plus, double beta,
          double t) {
  return g2_rows(anchor_sims("g2", anchor, u), anchor_sims("g2", anchor, v), tau_plus, beta, t)
      .item();
}

}  // namespace nacl
