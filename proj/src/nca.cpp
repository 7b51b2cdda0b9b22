#include "nacl/nca.hpp"

#include <cmath>
#include <limits>

#include "nacl/error.hpp"
#include "nacl/ops.hpp"
#include "nacl/tape.hpp"

namespace nacl {

namespace {

Tensor off_diagonal(std::size_t n) {
  Tensor mask = Tensor::filled({n, n}, 1.0);
  auto& v = mask.mutable_values();
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 0.0;
  return mask;
}

Tensor peer_mask(const std::vector<std::size_t>& labels) {
  const std::size_t n = labels.size();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && labels[i] == labels[j]) {
        m[i * n + j] = 1.0;
        any = true;
      }
    }
    if (!any) {
      throw ValueError("nca: point " + std::to_string(i) + " (class " +
                       std::to_string(labels[i]) + ") has no same-class peer");
    }
  }
  return Tensor({n, n}, std::move(m));
}

double sq_distance(const Tensor& z, std::size_t i, std::size_t j) {
  const std::size_t d = z.cols();
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = z[i * d + k] - z[j * d + k];
    s += diff * diff;
  }
  return s;
}

double dot(const Tensor& z, std::size_t i, std::size_t j) {
  const std::size_t d = z.cols();
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += z[i * d + k] * z[j * d + k];
  return s;
}

}  // namespace

void LabeledSet::validate() const {
  if (points.rank() != 2 || points.rows() != labels.size()) {
    throw ShapeError("labeled set: points " + shape_str(points.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.size() < 2) throw ValueError("labeled set: need at least 2 points");
}

Tensor nca_pij(const Tensor& embedded) {
  if (embedded.rank() != 2 || embedded.rows() < 2) {
    throw ValueError("nca_pij: need at least 2 embedded points, got " +
                     shape_str(embedded.shape()));
  }
  return masked_row_softmax(neg(pairwise_sq_distances(embedded)), off_diagonal(embedded.rows()));
}

Tensor nca_embedded_loss(const Tensor& embedded, const std::vector<std::size_t>& labels) {
  if (embedded.rank() != 2 || embedded.rows() != labels.size()) {
    throw ShapeError("nca loss: " + shape_str(embedded.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const Tensor mask = peer_mask(labels);
  return neg(sum(log(sum_rows(mul(nca_pij(embedded), mask)))));
}

Tensor nca_supervised_loss(const LabeledSet& set, const Tensor& a) {
  set.validate();
  return nca_embedded_loss(matmul(set.points, a), set.labels);
}

Tensor nca_supervised_loss(const LabeledSet& set, const Encoder& enc) {
  set.validate();
  return nca_embedded_loss(enc.encode(set.points), set.labels);
}

double loo_1nn_accuracy(const Tensor& embedded, const std::vector<std::size_t>& labels) {
  const std::size_t n = embedded.rows();
  if (n < 2 || labels.size() != n) throw ValueError("loo_1nn_accuracy: need 2+ labeled points");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = sq_distance(embedded, i, j);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    correct += labels[arg] == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

NcaFit fit_linear_nca(const LabeledSet& set, const Tensor& a0, std::size_t max_steps, double lr) {
  set.validate();
  NcaFit fit{a0.detach(), {}, 0, false};
  for (std::size_t step = 0;; ++step) {
    if (loo_1nn_accuracy(matmul(set.points, fit.a), set.labels) == 1.0) {
      fit.reached_perfect = true;
      fit.steps_to_perfect = step;
      break;
    }
    if (step == max_steps) break;
    Tape tape;
    const Tensor a = tape.leaf(fit.a);
    const Tensor loss = nca_supervised_loss(set, a);
    fit.losses.push_back(loss.item());
    const Tensor g = tape.backward(loss).grad(a);
    auto& v = fit.a.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
  return fit;
}

EquivalenceResult equivalence_check(const Tensor& embeddings,
                                    const std::vector<Neighbourhood>& neighbourhoods) {
  if (embeddings.rank() != 2) throw ShapeError("equivalence_check: expected [n x d]");
  const std::size_t n = embeddings.rows();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(std::sqrt(dot(embeddings, i, i)) - 1.0) > 1e-12) {
      throw ValueError("equivalence_check: row " + std::to_string(i) +
                       " is not unit-norm; the two forms only agree on the unit sphere");
    }
  }
  if (neighbourhoods.empty()) throw ValueError("equivalence_check: no neighbourhoods");
  EquivalenceResult out;
  for (const auto& h : neighbourhoods) {
    if (h.positives.empty() || h.negatives.empty()) {
      throw ValueError("equivalence_check: every neighbourhood needs positives and negatives");
    }
    auto in_range = [n](std::size_t j) {
      if (j >= n) throw ValueError("equivalence_check: index out of range");
      return j;
    };
    double dist_pos = 0.0, dist_neg = 0.0, dot_pos = 0.0, dot_neg = 0.0;
    const std::size_t i = in_range(h.anchor);
    for (auto p : h.positives) {
      dist_pos += std::exp(-0.5 * sq_distance(embeddings, i, in_range(p)));
      dot_pos += std::exp(dot(embeddings, i, p));
    }
    for (auto q : h.negatives) {
      dist_neg += std::exp(-0.5 * sq_distance(embeddings, i, in_range(q)));
      dot_neg += std::exp(dot(embeddings, i, q));
    }
    out.distance_form -= std::log(dist_pos / (dist_pos + dist_neg));
    out.dot_form -= std::log(dot_pos / (dot_pos + dot_neg));
  }
  const double count = static_cast<double>(neighbourhoods.size());
  out.distance_form /= count;
  out.dot_form /= count;
  return out;
}

}  // namespace nacl
