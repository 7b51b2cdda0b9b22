#pragma once

#include <cstddef>
#include <vector>

#include "nacl/encoder.hpp"
#include "nacl/tensor.hpp"

// Supervised neighbourhood component analysis and the check that, on unit
// vectors, the squared-distance and inner-product forms of the contrastive
// loss coincide.
namespace nacl {

struct LabeledSet {
  Tensor points;  // [n x d]
  std::vector<std::size_t> labels;

  // n >= 2 and labels match rows. Peers are checked by the loss itself.
  void validate() const;
};

// p_ij = exp(-|z_i - z_j|^2) / sum_{k != i} exp(-|z_i - z_k|^2), p_ii = 0.
Tensor nca_pij(const Tensor& embedded);

// sum_i -log sum_{j : c_j = c_i, j != i} p_ij on already embedded points.
// A point without a same-class peer is a ValueError naming it.
Tensor nca_embedded_loss(const Tensor& embedded, const std::vector<std::size_t>& labels);
// Points mapped by the linear map A [d x k] (no normalization).
Tensor nca_supervised_loss(const LabeledSet& set, const Tensor& a);
// Points mapped by the encoder's normalized output.
Tensor nca_supervised_loss(const LabeledSet& set, const Encoder& enc);

// Leave-one-out 1-nearest-neighbour accuracy (ties go to the lower index).
double loo_1nn_accuracy(const Tensor& embedded, const std::vector<std::size_t>& labels);

struct NcaFit {
  Tensor a;
  std::vector<double> losses;
  // Gradient steps taken before LOO accuracy first reached 1, if it did.
  std::size_t steps_to_perfect = 0;
  bool reached_perfect = false;
};

// Plain gradient descent on A starting from `a0`; stops early once the LOO
// accuracy of the mapped points reaches 1.
NcaFit fit_linear_nca(const LabeledSet& set, const Tensor& a0, std::size_t max_steps, double lr);

struct Neighbourhood {
  std::size_t anchor = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

struct EquivalenceResult {
  double distance_form = 0.0;
  double dot_form = 0.0;
};

// Mean over neighbourhoods of
//   -log( sum_P k(i, p) / (sum_P k(i, p) + sum_N k(i, q)) )
// with k = exp(-|f_i - f_j|^2 / 2) (distance form) and k = exp(f_i^T f_j)
// (dot form). Rows must be unit-norm within 1e-12.
EquivalenceResult equivalence_check(const Tensor& embeddings,
                                    const std::vector<Neighbourhood>& neighbourhoods);

}  // namespace nacl
