#pragma once

#include <cstddef>
#include <vector>

#include "nacl/tensor.hpp"

// Differentiable primitives. Every function records onto the tape of its
// tracked operands; untracked operands give untracked results. Binary
// elementwise operations require equal shapes, except that either side may be
// a rank-0 scalar.
namespace nacl {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
// Elementwise max(a, c). The gradient passes where a > c.
Tensor maximum(const Tensor& a, double c);
// sign with sign(0) = 0. Piecewise constant, so the result is never tracked.
Tensor sign(const Tensor& a);

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Full reductions to a rank-0 scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [r x c] -> [r]
Tensor sum_rows(const Tensor& a);
Tensor mean_rows(const Tensor& a);

// [r x c] + [c] applied to every row.
Tensor add_bias(const Tensor& a, const Tensor& bias);
// Row i of [r x c] multiplied by s[i], s of shape [r].
Tensor scale_rows(const Tensor& a, const Tensor& s);

// Each row divided by its L2 norm. A zero row is a ValueError.
Tensor l2_normalize_rows(const Tensor& a);
// [r x c], [r x c] -> [r] of per-row inner products.
Tensor row_dot(const Tensor& a, const Tensor& b);

// Rows of a selected by index, in order.
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index);
// For a [r x c] and index of r*k entries: out[i][j] = a[i][index[i*k + j]].
Tensor take_along_rows(const Tensor& a, std::vector<std::size_t> index, std::size_t k);
Tensor concat_rows(const std::vector<Tensor>& parts);

// [n x d] -> [n x n] of squared Euclidean distances, computed from differences.
Tensor pairwise_sq_distances(const Tensor& a);
// Row-wise softmax restricted to entries where mask is nonzero; masked
// entries are exactly 0. Every row needs at least one unmasked entry.
Tensor masked_row_softmax(const Tensor& logits, const Tensor& mask);
// [r x K] logits, r labels -> [r] of -log softmax(logits)[label].
Tensor softmax_cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& labels);

}  // namespace nacl
