#pragma once

#include <cstddef>
#include <vector>

#include "nacl/tensor.hpp"

namespace nacl {

// One contrastive minibatch. All input rows live in a single `views` pool so
// each row is encoded once per step; every role is a list of row indices into
// that pool.
//
// Per anchor a (N anchors):
//   anchor_index[a]                       the anchor view x
//   positive_index[a*M + j]               positives x+_j, j < M
//   negative_index[a*K + i]               negatives x-_i, i < K
//   debias_index[a*m + j]                 extra positives v_j for g1/g2
//   fresh_negative_index[j][a*K + i]      independent negative set for the
//                                         j-th mixed positive, j < M-1
//   mix_partner_index[a*(M-1) + j]        negative mixed with x+ for the
//                                         j-th mixed positive
//
// `views` may be a tracked tensor; gradients then flow to the input rows.
struct ContrastiveBatch {
  Tensor views;
  std::size_t anchors = 0;
  std::size_t positives_per_anchor = 1;
  std::size_t negatives_per_anchor = 0;
  std::size_t debias_per_anchor = 0;
  std::vector<std::size_t> anchor_index;
  std::vector<std::size_t> positive_index;
  std::vector<std::size_t> negative_index;
  std::vector<std::size_t> debias_index;
  std::vector<std::vector<std::size_t>> fresh_negative_index;
  std::vector<std::size_t> mix_partner_index;

  // Throws ShapeError / ValueError on inconsistent sizes or indices.
  void validate() const;
  bool has_fresh_negatives() const { return !fresh_negative_index.empty(); }
  std::size_t input_dim() const { return views.cols(); }

  // Materialized views of each role.
  Tensor anchor_inputs() const;          // [N x D]
  Tensor positive_inputs() const;        // [N x M x D]
  Tensor negative_inputs() const;        // [N x K x D]
  Tensor debias_inputs() const;          // [N x m x D]
  Tensor fresh_negative_inputs() const;  // [N x (M-1) x K x D]

  // Same batch with only the first `count` positives per anchor and no fresh
  // negative sets or mix partners.
  ContrastiveBatch with_positives(std::size_t count) const;
};

}  // namespace nacl
