#include "nacl/batch.hpp"

#include <string>

#include "nacl/error.hpp"

namespace nacl {

namespace {

void check_size(const char* what, const std::vector<std::size_t>& v, std::size_t expected) {
  if (v.size() != expected) {
    throw ShapeError(std::string("contrastive batch: ") + what + " has " +
                     std::to_string(v.size()) + " entries, expected " + std::to_string(expected));
  }
}

void check_bounds(const char* what, const std::vector<std::size_t>& v, std::size_t rows) {
  for (auto i : v) {
    if (i >= rows) {
      throw ValueError(std::string("contrastive batch: ") + what + " index " + std::to_string(i) +
                       " outside a pool of " + std::to_string(rows) + " views");
    }
  }
}

Tensor materialize(const Tensor& views, const std::vector<std::size_t>& index, Shape shape) {
  const std::size_t d = views.cols();
  std::vector<double> out;
  out.reserve(index.size() * d);
  for (auto i : index) {
    const auto r = views.data().subspan(i * d, d);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace

void ContrastiveBatch::validate() const {
  if (views.rank() != 2) {
    throw ShapeError("contrastive batch: views must be [P x D], got " + shape_str(views.shape()));
  }
  if (anchors == 0) throw ValueError("contrastive batch: no anchors");
  if (positives_per_anchor == 0) throw ValueError("contrastive batch: M must be at least 1");
  if (negatives_per_anchor == 0) throw ValueError("contrastive batch: K must be at least 1");
  const std::size_t n = anchors, m = positives_per_anchor, k = negatives_per_anchor;
  check_size("anchor_index", anchor_index, n);
  check_size("positive_index", positive_index, n * m);
  check_size("negative_index", negative_index, n * k);
  check_size("debias_index", debias_index, n * debias_per_anchor);
  const std::size_t rows = views.rows();
  check_bounds("anchor_index", anchor_index, rows);
  check_bounds("positive_index", positive_index, rows);
  check_bounds("negative_index", negative_index, rows);
  check_bounds("debias_index", debias_index, rows);
  if (has_fresh_negatives()) {
    if (fresh_negative_index.size() != m - 1) {
      throw ShapeError("contrastive batch: expected " + std::to_string(m - 1) +
                       " fresh negative sets, got " +
                       std::to_string(fresh_negative_index.size()));
    }
    for (const auto& set : fresh_negative_index) {
      check_size("fresh_negative_index", set, n * k);
      check_bounds("fresh_negative_index", set, rows);
    }
    check_size("mix_partner_index", mix_partner_index, n * (m - 1));
    check_bounds("mix_partner_index", mix_partner_index, rows);
  } else if (!mix_partner_index.empty()) {
    throw ShapeError("contrastive batch: mix partners given without fresh negative sets");
  }
}

Tensor ContrastiveBatch::anchor_inputs() const {
  return materialize(views, anchor_index, {anchors, input_dim()});
}

Tensor ContrastiveBatch::positive_inputs() const {
  return materialize(views, positive_index, {anchors, positives_per_anchor, input_dim()});
}

Tensor ContrastiveBatch::negative_inputs() const {
  return materialize(views, negative_index, {anchors, negatives_per_anchor, input_dim()});
}

Tensor ContrastiveBatch::debias_inputs() const {
  return materialize(views, debias_index, {anchors, debias_per_anchor, input_dim()});
}

Tensor ContrastiveBatch::fresh_negative_inputs() const {
  const std::size_t sets = fresh_negative_index.size();
  const std::size_t k = negatives_per_anchor;
  std::vector<std::size_t> order;
  order.reserve(anchors * sets * k);
  for (std::size_t a = 0; a < anchors; ++a)
    for (std::size_t j = 0; j < sets; ++j)
      for (std::size_t i = 0; i < k; ++i) order.push_back(fresh_negative_index[j][a * k + i]);
  return materialize(views, order, {anchors, sets, k, input_dim()});
}

ContrastiveBatch ContrastiveBatch::with_positives(std::size_t count) const {
  if (count == 0 || count > positives_per_anchor) {
    throw ValueError("with_positives: count must lie in [1, M]");
  }
  ContrastiveBatch out = *this;
  out.positives_per_anchor = count;
  out.positive_index.clear();
  for (std::size_t a = 0; a < anchors; ++a)
    for (std::size_t j = 0; j < count; ++j)
      out.positive_index.push_back(positive_index[a * positives_per_anchor + j]);
  out.fresh_negative_index.clear();
  out.mix_partner_index.clear();
  return out;
}

}  // namespace nacl
