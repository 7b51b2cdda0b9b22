#include "nacl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nacl/error.hpp"

namespace nacl {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x,
                        double h) {
  if (!(h > 0.0)) throw ValueError("finite_diff_grad: step must be positive");
  Tensor probe = x.detach();
  std::vector<double> grad(x.numel());
  for (std::size_t k = 0; k < x.numel(); ++k) {
    const double original = x[k];
    probe.mutable_values()[k] = original + h;
    const double up = fn(probe);
    probe.mutable_values()[k] = original - h;
    const double down = fn(probe);
    probe.mutable_values()[k] = original;
    grad[k] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

double relative_error(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace nacl
