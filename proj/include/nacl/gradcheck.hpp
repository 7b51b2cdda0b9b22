#pragma once

#include <functional>

#include "nacl/tensor.hpp"

namespace nacl {

// Central differences (fn(x + h e_k) - fn(x - h e_k)) / 2h for every
// coordinate k of x. fn receives untracked tensors.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x,
                        double h);

// ||a - b||_2 / max(||a||_2, ||b||_2). Two zero tensors compare as 0.
double relative_error(const Tensor& a, const Tensor& b);

}  // namespace nacl
