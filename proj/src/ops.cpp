#include "nacl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nacl/error.hpp"
#include "nacl/tape.hpp"

namespace nacl {

namespace {

using Inputs = std::span<const Tensor* const>;
using Needs = std::span<const bool>;
using Grads = std::span<std::optional<Tensor>>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.shape()[0]),
                  static_cast<Eigen::Index>(t.shape()[1]));
}

void require_matrix(const std::string& op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(op + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

[[noreturn]] void mismatch(const std::string& op, const Tensor& a, const Tensor& b) {
  throw ShapeError(op + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast check_binary(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.rank() == 0) return Broadcast::kLeftScalar;
  if (b.rank() == 0) return Broadcast::kRightScalar;
  mismatch(op, a, b);
}

// f(x, y) elementwise; dfa/dfb are the partials with respect to x and y.
template <class F, class Dfa, class Dfb>
Tensor binary(const std::string& op, const Tensor& a, const Tensor& b, F f, Dfa dfa, Dfb dfb) {
  const Broadcast mode = check_binary(op, a, b);
  auto forward = [f, mode](Inputs in) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    const Shape shape = mode == Broadcast::kLeftScalar ? y.shape() : x.shape();
    std::vector<double> out(shape_numel(shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double xv = mode == Broadcast::kLeftScalar ? x[0] : x[i];
      const double yv = mode == Broadcast::kRightScalar ? y[0] : y[i];
      out[i] = f(xv, yv);
    }
    return Tensor(shape, std::move(out));
  };
  auto vjp = [dfa, dfb, mode](Inputs in, const Tensor&, const Tensor& g, Needs needs,
                              Grads grads) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    auto xv = [&](std::size_t i) { return mode == Broadcast::kLeftScalar ? x[0] : x[i]; };
    auto yv = [&](std::size_t i) { return mode == Broadcast::kRightScalar ? y[0] : y[i]; };
    if (needs[0]) {
      std::vector<double> ga(x.numel(), 0.0);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[mode == Broadcast::kLeftScalar ? 0 : i] += g[i] * dfa(xv(i), yv(i));
      }
      grads[0] = Tensor(x.shape(), std::move(ga));
    }
    if (needs[1]) {
      std::vector<double> gb(y.numel(), 0.0);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        gb[mode == Broadcast::kRightScalar ? 0 : i] += g[i] * dfb(xv(i), yv(i));
      }
      grads[1] = Tensor(y.shape(), std::move(gb));
    }
  };
  return Tape::apply(op, {&a, &b}, forward, vjp);
}

// f(x) elementwise; df(x, fx) is the derivative.
template <class F, class Df>
Tensor unary(const std::string& op, const Tensor& a, F f, Df df) {
  auto forward = [f](Inputs in) {
    const Tensor& x = *in[0];
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return Tensor(x.shape(), std::move(out));
  };
  auto vjp = [df](Inputs in, const Tensor& out, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    std::vector<double> ga(x.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * df(x[i], out[i]);
    grads[0] = Tensor(x.shape(), std::move(ga));
  };
  return Tape::apply(op, {&a}, forward, vjp);
}

void check_index(const std::string& op, std::size_t idx, std::size_t bound) {
  if (idx >= bound) {
    throw ValueError(op + ": index " + std::to_string(idx) + " out of range for extent " +
                     std::to_string(bound));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor maximum(const Tensor& a, double c) {
  return unary(
      "maximum", a, [c](double x) { return x > c ? x : c; },
      [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

Tensor sign(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
  }
  return Tensor(a.shape(), std::move(out));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    Tensor out = Tensor::zeros({x.rows(), y.cols()});
    MutMap(out.mutable_values().data(), static_cast<Eigen::Index>(x.rows()),
           static_cast<Eigen::Index>(y.cols()))
        .noalias() = as_matrix(x) * as_matrix(y);
    return out;
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs needs, Grads grads) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    if (needs[0]) {
      Tensor gx = Tensor::zeros(x.shape());
      MutMap(gx.mutable_values().data(), static_cast<Eigen::Index>(x.rows()),
             static_cast<Eigen::Index>(x.cols()))
          .noalias() = as_matrix(g) * as_matrix(y).transpose();
      grads[0] = std::move(gx);
    }
    if (needs[1]) {
      Tensor gy = Tensor::zeros(y.shape());
      MutMap(gy.mutable_values().data(), static_cast<Eigen::Index>(y.rows()),
             static_cast<Eigen::Index>(y.cols()))
          .noalias() = as_matrix(x).transpose() * as_matrix(g);
      grads[1] = std::move(gy);
    }
  };
  return Tape::apply("matmul", {&a, &b}, forward, vjp);
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return Tensor({c, r}, std::move(out));
  };
  auto vjp = [](Inputs, const Tensor&, const Tensor& g, Needs, Grads grads) {
    grads[0] = transpose(g.detach());
  };
  return Tape::apply("transpose", {&a}, forward, vjp);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto forward = [shape](Inputs in) { return Tensor(shape, in[0]->values()); };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    grads[0] = Tensor(in[0]->shape(), g.values());
  };
  return Tape::apply("reshape", {&a}, forward, vjp);
}

Tensor sum(const Tensor& a) {
  auto forward = [](Inputs in) {
    double s = 0.0;
    for (double v : in[0]->data()) s += v;
    return Tensor::scalar(s);
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    grads[0] = Tensor::filled(in[0]->shape(), g.item());
  };
  return Tape::apply("sum", {&a}, forward, vjp);
}

Tensor mean(const Tensor& a) {
  auto forward = [](Inputs in) {
    double s = 0.0;
    for (double v : in[0]->data()) s += v;
    return Tensor::scalar(s / static_cast<double>(in[0]->numel()));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    grads[0] = Tensor::filled(in[0]->shape(), g.item() / static_cast<double>(in[0]->numel()));
  };
  return Tape::apply("mean", {&a}, forward, vjp);
}

Tensor sum_rows(const Tensor& a) {
  require_matrix("sum_rows", a);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += x[i * c + j];
      out[i] = s;
    }
    return Tensor({r}, std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> gx(r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i];
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("sum_rows", {&a}, forward, vjp);
}

Tensor mean_rows(const Tensor& a) {
  require_matrix("mean_rows", a);
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.cols()));
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_matrix("add_bias", a);
  if (bias.rank() != 1 || bias.shape()[0] != a.cols()) mismatch("add_bias", a, bias);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const Tensor& b = *in[1];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
    return Tensor(x.shape(), std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    if (needs[0]) grads[0] = g.detach();
    if (needs[1]) {
      std::vector<double> gb(c, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      grads[1] = Tensor({c}, std::move(gb));
    }
  };
  return Tape::apply("add_bias", {&a, &bias}, forward, vjp);
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  require_matrix("scale_rows", a);
  if (s.rank() != 1 || s.shape()[0] != a.rows()) mismatch("scale_rows", a, s);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * w[i];
    return Tensor(x.shape(), std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs needs, Grads grads) {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const std::size_t r = x.rows(), c = x.cols();
    if (needs[0]) {
      std::vector<double> gx(r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i * c + j] * w[i];
      grads[0] = Tensor(x.shape(), std::move(gx));
    }
    if (needs[1]) {
      std::vector<double> gw(r, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gw[i] += g[i * c + j] * x[i * c + j];
      grads[1] = Tensor({r}, std::move(gw));
    }
  };
  return Tape::apply("scale_rows", {&a, &s}, forward, vjp);
}

Tensor l2_normalize_rows(const Tensor& a) {
  require_matrix("l2_normalize_rows", a);
  auto norms = [](const Tensor& x) {
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> n(r);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
      n[i] = std::sqrt(s);
    }
    return n;
  };
  auto forward = [norms](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    const auto n = norms(x);
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
      if (n[i] == 0.0) {
        throw ValueError("l2_normalize_rows: row " + std::to_string(i) + " is zero");
      }
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / n[i];
    }
    return Tensor(x.shape(), std::move(out));
  };
  auto vjp = [norms](Inputs in, const Tensor& y, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    const auto n = norms(x);
    std::vector<double> gx(r * c);
    for (std::size_t i = 0; i < r; ++i) {
      double yg = 0.0;
      for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        gx[i * c + j] = (g[i * c + j] - y[i * c + j] * yg) / n[i];
      }
    }
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("l2_normalize_rows", {&a}, forward, vjp);
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_matrix("row_dot", a);
  if (a.shape() != b.shape()) mismatch("row_dot", a, b);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * y[i * c + j];
      out[i] = s;
    }
    return Tensor({r}, std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs needs, Grads grads) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    const std::size_t r = x.rows(), c = x.cols();
    for (int side = 0; side < 2; ++side) {
      if (!needs[side]) continue;
      const Tensor& other = side == 0 ? y : x;
      std::vector<double> gs(r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gs[i * c + j] = g[i] * other[i * c + j];
      grads[side] = Tensor(x.shape(), std::move(gs));
    }
  };
  return Tape::apply("row_dot", {&a, &b}, forward, vjp);
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
  require_matrix("gather_rows", a);
  for (auto i : index) check_index("gather_rows", i, a.rows());
  if (index.empty()) throw ValueError("gather_rows: empty index");
  auto forward = [index](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t c = x.cols();
    std::vector<double> out(index.size() * c);
    for (std::size_t k = 0; k < index.size(); ++k) {
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(index[k] * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(k * c));
    }
    return Tensor({index.size(), c}, std::move(out));
  };
  auto vjp = [index](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t c = x.cols();
    std::vector<double> gx(x.numel(), 0.0);
    for (std::size_t k = 0; k < index.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) gx[index[k] * c + j] += g[k * c + j];
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("gather_rows", {&a}, forward, vjp);
}

Tensor take_along_rows(const Tensor& a, std::vector<std::size_t> index, std::size_t k) {
  require_matrix("take_along_rows", a);
  if (k == 0 || index.size() != a.rows() * k) {
    throw ShapeError("take_along_rows: index of " + std::to_string(index.size()) +
                     " entries does not match " + std::to_string(a.rows()) + " rows x " +
                     std::to_string(k));
  }
  for (auto i : index) check_index("take_along_rows", i, a.cols());
  auto forward = [index, k](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * k);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * c + index[i * k + j]];
    return Tensor({r, k}, std::move(out));
  };
  auto vjp = [index, k](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> gx(x.numel(), 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * c + index[i * k + j]] += g[i * k + j];
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("take_along_rows", {&a}, forward, vjp);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValueError("concat_rows: no parts");
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) {
    require_matrix("concat_rows", p);
    if (p.cols() != parts.front().cols()) mismatch("concat_rows", parts.front(), p);
    inputs.push_back(&p);
  }
  auto forward = [](Inputs in) {
    std::size_t rows = 0;
    for (const Tensor* p : in) rows += p->rows();
    const std::size_t c = in[0]->cols();
    std::vector<double> out;
    out.reserve(rows * c);
    for (const Tensor* p : in) out.insert(out.end(), p->data().begin(), p->data().end());
    return Tensor({rows, c}, std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs needs, Grads grads) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t n = in[k]->numel();
      if (needs[k]) {
        grads[k] = Tensor(in[k]->shape(),
                          std::vector<double>(g.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                              g.data().begin() +
                                                  static_cast<std::ptrdiff_t>(offset + n)));
      }
      offset += n;
    }
  };
  return Tape::apply("concat_rows", inputs, forward, vjp);
}

Tensor pairwise_sq_distances(const Tensor& a) {
  require_matrix("pairwise_sq_distances", a);
  auto forward = [](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = x[i * d + k] - x[j * d + k];
          s += diff * diff;
        }
        out[i * n + j] = s;
      }
    }
    return Tensor({n, n}, std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> gx(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double w = 2.0 * (g[i * n + j] + g[j * n + i]);
        for (std::size_t k = 0; k < d; ++k) gx[i * d + k] += w * (x[i * d + k] - x[j * d + k]);
      }
    }
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("pairwise_sq_distances", {&a}, forward, vjp);
}

Tensor masked_row_softmax(const Tensor& logits, const Tensor& mask) {
  require_matrix("masked_row_softmax", logits);
  if (logits.shape() != mask.shape()) mismatch("masked_row_softmax", logits, mask);
  if (mask.tracked()) throw ValueError("masked_row_softmax: mask must be a constant");
  const Tensor m = mask.detach();
  auto forward = [m](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) {
        if (m[i * c + j] != 0.0) peak = std::max(peak, x[i * c + j]);
      }
      if (peak == -std::numeric_limits<double>::infinity()) {
        throw ValueError("masked_row_softmax: row " + std::to_string(i) + " is fully masked");
      }
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        if (m[i * c + j] != 0.0) {
          out[i * c + j] = std::exp(x[i * c + j] - peak);
          z += out[i * c + j];
        }
      }
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
    }
    return Tensor(x.shape(), std::move(out));
  };
  auto vjp = [](Inputs in, const Tensor& p, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> gx(r * c);
    for (std::size_t i = 0; i < r; ++i) {
      double pg = 0.0;
      for (std::size_t j = 0; j < c; ++j) pg += p[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = p[i * c + j] * (g[i * c + j] - pg);
    }
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("masked_row_softmax", {&logits}, forward, vjp);
}

Tensor softmax_cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& labels) {
  require_matrix("softmax_cross_entropy_rows", logits);
  if (labels.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy_rows: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  }
  for (auto y : labels) check_index("softmax_cross_entropy_rows", y, logits.cols());
  auto softmax = [](const Tensor& x, std::size_t i, std::vector<double>& p) {
    const std::size_t c = x.cols();
    double peak = x[i * c];
    for (std::size_t j = 1; j < c; ++j) peak = std::max(peak, x[i * c + j]);
    double z = 0.0;
    p.resize(c);
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(x[i * c + j] - peak);
      z += p[j];
    }
    return std::pair{peak, z};
  };
  auto forward = [labels, softmax](Inputs in) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r);
    std::vector<double> p;
    for (std::size_t i = 0; i < r; ++i) {
      const auto [peak, z] = softmax(x, i, p);
      out[i] = std::log(z) + peak - x[i * c + labels[i]];
    }
    return Tensor({r}, std::move(out));
  };
  auto vjp = [labels, softmax](Inputs in, const Tensor&, const Tensor& g, Needs, Grads grads) {
    const Tensor& x = *in[0];
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> gx(r * c);
    std::vector<double> p;
    for (std::size_t i = 0; i < r; ++i) {
      const auto [peak, z] = softmax(x, i, p);
      for (std::size_t j = 0; j < c; ++j) {
        gx[i * c + j] = g[i] * (p[j] / z - (j == labels[i] ? 1.0 : 0.0));
      }
    }
    grads[0] = Tensor(x.shape(), std::move(gx));
  };
  return Tape::apply("softmax_cross_entropy_rows", {&logits}, forward, vjp);
}

}  // namespace nacl
