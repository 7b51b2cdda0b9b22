#include "nacl/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nacl/error.hpp"
#include "nacl/ops.hpp"
#include "nacl/tape.hpp"

namespace nacl {

namespace {

std::size_t row_count(const Tensor& x) { return x.rank() >= 2 ? x.shape()[0] : 1; }

std::vector<double> row_values(const Tensor& losses, std::size_t rows) {
  if (losses.numel() != rows) {
    throw ShapeError("attack: loss function returned " + shape_str(losses.shape()) + " for " +
                     std::to_string(rows) + " rows");
  }
  return losses.values();
}

// Both ends of the ball on coordinate `c`, pulled inward until the computed
// offset from c is within epsilon.
std::pair<double, double> ball_edges(double c, double epsilon) {
  double lo = c - epsilon;
  double hi = c + epsilon;
  while (std::abs(lo - c) > epsilon) lo = std::nextafter(lo, c);
  while (std::abs(hi - c) > epsilon) hi = std::nextafter(hi, c);
  return {lo, hi};
}

struct Best {
  Tensor x;
  std::vector<double> loss;
  std::vector<bool> success;
  bool empty = true;
};

void offer(Best& best, const Tensor& candidate, const std::vector<double>& loss,
           const SuccessFn& success_fn) {
  const std::size_t rows = loss.size();
  std::vector<bool> success = success_fn ? success_fn(candidate) : std::vector<bool>(rows, false);
  if (success.size() != rows) throw ShapeError("attack: success predicate row count mismatch");
  if (best.empty) {
    best = {candidate, loss, success, false};
    return;
  }
  const std::size_t width = candidate.numel() / rows;
  auto& dst = best.x.mutable_values();
  for (std::size_t r = 0; r < rows; ++r) {
    const bool better = success[r] != best.success[r] ? success[r] : loss[r] > best.loss[r];
    if (!better) continue;
    std::copy_n(candidate.values().begin() + static_cast<std::ptrdiff_t>(r * width), width,
                dst.begin() + static_cast<std::ptrdiff_t>(r * width));
    best.loss[r] = loss[r];
    best.success[r] = success[r];
  }
}

Tensor sign_step(const Tensor& x, const Tensor& grad, double step) {
  std::vector<double> out = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double g = grad[i];
    out[i] += g > 0.0 ? step : (g < 0.0 ? -step : 0.0);
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

AttackConfig AttackConfig::fgsm(double epsilon) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.step_size = epsilon;
  c.iterations = 1;
  c.restarts = 1;
  return c;
}

AttackConfig AttackConfig::pgd(double epsilon) {
  AttackConfig c;
  c.epsilon = epsilon;
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("attack.epsilon", "must be a finite non-negative budget");
  }
  // A zero budget never steps, so FGSM(0) with step 0 is accepted.
  if (!(step_size > 0.0 || (epsilon == 0.0 && step_size == 0.0)) || !std::isfinite(step_size)) {
    throw ConfigError("attack.step_size", "must be positive");
  }
  if (iterations == 0) throw ConfigError("attack.iterations", "must be at least 1");
  if (restarts == 0) throw ConfigError("attack.restarts", "must be at least 1");
  if (domain_bounds && !(domain_bounds->lo < domain_bounds->hi)) {
    throw ConfigError("attack.domain_bounds", "lo must be below hi");
  }
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon},       {"step_size", c.step_size},
                     {"iterations", c.iterations}, {"restarts", c.restarts},
                     {"seed", c.seed},             {"domain_bounds", nullptr}};
  if (c.domain_bounds) j["domain_bounds"] = {c.domain_bounds->lo, c.domain_bounds->hi};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.step_size = j.value("step_size", c.step_size);
  c.iterations = j.value("iterations", c.iterations);
  c.restarts = j.value("restarts", c.restarts);
  c.seed = j.value("seed", c.seed);
  if (j.contains("domain_bounds") && !j["domain_bounds"].is_null()) {
    const auto& b = j["domain_bounds"];
    if (!b.is_array() || b.size() != 2) {
      throw ConfigError("attack.domain_bounds", "expected [lo, hi]");
    }
    c.domain_bounds = DomainBounds{b[0].get<double>(), b[1].get<double>()};
  }
}

LossAndGrad loss_and_grad(const RowLossFn& loss_fn, const Tensor& x) {
  Tape tape;
  const Tensor xl = tape.leaf(x.detach());
  const Tensor losses = loss_fn(xl);
  LossAndGrad out{row_values(losses, row_count(x)), Tensor::zeros(x.shape())};
  const Tensor root = losses.rank() == 0 ? losses : sum(losses);
  // A loss that ignores its input has zero gradient.
  if (root.tracked()) out.grad = tape.backward(root).grad(xl);
  return out;
}

Tensor project_linf(const Tensor& candidate, const Tensor& center, double epsilon,
                    const std::optional<DomainBounds>& bounds) {
  if (candidate.shape() != center.shape()) {
    throw ShapeError("project_linf: " + shape_str(candidate.shape()) + " vs " +
                     shape_str(center.shape()));
  }
  std::vector<double> out(candidate.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [lo, hi] = ball_edges(center[i], epsilon);
    if (bounds) {
      const double blo = std::max(lo, bounds->lo);
      const double bhi = std::min(hi, bounds->hi);
      // An empty intersection keeps the ball; the budget is the hard contract.
      if (blo <= bhi) {
        lo = blo;
        hi = bhi;
      }
    }
    out[i] = std::clamp(candidate[i], lo, hi);
  }
  return Tensor(candidate.shape(), std::move(out));
}

Tensor fgsm(const RowLossFn& loss_fn, const Tensor& x, double epsilon,
            const std::optional<DomainBounds>& bounds) {
  if (!(epsilon >= 0.0)) throw ValueError("fgsm: epsilon must be non-negative");
  if (epsilon == 0.0) return x.detach();
  const auto lg = loss_and_grad(loss_fn, x);
  return project_linf(sign_step(x, lg.grad, epsilon), x, epsilon, bounds);
}

Tensor pgd(const RowLossFn& loss_fn, const Tensor& x, const AttackConfig& config,
           const PgdOptions& options) {
  config.validate();
  if (config.epsilon == 0.0) return x.detach();
  const Tensor center = x.detach();
  const double eps = config.epsilon;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> offset(-eps, eps);

  Best best;
  for (std::size_t restart = 0; restart < config.restarts; ++restart) {
    Tensor cur = center;
    bool candidate = false;
    if (restart == 0 && options.warm_start) {
      cur = project_linf(options.warm_start->detach(), center, eps, config.domain_bounds);
      candidate = true;
    } else if (restart > 0) {
      std::vector<double> start = center.values();
      for (auto& v : start) v += offset(rng);
      cur = project_linf(Tensor(center.shape(), std::move(start)), center, eps,
                         config.domain_bounds);
    }
    for (std::size_t it = 0; it < config.iterations; ++it) {
      const auto lg = loss_and_grad(loss_fn, cur);
      if (candidate) offer(best, cur, lg.row_losses, options.success);
      cur = project_linf(sign_step(cur, lg.grad, config.step_size), center, eps,
                         config.domain_bounds);
      candidate = true;
    }
    offer(best, cur, row_values(loss_fn(cur), row_count(cur)), options.success);
  }
  return best.x;
}

Tensor attack(const RowLossFn& loss_fn, const Tensor& x, const AttackConfig& config,
              const PgdOptions& options) {
  if (config.is_fgsm() && !options.warm_start && !options.success) {
    config.validate();
    return fgsm(loss_fn, x, config.epsilon, config.domain_bounds);
  }
  return pgd(loss_fn, x, config, options);
}

double linf_distance(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

}  // namespace nacl
