#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nacl/tensor.hpp"

namespace nacl {

struct DomainBounds {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const DomainBounds&) const = default;
};

// l-infinity attack schedule. FGSM is iterations = 1, restarts = 1,
// step_size = epsilon. epsilon = 0 is allowed and returns the input.
struct AttackConfig {
  double epsilon = 0.002;
  double step_size = 1e-2;
  std::size_t iterations = 10;
  std::size_t restarts = 2;
  std::optional<DomainBounds> domain_bounds;
  // Seeds the restart draws.
  std::uint64_t seed = 0;

  static AttackConfig fgsm(double epsilon);
  // Step 1e-2, 10 iterations, 2 restarts.
  static AttackConfig pgd(double epsilon);

  bool is_fgsm() const { return iterations == 1 && restarts == 1 && step_size == epsilon; }
  void validate() const;
  bool operator==(const AttackConfig&) const = default;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

// Maps an input batch x of shape [r x d] (or any tensor, treated as one row)
// to per-row losses: a tensor of r values, or a scalar when r = 1. The input
// handed to the function may be tracked; the returned loss must be built from
// it with differentiable ops.
using RowLossFn = std::function<Tensor(const Tensor& x)>;
// Per-row attack success on a candidate, e.g. misclassification.
using SuccessFn = std::function<std::vector<bool>(const Tensor& candidate)>;

struct PgdOptions {
  // Replaces the center as the first restart's starting point and is itself a
  // candidate. Must lie in the ball.
  std::optional<Tensor> warm_start;
  // When set, candidates are ranked by (success, loss) instead of loss alone.
  SuccessFn success;
};

// Values and input gradient of sum(loss_fn(x)).
struct LossAndGrad {
  std::vector<double> row_losses;
  Tensor grad;
};
LossAndGrad loss_and_grad(const RowLossFn& loss_fn, const Tensor& x);

// Closest point to `candidate` whose computed offset from `center` satisfies
// |c - x| <= epsilon in floating point, clamped to the domain where possible.
Tensor project_linf(const Tensor& candidate, const Tensor& center, double epsilon,
                    const std::optional<DomainBounds>& bounds = std::nullopt);

// x + epsilon * sign(grad), projected. Untracked result.
Tensor fgsm(const RowLossFn& loss_fn, const Tensor& x, double epsilon,
            const std::optional<DomainBounds>& bounds = std::nullopt);

// Projected sign-gradient ascent with restarts. Restart 0 starts at x (or the
// warm start); later restarts start uniformly in the ball. Each row keeps its
// best candidate over all post-step iterates. Untracked result.
Tensor pgd(const RowLossFn& loss_fn, const Tensor& x, const AttackConfig& config,
           const PgdOptions& options = {});

// pgd, or the cheaper fgsm path when the config is FGSM without a warm start.
Tensor attack(const RowLossFn& loss_fn, const Tensor& x, const AttackConfig& config,
              const PgdOptions& options = {});

// max |a - b| over all entries.
double linf_distance(const Tensor& a, const Tensor& b);

}  // namespace nacl
