#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nacl/batch.hpp"
#include "nacl/tensor.hpp"

namespace nacl {

struct Dataset {
  Tensor features;  // [n x d]
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  // Labels in range, every class present, features finite.
  void validate() const;
  // Rows in the given order. Not validated; a subset may miss classes.
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

// K class means on the unit sphere in R^d, n_per_class Gaussian points
// (std = spread) around each. Rows are grouped by class.
Dataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                   std::uint64_t seed);

// Seeded permutation split; the first part gets round(train_fraction * n) rows.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed);

// Header f0..f{d-1},label; values written with round-trip precision.
void write_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path);

struct AugmentConfig {
  double noise_std = 0.05;
  // Each row is scaled by 1 + U(-scale_jitter, scale_jitter).
  double scale_jitter = 0.1;
  // Rotate each row in a random coordinate plane by U(-max_angle, max_angle).
  bool rotation = false;
  double max_angle = 0.3;

  void validate() const;
  bool is_identity() const { return noise_std == 0.0 && scale_jitter == 0.0 && !rotation; }
  bool operator==(const AugmentConfig&) const = default;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

// Independent augmentation of every row of x [n x d]: rotation, then scale,
// then additive noise.
Tensor augment(const Tensor& x, const AugmentConfig& config, std::mt19937_64& rng);
Tensor augment(const Tensor& x, const AugmentConfig& config, std::uint64_t seed);

// Pool layout, with V = M + 1 views per anchor (anchor view first, then the M
// positives):
//   [0, N*V)                   main views, anchor b at rows b*V .. b*V + M
//   [N*V, N*V + N*m)           debias positives, anchor b at N*V + b*m + j
//   next (M-1) blocks of N*V   fresh re-augmentations for the mixed positives
// Negatives of anchor a are all main views of the other anchors, so
// K = (N - 1)(M + 1).
ContrastiveBatch build_contrastive_batch(const Tensor& features,
                                         const std::vector<std::size_t>& anchors,
                                         std::size_t positives, bool need_fresh,
                                         const AugmentConfig& aug, std::mt19937_64& rng,
                                         std::size_t debias_count = 1);

// N anchors drawn without replacement, then build_contrastive_batch.
ContrastiveBatch sample_contrastive_batch(const Dataset& ds, std::size_t n, std::size_t positives,
                                          bool need_fresh, const AugmentConfig& aug,
                                          std::uint64_t seed, std::size_t debias_count = 1);

}  // namespace nacl
