#include "nacl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nacl/error.hpp"

namespace nacl {

void Dataset::validate() const {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ShapeError("dataset: features " + shape_str(features.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> counts(class_count, 0);
  for (auto l : labels) {
    if (l >= class_count) {
      throw ValueError("dataset: label " + std::to_string(l) + " outside " +
                       std::to_string(class_count) + " classes");
    }
    ++counts[l];
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0) throw ValueError("dataset: class " + std::to_string(c) + " is empty");
  }
  for (double v : features.data()) {
    if (!std::isfinite(v)) throw ValueError("dataset: non-finite feature");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  const std::size_t d = dim();
  std::vector<double> feats;
  std::vector<std::size_t> labs;
  feats.reserve(rows.size() * d);
  for (auto r : rows) {
    if (r >= size()) throw ValueError("dataset subset: row out of range");
    const auto row = features.data().subspan(r * d, d);
    feats.insert(feats.end(), row.begin(), row.end());
    labs.push_back(labels[r]);
  }
  return {Tensor({rows.size(), d}, std::move(feats)), std::move(labs), class_count, seed};
}

Dataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                   std::uint64_t seed) {
  if (classes < 2) throw ValueError("make_blobs: need at least 2 classes");
  if (dim < 2) throw ValueError("make_blobs: need at least 2 dimensions");
  if (n_per_class == 0) throw ValueError("make_blobs: n_per_class must be positive");
  if (!(spread >= 0.0)) throw ValueError("make_blobs: spread must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
  for (auto& m : means) {
    double norm = 0.0;
    while (norm < 1e-8) {
      norm = 0.0;
      for (auto& v : m) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (auto& v : m) v /= norm;
  }
  std::vector<double> feats;
  std::vector<std::size_t> labels;
  feats.reserve(classes * n_per_class * dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t k = 0; k < dim; ++k) feats.push_back(means[c][k] + spread * normal(rng));
      labels.push_back(c);
    }
  }
  const std::size_t n = classes * n_per_class;
  return {Tensor({n, dim}, std::move(feats)), std::move(labels), classes, seed};
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValueError("train_test_split: fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * ds.size()));
  if (cut == 0 || cut == ds.size()) throw ValueError("train_test_split: an empty side");
  return {ds.subset({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut)}),
          ds.subset({order.begin() + static_cast<std::ptrdiff_t>(cut), order.end()})};
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t d = ds.dim();
  for (std::size_t k = 0; k < d; ++k) out << 'f' << k << ',';
  out << "label\n";
  out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) out << ds.features.at(i, k) << ',';
    out << ds.labels[i] << '\n';
  }
  if (!out) throw Error("short write to " + path.string());
}

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValueError(path.string() + ": empty file");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2) throw ValueError(path.string() + ": need features and a label column");
  const std::size_t d = columns - 1;
  std::vector<double> feats;
  std::vector<std::size_t> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw ValueError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(columns) + " fields");
    }
    try {
      for (std::size_t k = 0; k < d; ++k) feats.push_back(std::stod(cells[k]));
      const long label = std::stol(cells[d]);
      if (label < 0) throw std::invalid_argument("negative label");
      labels.push_back(static_cast<std::size_t>(label));
    } catch (const std::exception&) {
      throw ValueError(path.string() + ":" + std::to_string(lineno) + ": malformed value");
    }
  }
  if (labels.empty()) throw ValueError(path.string() + ": no rows");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  const std::size_t n = labels.size();
  Dataset ds{Tensor({n, d}, std::move(feats)), std::move(labels), classes, 0};
  ds.validate();
  return ds;
}

void AugmentConfig::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(noise_std)) throw ConfigError("augment.noise_std", "must be finite and >= 0");
  if (!ok(scale_jitter) || scale_jitter >= 1.0) {
    throw ConfigError("augment.scale_jitter", "must lie in [0, 1)");
  }
  if (!ok(max_angle)) throw ConfigError("augment.max_angle", "must be finite and >= 0");
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{{"noise_std", c.noise_std},
                     {"scale_jitter", c.scale_jitter},
                     {"rotation", c.rotation},
                     {"max_angle", c.max_angle}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  c.noise_std = j.value("noise_std", c.noise_std);
  c.scale_jitter = j.value("scale_jitter", c.scale_jitter);
  c.rotation = j.value("rotation", c.rotation);
  c.max_angle = j.value("max_angle", c.max_angle);
}

Tensor augment(const Tensor& x, const AugmentConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (x.rank() != 2) throw ShapeError("augment: expected [n x d], got " + shape_str(x.shape()));
  std::vector<double> out = x.values();
  if (config.is_identity()) return Tensor(x.shape(), std::move(out));
  const std::size_t n = x.rows(), d = x.cols();
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> axis(0, d - 1);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * d;
    if (config.rotation && d >= 2) {
      const std::size_t p = axis(rng);
      std::size_t q = axis(rng);
      while (q == p) q = axis(rng);
      const double theta = config.max_angle * unit(rng);
      const double c = std::cos(theta), s = std::sin(theta);
      const double a = row[p], b = row[q];
      row[p] = c * a - s * b;
      row[q] = s * a + c * b;
    }
    if (config.scale_jitter > 0.0) {
      const double f = 1.0 + config.scale_jitter * unit(rng);
      for (std::size_t k = 0; k < d; ++k) row[k] *= f;
    }
    if (config.noise_std > 0.0) {
      for (std::size_t k = 0; k < d; ++k) row[k] += config.noise_std * noise(rng);
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor augment(const Tensor& x, const AugmentConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return augment(x, config, rng);
}

ContrastiveBatch build_contrastive_batch(const Tensor& features,
                                         const std::vector<std::size_t>& anchors,
                                         std::size_t positives, bool need_fresh,
                                         const AugmentConfig& aug, std::mt19937_64& rng,
                                         std::size_t debias_count) {
  const std::size_t n = anchors.size();
  const std::size_t m = positives;
  if (n < 2) throw ValueError("contrastive batch: need at least 2 anchors for negatives");
  if (m == 0) throw ValueError("contrastive batch: M must be at least 1");
  const std::size_t d = features.cols();
  const std::size_t v = m + 1;
  const std::size_t fresh_sets = need_fresh ? m - 1 : 0;
  const std::size_t main_rows = n * v;
  const std::size_t pool_rows = main_rows * (1 + fresh_sets) + n * debias_count;

  std::vector<std::size_t> source;
  source.reserve(pool_rows);
  for (std::size_t b = 0; b < n; ++b) source.insert(source.end(), v, anchors[b]);
  for (std::size_t b = 0; b < n; ++b) source.insert(source.end(), debias_count, anchors[b]);
  for (std::size_t f = 0; f < fresh_sets; ++f)
    for (std::size_t b = 0; b < n; ++b) source.insert(source.end(), v, anchors[b]);

  std::vector<double> raw;
  raw.reserve(pool_rows * d);
  for (auto r : source) {
    if (r >= features.rows()) throw ValueError("contrastive batch: anchor row out of range");
    const auto row = features.data().subspan(r * d, d);
    raw.insert(raw.end(), row.begin(), row.end());
  }

  ContrastiveBatch batch;
  batch.views = augment(Tensor({pool_rows, d}, std::move(raw)), aug, rng);
  batch.anchors = n;
  batch.positives_per_anchor = m;
  batch.negatives_per_anchor = (n - 1) * v;
  batch.debias_per_anchor = debias_count;

  auto others = [&](std::size_t a, std::size_t offset) {
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      for (std::size_t k = 0; k < v; ++k) idx.push_back(offset + b * v + k);
    }
    return idx;
  };

  const std::size_t debias_offset = main_rows;
  const std::size_t fresh_offset = main_rows + n * debias_count;
  batch.fresh_negative_index.resize(fresh_sets);
  std::uniform_int_distribution<std::size_t> pick(0, batch.negatives_per_anchor - 1);
  for (std::size_t a = 0; a < n; ++a) {
    batch.anchor_index.push_back(a * v);
    for (std::size_t j = 0; j < m; ++j) batch.positive_index.push_back(a * v + 1 + j);
    for (std::size_t j = 0; j < debias_count; ++j) {
      batch.debias_index.push_back(debias_offset + a * debias_count + j);
    }
    const auto negatives = others(a, 0);
    batch.negative_index.insert(batch.negative_index.end(), negatives.begin(), negatives.end());
    for (std::size_t f = 0; f < fresh_sets; ++f) {
      const auto fresh = others(a, fresh_offset + f * main_rows);
      auto& set = batch.fresh_negative_index[f];
      set.insert(set.end(), fresh.begin(), fresh.end());
      batch.mix_partner_index.push_back(negatives[pick(rng)]);
    }
  }
  batch.validate();
  return batch;
}

ContrastiveBatch sample_contrastive_batch(const Dataset& ds, std::size_t n, std::size_t positives,
                                          bool need_fresh, const AugmentConfig& aug,
                                          std::uint64_t seed, std::size_t debias_count) {
  if (n > ds.size()) {
    throw ValueError("sample_contrastive_batch: N = " + std::to_string(n) + " exceeds " +
                     std::to_string(ds.size()) + " points");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(n);
  return build_contrastive_batch(ds.features, order, positives, need_fresh, aug, rng,
                                 debias_count);
}

}  // namespace nacl
