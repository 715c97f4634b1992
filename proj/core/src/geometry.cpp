#include "owr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "owr/error.hpp"
#include "owr/scores.hpp"
#include "owr/stats.hpp"

namespace owr {

Matrix covariance(const Matrix& features) {
  if (features.rows() < 2) fail(ErrorKind::kInvalidArgument, "covariance needs n >= 2");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  const Matrix centered = features.rowwise() - mean;
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

double participation_ratio(const Matrix& features) {
  const Matrix cov = covariance(features);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) fail(ErrorKind::kNumeric, "eigendecomposition failed");
  const Eigen::VectorXd lambda = solver.eigenvalues().cwiseMax(0.0);
  const double sum = lambda.sum();
  const double sum_sq = lambda.squaredNorm();
  if (!(sum > 0.0) || !(sum_sq > 0.0)) fail(ErrorKind::kNumeric, "degenerate population");
  return sum * sum / sum_sq;
}

namespace {

Matrix unique_rows(const Matrix& features, std::size_t& removed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(features.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      if (features(a, c) != features(b, c)) return features(a, c) < features(b, c);
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<Eigen::Index> keep;
  keep.reserve(order.size());
  for (Eigen::Index idx : order) {
    if (!keep.empty() && features.row(keep.back()) == features.row(idx)) continue;
    keep.push_back(idx);
  }
  std::sort(keep.begin(), keep.end());
  removed = order.size() - keep.size();
  Matrix out(static_cast<Eigen::Index>(keep.size()), features.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features.row(keep[i]);
  return out;
}

}  // namespace

IntrinsicDimEstimate intrinsic_dim_mle(const Matrix& features, std::size_t k_min,
                                       std::size_t k_max) {
  if (k_min < 2 || k_max < k_min) {
    fail(ErrorKind::kInvalidArgument, "mle needs 2 <= k_min <= k_max");
  }
  IntrinsicDimEstimate est;
  const Matrix points = unique_rows(features, est.duplicates_collapsed);
  const auto n = static_cast<std::size_t>(points.rows());
  if (n <= k_max) fail(ErrorKind::kInvalidArgument, "mle needs more distinct points than k_max");

  const std::size_t nk = k_max - k_min + 1;
  std::vector<double> sum_mhat(nk, 0.0);
  std::vector<std::size_t> used(nk, 0);
  std::vector<std::pair<double, Eigen::Index>> dist(n);
  std::vector<double> log_t(k_max);
  // Gram-matrix distances pick the candidates; exact differences rank them.
  const Matrix centered = points.rowwise() - points.colwise().mean();
  const Eigen::VectorXd sq = centered.rowwise().squaredNorm();
  constexpr Eigen::Index kBlock = 256;
  Eigen::MatrixXd gram;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Eigen::Index offset = row % kBlock;
    if (offset == 0) {
      const Eigen::Index rows = std::min<Eigen::Index>(kBlock, centered.rows() - row);
      gram = centered.middleRows(row, rows) * centered.transpose();
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const double d = j == i ? std::numeric_limits<double>::infinity()
                              : sq(row) + sq(col) - 2.0 * gram(offset, col);
      dist[j] = {d, col};
    }
    const auto cut = static_cast<std::ptrdiff_t>(std::min(n - 1, k_max + 4));
    std::partial_sort(dist.begin(), dist.begin() + cut, dist.end());
    std::vector<double> exact(static_cast<std::size_t>(cut));
    for (std::ptrdiff_t j = 0; j < cut; ++j) {
      exact[static_cast<std::size_t>(j)] = (points.row(row) - points.row(dist[j].second)).squaredNorm();
    }
    std::sort(exact.begin(), exact.end());
    for (std::size_t j = 0; j < k_max; ++j) log_t[j] = 0.5 * std::log(exact[j]);

    // prefix sums of ln T_j let every k reuse the same neighbour list
    double prefix = 0.0;
    std::size_t next = 0;
    for (std::size_t k = 2; k <= k_max; ++k) {
      for (; next < k - 1; ++next) prefix += log_t[next];
      if (k < k_min) continue;
      const double s = static_cast<double>(k - 1) * log_t[k - 1] - prefix;
      if (!(s > 0.0)) continue;  // all k nearest equidistant: no information
      sum_mhat[k - k_min] += static_cast<double>(k - 1) / s;
      ++used[k - k_min];
    }
  }

  double total = 0.0;
  std::size_t ks = 0;
  for (std::size_t t = 0; t < nk; ++t) {
    if (used[t] == 0) continue;
    total += sum_mhat[t] / static_cast<double>(used[t]);
    ++ks;
  }
  if (ks == 0) fail(ErrorKind::kNumeric, "mle undefined: neighbour distances are all equal");
  est.dimension = total / static_cast<double>(ks);
  return est;
}

Centroids class_centroids(const Matrix& features, std::span<const std::int32_t> classes,
                          std::size_t n_classes) {
  if (static_cast<Eigen::Index>(classes.size()) != features.rows()) {
    fail(ErrorKind::kInvalidArgument, "class list length differs from feature rows");
  }
  const auto k = static_cast<Eigen::Index>(n_classes);
  Centroids c{Matrix::Zero(k, features.cols()), std::vector<bool>(n_classes, false)};
  std::vector<double> counts(n_classes, 0.0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const auto y = classes[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) fail(ErrorKind::kInvalidArgument, "class index out of range");
    c.means.row(y) += features.row(i);
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  for (std::size_t y = 0; y < n_classes; ++y) {
    if (counts[y] > 0.0) {
      c.means.row(static_cast<Eigen::Index>(y)) /= counts[y];
      c.present[y] = true;
    }
  }
  return c;
}

Vector mean_drift(const Centroids& centroids, const Matrix& features) {
  Vector sum = Vector::Zero(features.cols());
  if (features.rows() == 0) return sum;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index nearest = -1;
    for (Eigen::Index k = 0; k < centroids.means.rows(); ++k) {
      if (!centroids.present[static_cast<std::size_t>(k)]) continue;
      const double d = (features.row(i) - centroids.means.row(k)).squaredNorm();
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    if (nearest < 0) fail(ErrorKind::kInvalidArgument, "no centroids available");
    const Vector drift = (features.row(i) - centroids.means.row(nearest)).transpose();
    const double norm = drift.norm();
    if (norm > 0.0) sum += drift / norm;
  }
  return sum / static_cast<double>(features.rows());
}

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorKind::kNumeric, "cosine of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double drift_alignment(const Matrix& id_correct_features,
                       std::span<const std::int32_t> id_correct_preds, std::size_t n_classes,
                       const Matrix& id_wrong_features, const Matrix& ood_features) {
  if (id_wrong_features.rows() == 0) fail(ErrorKind::kInvalidArgument, "empty ID-wrong set");
  if (ood_features.rows() == 0) fail(ErrorKind::kInvalidArgument, "empty OOD set");
  const Centroids c = class_centroids(id_correct_features, id_correct_preds, n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (!c.present[k]) {
      fail(ErrorKind::kInvalidArgument,
           "class " + std::to_string(k) + " has no ID-correct sample for its centroid");
    }
  }
  return cosine(mean_drift(c, id_wrong_features), mean_drift(c, ood_features));
}

Projection2d pca_project_2d(std::span<const Matrix> populations) {
  if (populations.empty()) fail(ErrorKind::kInvalidArgument, "no populations to project");
  const Eigen::Index d = populations.front().cols();
  Eigen::Index total = 0;
  for (const auto& p : populations) {
    if (p.cols() != d) fail(ErrorKind::kInvalidArgument, "populations differ in dimension");
    total += p.rows();
  }
  if (total < 3) fail(ErrorKind::kInvalidArgument, "projection needs at least 3 pooled points");
  if (d < 2) fail(ErrorKind::kNumeric, "rank-deficient pooled data");
  Matrix pooled(total, d);
  Eigen::Index row = 0;
  for (const auto& p : populations) {
    pooled.middleRows(row, p.rows()) = p;
    row += p.rows();
  }
  Projection2d out;
  out.center = pooled.colwise().mean().transpose();
  const SortedEigen eig = sorted_symmetric_eigen(covariance(pooled));
  if (!(eig.values(0) > 0.0) || !(eig.values(1) > 1e-12 * eig.values(0))) {
    fail(ErrorKind::kNumeric, "rank-deficient pooled data");
  }
  out.axes = eig.vectors.leftCols(2);
  for (const auto& p : populations) {
    Matrix centered = p.rowwise() - out.center.transpose();
    out.coordinates.push_back(centered * out.axes);
  }
  return out;
}

namespace {

Matrix stride_subsample(const Matrix& m, std::size_t max_rows) {
  const auto n = static_cast<std::size_t>(m.rows());
  if (n <= max_rows || max_rows == 0) return m;
  Matrix out(static_cast<Eigen::Index>(max_rows), m.cols());
  for (std::size_t i = 0; i < max_rows; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(i * n / max_rows));
  }
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

std::vector<std::int32_t> predictions(const Matrix& logits) {
  std::vector<std::int32_t> p(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    p[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(stats::argmax(logits.row(i)));
  }
  return p;
}

PopulationGeometry describe(const std::string& name, const Matrix& features,
                            std::span<const std::int32_t> preds, std::size_t n_classes,
                            const GeometryOptions& options) {
  PopulationGeometry g;
  g.name = name;
  g.n = static_cast<std::size_t>(features.rows());
  try {
    g.participation_ratio = participation_ratio(features);
  } catch (const Error&) {
  }
  double pr_sum = 0.0;
  std::size_t pr_used = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == static_cast<std::int32_t>(k)) rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (rows.size() < 2) continue;
    try {
      pr_sum += participation_ratio(select_rows(features, rows));
      ++pr_used;
    } catch (const Error&) {
    }
  }
  if (pr_used > 0) g.participation_ratio_per_class_mean = pr_sum / static_cast<double>(pr_used);
  try {
    const auto est = intrinsic_dim_mle(stride_subsample(features, options.max_samples),
                                       options.mle_k_min, options.mle_k_max);
    g.intrinsic_dim_mle = est.dimension;
    g.mle_duplicates_collapsed = est.duplicates_collapsed;
  } catch (const Error&) {
  }
  return g;
}

}  // namespace

GeometryReport geometry_report(const Matrix& id_features, const Matrix& id_logits,
                               std::span<const std::int32_t> id_labels,
                               const Matrix& ood_features, const Matrix& ood_logits,
                               const GeometryOptions& options) {
  if (static_cast<Eigen::Index>(id_labels.size()) != id_features.rows()) {
    fail(ErrorKind::kInvalidArgument, "geometry requires labels for every ID sample");
  }
  const auto n_classes = static_cast<std::size_t>(id_logits.cols());
  const std::vector<std::int32_t> id_preds = predictions(id_logits);
  std::vector<Eigen::Index> correct, wrong;
  std::vector<std::int32_t> correct_preds, wrong_preds;
  for (std::size_t i = 0; i < id_preds.size(); ++i) {
    if (id_preds[i] == id_labels[i]) {
      correct.push_back(static_cast<Eigen::Index>(i));
      correct_preds.push_back(id_preds[i]);
    } else {
      wrong.push_back(static_cast<Eigen::Index>(i));
      wrong_preds.push_back(id_preds[i]);
    }
  }
  const Matrix correct_features = select_rows(id_features, correct);
  const Matrix wrong_features = select_rows(id_features, wrong);
  const std::vector<std::int32_t> ood_preds = predictions(ood_logits);

  GeometryReport report;
  report.populations.push_back(
      describe("id_correct", correct_features, correct_preds, n_classes, options));
  report.populations.push_back(
      describe("id_wrong", wrong_features, wrong_preds, n_classes, options));
  report.populations.push_back(describe("ood", ood_features, ood_preds, n_classes, options));

  const Centroids c = class_centroids(correct_features, correct_preds, n_classes);
  report.centroid_table = c.means;
  try {
    report.drift_alignment_cos =
        drift_alignment(correct_features, correct_preds, n_classes, wrong_features, ood_features);
  } catch (const Error&) {
  }
  return report;
}

}  // namespace owr
