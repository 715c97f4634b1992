#pragma once

// Representation-geometry probes over penultimate features.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "owr/types.hpp"

namespace owr {

/// Sample covariance with the unbiased (n−1) normalizer.
Matrix covariance(const Matrix& features);

/// (Σλ)² / Σλ² over covariance eigenvalues.
double participation_ratio(const Matrix& features);

struct IntrinsicDimEstimate {
  double dimension = 0.0;
  std::size_t duplicates_collapsed = 0;
};

inline constexpr std::size_t kDefaultMleKMin = 10;
inline constexpr std::size_t kDefaultMleKMax = 20;

/// Levina–Bickel nearest-neighbour maximum-likelihood estimate, averaged over
/// points and then over k in [k_min, k_max]. Exact duplicate rows are
/// collapsed first (reported in the result).
IntrinsicDimEstimate intrinsic_dim_mle(const Matrix& features, std::size_t k_min = kDefaultMleKMin,
                                       std::size_t k_max = kDefaultMleKMax);

/// Per-class means of `features` grouped by `classes`; rows for classes with
/// no member are left absent.
struct Centroids {
  Matrix means;                 // K × D
  std::vector<bool> present;    // K
};
Centroids class_centroids(const Matrix& features, std::span<const std::int32_t> classes,
                          std::size_t n_classes);

/// Mean of unit drift vectors (x − nearest present centroid). Rows that sit
/// exactly on a centroid contribute nothing.
Vector mean_drift(const Centroids& centroids, const Matrix& features);

double cosine(const Vector& a, const Vector& b);

/// Cosine between the mean drift of ID-wrong and of OOD features, with
/// centroids taken from ID-correct features grouped by predicted class.
/// Every class must have at least one ID-correct sample.
double drift_alignment(const Matrix& id_correct_features,
                       std::span<const std::int32_t> id_correct_preds, std::size_t n_classes,
                       const Matrix& id_wrong_features, const Matrix& ood_features);

struct Projection2d {
  Vector center;   // D
  Matrix axes;     // D × 2
  std::vector<Matrix> coordinates;  // one n_i × 2 block per population
};

/// Projects every population onto the top-2 principal axes of the pooled data.
Projection2d pca_project_2d(std::span<const Matrix> populations);

struct PopulationGeometry {
  std::string name;
  std::size_t n = 0;
  std::optional<double> participation_ratio;
  std::optional<double> participation_ratio_per_class_mean;
  std::optional<double> intrinsic_dim_mle;
  std::size_t mle_duplicates_collapsed = 0;
};

struct GeometryReport {
  std::vector<PopulationGeometry> populations;  // id_correct, id_wrong, ood
  std::optional<double> drift_alignment_cos;
  Matrix centroid_table;  // K × D, from ID-correct samples
  std::string drift_label = "drift-alignment (artifact definition)";
};

struct GeometryOptions {
  std::size_t mle_k_min = kDefaultMleKMin;
  std::size_t mle_k_max = kDefaultMleKMax;
  /// Populations larger than this are subsampled by even striding.
  std::size_t max_samples = 5000;
};

/// Builds the full report from ID test features/logits/labels and pooled OOD
/// features/logits. Per-class participation ratios group rows by predicted
/// class. Estimators that cannot run on a population (too few samples,
/// degenerate variance) leave the field empty.
GeometryReport geometry_report(const Matrix& id_features, const Matrix& id_logits,
                               std::span<const std::int32_t> id_labels,
                               const Matrix& ood_features, const Matrix& ood_logits,
                               const GeometryOptions& options = {});

}  // namespace owr
