#pragma once

// Rank-based detection metrics (OOD is the positive class) and calibration
// diagnostics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "owr/scores.hpp"
#include "owr/types.hpp"

namespace owr {

/// Pr(s_ood > s_id) + ½·Pr(s_ood = s_id), via midranks. Both inputs must be
/// oriented OOD-larger.
double auroc(const ScoreVector& id_scores, const ScoreVector& ood_scores);

/// Raw-value variant used internally and by tests.
double auroc(std::span<const double> negatives, std::span<const double> positives);

enum class FprConvention {
  /// Threshold accepts 95% of ID; returns the fraction of OOD accepted.
  kIdAcceptance95,
  /// Threshold detects 95% of OOD; returns the fraction of ID flagged.
  kOodRecall95,
};

inline constexpr std::size_t kMinFprSamples = 20;

double fpr_at_95_tpr(const ScoreVector& id_scores, const ScoreVector& ood_scores,
                     FprConvention convention = FprConvention::kIdAcceptance95);

/// Percent of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Matrix& logits, std::span<const std::int32_t> labels);

/// Expected calibration error over equal-width MSP bins on (0,1].
double ece(const Matrix& logits, std::span<const std::int32_t> labels, std::size_t n_bins = 15);

/// Mean −log softmax probability of the labeled class.
double nll(const Matrix& logits, std::span<const std::int32_t> labels);

/// Rank correlation with midranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// One row of the unified benchmark. acc and the detection fields are percent
/// in [0,100]; ece is a fraction and nll is in nats. Absent near/far values
/// mean no such OOD pool was evaluated.
struct MetricRow {
  std::string method;
  std::string dataset;
  std::string noise;
  std::string score_name;
  double acc = 0.0;
  std::optional<double> near_auroc;
  std::optional<double> near_fpr95;
  std::optional<double> far_auroc;
  std::optional<double> far_fpr95;
  std::optional<double> ece;
  std::optional<double> nll;

  bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kMetricCsvHeader =
    "method,dataset,noise,score,acc,near_auroc,near_fpr95,far_auroc,far_fpr95,ece,nll";

std::string metric_rows_to_csv(std::span<const MetricRow> rows);
std::vector<MetricRow> metric_rows_from_csv(const std::string& text);

}  // namespace owr
