#include "owr/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "owr/error.hpp"
#include "owr/stats.hpp"
#include "text.hpp"

namespace owr {
namespace {

void require_oriented(const ScoreVector& sv) {
  if (sv.direction != Direction::kOodLarger) {
    fail(ErrorKind::kInvalidArgument,
         "score '" + sv.score_name + "' must be oriented ood_larger before metrics");
  }
}

void require_labels(const Matrix& logits, std::span<const std::int32_t> labels) {
  if (labels.empty() && logits.rows() > 0) fail(ErrorKind::kInvalidArgument, "missing labels");
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    fail(ErrorKind::kInvalidArgument, "labels and logits differ in length");
  }
  if (logits.rows() == 0) fail(ErrorKind::kInvalidArgument, "no samples");
}

}  // namespace

double auroc(std::span<const double> negatives, std::span<const double> positives) {
  if (negatives.empty() || positives.empty()) {
    fail(ErrorKind::kInvalidArgument, "auroc needs nonempty ID and OOD sets");
  }
  std::vector<double> pooled;
  pooled.reserve(negatives.size() + positives.size());
  pooled.insert(pooled.end(), negatives.begin(), negatives.end());
  pooled.insert(pooled.end(), positives.begin(), positives.end());
  const std::vector<double> ranks = stats::midranks(pooled);

  double rank_sum = 0.0;
  for (std::size_t i = negatives.size(); i < pooled.size(); ++i) rank_sum += ranks[i];
  const double m = static_cast<double>(positives.size());
  const double n = static_cast<double>(negatives.size());
  const double u = rank_sum - m * (m + 1.0) / 2.0;
  return u / (n * m);
}

double auroc(const ScoreVector& id_scores, const ScoreVector& ood_scores) {
  require_oriented(id_scores);
  require_oriented(ood_scores);
  return auroc(std::span<const double>(id_scores.values), std::span<const double>(ood_scores.values));
}

double fpr_at_95_tpr(const ScoreVector& id_scores, const ScoreVector& ood_scores,
                     FprConvention convention) {
  require_oriented(id_scores);
  require_oriented(ood_scores);
  if (id_scores.values.empty() || ood_scores.values.empty()) {
    fail(ErrorKind::kInvalidArgument, "fpr95 needs nonempty ID and OOD sets");
  }
  if (convention == FprConvention::kIdAcceptance95) {
    if (id_scores.values.size() < kMinFprSamples) {
      fail(ErrorKind::kInvalidArgument, "unstable percentile: fewer than 20 ID samples");
    }
    const double tau = stats::percentile(id_scores.values, 95.0);
    const auto accepted = std::count_if(ood_scores.values.begin(), ood_scores.values.end(),
                                        [&](double s) { return s <= tau; });
    return static_cast<double>(accepted) / static_cast<double>(ood_scores.values.size());
  }
  if (ood_scores.values.size() < kMinFprSamples) {
    fail(ErrorKind::kInvalidArgument, "unstable percentile: fewer than 20 OOD samples");
  }
  const double tau = stats::percentile(ood_scores.values, 5.0);
  const auto flagged = std::count_if(id_scores.values.begin(), id_scores.values.end(),
                                     [&](double s) { return s >= tau; });
  return static_cast<double>(flagged) / static_cast<double>(id_scores.values.size());
}

double accuracy(const Matrix& logits, std::span<const std::int32_t> labels) {
  require_labels(logits, labels);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (stats::argmax(logits.row(i)) == labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(logits.rows());
}

double ece(const Matrix& logits, std::span<const std::int32_t> labels, std::size_t n_bins) {
  require_labels(logits, labels);
  if (n_bins < 1) fail(ErrorKind::kInvalidArgument, "ece needs at least one bin");
  const ScoreVector conf = msp(logits);
  std::vector<double> conf_sum(n_bins, 0.0), correct_sum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  const double bins = static_cast<double>(n_bins);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double c = conf.values[i];
    // right-inclusive bins: (b/B, (b+1)/B]
    auto b = static_cast<std::ptrdiff_t>(std::ceil(c * bins)) - 1;
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
    conf_sum[b] += c;
    correct_sum[b] += stats::argmax(logits.row(i)) == labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(logits.rows());
  double total = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double cb = static_cast<double>(count[b]);
    total += (cb / n) * std::abs(correct_sum[b] / cb - conf_sum[b] / cb);
  }
  return std::clamp(total, 0.0, 1.0);
}

double nll(const Matrix& logits, std::span<const std::int32_t> labels) {
  require_labels(logits, labels);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    total += stats::logsumexp(logits.row(i)) - logits(i, labels[i]);
  }
  return total / static_cast<double>(logits.rows());
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(ErrorKind::kInvalidArgument, "length mismatch");
  if (xs.size() < 3) fail(ErrorKind::kInvalidArgument, "spearman needs at least 3 pairs");
  const std::vector<double> rx = stats::midranks(xs);
  const std::vector<double> ry = stats::midranks(ys);
  return stats::pearson(rx, ry);
}

using text::csv_field;
using text::csv_optional;
using text::format_number;
using text::parse_number;
using text::parse_optional;
using text::split_csv_line;


std::string metric_rows_to_csv(std::span<const MetricRow> rows) {
  std::ostringstream os;
  os << kMetricCsvHeader << '\n';
  for (const auto& r : rows) {
    os << csv_field(r.method) << ',' << csv_field(r.dataset) << ',' << csv_field(r.noise) << ','
       << csv_field(r.score_name) << ',' << format_number(r.acc) << ','
       << csv_optional(r.near_auroc) << ',' << csv_optional(r.near_fpr95) << ','
       << csv_optional(r.far_auroc) << ',' << csv_optional(r.far_fpr95) << ','
       << csv_optional(r.ece) << ',' << csv_optional(r.nll) << '\n';
  }
  return os.str();
}

std::vector<MetricRow> metric_rows_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricCsvHeader) {
    fail(ErrorKind::kData, "metrics CSV header mismatch");
  }
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 11) fail(ErrorKind::kData, "metrics CSV row must have 11 fields");
    MetricRow r;
    r.method = f[0];
    r.dataset = f[1];
    r.noise = f[2];
    r.score_name = f[3];
    r.acc = parse_number(f[4]);
    r.near_auroc = parse_optional(f[5]);
    r.near_fpr95 = parse_optional(f[6]);
    r.far_auroc = parse_optional(f[7]);
    r.far_fpr95 = parse_optional(f[8]);
    r.ece = parse_optional(f[9]);
    r.nll = parse_optional(f[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace owr
