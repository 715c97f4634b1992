#include "owr/taxonomy.hpp"

#include <algorithm>

#include "owr/error.hpp"
#include "owr/metrics.hpp"
#include "owr/stats.hpp"

namespace owr {

std::vector<std::size_t> id_wrong_set(const Matrix& logits, std::span<const std::int32_t> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows() ||
      (labels.empty() && logits.rows() > 0)) {
    fail(ErrorKind::kInvalidArgument, "missing labels");
  }
  std::vector<std::size_t> wrong;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (stats::argmax(logits.row(i)) != labels[i]) wrong.push_back(static_cast<std::size_t>(i));
  }
  return wrong;
}

std::string_view to_string(Group g) {
  switch (g) {
    case Group::kIdCorrectHigh: return "id_correct_high";
    case Group::kIdCorrectLow: return "id_correct_low";
    case Group::kIdWrongHigh: return "id_wrong_high";
    case Group::kIdWrongLow: return "id_wrong_low";
  }
  return "unknown";
}

std::string_view to_string(CollapseVerdict v) {
  switch (v) {
    case CollapseVerdict::kWorsened: return "collapse-worsened";
    case CollapseVerdict::kImproved: return "improved";
    case CollapseVerdict::kUnchanged: return "unchanged";
  }
  return "unknown";
}

GroupAssignment five_group_split(const ScoreVector& msp_scores, std::span<const std::size_t> wrong,
                                 MedianMode mode) {
  const std::size_t n = msp_scores.values.size();
  if (n == 0) fail(ErrorKind::kInvalidArgument, "empty ID set");
  std::vector<bool> is_wrong(n, false);
  for (std::size_t i : wrong) {
    if (i >= n) fail(ErrorKind::kInvalidArgument, "wrong index out of range");
    is_wrong[i] = true;
  }

  GroupAssignment out;
  out.group.resize(n);
  double correct_median = 0.0;
  double wrong_median = 0.0;
  if (mode == MedianMode::kGlobal) {
    correct_median = wrong_median = stats::median(msp_scores.values);
    out.msp_median = correct_median;
  } else {
    std::vector<double> c, w;
    for (std::size_t i = 0; i < n; ++i) (is_wrong[i] ? w : c).push_back(msp_scores.values[i]);
    if (!c.empty()) correct_median = stats::median(c);
    if (!w.empty()) wrong_median = stats::median(w);
    out.msp_median = correct_median;
    out.wrong_median = wrong_median;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double s = msp_scores.values[i];
    if (is_wrong[i]) {
      out.group[i] = s > wrong_median ? Group::kIdWrongHigh : Group::kIdWrongLow;
    } else {
      out.group[i] = s > correct_median ? Group::kIdCorrectHigh : Group::kIdCorrectLow;
    }
  }
  return out;
}

std::array<bool, 4> collapse_flags(const TaxonomyReport& report, double threshold) {
  std::array<bool, 4> flags{};
  for (std::size_t g = 0; g < 4; ++g) {
    const auto& s = report.groups[g];
    flags[g] = s.auroc.has_value() && *s.auroc < threshold && s.mass_pct > kCollapseMassGatePct;
  }
  return flags;
}

TaxonomyReport build_taxonomy(const ScoreVector& msp_scores, std::span<const std::size_t> wrong,
                              const ScoreVector& id_scores, const ScoreVector& ood_scores,
                              const TaxonomyOptions& options) {
  if (id_scores.direction != Direction::kOodLarger ||
      ood_scores.direction != Direction::kOodLarger) {
    fail(ErrorKind::kInvalidArgument, "taxonomy scores must be oriented ood_larger");
  }
  if (id_scores.values.size() != msp_scores.values.size()) {
    fail(ErrorKind::kInvalidArgument, "msp and score vectors differ in length");
  }
  const GroupAssignment split = five_group_split(msp_scores, wrong, options.median_mode);
  const std::size_t n = split.group.size();

  TaxonomyReport report;
  report.score_name = id_scores.score_name;
  report.median = split.msp_median;
  report.n_id = n;
  report.n_ood = ood_scores.values.size();

  std::array<std::vector<double>, 4> members;
  for (std::size_t i = 0; i < n; ++i) {
    members[static_cast<std::size_t>(split.group[i])].push_back(id_scores.values[i]);
  }
  for (std::size_t g = 0; g < 4; ++g) {
    auto& stats_g = report.groups[g];
    stats_g.group = kAllGroups[g];
    stats_g.count = members[g].size();
    stats_g.mass_pct = 100.0 * static_cast<double>(stats_g.count) / static_cast<double>(n);
    const bool wanted =
        kAllGroups[g] != Group::kIdCorrectHigh || options.include_correct_high_auroc;
    if (wanted && !members[g].empty() && !ood_scores.values.empty()) {
      stats_g.auroc = auroc(std::span<const double>(members[g]),
                            std::span<const double>(ood_scores.values));
    }
  }

  if (!wrong.empty() && !ood_scores.values.empty()) {
    std::vector<double> wrong_scores;
    wrong_scores.reserve(wrong.size());
    for (std::size_t i : wrong) wrong_scores.push_back(id_scores.values[i]);
    report.id_wrong_vs_ood_auroc =
        auroc(std::span<const double>(wrong_scores), std::span<const double>(ood_scores.values));
  }

  const auto flags = collapse_flags(report, options.collapse_threshold);
  for (std::size_t g = 0; g < 4; ++g) report.groups[g].flagged = flags[g];
  return report;
}

TaxonomyReport taxonomy_report(const EvalDump& id_dump, std::span<const EvalDump> ood_dumps,
                               const ScoreFunction& score, const TaxonomyOptions& options) {
  if (!id_dump.labels) fail(ErrorKind::kInvalidArgument, "taxonomy requires a labeled ID dump");
  const std::vector<std::size_t> wrong = id_wrong_set(id_dump.logits, *id_dump.labels);
  const ScoreVector id_scores = orient_ood_larger(score(id_dump));
  ScoreVector ood_scores{{}, id_scores.score_name, Direction::kOodLarger};
  for (const EvalDump& d : ood_dumps) {
    const ScoreVector part = orient_ood_larger(score(d));
    ood_scores.values.insert(ood_scores.values.end(), part.values.begin(), part.values.end());
  }
  return build_taxonomy(msp(id_dump.logits), wrong, id_scores, ood_scores, options);
}

CollapseDelta clean_vs_noise_delta(const TaxonomyReport& clean, const TaxonomyReport& noisy) {
  if (clean.score_name != noisy.score_name) {
    fail(ErrorKind::kInvalidArgument, "score-family mismatch: " + clean.score_name + " vs " +
                                          noisy.score_name);
  }
  if (!clean.id_wrong_vs_ood_auroc || !noisy.id_wrong_vs_ood_auroc) {
    fail(ErrorKind::kInvalidArgument, "ID-wrong vs OOD AUROC unavailable in one report");
  }
  auto wrong_mass = [](const TaxonomyReport& r) {
    return r.at(Group::kIdWrongHigh).mass_pct + r.at(Group::kIdWrongLow).mass_pct;
  };
  CollapseDelta d;
  d.delta_wrong_auroc = *noisy.id_wrong_vs_ood_auroc - *clean.id_wrong_vs_ood_auroc;
  d.delta_wrong_mass_pct = wrong_mass(noisy) - wrong_mass(clean);
  constexpr double kOnePoint = 0.01;
  if (d.delta_wrong_auroc < -kOnePoint) {
    d.verdict = CollapseVerdict::kWorsened;
  } else if (d.delta_wrong_auroc > kOnePoint) {
    d.verdict = CollapseVerdict::kImproved;
  }
  return d;
}

double wrong_low_share(std::span<const TaxonomyReport> reports, PoolingMode mode) {
  double low_total = 0.0, wrong_total = 0.0, share_sum = 0.0;
  std::size_t used = 0;
  for (const auto& r : reports) {
    const double low = static_cast<double>(r.at(Group::kIdWrongLow).count);
    const double all = low + static_cast<double>(r.at(Group::kIdWrongHigh).count);
    if (all == 0.0) continue;
    low_total += low;
    wrong_total += all;
    share_sum += low / all;
    ++used;
  }
  if (used == 0) fail(ErrorKind::kInvalidArgument, "no ID-wrong samples in any report");
  if (mode == PoolingMode::kPooledSamples) return 100.0 * low_total / wrong_total;
  return 100.0 * share_sum / static_cast<double>(used);
}

}  // namespace owr
