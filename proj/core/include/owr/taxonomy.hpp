#pragma once

// Uncertainty-collapse diagnostics: the misclassified-ID set, a correctness ×
// confidence split of the ID test set at the MSP median, and per-stratum
// AUROC against pooled OOD scores.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "owr/evaldump.hpp"
#include "owr/scores.hpp"

namespace owr {

/// Indices whose argmax prediction (lowest index on ties) differs from the label.
std::vector<std::size_t> id_wrong_set(const Matrix& logits, std::span<const std::int32_t> labels);

enum class Group : std::uint8_t {
  kIdCorrectHigh = 0,
  kIdCorrectLow = 1,
  kIdWrongHigh = 2,
  kIdWrongLow = 3,
};
inline constexpr std::array<Group, 4> kAllGroups = {Group::kIdCorrectHigh, Group::kIdCorrectLow,
                                                    Group::kIdWrongHigh, Group::kIdWrongLow};

std::string_view to_string(Group g);

enum class MedianMode {
  kGlobal,    // one MSP median over the whole ID test set
  kPerGroup,  // separate medians for the correct and wrong populations
};

struct GroupAssignment {
  std::vector<Group> group;  // one entry per ID sample
  double msp_median = 0.0;   // global mode; per-group mode stores the correct-set median
  std::optional<double> wrong_median;  // per-group mode only
};

/// High confidence iff MSP is strictly above the median; ties go low.
GroupAssignment five_group_split(const ScoreVector& msp_scores,
                                 std::span<const std::size_t> wrong,
                                 MedianMode mode = MedianMode::kGlobal);

struct GroupStats {
  Group group = Group::kIdCorrectHigh;
  std::size_t count = 0;
  double mass_pct = 0.0;
  std::optional<double> auroc;  // absent when the group is empty or skipped
  bool flagged = false;
};

struct TaxonomyReport {
  std::string score_name;
  double median = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  std::array<GroupStats, 4> groups{};
  std::optional<double> id_wrong_vs_ood_auroc;

  const GroupStats& at(Group g) const { return groups[static_cast<std::size_t>(g)]; }
  GroupStats& at(Group g) { return groups[static_cast<std::size_t>(g)]; }
};

struct TaxonomyOptions {
  MedianMode median_mode = MedianMode::kGlobal;
  /// The correct/high stratum is anchored by construction; its AUROC is
  /// optional and skipped by default.
  bool include_correct_high_auroc = false;
  double collapse_threshold = 0.6;
};

/// Core computation from precomputed vectors. `id_scores` and `ood_scores`
/// must be oriented OOD-larger; `msp_scores` is the raw MSP of the ID set.
TaxonomyReport build_taxonomy(const ScoreVector& msp_scores, std::span<const std::size_t> wrong,
                              const ScoreVector& id_scores, const ScoreVector& ood_scores,
                              const TaxonomyOptions& options = {});

/// Scores the ID dump and the concatenated OOD dumps with `score`, then builds
/// the report.
TaxonomyReport taxonomy_report(const EvalDump& id_dump, std::span<const EvalDump> ood_dumps,
                               const ScoreFunction& score, const TaxonomyOptions& options = {});

inline constexpr double kCollapseMassGatePct = 1.0;

/// Flag iff group AUROC < threshold and group mass > 1%.
std::array<bool, 4> collapse_flags(const TaxonomyReport& report, double threshold = 0.6);

enum class CollapseVerdict { kWorsened, kImproved, kUnchanged };
std::string_view to_string(CollapseVerdict v);

struct CollapseDelta {
  double delta_wrong_auroc = 0.0;    // noisy − clean
  double delta_wrong_mass_pct = 0.0;  // noisy − clean
  CollapseVerdict verdict = CollapseVerdict::kUnchanged;
};

/// Changes within ±0.01 AUROC (one point) count as unchanged.
CollapseDelta clean_vs_noise_delta(const TaxonomyReport& clean, const TaxonomyReport& noisy);

enum class PoolingMode {
  kPooledSamples,     // Σ wrong-low count / Σ wrong count over all reports
  kMeanOfRegimes,     // mean of per-report wrong-low shares
};

/// Share (percent) of ID-wrong mass that sits in the low-confidence stratum.
double wrong_low_share(std::span<const TaxonomyReport> reports, PoolingMode mode);

}  // namespace owr
