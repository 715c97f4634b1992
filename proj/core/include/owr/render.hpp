#pragma once

// Text rendering of benchmark, taxonomy and paired-repair tables. Numbers are
// shown to one decimal; best/runner-up emphasis is decided on the displayed
// values so that the markup always agrees with what the reader sees.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "owr/metrics.hpp"
#include "owr/taxonomy.hpp"

namespace owr {

enum class TableLayout { kBenchmark, kTaxonomy, kPaired };
std::string_view to_string(TableLayout layout);
TableLayout parse_table_layout(std::string_view text);

enum class TableFormat { kMarkdown, kCsv };

enum class Emphasis { kNone, kBest, kRunnerUp };

/// Best value(s) get kBest. The next distinct value gets kRunnerUp only when
/// a single cell holds it and the best is not shared. Missing cells stay
/// kNone. Values are compared after rounding to `decimals`.
std::vector<Emphasis> rank_column(std::span<const std::optional<double>> values,
                                  bool lower_is_better, int decimals = 1);

/// "97.6"; `signed_delta` gives "+2.4" / "-0.3" / "0.0".
std::string format_fixed(double value, int decimals = 1, bool signed_delta = false);

/// One regime (column pair) of the taxonomy table.
struct TaxonomyColumn {
  std::string dataset;
  std::string noise;
  TaxonomyReport report;
};

/// One setting of the paired repair table. Deltas are derived, never stored.
struct PairedRow {
  std::string setting;
  double baseline_far_auroc = 0.0;
  double repaired_far_auroc = 0.0;
  double baseline_acc = 0.0;
  double repaired_acc = 0.0;

  double delta() const { return repaired_far_auroc - baseline_far_auroc; }
  double id_delta() const { return repaired_acc - baseline_acc; }
  bool operator==(const PairedRow&) const = default;
};

/// Pairs a baseline and a repaired row of the same setting. Both need far AUROC.
PairedRow make_paired_row(const MetricRow& baseline, const MetricRow& repaired,
                          std::string setting);

using TableInput =
    std::variant<std::vector<MetricRow>, std::vector<TaxonomyColumn>, std::vector<PairedRow>>;

TableLayout layout_of(const TableInput& input);

/// Throws on "mixed layouts" (input kind differs from `layout`), empty input or
/// duplicate cells.
std::string render_table(const TableInput& input, TableLayout layout,
                         TableFormat format = TableFormat::kMarkdown);

std::vector<PairedRow> paired_rows_from_csv(const std::string& text);

}  // namespace owr
