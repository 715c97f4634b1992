#include "owr/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "owr/error.hpp"
#include "text.hpp"

namespace owr {
namespace {

constexpr const char* kMissing = "---";

std::string decorate(const std::string& cell, Emphasis e) {
  switch (e) {
    case Emphasis::kBest: return "**" + cell + "**";
    case Emphasis::kRunnerUp: return "<u>" + cell + "</u>";
    case Emphasis::kNone: break;
  }
  return cell;
}

std::string markdown_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string markdown_rule(std::size_t n_label, std::size_t n_numeric) {
  std::string out = "|";
  for (std::size_t i = 0; i < n_label; ++i) out += "---|";
  for (std::size_t i = 0; i < n_numeric; ++i) out += "---:|";
  return out + "\n";
}

std::string regime_label(const std::string& dataset, const std::string& noise) {
  if (dataset.empty()) return noise;
  if (noise.empty()) return dataset;
  return dataset + " " + noise;
}

// Benchmark ------------------------------------------------------------------

struct BenchmarkMetric {
  const char* header;
  std::optional<double> MetricRow::*field;  // null for acc
  bool lower_is_better;
};

constexpr BenchmarkMetric kBenchmarkMetrics[] = {
    {"Accuracy↑", nullptr, false},
    {"Near AUROC↑", &MetricRow::near_auroc, false},
    {"Near FPR95↓", &MetricRow::near_fpr95, true},
    {"Far AUROC↑", &MetricRow::far_auroc, false},
    {"Far FPR95↓", &MetricRow::far_fpr95, true},
};

std::optional<double> metric_value(const MetricRow& r, const BenchmarkMetric& m) {
  return m.field ? r.*(m.field) : std::optional<double>(r.acc);
}

std::string render_benchmark(std::vector<MetricRow> rows, TableFormat format) {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.method, a.dataset, a.noise, a.score_name) <
           std::tie(b.method, b.dataset, b.noise, b.score_name);
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i - 1];
    const auto& b = rows[i];
    if (std::tie(a.method, a.dataset, a.noise, a.score_name) ==
        std::tie(b.method, b.dataset, b.noise, b.score_name)) {
      fail(ErrorKind::kInvalidArgument, "duplicate row: " + b.method + " " +
                                            regime_label(b.dataset, b.noise) + " " + b.score_name);
    }
  }
  if (format == TableFormat::kCsv) return metric_rows_to_csv(rows);

  using Regime = std::pair<std::string, std::string>;
  using Entry = std::pair<std::string, std::string>;  // method, score
  std::set<Regime> regimes;
  std::set<std::string> scores;
  std::set<Entry> entry_set;
  std::map<std::pair<Entry, Regime>, const MetricRow*> cell;
  for (const auto& r : rows) {
    regimes.insert({r.dataset, r.noise});
    scores.insert(r.score_name);
    Entry e{r.method, r.score_name};
    entry_set.insert(e);
    cell[{e, {r.dataset, r.noise}}] = &r;
  }
  const std::vector<Entry> entries(entry_set.begin(), entry_set.end());
  const bool show_score = scores.size() > 1;
  const std::vector<Regime> columns(regimes.begin(), regimes.end());

  // emphasis[metric][entry][column]; each regime column ranks independently
  const std::size_t n_metrics = std::size(kBenchmarkMetrics);
  std::vector<std::vector<std::vector<std::string>>> text(
      n_metrics, std::vector<std::vector<std::string>>(entries.size(),
                                                       std::vector<std::string>(columns.size())));
  for (std::size_t m = 0; m < n_metrics; ++m) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      std::vector<std::optional<double>> values(entries.size());
      for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto it = cell.find({entries[e], columns[c]});
        if (it != cell.end()) values[e] = metric_value(*it->second, kBenchmarkMetrics[m]);
      }
      const auto emph = rank_column(values, kBenchmarkMetrics[m].lower_is_better);
      for (std::size_t e = 0; e < entries.size(); ++e) {
        text[m][e][c] = values[e] ? decorate(format_fixed(*values[e]), emph[e]) : kMissing;
      }
    }
  }

  std::string out;
  std::vector<std::string> header{"Method", "Metric"};
  for (const auto& [dataset, noise] : columns) header.push_back(regime_label(dataset, noise));
  out += markdown_row(header);
  out += markdown_rule(2, columns.size());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const std::string label =
        show_score ? entries[e].first + " (" + entries[e].second + ")" : entries[e].first;
    for (std::size_t m = 0; m < n_metrics; ++m) {
      std::vector<std::string> line{m == 0 ? "**" + label + "**" : "", kBenchmarkMetrics[m].header};
      line.insert(line.end(), text[m][e].begin(), text[m][e].end());
      out += markdown_row(line);
    }
  }
  return out;
}

// Taxonomy --------------------------------------------------------------------

constexpr const char* kGroupLabels[] = {"ID-correct high-conf", "ID-correct low-conf",
                                        "ID-wrong high-conf", "ID-wrong low-conf"};

std::string render_taxonomy(std::vector<TaxonomyColumn> columns, TableFormat format) {
  std::stable_sort(columns.begin(), columns.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.noise) < std::tie(b.dataset, b.noise);
  });
  for (std::size_t i = 1; i < columns.size(); ++i) {
    if (columns[i - 1].dataset == columns[i].dataset && columns[i - 1].noise == columns[i].noise) {
      fail(ErrorKind::kInvalidArgument,
           "duplicate regime: " + regime_label(columns[i].dataset, columns[i].noise));
    }
  }
  if (format == TableFormat::kCsv) {
    std::string out = "dataset,noise,group,auroc,mass_pct,flagged\n";
    for (const auto& col : columns) {
      for (const auto& g : col.report.groups) {
        out += text::csv_field(col.dataset) + ',' + text::csv_field(col.noise) + ',' +
               std::string(to_string(g.group)) + ',' + text::csv_optional(g.auroc) + ',' +
               text::format_number(g.mass_pct) + ',' + (g.flagged ? "1" : "0") + '\n';
      }
    }
    return out;
  }

  std::vector<std::string> header{"Group"};
  for (const auto& col : columns) {
    const std::string label = regime_label(col.dataset, col.noise);
    header.push_back(label + " AU↑");
    header.push_back(label + " m%");
  }
  std::string out = markdown_row(header);
  out += markdown_rule(1, 2 * columns.size());
  for (std::size_t g = 0; g < 4; ++g) {
    bool any_flag = false;
    std::vector<std::string> line{kGroupLabels[g]};
    for (const auto& col : columns) {
      const GroupStats& s = col.report.groups[g];
      any_flag = any_flag || s.flagged;
      std::string au = s.auroc ? format_fixed(*s.auroc) : kMissing;
      if (s.flagged) au = "**" + au + "**";
      line.push_back(au);
      line.push_back(format_fixed(s.mass_pct));
    }
    if (any_flag) line[0] = "**" + line[0] + "**";
    out += markdown_row(line);
  }
  return out;
}

// Paired ------------------------------------------------------------------------

std::string render_paired(const std::vector<PairedRow>& rows, TableFormat format) {
  std::set<std::string> seen;
  for (const auto& r : rows) {
    if (!seen.insert(r.setting).second) {
      fail(ErrorKind::kInvalidArgument, "duplicate setting: " + r.setting);
    }
  }
  if (format == TableFormat::kCsv) {
    std::string out =
        "setting,baseline_far_auroc,repaired_far_auroc,delta,baseline_acc,repaired_acc,id_delta\n";
    for (const auto& r : rows) {
      out += text::csv_field(r.setting) + ',' + text::format_number(r.baseline_far_auroc) + ',' +
             text::format_number(r.repaired_far_auroc) + ',' + text::format_number(r.delta()) +
             ',' + text::format_number(r.baseline_acc) + ',' +
             text::format_number(r.repaired_acc) + ',' + text::format_number(r.id_delta()) + '\n';
    }
    return out;
  }
  // Rows keep their given order: settings are not alphabetical in practice.
  std::string out = markdown_row({"Setting", "BL", "VMR", "Δ", "IDΔ"});
  out += markdown_rule(1, 4);
  for (const auto& r : rows) {
    const std::optional<double> pair[] = {r.baseline_far_auroc, r.repaired_far_auroc};
    const auto emph = rank_column(pair, false);
    // Two cells: the runner-up is simply the other arm and stays plain.
    auto cell = [&](std::size_t i) {
      return decorate(format_fixed(*pair[i]), emph[i] == Emphasis::kBest ? Emphasis::kBest
                                                                         : Emphasis::kNone);
    };
    out += markdown_row({r.setting, cell(0), cell(1), format_fixed(r.delta(), 1, true),
                         format_fixed(r.id_delta(), 1, true)});
  }
  return out;
}

}  // namespace

std::string_view to_string(TableLayout layout) {
  switch (layout) {
    case TableLayout::kBenchmark: return "benchmark";
    case TableLayout::kTaxonomy: return "taxonomy";
    case TableLayout::kPaired: return "paired";
  }
  return "unknown";
}

TableLayout parse_table_layout(std::string_view text) {
  if (text == "benchmark") return TableLayout::kBenchmark;
  if (text == "taxonomy") return TableLayout::kTaxonomy;
  if (text == "paired") return TableLayout::kPaired;
  fail(ErrorKind::kInvalidArgument, "unknown layout: " + std::string(text));
}

std::vector<Emphasis> rank_column(std::span<const std::optional<double>> values,
                                  bool lower_is_better, int decimals) {
  const double scale = std::pow(10.0, decimals);
  std::vector<long long> keys;
  for (const auto& v : values) {
    if (v) keys.push_back(std::llround(*v * scale) * (lower_is_better ? -1 : 1));
  }
  std::vector<Emphasis> out(values.size(), Emphasis::kNone);
  if (keys.empty()) return out;
  std::sort(keys.begin(), keys.end(), std::greater<>());
  const long long best = keys.front();
  const auto n_best = std::count(keys.begin(), keys.end(), best);
  std::optional<long long> runner_up;
  if (n_best == 1 && keys.size() > 1) {
    const long long second = keys[1];
    if (std::count(keys.begin(), keys.end(), second) == 1) runner_up = second;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) continue;
    const long long k = std::llround(*values[i] * scale) * (lower_is_better ? -1 : 1);
    if (k == best) {
      out[i] = Emphasis::kBest;
    } else if (runner_up && k == *runner_up) {
      out[i] = Emphasis::kRunnerUp;
    }
  }
  return out;
}

std::string format_fixed(double value, int decimals, bool signed_delta) {
  const double scale = std::pow(10.0, decimals);
  double rounded = std::round(value * scale) / scale;
  if (rounded == 0.0) rounded = 0.0;  // no "-0.0"
  char buf[64];
  std::snprintf(buf, sizeof(buf), signed_delta && rounded > 0.0 ? "%+.*f" : "%.*f", decimals,
                rounded);
  return buf;
}

PairedRow make_paired_row(const MetricRow& baseline, const MetricRow& repaired,
                          std::string setting) {
  if (!baseline.far_auroc || !repaired.far_auroc) {
    fail(ErrorKind::kInvalidArgument, "paired rows need far-OOD AUROC in both arms");
  }
  return PairedRow{std::move(setting), *baseline.far_auroc, *repaired.far_auroc, baseline.acc,
                   repaired.acc};
}

TableLayout layout_of(const TableInput& input) {
  return static_cast<TableLayout>(input.index());
}

std::string render_table(const TableInput& input, TableLayout layout, TableFormat format) {
  if (layout_of(input) != layout) {
    fail(ErrorKind::kInvalidArgument, "mixed layouts: input is " +
                                          std::string(to_string(layout_of(input))) +
                                          ", requested " + std::string(to_string(layout)));
  }
  const bool empty = std::visit([](const auto& v) { return v.empty(); }, input);
  if (empty) fail(ErrorKind::kInvalidArgument, "nothing to render");
  switch (layout) {
    case TableLayout::kBenchmark:
      return render_benchmark(std::get<std::vector<MetricRow>>(input), format);
    case TableLayout::kTaxonomy:
      return render_taxonomy(std::get<std::vector<TaxonomyColumn>>(input), format);
    case TableLayout::kPaired:
      return render_paired(std::get<std::vector<PairedRow>>(input), format);
  }
  return {};
}

std::vector<PairedRow> paired_rows_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line.rfind("setting,baseline_far_auroc,", 0) != 0) {
    fail(ErrorKind::kData, "paired CSV header mismatch");
  }
  std::vector<PairedRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = text::split_csv_line(line);
    if (f.size() != 7) fail(ErrorKind::kData, "paired CSV row must have 7 fields");
    rows.push_back(PairedRow{f[0], text::parse_number(f[1]), text::parse_number(f[2]),
                             text::parse_number(f[4]), text::parse_number(f[5])});
  }
  return rows;
}

}  // namespace owr
