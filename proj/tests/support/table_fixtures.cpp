#include "table_fixtures.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

namespace owr::tables {
namespace {

struct PublishedMethod {
  const char* name;
  double v[5][7];  // metric × regime
};

// acc, near AUROC, near FPR95, far AUROC, far FPR95
const PublishedMethod kBenchmark[] = {
    {"DivideMix",
     {{96.1, 94.6, 93.2, 76.0, 93.4, 77.3, 75.6},
      {81.6, 82.4, 81.2, 54.8, 76.4, 77.9, 76.8},
      {62.1, 51.1, 64.7, 93.7, 72.7, 80.6, 80.7},
      {69.7, 77.2, 77.9, 49.2, 49.2, 63.1, 60.4},
      {64.1, 51.2, 67.0, 93.1, 93.1, 91.5, 92.1}}},
    {"LongReMix",
     {{96.3, 95.1, 93.8, 79.9, 94.7, 77.9, 75.5},
      {79.5, 80.2, 76.8, 73.7, 77.5, 77.1, 76.2},
      {63.0, 51.9, 58.9, 82.5, 72.1, 78.8, 81.3},
      {70.8, 67.6, 62.6, 59.3, 70.5, 64.2, 72.5},
      {64.9, 58.6, 62.5, 88.0, 68.6, 90.0, 85.7}}},
    {"L2B",
     {{92.1, 88.4, 71.4, 50.6, 91.9, 68.8, 58.4},
      {76.0, 72.3, 67.5, 61.6, 75.3, 71.1, 68.4},
      {62.9, 73.2, 89.6, 91.2, 68.1, 86.9, 88.0},
      {74.7, 75.5, 69.9, 60.2, 78.9, 69.9, 60.3},
      {61.3, 64.9, 86.6, 83.9, 66.4, 87.7, 93.7}}},
    {"PSSCL",
     {{96.4, 95.6, 93.7, 92.9, 93.9, 77.6, 77.0},
      {91.3, 90.7, 83.3, 65.6, 90.6, 70.5, 77.4},
      {35.8, 35.8, 41.7, 89.6, 39.7, 87.9, 76.5},
      {93.4, 92.3, 87.8, 64.2, 87.5, 66.1, 73.2},
      {24.0, 26.4, 31.1, 85.7, 33.8, 79.5, 73.5}}},
    {"UNICON",
     {{95.1, 93.7, 92.1, 90.8, 91.7, 78.9, 77.6},
      {82.5, 81.6, 83.0, 84.1, 83.1, 77.5, 75.7},
      {48.1, 46.2, 47.6, 57.5, 44.3, 78.6, 80.5},
      {84.7, 92.9, 83.9, 92.8, 82.5, 76.2, 76.1},
      {38.4, 19.9, 35.3, 32.0, 33.9, 67.9, 71.3}}},
    {"RRL",
     {{95.9, 93.9, 83.4, 87.6, 93.7, 79.5, 74.6},
      {54.2, 48.3, 39.3, 49.9, 46.2, 52.5, 47.8},
      {92.5, 98.6, 97.0, 96.0, 95.4, 92.3, 96.1},
      {66.3, 51.1, 30.8, 61.3, 41.7, 55.7, 56.6},
      {84.9, 98.8, 99.1, 85.6, 98.0, 97.5, 96.4}}},
    {"ProMix",
     {{97.6, 97.3, 94.0, 92.8, 93.9, 82.6, 79.3},
      {88.1, 87.2, 87.4, 83.0, 85.5, 73.3, 76.1},
      {37.5, 38.4, 41.6, 51.2, 40.6, 80.2, 81.5},
      {76.6, 82.0, 79.4, 82.0, 81.2, 51.9, 63.9},
      {45.6, 36.0, 40.5, 41.7, 39.2, 93.8, 90.9}}},
};

const char* kDatasets[7] = {"C10", "C10", "C10", "C10", "C10", "C100", "C100"};
const char* kNoises[7] = {"sym 0.2", "sym 0.5", "sym 0.8", "sym 0.9", "asym 0.4", "sym 0.2", "sym 0.5"};
const char* kMetricHeaders[5] = {"Accuracy↑", "Near AUROC↑", "Near FPR95↓", "Far AUROC↑",
                                 "Far FPR95↓"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

std::string fixed1(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << v;
  return os.str();
}

// Expected markup computed directly from the published values: all maxima
// bold; the single next value underlined when the maximum is unique.
std::vector<std::string> expected_markup(const std::vector<double>& values, bool lower) {
  std::vector<double> key(values);
  if (lower) {
    for (double& k : key) k = -k;
  }
  const double best = *std::max_element(key.begin(), key.end());
  const auto n_best = std::count(key.begin(), key.end(), best);
  std::optional<double> second;
  for (double k : key) {
    if (k < best && (!second || k > *second)) second = k;
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string s = fixed1(values[i]);
    if (key[i] == best) {
      out.push_back("**" + s + "**");
    } else if (n_best == 1 && second && key[i] == *second &&
               std::count(key.begin(), key.end(), *second) == 1) {
      out.push_back("<u>" + s + "</u>");
    } else {
      out.push_back(s);
    }
  }
  return out;
}

void check_benchmark(std::vector<std::string>& bad) {
  const auto rows = benchmark_rows();
  const auto table = parse_markdown(render_table(rows, TableLayout::kBenchmark));
  if (table.empty()) {
    bad.push_back("benchmark table is empty");
    return;
  }
  const auto& header = table.front();
  std::map<std::string, std::size_t> column;
  for (std::size_t c = 2; c < header.size(); ++c) column[header[c]] = c;

  // cell lookup by (method, metric header)
  std::map<std::pair<std::string, std::string>, const std::vector<std::string>*> lines;
  std::string current;
  for (std::size_t r = 1; r < table.size(); ++r) {
    if (!table[r][0].empty()) current = table[r][0];
    lines[{current, table[r][1]}] = &table[r];
  }
  auto cell = [&](const std::string& method, int metric, int regime) -> std::string {
    const std::string label = std::string(kDatasets[regime]) + " " + kNoises[regime];
    const auto l = lines.find({"**" + method + "**", kMetricHeaders[metric]});
    const auto c = column.find(label);
    if (l == lines.end() || c == column.end()) return "<missing>";
    return (*l->second)[c->second];
  };

  for (int m = 0; m < 5; ++m) {
    for (int g = 0; g < 7; ++g) {
      std::vector<double> values;
      for (const auto& pm : kBenchmark) values.push_back(pm.v[m][g]);
      const auto want = expected_markup(values, m == 2 || m == 4);
      for (std::size_t i = 0; i < std::size(kBenchmark); ++i) {
        const std::string got = cell(kBenchmark[i].name, m, g);
        if (got != want[i]) {
          bad.push_back(std::string("benchmark ") + kBenchmark[i].name + " " + kMetricHeaders[m] +
                        " " + kDatasets[g] + " " + kNoises[g] + ": got " + got + ", want " +
                        want[i]);
        }
      }
    }
  }

  // Cells where the printed table agrees with its own best/runner-up rule.
  const struct {
    const char* method;
    int metric;
    const char* text;
  } printed[] = {
      {"ProMix", 0, "**97.6**"},     {"PSSCL", 1, "**91.3**"}, {"ProMix", 1, "<u>88.1</u>"},
      {"PSSCL", 2, "**35.8**"},      {"ProMix", 2, "<u>37.5</u>"},
      {"PSSCL", 3, "**93.4**"},      {"UNICON", 3, "<u>84.7</u>"},
  };
  for (const auto& p : printed) {
    const std::string got = cell(p.method, p.metric, 0);
    if (got != p.text) {
      bad.push_back(std::string("C10 sym 0.2 ") + p.method + " " + kMetricHeaders[p.metric] +
                    ": got " + got + ", printed " + p.text);
    }
  }

  const std::string csv = render_table(rows, TableLayout::kBenchmark, TableFormat::kCsv);
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.method, a.dataset, a.noise, a.score_name) <
           std::tie(b.method, b.dataset, b.noise, b.score_name);
  });
  if (metric_rows_from_csv(csv) != sorted) bad.push_back("benchmark CSV parse-back differs");
  if (metric_rows_from_csv(metric_rows_to_csv(rows)) != rows) {
    bad.push_back("metric row CSV round trip differs");
  }
}

void check_paired(std::vector<std::string>& bad) {
  const auto rows = paired_rows();
  const auto table = parse_markdown(render_table(rows, TableLayout::kPaired));
  const std::vector<std::vector<std::string>> want = {
      {"Setting", "BL", "VMR", "Δ", "IDΔ"},
      {"sym 0.2", "93.4", "**95.8**", "+2.4", "+0.8"},
      {"sym 0.5", "92.3", "**95.9**", "+3.6", "+0.7"},
      {"sym 0.8", "87.8", "**91.0**", "+3.2", "+2.2"},
      {"asym 0.4", "87.5", "**93.7**", "+6.2", "+0.5"},
  };
  if (table != want) bad.push_back("paired table differs from the printed one");
  const std::string csv = render_table(rows, TableLayout::kPaired, TableFormat::kCsv);
  if (paired_rows_from_csv(csv) != rows) bad.push_back("paired CSV parse-back differs");
}

void check_taxonomy(std::vector<std::string>& bad) {
  const auto table = parse_markdown(render_table(taxonomy_columns(), TableLayout::kTaxonomy));
  if (table.size() != 5) {
    bad.push_back("taxonomy table must have a header and four rows");
    return;
  }
  // columns sort as C10 asym 0.4, C10 sym 0.2 ... ; C10 sym 0.2 AU/m% sit at 3/4
  const std::vector<std::string> want_header_prefix = {"Group", "C10 asym 0.4 AU↑", "C10 asym 0.4 m%",
                                                       "C10 sym 0.2 AU↑", "C10 sym 0.2 m%"};
  if (!std::equal(want_header_prefix.begin(), want_header_prefix.end(), table[0].begin())) {
    bad.push_back("taxonomy header order");
  }
  const std::vector<std::vector<std::string>> want_rows = {
      {"ID-correct high-conf", "---", "47.7", "---", "49.8"},
      {"ID-correct low-conf", "0.7", "35.7", "0.8", "46.2"},
      {"ID-wrong high-conf", "0.8", "2.3", "0.9", "0.2"},
      {"**ID-wrong low-conf**", "**0.5**", "14.3", "**0.5**", "3.9"},
  };
  for (std::size_t r = 0; r < 4; ++r) {
    if (!std::equal(want_rows[r].begin(), want_rows[r].end(), table[r + 1].begin())) {
      bad.push_back("taxonomy row " + want_rows[r][0]);
    }
  }
  const std::string last = table[4].back();
  if (last != "43.0") bad.push_back("taxonomy C100 sym 0.5 wrong-low mass: " + last);
}

}  // namespace

std::vector<MetricRow> benchmark_rows() {
  std::vector<MetricRow> rows;
  for (const auto& pm : kBenchmark) {
    for (int g = 0; g < 7; ++g) {
      MetricRow r;
      r.method = pm.name;
      r.dataset = kDatasets[g];
      r.noise = kNoises[g];
      r.score_name = "energy";
      r.acc = pm.v[0][g];
      r.near_auroc = pm.v[1][g];
      r.near_fpr95 = pm.v[2][g];
      r.far_auroc = pm.v[3][g];
      r.far_fpr95 = pm.v[4][g];
      rows.push_back(r);
    }
  }
  return rows;
}

std::vector<PairedRow> paired_rows() {
  return {
      {"sym 0.2", 93.4, 95.8, 96.4, 97.2},
      {"sym 0.5", 92.3, 95.9, 95.6, 96.3},
      {"sym 0.8", 87.8, 91.0, 93.7, 95.9},
      {"asym 0.4", 87.5, 93.7, 93.9, 94.4},
  };
}

std::vector<TaxonomyColumn> taxonomy_columns() {
  struct Printed {
    const char* dataset;
    const char* noise;
    double au[4];  // negative: not computed
    double mass[4];
  };
  const Printed printed[] = {
      {"C10", "sym 0.2", {-1, 0.8, 0.9, 0.5}, {49.8, 46.2, 0.2, 3.9}},
      {"C10", "sym 0.5", {-1, 0.7, 0.9, 0.5}, {49.4, 44.3, 0.7, 5.7}},
      {"C10", "sym 0.8", {-1, 0.6, 0.9, 0.5}, {45.4, 26.1, 4.6, 23.9}},
      {"C10", "sym 0.9", {-1, 0.4, 0.8, 0.3}, {29.3, 14.8, 20.7, 35.2}},
      {"C10", "asym 0.4", {-1, 0.7, 0.8, 0.5}, {47.7, 35.7, 2.3, 14.3}},
      {"C100", "sym 0.2", {-1, 0.6, 0.7, 0.4}, {34.4, 13.3, 15.6, 36.8}},
      {"C100", "sym 0.5", {-1, 0.3, 0.5, 0.2}, {25.4, 7.0, 24.6, 43.0}},
  };
  std::vector<TaxonomyColumn> out;
  for (const auto& p : printed) {
    TaxonomyColumn col{p.dataset, p.noise, {}};
    col.report.score_name = "energy";
    for (std::size_t g = 0; g < 4; ++g) {
      GroupStats& s = col.report.groups[g];
      s.group = kAllGroups[g];
      s.mass_pct = p.mass[g];
      if (p.au[g] >= 0) s.auroc = p.au[g];
      s.flagged = kAllGroups[g] == Group::kIdWrongLow;
    }
    out.push_back(col);
  }
  return out;
}

std::vector<std::vector<std::string>> parse_markdown(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.size() < 2 || line.front() != '|') continue;
    std::vector<std::string> cells;
    std::size_t pos = 1;
    while (pos < line.size()) {
      const auto next = line.find('|', pos);
      if (next == std::string::npos) break;
      cells.push_back(trim(line.substr(pos, next - pos)));
      pos = next + 1;
    }
    const bool rule = std::all_of(cells.begin(), cells.end(), [](const std::string& c) {
      return !c.empty() && c.find_first_not_of("-:") == std::string::npos;
    });
    if (!rule) out.push_back(cells);
  }
  return out;
}

std::vector<std::string> check_all() {
  std::vector<std::string> bad;
  check_benchmark(bad);
  check_paired(bad);
  check_taxonomy(bad);
  return bad;
}

}  // namespace owr::tables
