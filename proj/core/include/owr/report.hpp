#pragma once

// Orchestration behind the command-line tool: run plans, JSON documents for
// every report type, evaluation of dump sets, paired comparison and the VMR
// demo driver.
//
// All JSON writers emit keys in a fixed order and numbers in shortest
// round-trip form, so identical inputs produce byte-identical files. Wall-clock
// data only ever goes to run_meta.json.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "owr/geometry.hpp"
#include "owr/metrics.hpp"
#include "owr/render.hpp"
#include "owr/scores.hpp"
#include "owr/taxonomy.hpp"
#include "owr/vmr.hpp"

namespace owr {

namespace fs = std::filesystem;

// JSON documents -------------------------------------------------------------

std::string to_json(const ScoreVector& scores);
ScoreVector score_vector_from_json(const std::string& text);

/// scores.bin (float32 LE) plus scores.json sidecar {score_name, direction, n, dtype}.
void write_score_binary(const ScoreVector& scores, const fs::path& dir);
ScoreVector read_score_binary(const fs::path& dir);

std::string to_json(std::span<const MetricRow> rows);
std::vector<MetricRow> metric_rows_from_json(const std::string& text);

/// `dataset`/`noise` label the regime for later rendering.
std::string to_json(const TaxonomyReport& report, const std::string& dataset = "",
                    const std::string& noise = "");
TaxonomyColumn taxonomy_column_from_json(const std::string& text);

std::string to_json(const GeometryReport& report);

/// population,x,y with populations named in `names` order.
std::string projection_csv(const Projection2d& projection, std::span<const std::string> names);

std::string to_json(const vmr::VmrPairedReport& report);

/// Which table a JSON document feeds: metrics → benchmark, taxonomy → taxonomy,
/// comparison → paired. Throws kData on anything else.
TableLayout document_layout(const std::string& text);

/// Renders JSON documents (metrics.json, taxonomy.json, comparison.json). All
/// documents must share one layout, and it must equal `layout` when given.
std::string render_documents(std::span<const std::string> documents,
                             std::optional<TableLayout> layout,
                             TableFormat format = TableFormat::kMarkdown);

// Run plans ------------------------------------------------------------------

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "OWR_OUTPUT_ROOT";
inline constexpr const char* kDefaultOutputRoot = "owr_runs";

struct RunPlan {
  fs::path id_test;
  std::optional<fs::path> fit;
  std::vector<fs::path> near_ood;
  std::vector<fs::path> far_ood;
  std::vector<std::string> scores{"energy"};
  fs::path output_dir;  // empty: <output root>/<method>
  std::string primary_score = "energy";
  std::string method = "model";
  std::string dataset;
  std::string noise;
  ScoreOptions score_options;
  TaxonomyOptions taxonomy;
  GeometryOptions geometry;
  bool run_geometry = true;
  FprConvention fpr_convention = FprConvention::kIdAcceptance95;
  std::size_t ece_bins = 15;
};

/// Unknown keys and malformed values are kInvalidArgument errors.
RunPlan run_plan_from_json(const std::string& text);
std::string to_json(const RunPlan& plan);

/// Output root from kOutputRootEnv, else kDefaultOutputRoot.
fs::path default_output_root();
fs::path resolved_output_dir(const RunPlan& plan);

/// Structural checks: at least one score, known names, id_test present, fit
/// present for fit-based detectors. Path existence is checked when
/// `check_paths` is set. Throws kInvalidArgument.
void validate_plan(const RunPlan& plan, bool check_paths = true);

// Evaluation -------------------------------------------------------------------

struct SkippedItem {
  std::string what;    // score name or dump path
  std::string reason;
};

struct EvalResult {
  std::vector<MetricRow> rows;
  std::optional<TaxonomyReport> taxonomy;
  std::optional<GeometryReport> geometry;
  std::optional<Projection2d> projection;
  std::vector<SkippedItem> skipped;

  bool partial() const { return !skipped.empty(); }
};

/// Loads dumps and computes everything. An unreadable id_test throws; any
/// other failure (OOD dump, fit dump, one score) is recorded and skipped.
EvalResult evaluate(const RunPlan& plan);

/// metrics.json, metrics.csv, taxonomy.json, geometry.json, projection.csv,
/// tables/benchmark.md, tables/taxonomy.md, skipped.json and run_meta.json.
void write_eval_outputs(const RunPlan& plan, const EvalResult& result, const fs::path& dir);

/// validate_plan + evaluate + write_eval_outputs.
EvalResult cmd_eval(const RunPlan& plan);

// Comparison -------------------------------------------------------------------

enum class DeltaVerdict { kImprove, kDegrade, kEqual };
std::string_view to_string(DeltaVerdict v);

struct MetricDelta {
  std::string dataset;
  std::string noise;
  std::string score_name;
  std::string metric;
  bool higher_is_better = true;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b − a
  DeltaVerdict verdict = DeltaVerdict::kEqual;
};

struct Comparison {
  std::string method_a;
  std::string method_b;
  std::vector<MetricDelta> deltas;
  std::vector<PairedRow> paired;  // rows with far AUROC in both reports
};

/// Rows are matched on (dataset, noise, score). Both reports must contain the
/// same keys with the same metrics present ("schema mismatch" otherwise).
Comparison cmd_compare(std::span<const MetricRow> a, std::span<const MetricRow> b);
std::string to_json(const Comparison& comparison);
std::vector<PairedRow> paired_rows_from_json(const std::string& text);

// VMR demo -------------------------------------------------------------------------

/// Defaults reproduce the demo regime: symmetric noise 0.5, seeds 0-4.
struct VmrPlan {
  vmr::TaskConfig task{.noise_rate = 0.5};
  vmr::VmrConfig config;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

/// {"task": {...}, "vmr": {...}, "seeds": [...]}; every key optional.
VmrPlan vmr_plan_from_json(const std::string& text);
std::string to_json(const VmrPlan& plan);

/// Runs the paired experiment and writes per-arm dumps and history CSVs,
/// vmr_report.json, tables/paired.md and run_meta.json under `dir`.
vmr::VmrPairedReport cmd_vmr_demo(const VmrPlan& plan, const fs::path& dir,
                                  bool write_dumps = true);

/// Writes run_meta.json (tool version and wall-clock timestamp).
void write_run_meta(const fs::path& dir, const std::string& command);

}  // namespace owr
