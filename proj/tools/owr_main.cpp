// owr: command-line front end for post-hoc OOD evaluation of noisy-label
// classifiers. Exit codes: 0 ok, 2 invalid plan or arguments, 3 data error,
// 4 partial result (some scores or pools skipped).

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "owr/error.hpp"
#include "owr/evaldump.hpp"
#include "owr/io.hpp"
#include "owr/report.hpp"

namespace {

using owr::fs::path;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitData = 3;
constexpr int kExitPartial = 4;

int exit_code_for(owr::ErrorKind kind) {
  return kind == owr::ErrorKind::kInvalidArgument ? kExitInvalid : kExitData;
}

void emit(const std::string& text, const std::string& out_file) {
  if (out_file.empty()) {
    std::cout << text;
  } else {
    owr::write_file(out_file, text);
  }
}

std::vector<path> to_paths(const std::vector<std::string>& items) {
  return {items.begin(), items.end()};
}

// eval ---------------------------------------------------------------------------

struct EvalArgs {
  std::string plan_file;
  std::string id_test, fit, out, primary, method, dataset, noise;
  std::vector<std::string> near, far, scores;
  std::optional<double> energy_temperature, react_percentile, mahalanobis_shrinkage;
  std::optional<std::size_t> knn_k, vim_dim;
  bool no_geometry = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Score, evaluate and diagnose a dump set");
  cmd->add_option("--plan", a.plan_file, "Run plan JSON (flags override it)");
  cmd->add_option("--id-test", a.id_test, "ID test dump directory");
  cmd->add_option("--fit", a.fit, "Fit dump directory for fitted detectors");
  cmd->add_option("--near", a.near, "Near-OOD dump directories")->delimiter(',');
  cmd->add_option("--far", a.far, "Far-OOD dump directories")->delimiter(',');
  cmd->add_option("--scores", a.scores, "Score names, comma separated")->delimiter(',');
  cmd->add_option("--primary", a.primary, "Score used for taxonomy (default energy)");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--method", a.method, "Method label for metric rows");
  cmd->add_option("--dataset", a.dataset, "Dataset label");
  cmd->add_option("--noise", a.noise, "Noise regime label");
  cmd->add_option("--energy-temperature", a.energy_temperature);
  cmd->add_option("--react-percentile", a.react_percentile);
  cmd->add_option("--mahalanobis-shrinkage", a.mahalanobis_shrinkage);
  cmd->add_option("--knn-k", a.knn_k);
  cmd->add_option("--vim-dim", a.vim_dim);
  cmd->add_flag("--no-geometry", a.no_geometry, "Skip geometry probes");
}

int run_eval(const EvalArgs& a) {
  owr::RunPlan plan;
  if (!a.plan_file.empty()) plan = owr::run_plan_from_json(owr::read_file(a.plan_file));
  if (!a.id_test.empty()) plan.id_test = a.id_test;
  if (!a.fit.empty()) plan.fit = path(a.fit);
  if (!a.near.empty()) plan.near_ood = to_paths(a.near);
  if (!a.far.empty()) plan.far_ood = to_paths(a.far);
  if (!a.scores.empty()) plan.scores = a.scores;
  if (!a.primary.empty()) plan.primary_score = a.primary;
  if (!a.out.empty()) plan.output_dir = a.out;
  if (!a.method.empty()) plan.method = a.method;
  if (!a.dataset.empty()) plan.dataset = a.dataset;
  if (!a.noise.empty()) plan.noise = a.noise;
  if (a.energy_temperature) plan.score_options.energy_temperature = *a.energy_temperature;
  if (a.react_percentile) plan.score_options.react_percentile = *a.react_percentile;
  if (a.mahalanobis_shrinkage) plan.score_options.mahalanobis_shrinkage = a.mahalanobis_shrinkage;
  if (a.knn_k) plan.score_options.knn_k = a.knn_k;
  if (a.vim_dim) plan.score_options.vim_dim = a.vim_dim;
  if (a.no_geometry) plan.run_geometry = false;

  const owr::EvalResult result = owr::cmd_eval(plan);
  std::cerr << "wrote " << owr::resolved_output_dir(plan).string() << "\n";
  for (const auto& s : result.skipped) std::cerr << "skipped " << s.what << ": " << s.reason << "\n";
  return result.partial() ? kExitPartial : kExitOk;
}

// score ------------------------------------------------------------------------------

struct ScoreArgs {
  std::string dump, fit, score = "energy", out, binary_dir;
  bool oriented = false;
};

void add_score(CLI::App& app, ScoreArgs& a) {
  auto* cmd = app.add_subcommand("score", "Compute one post-hoc score over a dump");
  cmd->add_option("dump", a.dump, "Dump directory")->required();
  cmd->add_option("--score", a.score, "Score name");
  cmd->add_option("--fit", a.fit, "Fit dump for fitted detectors");
  cmd->add_option("--out", a.out, "Write JSON here instead of stdout");
  cmd->add_option("--binary", a.binary_dir, "Also write scores.bin + scores.json here");
  cmd->add_flag("--oriented", a.oriented, "Negate ID-larger scores first");
}

int run_score(const ScoreArgs& a) {
  std::optional<owr::EvalDump> fit;
  if (!a.fit.empty()) fit = owr::load_dump(a.fit);
  const owr::ScoreFunction f(a.score, fit ? &*fit : nullptr, owr::ScoreOptions{});
  owr::ScoreVector sv = f(owr::load_dump(a.dump));
  if (a.oriented) sv = owr::orient_ood_larger(std::move(sv));
  if (!a.binary_dir.empty()) owr::write_score_binary(sv, a.binary_dir);
  emit(owr::to_json(sv), a.out);
  return kExitOk;
}

// taxonomy ---------------------------------------------------------------------------

struct TaxonomyArgs {
  std::string id_test, fit, score = "energy", out, dataset, noise, median_mode = "global";
  std::vector<std::string> ood;
  bool include_correct_high = false;
  double collapse_threshold = 0.6;
};

void add_taxonomy(CLI::App& app, TaxonomyArgs& a) {
  auto* cmd = app.add_subcommand("taxonomy", "Five-group uncertainty-collapse taxonomy");
  cmd->add_option("--id-test", a.id_test, "Labeled ID test dump")->required();
  cmd->add_option("--ood", a.ood, "OOD dumps (pooled)")->delimiter(',')->required();
  cmd->add_option("--score", a.score, "Score name");
  cmd->add_option("--fit", a.fit, "Fit dump for fitted detectors");
  cmd->add_option("--dataset", a.dataset);
  cmd->add_option("--noise", a.noise);
  cmd->add_option("--median-mode", a.median_mode)->check(CLI::IsMember({"global", "per_group"}));
  cmd->add_flag("--include-correct-high", a.include_correct_high);
  cmd->add_option("--collapse-threshold", a.collapse_threshold);
  cmd->add_option("--out", a.out, "Write JSON here instead of stdout");
}

int run_taxonomy(const TaxonomyArgs& a) {
  std::optional<owr::EvalDump> fit;
  if (!a.fit.empty()) fit = owr::load_dump(a.fit);
  const owr::ScoreFunction f(a.score, fit ? &*fit : nullptr, owr::ScoreOptions{});
  const owr::EvalDump id = owr::load_dump(a.id_test);
  std::vector<owr::EvalDump> ood;
  for (const auto& p : a.ood) ood.push_back(owr::load_dump(p));
  owr::TaxonomyOptions options;
  options.median_mode =
      a.median_mode == "global" ? owr::MedianMode::kGlobal : owr::MedianMode::kPerGroup;
  options.include_correct_high_auroc = a.include_correct_high;
  options.collapse_threshold = a.collapse_threshold;
  emit(owr::to_json(owr::taxonomy_report(id, ood, f, options), a.dataset, a.noise), a.out);
  return kExitOk;
}

// geometry ---------------------------------------------------------------------------

struct GeometryArgs {
  std::string id_test, out;
  std::vector<std::string> ood;
  std::size_t k_min = owr::kDefaultMleKMin, k_max = owr::kDefaultMleKMax, max_samples = 5000;
};

void add_geometry(CLI::App& app, GeometryArgs& a) {
  auto* cmd = app.add_subcommand("geometry", "Participation ratio, MLE dimension, drift, PCA");
  cmd->add_option("--id-test", a.id_test, "Labeled ID test dump")->required();
  cmd->add_option("--ood", a.ood, "OOD dumps (pooled)")->delimiter(',')->required();
  cmd->add_option("--k-min", a.k_min);
  cmd->add_option("--k-max", a.k_max);
  cmd->add_option("--max-samples", a.max_samples);
  cmd->add_option("--out", a.out, "Output directory (geometry.json, projection.csv)");
}

int run_geometry(const GeometryArgs& a) {
  owr::RunPlan plan;
  plan.id_test = a.id_test;
  plan.far_ood = to_paths(a.ood);
  plan.scores = {"energy"};
  plan.geometry = {a.k_min, a.k_max, a.max_samples};
  owr::validate_plan(plan);
  const owr::EvalResult r = owr::evaluate(plan);
  if (!r.geometry) {
    for (const auto& s : r.skipped) std::cerr << "skipped " << s.what << ": " << s.reason << "\n";
    owr::fail(owr::ErrorKind::kData, "geometry could not be computed");
  }
  if (a.out.empty()) {
    std::cout << owr::to_json(*r.geometry);
  } else {
    owr::write_file(path(a.out) / "geometry.json", owr::to_json(*r.geometry));
    if (r.projection) {
      const std::vector<std::string> names{"id_correct", "id_wrong", "ood"};
      owr::write_file(path(a.out) / "projection.csv", owr::projection_csv(*r.projection, names));
    }
    owr::write_run_meta(a.out, "geometry");
  }
  return r.partial() ? kExitPartial : kExitOk;
}

// vmr-demo -----------------------------------------------------------------------------

struct VmrArgs {
  std::string config, out, noise_kind;
  std::vector<std::uint64_t> seeds;
  std::optional<double> lambda, noise_rate;
  std::optional<std::size_t> epochs;
  bool no_dumps = false;
};

void add_vmr(CLI::App& app, VmrArgs& a) {
  auto* cmd = app.add_subcommand("vmr-demo", "Paired baseline-vs-VMR run on the toy task");
  cmd->add_option("--config", a.config, "VMR config JSON");
  cmd->add_option("--out", a.out, "Output directory (default: <output root>/vmr_demo)");
  cmd->add_option("--seeds", a.seeds, "Seeds, comma separated")->delimiter(',');
  cmd->add_option("--lambda", a.lambda, "lambda_vos for the repaired arm");
  cmd->add_option("--noise-rate", a.noise_rate);
  cmd->add_option("--noise-kind", a.noise_kind)->check(CLI::IsMember({"symmetric", "asymmetric"}));
  cmd->add_option("--epochs", a.epochs);
  cmd->add_flag("--no-dumps", a.no_dumps, "Skip writing per-arm dump directories");
}

int run_vmr(const VmrArgs& a) {
  owr::VmrPlan plan;
  if (!a.config.empty()) plan = owr::vmr_plan_from_json(owr::read_file(a.config));
  if (!a.seeds.empty()) plan.seeds = a.seeds;
  if (a.lambda) plan.config.lambda_vos = *a.lambda;
  if (a.noise_rate) plan.task.noise_rate = *a.noise_rate;
  if (!a.noise_kind.empty()) plan.task.noise_kind = owr::vmr::parse_noise_kind(a.noise_kind);
  if (a.epochs) plan.config.epochs = *a.epochs;
  try {
    owr::vmr::validate(plan.config);
  } catch (const owr::Error& e) {
    owr::fail(owr::ErrorKind::kInvalidArgument, e.what());
  }
  const path out = a.out.empty() ? owr::default_output_root() / "vmr_demo" : path(a.out);
  const auto report = owr::cmd_vmr_demo(plan, out, !a.no_dumps);
  std::cerr << "wrote " << out.string() << "\n";
  std::cerr << "mean delta far AUROC " << report.mean_delta_far_auroc << ", mean delta acc "
            << report.mean_delta_acc << ", ID-wrong AUROC improved in "
            << report.wrong_auroc_improved << "/" << report.seeds.size() << " seeds\n";
  for (const auto& s : report.seeds) {
    if (s.error) return kExitPartial;
  }
  return kExitOk;
}

// compare / render / validate ------------------------------------------------------------

struct CompareArgs {
  std::string a, b, out;
};

void add_compare(CLI::App& app, CompareArgs& a) {
  auto* cmd = app.add_subcommand("compare", "Paired deltas between two metrics.json reports");
  cmd->add_option("baseline", a.a, "Report A (baseline) metrics.json")->required();
  cmd->add_option("repaired", a.b, "Report B metrics.json")->required();
  cmd->add_option("--out", a.out, "Output directory (comparison.json, tables/paired.md)");
}

int run_compare(const CompareArgs& a) {
  const auto rows_a = owr::metric_rows_from_json(owr::read_file(a.a));
  const auto rows_b = owr::metric_rows_from_json(owr::read_file(a.b));
  const owr::Comparison c = owr::cmd_compare(rows_a, rows_b);
  const std::string table = c.paired.empty()
                                ? std::string()
                                : owr::render_table(c.paired, owr::TableLayout::kPaired);
  if (a.out.empty()) {
    std::cout << owr::to_json(c) << table;
  } else {
    owr::write_file(path(a.out) / "comparison.json", owr::to_json(c));
    if (!table.empty()) owr::write_file(path(a.out) / "tables" / "paired.md", table);
    owr::write_run_meta(a.out, "compare");
  }
  return kExitOk;
}

struct RenderArgs {
  std::vector<std::string> inputs;
  std::string layout, format = "md", out;
};

void add_render(CLI::App& app, RenderArgs& a) {
  auto* cmd = app.add_subcommand("render", "Render metrics/taxonomy/comparison JSON as a table");
  cmd->add_option("inputs", a.inputs, "JSON documents")->required();
  cmd->add_option("--layout", a.layout)->check(CLI::IsMember({"benchmark", "taxonomy", "paired"}));
  cmd->add_option("--format", a.format)->check(CLI::IsMember({"md", "csv"}));
  cmd->add_option("--out", a.out, "Write here instead of stdout");
}

int run_render(const RenderArgs& a) {
  std::vector<std::string> docs;
  for (const auto& p : a.inputs) docs.push_back(owr::read_file(p));
  std::optional<owr::TableLayout> layout;
  if (!a.layout.empty()) layout = owr::parse_table_layout(a.layout);
  const auto format = a.format == "csv" ? owr::TableFormat::kCsv : owr::TableFormat::kMarkdown;
  emit(owr::render_documents(docs, layout, format), a.out);
  return kExitOk;
}

struct ValidateArgs {
  std::vector<std::string> dumps;
};

void add_validate(CLI::App& app, ValidateArgs& a) {
  auto* cmd = app.add_subcommand("validate", "Check dump directories against the format");
  cmd->add_option("dumps", a.dumps, "Dump directories")->required();
}

int run_validate(const ValidateArgs& a) {
  int code = kExitOk;
  for (const auto& d : a.dumps) {
    try {
      const owr::EvalDump dump = owr::load_dump(d);
      const owr::ValidationReport report = owr::validate_dump(dump);
      for (const auto& v : report.violations) {
        std::cout << d << ": " << (v.severity == owr::Severity::kError ? "error" : "warning")
                  << " " << v.code << ": " << v.message << "\n";
      }
      if (report.ok()) {
        std::cout << d << ": ok (" << to_string(dump.role) << ", n=" << dump.n_samples()
                  << ", K=" << dump.n_classes() << ", D=" << dump.feat_dim() << ")\n";
      } else {
        code = kExitData;
      }
    } catch (const owr::Error& e) {
      std::cout << d << ": error: " << e.what() << "\n";
      code = kExitData;
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"owr: open-world reliability toolkit for noisy-label classifiers"};
  app.require_subcommand(1);
  EvalArgs eval_args;
  ScoreArgs score_args;
  TaxonomyArgs taxonomy_args;
  GeometryArgs geometry_args;
  VmrArgs vmr_args;
  CompareArgs compare_args;
  RenderArgs render_args;
  ValidateArgs validate_args;
  add_eval(app, eval_args);
  add_score(app, score_args);
  add_taxonomy(app, taxonomy_args);
  add_geometry(app, geometry_args);
  add_vmr(app, vmr_args);
  add_compare(app, compare_args);
  add_render(app, render_args);
  add_validate(app, validate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "eval") return run_eval(eval_args);
    if (cmd == "score") return run_score(score_args);
    if (cmd == "taxonomy") return run_taxonomy(taxonomy_args);
    if (cmd == "geometry") return run_geometry(geometry_args);
    if (cmd == "vmr-demo") return run_vmr(vmr_args);
    if (cmd == "compare") return run_compare(compare_args);
    if (cmd == "render") return run_render(render_args);
    if (cmd == "validate") return run_validate(validate_args);
  } catch (const owr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitInvalid;
}
