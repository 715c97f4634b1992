#include "owr/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "owr/error.hpp"
#include "owr/io.hpp"
#include "owr/stats.hpp"
#include "text.hpp"

namespace owr {
namespace {

using json = nlohmann::ordered_json;

constexpr const char* kToolVersion = "0.1.0";

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

json parse_json(const std::string& text, ErrorKind kind, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(kind, what + " is not valid JSON: " + e.what());
  }
}

// Strict object readers: unknown keys are errors so typos never pass silently.
class Reader {
 public:
  Reader(const json& obj, std::string context, ErrorKind kind)
      : obj_(obj), context_(std::move(context)), kind_(kind) {
    if (!obj_.is_object()) fail(kind_, context_ + " must be a JSON object");
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    for (const auto& item : obj_.items()) {
      const bool known = std::any_of(keys.begin(), keys.end(),
                                     [&](const char* k) { return item.key() == k; });
      if (!known) fail(kind_, "unknown key in " + context_ + ": " + item.key());
    }
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& raw(const char* key) const {
    if (!obj_.contains(key)) fail(kind_, context_ + " lacks key: " + key);
    return obj_.at(key);
  }

  template <typename T>
  T get(const char* key) const {
    try {
      return raw(key).template get<T>();
    } catch (const json::exception&) {
      fail(kind_, context_ + "." + key + " has the wrong type");
    }
  }

  template <typename T>
  void maybe(const char* key, T& target) const {
    if (has(key)) target = get<T>(key);
  }

  std::optional<double> optional_number(const char* key) const {
    if (!has(key)) return std::nullopt;
    return get<double>(key);
  }

  std::size_t count(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(kind_, context_ + "." + key + " must be a nonnegative integer");
    }
    return v.get<std::size_t>();
  }

  void maybe_count(const char* key, std::size_t& target) const {
    if (has(key)) target = count(key);
  }

 private:
  const json& obj_;
  std::string context_;
  ErrorKind kind_;
};

std::string document_kind(const json& doc) {
  if (doc.is_object() && doc.contains("kind") && doc.at("kind").is_string()) {
    return doc.at("kind").get<std::string>();
  }
  return {};
}

void expect_kind(const json& doc, const char* kind) {
  if (document_kind(doc) != kind) {
    fail(ErrorKind::kData, std::string("expected a ") + kind + " document");
  }
}

// Metric rows ------------------------------------------------------------------

json metric_row_json(const MetricRow& r) {
  json j;
  j["method"] = r.method;
  j["dataset"] = r.dataset;
  j["noise"] = r.noise;
  j["score"] = r.score_name;
  j["acc"] = r.acc;
  j["near_auroc"] = opt(r.near_auroc);
  j["near_fpr95"] = opt(r.near_fpr95);
  j["far_auroc"] = opt(r.far_auroc);
  j["far_fpr95"] = opt(r.far_fpr95);
  j["ece"] = opt(r.ece);
  j["nll"] = opt(r.nll);
  return j;
}

MetricRow metric_row_from(const json& j) {
  const Reader r(j, "metric row", ErrorKind::kData);
  r.allow_only({"method", "dataset", "noise", "score", "acc", "near_auroc", "near_fpr95",
                "far_auroc", "far_fpr95", "ece", "nll"});
  MetricRow row;
  row.method = r.get<std::string>("method");
  row.dataset = r.get<std::string>("dataset");
  row.noise = r.get<std::string>("noise");
  row.score_name = r.get<std::string>("score");
  row.acc = r.get<double>("acc");
  row.near_auroc = r.optional_number("near_auroc");
  row.near_fpr95 = r.optional_number("near_fpr95");
  row.far_auroc = r.optional_number("far_auroc");
  row.far_fpr95 = r.optional_number("far_fpr95");
  row.ece = r.optional_number("ece");
  row.nll = r.optional_number("nll");
  return row;
}

// Taxonomy ---------------------------------------------------------------------

Group parse_group(const std::string& name) {
  for (Group g : kAllGroups) {
    if (to_string(g) == name) return g;
  }
  fail(ErrorKind::kData, "unknown taxonomy group: " + name);
}

json taxonomy_json(const TaxonomyReport& report) {
  json groups = json::array();
  for (const auto& g : report.groups) {
    json item;
    item["name"] = std::string(to_string(g.group));
    item["count"] = g.count;
    item["mass_pct"] = g.mass_pct;
    item["auroc"] = opt(g.auroc);
    item["flagged"] = g.flagged;
    groups.push_back(std::move(item));
  }
  json j;
  j["score_name"] = report.score_name;
  j["median"] = report.median;
  j["n_id"] = report.n_id;
  j["n_ood"] = report.n_ood;
  j["groups"] = std::move(groups);
  j["id_wrong_vs_ood_auroc"] = opt(report.id_wrong_vs_ood_auroc);
  return j;
}

// VMR ----------------------------------------------------------------------------

json task_json(const vmr::TaskConfig& t) {
  json j;
  j["k_classes"] = t.k_classes;
  j["input_dim"] = t.input_dim;
  j["n_per_class"] = t.n_per_class;
  j["n_test_per_class"] = t.n_test_per_class;
  j["n_ood"] = t.n_ood;
  j["noise_kind"] = std::string(vmr::to_string(t.noise_kind));
  j["noise_rate"] = t.noise_rate;
  j["radius"] = t.radius;
  j["sigma"] = t.sigma;
  j["seed"] = t.seed;
  return j;
}

json vmr_config_json(const vmr::VmrConfig& c) {
  json j;
  j["lambda_vos"] = c.lambda_vos;
  j["warmup_epochs"] = c.warmup_epochs;
  j["pool_size"] = c.pool_size;
  j["keep_count"] = c.keep_count;
  j["trusted_keep_fraction"] = opt(c.trusted_keep_fraction);
  j["shrinkage"] = c.shrinkage;
  j["hidden"] = c.hidden;
  j["step_size"] = c.step_size;
  j["momentum"] = c.momentum;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  return j;
}

json arm_json(const vmr::ArmMetrics& m) {
  json j;
  j["acc"] = m.acc;
  j["near_auroc"] = m.near_auroc;
  j["far_auroc"] = m.far_auroc;
  j["far_fpr95"] = m.far_fpr95;
  j["id_wrong_vs_ood_auroc"] = opt(m.id_wrong_vs_ood_auroc);
  j["wrong_mass_pct"] = m.wrong_mass_pct;
  j["wrong_low_mass_pct"] = m.wrong_low_mass_pct;
  j["wrong_low_flagged"] = m.wrong_low_flagged;
  return j;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string regime_setting(const std::string& dataset, const std::string& noise) {
  if (dataset.empty()) return noise.empty() ? "default" : noise;
  return noise.empty() ? dataset : dataset + " " + noise;
}

}  // namespace

// JSON documents -------------------------------------------------------------

std::string to_json(const ScoreVector& scores) {
  json j;
  j["score_name"] = scores.score_name;
  j["direction"] = std::string(to_string(scores.direction));
  j["values"] = scores.values;
  return dump_json(j);
}

namespace {

Direction parse_direction(const std::string& text) {
  if (text == "ood_larger") return Direction::kOodLarger;
  if (text == "id_larger") return Direction::kIdLarger;
  fail(ErrorKind::kData, "unknown score direction: " + text);
}

}  // namespace

ScoreVector score_vector_from_json(const std::string& text) {
  const json doc = parse_json(text, ErrorKind::kData, "score vector");
  const Reader r(doc, "score vector", ErrorKind::kData);
  r.allow_only({"score_name", "direction", "values"});
  ScoreVector sv;
  sv.score_name = r.get<std::string>("score_name");
  sv.direction = parse_direction(r.get<std::string>("direction"));
  sv.values = r.get<std::vector<double>>("values");
  return sv;
}

void write_score_binary(const ScoreVector& scores, const fs::path& dir) {
  json sidecar;
  sidecar["score_name"] = scores.score_name;
  sidecar["direction"] = std::string(to_string(scores.direction));
  sidecar["n"] = scores.values.size();
  sidecar["dtype"] = "float32_le";
  write_file(dir / "scores.json", dump_json(sidecar));
  write_file(dir / "scores.bin", pack_float32(scores.values));
}

ScoreVector read_score_binary(const fs::path& dir) {
  const json doc = parse_json(read_file(dir / "scores.json"), ErrorKind::kData, "scores.json");
  const Reader r(doc, "scores.json", ErrorKind::kData);
  r.allow_only({"score_name", "direction", "n", "dtype"});
  if (r.get<std::string>("dtype") != "float32_le") fail(ErrorKind::kData, "unsupported dtype");
  ScoreVector sv;
  sv.score_name = r.get<std::string>("score_name");
  sv.direction = parse_direction(r.get<std::string>("direction"));
  sv.values = unpack_float32(read_file(dir / "scores.bin"));
  if (sv.values.size() != r.count("n")) fail(ErrorKind::kData, "scores.bin length mismatch");
  return sv;
}

std::string to_json(std::span<const MetricRow> rows) {
  json j;
  j["kind"] = "metrics";
  j["columns"] = kMetricCsvHeader;
  j["rows"] = json::array();
  for (const auto& r : rows) j["rows"].push_back(metric_row_json(r));
  return dump_json(j);
}

std::vector<MetricRow> metric_rows_from_json(const std::string& text) {
  const json doc = parse_json(text, ErrorKind::kData, "metrics document");
  expect_kind(doc, "metrics");
  const Reader r(doc, "metrics document", ErrorKind::kData);
  r.allow_only({"kind", "columns", "rows"});
  if (r.has("columns") && r.get<std::string>("columns") != kMetricCsvHeader) {
    fail(ErrorKind::kData, "metrics document column schema mismatch");
  }
  std::vector<MetricRow> rows;
  for (const auto& item : r.raw("rows")) rows.push_back(metric_row_from(item));
  return rows;
}

std::string to_json(const TaxonomyReport& report, const std::string& dataset,
                    const std::string& noise) {
  json j;
  j["kind"] = "taxonomy";
  j["dataset"] = dataset;
  j["noise"] = noise;
  const json body = taxonomy_json(report);
  for (const auto& item : body.items()) j[item.key()] = item.value();
  return dump_json(j);
}

TaxonomyColumn taxonomy_column_from_json(const std::string& text) {
  const json doc = parse_json(text, ErrorKind::kData, "taxonomy document");
  expect_kind(doc, "taxonomy");
  const Reader r(doc, "taxonomy document", ErrorKind::kData);
  r.allow_only({"kind", "dataset", "noise", "score_name", "median", "n_id", "n_ood", "groups",
                "id_wrong_vs_ood_auroc"});
  TaxonomyColumn col;
  r.maybe("dataset", col.dataset);
  r.maybe("noise", col.noise);
  TaxonomyReport& rep = col.report;
  r.maybe("score_name", rep.score_name);
  rep.median = r.get<double>("median");
  r.maybe_count("n_id", rep.n_id);
  r.maybe_count("n_ood", rep.n_ood);
  rep.id_wrong_vs_ood_auroc = r.optional_number("id_wrong_vs_ood_auroc");
  const json& groups = r.raw("groups");
  if (!groups.is_array() || groups.size() != 4) {
    fail(ErrorKind::kData, "taxonomy document needs exactly four groups");
  }
  std::set<Group> seen;
  for (const auto& item : groups) {
    const Reader g(item, "taxonomy group", ErrorKind::kData);
    g.allow_only({"name", "count", "mass_pct", "auroc", "flagged"});
    GroupStats s;
    s.group = parse_group(g.get<std::string>("name"));
    if (!seen.insert(s.group).second) fail(ErrorKind::kData, "duplicate taxonomy group");
    g.maybe_count("count", s.count);
    s.mass_pct = g.get<double>("mass_pct");
    s.auroc = g.optional_number("auroc");
    s.flagged = g.get<bool>("flagged");
    rep.at(s.group) = s;
  }
  return col;
}

std::string to_json(const GeometryReport& report) {
  json pops = json::array();
  for (const auto& p : report.populations) {
    json item;
    item["name"] = p.name;
    item["n"] = p.n;
    item["participation_ratio"] = opt(p.participation_ratio);
    item["participation_ratio_per_class_mean"] = opt(p.participation_ratio_per_class_mean);
    item["intrinsic_dim_mle"] = opt(p.intrinsic_dim_mle);
    item["mle_duplicates_collapsed"] = p.mle_duplicates_collapsed;
    pops.push_back(std::move(item));
  }
  json centroids = json::array();
  for (Eigen::Index i = 0; i < report.centroid_table.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < report.centroid_table.cols(); ++c) {
      row.push_back(report.centroid_table(i, c));
    }
    centroids.push_back(std::move(row));
  }
  json j;
  j["kind"] = "geometry";
  j["populations"] = std::move(pops);
  j["drift_label"] = report.drift_label;
  j["drift_alignment_cos"] = opt(report.drift_alignment_cos);
  j["centroid_table"] = std::move(centroids);
  return dump_json(j);
}

std::string projection_csv(const Projection2d& projection, std::span<const std::string> names) {
  if (names.size() != projection.coordinates.size()) {
    fail(ErrorKind::kInvalidArgument, "one name per projected population required");
  }
  std::string out = "population,x,y\n";
  for (std::size_t p = 0; p < names.size(); ++p) {
    const Matrix& xy = projection.coordinates[p];
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
      out += text::csv_field(names[p]) + ',' + text::format_number(xy(i, 0)) + ',' +
             text::format_number(xy(i, 1)) + '\n';
    }
  }
  return out;
}

std::string to_json(const vmr::VmrPairedReport& report) {
  json seeds = json::array();
  for (const auto& s : report.seeds) {
    json item;
    item["seed"] = s.seed;
    item["error"] = s.error ? json(*s.error) : json(nullptr);
    if (!s.error) {
      item["baseline"] = arm_json(s.baseline);
      item["repaired"] = arm_json(s.repaired);
      item["delta_far_auroc"] = s.delta_far_auroc;
      item["delta_near_auroc"] = s.delta_near_auroc;
      item["delta_acc"] = s.delta_acc;
    }
    seeds.push_back(std::move(item));
  }
  json j;
  j["kind"] = "vmr_paired";
  j["task"] = task_json(report.task);
  j["config"] = vmr_config_json(report.config);
  j["scoring"] = "energy";
  j["seeds"] = std::move(seeds);
  j["mean_delta_far_auroc"] = report.mean_delta_far_auroc;
  j["mean_delta_near_auroc"] = report.mean_delta_near_auroc;
  j["mean_delta_acc"] = report.mean_delta_acc;
  j["wrong_auroc_improved"] = report.wrong_auroc_improved;
  j["repair_partial"] = report.repair_partial;
  return dump_json(j);
}

TableLayout document_layout(const std::string& text) {
  const std::string kind =
      document_kind(parse_json(text, ErrorKind::kData, "document"));
  if (kind == "metrics") return TableLayout::kBenchmark;
  if (kind == "taxonomy") return TableLayout::kTaxonomy;
  if (kind == "comparison") return TableLayout::kPaired;
  fail(ErrorKind::kData, "document is not renderable (kind '" + kind + "')");
}

std::string render_documents(std::span<const std::string> documents,
                             std::optional<TableLayout> layout, TableFormat format) {
  if (documents.empty()) fail(ErrorKind::kInvalidArgument, "nothing to render");
  const TableLayout first = document_layout(documents.front());
  for (const auto& d : documents) {
    if (document_layout(d) != first) fail(ErrorKind::kInvalidArgument, "mixed layouts");
  }
  const TableLayout wanted = layout.value_or(first);
  TableInput input;
  switch (first) {
    case TableLayout::kBenchmark: {
      std::vector<MetricRow> rows;
      for (const auto& d : documents) {
        auto part = metric_rows_from_json(d);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      input = std::move(rows);
      break;
    }
    case TableLayout::kTaxonomy: {
      std::vector<TaxonomyColumn> cols;
      for (const auto& d : documents) cols.push_back(taxonomy_column_from_json(d));
      input = std::move(cols);
      break;
    }
    case TableLayout::kPaired: {
      std::vector<PairedRow> rows;
      for (const auto& d : documents) {
        auto part = paired_rows_from_json(d);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      input = std::move(rows);
      break;
    }
  }
  return render_table(input, wanted, format);
}

// Run plans ------------------------------------------------------------------

RunPlan run_plan_from_json(const std::string& text) {
  const json doc = parse_json(text, ErrorKind::kInvalidArgument, "plan");
  const Reader r(doc, "plan", ErrorKind::kInvalidArgument);
  r.allow_only({"id_test", "fit", "near_ood", "far_ood", "scores", "output_dir", "primary_score",
                "method", "dataset", "noise", "options", "taxonomy", "geometry",
                "fpr_convention", "ece_bins"});
  RunPlan plan;
  if (r.has("id_test")) plan.id_test = r.get<std::string>("id_test");
  if (r.has("fit")) plan.fit = r.get<std::string>("fit");
  auto paths = [&](const char* key, std::vector<fs::path>& out) {
    if (!r.has(key)) return;
    out.clear();
    for (const auto& p : r.get<std::vector<std::string>>(key)) out.emplace_back(p);
  };
  paths("near_ood", plan.near_ood);
  paths("far_ood", plan.far_ood);
  r.maybe("scores", plan.scores);
  if (r.has("output_dir")) plan.output_dir = r.get<std::string>("output_dir");
  r.maybe("primary_score", plan.primary_score);
  r.maybe("method", plan.method);
  r.maybe("dataset", plan.dataset);
  r.maybe("noise", plan.noise);
  r.maybe_count("ece_bins", plan.ece_bins);
  if (r.has("fpr_convention")) {
    const auto c = r.get<std::string>("fpr_convention");
    if (c == "id_acceptance") {
      plan.fpr_convention = FprConvention::kIdAcceptance95;
    } else if (c == "ood_recall") {
      plan.fpr_convention = FprConvention::kOodRecall95;
    } else {
      fail(ErrorKind::kInvalidArgument, "unknown fpr_convention: " + c);
    }
  }
  if (r.has("options")) {
    const Reader o(r.raw("options"), "plan.options", ErrorKind::kInvalidArgument);
    o.allow_only({"energy_temperature", "odin_temperature", "mahalanobis_shrinkage", "knn_k",
                  "react_percentile", "vim_dim"});
    ScoreOptions& so = plan.score_options;
    o.maybe("energy_temperature", so.energy_temperature);
    o.maybe("odin_temperature", so.odin_temperature);
    if (o.has("mahalanobis_shrinkage")) so.mahalanobis_shrinkage = o.get<double>("mahalanobis_shrinkage");
    if (o.has("knn_k")) so.knn_k = o.count("knn_k");
    o.maybe("react_percentile", so.react_percentile);
    if (o.has("vim_dim")) so.vim_dim = o.count("vim_dim");
  }
  if (r.has("taxonomy")) {
    const Reader t(r.raw("taxonomy"), "plan.taxonomy", ErrorKind::kInvalidArgument);
    t.allow_only({"median_mode", "include_correct_high_auroc", "collapse_threshold"});
    if (t.has("median_mode")) {
      const auto m = t.get<std::string>("median_mode");
      if (m == "global") {
        plan.taxonomy.median_mode = MedianMode::kGlobal;
      } else if (m == "per_group") {
        plan.taxonomy.median_mode = MedianMode::kPerGroup;
      } else {
        fail(ErrorKind::kInvalidArgument, "unknown median_mode: " + m);
      }
    }
    t.maybe("include_correct_high_auroc", plan.taxonomy.include_correct_high_auroc);
    t.maybe("collapse_threshold", plan.taxonomy.collapse_threshold);
  }
  if (r.has("geometry")) {
    const Reader g(r.raw("geometry"), "plan.geometry", ErrorKind::kInvalidArgument);
    g.allow_only({"enabled", "mle_k_min", "mle_k_max", "max_samples"});
    g.maybe("enabled", plan.run_geometry);
    g.maybe_count("mle_k_min", plan.geometry.mle_k_min);
    g.maybe_count("mle_k_max", plan.geometry.mle_k_max);
    g.maybe_count("max_samples", plan.geometry.max_samples);
  }
  return plan;
}

std::string to_json(const RunPlan& plan) {
  auto strings = [](const std::vector<fs::path>& ps) {
    json a = json::array();
    for (const auto& p : ps) a.push_back(p.string());
    return a;
  };
  json j;
  j["id_test"] = plan.id_test.string();
  j["fit"] = plan.fit ? json(plan.fit->string()) : json(nullptr);
  j["near_ood"] = strings(plan.near_ood);
  j["far_ood"] = strings(plan.far_ood);
  j["scores"] = plan.scores;
  j["output_dir"] = plan.output_dir.string();
  j["primary_score"] = plan.primary_score;
  j["method"] = plan.method;
  j["dataset"] = plan.dataset;
  j["noise"] = plan.noise;
  const ScoreOptions& so = plan.score_options;
  json o;
  o["energy_temperature"] = so.energy_temperature;
  o["odin_temperature"] = so.odin_temperature;
  o["mahalanobis_shrinkage"] = opt(so.mahalanobis_shrinkage);
  o["knn_k"] = so.knn_k ? json(*so.knn_k) : json(nullptr);
  o["react_percentile"] = so.react_percentile;
  o["vim_dim"] = so.vim_dim ? json(*so.vim_dim) : json(nullptr);
  j["options"] = std::move(o);
  json t;
  t["median_mode"] = plan.taxonomy.median_mode == MedianMode::kGlobal ? "global" : "per_group";
  t["include_correct_high_auroc"] = plan.taxonomy.include_correct_high_auroc;
  t["collapse_threshold"] = plan.taxonomy.collapse_threshold;
  j["taxonomy"] = std::move(t);
  json g;
  g["enabled"] = plan.run_geometry;
  g["mle_k_min"] = plan.geometry.mle_k_min;
  g["mle_k_max"] = plan.geometry.mle_k_max;
  g["max_samples"] = plan.geometry.max_samples;
  j["geometry"] = std::move(g);
  j["fpr_convention"] =
      plan.fpr_convention == FprConvention::kIdAcceptance95 ? "id_acceptance" : "ood_recall";
  j["ece_bins"] = plan.ece_bins;
  return dump_json(j);
}

fs::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return (env != nullptr && *env != '\0') ? fs::path(env) : fs::path(kDefaultOutputRoot);
}

fs::path resolved_output_dir(const RunPlan& plan) {
  return plan.output_dir.empty() ? default_output_root() / plan.method : plan.output_dir;
}

void validate_plan(const RunPlan& plan, bool check_paths) {
  auto invalid = [](const std::string& what) { fail(ErrorKind::kInvalidArgument, what); };
  if (plan.id_test.empty()) invalid("plan needs an id_test dump");
  if (plan.scores.empty()) invalid("plan needs at least one score");
  const auto& known = known_scores();
  auto is_known = [&](const std::string& s) {
    return std::find(known.begin(), known.end(), s) != known.end();
  };
  std::set<std::string> seen;
  for (const auto& s : plan.scores) {
    if (!is_known(s)) invalid("unknown score: " + s);
    if (!seen.insert(s).second) invalid("duplicate score: " + s);
    if (score_requires_fit(s) && !plan.fit) invalid(s + " requires fit dump");
  }
  if (!is_known(plan.primary_score)) invalid("unknown primary score: " + plan.primary_score);
  if (score_requires_fit(plan.primary_score) && !plan.fit) {
    invalid(plan.primary_score + " requires fit dump");
  }
  if (plan.ece_bins == 0) invalid("ece_bins must be positive");
  if (plan.geometry.mle_k_min < 2 || plan.geometry.mle_k_max < plan.geometry.mle_k_min) {
    invalid("geometry needs 2 <= mle_k_min <= mle_k_max");
  }
  if (!check_paths) return;
  auto exists = [&](const fs::path& p) {
    if (!fs::is_directory(p)) invalid("dump directory does not exist: " + p.string());
  };
  exists(plan.id_test);
  if (plan.fit) exists(*plan.fit);
  for (const auto& p : plan.near_ood) exists(p);
  for (const auto& p : plan.far_ood) exists(p);
}

// Evaluation -------------------------------------------------------------------

namespace {

std::vector<EvalDump> load_pool(const std::vector<fs::path>& paths, std::vector<SkippedItem>& skipped) {
  std::vector<EvalDump> out;
  for (const auto& p : paths) {
    try {
      EvalDump d = load_dump(p);
      if (d.role != Role::kOod) fail(ErrorKind::kData, "dump role is not ood");
      out.push_back(std::move(d));
    } catch (const Error& e) {
      skipped.push_back({p.string(), e.what()});
    }
  }
  return out;
}

ScoreVector pooled_scores(const ScoreFunction& f, const std::vector<EvalDump>& pool) {
  std::vector<ScoreVector> parts;
  for (const auto& d : pool) parts.push_back(orient_ood_larger(f(d)));
  return concat(parts);
}

Matrix stack(const std::vector<EvalDump>& pool, Matrix EvalDump::*member) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = (pool.front().*member).cols();
  for (const auto& d : pool) {
    if ((d.*member).cols() != cols) fail(ErrorKind::kData, "OOD dumps disagree in width");
    rows += (d.*member).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& d : pool) {
    out.middleRows(at, (d.*member).rows()) = d.*member;
    at += (d.*member).rows();
  }
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace

EvalResult evaluate(const RunPlan& plan) {
  EvalResult result;
  const EvalDump id = load_dump(plan.id_test);
  if (id.role != Role::kIdTest) fail(ErrorKind::kData, "id_test dump has role " + std::string(to_string(id.role)));
  if (!id.labels) fail(ErrorKind::kData, "id_test dump carries no labels");

  std::optional<EvalDump> fit;
  if (plan.fit) {
    try {
      fit = load_dump(*plan.fit);
    } catch (const Error& e) {
      result.skipped.push_back({plan.fit->string(), e.what()});
    }
  }
  const std::vector<EvalDump> near = load_pool(plan.near_ood, result.skipped);
  const std::vector<EvalDump> far = load_pool(plan.far_ood, result.skipped);

  const double acc = accuracy(id.logits, *id.labels);
  std::optional<double> ece_value, nll_value;
  try {
    ece_value = ece(id.logits, *id.labels, plan.ece_bins);
    nll_value = nll(id.logits, *id.labels);
  } catch (const Error& e) {
    result.skipped.push_back({"calibration", e.what()});
  }

  auto make_score = [&](const std::string& name) {
    if (score_requires_fit(name) && !fit) fail(ErrorKind::kData, name + " requires fit dump");
    return ScoreFunction(name, fit ? &*fit : nullptr, plan.score_options);
  };

  for (const auto& name : plan.scores) {
    try {
      const ScoreFunction f = make_score(name);
      const ScoreVector id_scores = orient_ood_larger(f(id));
      MetricRow row;
      row.method = plan.method;
      row.dataset = plan.dataset;
      row.noise = plan.noise;
      row.score_name = name;
      row.acc = acc;
      if (!near.empty()) {
        const ScoreVector pool = pooled_scores(f, near);
        row.near_auroc = 100.0 * auroc(id_scores, pool);
        row.near_fpr95 = 100.0 * fpr_at_95_tpr(id_scores, pool, plan.fpr_convention);
      }
      if (!far.empty()) {
        const ScoreVector pool = pooled_scores(f, far);
        row.far_auroc = 100.0 * auroc(id_scores, pool);
        row.far_fpr95 = 100.0 * fpr_at_95_tpr(id_scores, pool, plan.fpr_convention);
      }
      row.ece = ece_value;
      row.nll = nll_value;
      result.rows.push_back(std::move(row));
    } catch (const Error& e) {
      result.skipped.push_back({name, e.what()});
    }
  }

  // Diagnostics run against the far-OOD pool, falling back to near-OOD.
  const std::vector<EvalDump>& ood = far.empty() ? near : far;
  if (ood.empty()) return result;
  try {
    const ScoreFunction f = make_score(plan.primary_score);
    result.taxonomy = taxonomy_report(id, ood, f, plan.taxonomy);
  } catch (const Error& e) {
    result.skipped.push_back({"taxonomy", e.what()});
  }
  if (!plan.run_geometry) return result;
  try {
    const Matrix ood_features = stack(ood, &EvalDump::features);
    const Matrix ood_logits = stack(ood, &EvalDump::logits);
    result.geometry = geometry_report(id.features, id.logits, *id.labels, ood_features,
                                      ood_logits, plan.geometry);
    const std::vector<std::size_t> wrong = id_wrong_set(id.logits, *id.labels);
    std::vector<std::size_t> correct;
    for (std::size_t i = 0, w = 0; i < id.n_samples(); ++i) {
      if (w < wrong.size() && wrong[w] == i) {
        ++w;
      } else {
        correct.push_back(i);
      }
    }
    const std::vector<Matrix> populations = {select_rows(id.features, correct),
                                             select_rows(id.features, wrong), ood_features};
    result.projection = pca_project_2d(populations);
  } catch (const Error& e) {
    result.skipped.push_back({"geometry", e.what()});
  }
  return result;
}

void write_eval_outputs(const RunPlan& plan, const EvalResult& result, const fs::path& dir) {
  write_file(dir / "metrics.json", to_json(result.rows));
  write_file(dir / "metrics.csv", metric_rows_to_csv(result.rows));
  if (!result.rows.empty()) {
    write_file(dir / "tables" / "benchmark.md",
               render_table(result.rows, TableLayout::kBenchmark));
  }
  if (result.taxonomy) {
    write_file(dir / "taxonomy.json", to_json(*result.taxonomy, plan.dataset, plan.noise));
    const std::vector<TaxonomyColumn> cols{{plan.dataset, plan.noise, *result.taxonomy}};
    write_file(dir / "tables" / "taxonomy.md", render_table(cols, TableLayout::kTaxonomy));
  }
  if (result.geometry) write_file(dir / "geometry.json", to_json(*result.geometry));
  if (result.projection) {
    const std::vector<std::string> names{"id_correct", "id_wrong", "ood"};
    write_file(dir / "projection.csv", projection_csv(*result.projection, names));
  }
  json skipped = json::array();
  for (const auto& s : result.skipped) skipped.push_back({{"what", s.what}, {"reason", s.reason}});
  write_file(dir / "skipped.json", dump_json(json{{"skipped", skipped}}));
  write_run_meta(dir, "eval");
}

EvalResult cmd_eval(const RunPlan& plan) {
  validate_plan(plan);
  EvalResult result = evaluate(plan);
  write_eval_outputs(plan, result, resolved_output_dir(plan));
  return result;
}

// Comparison -------------------------------------------------------------------

std::string_view to_string(DeltaVerdict v) {
  switch (v) {
    case DeltaVerdict::kImprove: return "improve";
    case DeltaVerdict::kDegrade: return "degrade";
    case DeltaVerdict::kEqual: return "equal";
  }
  return "unknown";
}

namespace {

struct MetricField {
  const char* name;
  bool higher_is_better;
  std::optional<double> (*get)(const MetricRow&);
};

const MetricField kMetricFields[] = {
    {"acc", true, [](const MetricRow& r) { return std::optional<double>(r.acc); }},
    {"near_auroc", true, [](const MetricRow& r) { return r.near_auroc; }},
    {"near_fpr95", false, [](const MetricRow& r) { return r.near_fpr95; }},
    {"far_auroc", true, [](const MetricRow& r) { return r.far_auroc; }},
    {"far_fpr95", false, [](const MetricRow& r) { return r.far_fpr95; }},
    {"ece", false, [](const MetricRow& r) { return r.ece; }},
    {"nll", false, [](const MetricRow& r) { return r.nll; }},
};

using RowKey = std::tuple<std::string, std::string, std::string>;

std::map<RowKey, const MetricRow*> index_rows(std::span<const MetricRow> rows, const char* side) {
  std::map<RowKey, const MetricRow*> out;
  for (const auto& r : rows) {
    if (!out.emplace(RowKey{r.dataset, r.noise, r.score_name}, &r).second) {
      fail(ErrorKind::kInvalidArgument, std::string("duplicate row in report ") + side);
    }
  }
  return out;
}

std::string single_method(std::span<const MetricRow> rows) {
  std::set<std::string> methods;
  for (const auto& r : rows) methods.insert(r.method);
  if (methods.size() == 1) return *methods.begin();
  std::string joined;
  for (const auto& m : methods) joined += (joined.empty() ? "" : "+") + m;
  return joined;
}

}  // namespace

Comparison cmd_compare(std::span<const MetricRow> a, std::span<const MetricRow> b) {
  if (a.empty() || b.empty()) fail(ErrorKind::kInvalidArgument, "schema mismatch: empty report");
  const auto ia = index_rows(a, "a");
  const auto ib = index_rows(b, "b");
  if (ia.size() != ib.size() ||
      !std::equal(ia.begin(), ia.end(), ib.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; })) {
    fail(ErrorKind::kInvalidArgument, "schema mismatch: reports cover different rows");
  }
  std::set<std::string> scores;
  for (const auto& [key, row] : ia) scores.insert(std::get<2>(key));

  Comparison out;
  out.method_a = single_method(a);
  out.method_b = single_method(b);
  for (const auto& [key, ra] : ia) {
    const MetricRow* rb = ib.at(key);
    for (const auto& field : kMetricFields) {
      const auto va = field.get(*ra);
      const auto vb = field.get(*rb);
      if (va.has_value() != vb.has_value()) {
        fail(ErrorKind::kInvalidArgument,
             std::string("schema mismatch: metric ") + field.name + " present in one report only");
      }
      if (!va) continue;
      MetricDelta d;
      std::tie(d.dataset, d.noise, d.score_name) = key;
      d.metric = field.name;
      d.higher_is_better = field.higher_is_better;
      d.a = *va;
      d.b = *vb;
      d.delta = *vb - *va;
      if (d.delta != 0.0) {
        d.verdict = (d.delta > 0.0) == field.higher_is_better ? DeltaVerdict::kImprove
                                                              : DeltaVerdict::kDegrade;
      }
      out.deltas.push_back(std::move(d));
    }
    if (ra->far_auroc && rb->far_auroc) {
      std::string setting = regime_setting(ra->dataset, ra->noise);
      if (scores.size() > 1) setting += " (" + ra->score_name + ")";
      out.paired.push_back(make_paired_row(*ra, *rb, std::move(setting)));
    }
  }
  return out;
}

std::string to_json(const Comparison& comparison) {
  json deltas = json::array();
  for (const auto& d : comparison.deltas) {
    json item;
    item["dataset"] = d.dataset;
    item["noise"] = d.noise;
    item["score"] = d.score_name;
    item["metric"] = d.metric;
    item["higher_is_better"] = d.higher_is_better;
    item["a"] = d.a;
    item["b"] = d.b;
    item["delta"] = d.delta;
    item["verdict"] = std::string(to_string(d.verdict));
    deltas.push_back(std::move(item));
  }
  json paired = json::array();
  for (const auto& p : comparison.paired) {
    json item;
    item["setting"] = p.setting;
    item["baseline_far_auroc"] = p.baseline_far_auroc;
    item["repaired_far_auroc"] = p.repaired_far_auroc;
    item["delta"] = p.delta();
    item["baseline_acc"] = p.baseline_acc;
    item["repaired_acc"] = p.repaired_acc;
    item["id_delta"] = p.id_delta();
    paired.push_back(std::move(item));
  }
  json j;
  j["kind"] = "comparison";
  j["method_a"] = comparison.method_a;
  j["method_b"] = comparison.method_b;
  j["deltas"] = std::move(deltas);
  j["paired"] = std::move(paired);
  return dump_json(j);
}

std::vector<PairedRow> paired_rows_from_json(const std::string& text) {
  const json doc = parse_json(text, ErrorKind::kData, "comparison document");
  expect_kind(doc, "comparison");
  const Reader r(doc, "comparison document", ErrorKind::kData);
  std::vector<PairedRow> rows;
  for (const auto& item : r.raw("paired")) {
    const Reader p(item, "paired row", ErrorKind::kData);
    p.allow_only({"setting", "baseline_far_auroc", "repaired_far_auroc", "delta", "baseline_acc",
                  "repaired_acc", "id_delta"});
    rows.push_back(PairedRow{p.get<std::string>("setting"), p.get<double>("baseline_far_auroc"),
                             p.get<double>("repaired_far_auroc"), p.get<double>("baseline_acc"),
                             p.get<double>("repaired_acc")});
  }
  return rows;
}

// VMR demo -------------------------------------------------------------------------

VmrPlan vmr_plan_from_json(const std::string& text) {
  const json doc = parse_json(text, ErrorKind::kInvalidArgument, "vmr config");
  const Reader r(doc, "vmr config", ErrorKind::kInvalidArgument);
  r.allow_only({"task", "vmr", "seeds"});
  VmrPlan plan;
  if (r.has("task")) {
    const Reader t(r.raw("task"), "task", ErrorKind::kInvalidArgument);
    t.allow_only({"k_classes", "input_dim", "n_per_class", "n_test_per_class", "n_ood",
                  "noise_kind", "noise_rate", "radius", "sigma", "seed"});
    vmr::TaskConfig& tc = plan.task;
    t.maybe_count("k_classes", tc.k_classes);
    t.maybe_count("input_dim", tc.input_dim);
    t.maybe_count("n_per_class", tc.n_per_class);
    t.maybe_count("n_test_per_class", tc.n_test_per_class);
    t.maybe_count("n_ood", tc.n_ood);
    if (t.has("noise_kind")) {
      try {
        tc.noise_kind = vmr::parse_noise_kind(t.get<std::string>("noise_kind"));
      } catch (const Error& e) {
        fail(ErrorKind::kInvalidArgument, e.what());
      }
    }
    t.maybe("noise_rate", tc.noise_rate);
    t.maybe("radius", tc.radius);
    t.maybe("sigma", tc.sigma);
    if (t.has("seed")) tc.seed = t.count("seed");
  }
  if (r.has("vmr")) {
    const Reader v(r.raw("vmr"), "vmr", ErrorKind::kInvalidArgument);
    v.allow_only({"lambda_vos", "warmup_epochs", "pool_size", "keep_count",
                  "trusted_keep_fraction", "shrinkage", "hidden", "step_size", "momentum",
                  "epochs", "batch_size"});
    vmr::VmrConfig& c = plan.config;
    v.maybe("lambda_vos", c.lambda_vos);
    v.maybe_count("warmup_epochs", c.warmup_epochs);
    v.maybe_count("pool_size", c.pool_size);
    v.maybe_count("keep_count", c.keep_count);
    if (v.has("trusted_keep_fraction")) c.trusted_keep_fraction = v.get<double>("trusted_keep_fraction");
    v.maybe("shrinkage", c.shrinkage);
    v.maybe_count("hidden", c.hidden);
    v.maybe("step_size", c.step_size);
    v.maybe("momentum", c.momentum);
    v.maybe_count("epochs", c.epochs);
    v.maybe_count("batch_size", c.batch_size);
  }
  if (r.has("seeds")) {
    plan.seeds.clear();
    for (const auto& s : r.raw("seeds")) {
      if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
        fail(ErrorKind::kInvalidArgument, "seeds must be nonnegative integers");
      }
      plan.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (plan.seeds.empty()) fail(ErrorKind::kInvalidArgument, "vmr config needs at least one seed");
  try {
    vmr::validate(plan.config);
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidArgument, e.what());
  }
  return plan;
}

std::string to_json(const VmrPlan& plan) {
  json j;
  j["task"] = task_json(plan.task);
  j["vmr"] = vmr_config_json(plan.config);
  j["seeds"] = plan.seeds;
  return dump_json(j);
}

vmr::VmrPairedReport cmd_vmr_demo(const VmrPlan& plan, const fs::path& dir, bool write_dumps) {
  auto persist = [&](const vmr::ArmArtifacts& arm) {
    const fs::path arm_dir =
        dir / ("seed_" + std::to_string(arm.seed)) / (arm.repaired ? "vmr" : "baseline");
    write_file(arm_dir / "history.csv", vmr::history_csv(arm.result->history));
    if (!write_dumps) return;
    write_dump(arm.dumps->fit, arm_dir / "fit");
    write_dump(arm.dumps->id_test, arm_dir / "id_test");
    write_dump(arm.dumps->near_ood, arm_dir / "near_ood");
    write_dump(arm.dumps->far_ood, arm_dir / "far_ood");
  };
  const vmr::VmrPairedReport report =
      vmr::vmr_experiment(plan.task, plan.config, plan.seeds, persist);
  write_file(dir / "vmr_report.json", to_json(report));

  std::vector<PairedRow> rows;
  for (const auto& s : report.seeds) {
    if (s.error) continue;
    rows.push_back(PairedRow{"seed " + std::to_string(s.seed), s.baseline.far_auroc,
                             s.repaired.far_auroc, s.baseline.acc, s.repaired.acc});
  }
  if (!rows.empty()) write_file(dir / "tables" / "paired.md", render_table(rows, TableLayout::kPaired));
  write_run_meta(dir, "vmr-demo");
  return report;
}

void write_run_meta(const fs::path& dir, const std::string& command) {
  json j;
  j["command"] = command;
  j["tool_version"] = kToolVersion;
  j["timestamp_utc"] = utc_timestamp();
  write_file(dir / "run_meta.json", dump_json(j));
}

}  // namespace owr
