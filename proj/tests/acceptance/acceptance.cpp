// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "owr/evaldump.hpp"
#include "owr/geometry.hpp"
#include "owr/metrics.hpp"
#include "owr/render.hpp"
#include "owr/scores.hpp"
#include "owr/stats.hpp"
#include "owr/taxonomy.hpp"
#include "owr/vmr.hpp"
#include "table_fixtures.hpp"

namespace fs = std::filesystem;
using namespace owr;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// 1 ---------------------------------------------------------------------------

Outcome auroc_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> size(1, 300);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = size(rng);
    const std::size_t m = size(rng);
    std::vector<double> id, ood;
    if (t % 2 == 0) {
      id = fixture::tied_scores(n, rng);
      ood = fixture::tied_scores(m, rng, 0.75);
    } else {
      for (std::size_t i = 0; i < n; ++i) id.push_back(g(rng));
      for (std::size_t i = 0; i < m; ++i) ood.push_back(g(rng) + 0.5);
      // inject exact cross-set ties
      for (std::size_t i = 0; i < std::min(n, m) / 4; ++i) ood[i] = id[i];
    }
    worst = std::max(worst, std::abs(auroc(id, ood) - oracle::brute_auroc(id, ood)));
  }
  return {worst <= 1e-12, "500 pairs, max |diff| " + fmt(worst)};
}

// 2 ---------------------------------------------------------------------------

Outcome fpr_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> size(20, 400);
  std::normal_distribution<double> g(0.0, 1.0);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    ScoreVector id{{}, "s", Direction::kOodLarger};
    ScoreVector ood{{}, "s", Direction::kOodLarger};
    if (t % 2 == 0) {
      id.values = fixture::tied_scores(size(rng), rng);
      ood.values = fixture::tied_scores(size(rng), rng, 1.0);
    } else {
      for (std::size_t i = 0, n = size(rng); i < n; ++i) id.values.push_back(g(rng));
      for (std::size_t i = 0, n = size(rng); i < n; ++i) ood.values.push_back(g(rng) + 1.0);
    }
    if (fpr_at_95_tpr(id, ood, FprConvention::kIdAcceptance95) !=
        oracle::sweep_fpr95(id.values, ood.values, true)) {
      ++mismatches;
    }
    if (fpr_at_95_tpr(id, ood, FprConvention::kOodRecall95) !=
        oracle::sweep_fpr95(id.values, ood.values, false)) {
      ++mismatches;
    }
  }
  return {mismatches == 0, "200 pairs x 2 conventions, " + std::to_string(mismatches) + " mismatches"};
}

// 3 ---------------------------------------------------------------------------

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

Outcome score_closed_forms() {
  std::vector<std::string> bad;
  const double e0 = energy(row({0.0, 0.0})).values[0];
  if (std::abs(e0 + std::log(2.0)) > 1e-12) bad.push_back("energy([0,0])=" + fmt(e0, 17));
  const double m0 = msp(row({std::log(3.0), 0.0})).values[0];
  if (std::abs(m0 - 0.75) > 1e-12) bad.push_back("msp=" + fmt(m0, 17));
  for (int k : {2, 3, 10, 100, 1000}) {
    const Matrix u = Matrix::Constant(1, k, 0.37);
    const double h = shannon_entropy(u).values[0];
    if (std::abs(h - std::log(static_cast<double>(k))) > 1e-12) {
      bad.push_back("entropy(uniform " + std::to_string(k) + ")");
    }
  }
  const std::vector<std::vector<double>> extremes = {
      {1000.0, -1000.0, 999.0}, {-1000.0, -1000.0}, {1000.0, 1000.0, 1000.0}, {-1000.0, 0.0, 1000.0}};
  for (const auto& z : extremes) {
    Matrix m(1, static_cast<Eigen::Index>(z.size()));
    for (std::size_t j = 0; j < z.size(); ++j) m(0, static_cast<Eigen::Index>(j)) = z[j];
    const double e = energy(m).values[0];
    const double ref = oracle::energy_long(z);
    if (!std::isfinite(e) || std::abs(e - ref) > 1e-12 * std::max(1.0, std::abs(ref))) {
      bad.push_back("energy extreme " + fmt(e));
    }
  }
  std::string detail = bad.empty() ? "energy, msp, entropy, |z|<=1000 stable" : bad.front();
  return {bad.empty(), detail};
}

// 4 ---------------------------------------------------------------------------

Outcome shift_invariance() {
  const EvalDump id = fixture::random_dump(400, 6, 12, 404);
  const EvalDump ood = fixture::random_ood_dump(id, 300, 405);
  const std::vector<std::string> names = {"energy", "msp", "maxlogit", "margin", "entropy", "odin"};
  double worst_auroc = 0.0;
  double worst_energy = 0.0;
  for (double c : {-7.5, 0.25, 3.0, 100.0}) {
    EvalDump id_s = id;
    EvalDump ood_s = ood;
    id_s.logits.array() += c;
    ood_s.logits.array() += c;
    for (const auto& name : names) {
      const ScoreFunction f(name, nullptr, {});
      const double a0 = auroc(orient_ood_larger(f(id)), orient_ood_larger(f(ood)));
      const double a1 = auroc(orient_ood_larger(f(id_s)), orient_ood_larger(f(ood_s)));
      worst_auroc = std::max(worst_auroc, std::abs(a0 - a1));
    }
    const auto e0 = energy(id.logits).values;
    const auto e1 = energy(id_s.logits).values;
    for (std::size_t i = 0; i < e0.size(); ++i) {
      // one rounding of the shifted logits and one of the sum
      const double ulp = 4.0 * std::numeric_limits<double>::epsilon() * (std::abs(e0[i]) + std::abs(c));
      worst_energy = std::max(worst_energy, std::abs(e1[i] - (e0[i] - c)) / std::max(ulp, 1e-300));
    }
  }
  const bool pass = worst_auroc <= 1e-12 && worst_energy <= 1.0;
  return {pass, "max AUROC change " + fmt(worst_auroc) + ", energy shift error " +
                    fmt(worst_energy) + " ulp-units"};
}

// 5 ---------------------------------------------------------------------------

Outcome taxonomy_mass_identity() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> size(150, 700);
  std::uniform_int_distribution<std::size_t> classes(3, 10);
  const ScoreFunction energy_fn("energy", nullptr, {});
  int failures = 0;
  double worst_sum = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = size(rng);
    const EvalDump id = fixture::random_dump(n, classes(rng), 8, 5000 + t, Role::kIdTest, 0.3);
    const EvalDump ood = fixture::random_ood_dump(id, 200, 9000 + t);
    const TaxonomyReport r = taxonomy_report(id, std::span<const EvalDump>(&ood, 1), energy_fn);
    double sum = 0.0;
    for (const auto& g : r.groups) sum += g.mass_pct;
    worst_sum = std::max(worst_sum, std::abs(sum - 100.0));

    const auto conf = msp(id.logits).values;
    const double med = stats::median(conf);
    const auto ties = std::count(conf.begin(), conf.end(), med);
    const double high = r.at(Group::kIdCorrectHigh).mass_pct + r.at(Group::kIdWrongHigh).mass_pct;
    const double slack = 100.0 * static_cast<double>(std::max<long>(1, ties)) / static_cast<double>(n);
    if (std::abs(sum - 100.0) > 1e-9 || std::abs(high - 50.0) > slack + 1e-9) ++failures;
  }
  return {failures == 0,
          "100 dumps, max |sum-100| " + fmt(worst_sum) + ", " + std::to_string(failures) + " failures"};
}

// 6 ---------------------------------------------------------------------------

Outcome collapse_fixture() {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n_id = 10000;
  const std::size_t n_ood = 5000;

  ScoreVector conf{std::vector<double>(n_id), "msp", Direction::kIdLarger};
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < n_id; ++i) {
    const bool is_wrong = i % 2 == 1;
    conf.values[i] = is_wrong ? 0.1 + 0.5 * u(rng) : 0.4 + 0.6 * u(rng);
    if (is_wrong) wrong.push_back(i);
  }
  const double med = stats::median(conf.values);
  ScoreVector id{std::vector<double>(n_id), "energy", Direction::kOodLarger};
  for (std::size_t i = 0; i < n_id; ++i) {
    const bool is_wrong = i % 2 == 1;
    const bool high = conf.values[i] > med;
    if (!is_wrong) {
      id.values[i] = -6.0 + g(rng);
    } else if (high) {
      id.values[i] = -3.0 + g(rng);
    } else {
      id.values[i] = g(rng);  // same law as OOD
    }
  }
  ScoreVector ood{std::vector<double>(n_ood), "energy", Direction::kOodLarger};
  for (double& v : ood.values) v = g(rng);

  TaxonomyOptions opts;
  opts.include_correct_high_auroc = true;
  const TaxonomyReport r = build_taxonomy(conf, wrong, id, ood, opts);
  const GroupStats& wl = r.at(Group::kIdWrongLow);
  const double au = wl.auroc.value_or(-1.0);
  const double ch = r.at(Group::kIdCorrectHigh).auroc.value_or(0.0);
  const double cl = r.at(Group::kIdCorrectLow).auroc.value_or(0.0);
  const bool pass = wl.count >= 2000 && std::abs(au - 0.5) <= 0.03 && wl.flagged && ch >= 0.9 &&
                    cl >= 0.9 && !r.at(Group::kIdCorrectHigh).flagged &&
                    !r.at(Group::kIdCorrectLow).flagged;
  return {pass, "wrong-low n=" + std::to_string(wl.count) + " AU " + fmt(au) +
                    (wl.flagged ? " flagged" : " NOT flagged") + ", correct AU " + fmt(ch) + "/" +
                    fmt(cl)};
}

// 7 ---------------------------------------------------------------------------

Matrix random_rotation(Eigen::Index d, std::mt19937_64& rng) {
  const Matrix a = fixture::gaussian_matrix(d, d, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

Outcome geometry_estimators() {
  std::mt19937_64 rng(707);
  std::vector<std::string> bad;

  const Matrix iso = fixture::gaussian_matrix(4000, 10, rng);
  const double pr_iso = participation_ratio(iso);
  if (!(pr_iso >= 9.0 && pr_iso <= 10.5)) bad.push_back("isotropic PR " + fmt(pr_iso));

  Matrix rank1(500, 16);
  const Matrix dir = fixture::gaussian_matrix(1, 16, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < rank1.rows(); ++i) rank1.row(i) = g(rng) * dir;
  const double pr1 = participation_ratio(rank1);
  if (std::abs(pr1 - 1.0) > 1e-9) bad.push_back("rank-1 PR " + fmt(pr1, 15));

  const Matrix latent = fixture::gaussian_matrix(2000, 5, rng);
  const Matrix embed = random_rotation(50, rng).leftCols(5).transpose();  // 5 × 50
  const Matrix manifold = latent * embed;
  const double mle = intrinsic_dim_mle(manifold).dimension;
  if (!(mle >= 4.2 && mle <= 5.8)) bad.push_back("manifold MLE " + fmt(mle));

  const Matrix q10 = random_rotation(10, rng);
  const double pr_rot = participation_ratio(iso * q10);
  const Matrix q50 = random_rotation(50, rng);
  const double mle_rot = intrinsic_dim_mle(manifold * q50).dimension;
  const double pr_m = participation_ratio(manifold);
  const double pr_m_rot = participation_ratio(manifold * q50);
  const double worst = std::max({rel(pr_rot, pr_iso), rel(mle_rot, mle), rel(pr_m_rot, pr_m)});
  if (worst > 1e-6) bad.push_back("rotation drift " + fmt(worst));

  return {bad.empty(), bad.empty() ? "PR iso " + fmt(pr_iso) + ", rank-1 " + fmt(pr1, 12) +
                                         ", MLE " + fmt(mle) + ", rotation rel " + fmt(worst)
                                   : bad.front()};
}

// 8 ---------------------------------------------------------------------------

Outcome detector_oracles() {
  std::vector<std::string> bad;
  double maha_err = 0.0, knn_err = 0.0, vim_err = 0.0;
  for (std::uint64_t t = 0; t < 12; ++t) {
    const std::size_t k = 2 + t % 4;
    const std::size_t d = 3 + t % 5;
    const EvalDump fit = fixture::random_dump(40 + 10 * t, k, d, 800 + t, Role::kFit, 1.0);
    const EvalDump query = fixture::random_ood_dump(fit, 50, 850 + t);

    for (std::optional<double> shrink : {std::optional<double>{}, std::optional<double>{0.05}}) {
      std::vector<std::int32_t> labels = *fit.labels;
      bool all_classes = true;
      for (std::size_t c = 0; c < k; ++c) {
        all_classes = all_classes && std::count(labels.begin(), labels.end(),
                                                static_cast<std::int32_t>(c)) >= 2;
      }
      if (!all_classes) continue;
      const MahalanobisModel model = fit_mahalanobis(fit, shrink);
      const auto got = score_mahalanobis(model, query.features).values;
      const auto want = oracle::dense_mahalanobis(fit.features, labels, k, model.shrinkage,
                                                  query.features);
      for (std::size_t i = 0; i < got.size(); ++i) {
        maha_err = std::max(maha_err, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
      }
    }

    for (std::size_t kk : {std::size_t{1}, std::size_t{3}, std::size_t{7}}) {
      const auto got = score_knn(fit_knn(fit, kk), query.features).values;
      const auto want = oracle::exhaustive_knn(fit.features, query.features, kk);
      for (std::size_t i = 0; i < got.size(); ++i) knn_err = std::max(knn_err, std::abs(got[i] - want[i]));
    }

    const auto react = react_energy(query, fit, 100.0).values;
    const auto plain = energy(head_logits(*query.head, query.features)).values;
    if (react != plain) bad.push_back("react(100) differs from plain energy");

    const VimModel vim = fit_vim(fit, std::max<std::size_t>(1, d / 2));
    const auto got = vim_residual_norms(vim, query.features);
    const auto want = oracle::projector_residuals(vim.principal_basis, vim.origin, query.features);
    for (std::size_t i = 0; i < got.size(); ++i) {
      vim_err = std::max(vim_err, std::abs(got[i] - want[i]) / std::max(1.0, want[i]));
    }
    const Matrix gram = vim.principal_basis.transpose() * vim.principal_basis;
    if ((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() > 1e-10) {
      bad.push_back("vim basis not orthonormal");
    }
  }
  if (maha_err > 1e-8) bad.push_back("mahalanobis err " + fmt(maha_err));
  if (knn_err > 1e-12) bad.push_back("knn err " + fmt(knn_err));
  if (vim_err > 1e-10) bad.push_back("vim err " + fmt(vim_err));
  return {bad.empty(), bad.empty() ? "mahalanobis " + fmt(maha_err) + ", knn " + fmt(knn_err) +
                                         ", react bit-exact, vim " + fmt(vim_err)
                                   : bad.front()};
}

// 9 ---------------------------------------------------------------------------

std::vector<double*> parameters(vmr::MlpModel& m, vmr::EnergyLogistic& l) {
  std::vector<double*> out;
  for (Matrix* w : {&m.w1, &m.w2, &m.w3}) {
    for (Eigen::Index i = 0; i < w->size(); ++i) out.push_back(w->data() + i);
  }
  for (Vector* b : {&m.b1, &m.b2, &m.b3}) {
    for (Eigen::Index i = 0; i < b->size(); ++i) out.push_back(b->data() + i);
  }
  out.push_back(&l.a);
  out.push_back(&l.c);
  return out;
}

Outcome trainer_gradients() {
  std::mt19937_64 rng(909);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> cls(0, 2);
  double worst = 0.0;
  const char* kinds[] = {"host", "vos", "combined"};
  for (int p = 0; p < 20; ++p) {
    const int kind = p % 3;
    vmr::MlpModel model = vmr::MlpModel::init(4, 7, 3, 50 + p);
    vmr::EnergyLogistic logistic{0.5 + 0.1 * (p % 7), 0.3 * g(rng)};
    // Jitter every parameter: zero biases from init would put rows exactly on
    // a rectifier kink, where the loss has no derivative to compare against.
    for (double* w : parameters(model, logistic)) *w += 0.1 * g(rng);
    const Matrix inputs = fixture::gaussian_matrix(9, 4, rng, 1.5);
    std::vector<std::int32_t> labels(9);
    for (auto& y : labels) y = cls(rng);
    const Matrix virt = fixture::gaussian_matrix(6, 7, rng).cwiseAbs();

    // kind 1 isolates L_vos as (λ=1) − (λ=0)
    auto value = [&](const vmr::MlpModel& m, const vmr::EnergyLogistic& l) {
      if (kind == 0) return vmr::objective(m, l, inputs, labels, Matrix(), 0.0).total;
      if (kind == 1) return vmr::objective(m, l, inputs, labels, virt, 1.0).vos;
      return vmr::objective(m, l, inputs, labels, virt, 0.5).total;
    };
    vmr::Gradients analytic;
    if (kind == 0) {
      analytic = vmr::objective(model, logistic, inputs, labels, Matrix(), 0.0).grad;
    } else if (kind == 1) {
      const auto with = vmr::objective(model, logistic, inputs, labels, virt, 1.0).grad;
      const auto without = vmr::objective(model, logistic, inputs, labels, virt, 0.0).grad;
      analytic = with;
      vmr::MlpModel& a = analytic.model;
      a.w1 -= without.model.w1; a.b1 -= without.model.b1;
      a.w2 -= without.model.w2; a.b2 -= without.model.b2;
      a.w3 -= without.model.w3; a.b3 -= without.model.b3;
      analytic.logistic.a -= without.logistic.a;
      analytic.logistic.c -= without.logistic.c;
    } else {
      analytic = vmr::objective(model, logistic, inputs, labels, virt, 0.5).grad;
    }

    auto params = parameters(model, logistic);
    auto grads = parameters(analytic.model, analytic.logistic);
    double diff2 = 0.0, norm2 = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = *params[i];
      *params[i] = saved + h;
      const double up = value(model, logistic);
      *params[i] = saved - h;
      const double down = value(model, logistic);
      *params[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      diff2 += (fd - *grads[i]) * (fd - *grads[i]);
      norm2 += std::max(fd * fd, *grads[i] * *grads[i]);
    }
    const double relerr = std::sqrt(diff2 / std::max(norm2, 1e-300));
    if (relerr > worst) {
      worst = relerr;
    }
    if (relerr >= 1e-4) {
      return {false, std::string("point ") + std::to_string(p) + " (" + kinds[kind] +
                         ") rel err " + fmt(relerr)};
    }
  }
  return {true, "20 points over host/vos/combined, max rel err " + fmt(worst)};
}

// 10 --------------------------------------------------------------------------

Outcome vmr_directional() {
  const vmr::TaskConfig task{.noise_rate = 0.5};
  const vmr::VmrConfig config;
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const vmr::VmrPairedReport r = vmr::vmr_experiment(task, config, seeds);
  std::size_t errors = 0;
  for (const auto& s : r.seeds) errors += s.error ? 1 : 0;
  const bool pass = errors == 0 && r.mean_delta_far_auroc >= 2.0 && r.mean_delta_acc >= -1.0 &&
                    r.wrong_auroc_improved >= 4;
  return {pass, "mean dFar " + fmt(r.mean_delta_far_auroc) + ", mean dAcc " +
                    fmt(r.mean_delta_acc) + ", wrong-AUROC improved " +
                    std::to_string(r.wrong_auroc_improved) + "/5"};
}

// 11 --------------------------------------------------------------------------

Outcome warmup_identity() {
  const vmr::TaskConfig task_cfg{.noise_rate = 0.5, .seed = 11};
  const vmr::SyntheticTask task = vmr::gen_synthetic_task(task_cfg);
  vmr::VmrConfig base;
  base.lambda_vos = 0.0;
  base.epochs = 14;
  base.seed = 3;
  vmr::VmrConfig repaired = base;
  repaired.lambda_vos = 0.1;
  const auto a = vmr::train(task, base);
  const auto b = vmr::train(task, repaired);
  const bool warm_equal = a.after_warmup && b.after_warmup && *a.after_warmup == *b.after_warmup;
  const bool diverged_after = !(a.model == b.model);

  vmr::VmrConfig zero;
  zero.lambda_vos = 0.0;
  zero.epochs = 20;
  const std::vector<std::uint64_t> seeds{0, 1};
  const auto report = vmr::vmr_experiment({.noise_rate = 0.5}, zero, seeds);
  bool zero_deltas = true;
  for (const auto& s : report.seeds) {
    zero_deltas = zero_deltas && !s.error && s.delta_far_auroc == 0.0 &&
                  s.delta_near_auroc == 0.0 && s.delta_acc == 0.0 &&
                  s.baseline.id_wrong_vs_ood_auroc == s.repaired.id_wrong_vs_ood_auroc;
  }
  return {warm_equal && zero_deltas,
          std::string("warmup params ") + (warm_equal ? "identical" : "DIFFER") +
              (diverged_after ? " (arms separate afterwards)" : "") + ", lambda=0 deltas " +
              (zero_deltas ? "all zero" : "NONZERO")};
}

// 12 --------------------------------------------------------------------------

Outcome rendering_fixtures() {
  std::vector<std::string> bad = tables::check_all();
  return {bad.empty(), bad.empty() ? "benchmark, paired and taxonomy fixtures; CSV round trips"
                                   : bad.front() + " (+" + std::to_string(bad.size() - 1) + " more)"};
}

// 13 --------------------------------------------------------------------------

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_meta.json") continue;
    out[fs::relative(e.path(), root).string()] = fixture::slurp(e.path());
  }
  return out;
}

Outcome cli_determinism() {
  fixture::TempDir tmp("owr_accept13");
  const EvalDump fit = fixture::random_dump(300, 5, 16, 1301, Role::kFit, 0.2);
  const EvalDump id = fixture::random_dump(250, 5, 16, 1302, Role::kIdTest, 0.3);
  const EvalDump near = fixture::random_ood_dump(fit, 150, 1303, 1.2);
  const EvalDump far = fixture::random_ood_dump(fit, 150, 1304, 2.5);
  write_dump(fit, tmp / "fit");
  write_dump(id, tmp / "id");
  write_dump(near, tmp / "near");
  write_dump(far, tmp / "far");

  const std::string cli = OWR_CLI_PATH;
  const std::string d = tmp.path().string();
  auto commands = [&](const std::string& out) {
    return std::vector<std::string>{
        cli + " eval --id-test " + d + "/id --fit " + d + "/fit --near " + d + "/near --far " + d +
            "/far --scores energy,msp,maxlogit,margin,entropy,odin,mahalanobis,knn,react,vim" +
            " --method m --dataset toy --noise sym0.2 --out " + out + "/eval",
        cli + " score " + d + "/id --score vim --fit " + d + "/fit --out " + out + "/score.json",
        cli + " taxonomy --id-test " + d + "/id --ood " + d + "/far," + d + "/near --out " + out +
            "/taxonomy.json",
        cli + " geometry --id-test " + d + "/id --ood " + d + "/far --out " + out + "/geometry",
        cli + " vmr-demo --seeds 0 --epochs 12 --out " + out + "/vmr",
        cli + " compare " + out + "/eval/metrics.json " + out + "/eval/metrics.json --out " + out +
            "/compare",
        cli + " render " + out + "/eval/metrics.json --out " + out + "/render.md",
    };
  };
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* run : {"a", "b"}) {
    const std::string out = d + "/" + run;
    for (const auto& c : commands(out)) {
      const auto res = fixture::run_command(c + " > /dev/null 2>&1");
      if (res.status != 0) return {false, "exit " + std::to_string(res.status) + ": " + c};
    }
    trees.push_back(tree_contents(out));
  }
  std::size_t json_files = 0;
  for (const auto& [name, body] : trees[0]) {
    if (name.ends_with(".json")) ++json_files;
    const auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != body) return {false, "differs: " + name};
  }
  if (trees[0].size() != trees[1].size()) return {false, "file sets differ"};
  return {true, "7 commands twice, " + std::to_string(trees[0].size()) + " files (" +
                    std::to_string(json_files) + " JSON) byte-identical"};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "AUROC oracle", 5.0, auroc_oracle},
      {2, "FPR95 oracle", 5.0, fpr_oracle},
      {3, "score closed forms", 0.0, score_closed_forms},
      {4, "shift invariance", 0.0, shift_invariance},
      {5, "taxonomy mass identity", 0.0, taxonomy_mass_identity},
      {6, "collapse fixture", 0.0, collapse_fixture},
      {7, "geometry estimators", 30.0, geometry_estimators},
      {8, "detector oracles", 0.0, detector_oracles},
      {9, "trainer gradients", 0.0, trainer_gradients},
      {10, "VMR directional effect", 600.0, vmr_directional},
      {11, "warmup bit-identity", 0.0, warmup_identity},
      {12, "rendering fixtures", 0.0, rendering_fixtures},
      {13, "CLI determinism", 0.0, cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0.0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += ", over the " + fmt(c.limit_s) + " s limit";
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %-24s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
