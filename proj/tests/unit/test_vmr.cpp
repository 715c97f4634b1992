#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "owr/error.hpp"
#include "owr/vmr.hpp"

namespace owr::vmr {
namespace {

TaskConfig small_task(double noise = 0.3) {
  TaskConfig t;
  t.n_per_class = 120;
  t.n_test_per_class = 60;
  t.n_ood = 200;
  t.noise_rate = noise;
  return t;
}

TEST(Task, ShapesAndDeterminism) {
  const SyntheticTask a = gen_synthetic_task(small_task());
  EXPECT_EQ(a.train_inputs.rows(), 480);
  EXPECT_EQ(a.test_inputs.rows(), 240);
  EXPECT_EQ(a.far_ood.rows(), 200);
  EXPECT_EQ(a.near_ood.cols(), 8);
  const SyntheticTask b = gen_synthetic_task(small_task());
  EXPECT_EQ(a.train_inputs, b.train_inputs);
  EXPECT_EQ(a.train_noisy, b.train_noisy);
  TaskConfig bad = small_task();
  bad.input_dim = 2;
  EXPECT_THROW(gen_synthetic_task(bad), Error);
}

TEST(LabelNoise, RateAndKinds) {
  std::vector<std::int32_t> y(20000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 4);
  const auto sym = inject_label_noise(y, 4, NoiseKind::kSymmetric, 0.5, 1);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < y.size(); ++i) flipped += sym[i] != y[i];
  EXPECT_NEAR(static_cast<double>(flipped) / y.size(), 0.5, 0.02);

  const auto asym = inject_label_noise(y, 4, NoiseKind::kAsymmetric, 0.4, 2);
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_TRUE(asym[i] == y[i] || asym[i] == (y[i] + 1) % 4);
  }
  EXPECT_EQ(inject_label_noise(y, 4, NoiseKind::kSymmetric, 0.0, 3), y);
}

TEST(Trusted, PerClassLowestLosses) {
  const std::vector<double> loss = {0.9, 0.1, 0.5, 0.2, 0.3, 0.8};
  const std::vector<std::int32_t> y = {0, 0, 0, 1, 1, 1};
  EXPECT_EQ(select_trusted(loss, y, 2, 0.67), (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(select_trusted(loss, y, 2, 1.0).size(), 6u);
}

TEST(Gaussians, FitAndSingularity) {
  std::mt19937_64 rng(4);
  const Matrix f = fixture::gaussian_matrix(300, 3, rng);
  std::vector<std::int32_t> y(300);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 3);
  const GaussianBank bank = fit_class_gaussians(f, y, 3, 1e-3);
  const Matrix recon = bank.cholesky_l * bank.cholesky_l.transpose();
  EXPECT_NEAR((recon - bank.covariance).norm(), 0.0, 1e-12);

  Matrix flat = f;
  flat.col(2).setZero();
  EXPECT_THROW(fit_class_gaussians(flat, y, 3, 0.0), Error);
}

TEST(VirtualOutliers, KeepLowestLikelihood) {
  std::mt19937_64 rng(5);
  const Matrix f = fixture::gaussian_matrix(200, 4, rng);
  std::vector<std::int32_t> y(200);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 2);
  const GaussianBank bank = fit_class_gaussians(f, y, 2, 1e-3);
  const VirtualOutliers v = sample_virtual_outliers(bank, 5, 100, 9);
  EXPECT_EQ(v.features.rows(), 10);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_LE(v.kept_max_loglik[k], v.discarded_min_loglik[k]);
  const VirtualOutliers w = sample_virtual_outliers(bank, 5, 100, 9);
  EXPECT_EQ(v.features, w.features);
  EXPECT_THROW(sample_virtual_outliers(bank, 101, 100, 9), Error);
}

TEST(VosLoss, MatchesDefinition) {
  const std::vector<double> id = {-3.0, -1.0};
  const std::vector<double> virt = {0.5};
  const EnergyLogistic l{1.5, -0.2};
  auto softplus = [](double x) { return std::log1p(std::exp(x)); };
  double want = 0.0;
  for (double e : id) want += softplus(-(l.a * -e + l.c)) / 2.0;
  for (double e : virt) want += softplus(l.a * -e + l.c);
  EXPECT_NEAR(vos_loss(id, virt, l).loss, want, 1e-14);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  MlpModel m = MlpModel::init(3, 5, 3, 7);
  EnergyLogistic l{1.0, 0.1};
  const Matrix x = fixture::gaussian_matrix(6, 3, rng);
  const std::vector<std::int32_t> y = {0, 1, 2, 0, 1, 2};
  const Matrix virt = fixture::gaussian_matrix(4, 5, rng).cwiseAbs();
  const ObjectiveValue v = objective(m, l, x, y, virt, 0.3);
  const double h = 1e-6;
  // spot-check a few coordinates of every block
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = objective(m, l, x, y, virt, 0.3).total;
    param = saved - h;
    const double down = objective(m, l, x, y, virt, 0.3).total;
    param = saved;
    EXPECT_NEAR((up - down) / (2 * h), analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
  };
  check(m.w1(1, 2), v.grad.model.w1(1, 2));
  check(m.b2(3), v.grad.model.b2(3));
  check(m.w3(2, 4), v.grad.model.w3(2, 4));
  check(m.b3(0), v.grad.model.b3(0));
  check(l.a, v.grad.logistic.a);
  check(l.c, v.grad.logistic.c);
  EXPECT_NEAR(v.total, v.host + 0.3 * v.vos, 1e-15);
}

TEST(Config, Validation) {
  VmrConfig c;
  EXPECT_NO_THROW(validate(c));
  c.keep_count = c.pool_size + 1;
  EXPECT_THROW(validate(c), Error);
  c = VmrConfig{};
  c.lambda_vos = -1.0;
  EXPECT_THROW(validate(c), Error);
  c = VmrConfig{};
  c.trusted_keep_fraction = 0.0;
  EXPECT_THROW(validate(c), Error);
}

TEST(Train, WarmupIsIndependentOfLambda) {
  const SyntheticTask task = gen_synthetic_task(small_task());
  VmrConfig a;
  a.epochs = 12;
  a.lambda_vos = 0.0;
  VmrConfig b = a;
  b.lambda_vos = 0.5;
  const TrainResult ra = train(task, a);
  const TrainResult rb = train(task, b);
  ASSERT_TRUE(ra.after_warmup && rb.after_warmup);
  EXPECT_EQ(*ra.after_warmup, *rb.after_warmup);
  EXPECT_FALSE(ra.model == rb.model);
  EXPECT_EQ(ra.history.size(), 12u);
  const std::string csv = history_csv(ra.history);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
}

TEST(Train, DeterministicForFixedSeed) {
  const SyntheticTask task = gen_synthetic_task(small_task());
  VmrConfig c;
  c.epochs = 11;
  EXPECT_EQ(train(task, c).model, train(task, c).model);
}

TEST(Export, DumpsAreValidAndHeadConsistent) {
  const SyntheticTask task = gen_synthetic_task(small_task());
  VmrConfig c;
  c.epochs = 11;
  const TrainResult r = train(task, c);
  const ExportedDumps d = export_evaldump(r.model, task);
  for (const EvalDump* dump : {&d.fit, &d.id_test, &d.near_ood, &d.far_ood}) {
    const auto report = validate_dump(*dump);
    EXPECT_TRUE(report.ok()) << dump->name;
    EXPECT_TRUE(report.violations.empty()) << dump->name;
  }
  EXPECT_EQ(d.fit.role, Role::kFit);
  EXPECT_EQ(*d.fit.labels, task.train_noisy);
  EXPECT_EQ(*d.id_test.labels, task.test_labels);
}

TEST(MixSeed, StreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s) {
    for (std::uint64_t stream = 1; stream <= 8; ++stream) seen.insert(mix_seed(s, stream));
  }
  EXPECT_EQ(seen.size(), 32u);
}

}  // namespace
}  // namespace owr::vmr
