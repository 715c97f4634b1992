#include "owr/vmr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "owr/error.hpp"
#include "owr/metrics.hpp"
#include "owr/scores.hpp"
#include "owr/stats.hpp"

namespace owr::vmr {
namespace {

// Independent RNG streams derived from one user seed.
enum Stream : std::uint64_t {
  kTrainData = 1,
  kTestData = 2,
  kNearData = 3,
  kFarData = 4,
  kLabelNoise = 5,
  kInit = 6,
  kShuffle = 7,
  kVirtual = 8,
};

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix sample_blob(const Vector& center, double sigma, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), center.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = center(j) + sigma * normal(rng);
  }
  return out;
}

Matrix sample_blobs(const std::vector<Vector>& centers, double sigma, std::size_t n,
                    std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index d = centers.front().size();
  Matrix out(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& c = centers[i % centers.size()];
    for (Eigen::Index j = 0; j < d; ++j) {
      out(static_cast<Eigen::Index>(i), j) = c(j) + sigma * normal(rng);
    }
  }
  return out;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string_view to_string(NoiseKind kind) {
  return kind == NoiseKind::kSymmetric ? "symmetric" : "asymmetric";
}

NoiseKind parse_noise_kind(std::string_view text) {
  if (text == "symmetric" || text == "sym") return NoiseKind::kSymmetric;
  if (text == "asymmetric" || text == "asym") return NoiseKind::kAsymmetric;
  fail(ErrorKind::kInvalidArgument, "unknown noise kind: " + std::string(text));
}

std::vector<std::int32_t> inject_label_noise(std::span<const std::int32_t> labels,
                                             std::size_t n_classes, NoiseKind kind, double rate,
                                             std::uint64_t seed) {
  if (n_classes < 2) fail(ErrorKind::kInvalidArgument, "label noise needs K >= 2");
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::kInvalidArgument, "noise rate must lie in [0,1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> other(0, static_cast<std::int32_t>(n_classes) - 2);
  const auto k = static_cast<std::int32_t>(n_classes);
  std::vector<std::int32_t> out(labels.begin(), labels.end());
  for (auto& y : out) {
    if (coin(rng) >= rate) continue;
    if (kind == NoiseKind::kAsymmetric) {
      y = (y + 1) % k;
    } else {
      const std::int32_t r = other(rng);
      y = r >= y ? r + 1 : r;
    }
  }
  return out;
}

SyntheticTask gen_synthetic_task(const TaskConfig& config) {
  if (config.k_classes < 3) fail(ErrorKind::kInvalidArgument, "synthetic task needs k_classes >= 3");
  if (config.input_dim < 3) fail(ErrorKind::kInvalidArgument, "synthetic task needs input_dim >= 3");
  if (!(config.noise_rate >= 0.0 && config.noise_rate <= 0.95)) {
    fail(ErrorKind::kInvalidArgument, "noise rate must lie in [0, 0.95]");
  }
  if (!(config.radius > 2.0 * config.sigma)) {
    fail(ErrorKind::kInvalidArgument, "classes not separable by construction");
  }
  const std::size_t k = config.k_classes;
  const auto d = static_cast<Eigen::Index>(config.input_dim);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(k);

  std::vector<Vector> class_means, near_centers, far_centers;
  for (std::size_t c = 0; c < k; ++c) {
    const double theta = step * static_cast<double>(c);
    Vector mu = Vector::Zero(d);
    mu(0) = config.radius * std::cos(theta);
    mu(1) = config.radius * std::sin(theta);
    class_means.push_back(mu);

    const double mid = theta + 0.5 * step;
    Vector near = Vector::Zero(d);
    const double r_mid = config.radius * std::cos(0.5 * step);
    near(0) = r_mid * std::cos(mid);
    near(1) = r_mid * std::sin(mid);
    near_centers.push_back(near);

    // In-plane far points get extrapolated, overconfident logits from any
    // rectifier network, so far-OOD leaves the class plane entirely.
    Vector far = Vector::Zero(d);
    far(2 + static_cast<Eigen::Index>(c) % (d - 2)) = 4.0 * config.radius;
    far_centers.push_back(far);
  }

  SyntheticTask task;
  task.k_classes = k;
  task.input_dim = config.input_dim;
  task.noise_kind = config.noise_kind;
  task.noise_rate = config.noise_rate;

  std::mt19937_64 train_rng(mix_seed(config.seed, kTrainData));
  std::mt19937_64 test_rng(mix_seed(config.seed, kTestData));
  const auto n_train = static_cast<Eigen::Index>(k * config.n_per_class);
  const auto n_test = static_cast<Eigen::Index>(k * config.n_test_per_class);
  task.train_inputs.resize(n_train, d);
  task.test_inputs.resize(n_test, d);
  for (std::size_t c = 0; c < k; ++c) {
    task.train_inputs.middleRows(static_cast<Eigen::Index>(c * config.n_per_class),
                                 static_cast<Eigen::Index>(config.n_per_class)) =
        sample_blob(class_means[c], config.sigma, config.n_per_class, train_rng);
    task.test_inputs.middleRows(static_cast<Eigen::Index>(c * config.n_test_per_class),
                                static_cast<Eigen::Index>(config.n_test_per_class)) =
        sample_blob(class_means[c], config.sigma, config.n_test_per_class, test_rng);
    task.train_clean.insert(task.train_clean.end(), config.n_per_class, static_cast<std::int32_t>(c));
    task.test_labels.insert(task.test_labels.end(), config.n_test_per_class,
                            static_cast<std::int32_t>(c));
  }
  task.train_noisy = config.noise_rate == 0.0
                         ? task.train_clean
                         : inject_label_noise(task.train_clean, k, config.noise_kind,
                                              config.noise_rate, mix_seed(config.seed, kLabelNoise));

  std::mt19937_64 near_rng(mix_seed(config.seed, kNearData));
  std::mt19937_64 far_rng(mix_seed(config.seed, kFarData));
  task.near_ood = sample_blobs(near_centers, config.sigma, config.n_ood, near_rng);
  task.far_ood = sample_blobs(far_centers, config.sigma, config.n_ood, far_rng);
  return task;
}

std::vector<std::size_t> select_trusted(std::span<const double> per_sample_losses,
                                        std::span<const std::int32_t> labels,
                                        std::size_t n_classes, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "keep fraction must lie in (0,1]");
  }
  if (per_sample_losses.size() != labels.size()) {
    fail(ErrorKind::kInvalidArgument, "losses and labels differ in length");
  }
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      fail(ErrorKind::kInvalidArgument, "label out of range");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<std::size_t> trusted;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) fail(ErrorKind::kInvalidArgument, "empty class " + std::to_string(c));
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return per_sample_losses[a] < per_sample_losses[b];
    });
    const auto keep = static_cast<std::size_t>(
        std::floor(keep_fraction * static_cast<double>(idx.size()) + 1e-9));
    trusted.insert(trusted.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(trusted.begin(), trusted.end());
  return trusted;
}

GaussianBank fit_class_gaussians(const Matrix& features, std::span<const std::int32_t> labels,
                                 std::size_t n_classes, double shrinkage) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    fail(ErrorKind::kInvalidArgument, "labels and features differ in length");
  }
  if (!(shrinkage >= 0.0)) fail(ErrorKind::kInvalidArgument, "shrinkage must be nonnegative");
  const auto k = static_cast<Eigen::Index>(n_classes);
  const Eigen::Index d = features.cols();
  GaussianBank bank;
  bank.shrinkage = shrinkage;
  bank.means = Matrix::Zero(k, d);
  std::vector<std::size_t> counts(n_classes, 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) fail(ErrorKind::kInvalidArgument, "label out of range");
    bank.means.row(y) += features.row(i);
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] < 2) {
      fail(ErrorKind::kInvalidArgument, "class " + std::to_string(c) + " needs >= 2 samples");
    }
    bank.means.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  Matrix centered = features;
  for (Eigen::Index i = 0; i < centered.rows(); ++i) {
    centered.row(i) -= bank.means.row(labels[static_cast<std::size_t>(i)]);
  }
  const double dof = static_cast<double>(features.rows() - k);
  Matrix cov = (centered.transpose() * centered) / dof;
  cov = 0.5 * (cov + cov.transpose()).eval();
  cov.diagonal().array() += shrinkage;

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  bool singular = llt.info() != Eigen::Success;
  if (!singular) {
    const Eigen::VectorXd diag = Eigen::MatrixXd(llt.matrixL()).diagonal();
    singular = diag.minCoeff() <= 1e-9 * diag.maxCoeff();
  }
  if (singular) fail(ErrorKind::kNumeric, "class covariance is singular; use shrinkage epsilon > 0");
  bank.covariance = std::move(cov);
  bank.cholesky_l = Eigen::MatrixXd(llt.matrixL());
  return bank;
}

double log_likelihood(const GaussianBank& bank, std::size_t k, const Eigen::Ref<const Vector>& x) {
  const Vector diff = x - bank.means.row(static_cast<Eigen::Index>(k)).transpose();
  const Eigen::MatrixXd l = bank.cholesky_l;
  const Vector z = l.triangularView<Eigen::Lower>().solve(diff);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double d = static_cast<double>(x.size());
  return -0.5 * (z.squaredNorm() + log_det + d * std::log(2.0 * std::numbers::pi));
}

VirtualOutliers sample_virtual_outliers(const GaussianBank& bank, std::size_t keep,
                                        std::size_t pool, std::mt19937_64& rng) {
  if (keep > pool) fail(ErrorKind::kInvalidArgument, "keep count must not exceed pool size");
  const Eigen::Index k = bank.means.rows();
  const Eigen::Index d = bank.means.cols();
  const double log_det = 2.0 * bank.cholesky_l.diagonal().array().log().sum();
  const double constant = log_det + static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);

  VirtualOutliers out;
  out.features.resize(static_cast<Eigen::Index>(keep) * k, d);
  out.kept_max_loglik.assign(static_cast<std::size_t>(k), -std::numeric_limits<double>::infinity());
  out.discarded_min_loglik.assign(static_cast<std::size_t>(k),
                                  std::numeric_limits<double>::infinity());
  Matrix z(static_cast<Eigen::Index>(pool), d);
  std::vector<double> loglik(pool);
  std::vector<std::size_t> order(pool);
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      for (Eigen::Index j = 0; j < d; ++j) z(i, j) = normal(rng);
      // x = μ + L z, so the Mahalanobis radius of x is |z|
      loglik[static_cast<std::size_t>(i)] = -0.5 * (z.row(i).squaredNorm() + constant);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return loglik[a] < loglik[b]; });
    std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(kept.begin(), kept.end());
    for (std::size_t idx : kept) {
      const Vector x = bank.means.row(c).transpose() +
                       bank.cholesky_l * z.row(static_cast<Eigen::Index>(idx)).transpose();
      out.features.row(row++) = x.transpose();
      out.classes.push_back(static_cast<std::int32_t>(c));
      out.kept_max_loglik[static_cast<std::size_t>(c)] =
          std::max(out.kept_max_loglik[static_cast<std::size_t>(c)], loglik[idx]);
    }
    for (std::size_t r = keep; r < pool; ++r) {
      out.discarded_min_loglik[static_cast<std::size_t>(c)] =
          std::min(out.discarded_min_loglik[static_cast<std::size_t>(c)], loglik[order[r]]);
    }
  }
  return out;
}

VirtualOutliers sample_virtual_outliers(const GaussianBank& bank, std::size_t keep,
                                        std::size_t pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_virtual_outliers(bank, keep, pool, rng);
}

// Model ----------------------------------------------------------------------

MlpModel MlpModel::init(std::size_t input_dim, std::size_t hidden, std::size_t n_classes,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto he = [&](std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(cols)));
    Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    return w;
  };
  MlpModel m;
  m.w1 = he(hidden, input_dim);
  m.b1 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  m.w2 = he(hidden, hidden);
  m.b2 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  m.w3 = he(n_classes, hidden);
  m.b3 = Vector::Zero(static_cast<Eigen::Index>(n_classes));
  return m;
}

bool operator==(const MlpModel& a, const MlpModel& b) {
  return a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2 && a.w3 == b.w3 &&
         a.b3 == b.b3;
}

ForwardPass forward(const MlpModel& model, const Matrix& inputs) {
  ForwardPass f;
  f.pre1 = inputs * model.w1.transpose();
  f.pre1.rowwise() += model.b1.transpose();
  f.act1 = relu(f.pre1);
  f.pre2 = f.act1 * model.w2.transpose();
  f.pre2.rowwise() += model.b2.transpose();
  f.act2 = relu(f.pre2);
  f.logits = f.act2 * model.w3.transpose();
  f.logits.rowwise() += model.b3.transpose();
  return f;
}

VosLoss vos_loss(std::span<const double> id_energies, std::span<const double> virtual_energies,
                 const EnergyLogistic& logistic) {
  if (id_energies.empty() || virtual_energies.empty()) {
    fail(ErrorKind::kInvalidArgument, "vos loss needs ID and virtual energies");
  }
  VosLoss out;
  out.grad_id_energy.resize(id_energies.size());
  out.grad_virtual_energy.resize(virtual_energies.size());
  const double n_id = static_cast<double>(id_energies.size());
  const double n_virtual = static_cast<double>(virtual_energies.size());
  double id_loss = 0.0, virtual_loss = 0.0;
  // ID target 1: softplus(−u); virtual target 0: softplus(u); du/dE = −a
  for (std::size_t i = 0; i < id_energies.size(); ++i) {
    const double e = id_energies[i];
    if (!std::isfinite(e)) fail(ErrorKind::kNumeric, "non-finite energy");
    const double u = -logistic.a * e + logistic.c;
    id_loss += softplus(-u);
    const double dl_du = -sigmoid(-u) / n_id;
    out.grad_id_energy[i] = dl_du * -logistic.a;
    out.grad_a += dl_du * -e;
    out.grad_c += dl_du;
  }
  for (std::size_t j = 0; j < virtual_energies.size(); ++j) {
    const double e = virtual_energies[j];
    if (!std::isfinite(e)) fail(ErrorKind::kNumeric, "non-finite energy");
    const double u = -logistic.a * e + logistic.c;
    virtual_loss += softplus(u);
    const double dl_du = sigmoid(u) / n_virtual;
    out.grad_virtual_energy[j] = dl_du * -logistic.a;
    out.grad_a += dl_du * -e;
    out.grad_c += dl_du;
  }
  out.loss = id_loss / n_id + virtual_loss / n_virtual;
  return out;
}

namespace {

MlpModel zeros_like(const MlpModel& m) {
  MlpModel z;
  z.w1 = Matrix::Zero(m.w1.rows(), m.w1.cols());
  z.b1 = Vector::Zero(m.b1.size());
  z.w2 = Matrix::Zero(m.w2.rows(), m.w2.cols());
  z.b2 = Vector::Zero(m.b2.size());
  z.w3 = Matrix::Zero(m.w3.rows(), m.w3.cols());
  z.b3 = Vector::Zero(m.b3.size());
  return z;
}

std::vector<double> row_energies(const Matrix& logits) {
  std::vector<double> e(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) e[static_cast<std::size_t>(i)] = -stats::logsumexp(logits.row(i));
  return e;
}

// dE/dz = −softmax(z)
void add_energy_grad(const Matrix& logits, std::span<const double> dl_de, Matrix& dz) {
  const Matrix p = stats::softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) dz.row(i) -= dl_de[static_cast<std::size_t>(i)] * p.row(i);
}

}  // namespace

ObjectiveValue objective(const MlpModel& model, const EnergyLogistic& logistic,
                         const Matrix& inputs, std::span<const std::int32_t> labels,
                         const Matrix& virtual_features, double lambda_vos) {
  if (static_cast<Eigen::Index>(labels.size()) != inputs.rows() || inputs.rows() == 0) {
    fail(ErrorKind::kInvalidArgument, "batch inputs and labels must be nonempty and aligned");
  }
  const ForwardPass f = forward(model, inputs);
  const double b = static_cast<double>(inputs.rows());
  ObjectiveValue out;
  out.grad.model = zeros_like(model);
  out.grad.logistic = EnergyLogistic{0.0, 0.0};

  // host cross-entropy
  Matrix dz = stats::softmax_rows(f.logits);
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    out.host += stats::logsumexp(f.logits.row(i)) - f.logits(i, y);
    dz(i, y) -= 1.0;
  }
  out.host /= b;
  dz /= b;

  const bool use_vos = lambda_vos != 0.0 && virtual_features.rows() > 0;
  if (use_vos) {
    Matrix v_logits = virtual_features * model.w3.transpose();
    v_logits.rowwise() += model.b3.transpose();
    const std::vector<double> id_e = row_energies(f.logits);
    const std::vector<double> v_e = row_energies(v_logits);
    const VosLoss vos = vos_loss(id_e, v_e, logistic);
    out.vos = vos.loss;

    std::vector<double> scaled_id(vos.grad_id_energy.size());
    for (std::size_t i = 0; i < scaled_id.size(); ++i) scaled_id[i] = lambda_vos * vos.grad_id_energy[i];
    add_energy_grad(f.logits, scaled_id, dz);

    std::vector<double> scaled_v(vos.grad_virtual_energy.size());
    for (std::size_t j = 0; j < scaled_v.size(); ++j) scaled_v[j] = lambda_vos * vos.grad_virtual_energy[j];
    Matrix dv = Matrix::Zero(v_logits.rows(), v_logits.cols());
    add_energy_grad(v_logits, scaled_v, dv);
    out.grad.model.w3 += dv.transpose() * virtual_features;
    out.grad.model.b3 += dv.colwise().sum().transpose();
    out.grad.logistic.a = lambda_vos * vos.grad_a;
    out.grad.logistic.c = lambda_vos * vos.grad_c;
  }
  out.total = out.host + lambda_vos * out.vos;

  // backprop through the network for the ID rows
  out.grad.model.w3 += dz.transpose() * f.act2;
  out.grad.model.b3 += dz.colwise().sum().transpose();
  Matrix d2 = dz * model.w3;
  d2 = d2.cwiseProduct((f.pre2.array() > 0.0).cast<double>().matrix());
  out.grad.model.w2 = d2.transpose() * f.act1;
  out.grad.model.b2 = d2.colwise().sum().transpose();
  Matrix d1 = d2 * model.w2;
  d1 = d1.cwiseProduct((f.pre1.array() > 0.0).cast<double>().matrix());
  out.grad.model.w1 = d1.transpose() * inputs;
  out.grad.model.b1 = d1.colwise().sum().transpose();
  return out;
}

std::vector<double> per_sample_ce(const MlpModel& model, const Matrix& inputs,
                                  std::span<const std::int32_t> labels) {
  const ForwardPass f = forward(model, inputs);
  std::vector<double> out(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    out[static_cast<std::size_t>(i)] =
        stats::logsumexp(f.logits.row(i)) - f.logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Training ---------------------------------------------------------------------

void validate(const VmrConfig& c) {
  if (!(c.lambda_vos >= 0.0)) fail(ErrorKind::kInvalidArgument, "lambda_vos must be nonnegative");
  if (c.keep_count > c.pool_size) fail(ErrorKind::kInvalidArgument, "keep_count must not exceed pool_size");
  if (c.keep_count == 0) fail(ErrorKind::kInvalidArgument, "keep_count must be positive");
  if (c.trusted_keep_fraction &&
      !(*c.trusted_keep_fraction > 0.0 && *c.trusted_keep_fraction <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "trusted_keep_fraction must lie in (0,1]");
  }
  if (c.warmup_epochs >= c.epochs) fail(ErrorKind::kInvalidArgument, "warmup_epochs must be < epochs");
  if (c.batch_size == 0 || c.hidden == 0) fail(ErrorKind::kInvalidArgument, "batch size and width must be positive");
  if (!(c.step_size > 0.0)) fail(ErrorKind::kInvalidArgument, "step size must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail(ErrorKind::kInvalidArgument, "momentum must lie in [0,1)");
  if (!(c.shrinkage >= 0.0)) fail(ErrorKind::kInvalidArgument, "shrinkage must be nonnegative");
}

namespace {

struct Momentum {
  MlpModel velocity;
  EnergyLogistic logistic_velocity{0.0, 0.0};
};

template <typename T>
void momentum_step(T& param, T& velocity, const T& grad, double lr, double mu) {
  velocity = mu * velocity + grad;
  param -= lr * velocity;
}

void apply(MlpModel& m, EnergyLogistic& lg, Momentum& state, const Gradients& g, double lr,
           double mu) {
  momentum_step(m.w1, state.velocity.w1, g.model.w1, lr, mu);
  momentum_step(m.b1, state.velocity.b1, g.model.b1, lr, mu);
  momentum_step(m.w2, state.velocity.w2, g.model.w2, lr, mu);
  momentum_step(m.b2, state.velocity.b2, g.model.b2, lr, mu);
  momentum_step(m.w3, state.velocity.w3, g.model.w3, lr, mu);
  momentum_step(m.b3, state.velocity.b3, g.model.b3, lr, mu);
  momentum_step(lg.a, state.logistic_velocity.a, g.logistic.a, lr, mu);
  momentum_step(lg.c, state.logistic_velocity.c, g.logistic.c, lr, mu);
}

Matrix gather(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<std::int32_t> gather(std::span<const std::int32_t> v, std::span<const std::size_t> rows) {
  std::vector<std::int32_t> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

}  // namespace

TrainResult train(const SyntheticTask& task, const VmrConfig& config) {
  validate(config);
  const std::size_t k = task.k_classes;
  const double keep_fraction = config.trusted_keep_fraction
                                   ? *config.trusted_keep_fraction
                                   : std::clamp(1.0 - task.noise_rate, 1e-3, 1.0);

  TrainResult result;
  result.model = MlpModel::init(task.input_dim, config.hidden, k, mix_seed(config.seed, kInit));
  Momentum state{zeros_like(result.model)};
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, kShuffle));
  std::mt19937_64 virtual_rng(mix_seed(config.seed, kVirtual));

  const auto n_train = static_cast<std::size_t>(task.train_inputs.rows());
  std::vector<std::size_t> all(n_train);
  std::iota(all.begin(), all.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool warm = epoch < config.warmup_epochs;
    std::vector<std::size_t> trusted = all;
    if (!warm) {
      const std::vector<double> losses = per_sample_ce(result.model, task.train_inputs, task.train_noisy);
      trusted = select_trusted(losses, task.train_noisy, k, keep_fraction);
    }

    const bool regularize = !warm && config.lambda_vos > 0.0;
    std::optional<GaussianBank> bank;
    if (regularize) {
      const Matrix trusted_inputs = gather(task.train_inputs, trusted);
      const ForwardPass f = forward(result.model, trusted_inputs);
      bank = fit_class_gaussians(f.act2, gather(task.train_noisy, trusted), k, config.shrinkage);
    }

    std::shuffle(trusted.begin(), trusted.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.trusted = trusted.size();
    std::size_t batches = 0;
    for (std::size_t start = 0; start < trusted.size(); start += config.batch_size) {
      const std::size_t end = std::min(trusted.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(trusted.data() + start, end - start);
      const Matrix x = gather(task.train_inputs, rows);
      const std::vector<std::int32_t> y = gather(task.train_noisy, rows);
      Matrix virtual_features;
      if (regularize) {
        const VirtualOutliers v =
            sample_virtual_outliers(*bank, config.keep_count, config.pool_size, virtual_rng);
        for (std::size_t c = 0; c < k; ++c) {
          if (config.keep_count < config.pool_size &&
              v.discarded_min_loglik[c] < v.kept_max_loglik[c]) {
            rec.selection_dominance = false;
          }
        }
        virtual_features = v.features;
      }
      const ObjectiveValue obj =
          objective(result.model, result.logistic, x, y, virtual_features, config.lambda_vos);
      if (!std::isfinite(obj.total)) {
        fail(ErrorKind::kNumeric, "training diverged (loss NaN) at epoch " + std::to_string(epoch));
      }
      rec.loss_host += obj.host;
      rec.loss_vos += obj.vos;
      ++batches;
      apply(result.model, result.logistic, state, obj.grad, config.step_size, config.momentum);
    }
    if (batches > 0) {
      rec.loss_host /= static_cast<double>(batches);
      rec.loss_vos /= static_cast<double>(batches);
    }

    const ForwardPass test = forward(result.model, task.test_inputs);
    rec.acc = accuracy(test.logits, task.test_labels);
    const ForwardPass far = forward(result.model, task.far_ood);
    if (!test.logits.allFinite() || !far.logits.allFinite()) {
      fail(ErrorKind::kNumeric, "training diverged (non-finite logits) at epoch " + std::to_string(epoch));
    }
    rec.far_auroc = 100.0 * auroc(energy(test.logits), energy(far.logits));
    result.history.push_back(rec);
    if (epoch + 1 == config.warmup_epochs) result.after_warmup = result.model;
  }
  return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss_host,loss_vos,acc,far_auroc\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.loss_host << ',' << r.loss_vos << ',' << r.acc << ',' << r.far_auroc
       << '\n';
  }
  return os.str();
}

ExportedDumps export_evaldump(const MlpModel& model, const SyntheticTask& task,
                              const std::string& tag) {
  const LinearHead head{model.w3, model.b3};
  auto make = [&](const Matrix& inputs, Role role, const std::string& name,
                  std::optional<std::vector<std::int32_t>> labels) {
    const ForwardPass f = forward(model, inputs);
    EvalDump d;
    d.role = role;
    d.name = name;
    d.labels = std::move(labels);
    d.features = f.act2;
    d.logits = f.logits;
    d.head = head;
    d.meta = {{"source", "vmr"},
              {"noise_kind", std::string(to_string(task.noise_kind))},
              {"noise_rate", std::to_string(task.noise_rate)},
              {"tag", tag}};
    const ValidationReport report = validate_dump(d);
    if (const Violation* v = report.first_error()) fail(ErrorKind::kData, v->message);
    return d;
  };
  return ExportedDumps{make(task.train_inputs, Role::kFit, tag + "_fit", task.train_noisy),
                       make(task.test_inputs, Role::kIdTest, tag + "_id_test", task.test_labels),
                       make(task.near_ood, Role::kOod, tag + "_near_ood", std::nullopt),
                       make(task.far_ood, Role::kOod, tag + "_far_ood", std::nullopt)};
}

namespace {

ArmMetrics evaluate_arm(const ExportedDumps& dumps) {
  // Only the generic post-hoc path: plain energy on exported dumps.
  const ScoreFunction score("energy", nullptr, ScoreOptions{});
  const ScoreVector id = orient_ood_larger(score(dumps.id_test));
  const ScoreVector near = orient_ood_larger(score(dumps.near_ood));
  const ScoreVector far = orient_ood_larger(score(dumps.far_ood));
  ArmMetrics m;
  m.acc = accuracy(dumps.id_test.logits, *dumps.id_test.labels);
  m.near_auroc = 100.0 * auroc(id, near);
  m.far_auroc = 100.0 * auroc(id, far);
  m.far_fpr95 = 100.0 * fpr_at_95_tpr(id, far);
  const TaxonomyReport tax =
      taxonomy_report(dumps.id_test, std::span<const EvalDump>(&dumps.far_ood, 1), score);
  m.id_wrong_vs_ood_auroc = tax.id_wrong_vs_ood_auroc;
  m.wrong_mass_pct = tax.at(Group::kIdWrongHigh).mass_pct + tax.at(Group::kIdWrongLow).mass_pct;
  m.wrong_low_mass_pct = tax.at(Group::kIdWrongLow).mass_pct;
  m.wrong_low_flagged = tax.at(Group::kIdWrongLow).flagged;
  return m;
}

}  // namespace

VmrPairedReport vmr_experiment(const TaskConfig& task_config, const VmrConfig& config,
                               std::span<const std::uint64_t> seeds,
                               const std::function<void(const ArmArtifacts&)>& on_arm) {
  if (seeds.empty()) fail(ErrorKind::kInvalidArgument, "vmr experiment needs at least one seed");
  validate(config);
  VmrPairedReport report;
  report.task = task_config;
  report.config = config;

  double sum_far = 0.0, sum_near = 0.0, sum_acc = 0.0;
  std::size_t ok = 0;
  for (std::uint64_t seed : seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    try {
      TaskConfig tc = task_config;
      tc.seed = mix_seed(task_config.seed, seed);
      const SyntheticTask task = gen_synthetic_task(tc);

      VmrConfig base = config;
      base.seed = seed;
      base.lambda_vos = 0.0;
      VmrConfig repaired = config;
      repaired.seed = seed;

      const TrainResult base_run = train(task, base);
      const ExportedDumps base_dumps = export_evaldump(base_run.model, task, "baseline");
      if (on_arm) on_arm({seed, false, &base_run, &base_dumps});
      const TrainResult vmr_run = train(task, repaired);
      const ExportedDumps vmr_dumps = export_evaldump(vmr_run.model, task, "vmr");
      if (on_arm) on_arm({seed, true, &vmr_run, &vmr_dumps});

      outcome.baseline = evaluate_arm(base_dumps);
      outcome.repaired = evaluate_arm(vmr_dumps);
      outcome.delta_far_auroc = outcome.repaired.far_auroc - outcome.baseline.far_auroc;
      outcome.delta_near_auroc = outcome.repaired.near_auroc - outcome.baseline.near_auroc;
      outcome.delta_acc = outcome.repaired.acc - outcome.baseline.acc;
      sum_far += outcome.delta_far_auroc;
      sum_near += outcome.delta_near_auroc;
      sum_acc += outcome.delta_acc;
      if (outcome.baseline.id_wrong_vs_ood_auroc && outcome.repaired.id_wrong_vs_ood_auroc &&
          *outcome.repaired.id_wrong_vs_ood_auroc > *outcome.baseline.id_wrong_vs_ood_auroc) {
        ++report.wrong_auroc_improved;
      }
      ++ok;
    } catch (const Error& e) {
      outcome.error = e.what();
    }
    report.seeds.push_back(std::move(outcome));
  }
  if (ok > 0) {
    report.mean_delta_far_auroc = sum_far / static_cast<double>(ok);
    report.mean_delta_near_auroc = sum_near / static_cast<double>(ok);
    report.mean_delta_acc = sum_acc / static_cast<double>(ok);
    report.repair_partial = report.mean_delta_near_auroc < report.mean_delta_far_auroc;
  }
  return report;
}

}  // namespace owr::vmr
