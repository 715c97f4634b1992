#include "owr/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "owr/error.hpp"
#include "owr/stats.hpp"

namespace owr {
namespace {

void require_finite_logits(const Matrix& logits) {
  if (!logits.allFinite()) fail(ErrorKind::kInvalidArgument, "non-finite logits");
}

void require_classes(const Matrix& logits) {
  if (logits.cols() < 2) fail(ErrorKind::kInvalidArgument, "score requires K >= 2 classes");
  require_finite_logits(logits);
}

ScoreVector make(std::vector<double> values, std::string name, Direction dir) {
  return ScoreVector{std::move(values), std::move(name), dir};
}

const std::vector<std::int32_t>& require_labels(const EvalDump& fit, const char* who) {
  if (fit.role == Role::kOod || !fit.labels) {
    fail(ErrorKind::kInvalidArgument, std::string(who) + " requires a labeled fit dump");
  }
  return *fit.labels;
}

}  // namespace

std::string_view to_string(Direction d) {
  return d == Direction::kOodLarger ? "ood_larger" : "id_larger";
}

ScoreVector orient_ood_larger(ScoreVector sv) {
  if (sv.direction == Direction::kIdLarger) {
    for (double& v : sv.values) v = -v;
    sv.direction = Direction::kOodLarger;
  }
  return sv;
}

ScoreVector concat(const std::vector<ScoreVector>& parts) {
  if (parts.empty()) fail(ErrorKind::kInvalidArgument, "nothing to concatenate");
  ScoreVector out{{}, parts.front().score_name, parts.front().direction};
  for (const auto& p : parts) {
    if (p.score_name != out.score_name || p.direction != out.direction) {
      fail(ErrorKind::kInvalidArgument, "cannot pool different scores");
    }
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
  }
  return out;
}

ScoreVector msp(const Matrix& logits) {
  require_classes(logits);
  std::vector<double> v(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    v[i] = 1.0 / (logits.row(i).array() - m).exp().sum();
  }
  return make(std::move(v), "msp", Direction::kIdLarger);
}

ScoreVector energy(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kInvalidArgument, "temperature must be positive");
  require_finite_logits(logits);
  std::vector<double> v(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (temperature == 1.0) {
      v[i] = -stats::logsumexp(logits.row(i));
    } else {
      v[i] = -temperature * stats::logsumexp(logits.row(i) / temperature);
    }
  }
  return make(std::move(v), "energy", Direction::kOodLarger);
}

ScoreVector maxlogit(const Matrix& logits) {
  require_classes(logits);
  std::vector<double> v(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) v[i] = logits.row(i).maxCoeff();
  return make(std::move(v), "maxlogit", Direction::kIdLarger);
}

ScoreVector margin(const Matrix& logits) {
  require_classes(logits);
  std::vector<double> v(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double top1 = -std::numeric_limits<double>::infinity();
    double top2 = top1;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const double z = logits(i, k);
      if (z > top1) {
        top2 = top1;
        top1 = z;
      } else if (z > top2) {
        top2 = z;
      }
    }
    v[i] = top1 - top2;
  }
  return make(std::move(v), "margin", Direction::kIdLarger);
}

ScoreVector shannon_entropy(const Matrix& logits) {
  require_classes(logits);
  const double max_entropy = std::log(static_cast<double>(logits.cols()));
  std::vector<double> v(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = (logits.row(i).array() - m).transpose();
    const Eigen::ArrayXd e = shifted.exp();
    const double s = e.sum();
    // H = log Σe − Σ p·(z−m)
    const double h = std::log(s) - (e * shifted).sum() / s;
    v[i] = std::clamp(h, 0.0, max_entropy);
  }
  return make(std::move(v), "entropy", Direction::kOodLarger);
}

ScoreVector odin_t(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kInvalidArgument, "temperature must be positive");
  ScoreVector sv = msp(logits / temperature);
  sv.score_name = "odin";
  return sv;
}

SortedEigen sorted_symmetric_eigen(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric);
  if (solver.info() != Eigen::Success) fail(ErrorKind::kNumeric, "eigendecomposition failed");
  const Eigen::Index d = symmetric.rows();
  SortedEigen out{Vector(d), Matrix(d, d)};
  for (Eigen::Index j = 0; j < d; ++j) {
    const Eigen::Index src = d - 1 - j;  // solver returns ascending order
    out.values(j) = solver.eigenvalues()(src);
    Vector v = solver.eigenvectors().col(src);
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0) v = -v;
    out.vectors.col(j) = v;
  }
  return out;
}

MahalanobisModel fit_mahalanobis(const EvalDump& fit, std::optional<double> shrinkage) {
  const auto& labels = require_labels(fit, "mahalanobis");
  const Eigen::Index k = fit.logits.cols();
  const Eigen::Index d = fit.features.cols();
  if (shrinkage && !(*shrinkage >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "shrinkage must be nonnegative");
  }

  Matrix means = Matrix::Zero(k, d);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < fit.features.rows(); ++i) {
    means.row(labels[i]) += fit.features.row(i);
    ++counts[labels[i]];
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[c] < 2) {
      fail(ErrorKind::kInvalidArgument,
           "mahalanobis needs >= 2 fit samples in class " + std::to_string(c));
    }
    means.row(c) /= static_cast<double>(counts[c]);
  }

  Matrix centered = fit.features;
  for (Eigen::Index i = 0; i < centered.rows(); ++i) centered.row(i) -= means.row(labels[i]);
  const double dof = static_cast<double>(fit.features.rows() - k);
  if (dof <= 0.0) fail(ErrorKind::kNumeric, "too few fit samples for a pooled covariance");
  Matrix cov = (centered.transpose() * centered) / dof;
  cov = 0.5 * (cov + cov.transpose()).eval();

  const double ridge = shrinkage ? *shrinkage : 1e-3 * cov.trace() / static_cast<double>(d);
  cov.diagonal().array() += ridge;

  const SortedEigen eig = sorted_symmetric_eigen(cov);
  const double top = eig.values(0);
  const double bottom = eig.values(d - 1);
  if (!(top > 0.0) || !(bottom > 1e-12 * top)) {
    fail(ErrorKind::kNumeric, "covariance is singular; use shrinkage > 0");
  }
  Matrix precision = eig.vectors * eig.values.cwiseInverse().asDiagonal() *
                     eig.vectors.transpose();
  precision = 0.5 * (precision + precision.transpose()).eval();
  return MahalanobisModel{std::move(means), std::move(precision), ridge};
}

ScoreVector score_mahalanobis(const MahalanobisModel& model, const Matrix& features) {
  if (features.cols() != model.class_means.cols()) {
    fail(ErrorKind::kInvalidArgument, "feature dimension does not match model");
  }
  std::vector<double> v(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < model.class_means.rows(); ++c) {
      const Vector diff = (features.row(i) - model.class_means.row(c)).transpose();
      best = std::min(best, diff.dot(model.shared_precision * diff));
    }
    v[i] = std::max(best, 0.0);
  }
  return make(std::move(v), "mahalanobis", Direction::kOodLarger);
}

namespace {

Matrix normalize_rows(const Matrix& features) {
  Matrix out = features;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (!(norm > 0.0)) {
      fail(ErrorKind::kInvalidArgument,
           "cannot normalize zero-norm feature row " + std::to_string(i));
    }
    out.row(i) /= norm;
  }
  return out;
}

}  // namespace

KnnModel fit_knn(const EvalDump& fit, std::optional<std::size_t> k) {
  const std::size_t bank = static_cast<std::size_t>(fit.features.rows());
  if (bank == 0) fail(ErrorKind::kInvalidArgument, "knn bank is empty");
  const std::size_t chosen =
      k ? *k
        : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.01 * bank)));
  if (chosen < 1 || chosen > bank) {
    fail(ErrorKind::kInvalidArgument, "knn k must lie in [1, bank size]");
  }
  return KnnModel{normalize_rows(fit.features), chosen};
}

ScoreVector score_knn(const KnnModel& model, const Matrix& features) {
  if (features.cols() != model.fit_bank.cols()) {
    fail(ErrorKind::kInvalidArgument, "feature dimension does not match bank");
  }
  const Matrix queries = normalize_rows(features);
  const Eigen::Index bank = model.fit_bank.rows();
  const auto kth = static_cast<std::ptrdiff_t>(model.k - 1);
  std::vector<double> dist(static_cast<std::size_t>(bank));
  std::vector<double> v(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    for (Eigen::Index j = 0; j < bank; ++j) {
      dist[j] = (queries.row(i) - model.fit_bank.row(j)).squaredNorm();
    }
    std::nth_element(dist.begin(), dist.begin() + kth, dist.end());
    v[i] = std::sqrt(dist[kth]);
  }
  return make(std::move(v), "knn", Direction::kOodLarger);
}

Matrix head_logits(const LinearHead& head, const Matrix& features) {
  if (features.cols() != head.weights.cols()) {
    fail(ErrorKind::kInvalidArgument, "feature dimension does not match head");
  }
  Matrix z = features * head.weights.transpose();
  z.rowwise() += head.bias.transpose();
  return z;
}

double react_threshold(const Matrix& fit_features, double clip_percentile) {
  if (!(clip_percentile > 0.0 && clip_percentile <= 100.0)) {
    fail(ErrorKind::kInvalidArgument, "clip percentile must lie in (0,100]");
  }
  if (fit_features.size() == 0) fail(ErrorKind::kInvalidArgument, "react needs fit features");
  return stats::percentile(std::span<const double>(fit_features.data(),
                                                   static_cast<std::size_t>(fit_features.size())),
                           clip_percentile);
}

ScoreVector react_energy_clipped(const EvalDump& dump, double threshold) {
  if (!dump.head) fail(ErrorKind::kInvalidArgument, "react requires classifier head");
  Matrix z;
  if (std::isinf(threshold) && threshold > 0) {
    z = head_logits(*dump.head, dump.features);
  } else {
    z = head_logits(*dump.head, dump.features.cwiseMin(threshold));
  }
  ScoreVector sv = energy(z);
  sv.score_name = "react";
  return sv;
}

ScoreVector react_energy(const EvalDump& dump, const EvalDump& fit, double clip_percentile) {
  if (!dump.head) fail(ErrorKind::kInvalidArgument, "react requires classifier head");
  const double threshold = react_threshold(fit.features, clip_percentile);
  if (clip_percentile == 100.0) {
    return react_energy_clipped(dump, std::numeric_limits<double>::infinity());
  }
  return react_energy_clipped(dump, threshold);
}

std::size_t default_vim_dim(std::size_t feat_dim) {
  return std::max<std::size_t>(1, std::min<std::size_t>(feat_dim / 2, 64));
}

VimModel fit_vim(const EvalDump& fit, std::optional<std::size_t> subspace_dim) {
  if (!fit.head) fail(ErrorKind::kInvalidArgument, "vim requires classifier head");
  const auto d = static_cast<std::size_t>(fit.features.cols());
  const std::size_t sub = subspace_dim ? *subspace_dim : default_vim_dim(d);
  if (sub < 1 || sub >= d) fail(ErrorKind::kInvalidArgument, "vim subspace dim must lie in [1, D)");
  if (fit.features.rows() == 0) fail(ErrorKind::kInvalidArgument, "vim needs fit features");

  const Eigen::MatrixXd w = fit.head->weights;
  const Eigen::MatrixXd w_pinv = w.completeOrthogonalDecomposition().pseudoInverse();
  VimModel model;
  model.origin = -(w_pinv * fit.head->bias);

  Matrix centered = fit.features;
  centered.rowwise() -= model.origin.transpose();
  const Matrix moment = (centered.transpose() * centered) / static_cast<double>(centered.rows());
  const SortedEigen eig = sorted_symmetric_eigen(0.5 * (moment + moment.transpose()));
  model.principal_basis = eig.vectors.leftCols(static_cast<Eigen::Index>(sub));

  const std::vector<double> residuals = vim_residual_norms(model, fit.features);
  double mean_residual = 0.0;
  for (double r : residuals) mean_residual += r;
  mean_residual /= static_cast<double>(residuals.size());
  const Matrix fit_logits = head_logits(*fit.head, fit.features);
  double mean_maxlogit = 0.0;
  for (Eigen::Index i = 0; i < fit_logits.rows(); ++i) mean_maxlogit += fit_logits.row(i).maxCoeff();
  mean_maxlogit /= static_cast<double>(fit_logits.rows());

  if (!(mean_residual > 1e-12)) {
    fail(ErrorKind::kNumeric, "vim residuals are degenerate: fit features lie in the subspace");
  }
  model.alpha = mean_maxlogit / mean_residual;
  if (!(model.alpha > 0.0)) {
    fail(ErrorKind::kNumeric, "vim alpha must be positive (mean fit max-logit <= 0)");
  }
  return model;
}

std::vector<double> vim_residual_norms(const VimModel& model, const Matrix& features) {
  if (features.cols() != model.origin.size()) {
    fail(ErrorKind::kInvalidArgument, "feature dimension does not match vim model");
  }
  std::vector<double> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const Vector x = features.row(i).transpose() - model.origin;
    const Vector r = x - model.principal_basis * (model.principal_basis.transpose() * x);
    out[i] = r.norm();
  }
  return out;
}

ScoreVector score_vim(const VimModel& model, const EvalDump& dump) {
  require_finite_logits(dump.logits);
  const std::vector<double> residuals = vim_residual_norms(model, dump.features);
  std::vector<double> v(residuals.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = model.alpha * residuals[i] - stats::logsumexp(dump.logits.row(i));
  }
  return make(std::move(v), "vim", Direction::kOodLarger);
}

const std::vector<std::string>& known_scores() {
  static const std::vector<std::string> names = {"energy", "msp",  "maxlogit",    "margin",
                                                 "entropy", "odin", "mahalanobis", "knn",
                                                 "react",  "vim"};
  return names;
}

bool score_requires_fit(const std::string& name) {
  return name == "mahalanobis" || name == "knn" || name == "react" || name == "vim";
}

ScoreFunction::ScoreFunction(const std::string& name, const EvalDump* fit,
                             const ScoreOptions& options)
    : name_(name), options_(options) {
  if (std::find(known_scores().begin(), known_scores().end(), name) == known_scores().end()) {
    fail(ErrorKind::kInvalidArgument, "unknown score: " + name);
  }
  if (score_requires_fit(name) && fit == nullptr) {
    fail(ErrorKind::kInvalidArgument, name + " requires fit dump");
  }
  if (name == "mahalanobis") {
    mahalanobis_ = fit_mahalanobis(*fit, options.mahalanobis_shrinkage);
  } else if (name == "knn") {
    knn_ = fit_knn(*fit, options.knn_k);
  } else if (name == "react") {
    react_clip_ = options.react_percentile == 100.0
                      ? std::numeric_limits<double>::infinity()
                      : react_threshold(fit->features, options.react_percentile);
  } else if (name == "vim") {
    vim_ = fit_vim(*fit, options.vim_dim);
  }
}

ScoreVector ScoreFunction::operator()(const EvalDump& dump) const {
  if (name_ == "energy") return energy(dump.logits, options_.energy_temperature);
  if (name_ == "msp") return msp(dump.logits);
  if (name_ == "maxlogit") return maxlogit(dump.logits);
  if (name_ == "margin") return margin(dump.logits);
  if (name_ == "entropy") return shannon_entropy(dump.logits);
  if (name_ == "odin") return odin_t(dump.logits, options_.odin_temperature);
  if (name_ == "mahalanobis") return score_mahalanobis(*mahalanobis_, dump.features);
  if (name_ == "knn") return score_knn(*knn_, dump.features);
  if (name_ == "react") return react_energy_clipped(dump, react_clip_);
  return score_vim(*vim_, dump);
}

}  // namespace owr
