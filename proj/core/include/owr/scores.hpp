#pragma once

// Post-hoc OOD scores computed from frozen logits and penultimate features.
//
// Every score carries its native direction. Metrics only accept OOD-larger
// vectors, so callers run orient_ood_larger() first.

#include <optional>
#include <string>
#include <vector>

#include "owr/evaldump.hpp"
#include "owr/types.hpp"

namespace owr {

enum class Direction { kOodLarger, kIdLarger };

std::string_view to_string(Direction d);

struct ScoreVector {
  std::vector<double> values;
  std::string score_name;
  Direction direction = Direction::kOodLarger;
};

/// Negates iff the vector is ID-larger. Idempotent.
ScoreVector orient_ood_larger(ScoreVector sv);

/// Concatenates same-name vectors (pooling OOD dumps).
ScoreVector concat(const std::vector<ScoreVector>& parts);

// Logit-only scores ----------------------------------------------------------

ScoreVector msp(const Matrix& logits);
ScoreVector energy(const Matrix& logits, double temperature = 1.0);
ScoreVector maxlogit(const Matrix& logits);
ScoreVector margin(const Matrix& logits);
ScoreVector shannon_entropy(const Matrix& logits);

/// Temperature-scaled MSP without input perturbation; msp(logits / T).
ScoreVector odin_t(const Matrix& logits, double temperature = 1000.0);

// Feature-space detectors ----------------------------------------------------

struct MahalanobisModel {
  Matrix class_means;      // K × D
  Matrix shared_precision;  // D × D
  double shrinkage = 0.0;
};

/// Class means plus shared within-class covariance (pooled, N−K normalizer).
/// With no shrinkage given, adds 1e-3·trace(Σ)/D to the diagonal.
MahalanobisModel fit_mahalanobis(const EvalDump& fit,
                                 std::optional<double> shrinkage = std::nullopt);

/// min_k (x−μ_k)ᵀ P (x−μ_k); OOD-larger.
ScoreVector score_mahalanobis(const MahalanobisModel& model, const Matrix& features);

struct KnnModel {
  Matrix fit_bank;  // rows have unit L2 norm
  std::size_t k = 1;
};

/// Default k is max(1, round(0.01·bank size)).
KnnModel fit_knn(const EvalDump& fit, std::optional<std::size_t> k = std::nullopt);

/// Distance from the normalized query to its k-th nearest bank row.
ScoreVector score_knn(const KnnModel& model, const Matrix& features);

/// logits = W·features + b for every row.
Matrix head_logits(const LinearHead& head, const Matrix& features);

/// Activation clip value: the global percentile over all fit feature entries.
double react_threshold(const Matrix& fit_features, double clip_percentile);

/// Clips features at react_threshold(fit), recomputes logits through the
/// dump's head, and returns their energy. clip_percentile = 100 disables
/// clipping, so the result is plain energy over head-recomputed logits.
ScoreVector react_energy(const EvalDump& dump, const EvalDump& fit,
                         double clip_percentile = 90.0);

/// Same, with a precomputed clip value (+inf disables clipping).
ScoreVector react_energy_clipped(const EvalDump& dump, double threshold);

struct VimModel {
  Vector origin;           // D
  Matrix principal_basis;  // D × D′, orthonormal columns
  double alpha = 1.0;
};

/// Default subspace dimension: min(D/2, 64).
std::size_t default_vim_dim(std::size_t feat_dim);

VimModel fit_vim(const EvalDump& fit, std::optional<std::size_t> subspace_dim = std::nullopt);

/// Norm of (feature − origin) after removing its principal-subspace component.
std::vector<double> vim_residual_norms(const VimModel& model, const Matrix& features);

/// alpha·residual − logsumexp(logits); OOD-larger.
ScoreVector score_vim(const VimModel& model, const EvalDump& dump);

// Shared helpers -------------------------------------------------------------

/// Eigen-decomposition of a symmetric matrix, eigenpairs sorted by descending
/// eigenvalue; each eigenvector's largest-magnitude entry is made positive.
struct SortedEigen {
  Vector values;
  Matrix vectors;  // columns
};
SortedEigen sorted_symmetric_eigen(const Matrix& symmetric);

/// Score names accepted by ScoreFunction.
const std::vector<std::string>& known_scores();

struct ScoreOptions {
  double energy_temperature = 1.0;
  double odin_temperature = 1000.0;
  std::optional<double> mahalanobis_shrinkage;
  std::optional<std::size_t> knn_k;
  double react_percentile = 90.0;
  std::optional<std::size_t> vim_dim;
};

/// True for detectors that must be fitted on a fit dump.
bool score_requires_fit(const std::string& name);

/// Fitted state for one named score, reusable across several dumps.
class ScoreFunction {
 public:
  ScoreFunction(const std::string& name, const EvalDump* fit, const ScoreOptions& options);

  const std::string& name() const { return name_; }
  ScoreVector operator()(const EvalDump& dump) const;

 private:
  std::string name_;
  ScoreOptions options_;
  double react_clip_ = 0.0;
  std::optional<MahalanobisModel> mahalanobis_;
  std::optional<KnnModel> knn_;
  std::optional<VimModel> vim_;
};

}  // namespace owr
