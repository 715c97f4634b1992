#pragma once

// Desk-scale virtual-margin regularization lab.
//
// A small rectifier MLP is trained on a synthetic Gaussian-blob task with
// injected label noise. The host objective is cross-entropy on per-class
// small-loss ("trusted") samples. The optional regularizer fits class-
// conditional Gaussians to trusted penultimate features, draws low-likelihood
// virtual outliers from them, and trains a logistic model on −energy to push
// trusted ID energy down and virtual-outlier energy up:
//
//   L = L_host + lambda_vos · L_vos
//
// Evaluation never sees the regularizer: trained models are exported as
// ordinary dumps and scored with plain energy.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "owr/evaldump.hpp"
#include "owr/taxonomy.hpp"
#include "owr/types.hpp"

namespace owr::vmr {

enum class NoiseKind { kSymmetric, kAsymmetric };
std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view text);

struct TaskConfig {
  std::size_t k_classes = 4;
  std::size_t input_dim = 8;
  std::size_t n_per_class = 1000;
  std::size_t n_test_per_class = 500;
  std::size_t n_ood = 2000;  // per OOD split
  NoiseKind noise_kind = NoiseKind::kSymmetric;
  double noise_rate = 0.0;
  double radius = 4.0;  // class means sit on a circle of this radius
  double sigma = 1.0;   // per-coordinate blob spread
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  Matrix train_inputs;
  std::vector<std::int32_t> train_noisy;
  std::vector<std::int32_t> train_clean;
  Matrix test_inputs;
  std::vector<std::int32_t> test_labels;
  Matrix near_ood;
  Matrix far_ood;
  std::size_t k_classes = 0;
  std::size_t input_dim = 0;
  NoiseKind noise_kind = NoiseKind::kSymmetric;
  double noise_rate = 0.0;
};

/// ID classes: blobs centred on a circle of radius R in the first two
/// coordinates. Near-OOD: blobs at midpoints of adjacent class means.
/// Far-OOD: one blob per class at distance 4R along orthogonal coordinate
/// 2 + (k mod (d−2)), i.e. outside the class plane.
SyntheticTask gen_synthetic_task(const TaskConfig& config);

/// Each label flips independently with probability `rate`: uniformly to one
/// of the other K−1 classes (symmetric) or to (y+1) mod K (asymmetric).
std::vector<std::int32_t> inject_label_noise(std::span<const std::int32_t> labels,
                                             std::size_t n_classes, NoiseKind kind, double rate,
                                             std::uint64_t seed);

/// Per class, the ⌊keep_fraction·n_class⌋ lowest-loss indices (ties by
/// index). Result is sorted ascending.
std::vector<std::size_t> select_trusted(std::span<const double> per_sample_losses,
                                        std::span<const std::int32_t> labels,
                                        std::size_t n_classes, double keep_fraction);

struct GaussianBank {
  Matrix means;       // K × D
  Matrix covariance;  // D × D, shrinkage included
  Matrix cholesky_l;  // lower factor of covariance
  double shrinkage = 0.0;
};

/// Class means and pooled within-class covariance (N−K normalizer) + εI.
GaussianBank fit_class_gaussians(const Matrix& features, std::span<const std::int32_t> labels,
                                 std::size_t n_classes, double shrinkage);

/// Gaussian log density of `x` under class `k` of the bank.
double log_likelihood(const GaussianBank& bank, std::size_t k, const Eigen::Ref<const Vector>& x);

struct VirtualOutliers {
  Matrix features;                    // (t·K) × D, class-major
  std::vector<std::int32_t> classes;  // source class of each row
  std::vector<double> kept_max_loglik;       // per class
  std::vector<double> discarded_min_loglik;  // per class (+inf when t = M)
};

/// Draws `pool` candidates per class from N(μ_k, Σ) and keeps the `keep`
/// with the lowest likelihood under their own class. Kept rows appear in
/// candidate draw order.
VirtualOutliers sample_virtual_outliers(const GaussianBank& bank, std::size_t keep,
                                        std::size_t pool, std::mt19937_64& rng);
VirtualOutliers sample_virtual_outliers(const GaussianBank& bank, std::size_t keep,
                                        std::size_t pool, std::uint64_t seed);

// Model ----------------------------------------------------------------------

/// input → hidden → hidden → K, rectifier activations. The second hidden
/// activation is the penultimate feature.
struct MlpModel {
  Matrix w1;  // h × d
  Vector b1;
  Matrix w2;  // h × h
  Vector b2;
  Matrix w3;  // K × h
  Vector b3;

  static MlpModel init(std::size_t input_dim, std::size_t hidden, std::size_t n_classes,
                       std::uint64_t seed);
  std::size_t n_classes() const { return static_cast<std::size_t>(w3.rows()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
};

bool operator==(const MlpModel& a, const MlpModel& b);

struct ForwardPass {
  Matrix pre1, act1, pre2, act2, logits;
};
ForwardPass forward(const MlpModel& model, const Matrix& inputs);

/// Logistic calibration of −energy used only by the regularizer.
struct EnergyLogistic {
  double a = 1.0;
  double c = 0.0;
};

/// Gradients with the same layout as MlpModel plus the logistic pair.
struct Gradients {
  MlpModel model;
  EnergyLogistic logistic;
};

struct VosLoss {
  double loss = 0.0;
  std::vector<double> grad_id_energy;       // dL/dE per ID row
  std::vector<double> grad_virtual_energy;  // dL/dE per virtual row
  double grad_a = 0.0;
  double grad_c = 0.0;
};

/// mean_ID softplus(−u) + mean_virtual softplus(u), u = a·(−E) + c.
VosLoss vos_loss(std::span<const double> id_energies, std::span<const double> virtual_energies,
                 const EnergyLogistic& logistic);

struct ObjectiveValue {
  double host = 0.0;
  double vos = 0.0;
  double total = 0.0;
  Gradients grad;
};

/// Full objective and analytic gradients for one batch. `virtual_features`
/// may be empty, in which case the regularizer is skipped.
ObjectiveValue objective(const MlpModel& model, const EnergyLogistic& logistic,
                         const Matrix& inputs, std::span<const std::int32_t> labels,
                         const Matrix& virtual_features, double lambda_vos);

/// Per-sample cross-entropy of `labels` under the model.
std::vector<double> per_sample_ce(const MlpModel& model, const Matrix& inputs,
                                  std::span<const std::int32_t> labels);

// Training ---------------------------------------------------------------------

struct VmrConfig {
  double lambda_vos = 0.1;
  std::size_t warmup_epochs = 10;
  std::size_t pool_size = 200;  // M, per class
  std::size_t keep_count = 20;  // t, per class
  std::optional<double> trusted_keep_fraction;  // default: 1 − noise rate
  double shrinkage = 1e-3;
  std::size_t hidden = 64;
  double step_size = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

/// Throws owr::Error on a violated invariant.
void validate(const VmrConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_host = 0.0;
  double loss_vos = 0.0;
  double acc = 0.0;        // percent, clean test labels
  double far_auroc = 0.0;  // percent, energy score
  std::size_t trusted = 0;
  bool selection_dominance = true;  // kept/discarded likelihood ordering held
};

struct TrainResult {
  MlpModel model;
  EnergyLogistic logistic;
  std::vector<EpochRecord> history;
  /// Parameters right after the last warmup epoch.
  std::optional<MlpModel> after_warmup;
};

TrainResult train(const SyntheticTask& task, const VmrConfig& config);

std::string history_csv(std::span<const EpochRecord> history);

struct ExportedDumps {
  EvalDump fit;
  EvalDump id_test;
  EvalDump near_ood;
  EvalDump far_ood;
};

/// One deterministic forward pass per split; the head is stored so
/// head-based detectors work. `fit` carries the (noisy) training labels.
ExportedDumps export_evaldump(const MlpModel& model, const SyntheticTask& task,
                              const std::string& tag = "toy");

// Paired experiment -------------------------------------------------------------

struct ArmMetrics {
  double acc = 0.0;
  double near_auroc = 0.0;
  double far_auroc = 0.0;
  double far_fpr95 = 0.0;
  std::optional<double> id_wrong_vs_ood_auroc;
  double wrong_mass_pct = 0.0;
  double wrong_low_mass_pct = 0.0;
  bool wrong_low_flagged = false;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<std::string> error;
  ArmMetrics baseline;
  ArmMetrics repaired;
  double delta_far_auroc = 0.0;
  double delta_near_auroc = 0.0;
  double delta_acc = 0.0;
};

struct VmrPairedReport {
  TaskConfig task;
  VmrConfig config;
  std::vector<SeedOutcome> seeds;
  double mean_delta_far_auroc = 0.0;
  double mean_delta_near_auroc = 0.0;
  double mean_delta_acc = 0.0;
  std::size_t wrong_auroc_improved = 0;  // seeds where ID-wrong vs OOD AUROC rose
  bool repair_partial = false;           // near improved less than far
};

/// Per seed, trains a baseline (lambda 0) and a repaired arm on the same task,
/// exports both, and evaluates them with the generic energy scoring path.
/// `on_arm` (optional) receives every trained arm for persistence.
struct ArmArtifacts {
  std::uint64_t seed = 0;
  bool repaired = false;
  const TrainResult* result = nullptr;
  const ExportedDumps* dumps = nullptr;
};
VmrPairedReport vmr_experiment(const TaskConfig& task, const VmrConfig& config,
                               std::span<const std::uint64_t> seeds,
                               const std::function<void(const ArmArtifacts&)>& on_arm = {});

/// Stream-splitting helper for reproducible sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace owr::vmr
