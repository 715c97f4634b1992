#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "owr/evaldump.hpp"
#include "owr/types.hpp"

namespace owr::fixture {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                       double scale = 1.0);

/// Random features, a random linear head and logits = head(features).
/// Labels follow the argmax, with `label_noise` of them reassigned at random.
/// The result is already quantized to storage precision.
EvalDump random_dump(std::size_t n, std::size_t k, std::size_t d, std::uint64_t seed,
                     Role role = Role::kIdTest, double label_noise = 0.2);

/// Same head as `like`, different features; no labels (OOD role).
EvalDump random_ood_dump(const EvalDump& like, std::size_t n, std::uint64_t seed,
                         double shift = 1.5);

/// Scores on a coarse grid so that ties are common.
std::vector<double> tied_scores(std::size_t n, std::mt19937_64& rng, double offset = 0.0);

/// Unique directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "owr");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

/// Runs a shell command; returns the exit status and captured stdout.
struct CommandResult {
  int status = -1;
  std::string out;
};
CommandResult run_command(const std::string& command);

std::string slurp(const std::filesystem::path& path);

}  // namespace owr::fixture
