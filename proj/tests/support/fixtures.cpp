#include "fixtures.hpp"

#include <array>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace owr::fixture {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                       double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  }
  return m;
}

EvalDump random_dump(std::size_t n, std::size_t k, std::size_t d, std::uint64_t seed, Role role,
                     double label_noise) {
  std::mt19937_64 rng(seed);
  const auto rows = static_cast<Eigen::Index>(n);
  const auto kk = static_cast<Eigen::Index>(k);
  const auto dd = static_cast<Eigen::Index>(d);

  EvalDump dump;
  dump.role = role;
  dump.name = "rand" + std::to_string(seed);
  LinearHead head;
  head.weights = gaussian_matrix(kk, dd, rng, 0.7);
  head.bias = gaussian_matrix(kk, 1, rng, 0.1).col(0);
  dump.features = gaussian_matrix(rows, dd, rng).cwiseAbs();
  dump.head = head;
  dump = quantize_to_storage(std::move(dump));
  dump.logits = dump.features * dump.head->weights.transpose();
  dump.logits.rowwise() += dump.head->bias.transpose();

  if (role != Role::kOod) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::int32_t> cls(0, static_cast<std::int32_t>(k) - 1);
    std::vector<std::int32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      dump.logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      labels[i] = u(rng) < label_noise ? cls(rng) : static_cast<std::int32_t>(best);
    }
    dump.labels = std::move(labels);
  }
  return quantize_to_storage(std::move(dump));
}

EvalDump random_ood_dump(const EvalDump& like, std::size_t n, std::uint64_t seed, double shift) {
  std::mt19937_64 rng(seed);
  EvalDump dump;
  dump.role = Role::kOod;
  dump.name = "ood" + std::to_string(seed);
  dump.head = like.head;
  dump.features = (gaussian_matrix(static_cast<Eigen::Index>(n), like.features.cols(), rng, shift))
                      .cwiseAbs();
  dump = quantize_to_storage(std::move(dump));
  dump.logits = dump.features * dump.head->weights.transpose();
  dump.logits.rowwise() += dump.head->bias.transpose();
  return quantize_to_storage(std::move(dump));
}

std::vector<double> tied_scores(std::size_t n, std::mt19937_64& rng, double offset) {
  std::uniform_int_distribution<int> grid(0, 24);
  std::vector<double> v(n);
  for (double& x : v) x = offset + 0.25 * grid(rng);
  return v;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

CommandResult run_command(const std::string& command) {
  CommandResult result;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) return result;
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) result.out.append(buf.data(), got);
  const int raw = ::pclose(pipe);
  result.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return result;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace owr::fixture
