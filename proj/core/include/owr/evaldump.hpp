#pragma once

// Portable evaluation dumps: the frozen outputs of one checkpoint on one data
// split (labels, logits, penultimate features, optional linear head).
//
// On-disk layout is a directory holding manifest.json plus little-endian raw
// arrays. Values are stored as float32 and widened to double on load.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "owr/types.hpp"

namespace owr {

enum class Role { kFit, kIdTest, kOod };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

/// Final linear layer: logits = weights · feature + bias.
struct LinearHead {
  Matrix weights;  // K × D
  Vector bias;     // K
};

bool operator==(const LinearHead& a, const LinearHead& b);

struct EvalDump {
  Role role = Role::kIdTest;
  std::string name;
  std::map<std::string, std::string> meta;

  std::optional<std::vector<std::int32_t>> labels;
  Matrix logits;    // n × K
  Matrix features;  // n × D
  std::optional<LinearHead> head;

  std::size_t n_samples() const { return static_cast<std::size_t>(logits.rows()); }
  std::size_t n_classes() const { return static_cast<std::size_t>(logits.cols()); }
  std::size_t feat_dim() const { return static_cast<std::size_t>(features.cols()); }
};

/// Exact (bitwise-value) equality of every field.
bool operator==(const EvalDump& a, const EvalDump& b);

enum class Severity { kError, kWarning };

struct Violation {
  Severity severity = Severity::kError;
  std::string code;
  std::string message;
  std::string location;
};

struct ValidationReport {
  std::vector<Violation> violations;

  /// True iff no error-severity entry is present.
  bool ok() const;
  const Violation* first_error() const;
};

/// Per-entry tolerance for the head/logits consistency warning.
inline constexpr double kHeadLogitTolerance = 1e-3;

/// Lists every invariant violation in a fixed order. Never throws.
ValidationReport validate_dump(const EvalDump& dump);

/// Writes manifest.json and the binary arrays into `dir` (created if needed).
/// Throws owr::Error on the first validation error or on I/O failure.
void write_dump(const EvalDump& dump, const std::filesystem::path& dir);

/// Reads a dump directory; byte lengths must match the manifest exactly.
EvalDump load_dump(const std::filesystem::path& dir);

/// Rounds every stored number through float32, i.e. what a write/load cycle
/// produces. Useful for building fixtures that round-trip exactly.
EvalDump quantize_to_storage(EvalDump dump);

inline constexpr std::string_view kDumpFormatVersion = "1";

}  // namespace owr
