#include "owr/evaldump.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "owr/error.hpp"
#include "owr/io.hpp"

namespace owr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kManifest = "manifest.json";
constexpr const char* kLabels = "labels.bin";
constexpr const char* kLogits = "logits.bin";
constexpr const char* kFeatures = "features.bin";
constexpr const char* kHeadW = "head_w.bin";
constexpr const char* kHeadB = "head_b.bin";

std::string index_text(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << '[' << r << ',' << c << ']';
  return os.str();
}

template <typename M>
void check_finite(const M& m, const std::string& array, ValidationReport& report) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        const std::string where = array + index_text(r, c);
        report.violations.push_back(
            {Severity::kError, "non_finite", "non-finite value at " + where, where});
        return;  // first offending entry per array
      }
    }
  }
}

// Little-endian packing independent of host byte order.
void append_u32(std::string& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xFFu));
}

std::uint32_t read_u32(const char* p) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  }
  return v;
}

template <typename M>
std::string pack_floats(const M& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 4);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      append_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    }
  }
  return out;
}

std::string read_exact(const fs::path& dir, const char* file, const char* what,
                       std::size_t expected) {
  std::string bytes = read_file(dir / file);
  if (bytes.size() != expected) {
    std::ostringstream os;
    os << what << " length mismatch: expected " << expected << ", got " << bytes.size();
    fail(ErrorKind::kData, os.str());
  }
  return bytes;
}

Matrix unpack_floats(const std::string& bytes, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  const char* p = bytes.data();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, p += 4) {
      m(r, c) = static_cast<double>(std::bit_cast<float>(read_u32(p)));
    }
  }
  return m;
}

template <typename M>
void quantize(M& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

template <typename A, typename B>
bool same_values(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

}  // namespace

bool operator==(const LinearHead& a, const LinearHead& b) {
  return same_values(a.weights, b.weights) && same_values(a.bias, b.bias);
}

bool operator==(const EvalDump& a, const EvalDump& b) {
  return a.role == b.role && a.name == b.name && a.meta == b.meta && a.labels == b.labels &&
         same_values(a.logits, b.logits) && same_values(a.features, b.features) &&
         a.head == b.head;
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kFit: return "fit";
    case Role::kIdTest: return "id_test";
    case Role::kOod: return "ood";
  }
  return "unknown";
}

Role parse_role(std::string_view text) {
  if (text == "fit") return Role::kFit;
  if (text == "id_test") return Role::kIdTest;
  if (text == "ood") return Role::kOod;
  fail(ErrorKind::kData, "unknown role: " + std::string(text));
}

bool ValidationReport::ok() const { return first_error() == nullptr; }

const Violation* ValidationReport::first_error() const {
  for (const auto& v : violations) {
    if (v.severity == Severity::kError) return &v;
  }
  return nullptr;
}

ValidationReport validate_dump(const EvalDump& dump) {
  ValidationReport report;
  auto error = [&](std::string code, std::string message, std::string location = {}) {
    report.violations.push_back(
        {Severity::kError, std::move(code), std::move(message), std::move(location)});
  };

  const auto n = dump.logits.rows();
  if (dump.features.rows() != n) {
    std::ostringstream os;
    os << "features rows " << dump.features.rows() << " differ from logits rows " << n;
    error("row_count_mismatch", os.str(), "features");
  }

  if (dump.role == Role::kOod) {
    if (dump.labels) error("labels_forbidden", "OOD dump must not carry labels", "labels");
  } else if (!dump.labels) {
    error("labels_required",
          std::string(to_string(dump.role)) + " dump requires labels", "labels");
  }

  if (dump.labels) {
    const auto& labels = *dump.labels;
    if (static_cast<Eigen::Index>(labels.size()) != n) {
      std::ostringstream os;
      os << "labels count " << labels.size() << " differs from n_samples " << n;
      error("label_count_mismatch", os.str(), "labels");
    }
    const auto k = static_cast<std::int64_t>(dump.n_classes());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= k) {
        error("label_out_of_range", "label out of range",
              "labels[" + std::to_string(i) + "]");
        break;
      }
    }
  }

  check_finite(dump.logits, "logits", report);
  check_finite(dump.features, "features", report);

  if (dump.head) {
    const auto& head = *dump.head;
    const bool shape_ok = head.weights.rows() == dump.logits.cols() &&
                          head.weights.cols() == dump.features.cols() &&
                          head.bias.size() == dump.logits.cols();
    if (!shape_ok) {
      error("head_shape", "head shape does not match K×D", "head");
    } else {
      const std::size_t before = report.violations.size();
      check_finite(head.weights, "head_w", report);
      check_finite(head.bias, "head_b", report);
      const bool head_finite = report.violations.size() == before;
      if (head_finite && dump.features.rows() == n) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const Vector z = head.weights * dump.features.row(i).transpose() + head.bias;
          const double gap = (z - dump.logits.row(i).transpose()).cwiseAbs().maxCoeff();
          if (!(gap <= kHeadLogitTolerance)) {
            report.violations.push_back({Severity::kWarning, "head_logits_inconsistent",
                                         "head/logits inconsistency",
                                         "logits[" + std::to_string(i) + "]"});
            break;
          }
        }
      }
    }
  }
  return report;
}

void write_dump(const EvalDump& dump, const fs::path& dir) {
  const ValidationReport report = validate_dump(dump);
  if (const Violation* v = report.first_error()) fail(ErrorKind::kData, v->message);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create directory " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format_version"] = std::string(kDumpFormatVersion);
  manifest["n_samples"] = dump.n_samples();
  manifest["n_classes"] = dump.n_classes();
  manifest["feat_dim"] = dump.feat_dim();
  manifest["role"] = std::string(to_string(dump.role));
  manifest["name"] = dump.name;
  manifest["has_labels"] = dump.labels.has_value();
  manifest["has_head"] = dump.head.has_value();
  manifest["meta"] = dump.meta;

  write_file(dir / kManifest, manifest.dump(2) + "\n");
  write_file(dir / kLogits, pack_floats(dump.logits));
  write_file(dir / kFeatures, pack_floats(dump.features));

  if (dump.labels) {
    std::string bytes;
    bytes.reserve(dump.labels->size() * 4);
    for (std::int32_t y : *dump.labels) append_u32(bytes, std::bit_cast<std::uint32_t>(y));
    write_file(dir / kLabels, bytes);
  } else {
    fs::remove(dir / kLabels, ec);
  }
  if (dump.head) {
    write_file(dir / kHeadW, pack_floats(dump.head->weights));
    write_file(dir / kHeadB, pack_floats(dump.head->bias));
  } else {
    fs::remove(dir / kHeadW, ec);
    fs::remove(dir / kHeadB, ec);
  }
}

EvalDump load_dump(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "not a dump directory: " + dir.string());
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifest));
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed manifest.json: ") + e.what());
  }

  EvalDump dump;
  std::size_t n = 0, k = 0, d = 0;
  bool has_labels = false, has_head = false;
  try {
    const std::string version = manifest.at("format_version").get<std::string>();
    if (version != kDumpFormatVersion) fail(ErrorKind::kData, "unknown format version: " + version);
    n = manifest.at("n_samples").get<std::size_t>();
    k = manifest.at("n_classes").get<std::size_t>();
    d = manifest.at("feat_dim").get<std::size_t>();
    dump.role = parse_role(manifest.at("role").get<std::string>());
    dump.name = manifest.at("name").get<std::string>();
    has_labels = manifest.at("has_labels").get<bool>();
    has_head = manifest.at("has_head").get<bool>();
    dump.meta = manifest.value("meta", std::map<std::string, std::string>{});
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed manifest.json: ") + e.what());
  }

  if (dump.role == Role::kOod && (has_labels || fs::exists(dir / kLabels))) {
    fail(ErrorKind::kData, "OOD dump must not carry labels");
  }
  if (!has_labels && fs::exists(dir / kLabels)) fail(ErrorKind::kData, "unexpected file labels.bin");
  if (!has_head && (fs::exists(dir / kHeadW) || fs::exists(dir / kHeadB))) {
    fail(ErrorKind::kData, "unexpected head files without has_head");
  }

  const auto rows = static_cast<Eigen::Index>(n);
  const auto classes = static_cast<Eigen::Index>(k);
  const auto dims = static_cast<Eigen::Index>(d);
  dump.logits = unpack_floats(read_exact(dir, kLogits, "logits", n * k * 4), rows, classes);
  dump.features = unpack_floats(read_exact(dir, kFeatures, "features", n * d * 4), rows, dims);
  if (has_labels) {
    const std::string bytes = read_exact(dir, kLabels, "labels", n * 4);
    std::vector<std::int32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = std::bit_cast<std::int32_t>(read_u32(bytes.data() + 4 * i));
    }
    dump.labels = std::move(labels);
  }
  if (has_head) {
    LinearHead head;
    head.weights = unpack_floats(read_exact(dir, kHeadW, "head_w", k * d * 4), classes, dims);
    const Matrix b = unpack_floats(read_exact(dir, kHeadB, "head_b", k * 4), 1, classes);
    head.bias = b.row(0).transpose();
    dump.head = std::move(head);
  }

  const ValidationReport report = validate_dump(dump);
  if (const Violation* v = report.first_error()) fail(ErrorKind::kData, v->message);
  return dump;
}

EvalDump quantize_to_storage(EvalDump dump) {
  quantize(dump.logits);
  quantize(dump.features);
  if (dump.head) {
    quantize(dump.head->weights);
    quantize(dump.head->bias);
  }
  return dump;
}

}  // namespace owr
