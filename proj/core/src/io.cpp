#include "owr/io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "owr/error.hpp"

namespace owr {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "missing file: " + path.filename().string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::kIo, "cannot create directory: " + path.parent_path().string());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::string pack_float32(std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((bits >> s) & 0xFFu));
  }
  return out;
}

std::vector<double> unpack_float32(const std::string& bytes) {
  if (bytes.size() % 4 != 0) fail(ErrorKind::kData, "float32 payload length not a multiple of 4");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    }
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

}  // namespace owr
