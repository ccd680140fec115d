#include "wmage/io.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>
#include <thread>

#include "wmage/error.hpp"

namespace wmage {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadHeader: return "BadHeader";
    case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
    case Errc::TruncatedData: return "TruncatedData";
    case Errc::UnsupportedRank: return "UnsupportedRank";
    case Errc::BigEndian: return "BigEndian";
    case Errc::NonIntegerLabel: return "NonIntegerLabel";
    case Errc::NegativeLabel: return "NegativeLabel";
    case Errc::InvalidDims: return "InvalidDims";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::InvalidRoiTable: return "InvalidRoiTable";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyOutput: return "EmptyOutput";
    case Errc::DegenerateBatch: return "DegenerateBatch";
    case Errc::NoTape: return "NoTape";
    case Errc::MissingGrad: return "MissingGrad";
    case Errc::BadCheckpoint: return "BadCheckpoint";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::KindMismatch: return "KindMismatch";
    case Errc::TooFewParticipants: return "TooFewParticipants";
    case Errc::UnknownRole: return "UnknownRole";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::DataMissing: return "DataMissing";
    case Errc::EmptySet: return "EmptySet";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::BadManifest: return "BadManifest";
    case Errc::BadConfig: return "BadConfig";
    case Errc::AgeOutOfRange: return "AgeOutOfRange";
    case Errc::NoSignal: return "NoSignal";
    case Errc::InvalidPhantomSpec: return "InvalidPhantomSpec";
    case Errc::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp-" + hex64((std::uint64_t(rd()) << 32) | rd()).substr(8);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error(Errc::IoFailure, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(Errc::IoFailure, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

void atomic_write(const std::filesystem::path& path, std::string_view text) {
  atomic_write(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) out[i] = digits[value & 0xf];
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    fields.emplace_back(trim(field));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::vector<std::string> nonblank_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? text.npos : nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

unsigned worker_threads() {
  if (const char* env = std::getenv("WMAGE_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return unsigned(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace wmage
