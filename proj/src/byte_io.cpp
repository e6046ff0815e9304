#include "mef/byte_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "mef/error.hpp"

namespace mef::bytes {

void Writer::f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }

void Writer::f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

void Reader::require(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(std::string("truncated payload reading ") + what + ": need " + std::to_string(n) +
                          " bytes, " + std::to_string(remaining()) + " left",
                      pos_);
  }
}

std::string Reader::raw(std::size_t n, const char* what) {
  require(n, what);
  std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

std::uint64_t Reader::get(int n, const char* what) {
  require(static_cast<std::size_t>(n), what);
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += static_cast<std::size_t>(n);
  return v;
}

float Reader::f32(const char* what) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what))); }

double Reader::f64(const char* what) { return std::bit_cast<double>(get(8, what)); }

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

}  // namespace mef::bytes
