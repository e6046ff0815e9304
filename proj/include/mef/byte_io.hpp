#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Little-endian encode/decode helpers shared by the FSEQ and MEFW formats.
namespace mef::bytes {

class Writer {
 public:
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f32(float v);
  void f64(double v);

  const std::vector<char>& buffer() const noexcept { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> buf_;
};

/// Bounds-checked cursor; every failure throws FormatError with the offset.
class Reader {
 public:
  explicit Reader(const std::vector<char>& data) : data_(data) {}

  std::string raw(std::size_t n, const char* what);
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(get(8, what)); }
  float f32(const char* what);
  double f64(const char* what);

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  // Throws unless `n` more bytes are available.
  void require(std::size_t n, const char* what) const;

 private:
  std::uint64_t get(int n, const char* what);
  const std::vector<char>& data_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& data);

}  // namespace mef::bytes
