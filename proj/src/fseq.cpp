#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mef/byte_io.hpp"
#include "mef/dataset.hpp"
#include "mef/error.hpp"

namespace mef {

namespace fseq {

std::vector<char> encode(const FrameSequence& seq) {
  if (!seq.contiguous() || seq.cadence() != 1) {
    throw InvalidArgument("fseq: only contiguous hourly sequences can be stored");
  }
  bytes::Writer w;
  w.raw("FSEQ");
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(seq.size()));
  w.u32(static_cast<std::uint32_t>(seq.empty() ? 0 : seq.height()));
  w.u32(static_cast<std::uint32_t>(seq.empty() ? 0 : seq.width()));
  w.i64(seq.start_hour());
  for (const auto& f : seq.frames()) {
    for (double v : f.vec()) w.f32(static_cast<float>(v));
  }
  return w.buffer();
}

FrameSequence decode(const std::vector<char>& data) {
  bytes::Reader r(data);
  if (r.raw(4, "magic") != "FSEQ") throw FormatError("fseq: bad magic", 0);
  const auto version_at = r.offset();
  const auto version = r.u16("version");
  if (version != kVersion) throw FormatError("fseq: unsupported version " + std::to_string(version), version_at);
  const auto count_at = r.offset();
  const std::uint64_t count = r.u32("frame count");
  const std::uint64_t height = r.u32("height");
  const std::uint64_t width = r.u32("width");
  const auto start = r.i64("start hour");
  const std::uint64_t plane = height * width;
  if (count > 0 && plane == 0) throw FormatError("fseq: zero frame extent", count_at);
  // u32 * u32 fits in u64; the frame count multiply may not.
  if (plane != 0 && count > (std::uint64_t{1} << 62) / (plane * 4)) {
    throw FormatError("fseq: declared shape overflows", count_at);
  }
  const std::uint64_t frame_bytes = plane * 4;
  std::vector<Grid> frames;
  frames.reserve(std::min<std::uint64_t>(count, r.remaining() / std::max<std::uint64_t>(frame_bytes, 1) + 1));
  for (std::uint64_t i = 0; i < count; ++i) {
    if (r.remaining() < frame_bytes) {
      throw FormatError("fseq: truncated payload, header declares " + std::to_string(count) +
                            " frames but frame " + std::to_string(i) + " is incomplete",
                        r.offset());
    }
    Grid f({1, height, width});
    for (auto& v : f.vec()) {
      const auto at = r.offset();
      v = static_cast<double>(r.f32("value"));
      if (!(v >= 0.0 && v <= kMaxGray)) throw FormatError("fseq: value outside [0,255]", at);
    }
    frames.push_back(std::move(f));
  }
  if (r.remaining() != 0) throw FormatError("fseq: trailing bytes after last frame", r.offset());
  return FrameSequence(std::move(frames), start);
}

}  // namespace fseq

void write_fseq(const FrameSequence& seq, const std::filesystem::path& path) {
  bytes::write_file(path, fseq::encode(seq));
}

FrameSequence read_fseq(const std::filesystem::path& path) { return fseq::decode(bytes::read_file(path)); }

namespace {

bool encode_gray8(FILE* fp, png_bytep* rows, png_uint_32 width, png_uint_32 height) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

void write_png(const Grid& image, const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 3 && image.channels() == 1) {
    h = image.height();
    w = image.width();
  } else if (image.rank() == 2) {
    h = image.extent(0);
    w = image.extent(1);
  } else {
    throw InvalidArgument("write_png: expected [1,H,W] or [H,W], got " + shape_string(image.shape()));
  }
  std::vector<png_byte> pixels(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    pixels[i] = static_cast<png_byte>(std::lround(std::clamp(image[i], 0.0, kMaxGray)));
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("write_png: cannot open '" + path.string() + "'");
  if (!encode_gray8(fp.get(), rows.data(), static_cast<png_uint_32>(w), static_cast<png_uint_32>(h))) {
    throw std::runtime_error("write_png: libpng error writing '" + path.string() + "'");
  }
}

}  // namespace mef
