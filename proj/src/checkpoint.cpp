#include "mef/checkpoint.hpp"

#include <limits>

#include "mef/byte_io.hpp"
#include "mef/error.hpp"

namespace mef::checkpoint {

std::vector<char> encode(const ParamSet& params) {
  bytes::Writer w;
  w.raw("MEFW");
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, g] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(g.rank()));
    for (auto e : g.shape()) {
      if (e > std::numeric_limits<std::uint32_t>::max()) {
        throw InvalidArgument("checkpoint: extent of '" + name + "' exceeds 32 bits");
      }
      w.u32(static_cast<std::uint32_t>(e));
    }
    for (double v : g.vec()) w.f64(v);
  }
  return w.buffer();
}

ParamSet decode(const std::vector<char>& data) {
  bytes::Reader r(data);
  if (r.raw(4, "magic") != "MEFW") throw FormatError("checkpoint: bad magic", 0);
  const auto version_at = r.offset();
  const auto version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), version_at);
  }
  const auto count = r.u32("record count");
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32("name length");
    auto name = r.raw(name_len, "name");
    const auto rank_at = r.offset();
    const auto rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: invalid rank " + std::to_string(rank), rank_at);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto at = r.offset();
      shape.push_back(r.u32("extent"));
      n *= shape.back();
      if (n > r.remaining() / 8 + 1) throw FormatError("checkpoint: shape of '" + name + "' overflows payload", at);
    }
    r.require(n * 8, "values");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64("value");
    try {
      params.add(std::move(name), Grid(std::move(shape), std::move(values)));
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("checkpoint: ") + e.what(), r.offset());
    }
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes", r.offset());
  return params;
}

void save(const ParamSet& params, const std::filesystem::path& path) { bytes::write_file(path, encode(params)); }

ParamSet load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint '" + path.string() + "' not found");
  return decode(bytes::read_file(path));
}

}  // namespace mef::checkpoint
