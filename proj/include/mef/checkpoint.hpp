#pragma once

#include <filesystem>
#include <vector>

#include "mef/params.hpp"

// MEFW checkpoint container:
//   "MEFW" | version u16 (=1) | record count u32 |
//   per record: name length u32, UTF-8 name, rank u32, extents u32 x rank,
//               values f64 x prod(extents)
// All integers and reals little-endian.
namespace mef::checkpoint {

inline constexpr std::uint16_t kVersion = 1;

std::vector<char> encode(const ParamSet& params);
ParamSet decode(const std::vector<char>& bytes);

void save(const ParamSet& params, const std::filesystem::path& path);
ParamSet load(const std::filesystem::path& path);

}  // namespace mef::checkpoint
