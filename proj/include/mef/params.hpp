#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mef/grid.hpp"
#include "mef/tape.hpp"

namespace mef {

/// Ordered collection of named parameter grids.
class ParamSet {
 public:
  void add(std::string name, Grid value);

  bool contains(std::string_view name) const;
  Grid& operator[](std::string_view name);
  const Grid& operator[](std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t count() const;  // total scalar parameters

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  // Same names and shapes, all zero.
  ParamSet zeros_like() const;
  // this += s * other (names and shapes must match)
  void add_scaled(const ParamSet& other, double s);
  // FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Grid>> entries_;
};

/// ParamSet values placed on a tape, either as trainable leaves or as
/// constants (frozen network).
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamSet& params, bool trainable);
  // Binds already-recorded values, one per entry of `params` in order.
  BoundParams(const ParamSet& params, std::vector<Var> vars);

  Var operator[](std::string_view name) const;
  // Gradients of every bound parameter after tape.backward().
  ParamSet gradients() const;

 private:
  const ParamSet* params_;
  std::vector<Var> vars_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for a conv kernel
// [C_out,C_in,k,k].
Grid glorot_kernel(const Shape& shape, std::mt19937_64& rng);

}  // namespace mef
