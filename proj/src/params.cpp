#include "mef/params.hpp"

#include <cmath>
#include <cstring>

#include "mef/error.hpp"

namespace mef {

void ParamSet::add(std::string name, Grid value) {
  if (contains(name)) throw InvalidArgument("params: duplicate name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& [n, g] : entries_) {
    if (n == name) return true;
  }
  return false;
}

Grid& ParamSet::operator[](std::string_view name) {
  for (auto& [n, g] : entries_) {
    if (n == name) return g;
  }
  throw InvalidArgument("params: no parameter named '" + std::string(name) + "'");
}

const Grid& ParamSet::operator[](std::string_view name) const {
  return const_cast<ParamSet&>(*this)[name];
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& [name, g] : entries_) n += g.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [n, g] : entries_) out.add(n, Grid(g.shape()));
  return out;
}

void ParamSet::add_scaled(const ParamSet& other, double s) {
  if (other.size() != size()) throw InvalidArgument("params: add_scaled size mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].second;
    const auto& src = other.entries_[i].second;
    if (entries_[i].first != other.entries_[i].first) {
      throw InvalidArgument("params: add_scaled name mismatch '" + entries_[i].first + "'");
    }
    require_same_shape(dst, src, "params: add_scaled");
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
  }
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [n, g] : entries_) {
    mix(n.data(), n.size());
    for (auto e : g.shape()) mix(&e, sizeof e);
    mix(g.vec().data(), g.size() * sizeof(double));
  }
  return h;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params, bool trainable) : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& [n, g] : params) vars_.push_back(trainable ? tape.parameter(g) : tape.constant(g));
}

BoundParams::BoundParams(const ParamSet& params, std::vector<Var> vars) : params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size()) {
    throw InvalidArgument("params: binding " + std::to_string(vars_.size()) + " values to " +
                          std::to_string(params.size()) + " parameters");
  }
  std::size_t i = 0;
  for (const auto& [n, g] : params) {
    if (vars_[i++].shape() != g.shape()) throw InvalidArgument("params: bound value shape differs for '" + n + "'");
  }
}

Var BoundParams::operator[](std::string_view name) const {
  std::size_t i = 0;
  for (const auto& [n, g] : *params_) {
    if (n == name) return vars_[i];
    ++i;
  }
  throw InvalidArgument("params: no bound parameter named '" + std::string(name) + "'");
}

ParamSet BoundParams::gradients() const {
  ParamSet out;
  std::size_t i = 0;
  for (const auto& [n, g] : *params_) {
    const Var v = vars_[i++];
    out.add(n, v.tape().grad(v));
  }
  return out;
}

Grid glorot_kernel(const Shape& shape, std::mt19937_64& rng) {
  if (shape.size() != 4) throw InvalidArgument("glorot_kernel: expected [C_out,C_in,k,k]");
  const double receptive = static_cast<double>(shape[2] * shape[3]);
  const double fan_in = static_cast<double>(shape[1]) * receptive;
  const double fan_out = static_cast<double>(shape[0]) * receptive;
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Grid g(shape);
  for (auto& v : g.vec()) v = dist(rng);
  return g;
}

}  // namespace mef
