#include "mef/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mef/error.hpp"

namespace mef {

const Grid& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Grid value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Grid value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Grid Tape::grad(Var v) const {
  check_owned(v);
  const auto& node = nodes_[v.id()];
  if (node.grad.empty()) return Grid(node.value.shape());
  return node.grad;
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id() >= nodes_.size()) {
    throw InvalidArgument("tape: value does not belong to this tape");
  }
}

Var Tape::record(Grid value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Grid value, std::span<const Var> inputs, BackwardFn fn) {
  if (backward_done_) throw std::logic_error("tape: cannot record after backward()");
  bool needs = false;
  for (const auto& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, Grid&& delta) {
  auto& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = std::move(delta);
    return;
  }
  accumulate_at(id, 0, delta);
}

void Tape::accumulate(std::size_t id, const Grid& delta) {
  auto& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = delta;
    return;
  }
  accumulate_at(id, 0, delta);
}

void Tape::accumulate_at(std::size_t id, std::size_t offset, const Grid& delta) {
  auto& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.empty()) node.grad = Grid(node.value.shape());
  double* dst = node.grad.vec().data() + offset;
  const auto& src = delta.vec();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (backward_done_) throw std::logic_error("tape: backward() already ran; record a new tape");
  if (nodes_[loss.id()].value.size() != 1) {
    throw InvalidArgument("backward: loss must be a scalar, got " +
                          shape_string(nodes_[loss.id()].value.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Grid(nodes_[loss.id()].value.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, i);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw InvalidArgument("tape: operands recorded on different tapes");
  return a.tape();
}

template <typename F>
Grid map(const Grid& a, F f) {
  Grid out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var conv2d(Var input, Var kernel, std::size_t pad, std::size_t stride) {
  Tape& t = same_tape(input, kernel);
  const std::size_t xi = input.id(), ki = kernel.id();
  return t.record(ops::conv2d(input.value(), kernel.value(), pad, stride), {input, kernel},
                  [xi, ki, pad, stride](Tape& tp, std::size_t self) {
                    const Grid& g = tp.grad_of(self);
                    if (tp.needs_grad(xi)) {
                      tp.accumulate(xi, ops::conv2d_input_grad(g, tp.value_of(ki), tp.value_of(xi).shape(),
                                                               pad, stride));
                    }
                    if (tp.needs_grad(ki)) {
                      tp.accumulate(ki, ops::conv2d_kernel_grad(g, tp.value_of(xi), tp.value_of(ki).shape(),
                                                                pad, stride));
                    }
                  });
}

Var conv2d(Var input, Var kernel, Var bias, std::size_t pad, std::size_t stride) {
  return add(conv2d(input, kernel, pad, stride), bias);
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ai = a.id(), bi = b.id();
  const bool broadcast = a.shape() != b.shape();
  return t.record(ops::add(a.value(), b.value()), {a, b}, [ai, bi, broadcast](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    if (tp.needs_grad(ai)) tp.accumulate(ai, g);
    if (tp.needs_grad(bi)) {
      tp.accumulate(bi, broadcast ? ops::reduce_to_channels(g, tp.value_of(bi).shape()) : g);
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw InvalidArgument("sub: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t ai = a.id(), bi = b.id();
  Grid out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return t.record(std::move(out), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    if (tp.needs_grad(ai)) tp.accumulate(ai, g);
    if (tp.needs_grad(bi)) tp.accumulate(bi, map(g, [](double v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ai = a.id(), bi = b.id();
  const bool broadcast = a.shape() != b.shape();
  return t.record(ops::mul(a.value(), b.value()), {a, b}, [ai, bi, broadcast](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    if (tp.needs_grad(ai)) tp.accumulate(ai, ops::mul(g, tp.value_of(bi)));
    if (tp.needs_grad(bi)) {
      Grid ga = ops::mul(g, tp.value_of(ai));
      tp.accumulate(bi, broadcast ? ops::reduce_to_channels(ga, tp.value_of(bi).shape()) : std::move(ga));
    }
  });
}

Var scale(Var a, double s) {
  const std::size_t ai = a.id();
  return a.tape().record(map(a.value(), [s](double v) { return s * v; }), {a},
                         [ai, s](Tape& tp, std::size_t self) {
                           tp.accumulate(ai, map(tp.grad_of(self), [s](double v) { return s * v; }));
                         });
}

Var sigmoid(Var a) {
  const std::size_t ai = a.id();
  return a.tape().record(ops::sigmoid(a.value()), {a}, [ai](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    const Grid& y = tp.value_of(self);
    Grid d(g.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * y[i] * (1.0 - y[i]);
    tp.accumulate(ai, std::move(d));
  });
}

Var tanh(Var a) {
  const std::size_t ai = a.id();
  return a.tape().record(ops::tanh(a.value()), {a}, [ai](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    const Grid& y = tp.value_of(self);
    Grid d(g.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * (1.0 - y[i] * y[i]);
    tp.accumulate(ai, std::move(d));
  });
}

Var leaky_relu(Var a, double alpha) {
  const std::size_t ai = a.id();
  return a.tape().record(ops::leaky_relu(a.value(), alpha), {a}, [ai, alpha](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    const Grid& x = tp.value_of(ai);
    Grid d(g.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = x[i] > 0 ? g[i] : alpha * g[i];
    tp.accumulate(ai, std::move(d));
  });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var pool_avg2(Var a) {
  const std::size_t ai = a.id();
  return a.tape().record(ops::pool_avg2(a.value()), {a}, [ai](Tape& tp, std::size_t self) {
    tp.accumulate(ai, ops::pool_avg2_grad(tp.grad_of(self)));
  });
}

Var upsample(Var a, std::size_t factor, ops::Upsample mode) {
  const std::size_t ai = a.id();
  return a.tape().record(ops::upsample(a.value(), factor, mode), {a},
                         [ai, factor, mode](Tape& tp, std::size_t self) {
                           tp.accumulate(ai, ops::upsample_grad(tp.grad_of(self), factor, mode));
                         });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: no inputs");
  Tape& t = parts.front().tape();
  std::vector<Grid> values;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    values.push_back(p.value());
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += p.value().channels();
  }
  return t.record(mef::concat_channels(values), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!tp.needs_grad(ids[i])) continue;
      tp.accumulate(ids[i], mef::slice_channels(g, offsets[i], tp.value_of(ids[i]).channels()));
    }
  });
}

Var slice_channels(Var a, std::size_t begin, std::size_t count) {
  const std::size_t ai = a.id();
  return a.tape().record(mef::slice_channels(a.value(), begin, count), {a},
                         [ai, begin](Tape& tp, std::size_t self) {
                           const Grid& g = tp.grad_of(self);
                           tp.accumulate_at(ai, begin * g.height() * g.width(), g);
                         });
}

Var global_avg_pool(Var a) {
  require_rank(a.value(), 3, "global_avg_pool");
  const std::size_t ai = a.id();
  const auto& x = a.value();
  const std::size_t plane = x.height() * x.width();
  Grid out = ops::reduce_to_channels(x, {x.channels(), 1, 1});
  for (auto& v : out.vec()) v /= static_cast<double>(plane);
  return a.tape().record(std::move(out), {a}, [ai, plane](Tape& tp, std::size_t self) {
    const Grid& g = tp.grad_of(self);
    Grid d(tp.value_of(ai).shape());
    for (std::size_t c = 0; c < g.size(); ++c) {
      std::fill_n(d.vec().begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                  g[c] / static_cast<double>(plane));
    }
    tp.accumulate(ai, std::move(d));
  });
}

Var sum(Var a) {
  const std::size_t ai = a.id();
  return a.tape().record(Grid::scalar(a.value().sum()), {a}, [ai](Tape& tp, std::size_t self) {
    tp.accumulate(ai, Grid(tp.value_of(ai).shape(), tp.grad_of(self)[0]));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(Var prediction, Var target) {
  Tape& t = same_tape(prediction, target);
  const auto& p = prediction.value();
  const auto& q = target.value();
  if (p.shape() != q.shape()) {
    throw InvalidArgument("mse: shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(q.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
  const double n = static_cast<double>(p.size());
  const std::size_t pi = prediction.id(), qi = target.id();
  return t.record(Grid::scalar(acc / n), {prediction, target}, [pi, qi, n](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    const Grid& a = tp.value_of(pi);
    const Grid& b = tp.value_of(qi);
    Grid d(a.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * g * (a[i] - b[i]) / n;
    if (tp.needs_grad(qi)) tp.accumulate(qi, map(d, [](double v) { return -v; }));
    tp.accumulate(pi, std::move(d));
  });
}

Var mean_abs(Var prediction, Var target) {
  Tape& t = same_tape(prediction, target);
  const auto& p = prediction.value();
  const auto& q = target.value();
  if (p.shape() != q.shape()) {
    throw InvalidArgument("mean_abs: shape mismatch " + shape_string(p.shape()) + " vs " +
                          shape_string(q.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  const double n = static_cast<double>(p.size());
  const std::size_t pi = prediction.id(), qi = target.id();
  return t.record(Grid::scalar(acc / n), {prediction, target}, [pi, qi, n](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    const Grid& a = tp.value_of(pi);
    const Grid& b = tp.value_of(qi);
    Grid d(a.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double diff = a[i] - b[i];
      d[i] = diff > 0 ? g / n : (diff < 0 ? -g / n : 0.0);
    }
    if (tp.needs_grad(qi)) tp.accumulate(qi, map(d, [](double v) { return -v; }));
    tp.accumulate(pi, std::move(d));
  });
}

Var bce(Var probability, double label) {
  const auto& p = probability.value();
  if (p.size() != 1) throw InvalidArgument("bce: expected one probability, got " + shape_string(p.shape()));
  const double raw = p[0];
  const double q = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
  const double loss = -(label * std::log(q) + (1.0 - label) * std::log(1.0 - q));
  const bool clamped = q != raw;
  const std::size_t pi = probability.id();
  return probability.tape().record(
      Grid::scalar(loss), {probability}, [pi, q, label, clamped](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        const double d = clamped ? 0.0 : g * (-label / q + (1.0 - label) / (1.0 - q));
        tp.accumulate(pi, Grid(tp.value_of(pi).shape(), d));
      });
}

}  // namespace mef
