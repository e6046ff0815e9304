#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "mef/grid.hpp"
#include "mef/ops.hpp"

namespace mef {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Grid& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-use record of differentiable operations. Values are appended in
/// execution order; backward() walks them once in reverse and accumulates
/// gradients into every value that depends on a parameter.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Grid value);
  Var parameter(Grid value);

  const Grid& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  // Zeros for values the loss does not reach.
  Grid grad(Var v) const;

  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-implementation interface.
  Var record(Grid value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Grid value, std::span<const Var> inputs, BackwardFn fn);
  const Grid& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Grid& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(std::size_t id, Grid&& delta);
  void accumulate(std::size_t id, const Grid& delta);
  // Adds `delta` into the gradient starting at flat element `offset`.
  void accumulate_at(std::size_t id, std::size_t offset, const Grid& delta);

 private:
  struct Node {
    Grid value;
    Grid grad;  // empty until something flows into it
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable operations. All inputs must live on the same tape.
Var conv2d(Var input, Var kernel, std::size_t pad, std::size_t stride = 1);
// conv2d plus a [C_out,1,1] bias.
Var conv2d(Var input, Var kernel, Var bias, std::size_t pad, std::size_t stride = 1);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var leaky_relu(Var a, double alpha);
Var relu(Var a);
Var pool_avg2(Var a);
Var upsample(Var a, std::size_t factor, ops::Upsample mode);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(Var a, std::size_t begin, std::size_t count);
Var global_avg_pool(Var a);  // [C,H,W] -> [C,1,1]
Var sum(Var a);              // -> [1]
Var mean(Var a);             // -> [1]
Var mse(Var prediction, Var target);     // mean squared difference -> [1]
Var mean_abs(Var prediction, Var target);  // mean absolute difference -> [1]
// Binary cross-entropy of a one-element probability against a 0/1 label,
// probability clamped to [1e-7, 1-1e-7].
Var bce(Var probability, double label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline constexpr double kProbClamp = 1e-7;

}  // namespace mef
