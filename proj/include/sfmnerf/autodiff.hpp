#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "sfmnerf/types.hpp"

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// every primitive in execution order, so parents always precede children and
// a single reverse sweep yields exact gradients.
namespace sfmnerf::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the adjoint of the node's output and pushes contributions into
  // the parents through accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  // Records a derived node. `backward` is dropped when no parent needs a
  // gradient, which turns the node into a constant.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const { return requires_grad(v.id()); }

  void accumulate(int id, const Matrix& delta);
  void accumulate(int id, Matrix&& delta);

  // Reverse sweep from a 1x1 node. Throws ShapeMismatchError otherwise.
  void backward(const Var& loss);
  // Reverse sweep seeded with explicit output adjoints.
  void backward(std::span<const Var> outputs, std::span<const Matrix> seeds);

  // Adjoint of v after backward(); zeros when v was unreachable.
  Matrix grad(const Var& v) const;
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool requires_grad = false;
    bool has_adjoint = false;
    BackwardFn backward;
  };

  void sweep();

  std::deque<Node> nodes_;
};

// Elementwise arithmetic. Operands of different shapes broadcast when one of
// them is 1x1, a single row or a single column matching the other.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator-(const Var& a) { return neg(a); }

Var matmul(const Var& a, const Var& b);
// x * w + bias, with bias a single row.
Var affine(const Var& x, const Var& w, const Var& bias);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var clamp_min(const Var& a, double lo);

Var sum(const Var& a);
Var mean(const Var& a);
// Per-row sums, rows x 1.
Var row_sum(const Var& a);

Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::span<const Eigen::Index> rows);
Var element(const Var& a, Eigen::Index row, Eigen::Index col);
// Row-major reinterpretation of the same entries.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

// Along each row: out(r, j) = sum_{k < j} a(r, k).
Var cumsum_exclusive(const Var& a);
// weights: R x S, values: (R*S) x C -> R x C with
// out(r, :) = sum_s weights(r, s) * values(r*S + s, :).
Var weighted_sample_sum(const Var& weights, const Var& values);

// Grid-structured ops. `a` holds one row per grid cell in row-major order
// over a height x width grid; columns are independent channels.
// Mean over every full 3x3 window: ((height-2)*(width-2)) x C.
Var box_filter3(const Var& a, int height, int width);
// Forward differences along x: (height*(width-1)) x C, or along y:
// ((height-1)*width) x C.
Var grid_diff_x(const Var& a, int height, int width);
Var grid_diff_y(const Var& a, int height, int width);

}  // namespace sfmnerf::ad
