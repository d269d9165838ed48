#include "sfmnerf/autodiff.hpp"

#include <cmath>
#include <string>

#include "sfmnerf/error.hpp"

namespace sfmnerf::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& tape_of(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ShapeMismatchError("operands belong to different tapes");
  }
  return *a.tape();
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  return -1;
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) {
    return m;
  }
  return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  Matrix r = g;
  if (rows == 1 && r.rows() != 1) {
    r = r.colwise().sum().eval();
  }
  if (cols == 1 && r.cols() != 1) {
    r = r.rowwise().sum().eval();
  }
  return r;
}

template <typename Fwd, typename GradA, typename GradB>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, GradA grad_a, GradB grad_b) {
  Tape& tape = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index rows = broadcast_dim(av.rows(), bv.rows());
  const Eigen::Index cols = broadcast_dim(av.cols(), bv.cols());
  if (rows < 0 || cols < 0) {
    throw ShapeMismatchError(std::string(name) + ": incompatible shapes " + shape_str(av) +
                             " and " + shape_str(bv));
  }
  const bool same = av.rows() == bv.rows() && av.cols() == bv.cols();
  Matrix out = same ? fwd(av, bv) : fwd(expand(av, rows, cols), expand(bv, rows, cols));
  const int ia = a.id();
  const int ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(ib);
    const bool need_a = t.requires_grad(ia);
    const bool need_b = t.requires_grad(ib);
    if (same) {
      if (need_a) t.accumulate(ia, grad_a(g, x, y));
      if (need_b) t.accumulate(ib, grad_b(g, x, y));
      return;
    }
    const Matrix xe = expand(x, rows, cols);
    const Matrix ye = expand(y, rows, cols);
    if (need_a) t.accumulate(ia, reduce_to(grad_a(g, xe, ye), x.rows(), x.cols()));
    if (need_b) t.accumulate(ib, reduce_to(grad_b(g, xe, ye), y.rows(), y.cols()));
  });
}

template <typename Fwd, typename Grad>
Var unary(const Var& a, Fwd fwd, Grad grad) {
  Tape& tape = *a.tape();
  const int ia = a.id();
  Matrix out = fwd(a.value());
  const int io = static_cast<int>(tape.size());
  return tape.record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    t.accumulate(ia, grad(g, t.value(ia), t.value(io)));
  });
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ShapeMismatchError("scalar(): node is " + shape_str(v));
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) {
      throw ShapeMismatchError("operand recorded on another tape");
    }
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(
      Node{std::move(value), Matrix(), needs, false, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) {
    return;
  }
  if (n.has_adjoint) {
    n.adjoint += delta;
  } else {
    n.adjoint = delta;
    n.has_adjoint = true;
  }
}

void Tape::accumulate(int id, Matrix&& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) {
    return;
  }
  if (n.has_adjoint) {
    n.adjoint += delta;
  } else {
    n.adjoint = std::move(delta);
    n.has_adjoint = true;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeMismatchError("backward: loss must be 1x1, got " + shape_str(loss.value()));
  }
  Matrix seed = Matrix::Ones(1, 1);
  backward(std::span<const Var>(&loss, 1), std::span<const Matrix>(&seed, 1));
}

void Tape::backward(std::span<const Var> outputs, std::span<const Matrix> seeds) {
  if (outputs.size() != seeds.size()) {
    throw ShapeMismatchError("backward: outputs and seeds differ in count");
  }
  zero_grad();
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const Matrix& v = outputs[i].value();
    if (seeds[i].rows() != v.rows() || seeds[i].cols() != v.cols()) {
      throw ShapeMismatchError("backward: seed shape mismatch");
    }
    accumulate(outputs[i].id(), seeds[i]);
  }
  sweep();
}

void Tape::sweep() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_adjoint && n.backward) {
      n.backward(*this, n.adjoint);
    }
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_adjoint) {
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.adjoint;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    n.has_adjoint = false;
    n.adjoint.resize(0, 0);
  }
}

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul",
      [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); },
      [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.cwiseProduct(x); });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div",
      [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix {
        return g.cwiseQuotient(y);
      },
      [](const Matrix& g, const Matrix& x, const Matrix& y) -> Matrix {
        return -(g.cwiseProduct(x)).cwiseQuotient(y.cwiseProduct(y));
      });
}

Var scale(const Var& a, double s) {
  return unary(
      a, [s](const Matrix& x) -> Matrix { return x * s; },
      [s](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g * s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      a, [s](const Matrix& x) -> Matrix { return x.array() + s; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeMismatchError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id();
  const int ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, Matrix(g * t.value(ib).transpose()));
    if (t.requires_grad(ib)) t.accumulate(ib, Matrix(t.value(ia).transpose() * g));
  });
}

Var affine(const Var& x, const Var& w, const Var& bias) {
  Tape& tape = tape_of(x, w);
  tape_of(x, bias);
  if (x.cols() != w.rows() || bias.rows() != 1 || bias.cols() != w.cols()) {
    throw ShapeMismatchError("affine: x " + shape_str(x.value()) + ", w " +
                             shape_str(w.value()) + ", bias " + shape_str(bias.value()));
  }
  Matrix out = x.value() * w.value();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id();
  const int iw = w.id();
  const int ib = bias.id();
  return tape.record(std::move(out), {x, w, bias}, [=](Tape& t, const Matrix& g) {
    if (t.requires_grad(ix)) t.accumulate(ix, Matrix(g * t.value(iw).transpose()));
    if (t.requires_grad(iw)) t.accumulate(iw, Matrix(t.value(ix).transpose() * g));
    if (t.requires_grad(ib)) t.accumulate(ib, Matrix(g.colwise().sum()));
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
      [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
        return (x.array() > 0.0).select(g, 0.0);
      });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](const Matrix& x) -> Matrix {
        return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix {
        return g.array() * y.array() * (1.0 - y.array());
      });
}

Var softplus(const Var& a) {
  return unary(
      a,
      [](const Matrix& x) -> Matrix {
        return x.unaryExpr(
            [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
      },
      [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
        return g.array() * x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).array();
      });
}

Var exp(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.unaryExpr([](double v) { return std::exp(v); }); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); });
}

Var abs(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.cwiseAbs(); },
      [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
        return g.array() * x.array().sign();
      });
}

Var square(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().square(); },
      [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
        return 2.0 * g.array() * x.array();
      });
}

Var clamp_min(const Var& a, double lo) {
  return unary(
      a, [lo](const Matrix& x) -> Matrix { return x.cwiseMax(lo); },
      [lo](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
        return (x.array() > lo).select(g, 0.0);
      });
}

Var sum(const Var& a) {
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) {
    throw ShapeMismatchError("mean of an empty node");
  }
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  const Eigen::Index cols = a.cols();
  Matrix out = a.value().rowwise().sum();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix(g.replicate(1, cols)));
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  if (a.rows() != b.rows()) {
    throw ShapeMismatchError("concat_cols: row counts differ");
  }
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  out << a.value(), b.value();
  const int ia = a.id();
  const int ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, Matrix(g.leftCols(ca)));
    if (t.requires_grad(ib)) t.accumulate(ib, Matrix(g.rightCols(cb)));
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeMismatchError("slice_cols out of range");
  }
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  Matrix out = a.value().middleCols(start, count);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleCols(start, count) = g;
    t.accumulate(ia, std::move(full));
  });
}

Var gather_rows(const Var& a, std::span<const Eigen::Index> rows) {
  const Matrix& av = a.value();
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), av.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= av.rows()) {
      throw ShapeMismatchError("gather_rows: index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = av.row(idx[i]);
  }
  const Eigen::Index src_rows = av.rows();
  const Eigen::Index cols = av.cols();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(src_rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    t.accumulate(ia, std::move(full));
  });
}

Var element(const Var& a, Eigen::Index row, Eigen::Index col) {
  if (row < 0 || col < 0 || row >= a.rows() || col >= a.cols()) {
    throw ShapeMismatchError("element: index out of range");
  }
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value()(row, col);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full(row, col) = g(0, 0);
    t.accumulate(ia, std::move(full));
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeMismatchError("reshape: size mismatch");
  }
  const Eigen::Index src_rows = a.rows();
  const Eigen::Index src_cols = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix(Eigen::Map<const Matrix>(g.data(), src_rows, src_cols)));
  });
}

Var cumsum_exclusive(const Var& a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      out(r, c) = acc;
      acc += av(r, c);
    }
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    // d out(r, j) / d a(r, k) = 1 for k < j, so grad(r, k) = sum_{j > k} g(r, j).
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double acc = 0.0;
      for (Eigen::Index c = g.cols(); c-- > 0;) {
        ga(r, c) = acc;
        acc += g(r, c);
      }
    }
    t.accumulate(ia, std::move(ga));
  });
}

Var weighted_sample_sum(const Var& weights, const Var& values) {
  Tape& tape = tape_of(weights, values);
  const Matrix& w = weights.value();
  const Matrix& v = values.value();
  const Eigen::Index rays = w.rows();
  const Eigen::Index samples = w.cols();
  if (v.rows() != rays * samples) {
    throw ShapeMismatchError("weighted_sample_sum: values need rays*samples rows");
  }
  const Eigen::Index channels = v.cols();
  Matrix out(rays, channels);
  for (Eigen::Index r = 0; r < rays; ++r) {
    out.row(r) = w.row(r) * v.middleRows(r * samples, samples);
  }
  const int iw = weights.id();
  const int iv = values.id();
  return tape.record(std::move(out), {weights, values}, [=](Tape& t, const Matrix& g) {
    const Matrix& wv = t.value(iw);
    const Matrix& vv = t.value(iv);
    if (t.requires_grad(iw)) {
      Matrix gw(rays, samples);
      for (Eigen::Index r = 0; r < rays; ++r) {
        gw.row(r) = g.row(r) * vv.middleRows(r * samples, samples).transpose();
      }
      t.accumulate(iw, std::move(gw));
    }
    if (t.requires_grad(iv)) {
      Matrix gv(rays * samples, channels);
      for (Eigen::Index r = 0; r < rays; ++r) {
        gv.middleRows(r * samples, samples) = wv.row(r).transpose() * g.row(r);
      }
      t.accumulate(iv, std::move(gv));
    }
  });
}

namespace {

void check_grid(const Var& a, int height, int width, int min_side, const char* name) {
  if (height < min_side || width < min_side ||
      a.rows() != static_cast<Eigen::Index>(height) * width) {
    throw ShapeMismatchError(std::string(name) + ": node does not hold a " +
                             std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
}

}  // namespace

Var box_filter3(const Var& a, int height, int width) {
  check_grid(a, height, width, 3, "box_filter3");
  const int oh = height - 2;
  const int ow = width - 2;
  const Matrix& av = a.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(oh) * ow, av.cols());
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      auto row = out.row(y * ow + x);
      for (int dy = 0; dy < 3; ++dy) {
        for (int dx = 0; dx < 3; ++dx) {
          row += av.row((y + dy) * width + x + dx);
        }
      }
      row /= 9.0;
    }
  }
  const Eigen::Index cols = av.cols();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(static_cast<Eigen::Index>(height) * width, cols);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const auto gr = g.row(y * ow + x) / 9.0;
        for (int dy = 0; dy < 3; ++dy) {
          for (int dx = 0; dx < 3; ++dx) {
            ga.row((y + dy) * width + x + dx) += gr;
          }
        }
      }
    }
    t.accumulate(ia, std::move(ga));
  });
}

Var grid_diff_x(const Var& a, int height, int width) {
  check_grid(a, height, width, 1, "grid_diff_x");
  const Matrix& av = a.value();
  const int ow = width - 1;
  Matrix out(static_cast<Eigen::Index>(height) * ow, av.cols());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < ow; ++x) {
      out.row(y * ow + x) = av.row(y * width + x + 1) - av.row(y * width + x);
    }
  }
  const Eigen::Index cols = av.cols();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(static_cast<Eigen::Index>(height) * width, cols);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < ow; ++x) {
        ga.row(y * width + x + 1) += g.row(y * ow + x);
        ga.row(y * width + x) -= g.row(y * ow + x);
      }
    }
    t.accumulate(ia, std::move(ga));
  });
}

Var grid_diff_y(const Var& a, int height, int width) {
  check_grid(a, height, width, 1, "grid_diff_y");
  const Matrix& av = a.value();
  const int oh = height - 1;
  Matrix out(static_cast<Eigen::Index>(oh) * width, av.cols());
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < width; ++x) {
      out.row(y * width + x) = av.row((y + 1) * width + x) - av.row(y * width + x);
    }
  }
  const Eigen::Index cols = av.cols();
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(static_cast<Eigen::Index>(height) * width, cols);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < width; ++x) {
        ga.row((y + 1) * width + x) += g.row(y * width + x);
        ga.row(y * width + x) -= g.row(y * width + x);
      }
    }
    t.accumulate(ia, std::move(ga));
  });
}

}  // namespace sfmnerf::ad
