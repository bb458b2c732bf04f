// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape owns every value produced during one forward pass (define-by-run).
// Var is a lightweight handle (tape pointer + node id) into that arena.
// Every rank-0/1/2 tensor the model needs is carried as a rows x cols matrix:
// scalars are 1x1, per-frame sequences are K x 1, embeddings are K x E.
//
// Reductions (sum, mean, norms, dot products, cross-entropy) accumulate in
// double regardless of Scalar.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace avasd::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  using Mat = Matrix<Scalar>;

  Var() = default;

  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Mat& value() const { return tape_->value(id_); }
  const Mat& grad() const { return tape_->grad(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string());
    return value()(0, 0);
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[' << rows() << 'x' << cols() << ']';
    return os.str();
  }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, const Mat& out_grad)>;

  Tape() = default;
  // Vars hold raw pointers into the tape.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> variable(Mat value) { return push(std::move(value), true, {}, nullptr); }
  Var<Scalar> constant(Mat value) { return push(std::move(value), false, {}, nullptr); }

  // Records the output of an elementary op. The node requires gradients iff
  // any input does; otherwise the backward rule is dropped.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, {}, needs ? std::move(fn) : nullptr);
  }

  // Populates grad() of every gradient-requiring node with d(loss)/d(node).
  void backward(const Var<Scalar>& loss) {
    check_owned(loss);
    if (loss.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + loss.shape_string());
    }
    if (backward_done_) {
      throw TapeError("backward called twice without reset_gradients()");
    }
    backward_done_ = true;
    for (auto& node : nodes_) {
      if (node.requires_grad) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
    }
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad(0, 0) = Scalar(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& node = nodes_[id];
      if (node.backward && !node.grad.isZero(0)) node.backward(*this, node.grad);
    }
  }

  void reset_gradients() {
    for (auto& node : nodes_) node.grad.resize(0, 0);
    backward_done_ = false;
  }

  bool backward_done() const { return backward_done_; }

  const Mat& value(int id) const { return nodes_.at(id).value; }

  const Mat& grad(int id) const {
    const Node& node = nodes_.at(id);
    if (!node.requires_grad) throw TapeError("tensor does not require gradients");
    if (!backward_done_) throw TapeError("gradients read before backward()");
    return node.grad;
  }

  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[id];
    if (node.requires_grad) node.grad += g;
  }

  std::size_t size() const { return nodes_.size(); }

  void check_owned(const Var<Scalar>& v) const {
    if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
      throw TapeError("tensor does not belong to this tape");
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Mat grad, BackwardFn fn) {
    if (backward_done_) throw TapeError("cannot record onto a tape after backward()");
    nodes_.push_back(Node{std::move(value), std::move(grad), requires_grad, std::move(fn)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& common_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (!a.valid() || a.tape() != b.tape()) throw TapeError("operands live on different tapes");
  return *a.tape();
}

inline std::string dims(Index r, Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <typename Scalar>
void require_row_vector(const char* op, const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(std::string(op) + ": expected row vector " + dims(1, a.cols()) + ", got " +
                     row.shape_string());
  }
}

template <typename Derived>
double sum_f64(const Eigen::MatrixBase<Derived>& m) {
  return m.template cast<double>().sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::common_tape(a, b);
  detail::require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return tape.record(a.value() + b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::common_tape(a, b);
  detail::require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return tape.record(a.value() - b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

// Hadamard product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::common_tape(a, b);
  detail::require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  return tape.record(a.value().cwiseProduct(b.value()), {a, b},
                     [ia, ib](Tape<Scalar>& t, const auto& g) {
                       t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                       t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                     });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, g * s);
  });
}

// a + row, with the 1 x C row broadcast over every row of a.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  auto& tape = detail::common_tape(a, row);
  detail::require_row_vector("add_row", a, row);
  const int ia = a.id(), ir = row.id();
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return tape.record(std::move(out), {a, row}, [ia, ir](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, g.template cast<double>().colwise().sum().template cast<Scalar>());
  });
}

// a * row elementwise, with the 1 x C row broadcast over every row of a.
template <typename Scalar>
Var<Scalar> mul_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  auto& tape = detail::common_tape(a, row);
  detail::require_row_vector("mul_row", a, row);
  const int ia = a.id(), ir = row.id();
  Matrix<Scalar> out = a.value().array().rowwise() * row.value().row(0).array();
  return tape.record(std::move(out), {a, row}, [ia, ir](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> ga = g.array().rowwise() * t.value(ir).row(0).array();
    t.accumulate(ia, ga);
    t.accumulate(ir, g.cwiseProduct(t.value(ia))
                         .template cast<double>()
                         .colwise()
                         .sum()
                         .template cast<Scalar>());
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  return sub(a, b);
}

template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) {
  return scale(a, s);
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::common_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + a.shape_string() + " * " +
                     b.shape_string());
  }
  const int ia = a.id(), ib = b.id();
  return tape.record(a.value() * b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const auto& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  const int ia = a.id();
  Matrix<Scalar> out = a.value().transpose();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, g.transpose());
  });
}

// [a | b] along columns.
template <typename Scalar>
Var<Scalar> concat_cols(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::common_tape(a, b);
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ " + a.shape_string() + " | " +
                     b.shape_string());
  }
  Matrix<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const int ia = a.id(), ib = b.id();
  const Index ca = a.cols(), cb = b.cols();
  return tape.record(std::move(out), {a, b}, [ia, ib, ca, cb](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, g.leftCols(ca));
    t.accumulate(ib, g.rightCols(cb));
  });
}

// Stacks the parts vertically.
template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape<Scalar>* tape = parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.tape() != tape) throw TapeError("operands live on different tapes");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column counts differ " + parts.front().shape_string() +
                       " vs " + p.shape_string());
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    spans.emplace_back(p.id(), offset);
    offset += p.rows();
  }
  return tape->record(std::move(out), parts, [spans](Tape<Scalar>& t, const auto& g) {
    for (const auto& [id, off] : spans) t.accumulate(id, g.middleRows(off, t.value(id).rows()));
  });
}

// Gathers the listed rows (in order) into a new tensor.
template <typename Scalar>
Var<Scalar> take_rows(const Var<Scalar>& a, std::vector<Index> indices) {
  if (indices.empty()) throw ShapeError("take_rows: empty index list");
  Matrix<Scalar> out(static_cast<Index>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= a.rows()) {
      throw ShapeError("take_rows: row " + std::to_string(indices[i]) + " out of range for " +
                       a.shape_string());
    }
    out.row(static_cast<Index>(i)) = a.value().row(indices[i]);
  }
  const int ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(std::move(out), {a},
                          [ia, rows, cols, idx = std::move(indices)](Tape<Scalar>& t,
                                                                     const auto& g) {
                            Matrix<Scalar> ga = Matrix<Scalar>::Zero(rows, cols);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              ga.row(idx[i]) += g.row(static_cast<Index>(i));
                            }
                            t.accumulate(ia, ga);
                          });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const int ia = a.id();
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape()->record(std::move(out), {a}, [ia](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> mask = (t.value(ia).array() > Scalar(0)).template cast<Scalar>();
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return sigmoid_scalar(x); });
  const int ia = a.id();
  Tape<Scalar>* tape = a.tape();
  const int io = static_cast<int>(tape->size());
  return tape->record(std::move(out), {a}, [ia, io](Tape<Scalar>& t, const auto& g) {
    const auto& s = t.value(io).array();
    t.accumulate(ia, (g.array() * s * (Scalar(1) - s)).matrix());
  });
}

// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  Matrix<Scalar> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const Scalar m = a.value().row(r).maxCoeff();
    auto e = (a.value().row(r).array() - m).exp();
    out.row(r) = (e / static_cast<Scalar>(e.template cast<double>().sum())).matrix();
  }
  const int ia = a.id();
  Tape<Scalar>* tape = a.tape();
  const int io = static_cast<int>(tape->size());
  return tape->record(std::move(out), {a}, [ia, io](Tape<Scalar>& t, const auto& g) {
    const auto& y = t.value(io);
    Matrix<Scalar> ga(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).cwiseProduct(y.row(r)).template cast<double>().sum();
      ga.row(r) = y.row(r).array() * (g.row(r).array() - static_cast<Scalar>(dot));
    }
    t.accumulate(ia, ga);
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(detail::sum_f64(a.value()));
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {a}, [ia, r, c](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, Matrix<Scalar>::Constant(r, c, g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  const double n = static_cast<double>(a.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(detail::sum_f64(a.value()) / n);
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {a}, [ia, r, c, n](Tape<Scalar>& t, const auto& g) {
    t.accumulate(ia, Matrix<Scalar>::Constant(r, c, static_cast<Scalar>(g(0, 0) / n)));
  });
}

// Column means: R x C -> 1 x C.
template <typename Scalar>
Var<Scalar> mean_rows(const Var<Scalar>& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows of empty tensor");
  const double n = static_cast<double>(a.rows());
  Matrix<Scalar> out =
      (a.value().template cast<double>().colwise().sum() / n).template cast<Scalar>();
  const int ia = a.id();
  const Index r = a.rows();
  return a.tape()->record(std::move(out), {a}, [ia, r, n](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> row = (g.template cast<double>() / n).template cast<Scalar>();
    t.accumulate(ia, row.replicate(r, 1));
  });
}

// Frobenius norm -> 1 x 1. The gradient at the zero tensor is taken as zero.
template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& a) {
  const double n = std::sqrt(a.value().template cast<double>().squaredNorm());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(n);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, n](Tape<Scalar>& t, const auto& g) {
    if (n == 0.0) return;
    t.accumulate(ia, t.value(ia) * static_cast<Scalar>(g(0, 0) / n));
  });
}

// Per-row l2 norms: R x C -> R x 1. Zero rows get zero gradient.
template <typename Scalar>
Var<Scalar> row_norms(const Var<Scalar>& a) {
  Matrix<Scalar> out(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    out(r, 0) = static_cast<Scalar>(std::sqrt(a.value().row(r).template cast<double>().squaredNorm()));
  }
  const int ia = a.id();
  Tape<Scalar>* tape = a.tape();
  const int io = static_cast<int>(tape->size());
  return tape->record(std::move(out), {a}, [ia, io](Tape<Scalar>& t, const auto& g) {
    const auto& x = t.value(ia);
    const auto& n = t.value(io);
    Matrix<Scalar> ga = Matrix<Scalar>::Zero(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      if (n(r, 0) > Scalar(0)) ga.row(r) = x.row(r) * (g(r, 0) / n(r, 0));
    }
    t.accumulate(ia, ga);
  });
}

// Per-row normalization to zero mean and unit variance (no affine part):
// y = (x - mean) / sqrt(var + eps), variance taken over columns.
template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& a, double eps = 1e-5) {
  const Index cols = a.cols();
  if (cols == 0) throw ShapeError("layer_norm_rows: no columns");
  Matrix<Scalar> out(a.rows(), cols);
  std::vector<double> inv_std(static_cast<std::size_t>(a.rows()));
  for (Index r = 0; r < a.rows(); ++r) {
    const Eigen::RowVectorXd x = a.value().row(r).template cast<double>();
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    inv_std[static_cast<std::size_t>(r)] = 1.0 / std::sqrt(var + eps);
    out.row(r) = ((x.array() - mean) * inv_std[static_cast<std::size_t>(r)])
                     .matrix()
                     .template cast<Scalar>();
  }
  const int ia = a.id();
  Tape<Scalar>* tape = a.tape();
  const int io = static_cast<int>(tape->size());
  return tape->record(std::move(out), {a},
                      [ia, io, inv_std = std::move(inv_std)](Tape<Scalar>& t, const auto& g) {
    const auto& y = t.value(io);
    Matrix<Scalar> ga(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const Eigen::RowVectorXd gr = g.row(r).template cast<double>();
      const Eigen::RowVectorXd yr = y.row(r).template cast<double>();
      const double g_mean = gr.mean();
      const double gy_mean = gr.dot(yr) / static_cast<double>(yr.size());
      ga.row(r) = ((gr.array() - g_mean - yr.array() * gy_mean) *
                   inv_std[static_cast<std::size_t>(r)])
                      .matrix()
                      .template cast<Scalar>();
    }
    t.accumulate(ia, ga);
  });
}

inline constexpr double kCosineGuard = 1e-8;

// Row-wise cosine similarity: R x C, (R x C or 1 x C broadcast) -> R x 1.
// The denominator is max(|a||b|, 1e-8); rows that hit the guard (a zero
// vector on either side) report 0 and pass no gradient.
template <typename Scalar>
Var<Scalar> cosine_rows(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::common_tape(a, b);
  const bool broadcast = b.rows() == 1 && a.rows() != 1;
  if (a.cols() != b.cols() || (!broadcast && a.rows() != b.rows())) {
    throw ShapeError("cosine_rows: shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  const Index rows = a.rows();
  Matrix<Scalar> out(rows, 1);
  for (Index r = 0; r < rows; ++r) {
    const auto ar = a.value().row(r).template cast<double>();
    const auto br = b.value().row(broadcast ? 0 : r).template cast<double>();
    const double denom = ar.norm() * br.norm();
    out(r, 0) = denom > kCosineGuard ? static_cast<Scalar>(ar.dot(br) / denom) : Scalar(0);
  }
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, broadcast](Tape<Scalar>& t, const auto& g) {
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    Matrix<double> ga = Matrix<double>::Zero(av.rows(), av.cols());
    Matrix<double> gb = Matrix<double>::Zero(bv.rows(), bv.cols());
    for (Index r = 0; r < av.rows(); ++r) {
      const Index rb = broadcast ? 0 : r;
      const Eigen::RowVectorXd ar = av.row(r).template cast<double>();
      const Eigen::RowVectorXd br = bv.row(rb).template cast<double>();
      const double na = ar.norm(), nb = br.norm();
      if (na * nb <= kCosineGuard) continue;
      const double c = ar.dot(br) / (na * nb);
      const double gr = static_cast<double>(g(r, 0));
      ga.row(r) += gr * (br / (na * nb) - c * ar / (na * na));
      gb.row(rb) += gr * (ar / (na * nb) - c * br / (nb * nb));
    }
    t.accumulate(ia, ga.template cast<Scalar>());
    t.accumulate(ib, gb.template cast<Scalar>());
  });
}

// Cosine similarity of two same-shape tensors viewed as flat vectors -> 1 x 1.
template <typename Scalar>
Var<Scalar> cosine(const Var<Scalar>& u, const Var<Scalar>& v) {
  if (u.rows() != 1 || v.rows() != 1) {
    throw ShapeError("cosine: expected row vectors, got " + u.shape_string() + " and " +
                     v.shape_string());
  }
  return cosine_rows(u, v);
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kScoreClamp = 1e-7;

// Binary cross-entropy on probabilities, -(1/T) sum[y log s + (1-y) log(1-s)],
// with s clamped to [1e-7, 1 - 1e-7]. Clamped entries pass no gradient.
template <typename Scalar>
Var<Scalar> bce(const Var<Scalar>& scores, std::span<const int> labels) {
  if (scores.cols() != 1 || scores.rows() != static_cast<Index>(labels.size())) {
    throw ShapeError("bce: scores " + scores.shape_string() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("bce: empty sequence");
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (Index t = 0; t < scores.rows(); ++t) {
    const double s = std::clamp(static_cast<double>(scores.value()(t, 0)), kScoreClamp,
                                1.0 - kScoreClamp);
    total += labels[t] ? std::log(s) : std::log(1.0 - s);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(-total / n);
  const int is = scores.id();
  std::vector<int> y(labels.begin(), labels.end());
  return scores.tape()->record(std::move(out), {scores},
                               [is, n, y = std::move(y)](Tape<Scalar>& t, const auto& g) {
                                 const auto& s = t.value(is);
                                 Matrix<Scalar> gs = Matrix<Scalar>::Zero(s.rows(), 1);
                                 const double go = static_cast<double>(g(0, 0));
                                 for (Index i = 0; i < s.rows(); ++i) {
                                   const double v = static_cast<double>(s(i, 0));
                                   if (v < kScoreClamp || v > 1.0 - kScoreClamp) continue;
                                   const double d = y[i] ? -1.0 / v : 1.0 / (1.0 - v);
                                   gs(i, 0) = static_cast<Scalar>(go * d / n);
                                 }
                                 t.accumulate(is, gs);
                               });
}

// Binary cross-entropy evaluated from logits: mean(softplus(l) - y l).
// Mathematically bce(sigmoid(l)) without the clamp, so gradients keep their
// sign even where sigmoid saturates in floating point.
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, std::span<const int> labels) {
  if (logits.cols() != 1 || logits.rows() != static_cast<Index>(labels.size())) {
    throw ShapeError("bce_with_logits: logits " + logits.shape_string() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("bce_with_logits: empty sequence");
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (Index t = 0; t < logits.rows(); ++t) {
    const double l = static_cast<double>(logits.value()(t, 0));
    const double softplus = std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l)));
    total += softplus - (labels[t] ? l : 0.0);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total / n);
  const int il = logits.id();
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape()->record(std::move(out), {logits},
                               [il, n, y = std::move(y)](Tape<Scalar>& t, const auto& g) {
                                 const auto& l = t.value(il);
                                 Matrix<Scalar> gl(l.rows(), 1);
                                 const double go = static_cast<double>(g(0, 0));
                                 for (Index i = 0; i < l.rows(); ++i) {
                                   const double s = sigmoid_scalar(static_cast<double>(l(i, 0)));
                                   gl(i, 0) = static_cast<Scalar>(go * (s - y[i]) / n);
                                 }
                                 t.accumulate(il, gl);
                               });
}

// ---------------------------------------------------------------------------
// Composites

// softmax(q k^T / sqrt(d)) v, single head.
template <typename Scalar>
Var<Scalar> scaled_dot_product_attention(const Var<Scalar>& q, const Var<Scalar>& k,
                                         const Var<Scalar>& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attention: q " + q.shape_string() + ", k " + k.shape_string() + ", v " +
                     v.shape_string());
  }
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  auto logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
  return matmul(softmax_rows(logits), v);
}

}  // namespace avasd::ad
