#include "bevkit/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "bevkit/error.hpp"

namespace bevkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.ptr(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
              " vs " + shape_string(b.shape()));
}

}  // namespace

Var Tape::input(Tensor value) {
  require(value.all_finite(), ErrorKind::kNumeric, "non-finite tape input");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "input";
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  require(value.all_finite(), ErrorKind::kNumeric, "non-finite tape constant");
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Backward backward,
                 const char* op) {
  if (!value.all_finite()) {
    fail(ErrorKind::kNumeric, std::string("non-finite output from ") + op);
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (record_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var v) {
      return nodes_.at(v.id).requires_grad;
    });
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Gradients Tape::backward(Var loss) const {
  const Tensor& lv = value(loss);
  require(lv.numel() == 1, ErrorKind::kContract,
          "backward needs a scalar loss, got shape " + shape_string(lv.shape()));
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) shapes.push_back(n.value.shape());

  grads[loss.id] = Tensor(lv.shape(), 1.0);
  std::vector<Tensor*> ptrs;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!grads[i] || !n.backward) continue;
    ptrs.clear();
    for (Var in : n.inputs) {
      const Node& src = nodes_[in.id];
      if (!src.requires_grad) {
        ptrs.push_back(nullptr);
        continue;
      }
      auto& g = grads[in.id];
      if (!g) g = Tensor(src.value.shape(), 0.0);
      ptrs.push_back(&*g);
    }
    n.backward(*grads[i], ptrs);
  }
  return Gradients(std::move(grads), std::move(shapes));
}

Tensor Gradients::operator[](Var v) const {
  const auto& g = grads_.at(v.id);
  if (g) return *g;
  return Tensor(shapes_.at(v.id), 0.0);
}

namespace kernels {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), ErrorKind::kDimension, "softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double m = -INFINITY;
      for (std::size_t k = 0; k < n; ++k) m = std::max(m, x[base + k * inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(x[base + k * inner] - m);
        y[base + k * inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= s;
    }
  }
  return y;
}

}  // namespace kernels

namespace ad {

Var linear(Tape& t, Var x, Var w, std::optional<Var> b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require(wv.rank() == 2, ErrorKind::kDimension, "linear: weight must be rank 2");
  const std::size_t in = wv.dim(1), out = wv.dim(0);
  require(xv.rank() >= 1 && xv.cols() == in, ErrorKind::kDimension,
          "linear: input " + shape_string(xv.shape()) + " vs weight " +
              shape_string(wv.shape()));
  if (b) {
    const Tensor& bv = t.value(*b);
    require(bv.numel() == out, ErrorKind::kDimension,
            "linear: bias length does not match output width");
  }
  const std::size_t rows = xv.rows();
  Shape shape = xv.shape();
  shape.back() = out;
  Tensor y(shape);
  if (rows > 0 && out > 0) {
    auto ym = as_matrix(y, rows, out);
    if (in > 0) {
      ym.noalias() = as_matrix(xv, rows, in) * as_matrix(wv, out, in).transpose();
    }
    if (b) {
      const Tensor& bv = t.value(*b);
      ym.rowwise() += as_matrix(bv, 1, out).row(0);
    }
  }
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  const bool has_bias = b.has_value();
  return t.record(
      std::move(y), std::move(inputs),
      [&t, x, w, rows, in, out, has_bias](const Tensor& g, std::span<Tensor* const> gi) {
        if (rows == 0 || out == 0) return;
        auto gm = as_matrix(g, rows, out);
        if (gi[0] && in > 0) {
          as_matrix(*gi[0], rows, in).noalias() += gm * as_matrix(t.value(w), out, in);
        }
        if (gi[1] && in > 0) {
          as_matrix(*gi[1], out, in).noalias() +=
              gm.transpose() * as_matrix(t.value(x), rows, in);
        }
        if (has_bias && gi[2]) {
          // Plain row-order loop: Eigen's vectorized reductions change the
          // summation order with buffer alignment.
          double* gb = gi[2]->ptr();
          const double* gp = g.ptr();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out; ++o) gb[o] += gp[r * out + o];
          }
        }
      },
      "linear");
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Tensor y = av;
  y += bv;
  return t.record(
      std::move(y), {a, b},
      [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) *gi[0] += g;
        if (gi[1]) *gi[1] += g;
      },
      "add");
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Tensor y = av;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= bv[i];
  return t.record(
      std::move(y), {a, b},
      [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) *gi[0] += g;
        if (gi[1]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
        }
      },
      "sub");
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return t.record(
      std::move(y), {a, b},
      [&t, a, b](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (gi[0]) (*gi[0])[i] += g[i] * bv[i];
          if (gi[1]) (*gi[1])[i] += g[i] * av[i];
        }
      },
      "mul");
}

Var scale(Tape& t, Var x, double c) {
  Tensor y = t.value(x);
  for (double& v : y.data()) v *= c;
  return t.record(
      std::move(y), {x},
      [c](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += c * g[i];
      },
      "scale");
}

Var concat(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::kDimension, "concat of nothing");
  const Shape& first = t.shape(parts[0]);
  require(!first.empty(), ErrorKind::kDimension, "concat needs rank >= 1");
  const std::size_t rows = t.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Shape& s = t.shape(p);
    require(s.size() == first.size() &&
                std::equal(s.begin(), s.end() - 1, first.begin()),
            ErrorKind::kDimension,
            "concat: leading extents differ " + shape_string(s) + " vs " +
                shape_string(first));
    widths.push_back(s.back());
    total += s.back();
  }
  Shape shape = first;
  shape.back() = total;
  Tensor y(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = t.value(parts[k]).row(r);
      std::copy(src.begin(), src.end(), y.ptr() + r * total + off);
      off += widths[k];
    }
  }
  return t.record(
      std::move(y), std::vector<Var>(parts.begin(), parts.end()),
      [rows, total, widths](const Tensor& g, std::span<Tensor* const> gi) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (gi[k]) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < widths[k]; ++c) {
                (*gi[k])[r * widths[k] + c] += g[r * total + off + c];
              }
            }
          }
          off += widths[k];
        }
      },
      "concat");
}

Var concat(Tape& t, std::initializer_list<Var> parts) {
  return concat(t, std::span<const Var>(parts.begin(), parts.size()));
}

Var gather_rows(Tape& t, Var x, std::vector<std::int64_t> index) {
  const Tensor& xv = t.value(x);
  const std::size_t cols = xv.cols(), rows = xv.rows();
  Tensor y({index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const std::int64_t src = index[r];
    if (src < 0) continue;
    require(static_cast<std::size_t>(src) < rows, ErrorKind::kDimension,
            "gather_rows: index out of range");
    auto s = xv.row(static_cast<std::size_t>(src));
    std::copy(s.begin(), s.end(), y.ptr() + r * cols);
  }
  return t.record(
      std::move(y), {x},
      [index = std::move(index), cols](const Tensor& g, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t r = 0; r < index.size(); ++r) {
          if (index[r] < 0) continue;
          double* dst = gx.ptr() + static_cast<std::size_t>(index[r]) * cols;
          const double* src = g.ptr() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
      },
      "gather_rows");
}

Var scatter_add(Tape& t, Var x, std::vector<std::int64_t> index,
                std::size_t out_rows, std::vector<double> weight) {
  const Tensor& xv = t.value(x);
  const std::size_t cols = xv.cols();
  require(index.size() == xv.rows(), ErrorKind::kDimension,
          "scatter_add: index length must equal row count");
  require(weight.empty() || weight.size() == index.size(), ErrorKind::kDimension,
          "scatter_add: weight length must equal row count");
  Tensor y({out_rows, cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    require(static_cast<std::size_t>(index[r]) < out_rows, ErrorKind::kDimension,
            "scatter_add: target row out of range");
    const double w = weight.empty() ? 1.0 : weight[r];
    double* dst = y.ptr() + static_cast<std::size_t>(index[r]) * cols;
    const double* src = xv.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += w * src[c];
  }
  return t.record(
      std::move(y), {x},
      [index = std::move(index), weight = std::move(weight), cols](
          const Tensor& g, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t r = 0; r < index.size(); ++r) {
          if (index[r] < 0) continue;
          const double w = weight.empty() ? 1.0 : weight[r];
          const double* src = g.ptr() + static_cast<std::size_t>(index[r]) * cols;
          double* dst = gx.ptr() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += w * src[c];
        }
      },
      "scatter_add");
}

Var softmax(Tape& t, Var x, std::size_t axis) {
  const Tensor& xv = t.value(x);
  Tensor y = kernels::softmax(xv, axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t n = xv.dim(axis);
  Tensor saved = y;
  return t.record(
      std::move(y), {x},
      [saved = std::move(saved), outer, inner, n](const Tensor& g,
                                                  std::span<Tensor* const> gi) {
        const Tensor& y = saved;
        Tensor& gx = *gi[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double dot = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              dot += g[base + k * inner] * y[base + k * inner];
            }
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t idx = base + k * inner;
              gx[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Var sigmoid(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data()) v = kernels::sigmoid(v);
  Tensor saved = y;
  return t.record(
      std::move(y), {x},
      [saved = std::move(saved)](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.numel(); ++i) {
          (*gi[0])[i] += g[i] * saved[i] * (1.0 - saved[i]);
        }
      },
      "sigmoid");
}

Var relu(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return t.record(
      std::move(y), {x},
      [&t, x](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = t.value(x);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (xv[i] > 0.0) (*gi[0])[i] += g[i];
        }
      },
      "relu");
}

Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  return t.record(
      Tensor::scalar(s), {x},
      [](const Tensor& g, std::span<Tensor* const> gi) {
        for (double& v : gi[0]->data()) v += g[0];
      },
      "sum");
}

Var mean(Tape& t, Var x) {
  const std::size_t n = t.value(x).numel();
  require(n > 0, ErrorKind::kDimension, "mean of empty tensor");
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  return t.record(
      Tensor::scalar(s / static_cast<double>(n)), {x},
      [n](const Tensor& g, std::span<Tensor* const> gi) {
        const double d = g[0] / static_cast<double>(n);
        for (double& v : gi[0]->data()) v += d;
      },
      "mean");
}

Var reshape(Tape& t, Var x, Shape shape) {
  Tensor y = t.value(x).reshaped(std::move(shape));
  return t.record(
      std::move(y), {x},
      [](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
      },
      "reshape");
}

Var transpose(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, ErrorKind::kDimension, "transpose needs rank 2");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor y({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = xv[i * c + j];
  }
  return t.record(
      std::move(y), {x},
      [r, c](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) (*gi[0])[i * c + j] += g[j * r + i];
        }
      },
      "transpose");
}

}  // namespace ad

namespace {

double evaluate(const ScalarGraph& f, const Tensor& x) {
  Tape t(false);
  const double v = t.value(f(t, t.constant(x))).item();
  if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite function value");
  return v;
}

}  // namespace

double finite_diff_check(const ScalarGraph& f, const Tensor& x,
                         std::span<const std::size_t> coords, double eps) {
  require(eps > 0.0, ErrorKind::kDomain, "finite_diff_check: eps must be positive");
  Tape t(true);
  Var xv = t.input(x);
  Var y = f(t, xv);
  const Tensor analytic = t.backward(y)[xv];
  double worst = 0.0;
  for (std::size_t i : coords) {
    require(i < x.numel(), ErrorKind::kDimension, "finite_diff_check: bad coordinate");
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double numeric = (evaluate(f, xp) - evaluate(f, xm)) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_diff_check(const ScalarGraph& f, const Tensor& x, double eps) {
  std::vector<std::size_t> coords(x.numel());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return finite_diff_check(f, x, coords, eps);
}

}  // namespace bevkit
