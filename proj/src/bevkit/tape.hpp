#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bevkit/tensor.hpp"

namespace bevkit {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

class Gradients;

// Operation tape for reverse-mode differentiation. Values are appended in
// evaluation order, so node inputs always precede the node. With recording
// disabled the tape only stores values (inference mode).
class Tape {
 public:
  // grad_in[i] is null for inputs that do not require gradients; backward
  // closures accumulate (+=) into the non-null ones.
  using Backward =
      std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  bool recording() const { return record_; }

  // Leaf whose gradient is tracked (parameters, probe inputs).
  Var input(Tensor value);
  // Leaf without gradient.
  Var constant(Tensor value);

  // Appends a computed node. Throws a numeric error if `value` has
  // non-finite entries.
  Var record(Tensor value, std::vector<Var> inputs, Backward backward,
             const char* op);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const char* op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar node. Every node is visited at most once,
  // in reverse insertion order.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<Var> inputs;
    Backward backward;
    bool requires_grad = false;
    const char* op = "";
  };

  bool record_;
  // Deque keeps value()/shape() references valid as nodes are appended.
  std::deque<Node> nodes_;
};

class Gradients {
 public:
  Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  // Gradient for any node on the tape; zeros when the node is not reachable
  // from the loss.
  Tensor operator[](Var v) const;
  bool reached(Var v) const { return grads_.at(v.id).has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

namespace ad {

// y[..., o] = sum_i x[..., i] * w[o, i] + b[o]. Pass no bias for a
// bias-free map.
Var linear(Tape& t, Var x, Var w, std::optional<Var> b = std::nullopt);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double c);
// Concatenation along the trailing axis; leading extents must agree.
Var concat(Tape& t, std::span<const Var> parts);
Var concat(Tape& t, std::initializer_list<Var> parts);
// Row r of the result is row index[r] of x (viewed as [rows, cols]);
// index -1 yields a zero row.
Var gather_rows(Tape& t, Var x, std::vector<std::int64_t> index);
// out[index[r]] += weight[r] * x[r]; index -1 drops the row. Accumulation
// is sequential in row order.
Var scatter_add(Tape& t, Var x, std::vector<std::int64_t> index,
                std::size_t out_rows, std::vector<double> weight = {});
Var softmax(Tape& t, Var x, std::size_t axis);
Var sigmoid(Tape& t, Var x);
Var relu(Tape& t, Var x);
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);
Var reshape(Tape& t, Var x, Shape shape);
Var transpose(Tape& t, Var x);

}  // namespace ad

// Tape-free kernels shared by the ops above.
namespace kernels {
Tensor softmax(const Tensor& x, std::size_t axis);
double sigmoid(double x);
}  // namespace kernels

// Scalar function of one tensor expressed on a tape, so both the analytic
// gradient and plain re-evaluation come from the same definition.
using ScalarGraph = std::function<Var(Tape&, Var)>;

// Max over coordinates of |analytic - central| / max(1e-8, |analytic|).
double finite_diff_check(const ScalarGraph& f, const Tensor& x, double eps = 1e-5);

// Same check restricted to the listed coordinates.
double finite_diff_check(const ScalarGraph& f, const Tensor& x,
                         std::span<const std::size_t> coords, double eps = 1e-5);

}  // namespace bevkit
