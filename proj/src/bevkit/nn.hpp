#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bevkit/rng.hpp"
#include "bevkit/tape.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

// Named parameter tensors in registration order, each tagged with a group
// (the module it belongs to).
class ParamStore {
 public:
  void add(const std::string& name, Tensor init, const std::string& group);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::string& group(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::string> groups() const;
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  // LeCun-normal weight [out, in] and zero bias [out] under "<prefix>.w" and
  // "<prefix>.b".
  void add_linear(Rng& rng, const std::string& prefix, std::size_t in, std::size_t out,
                  const std::string& group, bool bias = true);
  // Convolution weight [out, k*k*in] laid out as (ky, kx, cin).
  void add_conv(Rng& rng, const std::string& prefix, std::size_t in, std::size_t out,
                std::size_t k, const std::string& group, bool bias = true);

  void zero();
  void fill_group(const std::string& group, double value);

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Tensor> values_;
  std::vector<std::string> groups_;
};

// Parameters placed on a tape, either as gradient-tracked inputs (training)
// or constants (inference).
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool trainable);
  Var operator[](const std::string& name) const;
  std::optional<Var> maybe(const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }
  // Replaces the binding of an existing parameter (gradient probes).
  void rebind(const std::string& name, Var v);

 private:
  std::map<std::string, Var> vars_;
};

namespace nn {

// im2col row indices for a k x k convolution over an [h, w] grid; -1 marks
// padding. Row r * k * k + (ky * k + kx) reads input pixel for output r.
std::vector<std::int64_t> im2col_index(std::size_t h, std::size_t w, std::size_t k,
                                       std::size_t stride, std::size_t pad);

// Same, but only for the listed output positions (stride 1, "same" padding).
std::vector<std::int64_t> im2col_index_at(std::size_t h, std::size_t w, std::size_t k,
                                          const std::vector<std::size_t>& positions);

// x: [h, w, cin] -> [h_out, w_out, cout] with weight [cout, k*k*cin].
Var conv2d(Tape& t, Var x, Var w, std::optional<Var> b, std::size_t k, std::size_t stride,
           std::size_t pad);

// Stride-1 "same" convolution evaluated only at `positions` (flat h*w
// indices): returns [positions, cout].
Var conv2d_at(Tape& t, Var x, const std::vector<std::size_t>& positions, Var w,
              std::optional<Var> b, std::size_t k);

// relu(x W1^T + b1) W2^T + b2, using "<prefix>.l1" and "<prefix>.l2".
Var mlp2(Tape& t, const BoundParams& p, const std::string& prefix, Var x);

// Rows stacked: [a_rows + b_rows, cols].
Var stack_rows(Tape& t, Var a, Var b);

// Row range [begin, end) of x.
Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end);

}  // namespace nn

}  // namespace bevkit
