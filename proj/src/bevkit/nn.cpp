#include "bevkit/nn.hpp"

#include <cmath>
#include <set>

#include "bevkit/error.hpp"

namespace bevkit {

void ParamStore::add(const std::string& name, Tensor init, const std::string& group) {
  require(!contains(name), ErrorKind::kContract, "duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(init));
  groups_.push_back(group);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kContract, "unknown parameter " + name);
  return values_[it->second];
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kContract, "unknown parameter " + name);
  return values_[it->second];
}

const std::string& ParamStore::group(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kContract, "unknown parameter " + name);
  return groups_[it->second];
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& g : groups_) {
    if (seen.insert(g).second) out.push_back(g);
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

void ParamStore::add_linear(Rng& rng, const std::string& prefix, std::size_t in,
                            std::size_t out, const std::string& group, bool bias) {
  Tensor w({out, in});
  const double sigma = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(1, in)));
  for (double& v : w.data()) v = rng.normal(sigma);
  add(prefix + ".w", std::move(w), group);
  if (bias) add(prefix + ".b", Tensor({out}), group);
}

void ParamStore::add_conv(Rng& rng, const std::string& prefix, std::size_t in,
                          std::size_t out, std::size_t k, const std::string& group,
                          bool bias) {
  add_linear(rng, prefix, k * k * in, out, group, bias);
}

void ParamStore::zero() {
  for (auto& v : values_) v.fill(0.0);
}

void ParamStore::fill_group(const std::string& group, double value) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (groups_[i] == group) values_[i].fill(value);
  }
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool trainable) {
  for (const auto& name : store.names()) {
    vars_[name] = trainable ? tape.input(store.get(name)) : tape.constant(store.get(name));
  }
}

void BoundParams::rebind(const std::string& name, Var v) {
  auto it = vars_.find(name);
  if (it == vars_.end()) fail(ErrorKind::kContract, "parameter not bound: " + name);
  it->second = v;
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) fail(ErrorKind::kContract, "parameter not bound: " + name);
  return it->second;
}

std::optional<Var> BoundParams::maybe(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) return std::nullopt;
  return it->second;
}

namespace nn {

std::vector<std::int64_t> im2col_index(std::size_t h, std::size_t w, std::size_t k,
                                       std::size_t stride, std::size_t pad) {
  require(stride >= 1 && k >= 1, ErrorKind::kDimension, "conv: bad kernel/stride");
  require(h + 2 * pad >= k && w + 2 * pad >= k, ErrorKind::kDimension, "conv: input too small");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  std::vector<std::int64_t> idx;
  idx.reserve(ho * wo * k * k);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto iy = static_cast<std::int64_t>(oy * stride + ky) - static_cast<std::int64_t>(pad);
          const auto ix = static_cast<std::int64_t>(ox * stride + kx) - static_cast<std::int64_t>(pad);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::int64_t>(h) &&
                              ix < static_cast<std::int64_t>(w);
          idx.push_back(inside ? iy * static_cast<std::int64_t>(w) + ix : -1);
        }
      }
    }
  }
  return idx;
}

std::vector<std::int64_t> im2col_index_at(std::size_t h, std::size_t w, std::size_t k,
                                          const std::vector<std::size_t>& positions) {
  const auto pad = static_cast<std::int64_t>(k / 2);
  std::vector<std::int64_t> idx;
  idx.reserve(positions.size() * k * k);
  for (std::size_t pos : positions) {
    require(pos < h * w, ErrorKind::kDimension, "conv2d_at: position out of range");
    const auto oy = static_cast<std::int64_t>(pos / w);
    const auto ox = static_cast<std::int64_t>(pos % w);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::int64_t iy = oy + static_cast<std::int64_t>(ky) - pad;
        const std::int64_t ix = ox + static_cast<std::int64_t>(kx) - pad;
        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::int64_t>(h) &&
                            ix < static_cast<std::int64_t>(w);
        idx.push_back(inside ? iy * static_cast<std::int64_t>(w) + ix : -1);
      }
    }
  }
  return idx;
}

Var conv2d(Tape& t, Var x, Var w, std::optional<Var> b, std::size_t k, std::size_t stride,
           std::size_t pad) {
  const Shape& s = t.shape(x);
  require(s.size() == 3, ErrorKind::kDimension, "conv2d expects [h, w, c], got " + shape_string(s));
  const std::size_t h = s[0], wd = s[1], c = s[2];
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  Var flat = ad::reshape(t, x, {h * wd, c});
  Var cols = ad::gather_rows(t, flat, im2col_index(h, wd, k, stride, pad));
  Var patches = ad::reshape(t, cols, {ho * wo, k * k * c});
  Var y = ad::linear(t, patches, w, b);
  return ad::reshape(t, y, {ho, wo, t.shape(y).back()});
}

Var conv2d_at(Tape& t, Var x, const std::vector<std::size_t>& positions, Var w,
              std::optional<Var> b, std::size_t k) {
  const Shape& s = t.shape(x);
  require(s.size() == 3, ErrorKind::kDimension, "conv2d_at expects [h, w, c]");
  const std::size_t h = s[0], wd = s[1], c = s[2];
  Var flat = ad::reshape(t, x, {h * wd, c});
  Var cols = ad::gather_rows(t, flat, im2col_index_at(h, wd, k, positions));
  Var patches = ad::reshape(t, cols, {positions.size(), k * k * c});
  return ad::linear(t, patches, w, b);
}

Var mlp2(Tape& t, const BoundParams& p, const std::string& prefix, Var x) {
  Var h = ad::relu(t, ad::linear(t, x, p[prefix + ".l1.w"], p.maybe(prefix + ".l1.b")));
  return ad::linear(t, h, p[prefix + ".l2.w"], p.maybe(prefix + ".l2.b"));
}

Var stack_rows(Tape& t, Var a, Var b) {
  return ad::transpose(t, ad::concat(t, {ad::transpose(t, a), ad::transpose(t, b)}));
}

Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end) {
  std::vector<std::int64_t> idx;
  for (std::size_t r = begin; r < end; ++r) idx.push_back(static_cast<std::int64_t>(r));
  return ad::gather_rows(t, x, std::move(idx));
}

}  // namespace nn

}  // namespace bevkit
