#include "bevkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bevkit/binary_io.hpp"
#include "bevkit/error.hpp"

namespace bevkit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == data_.size(), ErrorKind::kDimension,
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_string(shape_));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  require(index.size() == shape_.size(), ErrorKind::kDimension,
          "index rank does not match tensor rank");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    require(i < shape_[axis], ErrorKind::kDimension, "tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == numel(), ErrorKind::kDimension,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::kContract,
          "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require(other.numel() == numel(), ErrorKind::kDimension,
          "tensor += with mismatched sizes");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          "max_abs_diff shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("BKT1", 4);
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) binary::put<std::uint64_t>(out, e);
  for (double v : t.data()) binary::put<double>(out, v);
  if (!out) fail(ErrorKind::kIo, "failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  binary::expect_magic(in, "BKT1");
  const auto rank = binary::get<std::uint32_t>(in);
  require(rank <= 16, ErrorKind::kParse, "tensor rank too large");
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(binary::get<std::uint64_t>(in));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = binary::get<double>(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kMissingInput, "cannot open " + path);
  return read_tensor(in);
}

}  // namespace bevkit
