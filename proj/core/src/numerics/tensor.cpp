#include "chartlab/numerics/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"

namespace chartlab::num {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw ContractError("tensor dimensions must be positive, got " + shape_string(shape));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (element_count(shape_) != data_.size()) {
    throw ContractError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor l2_normalize_rows(const Tensor& m) {
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    if (ss == 0.0) throw ContractError("l2_normalize_rows: row " + std::to_string(r) + " is zero");
    const double inv = 1.0 / std::sqrt(ss);
    for (double& v : row) v *= inv;
  }
  return out;
}

std::string params_digest(const ParamSet& params) {
  std::string buf;
  for (const auto& [name, t] : params) {
    buf += name;
    buf += shape_string(t.shape());
    const auto* bytes = reinterpret_cast<const char*>(t.raw());
    buf.append(bytes, t.size() * sizeof(double));
  }
  return sha256_hex(buf);
}

}  // namespace chartlab::num
