#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trasend/common.hpp"

namespace trasend {

inline std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

inline int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

/// Dense n-dimensional array, row-major, owning its buffer.
/// The scalar type selects precision: double for verification, float for
/// faster training.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), S(0)) {}

  Tensor(std::vector<int64_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, S v) {
    Tensor t(std::move(shape));
    for (S& x : t.data_) x = v;
    return t;
  }

  static Tensor ones(std::vector<int64_t> shape) { return full(std::move(shape), S(1)); }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor vec(std::vector<S> values) {
    int64_t n = static_cast<int64_t>(values.size());
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<S>> rows) {
    int64_t r = static_cast<int64_t>(rows.size());
    int64_t c = r ? static_cast<int64_t>(rows.begin()->size()) : 0;
    std::vector<S> data;
    data.reserve(static_cast<size_t>(r * c));
    for (const auto& row : rows) {
      if (static_cast<int64_t>(row.size()) != c) {
        throw ShapeError("ragged matrix initializer");
      }
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }

  int64_t dim(int i) const {
    int n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n) throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str());
    return shape_[static_cast<size_t>(i)];
  }

  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool defined() const { return !shape_.empty() || !data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& buffer() { return data_; }
  const std::vector<S>& buffer() const { return data_; }

  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Row-major multi-index access; mainly for tests and small assemblies.
  S& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(flat_index(idx))]; }
  const S& at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(flat_index(idx))];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (S v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  Tensor reshaped(std::vector<int64_t> new_shape) const {
    if (numel_of(new_shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str() + " to " + shape_to_string(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
  }

  std::string shape_str() const { return shape_to_string(shape_); }

 private:
  int64_t flat_index(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
      throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor " + shape_str());
    }
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      flat = flat * shape_[k] + i;
      ++k;
    }
    return flat;
  }

  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    for (int64_t d : shape) {
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
    }
    return numel_of(shape);
  }

  std::vector<int64_t> shape_;
  std::vector<S> data_;
};

template <typename S, typename T>
Tensor<S> tensor_cast(const Tensor<T>& t) {
  std::vector<S> data(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) data[static_cast<size_t>(i)] = static_cast<S>(t[i]);
  return Tensor<S>(t.shape(), std::move(data));
}

}  // namespace trasend
