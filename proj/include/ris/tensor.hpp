#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ris {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Owning row-major f32 tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(element_count(shape), 0.0f) {}
  Tensor(Shape s, std::vector<float> d);

  std::size_t size() const { return data.size(); }
};

/// Read-only view of f32 data whose backing storage (heap vector or file
/// mapping) is kept alive by the view itself.
class TensorView {
 public:
  TensorView() = default;
  TensorView(Shape shape, std::span<const float> data, std::shared_ptr<const void> owner)
      : shape_(std::move(shape)), data_(data), owner_(std::move(owner)) {}

  const Shape& shape() const { return shape_; }
  std::span<const float> data() const { return data_; }
  std::size_t size() const { return data_.size(); }
  const float& operator[](std::size_t i) const { return data_[i]; }

  Tensor to_tensor() const { return Tensor(shape_, {data_.begin(), data_.end()}); }

 private:
  Shape shape_;
  std::span<const float> data_;
  std::shared_ptr<const void> owner_;
};

/// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace ris
