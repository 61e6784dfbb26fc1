#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scalelab/error.hpp"

namespace scalelab {

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  /// Bitwise equality of shape and contents.
  bool identical(const Tensor& other) const noexcept;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

/// Small dense row-major matrix for covariance algebra.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix transposed() const;
  Matrix operator*(const Matrix& rhs) const;
  bool is_square() const noexcept { return rows_ == cols_; }
  double frobenius_norm() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Canonical summation. The index range [0, len) is split at the largest power
// of two strictly below len and both halves are summed recursively. The result
// depends only on the values and their order.
double tree_sum(std::span<const double> values);
Tensor tree_sum(std::span<const Tensor> values);

/// Streaming form of tree_sum over fixed-width vectors. Pushing rows one at a
/// time and calling result() gives bitwise the same answer as tree_sum over the
/// full sequence, with O(width * log count) memory.
class TreeAccumulator {
 public:
  explicit TreeAccumulator(std::size_t width) : width_(width) {}

  void add(std::span<const double> row);
  std::vector<double> result() const;
  std::size_t count() const noexcept { return count_; }
  std::size_t width() const noexcept { return width_; }

 private:
  struct Block {
    std::size_t size;
    std::vector<double> sum;
  };
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<Block> stack_;
};

/// Lower-triangular L with L * L^T == s. Throws NotPositiveDefinite.
Matrix cholesky(const Matrix& s);

/// Solves L * x = b for lower-triangular L.
std::vector<double> forward_substitute(const Matrix& lower, std::span<const double> b);
/// Solves L^T * x = b for lower-triangular L.
std::vector<double> backward_substitute_transposed(const Matrix& lower, std::span<const double> b);
/// (L L^T)^{-1} from the Cholesky factor.
Matrix cholesky_inverse(const Matrix& lower);

// Activations. The *_derivative functions return the elementwise derivative
// evaluated at the pre-activation input.
std::vector<double> softmax(std::span<const double> v);
/// Jacobian d softmax_i / d v_j.
Matrix softmax_jacobian(std::span<const double> v);
/// Vector-Jacobian product given the softmax output.
std::vector<double> softmax_backward(std::span<const double> output, std::span<const double> grad_output);

double sigmoid(double x);
std::vector<double> sigmoid(std::span<const double> v);
std::vector<double> sigmoid_derivative(std::span<const double> v);
std::vector<double> tanh_act(std::span<const double> v);
std::vector<double> tanh_derivative(std::span<const double> v);
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// FNV-1a over the raw bytes of the values.
std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);

bool all_finite(std::span<const double> values);

}  // namespace scalelab
