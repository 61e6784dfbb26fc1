#include "scalelab/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace scalelab {

std::string_view to_string(DivergenceCause cause) {
  switch (cause) {
    case DivergenceCause::NaN:
      return "NaN";
    case DivergenceCause::Inf:
      return "Inf";
    case DivergenceCause::PDFailure:
      return "PDFailure";
  }
  return "unknown";
}

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw Error("tensor data length " + std::to_string(data_.size()) +
                " does not match shape product " + std::to_string(shape_product(shape_)));
  }
}

bool Tensor::all_finite() const noexcept { return scalelab::all_finite(data_); }

bool Tensor::identical(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw Error("matrix data length does not match dimensions");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::operator*(const Matrix& rhs) const {
  if (cols_ != rhs.rows_) throw Error("matrix product dimension mismatch");
  Matrix out(rows_, rhs.cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < rhs.cols_; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < cols_; ++k) acc += (*this)(r, k) * rhs(k, c);
      out(r, c) = acc;
    }
  return out;
}

double Matrix::frobenius_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

namespace {

std::size_t split_point(std::size_t len) {
  // Largest power of two strictly less than len (len >= 2).
  return std::bit_floor(len - 1);
}

double tree_sum_range(const double* v, std::size_t len) {
  if (len == 1) return v[0];
  const std::size_t left = split_point(len);
  return tree_sum_range(v, left) + tree_sum_range(v + left, len - left);
}

void tree_sum_tensors(std::span<const Tensor> ts, std::size_t begin, std::size_t len, std::vector<double>& out) {
  if (len == 1) {
    const auto src = ts[begin].values();
    out.assign(src.begin(), src.end());
    return;
  }
  const std::size_t left = split_point(len);
  std::vector<double> rhs;
  tree_sum_tensors(ts, begin, left, out);
  tree_sum_tensors(ts, begin + left, len - left, rhs);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + rhs[i];
}

}  // namespace

double tree_sum(std::span<const double> values) {
  if (values.empty()) throw Error("tree_sum of an empty sequence");
  return tree_sum_range(values.data(), values.size());
}

Tensor tree_sum(std::span<const Tensor> values) {
  if (values.empty()) throw Error("tree_sum of an empty sequence");
  for (const auto& t : values)
    if (!t.same_shape(values.front())) throw Error("tree_sum over tensors of differing shapes");
  std::vector<double> out;
  tree_sum_tensors(values, 0, values.size(), out);
  return Tensor(values.front().shape(), std::move(out));
}

void TreeAccumulator::add(std::span<const double> row) {
  if (row.size() != width_) throw Error("TreeAccumulator row width mismatch");
  stack_.push_back(Block{1, std::vector<double>(row.begin(), row.end())});
  while (stack_.size() >= 2 && stack_[stack_.size() - 2].size == stack_.back().size) {
    Block newer = std::move(stack_.back());
    stack_.pop_back();
    Block& older = stack_.back();
    for (std::size_t i = 0; i < width_; ++i) older.sum[i] = older.sum[i] + newer.sum[i];
    older.size *= 2;
  }
  ++count_;
}

std::vector<double> TreeAccumulator::result() const {
  if (stack_.empty()) throw Error("tree_sum of an empty sequence");
  // Blocks are full balanced trees of decreasing size; the recursive split
  // pairs each with everything after it, so fold right-to-left.
  std::vector<double> acc = stack_.back().sum;
  for (std::size_t b = stack_.size() - 1; b-- > 0;) {
    const auto& blk = stack_[b].sum;
    for (std::size_t i = 0; i < width_; ++i) acc[i] = blk[i] + acc[i];
  }
  return acc;
}

Matrix cholesky(const Matrix& s) {
  if (!s.is_square()) throw Error("cholesky requires a square matrix");
  const std::size_t n = s.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(s(i, j) - s(j, i)) > 1e-12 * std::max({1.0, std::abs(s(i, j)), std::abs(s(j, i))}))
        throw Error("cholesky requires a symmetric matrix");

  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = s(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) throw NotPositiveDefinite(j, diag);
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

std::vector<double> forward_substitute(const Matrix& lower, std::span<const double> b) {
  const std::size_t n = lower.rows();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= lower(i, k) * x[k];
    x[i] = v / lower(i, i);
  }
  return x;
}

std::vector<double> backward_substitute_transposed(const Matrix& lower, std::span<const double> b) {
  const std::size_t n = lower.rows();
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double v = b[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= lower(k, i) * x[k];
    x[i] = v / lower(i, i);
  }
  return x;
}

Matrix cholesky_inverse(const Matrix& lower) {
  const std::size_t n = lower.rows();
  Matrix inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    const auto col = backward_substitute_transposed(lower, forward_substitute(lower, e));
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  // Symmetrize exactly.
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = r + 1; c < n; ++c) {
      const double avg = 0.5 * (inv(r, c) + inv(c, r));
      inv(r, c) = avg;
      inv(c, r) = avg;
    }
  return inv;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) return {};
  const double peak = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

Matrix softmax_jacobian(std::span<const double> v) {
  const auto s = softmax(v);
  Matrix j(s.size(), s.size());
  for (std::size_t r = 0; r < s.size(); ++r)
    for (std::size_t c = 0; c < s.size(); ++c) j(r, c) = s[r] * ((r == c ? 1.0 : 0.0) - s[c]);
  return j;
}

std::vector<double> softmax_backward(std::span<const double> output, std::span<const double> grad_output) {
  double dot = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) dot += output[i] * grad_output[i];
  std::vector<double> g(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] * (grad_output[i] - dot);
  return g;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> sigmoid(std::span<const double> v) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return sigmoid(x); });
  return out;
}

std::vector<double> sigmoid_derivative(std::span<const double> v) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
  });
  return out;
}

std::vector<double> tanh_act(std::span<const double> v) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return std::tanh(x); });
  return out;
}

std::vector<double> tanh_derivative(std::span<const double> v) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  });
  return out;
}

std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace scalelab
