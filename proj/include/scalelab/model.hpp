#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scalelab/mixture.hpp"
#include "scalelab/numerics.hpp"

namespace scalelab {

/// One convolution in the encoder: cube kernel, stride 1, no padding, ReLU.
struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t filters = 8;
  bool operator==(const ConvSpec&) const = default;
};

struct ModelConfig {
  std::size_t n = 3;
  std::size_t K = 8;
  std::size_t side = 8;
  std::size_t latent = 32;
  std::vector<ConvSpec> encoder{{3, 8}};

  /// Small profile that trains in seconds on one core.
  static ModelConfig desk();
  /// The full-size network: side 16, K=50, 7/5/3 convolutions with 32 filters.
  static ModelConfig paper();

  void validate() const;
  GridSpec grid() const;
  std::vector<std::size_t> input_shape() const { return std::vector<std::size_t>(n, side); }
  bool operator==(const ModelConfig&) const = default;
};

/// Parameters estimated per mixture: (n^2 + 3n + 2) K / 2.
std::size_t param_count(std::size_t n, std::size_t K);

struct HeadWidths {
  std::size_t alpha, mean, stddev, correlation;
  std::size_t total() const { return alpha + mean + stddev + correlation; }
};
HeadWidths head_widths(std::size_t n, std::size_t K);

/// Fully connected layer; weight has shape {out, in}.
struct DenseLayer {
  Tensor weight;
  Tensor bias;
  std::size_t outputs() const { return weight.shape()[0]; }
  std::size_t inputs() const { return weight.shape()[1]; }
};

/// Convolution; filters has shape {out, k, .., k, in} (n kernel axes), bias {out}.
struct ConvLayer {
  Tensor filters;
  Tensor bias;
};

struct ModelWeights {
  std::vector<ConvLayer> conv;
  DenseLayer project;      // conv features -> latent
  DenseLayer alpha_head;   // softmax
  DenseLayer mean_head;    // tanh
  DenseLayer stddev_head;  // sigmoid
  DenseLayer corr_head;    // sigmoid

  /// Every tensor in checkpoint order: conv (filters, bias)..., then the
  /// projection and the four heads as (weight, bias) pairs.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;

  std::size_t parameter_count() const;
  ModelWeights zeros_like() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);
  std::uint64_t hash() const;
  bool identical(const ModelWeights& other) const;
  bool all_finite() const;
};

/// Fan-in scaled uniform init U(-a, a), a = sqrt(6 / (fan_in + fan_out)); zero biases.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

/// Latent code y = relu(W0 * conv_stack(x) + b0).
std::vector<double> encode(const Tensor& x, const ModelWeights& w, const ModelConfig& config);

/// Mixture parameters from the latent code through the four heads.
MixtureParams heads(std::span<const double> y, const ModelWeights& w, const ModelConfig& config);

/// Mean over voxels of (ln(1 + pred) - ln(1 + target))^2.
double msle(const Tensor& pred, const Tensor& target);

struct ForwardResult {
  Tensor reconstruction;
  MixtureParams params;
  double loss = 0.0;
};

/// Throws Diverged(PDFailure) when a component covariance cannot be repaired.
ForwardResult forward(const Tensor& x, const ModelWeights& w, const ModelConfig& config);

struct BackwardResult {
  double loss = 0.0;
  ModelWeights gradient;
};

/// Loss and exact gradient for one example. Throws Diverged on PD failure or
/// a non-finite gradient.
BackwardResult backward(const Tensor& x, const ModelWeights& w, const ModelConfig& config);

/// Mean loss and mean gradient over a batch: tree_sum of the per-example
/// results divided by the batch size.
BackwardResult batch_backward(std::span<const Tensor> batch, const ModelWeights& w, const ModelConfig& config);

// Checkpoint file: "DDW1", config descriptor, then every tensor as
// rank u32, dims u32..., values as little-endian f64.
void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelWeights& w);
struct Checkpoint {
  ModelConfig config;
  ModelWeights weights;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace scalelab
