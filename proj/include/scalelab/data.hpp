#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scalelab/mixture.hpp"

namespace scalelab {

/// Voxel examples sharing one shape, values in [0, 1].
struct Dataset {
  std::size_t n = 3;
  std::size_t side = 16;
  std::vector<Tensor> examples;
  std::vector<MixtureParams> metadata;  // generator parameters; empty after load

  std::size_t size() const noexcept { return examples.size(); }
};

struct GeneratorOptions {
  std::size_t count = 1280;
  std::uint64_t seed = 0;
  GridSpec grid{};
  std::size_t k_min = 1;
  std::size_t k_max = 3;
  double noise_sd = 0.01;
};

/// Synthetic nodules: each example renders a random mixture (mu in
/// [-0.5, 0.5]^n, sigma in [0.05, 0.25], rho in [0, 0.3]), is scaled to peak 1,
/// then gets clamped Gaussian noise. Example i depends only on (seed, i).
Dataset generate(const GeneratorOptions& options);

struct Split {
  Dataset train;
  Dataset validation;
};

inline constexpr std::size_t kValidationSize = 256;

/// Seeded permutation; the first val_size examples go to validation.
Split split(const Dataset& dataset, std::size_t val_size, std::uint64_t seed);

// "VOXL" file: magic, version u8 = 1, n u8, side u32, count u32, then
// count * side^n little-endian f32 values.
void save_voxels(const Dataset& dataset, const std::string& path);
Dataset load_voxels(const std::string& path);

}  // namespace scalelab
