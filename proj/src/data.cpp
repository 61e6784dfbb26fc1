#include "scalelab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scalelab/rng.hpp"

namespace scalelab {

namespace {

MixtureParams draw_mixture(Rng& rng, const GeneratorOptions& o) {
  const std::size_t n = o.grid.n;
  MixtureParams p;
  p.n = n;
  p.K = o.k_min + static_cast<std::size_t>(rng.uniform_index(o.k_max - o.k_min + 1));
  p.alpha.resize(p.K);
  double total = 0.0;
  for (auto& a : p.alpha) {
    a = rng.uniform(0.05, 1.0);
    total += a;
  }
  for (auto& a : p.alpha) a /= total;
  p.mu.resize(p.K * n);
  for (auto& m : p.mu) m = rng.uniform(-0.5, 0.5);
  p.sigma.resize(p.K * n);
  for (auto& s : p.sigma) s = rng.uniform(0.05, 0.25);
  p.rho.resize(p.K * correlation_count(n));
  for (auto& r : p.rho) r = rng.uniform(0.0, 0.3);
  return p;
}

}  // namespace

Dataset generate(const GeneratorOptions& o) {
  if (o.count < 1) throw Error("generate needs count >= 1");
  if (o.k_min < 1 || o.k_max < o.k_min) throw Error("invalid component-count range");
  if (o.noise_sd < 0.0) throw Error("noise_sd must be non-negative");
  o.grid.validate();
  Dataset ds;
  ds.n = o.grid.n;
  ds.side = o.grid.side;
  ds.examples.reserve(o.count);
  ds.metadata.reserve(o.count);
  const Rng root(o.seed, streams::kData);
  for (std::size_t i = 0; i < o.count; ++i) {
    Rng rng = root.substream(i);
    auto params = draw_mixture(rng, o);
    Tensor t = render_grid(params, o.grid);
    const double peak = *std::max_element(t.values().begin(), t.values().end());
    for (double& v : t.values()) {
      v /= peak;
      if (o.noise_sd > 0.0) v += o.noise_sd * rng.normal();
      v = std::clamp(v, 0.0, 1.0);
    }
    ds.examples.push_back(std::move(t));
    ds.metadata.push_back(std::move(params));
  }
  return ds;
}

Split split(const Dataset& dataset, std::size_t val_size, std::uint64_t seed) {
  if (dataset.size() <= val_size)
    throw Error("dataset of " + std::to_string(dataset.size()) + " examples is too small for a validation set of " +
                std::to_string(val_size));
  Rng rng(seed, streams::kSplit);
  const auto perm = permutation(dataset.size(), rng);
  Split s;
  for (Dataset* d : {&s.train, &s.validation}) {
    d->n = dataset.n;
    d->side = dataset.side;
  }
  const bool has_meta = dataset.metadata.size() == dataset.size();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    Dataset& dst = i < val_size ? s.validation : s.train;
    dst.examples.push_back(dataset.examples[perm[i]]);
    if (has_meta) dst.metadata.push_back(dataset.metadata[perm[i]]);
  }
  return s;
}

namespace {

constexpr char kMagic[4] = {'V', 'O', 'X', 'L'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeader = 4 + 1 + 1 + 4 + 4;

void put_le(std::string& b, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_le(const std::string& b, std::size_t at, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

}  // namespace

void save_voxels(const Dataset& dataset, const std::string& path) {
  if (dataset.size() == 0) throw Error("refusing to save an empty dataset");
  std::string buf(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(dataset.n));
  put_le(buf, static_cast<std::uint32_t>(dataset.side), 4);
  put_le(buf, static_cast<std::uint32_t>(dataset.size()), 4);
  const std::vector<std::size_t> shape(dataset.n, dataset.side);
  for (const auto& t : dataset.examples) {
    if (t.shape() != shape) throw Error("dataset examples do not share one shape");
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_le(buf, bits, 4);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing " + path);
}

Dataset load_voxels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  const std::string buf(std::istreambuf_iterator<char>(in), {});
  if (buf.size() < kHeader)
    throw Error(path + ": truncated header, expected " + std::to_string(kHeader) + " bytes, found " +
                std::to_string(buf.size()));
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw Error(path + ": bad magic, not a VOXL file");
  const auto version = static_cast<std::uint8_t>(buf[4]);
  if (version != kVersion) throw Error(path + ": unsupported VOXL version " + std::to_string(version));
  Dataset ds;
  ds.n = static_cast<std::uint8_t>(buf[5]);
  ds.side = get_le(buf, 6, 4);
  const std::size_t count = get_le(buf, 10, 4);
  if (ds.n < 1 || ds.n > 3) throw Error(path + ": dimensionality must be 1, 2 or 3");
  if (ds.side < 1) throw Error(path + ": side must be positive");
  if (count == 0) throw Error(path + ": file holds zero examples");
  std::size_t voxels = 1;
  for (std::size_t a = 0; a < ds.n; ++a) voxels *= ds.side;
  const std::size_t expected = kHeader + count * voxels * 4;
  if (buf.size() != expected)
    throw Error(path + ": expected " + std::to_string(expected) + " bytes, found " + std::to_string(buf.size()));
  const std::vector<std::size_t> shape(ds.n, ds.side);
  std::size_t at = kHeader;
  ds.examples.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    std::vector<double> vals(voxels);
    for (auto& v : vals) {
      const std::uint32_t bits = get_le(buf, at, 4);
      at += 4;
      float f;
      std::memcpy(&f, &bits, 4);
      v = f;
    }
    ds.examples.emplace_back(shape, std::move(vals));
  }
  return ds;
}

}  // namespace scalelab
