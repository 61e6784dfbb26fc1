#include "scalelab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scalelab/rng.hpp"

namespace scalelab {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.n = 3;
  c.K = 50;
  c.side = 16;
  c.latent = 128;
  c.encoder = {{7, 32}, {5, 32}, {3, 32}};
  return c;
}

void ModelConfig::validate() const {
  if (n < 1 || n > 3) throw Error("model dimensionality must be 1, 2 or 3");
  if (K < 1) throw Error("model needs K >= 1");
  if (latent < 1) throw Error("latent size must be >= 1");
  if (side < 2) throw Error("grid side must be >= 2");
  std::size_t s = side;
  for (const auto& c : encoder) {
    if (c.kernel < 1 || c.filters < 1) throw Error("convolution kernel and filter count must be >= 1");
    if (c.kernel > s)
      throw Error("convolution kernel " + std::to_string(c.kernel) + " exceeds feature side " + std::to_string(s));
    s = s - c.kernel + 1;
  }
}

GridSpec ModelConfig::grid() const {
  GridSpec g;
  g.n = n;
  g.side = side;
  return g;
}

std::size_t param_count(std::size_t n, std::size_t K) { return (n * n + 3 * n + 2) * K / 2; }

HeadWidths head_widths(std::size_t n, std::size_t K) { return {K, K * n, K * n, K * correlation_count(n)}; }

std::vector<Tensor*> ModelWeights::tensors() {
  std::vector<Tensor*> out;
  for (auto& c : conv) {
    out.push_back(&c.filters);
    out.push_back(&c.bias);
  }
  for (DenseLayer* d : {&project, &alpha_head, &mean_head, &stddev_head, &corr_head}) {
    out.push_back(&d->weight);
    out.push_back(&d->bias);
  }
  return out;
}

std::vector<const Tensor*> ModelWeights::tensors() const {
  auto mut = const_cast<ModelWeights*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> ModelWeights::tensor_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    names.push_back("conv" + std::to_string(i) + ".filters");
    names.push_back("conv" + std::to_string(i) + ".bias");
  }
  for (const char* d : {"project", "alpha_head", "mean_head", "stddev_head", "corr_head"}) {
    names.push_back(std::string(d) + ".weight");
    names.push_back(std::string(d) + ".bias");
  }
  return names;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t total = 0;
  for (const Tensor* t : tensors()) total += t->size();
  return total;
}

ModelWeights ModelWeights::zeros_like() const {
  ModelWeights z = *this;
  for (Tensor* t : z.tensors()) *t = Tensor::zeros_like(*t);
  return z;
}

std::vector<double> ModelWeights::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Tensor* t : tensors()) flat.insert(flat.end(), t->values().begin(), t->values().end());
  return flat;
}

void ModelWeights::assign_flat(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw Error("flat parameter vector has the wrong length");
  std::size_t off = 0;
  for (Tensor* t : tensors()) {
    std::memcpy(t->data(), flat.data() + off, t->size() * sizeof(double));
    off += t->size();
  }
}

std::uint64_t ModelWeights::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor* t : tensors()) h = hash_values(t->values(), h);
  return h;
}

bool ModelWeights::identical(const ModelWeights& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i]->identical(*b[i])) return false;
  return true;
}

bool ModelWeights::all_finite() const {
  for (const Tensor* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

namespace {

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

// Flat spatial offsets for a valid (unpadded, stride 1) n-d convolution.
struct ConvGeometry {
  std::size_t in_side = 0, out_side = 0, kernel = 0, in_ch = 0, out_ch = 0;
  std::vector<std::size_t> out_base;    // input spatial index of each output's corner
  std::vector<std::size_t> tap_offset;  // input spatial offset of each kernel tap

  std::size_t taps() const { return tap_offset.size(); }
  std::size_t positions() const { return out_base.size(); }
};

ConvGeometry make_geometry(std::size_t n, std::size_t in_side, std::size_t kernel, std::size_t in_ch,
                           std::size_t out_ch) {
  ConvGeometry g;
  g.in_side = in_side;
  g.out_side = in_side - kernel + 1;
  g.kernel = kernel;
  g.in_ch = in_ch;
  g.out_ch = out_ch;
  auto spatial = [&](std::size_t flat, std::size_t side_of_flat) {
    std::size_t idx = 0, stride = 1;
    for (std::size_t a = 0; a < n; ++a) {
      idx += (flat % side_of_flat) * stride;
      flat /= side_of_flat;
      stride *= in_side;
    }
    return idx;
  };
  g.out_base.resize(ipow(g.out_side, n));
  for (std::size_t p = 0; p < g.out_base.size(); ++p) g.out_base[p] = spatial(p, g.out_side);
  g.tap_offset.resize(ipow(kernel, n));
  for (std::size_t t = 0; t < g.tap_offset.size(); ++t) g.tap_offset[t] = spatial(t, kernel);
  return g;
}

std::vector<ConvGeometry> encoder_geometry(const ModelConfig& config) {
  std::vector<ConvGeometry> geo;
  std::size_t side = config.side, ch = 1;
  for (const auto& c : config.encoder) {
    geo.push_back(make_geometry(config.n, side, c.kernel, ch, c.filters));
    side = geo.back().out_side;
    ch = c.filters;
  }
  return geo;
}

std::size_t feature_count(const ModelConfig& config) {
  std::size_t side = config.side, ch = 1;
  for (const auto& c : config.encoder) {
    side = side - c.kernel + 1;
    ch = c.filters;
  }
  return ipow(side, config.n) * ch;
}

// pre = conv(in) + bias; out = relu(pre). Layouts are channel-last.
void conv_forward(const ConvGeometry& g, const ConvLayer& layer, std::span<const double> in, std::vector<double>& pre,
                  std::vector<double>& out) {
  const std::size_t T = g.taps(), C = g.in_ch, F = g.out_ch;
  pre.assign(g.positions() * F, 0.0);
  out.assign(g.positions() * F, 0.0);
  const double* w = layer.filters.data();
  for (std::size_t p = 0; p < g.positions(); ++p) {
    for (std::size_t f = 0; f < F; ++f) {
      double acc = layer.bias[f];
      for (std::size_t t = 0; t < T; ++t) {
        const double* src = in.data() + (g.out_base[p] + g.tap_offset[t]) * C;
        const double* wr = w + (f * T + t) * C;
        for (std::size_t c = 0; c < C; ++c) acc += wr[c] * src[c];
      }
      pre[p * F + f] = acc;
      out[p * F + f] = relu(acc);
    }
  }
}

// grad_out is d loss / d relu output; fills filter/bias grads and, when
// grad_in is non-null, d loss / d input.
void conv_backward(const ConvGeometry& g, const ConvLayer& layer, std::span<const double> in,
                   std::span<const double> pre, std::span<const double> grad_out, ConvLayer& grad,
                   std::vector<double>* grad_in) {
  const std::size_t T = g.taps(), C = g.in_ch, F = g.out_ch;
  double* gw = grad.filters.data();
  const double* w = layer.filters.data();
  if (grad_in) grad_in->assign(in.size(), 0.0);
  for (std::size_t p = 0; p < g.positions(); ++p) {
    for (std::size_t f = 0; f < F; ++f) {
      const double d = pre[p * F + f] > 0.0 ? grad_out[p * F + f] : 0.0;
      if (d == 0.0) continue;
      grad.bias[f] += d;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t base = (g.out_base[p] + g.tap_offset[t]) * C;
        for (std::size_t c = 0; c < C; ++c) gw[(f * T + t) * C + c] += d * in[base + c];
        if (grad_in)
          for (std::size_t c = 0; c < C; ++c) (*grad_in)[base + c] += w[(f * T + t) * C + c] * d;
      }
    }
  }
}

std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> in) {
  const std::size_t O = layer.outputs(), I = layer.inputs();
  std::vector<double> out(O);
  const double* w = layer.weight.data();
  for (std::size_t o = 0; o < O; ++o) {
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < I; ++i) acc += w[o * I + i] * in[i];
    out[o] = acc;
  }
  return out;
}

// Accumulates d loss / d in into grad_in.
void dense_backward(const DenseLayer& layer, std::span<const double> in, std::span<const double> grad_out,
                    DenseLayer& grad, std::span<double> grad_in) {
  const std::size_t O = layer.outputs(), I = layer.inputs();
  const double* w = layer.weight.data();
  double* gw = grad.weight.data();
  for (std::size_t o = 0; o < O; ++o) {
    const double d = grad_out[o];
    grad.bias[o] += d;
    for (std::size_t i = 0; i < I; ++i) {
      gw[o * I + i] += d * in[i];
      grad_in[i] += w[o * I + i] * d;
    }
  }
}

struct EncoderTrace {
  std::vector<std::vector<double>> conv_in;  // input of each conv layer
  std::vector<std::vector<double>> conv_pre;
  std::vector<double> features;
  std::vector<double> latent_pre;
  std::vector<double> latent;
};

void check_input(const Tensor& x, const ModelConfig& config) {
  if (x.shape() != config.input_shape()) throw Error("input tensor shape does not match the model grid");
}

EncoderTrace run_encoder(const Tensor& x, const ModelWeights& w, const ModelConfig& config) {
  check_input(x, config);
  if (w.conv.size() != config.encoder.size()) throw Error("weights do not match the encoder descriptor");
  EncoderTrace tr;
  const auto geo = encoder_geometry(config);
  std::vector<double> act(x.values().begin(), x.values().end());
  for (std::size_t l = 0; l < geo.size(); ++l) {
    std::vector<double> pre, out;
    conv_forward(geo[l], w.conv[l], act, pre, out);
    tr.conv_in.push_back(std::move(act));
    tr.conv_pre.push_back(std::move(pre));
    act = std::move(out);
  }
  tr.features = std::move(act);
  tr.latent_pre = dense_forward(w.project, tr.features);
  tr.latent.resize(tr.latent_pre.size());
  for (std::size_t i = 0; i < tr.latent.size(); ++i) tr.latent[i] = relu(tr.latent_pre[i]);
  return tr;
}

struct HeadTrace {
  std::vector<double> alpha_pre, mean_pre, stddev_pre, corr_pre;
  MixtureParams params;
};

HeadTrace run_heads(std::span<const double> y, const ModelWeights& w, const ModelConfig& config) {
  if (y.size() != w.project.outputs()) throw Error("latent vector has the wrong length");
  HeadTrace h;
  h.alpha_pre = dense_forward(w.alpha_head, y);
  h.mean_pre = dense_forward(w.mean_head, y);
  h.stddev_pre = dense_forward(w.stddev_head, y);
  h.corr_pre = dense_forward(w.corr_head, y);
  h.params.n = config.n;
  h.params.K = config.K;
  h.params.alpha = softmax(h.alpha_pre);
  h.params.mu = tanh_act(h.mean_pre);
  h.params.sigma = sigmoid(h.stddev_pre);
  h.params.rho = sigmoid(h.corr_pre);
  return h;
}

std::vector<PreparedComponent> prepare_or_diverge(const MixtureParams& params) {
  try {
    return prepare_components(params);
  } catch (const NotPositiveDefinite& e) {
    throw Diverged(DivergenceCause::PDFailure, e.what());
  }
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (std::isnan(v)) throw Diverged(DivergenceCause::NaN, std::string("NaN in ") + what);
    if (std::isinf(v)) throw Diverged(DivergenceCause::Inf, std::string("Inf in ") + what);
  }
}

DenseLayer make_dense(std::size_t out, std::size_t in) { return {Tensor({out, in}), Tensor({out})}; }

ModelWeights shaped_zero_weights(const ModelConfig& config) {
  ModelWeights w;
  std::size_t ch = 1;
  for (const auto& c : config.encoder) {
    std::vector<std::size_t> shape{c.filters};
    for (std::size_t a = 0; a < config.n; ++a) shape.push_back(c.kernel);
    shape.push_back(ch);
    w.conv.push_back({Tensor(shape), Tensor({c.filters})});
    ch = c.filters;
  }
  const auto hw = head_widths(config.n, config.K);
  w.project = make_dense(config.latent, feature_count(config));
  w.alpha_head = make_dense(hw.alpha, config.latent);
  w.mean_head = make_dense(hw.mean, config.latent);
  w.stddev_head = make_dense(hw.stddev, config.latent);
  w.corr_head = make_dense(hw.correlation, config.latent);
  return w;
}

}  // namespace

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights w = shaped_zero_weights(config);
  const Rng root(seed, streams::kInit);
  std::uint64_t index = 0;
  auto fill = [&](Tensor& t, std::size_t fan_in, std::size_t fan_out) {
    Rng rng = root.substream(index++);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.values()) v = rng.uniform(-a, a);
  };
  for (std::size_t l = 0; l < w.conv.size(); ++l) {
    const std::size_t taps = ipow(config.encoder[l].kernel, config.n);
    const std::size_t in_ch = w.conv[l].filters.shape().back();
    fill(w.conv[l].filters, taps * in_ch, taps * config.encoder[l].filters);
    ++index;  // bias stays zero
  }
  for (DenseLayer* d : {&w.project, &w.alpha_head, &w.mean_head, &w.stddev_head, &w.corr_head}) {
    fill(d->weight, d->inputs(), d->outputs());
    ++index;
  }
  return w;
}

std::vector<double> encode(const Tensor& x, const ModelWeights& w, const ModelConfig& config) {
  return run_encoder(x, w, config).latent;
}

MixtureParams heads(std::span<const double> y, const ModelWeights& w, const ModelConfig& config) {
  return run_heads(y, w, config).params;
}

double msle(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw Error("msle operands have different shapes");
  if (pred.empty()) throw Error("msle of empty tensors");
  std::vector<double> sq(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(pred[i] > -1.0) || !(target[i] > -1.0))
      throw Error("msle requires entries greater than -1 (index " + std::to_string(i) + ")");
    const double r = std::log1p(pred[i]) - std::log1p(target[i]);
    sq[i] = r * r;
  }
  return tree_sum(sq) / static_cast<double>(sq.size());
}

ForwardResult forward(const Tensor& x, const ModelWeights& w, const ModelConfig& config) {
  const auto enc = run_encoder(x, w, config);
  ForwardResult r;
  r.params = run_heads(enc.latent, w, config).params;
  try {
    r.reconstruction = render_grid(r.params, config.grid());
  } catch (const NotPositiveDefinite& e) {
    throw Diverged(DivergenceCause::PDFailure, e.what());
  }
  r.loss = msle(r.reconstruction, x);
  return r;
}

BackwardResult backward(const Tensor& x, const ModelWeights& w, const ModelConfig& config) {
  const auto enc = run_encoder(x, w, config);
  const auto hd = run_heads(enc.latent, w, config);
  const MixtureParams& mp = hd.params;
  const auto comps = prepare_or_diverge(mp);
  const GridSpec grid = config.grid();
  const std::size_t n = config.n, K = config.K, V = grid.voxel_count();

  // Pass 1: component densities and displacements at every voxel.
  std::vector<double> dens(K * V), disp(K * V * n);
  Tensor recon(grid.shape());
  for (std::size_t v = 0; v < V; ++v) {
    const auto c = grid.voxel_center(v);
    const std::span<const double> pt(c.data(), n);
    double total = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      const double d = comps[i].density(pt, std::span<double>(disp.data() + (i * V + v) * n, n));
      dens[i * V + v] = d;
      total += mp.alpha[i] * d;
    }
    recon[v] = total;
  }

  BackwardResult out;
  out.loss = msle(recon, x);

  // Pass 2: per-component moments of the loss gradient over voxels,
  // A0 = sum g N, A1 = sum g N d, A2 = sum g N d d^T (upper triangle).
  const std::size_t tri = n * (n + 1) / 2;
  const std::size_t stride = 1 + n + tri;
  TreeAccumulator acc(K * stride);
  std::vector<double> row(K * stride);
  const double inv_v = 1.0 / static_cast<double>(V);
  for (std::size_t v = 0; v < V; ++v) {
    const double p = recon[v];
    const double g = 2.0 * (std::log1p(p) - std::log1p(x[v])) / (1.0 + p) * inv_v;
    for (std::size_t i = 0; i < K; ++i) {
      const double gn = g * dens[i * V + v];
      const double* d = disp.data() + (i * V + v) * n;
      double* r = row.data() + i * stride;
      r[0] = gn;
      for (std::size_t a = 0; a < n; ++a) r[1 + a] = gn * d[a];
      std::size_t k = 1 + n;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) r[k++] = gn * d[a] * d[b];
    }
    acc.add(row);
  }
  const auto moments = acc.result();

  std::vector<double> d_alpha(K), d_mu(K * n), d_sigma(K * n, 0.0), d_rho(K * correlation_count(n), 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    const double* m = moments.data() + i * stride;
    const Matrix& P = comps[i].precision;
    const double a0 = m[0];
    d_alpha[i] = a0;
    Matrix a2(n, n);
    std::size_t k = 1 + n;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a; b < n; ++b) {
        a2(a, b) = m[k];
        a2(b, a) = m[k];
        ++k;
      }
    for (std::size_t a = 0; a < n; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) s += P(a, b) * m[1 + b];
      d_mu[i * n + a] = mp.alpha[i] * s;
    }
    // dL/dS (entries treated as independent) = alpha/2 (P A2 P - A0 P).
    const Matrix pap = P * a2 * P;
    Matrix G(n, n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) G(a, b) = 0.5 * mp.alpha[i] * (pap(a, b) - a0 * P(a, b));
    const auto sig = mp.stddev(i);
    const auto rho = mp.correlation(i);
    for (std::size_t a = 0; a < n; ++a) {
      d_sigma[i * n + a] += 2.0 * sig[a] * G(a, a);
      for (std::size_t b = a + 1; b < n; ++b) {
        const std::size_t ci = correlation_index(n, a, b);
        const double gsym = G(a, b) + G(b, a);
        d_rho[i * correlation_count(n) + ci] = gsym * sig[a] * sig[b];
        d_sigma[i * n + a] += gsym * rho[ci] * sig[b];
        d_sigma[i * n + b] += gsym * rho[ci] * sig[a];
      }
    }
  }

  // Head activations.
  const auto dz_alpha = softmax_backward(mp.alpha, d_alpha);
  std::vector<double> dz_mean(d_mu.size()), dz_std(d_sigma.size()), dz_corr(d_rho.size());
  for (std::size_t j = 0; j < dz_mean.size(); ++j) dz_mean[j] = d_mu[j] * (1.0 - mp.mu[j] * mp.mu[j]);
  for (std::size_t j = 0; j < dz_std.size(); ++j) dz_std[j] = d_sigma[j] * mp.sigma[j] * (1.0 - mp.sigma[j]);
  for (std::size_t j = 0; j < dz_corr.size(); ++j) dz_corr[j] = d_rho[j] * mp.rho[j] * (1.0 - mp.rho[j]);

  ModelWeights& gw = out.gradient;
  gw = w.zeros_like();
  std::vector<double> dy(enc.latent.size(), 0.0);
  dense_backward(w.alpha_head, enc.latent, dz_alpha, gw.alpha_head, dy);
  dense_backward(w.mean_head, enc.latent, dz_mean, gw.mean_head, dy);
  dense_backward(w.stddev_head, enc.latent, dz_std, gw.stddev_head, dy);
  dense_backward(w.corr_head, enc.latent, dz_corr, gw.corr_head, dy);

  std::vector<double> dz0(dy.size());
  for (std::size_t j = 0; j < dy.size(); ++j) dz0[j] = enc.latent_pre[j] > 0.0 ? dy[j] : 0.0;
  std::vector<double> dfeat(enc.features.size(), 0.0);
  dense_backward(w.project, enc.features, dz0, gw.project, dfeat);

  const auto geo = encoder_geometry(config);
  std::vector<double> grad_act = std::move(dfeat);
  for (std::size_t l = geo.size(); l-- > 0;) {
    std::vector<double> grad_in;
    conv_backward(geo[l], w.conv[l], enc.conv_in[l], enc.conv_pre[l], grad_act, gw.conv[l],
                  l > 0 ? &grad_in : nullptr);
    grad_act = std::move(grad_in);
  }

  check_finite(std::span<const double>(&out.loss, 1), "loss");
  for (const Tensor* t : gw.tensors()) check_finite(t->values(), "gradient");
  return out;
}

BackwardResult batch_backward(std::span<const Tensor> batch, const ModelWeights& w, const ModelConfig& config) {
  if (batch.empty()) throw Error("batch_backward of an empty batch");
  const std::size_t P = w.parameter_count();
  TreeAccumulator acc(P + 1);
  for (const Tensor& x : batch) {
    auto r = backward(x, w, config);
    auto flat = r.gradient.flatten();
    flat.push_back(r.loss);
    acc.add(flat);
  }
  auto sum = acc.result();
  const double b = static_cast<double>(batch.size());
  BackwardResult out;
  out.loss = sum.back() / b;
  sum.pop_back();
  for (double& v : sum) v /= b;
  out.gradient = w.zeros_like();
  out.gradient.assign_flat(sum);
  return out;
}

namespace {

constexpr char kMagic[4] = {'D', 'D', 'W', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  void need(std::size_t bytes, const char* what) const {
    if (pos_ + bytes > data_.size())
      throw Error(std::string("checkpoint truncated while reading ") + what + ": need " +
                  std::to_string(pos_ + bytes) + " bytes, file has " + std::to_string(data_.size()));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "tensor values");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n, "header");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelWeights& w) {
  std::string buf(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(config.n));
  put_u32(buf, static_cast<std::uint32_t>(config.K));
  put_u32(buf, static_cast<std::uint32_t>(config.side));
  put_u32(buf, static_cast<std::uint32_t>(config.latent));
  put_u32(buf, static_cast<std::uint32_t>(config.encoder.size()));
  for (const auto& c : config.encoder) {
    put_u32(buf, static_cast<std::uint32_t>(c.kernel));
    put_u32(buf, static_cast<std::uint32_t>(c.filters));
  }
  for (const Tensor* t : w.tensors()) {
    put_u32(buf, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : t->values()) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(4) != std::string(kMagic, 4)) throw Error("not a DDW1 checkpoint: " + path);
  Checkpoint ck;
  ck.config.n = r.u32("config");
  ck.config.K = r.u32("config");
  ck.config.side = r.u32("config");
  ck.config.latent = r.u32("config");
  const auto layers = r.u32("config");
  ck.config.encoder.clear();
  for (std::uint32_t l = 0; l < layers; ++l) {
    ConvSpec c;
    c.kernel = r.u32("config");
    c.filters = r.u32("config");
    ck.config.encoder.push_back(c);
  }
  ck.config.validate();
  ck.weights = shaped_zero_weights(ck.config);
  for (Tensor* t : ck.weights.tensors()) {
    const auto rank = r.u32("tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32("tensor shape");
    if (shape != t->shape()) throw Error("checkpoint tensor shape does not match its config");
    for (double& v : t->values()) v = r.f64();
  }
  if (!r.done()) throw Error("checkpoint has trailing bytes: " + path);
  return ck;
}

}  // namespace scalelab
