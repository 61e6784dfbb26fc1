#include "scalelab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace scalelab {

std::string_view to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::Constant:
      return "constant";
    case ScheduleMode::LinearRule:
      return "linear";
    case ScheduleMode::LinearRuleWithWarmup:
      return "warmup";
  }
  return "unknown";
}

ScheduleMode parse_schedule_mode(std::string_view text) {
  if (text == "constant") return ScheduleMode::Constant;
  if (text == "linear") return ScheduleMode::LinearRule;
  if (text == "warmup") return ScheduleMode::LinearRuleWithWarmup;
  throw Error("unknown schedule '" + std::string(text) + "' (expected constant, linear or warmup)");
}

void Schedule::validate() const {
  if (!(base_lr > 0.0)) throw Error("base learning rate must be positive");
  if (k < 1) throw Error("scaling factor k must be >= 1");
  if (mode == ScheduleMode::LinearRuleWithWarmup && (!(warmup_epochs > 0.0) || steps_per_epoch == 0))
    throw Error("warmup needs positive warmup_epochs and steps_per_epoch");
}

double lr_at(const Schedule& s, std::size_t global_step) {
  const double k = static_cast<double>(s.k);
  switch (s.mode) {
    case ScheduleMode::Constant:
      return s.base_lr;
    case ScheduleMode::LinearRule:
      return k * s.base_lr;
    case ScheduleMode::LinearRuleWithWarmup: {
      const double ramp = s.warmup_epochs * static_cast<double>(s.steps_per_epoch);
      const double frac = std::min(static_cast<double>(global_step) / ramp, 1.0);
      return s.base_lr * (1.0 + (k - 1.0) * frac);
    }
  }
  return s.base_lr;
}

namespace {

void check_finite_update(std::span<const double> w) {
  for (double v : w) {
    if (std::isnan(v)) throw Diverged(DivergenceCause::NaN, "weight update produced NaN");
    if (std::isinf(v)) throw Diverged(DivergenceCause::Inf, "weight update produced Inf");
  }
}

}  // namespace

void sgd_step(std::span<double> w, std::span<const double> grad, double lr) {
  if (w.size() != grad.size()) throw Error("sgd_step shape mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - lr * grad[i];
  check_finite_update(w);
}

void sgd_step(ModelWeights& w, const ModelWeights& grad, double lr) {
  const auto ws = w.tensors();
  const auto gs = grad.tensors();
  if (ws.size() != gs.size()) throw Error("sgd_step structure mismatch");
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (!ws[i]->same_shape(*gs[i])) throw Error("sgd_step shape mismatch");
    sgd_step(ws[i]->values(), gs[i]->values(), lr);
  }
}

namespace {

void adam_update(std::span<double> w, std::span<const double> g, double lr, AdamState& s, std::size_t offset,
                 double bias1, double bias2) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    double& m = s.m[offset + i];
    double& v = s.v[offset + i];
    m = s.beta1 * m + (1.0 - s.beta1) * g[i];
    v = s.beta2 * v + (1.0 - s.beta2) * g[i] * g[i];
    const double m_hat = m / bias1;
    const double v_hat = v / bias2;
    w[i] = w[i] - lr * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

}  // namespace

void adam_step(std::span<double> w, std::span<const double> grad, double lr, AdamState& state) {
  if (w.size() != grad.size() || state.m.size() != w.size() || state.v.size() != w.size())
    throw Error("adam_step shape mismatch");
  ++state.t;
  const double t = static_cast<double>(state.t);
  adam_update(w, grad, lr, state, 0, 1.0 - std::pow(state.beta1, t), 1.0 - std::pow(state.beta2, t));
  check_finite_update(w);
}

void adam_step(ModelWeights& w, const ModelWeights& grad, double lr, AdamState& state) {
  const auto ws = w.tensors();
  const auto gs = grad.tensors();
  if (ws.size() != gs.size() || state.m.size() != w.parameter_count()) throw Error("adam_step structure mismatch");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (!ws[i]->same_shape(*gs[i])) throw Error("adam_step shape mismatch");
    adam_update(ws[i]->values(), gs[i]->values(), lr, state, offset, bias1, bias2);
    offset += ws[i]->size();
  }
  for (const Tensor* t : ws) check_finite_update(t->values());
}

LinearRuleComparison verify_linear_rule_equivalence(unsigned k, double eta, std::span<const double> w0,
                                                    const GradientFn& gradient) {
  if (k < 1) throw Error("k must be >= 1");
  LinearRuleComparison out;
  out.after_small_steps.assign(w0.begin(), w0.end());
  for (unsigned j = 0; j < k; ++j) {
    const auto g = gradient(out.after_small_steps);
    sgd_step(out.after_small_steps, g, eta);
  }

  // Mean of k minibatch gradients taken at w0.
  std::vector<std::vector<double>> grads;
  for (unsigned j = 0; j < k; ++j) grads.push_back(gradient(w0));
  std::vector<double> mean(w0.size());
  std::vector<double> column(k);
  for (std::size_t i = 0; i < w0.size(); ++i) {
    for (unsigned j = 0; j < k; ++j) column[j] = grads[j][i];
    mean[i] = tree_sum(column) / static_cast<double>(k);
  }
  out.after_big_step.assign(w0.begin(), w0.end());
  sgd_step(out.after_big_step, mean, static_cast<double>(k) * eta);
  return out;
}

}  // namespace scalelab
