#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "scalelab/model.hpp"

namespace scalelab {

enum class ScheduleMode { Constant, LinearRule, LinearRuleWithWarmup };

std::string_view to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(std::string_view text);

struct Schedule {
  ScheduleMode mode = ScheduleMode::Constant;
  double base_lr = 0.00105;
  unsigned k = 1;  // worker scaling factor
  double warmup_epochs = 5.0;
  std::size_t steps_per_epoch = 1;

  void validate() const;
};

/// Constant: eta. LinearRule: k * eta. Warmup: eta * (1 + (k - 1) * min(step / ramp, 1))
/// with ramp = warmup_epochs * steps_per_epoch, interpolated per step.
double lr_at(const Schedule& schedule, std::size_t global_step);

/// w -= lr * grad, elementwise. Throws Diverged if any result is not finite.
void sgd_step(std::span<double> w, std::span<const double> grad, double lr);
void sgd_step(ModelWeights& w, const ModelWeights& grad, double lr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t parameters = 0) : m(parameters, 0.0), v(parameters, 0.0) {}
};

/// Bias-corrected Adam without learning-rate decay.
void adam_step(std::span<double> w, std::span<const double> grad, double lr, AdamState& state);
void adam_step(ModelWeights& w, const ModelWeights& grad, double lr, AdamState& state);

struct LinearRuleComparison {
  std::vector<double> after_small_steps;  // k steps of size eta
  std::vector<double> after_big_step;     // one step of size k * eta
};

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Plain SGD from w0: k sequential steps at eta, each evaluating the gradient
/// at the current point, against one step at k * eta whose gradient is the
/// mean of the k minibatch gradients all evaluated at w0.
LinearRuleComparison verify_linear_rule_equivalence(unsigned k, double eta, std::span<const double> w0,
                                                    const GradientFn& gradient);

}  // namespace scalelab
