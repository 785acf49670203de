#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "punr/model.hpp"

namespace punr {

// Linear warmup from 0 to peak over round(warmup_ratio * total_steps) steps,
// then linear decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

// One decoupled-weight-decay Adam update of `param` in place. `step` is the
// 1-based update count used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                  std::size_t step, double lr, const AdamWConfig& cfg, double weight_decay);

// Biases and layer-norm gains are excluded from weight decay.
bool uses_weight_decay(const std::string& param_name);

class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamWConfig cfg);

  // Applies one update from the accumulated gradients (missing grad = 0),
  // then clears them. Throws NumericError naming a parameter with a NaN/Inf grad.
  void step(double lr);
  void zero_grad();
  void scale_grads(double factor);

  std::size_t step_count() const { return step_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  const AdamMoments& moments(std::size_t i) const { return moments_.at(i); }

 private:
  std::vector<NamedTensor> params_;
  std::vector<AdamMoments> moments_;
  AdamWConfig cfg_;
  std::size_t step_ = 0;
};

}  // namespace punr
