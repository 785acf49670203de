#include "punr/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "punr/error.hpp"

namespace punr {

double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio) {
  if (total_steps == 0) throw ConfigError("lr_at: total_steps must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("lr_at: warmup_ratio must lie in [0, 1)");
  }
  if (step > total_steps) throw ContractError("lr_at: step beyond total_steps");
  auto warmup =
      static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total_steps) + 0.5));
  // Keep at least one decay step so step == total_steps still lands on 0.
  warmup = std::min(warmup, total_steps - 1);
  if (step < warmup) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void adamw_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                  std::size_t step, double lr, const AdamWConfig& cfg, double weight_decay) {
  if (moments.first.size() != param.size()) {
    moments.first.assign(param.size(), 0.0);
    moments.second.assign(param.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    param[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + weight_decay * param[i]);
  }
}

bool uses_weight_decay(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !(ends_with(".bias") || ends_with(".gain"));
}

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig cfg)
    : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {}

void AdamW::step(double lr) {
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, t] = params_[i];
    const double wd = uses_weight_decay(name) ? cfg_.weight_decay : 0.0;
    adamw_update(t.mutable_values(), t.grad(), moments_[i], step_, lr, cfg_, wd);
  }
  zero_grad();
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace punr

namespace punr {

void AdamW::scale_grads(double factor) {
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (double& g : t.mutable_grad()) g *= factor;
  }
}

}  // namespace punr
