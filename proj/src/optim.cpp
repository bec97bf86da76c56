#include "ckm/optim.hpp"

#include <cmath>

namespace ckm::optim {

void AdamWConfig::validate() const {
  if (!(lr_start > 0.0) || !(lr_end >= 0.0)) throw RangeError("learning rates must be positive");
  if (total_steps < 1) throw RangeError("schedule length must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw RangeError("Adam betas must lie in [0,1)");
  if (!(eps > 0.0)) throw RangeError("Adam eps must be positive");
  if (weight_decay < 0.0) throw RangeError("weight decay must be >= 0");
}

double AdamWConfig::lr_at(long step) const {
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lr_start + (lr_end - lr_start) * f;
}

AdamW::AdamW(nn::ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& [name, t] : params_.items) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step() {
  for (const auto& [name, t] : params_.items)
    for (double g : t.grad())
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + name + " at step " + std::to_string(step_));
  const double lr = cfg_.lr_at(step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.items.size(); ++k) {
    auto& t = params_.items[k].second;
    auto& p = t.data();
    const auto& g = t.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    const bool has = !g.empty();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      p[i] *= 1.0 - lr * cfg_.weight_decay;
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace ckm::optim
