#pragma once

#include <vector>

#include "ckm/nn.hpp"

namespace ckm::optim {

struct AdamWConfig {
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  long total_steps = 1;  // length of the linear schedule; lr stays at lr_end afterwards
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
  double lr_at(long step) const;  // step counts from 0
};

class AdamW {
 public:
  AdamW(nn::ParamList params, AdamWConfig cfg);

  // One update from the current gradients. Parameters without a gradient are treated
  // as having a zero gradient. Non-finite gradients raise NumericalError naming the
  // parameter and leave every parameter untouched.
  void step();
  void zero_grad() { params_.zero_grad(); }

  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }
  const AdamWConfig& config() const { return cfg_; }
  const nn::ParamList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  double current_lr() const { return cfg_.lr_at(step_); }

 private:
  nn::ParamList params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace ckm::optim
