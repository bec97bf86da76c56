#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ckm/tensor.hpp"

namespace ckm::selftest {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Central-difference gradient check. `loss` rebuilds the scalar from the current values of
// `inputs`; every input must be a requires_grad leaf. The error of one tensor is
// max |analytic - numeric| divided by the largest |numeric| over all inputs (floored at
// 1e-8), so parameters with a structurally zero gradient (a bias feeding a GroupNorm) are
// judged on the scale of the loss rather than on round-off. The result is the largest over
// all tensors. `max_entries` > 0 probes that many evenly spaced entries.
struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;  // input index of the worst tensor
};
GradCheck gradcheck(const std::function<ad::Tensor()>& loss, const std::vector<ad::Tensor>& inputs, double h = 1e-5,
                     std::size_t max_entries = 0);

Check forward_marginals();      // decoupled forward process moments
Check reverse_identity();       // oracle reverse steps
Check autodiff();               // every op and the training loss against finite differences
Check degradation_operators();  // structured operators against their dense matrices
Check baseline_oracles();       // LS optimality, Kriging exactness, MAP = MMSE, path-loss recovery
Check metric_oracles();         // metrics against scalar-loop references

std::vector<Check> run_all();

}  // namespace ckm::selftest
