#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ckm/tensor.hpp"

namespace ckm::nn {

using ad::Tensor;

// Named parameters in registration order.
struct ParamList {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }
  std::size_t scalar_count() const;
  void zero_grad();
};

struct Conv2d {
  Tensor w, b;
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int k, Rng& rng, int stride = 1, int padding = -1, double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return ad::conv2d(x, w, b, stride, padding); }
  void params(const std::string& prefix, ParamList& out) const;
};

struct Linear {
  Tensor w, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return ad::linear(x, w, b); }
  void params(const std::string& prefix, ParamList& out) const;
};

struct GroupNorm {
  Tensor gamma, beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(int channels, int max_groups = 8);
  Tensor operator()(const Tensor& x) const { return ad::group_norm(x, groups, gamma, beta); }
  void params(const std::string& prefix, ParamList& out) const;
};

// GroupNorm -> SiLU -> conv3x3, time embedding added per channel, GroupNorm -> SiLU -> conv3x3,
// plus a 1x1 projection of the input when the channel count changes.
struct ResBlock {
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2, skip;
  Linear emb;
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(int in, int out, int emb_dim, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& temb) const;
  void params(const std::string& prefix, ParamList& out) const;
};

// Sinusoidal embedding of scalar times, shape (n, dim).
Tensor timestep_embedding(const std::vector<double>& t, int dim, double max_period = 10000.0);

}  // namespace ckm::nn
