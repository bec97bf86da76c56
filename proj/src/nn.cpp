#include "ckm/nn.hpp"

#include <cmath>

namespace ckm::nn {

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items) n += t.numel();
  return n;
}

void ParamList::zero_grad() {
  for (auto& [name, t] : items) t.zero_grad();
}

Conv2d::Conv2d(int in, int out, int k, Rng& rng, int stride_, int padding_, double gain)
    : w(ad::init_param({out, in, k, k}, in * k * k, rng, gain)),
      b(Tensor::zeros({out}, true)),
      stride(stride_),
      padding(padding_ < 0 ? k / 2 : padding_) {}

void Conv2d::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".w", w);
  out.add(prefix + ".b", b);
}

Linear::Linear(int in, int out, Rng& rng, double gain)
    : w(ad::init_param({out, in}, in, rng, gain)), b(Tensor::zeros({out}, true)) {}

void Linear::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".w", w);
  out.add(prefix + ".b", b);
}

GroupNorm::GroupNorm(int channels, int max_groups)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {
  groups = 1;
  for (int g = std::min(max_groups, channels); g >= 1; --g)
    if (channels % g == 0) {
      groups = g;
      break;
    }
}

void GroupNorm::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
}

ResBlock::ResBlock(int in, int out, int emb_dim, Rng& rng)
    : norm1(in), norm2(out), conv1(in, out, 3, rng), conv2(out, out, 3, rng), emb(emb_dim, out, rng), has_skip(in != out) {
  if (has_skip) skip = Conv2d(in, out, 1, rng);
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb) const {
  Tensor h = conv1(ad::silu(norm1(x)));
  h = ad::add_channel(h, emb(temb));
  h = conv2(ad::silu(norm2(h)));
  return ad::add(has_skip ? skip(x) : x, h);
}

void ResBlock::params(const std::string& prefix, ParamList& out) const {
  norm1.params(prefix + ".norm1", out);
  conv1.params(prefix + ".conv1", out);
  emb.params(prefix + ".emb", out);
  norm2.params(prefix + ".norm2", out);
  conv2.params(prefix + ".conv2", out);
  if (has_skip) skip.params(prefix + ".skip", out);
}

Tensor timestep_embedding(const std::vector<double>& t, int dim, double max_period) {
  if (dim < 2 || dim % 2 != 0) throw RangeError("time embedding dimension must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> v(t.size() * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (int j = 0; j < half; ++j) {
      // Times live in [0,1]; scale so the fastest frequency still resolves small steps.
      const double freq = std::exp(-std::log(max_period) * j / half);
      const double a = 1000.0 * t[i] * freq;
      v[i * dim + j] = std::sin(a);
      v[i * dim + half + j] = std::cos(a);
    }
  return Tensor::from({static_cast<int>(t.size()), dim}, std::move(v));
}

}  // namespace ckm::nn
