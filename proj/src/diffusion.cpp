#include "ckm/diffusion.hpp"

#include <cmath>
#include <sstream>

namespace ckm::diffusion {

namespace {

void require_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("diffusion time " + std::to_string(t) + " outside [0,1]");
}

void require_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": sizes " + std::to_string(a) + " and " + std::to_string(b) + " differ");
}

}  // namespace

void DdmSchedule::validate() const {
  if (steps < 1) throw RangeError("sampling steps must be >= 1");
  if (!(t_min > 0.0 && t_min <= dt()))
    throw RangeError("smallest time step must lie in (0, 1/S]; got " + std::to_string(t_min) + " with S = " + std::to_string(steps));
}

void ddm_forward_sample(const double* z0, const double* eps, double t, double* out, std::size_t n) {
  require_time(t);
  const double a = 1.0 - t, b = std::sqrt(t);
  for (std::size_t i = 0; i < n; ++i) out[i] = a * z0[i] + b * eps[i];
}

std::vector<double> ddm_forward_sample(const std::vector<double>& z0, double t, const std::vector<double>& eps) {
  require_sizes(z0.size(), eps.size(), "ddm_forward_sample");
  std::vector<double> out(z0.size());
  ddm_forward_sample(z0.data(), eps.data(), t, out.data(), z0.size());
  return out;
}

ReverseCoefficients ddm_reverse_coefficients(double t, double dt) {
  require_time(t);
  if (!(dt > 0.0 && dt <= t + 1e-15))
    throw RangeError("reverse step needs 0 < dt <= t, got dt = " + std::to_string(dt) + ", t = " + std::to_string(t));
  ReverseCoefficients k;
  k.c = dt;
  k.eps = dt / std::sqrt(t);
  // Final step (t == dt) injects no noise.
  k.noise = std::sqrt(std::max(0.0, dt * (t - dt) / t));
  return k;
}

std::vector<double> ddm_reverse_step(const std::vector<double>& zt, double t, double dt, const std::vector<double>& c_hat,
                                     const std::vector<double>& eps_hat, const std::vector<double>& noise) {
  require_sizes(zt.size(), c_hat.size(), "ddm_reverse_step");
  require_sizes(zt.size(), eps_hat.size(), "ddm_reverse_step");
  require_sizes(zt.size(), noise.size(), "ddm_reverse_step");
  const auto k = ddm_reverse_coefficients(t, dt);
  std::vector<double> out(zt.size());
  for (std::size_t i = 0; i < zt.size(); ++i) out[i] = zt[i] - k.c * c_hat[i] - k.eps * eps_hat[i] + k.noise * noise[i];
  return out;
}

void OracleHeads::operator()(const std::vector<double>& zt, double t, std::vector<double>& c,
                             std::vector<double>& eps) const {
  require_sizes(zt.size(), z0.size(), "oracle heads");
  c.resize(zt.size());
  eps.resize(zt.size());
  const double s = std::sqrt(t);
  for (std::size_t i = 0; i < zt.size(); ++i) {
    c[i] = -z0[i];
    eps[i] = (zt[i] - (1.0 - t) * z0[i]) / s;
  }
}

std::vector<double> ddm_oracle_sample(const std::vector<double>& z0, const std::vector<double>& z1,
                                      const DdmSchedule& sch, Rng* rng) {
  sch.validate();
  OracleHeads heads{z0};
  std::vector<double> z = z1, c, eps, noise(z1.size(), 0.0);
  std::normal_distribution<double> nd;
  for (int i = sch.steps; i >= 1; --i) {
    const double t = sch.time_of(i);
    heads(z, t, c, eps);
    if (rng)
      for (double& v : noise) v = nd(*rng);
    z = ddm_reverse_step(z, t, sch.dt(), c, eps, noise);
  }
  return z;
}

DdpmSchedule DdpmSchedule::linear(int steps, double beta_1, double beta_T) {
  if (steps < 1) throw RangeError("DDPM needs at least one step");
  DdpmSchedule s;
  double ab = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double b = steps == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * (t - 1) / (steps - 1);
    s.beta.push_back(b);
    ab *= 1.0 - b;
    s.alpha_bar.push_back(ab);
  }
  s.validate();
  return s;
}

double DdpmSchedule::ab(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > steps()) throw RangeError("DDPM step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

double DdpmSchedule::sigma2(int t) const {
  const double b = beta.at(static_cast<std::size_t>(t - 1));
  return (1.0 - ab(t - 1)) / (1.0 - ab(t)) * b;
}

void DdpmSchedule::validate() const {
  if (beta.empty() || beta.size() != alpha_bar.size()) throw RangeError("DDPM schedule is empty or inconsistent");
  for (std::size_t i = 0; i < beta.size(); ++i) {
    if (!(beta[i] > 0.0 && beta[i] < 1.0)) throw RangeError("DDPM betas must lie in (0,1)");
    if (i > 0 && !(beta[i] >= beta[i - 1])) throw RangeError("DDPM betas must be non-decreasing");
  }
}

std::vector<double> ddpm_forward(const std::vector<double>& x0, int t, const std::vector<double>& eps,
                                 const DdpmSchedule& sch) {
  require_sizes(x0.size(), eps.size(), "ddpm_forward");
  if (t < 1 || t > sch.steps()) throw RangeError("DDPM step " + std::to_string(t) + " out of range");
  const double a = std::sqrt(sch.ab(t)), b = std::sqrt(1.0 - sch.ab(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> ddpm_reverse_step(const std::vector<double>& xt, int t, const std::vector<double>& eps_hat,
                                      const DdpmSchedule& sch, const std::vector<double>& noise) {
  require_sizes(xt.size(), eps_hat.size(), "ddpm_reverse_step");
  require_sizes(xt.size(), noise.size(), "ddpm_reverse_step");
  if (t < 1 || t > sch.steps()) throw RangeError("DDPM step " + std::to_string(t) + " out of range");
  const double b = sch.beta[static_cast<std::size_t>(t - 1)];
  const double inv_sqrt_a = 1.0 / std::sqrt(1.0 - b);
  const double k = b / std::sqrt(1.0 - sch.ab(t));
  const double sigma = std::sqrt(sch.sigma2(t));
  std::vector<double> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = inv_sqrt_a * (xt[i] - k * eps_hat[i]) + sigma * noise[i];
  return out;
}

std::string ScaleCodec::id() const {
  std::ostringstream os;
  os << "scale" << factor_;
  return os.str();
}

std::unique_ptr<Codec> make_codec(const std::string& id) {
  if (id == "identity") return std::make_unique<IdentityCodec>();
  if (id == "downsample2") return std::make_unique<DownsampleCodec>();
  if (id.rfind("scale", 0) == 0) {
    const double f = id.size() > 5 ? std::stod(id.substr(5)) : 2.0;
    if (!(f > 0.0)) throw RangeError("scale codec factor must be positive");
    return std::make_unique<ScaleCodec>(f);
  }
  throw UnsupportedError("unknown codec '" + id + "' (identity, scale<k>, downsample2)");
}

double codec_roundtrip_mse(const Codec& codec, const std::vector<Image>& images) {
  if (images.empty()) throw PreconditionError("codec check needs images");
  ad::NoGradGuard ng;
  double total = 0.0;
  std::size_t n = 0;
  for (const Image& im : images) {
    const auto x = ad::Tensor::from({1, 1, im.rows, im.cols}, im.data);
    const auto y = codec.decode(codec.encode(x));
    if (y.shape() != x.shape()) throw ShapeError("codec round trip changed the shape");
    for (std::size_t i = 0; i < im.size(); ++i) {
      const double d = y.data()[i] - im.data[i];
      total += d * d;
    }
    n += im.size();
  }
  return total / static_cast<double>(n);
}

double require_codec(const Codec& codec, const std::vector<Image>& images, double threshold) {
  const double e = codec_roundtrip_mse(codec, images);
  if (!(e <= threshold))
    throw PreconditionError("codec " + codec.id() + " round-trip MSE " + std::to_string(e) + " exceeds " + std::to_string(threshold));
  return e;
}

}  // namespace ckm::diffusion
