#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ckm/grid.hpp"
#include "ckm/tensor.hpp"

namespace ckm::diffusion {

// ---- decoupled diffusion (continuous time on [0,1]) ----

inline constexpr double kDefaultTimeFloor = 1e-4;

struct DdmSchedule {
  double t_min = kDefaultTimeFloor;  // smallest time step
  int steps = 50;                    // S, sampling interval 1/S

  double dt() const { return 1.0 / steps; }
  void validate() const;
  // Time of reverse step i = S..1 is i / S.
  double time_of(int i) const { return static_cast<double>(i) / steps; }
};

// z_t = (1 - t) z0 + sqrt(t) eps
void ddm_forward_sample(const double* z0, const double* eps, double t, double* out, std::size_t n);
std::vector<double> ddm_forward_sample(const std::vector<double>& z0, double t, const std::vector<double>& eps);

// Coefficients of z_{t-dt} = z_t - dt c - (dt / sqrt t) eps + sqrt(dt (t - dt) / t) xi.
struct ReverseCoefficients {
  double c = 0.0;
  double eps = 0.0;
  double noise = 0.0;
};
ReverseCoefficients ddm_reverse_coefficients(double t, double dt);
std::vector<double> ddm_reverse_step(const std::vector<double>& zt, double t, double dt,
                                     const std::vector<double>& c_hat, const std::vector<double>& eps_hat,
                                     const std::vector<double>& noise);

// Heads that know the clean signal: c = -z0, eps = (z_t - (1 - t) z0) / sqrt t.
struct OracleHeads {
  std::vector<double> z0;
  void operator()(const std::vector<double>& zt, double t, std::vector<double>& c, std::vector<double>& eps) const;
};

// Runs S reverse steps from z1 with oracle heads. A null rng injects no noise.
std::vector<double> ddm_oracle_sample(const std::vector<double>& z0, const std::vector<double>& z1,
                                      const DdmSchedule& sch, Rng* rng);

// ---- DDPM reference (discrete time) ----

struct DdpmSchedule {
  std::vector<double> beta;       // beta[t-1] for t = 1..T
  std::vector<double> alpha_bar;  // alpha_bar[t-1]

  static DdpmSchedule linear(int steps = 1000, double beta_1 = 1e-4, double beta_T = 0.02);
  int steps() const { return static_cast<int>(beta.size()); }
  double ab(int t) const;      // alpha_bar_t, with alpha_bar_0 = 1
  double sigma2(int t) const;  // (1 - ab_{t-1}) / (1 - ab_t) beta_t
  void validate() const;
};

std::vector<double> ddpm_forward(const std::vector<double>& x0, int t, const std::vector<double>& eps,
                                 const DdpmSchedule& sch);
// Mean 1/sqrt(alpha_t) (x_t - beta_t / sqrt(1 - ab_t) eps_hat) plus sigma_t * noise.
std::vector<double> ddpm_reverse_step(const std::vector<double>& xt, int t, const std::vector<double>& eps_hat,
                                      const DdpmSchedule& sch, const std::vector<double>& noise);

// ---- codecs ----

class Codec {
 public:
  virtual ~Codec() = default;
  virtual std::string id() const = 0;
  virtual ad::Tensor encode(const ad::Tensor& x) const = 0;  // (N,1,H,W) pixels
  virtual ad::Tensor decode(const ad::Tensor& z) const = 0;
  virtual int downscale() const { return 1; }  // latent side = pixel side / downscale()
};

class IdentityCodec final : public Codec {
 public:
  std::string id() const override { return "identity"; }
  ad::Tensor encode(const ad::Tensor& x) const override { return x; }
  ad::Tensor decode(const ad::Tensor& z) const override { return z; }
};

// Multiplies by `factor` on encode and divides on decode.
class ScaleCodec final : public Codec {
 public:
  explicit ScaleCodec(double factor = 2.0) : factor_(factor) {}
  std::string id() const override;
  ad::Tensor encode(const ad::Tensor& x) const override { return ad::scale(x, factor_); }
  ad::Tensor decode(const ad::Tensor& z) const override { return ad::scale(z, 1.0 / factor_); }

 private:
  double factor_;
};

// 2x average-pool encode, nearest-neighbour decode. Lossy.
class DownsampleCodec final : public Codec {
 public:
  std::string id() const override { return "downsample2"; }
  ad::Tensor encode(const ad::Tensor& x) const override { return ad::avg_pool2d(x, 2); }
  ad::Tensor decode(const ad::Tensor& z) const override { return ad::upsample_nearest(z, 2); }
  int downscale() const override { return 2; }
};

std::unique_ptr<Codec> make_codec(const std::string& id);

inline constexpr double kCodecMseThreshold = 0.05;
double codec_roundtrip_mse(const Codec& codec, const std::vector<Image>& images);
// Throws PreconditionError when the round trip is worse than `threshold`.
double require_codec(const Codec& codec, const std::vector<Image>& images, double threshold = kCodecMseThreshold);

}  // namespace ckm::diffusion
