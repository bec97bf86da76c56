#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ckm/envgen.hpp"
#include "ckm/grid.hpp"

namespace ckm::baselines {

// An observed sample at fractional grid coordinates. For SuperRes the sample sits at the
// centre of its m x m block.
struct ObservedPoint {
  double row = 0.0;
  double col = 0.0;
  double value = 0.0;
  int cell = -1;  // row-major source cell when the sample is exactly one cell, else -1
};

// Observed samples in row-major order. Cells flagged in `exclude` are dropped.
std::vector<ObservedPoint> observed_points(const Observation& obs, const Mask* exclude = nullptr);

// ---- least squares ----

// x = A^T (A A^T)^-1 y using the structure of each operator.
Image ls_reconstruct(const Observation& obs);
// Same estimator on an explicit matrix; throws NumericalError (with the condition number)
// when A A^T is numerically singular.
Eigen::VectorXd ls_reconstruct_dense(const Eigen::MatrixXd& a, const Eigen::VectorXd& y);

// ---- interpolation ----

enum class Interp { Knn, Bilinear, Bicubic, Idw };

struct InterpolatorConfig {
  Interp method = Interp::Knn;
  int k = 4;           // KNN neighbours; IDW neighbourhood size (0 = all points)
  double power = 2.0;  // IDW exponent
  void validate() const;
};

// One output cell expressed as a weighted sum of observation indices.
struct Stencil {
  std::vector<int> index;
  std::vector<double> weight;
};

// Weights used for the cell (row, col). Observed cells return a unit stencil.
Stencil interpolation_stencil(const Observation& obs, const InterpolatorConfig& cfg, int row, int col);
Image interpolate(const Observation& obs, const InterpolatorConfig& cfg);

// Keys cubic convolution kernel, a = -0.5.
double cubic_kernel(double x);

// ---- Kriging ----

struct Variogram {
  double sill = 1.0;    // total sill, nugget included
  double range = 1.0;   // exponential decay length
  double nugget = 0.0;

  void validate() const;
  // gamma(0) = 0, gamma(h > 0) = nugget + (sill - nugget)(1 - exp(-h/range))
  double operator()(double h) const;
};

struct LagBin {
  double lag = 0.0;         // mean pair distance in the bin
  double semivariance = 0.0;
  long long pairs = 0;
};

struct VariogramFit {
  Variogram variogram;
  std::vector<LagBin> bins;  // non-empty bins only
  bool degenerate = false;   // all observations identical
};

inline constexpr int kVariogramBins = 12;
VariogramFit fit_variogram(const Observation& obs, const Mask* exclude = nullptr);
// Same fit on an explicit point set, bins spanning [0, max_lag].
VariogramFit fit_variogram(const std::vector<ObservedPoint>& pts, double max_lag);

struct KrigingResult {
  Image estimate;
  int fallback_cells = 0;  // cells solved by IDW because the Kriging system was singular
};

inline constexpr int kKrigingNeighbours = 16;
// Ordinary Kriging weights for one target over its `k` nearest points; last entry is the
// Lagrange multiplier. Empty when the system is singular.
std::optional<Eigen::VectorXd> kriging_weights(const std::vector<ObservedPoint>& nbrs, double row, double col,
                                               const Variogram& vg);
KrigingResult kriging_reconstruct(const Observation& obs, const Variogram& vg, int k = kKrigingNeighbours);

// ---- spatial correlation model ----

struct PathLossFit {
  double k_db = 0.0;
  double n_pl = 0.0;
  double shadow_var = 0.0;     // o
  double corr_dist = 1.0;      // d
  double multipath_var = 0.0;  // sigma^2
  envgen::Cell tx;

  double path_loss(double row, double col) const;
};

struct GainSample {
  double row = 0.0;
  double col = 0.0;
  double gain_db = 0.0;
};

// Least-squares (K, n); (o, d) from the residual semivariance; sigma^2 = var(residual) - o.
PathLossFit fit_path_loss(const std::vector<GainSample>& samples, envgen::Cell tx);

// Path-loss trend plus the conditional mean of the residual given the k nearest residuals.
// Observed cells are reproduced exactly; with o = 0 other cells get the bare path-loss curve.
std::vector<double> spatial_model_predict(const PathLossFit& fit, const std::vector<GainSample>& samples,
                                          const std::vector<std::pair<double, double>>& targets,
                                          int k = kKrigingNeighbours);

// Pixel-space wrapper: observations become dB through `map`, prediction is mapped back and clamped.
Image spatial_model_reconstruct(const Observation& obs, const ValueMap& map, envgen::Cell tx,
                                const Mask* exclude = nullptr);

// ---- Gaussian prior (MAP / MMSE) ----

inline constexpr std::size_t kGaussianOracleCells = 32 * 32;

struct GaussianPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  // Whitening factor L with S = L L^T, filled by prepare(). A prepared prior skips the
  // per-call PSD check.
  Eigen::MatrixXd factor;

  void validate() const;
  void prepare();
  // Constant mean with exponential covariance o*exp(-h/d) on a rows x cols grid.
  static GaussianPrior exponential(int rows, int cols, double mean, double variance, double corr_dist,
                                   double jitter = 1e-9);
  // Sample moments of a set of images, with `shrink` * average variance added on the diagonal.
  static GaussianPrior empirical(const std::vector<Image>& images, double shrink = 1e-3);
};

// Closed form mu + S A^T (A S A^T + s^2 I)^-1 (y - A mu).
Image mmse_reconstruct(const Observation& obs, const GaussianPrior& prior);
// Maximizer of p(y|x) p(x), solved in the whitened coordinates of the prior.
Image map_reconstruct(const Observation& obs, const GaussianPrior& prior);

}  // namespace ckm::baselines
