#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ckm/grid.hpp"

namespace ckm::metrics {

using Batch = std::vector<Image>;

struct MetricOptions {
  bool exclude_buildings = false;  // drop cells whose ground truth is exactly 0 (building)
  bool windowed_ssim = false;      // 11x11 Gaussian-window SSIM instead of the global form
  double psnr_cap_db = 100.0;      // value used for images reconstructed exactly
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  double ssim_range = 1.0;
};

// Per-image masks of the cells that enter the metrics (1 = counted). Empty when
// every cell counts.
std::vector<Mask> pixel_subset(const Batch& truth, const MetricOptions& opt);

double mse_pixel(const Batch& x, const Batch& xh, const MetricOptions& opt = {});
double rmse(const Batch& x, const Batch& xh, const MetricOptions& opt = {});

struct NmseResult {
  double value = 0.0;
  int excluded = 0;  // zero-power ground-truth images left out of the mean
};
NmseResult nmse(const Batch& x, const Batch& xh, const MetricOptions& opt = {});

// Mean squared error of the gains in dB^2 after mapping pixels through `map`.
double mse_gain(const Batch& x, const Batch& xh, const ValueMap& map, const MetricOptions& opt = {});

struct PsnrResult {
  double value = 0.0;  // mean of per-image 10 log10(1 / mse_i)
  int capped = 0;      // images with zero error, counted at the cap
};
PsnrResult psnr(const Batch& x, const Batch& xh, const MetricOptions& opt = {});

double ssim(const Batch& x, const Batch& xh, const MetricOptions& opt = {});
double ssim_global(const Image& x, const Image& y, const MetricOptions& opt = {}, const Mask* subset = nullptr);
double ssim_windowed(const Image& x, const Image& y, const MetricOptions& opt = {});

struct FrechetResult {
  double value = 0.0;
  int clipped = 0;              // eigenvalues negative beyond round-off, set to zero
  double most_negative = 0.0;   // most negative eigenvalue before clipping
};

// Rows are samples, columns are feature dimensions.
FrechetResult frechet_distance(const Eigen::MatrixXd& real, const Eigen::MatrixXd& recon);
FrechetResult frechet_from_moments(const Eigen::VectorXd& mu_r, const Eigen::MatrixXd& cov_r,
                                   const Eigen::VectorXd& mu_c, const Eigen::MatrixXd& cov_c);

// Handcrafted features, not Inception: 8x8 adaptive average pool (64), per-quadrant
// magnitude-weighted gradient orientation histograms with 8 bins (32) and the fraction
// of dark (building) pixels (1).
inline constexpr int kPoolSide = 8;
inline constexpr int kOrientationBins = 8;
inline constexpr int kFeatureDim = kPoolSide * kPoolSide + 4 * kOrientationBins + 1;
Eigen::VectorXd builtin_features(const Image& img);
Eigen::MatrixXd builtin_features(const Batch& images);

using FeatureExtractor = std::function<Eigen::MatrixXd(const Batch&)>;
inline constexpr const char* kFdLabel = "FD (handcrafted)";

struct MetricsReport {
  double mse_pixel = 0.0;
  double rmse = 0.0;
  double nmse = 0.0;
  double mse_gain = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double fd = 0.0;
  int n_images = 0;
  ValueMap value_map;
  std::vector<std::string> flags;

  std::string flag_string() const;  // ';'-joined
};

MetricsReport evaluate(const Batch& truth, const Batch& recon, const ValueMap& map, const MetricOptions& opt = {},
                       const FeatureExtractor& extractor = {});

struct ReportRow {
  std::string method;
  std::string task;
  std::string dataset;
  MetricsReport report;
  bool available = true;  // false renders the metric cells as n/a
  std::string note;
};

void write_table(std::ostream& os, const std::string& title, const std::vector<ReportRow>& rows);
void write_csv(std::ostream& os, const std::vector<ReportRow>& rows, bool header = true);

// Cross-check of a published (mse_pixel, mse_gain) pair against the identity
// mse_gain = mse_pixel * span^2, given that both were rounded to `decimals`.
struct RatioCheck {
  double ratio = 0.0;        // reported gain / reported pixel
  double ratio_low = 0.0;    // smallest ratio consistent with the rounding
  double ratio_high = 0.0;   // largest ratio consistent with the rounding
  double expected = 0.0;     // span^2
  double raw_deviation = 0.0;       // |ratio - expected| / expected
  double rounded_deviation = 0.0;   // distance from expected to the interval, relative
  bool pass = false;         // both deviations <= tolerance
};
RatioCheck table_ratio_check(double mse_pixel, double mse_gain, double span, int decimals = 4,
                             double tolerance = 0.05);

}  // namespace ckm::metrics
