#include "ckm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace ckm::metrics {

namespace {

void check_batches(const Batch& x, const Batch& xh) {
  if (x.empty()) throw PreconditionError("metrics need at least one image");
  if (x.size() != xh.size())
    throw ShapeError("batch sizes differ: " + std::to_string(x.size()) + " vs " + std::to_string(xh.size()));
  for (std::size_t i = 0; i < x.size(); ++i) require_same_shape(x[i], xh[i], "metric inputs");
}

bool counted(const std::vector<Mask>& subset, std::size_t img, std::size_t cell) {
  return subset.empty() || subset[img].data[cell] != 0;
}

// Sum of squared errors and counted cells of one image.
std::pair<double, std::size_t> sse(const Image& a, const Image& b, const std::vector<Mask>& subset, std::size_t img,
                                   double scale = 1.0) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!counted(subset, img, k)) continue;
    const double d = scale * (a.data[k] - b.data[k]);
    s += d * d;
    ++n;
  }
  return {s, n};
}

double batch_mse(const Batch& x, const Batch& xh, const std::vector<Mask>& subset, double scale) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [si, ni] = sse(x[i], xh[i], subset, i, scale);
    s += si;
    n += ni;
  }
  if (n == 0) throw PreconditionError("no pixels left to evaluate after excluding buildings");
  return s / static_cast<double>(n);
}

}  // namespace

std::vector<Mask> pixel_subset(const Batch& truth, const MetricOptions& opt) {
  std::vector<Mask> out;
  if (!opt.exclude_buildings) return out;
  out.reserve(truth.size());
  for (const Image& t : truth) {
    Mask m(t.rows, t.cols, 1);
    for (std::size_t k = 0; k < t.size(); ++k) m.data[k] = t.data[k] == 0.0 ? 0 : 1;
    out.push_back(std::move(m));
  }
  return out;
}

double mse_pixel(const Batch& x, const Batch& xh, const MetricOptions& opt) {
  check_batches(x, xh);
  return batch_mse(x, xh, pixel_subset(x, opt), 1.0);
}

double rmse(const Batch& x, const Batch& xh, const MetricOptions& opt) { return std::sqrt(mse_pixel(x, xh, opt)); }

NmseResult nmse(const Batch& x, const Batch& xh, const MetricOptions& opt) {
  check_batches(x, xh);
  const auto subset = pixel_subset(x, opt);
  NmseResult r;
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      if (!counted(subset, i, k)) continue;
      const double d = x[i].data[k] - xh[i].data[k];
      num += d * d;
      den += x[i].data[k] * x[i].data[k];
    }
    if (den <= 0.0) {
      ++r.excluded;
      continue;
    }
    total += num / den;
    ++used;
  }
  r.value = used > 0 ? total / used : std::numeric_limits<double>::quiet_NaN();
  return r;
}

double mse_gain(const Batch& x, const Batch& xh, const ValueMap& map, const MetricOptions& opt) {
  check_batches(x, xh);
  map.validate();
  const auto subset = pixel_subset(x, opt);
  // Gains are min_db + span * pixel; the offset cancels in the difference, so the
  // error is taken on the dB values themselves.
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      if (!counted(subset, i, k)) continue;
      const double d = (map.min_db + map.span() * x[i].data[k]) - (map.min_db + map.span() * xh[i].data[k]);
      s += d * d;
      ++n;
    }
  if (n == 0) throw PreconditionError("no pixels left to evaluate after excluding buildings");
  return s / static_cast<double>(n);
}

PsnrResult psnr(const Batch& x, const Batch& xh, const MetricOptions& opt) {
  check_batches(x, xh);
  const auto subset = pixel_subset(x, opt);
  PsnrResult r;
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [s, n] = sse(x[i], xh[i], subset, i);
    if (n == 0) throw PreconditionError("image " + std::to_string(i) + " has no pixels left to evaluate");
    const double mse = s / static_cast<double>(n);
    if (mse == 0.0) {
      ++r.capped;
      total += opt.psnr_cap_db;
    } else {
      total += 10.0 * std::log10(1.0 / mse);
    }
  }
  r.value = total / static_cast<double>(x.size());
  return r;
}

double ssim_global(const Image& x, const Image& y, const MetricOptions& opt, const Mask* subset) {
  require_same_shape(x, y, "ssim inputs");
  double n = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (subset && !subset->data[k]) continue;
    mx += x.data[k];
    my += y.data[k];
    n += 1.0;
  }
  if (n == 0.0) throw PreconditionError("ssim over an empty pixel set");
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (subset && !subset->data[k]) continue;
    const double dx = x.data[k] - mx, dy = y.data[k] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  const double c1 = std::pow(opt.ssim_k1 * opt.ssim_range, 2), c2 = std::pow(opt.ssim_k2 * opt.ssim_range, 2);
  return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim_windowed(const Image& x, const Image& y, const MetricOptions& opt) {
  require_same_shape(x, y, "ssim inputs");
  const int wr = std::min(11, x.rows), wc = std::min(11, x.cols);
  const double sigma = 1.5;
  std::vector<double> w(static_cast<std::size_t>(wr) * wc);
  double ws = 0.0;
  for (int i = 0; i < wr; ++i)
    for (int j = 0; j < wc; ++j) {
      const double di = i - (wr - 1) / 2.0, dj = j - (wc - 1) / 2.0;
      ws += w[static_cast<std::size_t>(i) * wc + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
    }
  for (double& v : w) v /= ws;
  const double c1 = std::pow(opt.ssim_k1 * opt.ssim_range, 2), c2 = std::pow(opt.ssim_k2 * opt.ssim_range, 2);
  double total = 0.0;
  int count = 0;
  for (int r0 = 0; r0 + wr <= x.rows; ++r0)
    for (int c0 = 0; c0 + wc <= x.cols; ++c0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < wr; ++i)
        for (int j = 0; j < wc; ++j) {
          const double wk = w[static_cast<std::size_t>(i) * wc + j];
          const double a = x(r0 + i, c0 + j), b = y(r0 + i, c0 + j);
          mx += wk * a;
          my += wk * b;
          sxx += wk * a * a;
          syy += wk * b * b;
          sxy += wk * a * b;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

double ssim(const Batch& x, const Batch& xh, const MetricOptions& opt) {
  check_batches(x, xh);
  const auto subset = pixel_subset(x, opt);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    total += opt.windowed_ssim ? ssim_windowed(x[i], xh[i], opt)
                               : ssim_global(x[i], xh[i], opt, subset.empty() ? nullptr : &subset[i]);
  return total / static_cast<double>(x.size());
}

namespace {

struct ClippedSqrt {
  Eigen::MatrixXd root;
  int clipped = 0;
  double most_negative = 0.0;
};

ClippedSqrt sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in Fréchet distance");
  Eigen::VectorXd ev = es.eigenvalues();
  ClippedSqrt out;
  // Eigenvalues within round-off of zero are zero; their square roots (~1e-8) would
  // otherwise dominate the trace of a rank-deficient product.
  const double tol = static_cast<double>(ev.size()) * std::numeric_limits<double>::epsilon() * ev.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol) {  // negative beyond round-off: the input was not PSD
      out.most_negative = std::min(out.most_negative, ev[i]);
      ++out.clipped;
    }
    if (ev[i] <= tol) ev[i] = 0.0;
  }
  out.root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  return out;
}

}  // namespace

FrechetResult frechet_from_moments(const Eigen::VectorXd& mu_r, const Eigen::MatrixXd& cov_r,
                                   const Eigen::VectorXd& mu_c, const Eigen::MatrixXd& cov_c) {
  const auto d = mu_r.size();
  if (mu_c.size() != d || cov_r.rows() != d || cov_r.cols() != d || cov_c.rows() != d || cov_c.cols() != d)
    throw ShapeError("Fréchet moments have inconsistent dimensions");
  if (!mu_r.allFinite() || !mu_c.allFinite() || !cov_r.allFinite() || !cov_c.allFinite())
    throw RangeError("Fréchet distance inputs must be finite");
  // sqrt(S_r S_c) has the same trace as sqrt(S_r^1/2 S_c S_r^1/2), which is symmetric.
  const ClippedSqrt sr = sym_sqrt(cov_r);
  const ClippedSqrt prod = sym_sqrt(sr.root * cov_c * sr.root);
  FrechetResult r;
  r.clipped = sr.clipped + prod.clipped;
  r.most_negative = std::min(sr.most_negative, prod.most_negative);
  r.value = (mu_r - mu_c).squaredNorm() + cov_r.trace() + cov_c.trace() - 2.0 * prod.root.trace();
  r.value = std::max(r.value, 0.0);
  return r;
}

FrechetResult frechet_distance(const Eigen::MatrixXd& real, const Eigen::MatrixXd& recon) {
  if (real.rows() < 2 || recon.rows() < 2) throw PreconditionError("Fréchet distance needs at least 2 samples per side");
  if (real.cols() != recon.cols()) throw ShapeError("feature dimensions differ");
  if (real.cols() > 256) throw CapacityError("feature dimension above 256");
  if (!real.allFinite() || !recon.allFinite()) throw RangeError("features must be finite");
  auto moments = [](const Eigen::MatrixXd& f) {
    Eigen::VectorXd mu = f.colwise().mean().transpose();
    Eigen::MatrixXd c = f.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(f.rows() - 1);
    return std::pair{mu, cov};
  };
  auto [mr, cr] = moments(real);
  auto [mc, cc] = moments(recon);
  return frechet_from_moments(mr, cr, mc, cc);
}

Eigen::VectorXd builtin_features(const Image& img) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);
  const int h = img.rows, w = img.cols;
  for (int i = 0; i < kPoolSide; ++i)
    for (int j = 0; j < kPoolSide; ++j) {
      const int r0 = i * h / kPoolSide, r1 = std::max(r0 + 1, ((i + 1) * h + kPoolSide - 1) / kPoolSide);
      const int c0 = j * w / kPoolSide, c1 = std::max(c0 + 1, ((j + 1) * w + kPoolSide - 1) / kPoolSide);
      double s = 0.0;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) s += img(r, c);
      f[i * kPoolSide + j] = s / ((r1 - r0) * (c1 - c0));
    }
  auto px = [&](int r, int c) { return img(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1)); };
  const int base = kPoolSide * kPoolSide;
  int dark = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double gx = 0.5 * (px(r, c + 1) - px(r, c - 1));
      const double gy = 0.5 * (px(r + 1, c) - px(r - 1, c));
      const double mag = std::hypot(gx, gy);
      if (mag > 0.0) {
        double a = std::atan2(gy, gx);
        if (a < 0) a += 2 * std::numbers::pi;
        const int bin = std::min(kOrientationBins - 1, static_cast<int>(a / (2 * std::numbers::pi) * kOrientationBins));
        const int quadrant = (2 * r >= h ? 2 : 0) + (2 * c >= w ? 1 : 0);
        f[base + quadrant * kOrientationBins + bin] += mag;
      }
      if (img(r, c) <= 2.0 / 255.0) ++dark;
    }
  f.segment(base, 4 * kOrientationBins) /= static_cast<double>(h) * w;
  f[kFeatureDim - 1] = static_cast<double>(dark) / (static_cast<double>(h) * w);
  return f;
}

Eigen::MatrixXd builtin_features(const Batch& images) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), kFeatureDim);
  for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = builtin_features(images[i]);
  return out;
}

std::string MetricsReport::flag_string() const {
  std::string s;
  for (const auto& f : flags) s += (s.empty() ? "" : ";") + f;
  return s;
}

MetricsReport evaluate(const Batch& truth, const Batch& recon, const ValueMap& map, const MetricOptions& opt,
                       const FeatureExtractor& extractor) {
  check_batches(truth, recon);
  MetricsReport r;
  r.value_map = map;
  r.n_images = static_cast<int>(truth.size());
  r.mse_pixel = mse_pixel(truth, recon, opt);
  r.rmse = std::sqrt(r.mse_pixel);
  const NmseResult nm = nmse(truth, recon, opt);
  r.nmse = nm.value;
  if (nm.excluded) r.flags.push_back("nmse_zero_power=" + std::to_string(nm.excluded));
  r.mse_gain = mse_gain(truth, recon, map, opt);
  const PsnrResult ps = psnr(truth, recon, opt);
  r.psnr = ps.value;
  if (ps.capped) r.flags.push_back("psnr_capped=" + std::to_string(ps.capped));
  r.ssim = ssim(truth, recon, opt);
  if (opt.windowed_ssim) r.flags.push_back("ssim_windowed");
  if (opt.exclude_buildings) r.flags.push_back("exclude_buildings");
  if (truth.size() < 2) {
    r.fd = std::numeric_limits<double>::quiet_NaN();
    r.flags.push_back("fd_undefined");
  } else {
    const FeatureExtractor& fx = extractor ? extractor : FeatureExtractor([](const Batch& b) { return builtin_features(b); });
    const FrechetResult fr = frechet_distance(fx(truth), fx(recon));
    r.fd = fr.value;
    if (fr.clipped) {
      std::ostringstream os;
      os << "fd_clipped=" << fr.clipped << "(min " << std::setprecision(3) << fr.most_negative << ")";
      r.flags.push_back(os.str());
    }
  }
  return r;
}

namespace {

std::string fmt(double v, int prec) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

void write_table(std::ostream& os, const std::string& title, const std::vector<ReportRow>& rows) {
  const std::vector<std::string> head{"Method", "MSE_pixel ↓", "RMSE ↓", "NMSE ↓", "MSE_gain ↓",
                                      "PSNR ↑",  "SSIM ↑",      "FD (handcrafted) ↓"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    if (!r.available) {
      std::vector<std::string> line{r.method};
      for (int i = 0; i < 7; ++i) line.push_back("n/a");
      cells.push_back(std::move(line));
      continue;
    }
    const auto& m = r.report;
    cells.push_back({r.method, fmt(m.mse_pixel, 4), fmt(m.rmse, 4), fmt(m.nmse, 4), fmt(m.mse_gain, 4),
                     fmt(m.psnr, 2), fmt(m.ssim, 2), fmt(m.fd, 4)});
  }
  // Display width counts code points so the arrows line up.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> wcol(head.size());
  for (std::size_t j = 0; j < head.size(); ++j) {
    wcol[j] = width(head[j]);
    for (const auto& line : cells) wcol[j] = std::max(wcol[j], width(line[j]));
  }
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t j = 0; j < line.size(); ++j) {
      const std::size_t pad = wcol[j] - width(line[j]);
      if (j == 0)
        os << line[j] << std::string(pad, ' ');
      else
        os << "  " << std::string(pad, ' ') << line[j];
    }
    os << '\n';
  };
  os << title << '\n';
  emit(head);
  std::size_t total = 0;
  for (auto w : wcol) total += w + 2;
  os << std::string(total - 2, '-') << '\n';
  for (const auto& line : cells) emit(line);
  for (const auto& r : rows)
    if (!r.note.empty() || !r.report.flags.empty())
      os << "  " << r.method << ": " << r.note << (r.note.empty() ? "" : " ") << r.report.flag_string() << '\n';
}

void write_csv(std::ostream& os, const std::vector<ReportRow>& rows, bool header) {
  if (header) os << "method,task,dataset,mse_pixel,rmse,nmse,mse_gain,psnr_db,ssim,fd,n_images,flags\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.task << ',' << r.dataset << ',';
    if (!r.available) {
      os << "n/a,n/a,n/a,n/a,n/a,n/a,n/a," << r.report.n_images << ',' << r.note << '\n';
      continue;
    }
    const auto& m = r.report;
    os << fmt(m.mse_pixel, 8) << ',' << fmt(m.rmse, 8) << ',' << fmt(m.nmse, 8) << ',' << fmt(m.mse_gain, 6) << ','
       << fmt(m.psnr, 6) << ',' << fmt(m.ssim, 6) << ',' << fmt(m.fd, 6) << ',' << m.n_images << ','
       << m.flag_string() << '\n';
  }
}

RatioCheck table_ratio_check(double mse_pixel, double mse_gain, double span, int decimals, double tolerance) {
  if (mse_pixel <= 0.0 || mse_gain <= 0.0 || span <= 0.0) throw RangeError("ratio check needs positive inputs");
  const double half = 0.5 * std::pow(10.0, -decimals);
  if (mse_pixel <= half) throw RangeError("pixel MSE below its rounding resolution");
  RatioCheck c;
  c.ratio = mse_gain / mse_pixel;
  c.ratio_low = (mse_gain - half) / (mse_pixel + half);
  c.ratio_high = (mse_gain + half) / (mse_pixel - half);
  c.expected = span * span;
  c.raw_deviation = std::abs(c.ratio - c.expected) / c.expected;
  if (c.expected < c.ratio_low)
    c.rounded_deviation = (c.ratio_low - c.expected) / c.expected;
  else if (c.expected > c.ratio_high)
    c.rounded_deviation = (c.expected - c.ratio_high) / c.expected;
  else
    c.rounded_deviation = 0.0;
  c.pass = c.rounded_deviation <= tolerance && c.raw_deviation <= tolerance;
  return c;
}

}  // namespace ckm::metrics
