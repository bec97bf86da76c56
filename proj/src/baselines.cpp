#include "ckm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ckm::baselines {

namespace {

double dist(double r0, double c0, double r1, double c1) { return std::hypot(r0 - r1, c0 - c1); }

// Indices of the k nearest points to (row, col); ties broken by point order (row-major).
std::vector<int> nearest(const std::vector<ObservedPoint>& pts, double row, double col, int k) {
  std::vector<std::pair<double, int>> d(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dr = pts[i].row - row, dc = pts[i].col - col;
    d[i] = {dr * dr + dc * dc, static_cast<int>(i)};
  }
  const auto kk = static_cast<std::size_t>(k <= 0 ? static_cast<int>(pts.size()) : std::min<int>(k, static_cast<int>(pts.size())));
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
  std::vector<int> out(kk);
  for (std::size_t i = 0; i < kk; ++i) out[i] = d[i].second;
  return out;
}

std::vector<int> cell_lookup(const std::vector<ObservedPoint>& pts, int rows, int cols) {
  std::vector<int> lut(static_cast<std::size_t>(rows) * cols, -1);
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts[i].cell >= 0) lut[static_cast<std::size_t>(pts[i].cell)] = static_cast<int>(i);
  return lut;
}

Stencil idw_stencil(const std::vector<ObservedPoint>& pts, const std::vector<int>& nbrs, double row, double col,
                    double power) {
  Stencil s;
  for (int j : nbrs) {
    if (dist(pts[j].row, pts[j].col, row, col) < 1e-12) return {{j}, {1.0}};
  }
  double total = 0.0;
  for (int j : nbrs) {
    const double w = std::pow(dist(pts[j].row, pts[j].col, row, col), -power);
    s.index.push_back(j);
    s.weight.push_back(w);
    total += w;
  }
  for (double& w : s.weight) w /= total;
  return s;
}

// Low-resolution source coordinate of a high-resolution cell (pixel-centre alignment).
double source_coord(int x, int m) { return (x + 0.5) / m - 0.5; }

int regular_factor(const Observation& obs) {
  if (obs.spec.kind == Task::SuperRes) return obs.spec.factor;
  if (obs.spec.kind == Task::Denoise) return 1;
  throw PreconditionError("bilinear and bicubic interpolation need a regular low-resolution grid (sr or denoise)");
}

double apply_stencil(const Stencil& s, const std::vector<ObservedPoint>& pts) {
  double v = 0.0;
  for (std::size_t i = 0; i < s.index.size(); ++i) v += s.weight[i] * pts[static_cast<std::size_t>(s.index[i])].value;
  return v;
}

}  // namespace

std::vector<ObservedPoint> observed_points(const Observation& obs, const Mask* exclude) {
  std::vector<ObservedPoint> pts;
  const auto& spec = obs.spec;
  if (obs.values.size() != spec.observation_size(obs.rows, obs.cols)) throw ShapeError("observation length does not match its operator");
  if (exclude && (exclude->rows != obs.rows || exclude->cols != obs.cols)) throw ShapeError("exclusion mask shape mismatch");
  auto excluded = [&](int cell) { return exclude && exclude->data[static_cast<std::size_t>(cell)]; };
  switch (spec.kind) {
    case Task::Denoise:
      for (int i = 0; i < obs.rows * obs.cols; ++i)
        if (!excluded(i)) pts.push_back({static_cast<double>(i / obs.cols), static_cast<double>(i % obs.cols), obs.values[i], i});
      break;
    case Task::Inpaint: {
      std::size_t k = 0;
      for (int i = 0; i < obs.rows * obs.cols; ++i) {
        if (!spec.observed.data[static_cast<std::size_t>(i)]) continue;
        const double v = obs.values[k++];
        if (!excluded(i)) pts.push_back({static_cast<double>(i / obs.cols), static_cast<double>(i % obs.cols), v, i});
      }
      break;
    }
    case Task::SuperRes: {
      const int m = spec.factor;
      const int lc = obs.cols / m;
      for (int i = 0; i < obs.rows / m; ++i)
        for (int j = 0; j < lc; ++j) {
          bool all_excluded = exclude != nullptr;
          for (int a = 0; a < m && all_excluded; ++a)
            for (int b = 0; b < m && all_excluded; ++b) all_excluded = excluded((i * m + a) * obs.cols + j * m + b);
          if (all_excluded) continue;
          const int cell = m == 1 ? i * obs.cols + j : -1;
          pts.push_back({i * m + (m - 1) / 2.0, j * m + (m - 1) / 2.0, obs.values[static_cast<std::size_t>(i) * lc + j], cell});
        }
      break;
    }
    case Task::Generate: break;
  }
  return pts;
}

Image ls_reconstruct(const Observation& obs) {
  const auto& spec = obs.spec;
  switch (spec.kind) {
    case Task::Denoise:
    case Task::Inpaint:
    case Task::Generate:
      // Row selectors satisfy A A^T = I, so A^+ = A^T; A = 0 has the zero minimum-norm solution.
      return pad_observation(obs);
    case Task::SuperRes: {
      // A A^T = I/m^2 so A^+ = m^2 A^T: every cell of a block takes the block observation.
      const Image lr = lowres_image(obs);
      const int m = spec.factor;
      Image out(obs.rows, obs.cols);
      for (int r = 0; r < obs.rows; ++r)
        for (int c = 0; c < obs.cols; ++c) out(r, c) = lr(r / m, c / m);
      return out;
    }
  }
  return {};
}

Eigen::VectorXd ls_reconstruct_dense(const Eigen::MatrixXd& a, const Eigen::VectorXd& y) {
  if (a.rows() != y.size()) throw ShapeError("A has " + std::to_string(a.rows()) + " rows but y has " + std::to_string(y.size()));
  if (a.rows() == 0) return Eigen::VectorXd::Zero(a.cols());
  const Eigen::MatrixXd gram = a * a.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < 1e12)) {
    std::ostringstream os;
    os << "A A^T is rank deficient (condition number " << cond << ")";
    throw NumericalError(os.str());
  }
  return a.transpose() * gram.ldlt().solve(y);
}

void InterpolatorConfig::validate() const {
  if (method == Interp::Knn && k < 1) throw PreconditionError("KNN needs K >= 1");
  if (method == Interp::Idw && !(power > 0.0)) throw PreconditionError("IDW power must be positive");
  if (method == Interp::Idw && k < 0) throw PreconditionError("IDW neighbourhood size must be >= 0");
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

Stencil interpolation_stencil(const Observation& obs, const InterpolatorConfig& cfg, int row, int col) {
  cfg.validate();
  if (cfg.method == Interp::Bilinear || cfg.method == Interp::Bicubic) {
    const int m = regular_factor(obs);
    const int lr = obs.rows / m, lc = obs.cols / m;
    const double u = source_coord(row, m), v = source_coord(col, m);
    const int r0 = static_cast<int>(std::floor(u)), c0 = static_cast<int>(std::floor(v));
    auto clampi = [](int x, int hi) { return std::clamp(x, 0, hi - 1); };
    Stencil s;
    if (cfg.method == Interp::Bilinear) {
      const double fr = u - r0, fc = v - c0;
      const int rs[2] = {clampi(r0, lr), clampi(r0 + 1, lr)};
      const int cs[2] = {clampi(c0, lc), clampi(c0 + 1, lc)};
      const double wr[2] = {1.0 - fr, fr}, wc[2] = {1.0 - fc, fc};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          s.index.push_back(rs[a] * lc + cs[b]);
          s.weight.push_back(wr[a] * wc[b]);
        }
    } else {
      for (int a = -1; a <= 2; ++a)
        for (int b = -1; b <= 2; ++b) {
          s.index.push_back(clampi(r0 + a, lr) * lc + clampi(c0 + b, lc));
          s.weight.push_back(cubic_kernel(u - (r0 + a)) * cubic_kernel(v - (c0 + b)));
        }
    }
    return s;
  }
  const auto pts = observed_points(obs);
  if (pts.empty()) throw PreconditionError("interpolation needs at least one observed point");
  const auto lut = cell_lookup(pts, obs.rows, obs.cols);
  const int here = lut[static_cast<std::size_t>(row) * obs.cols + col];
  if (here >= 0) return {{here}, {1.0}};
  if (cfg.method == Interp::Knn) {
    Stencil s;
    s.index = nearest(pts, row, col, cfg.k);
    s.weight.assign(s.index.size(), 1.0 / static_cast<double>(s.index.size()));
    return s;
  }
  return idw_stencil(pts, nearest(pts, row, col, cfg.k), row, col, cfg.power);
}

Image interpolate(const Observation& obs, const InterpolatorConfig& cfg) {
  cfg.validate();
  Image out(obs.rows, obs.cols);
  if (cfg.method == Interp::Bilinear || cfg.method == Interp::Bicubic) {
    regular_factor(obs);
    std::vector<ObservedPoint> lrpts(obs.values.size());
    for (std::size_t i = 0; i < lrpts.size(); ++i) lrpts[i].value = obs.values[i];
    for (int r = 0; r < obs.rows; ++r)
      for (int c = 0; c < obs.cols; ++c) out(r, c) = apply_stencil(interpolation_stencil(obs, cfg, r, c), lrpts);
    return out;
  }
  const auto pts = observed_points(obs);
  if (pts.empty()) throw PreconditionError("interpolation needs at least one observed point");
  const auto lut = cell_lookup(pts, obs.rows, obs.cols);
  for (int r = 0; r < obs.rows; ++r)
    for (int c = 0; c < obs.cols; ++c) {
      const int here = lut[static_cast<std::size_t>(r) * obs.cols + c];
      if (here >= 0) {
        out(r, c) = pts[static_cast<std::size_t>(here)].value;
        continue;
      }
      const auto nb = nearest(pts, r, c, cfg.k);
      if (cfg.method == Interp::Knn) {
        double s = 0.0;
        for (int j : nb) s += pts[static_cast<std::size_t>(j)].value;
        out(r, c) = s / static_cast<double>(nb.size());
      } else {
        out(r, c) = apply_stencil(idw_stencil(pts, nb, r, c, cfg.power), pts);
      }
    }
  return out;
}

void Variogram::validate() const {
  if (!(sill >= 0.0 && nugget >= 0.0 && range > 0.0 && nugget <= sill + 1e-12))
    throw PreconditionError("variogram needs sill >= nugget >= 0 and range > 0");
}

double Variogram::operator()(double h) const {
  if (h <= 0.0) return 0.0;
  return nugget + (sill - nugget) * (1.0 - std::exp(-h / range));
}

VariogramFit fit_variogram(const std::vector<ObservedPoint>& pts, double max_lag) {
  if (pts.size() < 10) throw PreconditionError("variogram fitting needs at least 10 observed points");
  if (!(max_lag > 0.0)) throw PreconditionError("max lag must be positive");
  VariogramFit fit;
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.value < b.value; });
  if (hi->value - lo->value <= 1e-15 * std::max(1.0, std::abs(hi->value))) {
    fit.degenerate = true;
    fit.variogram = {0.0, max_lag / kVariogramBins, 0.0};
    return fit;
  }
  const double width = max_lag / kVariogramBins;
  std::vector<double> sum_g(kVariogramBins, 0.0), sum_h(kVariogramBins, 0.0);
  std::vector<long long> count(kVariogramBins, 0);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double h = dist(pts[i].row, pts[i].col, pts[j].row, pts[j].col);
      if (h <= 0.0 || h > max_lag) continue;
      const int b = std::min(kVariogramBins - 1, static_cast<int>(h / width));
      const double d = pts[i].value - pts[j].value;
      sum_g[b] += 0.5 * d * d;
      sum_h[b] += h;
      ++count[b];
    }
  for (int b = 0; b < kVariogramBins; ++b)
    if (count[b] > 0) fit.bins.push_back({sum_h[b] / count[b], sum_g[b] / count[b], count[b]});
  if (fit.bins.empty()) throw PreconditionError("no point pairs within the lag range");

  // For a fixed range the model is linear in (nugget, partial sill); scan the range on a
  // log grid with nonnegative least squares, then refine by golden section.
  auto solve = [&](double range, double& nug, double& psill) {
    double sf = 0, sff = 0, sg = 0, sfg = 0;
    const double n = static_cast<double>(fit.bins.size());
    for (const auto& b : fit.bins) {
      const double f = 1.0 - std::exp(-b.lag / range);
      sf += f;
      sff += f * f;
      sg += b.semivariance;
      sfg += f * b.semivariance;
    }
    auto sse = [&](double a, double p) {
      double e = 0.0;
      for (const auto& b : fit.bins) {
        const double r = b.semivariance - a - p * (1.0 - std::exp(-b.lag / range));
        e += r * r;
      }
      return e;
    };
    double best = std::numeric_limits<double>::infinity();
    const double det = n * sff - sf * sf;
    if (std::abs(det) > 1e-14) {
      const double a = (sff * sg - sf * sfg) / det;
      const double p = (n * sfg - sf * sg) / det;
      if (a >= 0.0 && p >= 0.0) {
        nug = a;
        psill = p;
        best = sse(a, p);
      }
    }
    if (sff > 0.0) {
      const double p = std::max(0.0, sfg / sff);
      const double e = sse(0.0, p);
      if (e < best) {
        best = e;
        nug = 0.0;
        psill = p;
      }
    }
    const double a = std::max(0.0, sg / n);
    const double e = sse(a, 0.0);
    if (e < best) {
      best = e;
      nug = a;
      psill = 0.0;
    }
    return best;
  };
  const double rmin = width / 4.0, rmax = 4.0 * max_lag;
  constexpr int kGrid = 80;
  double best_r = rmin, best_e = std::numeric_limits<double>::infinity();
  double nug = 0, ps = 0;
  for (int i = 0; i <= kGrid; ++i) {
    const double r = rmin * std::pow(rmax / rmin, static_cast<double>(i) / kGrid);
    const double e = solve(r, nug, ps);
    if (e < best_e) {
      best_e = e;
      best_r = r;
    }
  }
  double a = std::log(best_r) - std::log(rmax / rmin) / kGrid, b = std::log(best_r) + std::log(rmax / rmin) / kGrid;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 60; ++it) {
    const double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    if (solve(std::exp(x1), nug, ps) < solve(std::exp(x2), nug, ps))
      b = x2;
    else
      a = x1;
  }
  double r = std::exp(0.5 * (a + b));
  if (solve(r, nug, ps) > best_e) r = best_r;
  solve(r, nug, ps);
  fit.variogram = {nug + ps, r, nug};
  return fit;
}

VariogramFit fit_variogram(const Observation& obs, const Mask* exclude) {
  return fit_variogram(observed_points(obs, exclude), 0.5 * std::hypot(obs.rows, obs.cols));
}

std::optional<Eigen::VectorXd> kriging_weights(const std::vector<ObservedPoint>& nbrs, double row, double col,
                                               const Variogram& vg) {
  const auto n = static_cast<Eigen::Index>(nbrs.size());
  Eigen::MatrixXd k(n + 1, n + 1);
  Eigen::VectorXd rhs(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = vg(dist(nbrs[i].row, nbrs[i].col, nbrs[j].row, nbrs[j].col));
    k(i, n) = 1.0;
    k(n, i) = 1.0;
    rhs(i) = vg(dist(nbrs[i].row, nbrs[i].col, row, col));
  }
  k(n, n) = 0.0;
  rhs(n) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) return std::nullopt;
  Eigen::VectorXd w = lu.solve(rhs);
  if (!w.allFinite() || (k * w - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) return std::nullopt;
  return w;
}

KrigingResult kriging_reconstruct(const Observation& obs, const Variogram& vg, int k) {
  vg.validate();
  const auto pts = observed_points(obs);
  if (pts.size() < 2) throw PreconditionError("Kriging needs at least two observed points");
  const auto lut = cell_lookup(pts, obs.rows, obs.cols);
  KrigingResult res{Image(obs.rows, obs.cols), 0};
  for (int r = 0; r < obs.rows; ++r)
    for (int c = 0; c < obs.cols; ++c) {
      const int here = lut[static_cast<std::size_t>(r) * obs.cols + c];
      if (here >= 0) {
        res.estimate(r, c) = pts[static_cast<std::size_t>(here)].value;
        continue;
      }
      const auto idx = nearest(pts, r, c, k);
      std::vector<ObservedPoint> nb;
      nb.reserve(idx.size());
      for (int j : idx) nb.push_back(pts[static_cast<std::size_t>(j)]);
      if (auto w = kriging_weights(nb, r, c, vg)) {
        double v = 0.0;
        for (std::size_t j = 0; j < nb.size(); ++j) v += (*w)(static_cast<Eigen::Index>(j)) * nb[j].value;
        res.estimate(r, c) = v;
      } else {
        ++res.fallback_cells;
        res.estimate(r, c) = apply_stencil(idw_stencil(pts, idx, r, c, 2.0), pts);
      }
    }
  return res;
}

double PathLossFit::path_loss(double row, double col) const {
  return k_db - 10.0 * n_pl * std::log10(std::max(dist(row, col, tx.row, tx.col), 1.0));
}

PathLossFit fit_path_loss(const std::vector<GainSample>& samples, envgen::Cell tx) {
  if (samples.size() < 3) throw PreconditionError("path-loss fitting needs at least three observations");
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = -10.0 * std::log10(std::max(dist(s.row, s.col, tx.row, tx.col), 1.0));
    y(i) = s.gain_db;
  }
  const double mean_x = x.col(1).mean();
  if ((x.col(1).array() - mean_x).square().sum() < 1e-12)
    throw NumericalError("path-loss regression is collinear: all observations at the same distance from the transmitter");
  const Eigen::Vector2d beta = x.colPivHouseholderQr().solve(y);
  PathLossFit fit;
  fit.k_db = beta(0);
  fit.n_pl = beta(1);
  fit.tx = tx;
  const Eigen::VectorXd r = y - x * beta;
  const double total = r.squaredNorm() / static_cast<double>(n);
  if (total < 1e-18) return fit;

  // (o, d) from the semivariance of the residuals, which is o(1 - exp(-h/d)) plus a nugget
  // under the exponential covariance and, unlike the raw covariance, does not depend on
  // the mean the regression removed.
  if (samples.size() >= 10) {
    std::vector<ObservedPoint> res(samples.size());
    double r0 = samples[0].row, r1 = r0, c0 = samples[0].col, c1 = c0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      res[i] = {samples[i].row, samples[i].col, r(static_cast<Eigen::Index>(i)), -1};
      r0 = std::min(r0, samples[i].row);
      r1 = std::max(r1, samples[i].row);
      c0 = std::min(c0, samples[i].col);
      c1 = std::max(c1, samples[i].col);
    }
    const VariogramFit vf = fit_variogram(res, 0.5 * std::hypot(r1 - r0 + 1.0, c1 - c0 + 1.0));
    if (!vf.degenerate) {
      fit.shadow_var = std::min(total, vf.variogram.sill - vf.variogram.nugget);
      fit.corr_dist = vf.variogram.range;
    }
  }
  fit.multipath_var = std::max(0.0, total - fit.shadow_var);
  return fit;
}

std::vector<double> spatial_model_predict(const PathLossFit& fit, const std::vector<GainSample>& samples,
                                          const std::vector<std::pair<double, double>>& targets, int k) {
  if (!(fit.shadow_var >= 0.0 && fit.multipath_var >= 0.0 && fit.corr_dist > 0.0))
    throw PreconditionError("invalid path-loss fit");
  std::vector<ObservedPoint> pts(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    pts[i] = {samples[i].row, samples[i].col, samples[i].gain_db - fit.path_loss(samples[i].row, samples[i].col), -1};
  std::vector<double> out(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto [row, col] = targets[t];
    double v = fit.path_loss(row, col);
    if ((fit.shadow_var > 0.0 || fit.multipath_var > 0.0) && !pts.empty()) {
      const auto idx = nearest(pts, row, col, k);
      const auto kk = static_cast<Eigen::Index>(idx.size());
      Eigen::MatrixXd c(kk, kk);
      Eigen::VectorXd c0(kk), r(kk);
      for (Eigen::Index i = 0; i < kk; ++i) {
        const auto& pi = pts[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        r(i) = pi.value;
        const double h = dist(pi.row, pi.col, row, col);
        // The gain at an observed cell includes its own multipath term.
        c0(i) = fit.shadow_var * std::exp(-h / fit.corr_dist) + (h == 0.0 ? fit.multipath_var : 0.0);
        for (Eigen::Index j = 0; j < kk; ++j) {
          const auto& pj = pts[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
          c(i, j) = fit.shadow_var * std::exp(-dist(pi.row, pi.col, pj.row, pj.col) / fit.corr_dist);
        }
        c(i, i) += fit.multipath_var;
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(c);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        c.diagonal().array() += 1e-10 * (fit.shadow_var + fit.multipath_var);
        ldlt.compute(c);
      }
      v += c0.dot(ldlt.solve(r));
    }
    out[t] = v;
  }
  return out;
}

Image spatial_model_reconstruct(const Observation& obs, const ValueMap& map, envgen::Cell tx, const Mask* exclude) {
  map.validate();
  const auto pts = observed_points(obs, exclude);
  std::vector<GainSample> samples;
  samples.reserve(pts.size());
  for (const auto& p : pts) samples.push_back({p.row, p.col, p.value * map.span() + map.min_db});
  const PathLossFit fit = fit_path_loss(samples, tx);
  std::vector<std::pair<double, double>> targets;
  targets.reserve(static_cast<std::size_t>(obs.rows) * obs.cols);
  for (int r = 0; r < obs.rows; ++r)
    for (int c = 0; c < obs.cols; ++c) targets.emplace_back(r, c);
  const auto g = spatial_model_predict(fit, samples, targets);
  Image out(obs.rows, obs.cols);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.data[i] = std::clamp((g[i] - map.min_db) / map.span(), 0.0, 1.0);
    if (exclude && exclude->data[i]) out.data[i] = 0.0;
  }
  return out;
}

// ---- Gaussian prior ----

void GaussianPrior::validate() const {
  const auto n = mean.size();
  if (covariance.rows() != n || covariance.cols() != n) throw ShapeError("prior covariance does not match the mean");
  if (static_cast<std::size_t>(n) > kGaussianOracleCells) throw CapacityError("Gaussian prior is oracle-scale only (<= 32x32 cells)");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw NumericalError("prior covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10) throw NumericalError("prior covariance is not positive semidefinite");
}

void GaussianPrior::prepare() {
  validate();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
  factor = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

GaussianPrior GaussianPrior::exponential(int rows, int cols, double mean, double variance, double corr_dist, double jitter) {
  const auto n = static_cast<Eigen::Index>(rows) * cols;
  GaussianPrior p;
  p.mean = Eigen::VectorXd::Constant(n, mean);
  p.covariance.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = dist(static_cast<double>(i / cols), static_cast<double>(i % cols), static_cast<double>(j / cols),
                            static_cast<double>(j % cols));
      p.covariance(i, j) = variance * std::exp(-h / corr_dist) + (i == j ? jitter : 0.0);
    }
  return p;
}

GaussianPrior GaussianPrior::empirical(const std::vector<Image>& images, double shrink) {
  if (images.size() < 2) throw PreconditionError("empirical prior needs at least two images");
  const auto n = static_cast<Eigen::Index>(images.front().size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(images.size()), n);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images.front())) throw ShapeError("prior images differ in shape");
    x.row(static_cast<Eigen::Index>(i)) = vec(images[i]).transpose();
  }
  GaussianPrior p;
  p.mean = x.colwise().mean().transpose();
  x.rowwise() -= p.mean.transpose();
  p.covariance = (x.transpose() * x) / static_cast<double>(images.size() - 1);
  p.covariance = 0.5 * (p.covariance + p.covariance.transpose()).eval();
  p.covariance.diagonal().array() += shrink * p.covariance.diagonal().mean() + 1e-12;
  return p;
}

namespace {

struct GaussianProblem {
  Eigen::MatrixXd a;
  Eigen::VectorXd y;
  double noise_var;
};

GaussianProblem gaussian_problem(const Observation& obs, const GaussianPrior& prior) {
  if (static_cast<std::size_t>(obs.rows) * obs.cols != static_cast<std::size_t>(prior.mean.size()))
    throw ShapeError("prior dimension does not match the observation grid");
  if (!(obs.spec.noise_std > 0.0)) throw PreconditionError("MAP/MMSE reconstruction needs noise_std > 0");
  GaussianProblem g{materialize_matrix(obs.spec, obs.rows, obs.cols),
                    Eigen::Map<const Eigen::VectorXd>(obs.values.data(), static_cast<Eigen::Index>(obs.values.size())),
                    obs.spec.noise_std * obs.spec.noise_std};
  return g;
}

Image to_image(const Eigen::VectorXd& v, int rows, int cols) {
  Image out(rows, cols);
  Eigen::Map<Eigen::VectorXd>(out.data.data(), v.size()) = v;
  return out;
}

}  // namespace

Image mmse_reconstruct(const Observation& obs, const GaussianPrior& prior) {
  if (prior.factor.size() == 0) prior.validate();
  const auto g = gaussian_problem(obs, prior);
  if (g.a.rows() == 0) return to_image(prior.mean, obs.rows, obs.cols);
  const Eigen::MatrixXd sat = prior.covariance * g.a.transpose();
  Eigen::MatrixXd s = g.a * sat;
  s.diagonal().array() += g.noise_var;
  const Eigen::VectorXd x = prior.mean + sat * s.ldlt().solve(g.y - g.a * prior.mean);
  return to_image(x, obs.rows, obs.cols);
}

Image map_reconstruct(const Observation& obs, const GaussianPrior& prior) {
  GaussianPrior local;
  const GaussianPrior* p = &prior;
  if (prior.factor.size() == 0) {
    local = prior;
    local.prepare();
    p = &local;
  }
  const auto g = gaussian_problem(obs, *p);
  // x = mu + L u with S = L L^T; maximize -|y - A x|^2 / (2 s^2) - |u|^2 / 2 over u.
  const Eigen::MatrixXd& l = p->factor;
  const Eigen::MatrixXd b = g.a * l;
  Eigen::MatrixXd h = b.transpose() * b;
  h.diagonal().array() += g.noise_var;
  const Eigen::VectorXd u = h.ldlt().solve(b.transpose() * (g.y - g.a * prior.mean));
  return to_image(p->mean + l * u, obs.rows, obs.cols);
}

}  // namespace ckm::baselines
