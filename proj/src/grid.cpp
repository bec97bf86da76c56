#include "ckm/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ckm {

std::string shape_str(int rows, int cols) { return std::to_string(rows) + "x" + std::to_string(cols); }

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.rows, a.cols) + " vs " + shape_str(b.rows, b.cols));
}

void ValueMap::validate() const {
  if (!(std::isfinite(min_db) && std::isfinite(max_db) && min_db < max_db)) {
    std::ostringstream os;
    os << "value map requires min_db < max_db, got (" << min_db << ", " << max_db << ")";
    throw RangeError(os.str());
  }
}

double pixel_of_gain(double gain_db, const ValueMap& map) {
  map.validate();
  if (!(gain_db >= map.min_db && gain_db <= map.max_db)) {
    std::ostringstream os;
    os << "gain " << gain_db << " dB outside [" << map.min_db << ", " << map.max_db << "]";
    throw RangeError(os.str());
  }
  return (gain_db - map.min_db) / map.span();
}

double gain_of_pixel(double pixel, const ValueMap& map) {
  map.validate();
  if (!(pixel >= 0.0 && pixel <= 1.0)) {
    std::ostringstream os;
    os << "pixel " << pixel << " outside [0, 1]";
    throw RangeError(os.str());
  }
  return pixel * map.span() + map.min_db;
}

CkmGrid::CkmGrid(Image gains_db, ValueMap map, std::optional<Mask> buildings)
    : gains_(std::move(gains_db)), map_(map), buildings_(std::move(buildings)) {
  map_.validate();
  if (gains_.rows <= 0 || gains_.cols <= 0) throw ShapeError("empty CKM grid");
  const double tol = 1e-9 * map_.span();
  for (double& g : gains_.data) {
    if (!(g >= map_.min_db - tol && g <= map_.max_db + tol)) {
      std::ostringstream os;
      os << "gain " << g << " dB outside value map [" << map_.min_db << ", " << map_.max_db << "]";
      throw RangeError(os.str());
    }
    g = std::clamp(g, map_.min_db, map_.max_db);
  }
  if (buildings_) {
    if (buildings_->rows != gains_.rows || buildings_->cols != gains_.cols)
      throw ShapeError("building mask " + shape_str(buildings_->rows, buildings_->cols) + " does not match grid " +
                       shape_str(gains_.rows, gains_.cols));
    for (std::size_t i = 0; i < gains_.size(); ++i)
      if (buildings_->data[i] && gains_.data[i] != map_.min_db)
        throw RangeError("building cell must carry the minimum gain");
  }
}

CkmGrid CkmGrid::from_pixels(const Image& pixels, ValueMap map, std::optional<Mask> buildings) {
  Image g(pixels.rows, pixels.cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) g.data[i] = gain_of_pixel(pixels.data[i], map);
  if (buildings)
    for (std::size_t i = 0; i < g.size(); ++i)
      if (buildings->data[i]) g.data[i] = map.min_db;
  return CkmGrid(std::move(g), map, std::move(buildings));
}

Image CkmGrid::pixels() const {
  Image p(rows(), cols());
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = pixel_of_gain(gains_.data[i], map_);
  return p;
}

std::string task_name(Task t) {
  switch (t) {
    case Task::Denoise: return "denoise";
    case Task::Inpaint: return "inpaint";
    case Task::SuperRes: return "sr";
    case Task::Generate: return "generate";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "denoise") return Task::Denoise;
  if (name == "inpaint") return Task::Inpaint;
  if (name == "sr" || name == "superres" || name == "super-resolution") return Task::SuperRes;
  if (name == "generate") return Task::Generate;
  throw PreconditionError("unknown task '" + name + "'");
}

DegradationSpec DegradationSpec::denoise(double noise_std, std::uint64_t seed) {
  DegradationSpec s;
  s.kind = Task::Denoise;
  s.noise_std = noise_std;
  s.seed = seed;
  return s;
}

DegradationSpec DegradationSpec::inpaint(Mask observed, double noise_std, std::uint64_t seed) {
  DegradationSpec s;
  s.kind = Task::Inpaint;
  s.observed = std::move(observed);
  s.noise_std = noise_std;
  s.seed = seed;
  return s;
}

DegradationSpec DegradationSpec::super_res(int factor, double noise_std, std::uint64_t seed) {
  DegradationSpec s;
  s.kind = Task::SuperRes;
  s.factor = factor;
  s.noise_std = noise_std;
  s.seed = seed;
  return s;
}

DegradationSpec DegradationSpec::generate(std::uint64_t seed) {
  DegradationSpec s;
  s.kind = Task::Generate;
  s.seed = seed;
  return s;
}

void DegradationSpec::validate(int rows, int cols) const {
  if (rows <= 0 || cols <= 0) throw ShapeError("source grid must be non-empty");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw RangeError("noise_std must be a nonnegative finite number");
  switch (kind) {
    case Task::Inpaint:
      if (observed.rows != rows || observed.cols != cols)
        throw ShapeError("inpaint mask " + shape_str(observed.rows, observed.cols) + " does not match grid " + shape_str(rows, cols));
      break;
    case Task::SuperRes:
      if (factor <= 0 || rows % factor != 0 || cols % factor != 0)
        throw ShapeError("super-resolution factor " + std::to_string(factor) + " does not divide grid " + shape_str(rows, cols));
      break;
    default: break;
  }
}

std::size_t DegradationSpec::observation_size(int rows, int cols) const {
  validate(rows, cols);
  switch (kind) {
    case Task::Denoise: return static_cast<std::size_t>(rows) * cols;
    case Task::Inpaint: return static_cast<std::size_t>(std::count(observed.data.begin(), observed.data.end(), 1));
    case Task::SuperRes: return static_cast<std::size_t>(rows / factor) * (cols / factor);
    case Task::Generate: return 0;
  }
  return 0;
}

Mask random_rect_mask(int rows, int cols, double frac, Rng& rng) {
  if (!(frac >= 0.0 && frac <= 1.0)) throw RangeError("mask fraction must lie in [0, 1]");
  Mask m(rows, cols, 1);
  const int h = static_cast<int>(std::lround(frac * rows));
  const int w = static_cast<int>(std::lround(frac * cols));
  if (h == 0 || w == 0) return m;
  std::uniform_int_distribution<int> r0(0, rows - h), c0(0, cols - w);
  const int top = r0(rng);
  const int left = c0(rng);
  for (int r = top; r < top + h; ++r)
    for (int c = left; c < left + w; ++c) m(r, c) = 0;
  return m;
}

Observation apply_degradation(const Image& x, const DegradationSpec& spec, Rng& rng) {
  spec.validate(x.rows, x.cols);
  Observation obs;
  obs.spec = spec;
  obs.rows = x.rows;
  obs.cols = x.cols;
  switch (spec.kind) {
    case Task::Denoise: obs.values = x.data; break;
    case Task::Inpaint:
      for (std::size_t i = 0; i < x.size(); ++i)
        if (spec.observed.data[i]) obs.values.push_back(x.data[i]);
      break;
    case Task::SuperRes: {
      const int m = spec.factor;
      const int lr = x.rows / m, lc = x.cols / m;
      obs.values.assign(static_cast<std::size_t>(lr) * lc, 0.0);
      const double inv = 1.0 / (m * m);
      for (int i = 0; i < lr; ++i)
        for (int j = 0; j < lc; ++j) {
          double s = 0.0;
          for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b) s += x(i * m + a, j * m + b);
          obs.values[static_cast<std::size_t>(i) * lc + j] = s * inv;
        }
      break;
    }
    case Task::Generate: break;
  }
  if (spec.noise_std > 0.0) {
    std::normal_distribution<double> n(0.0, spec.noise_std);
    for (double& v : obs.values) v += n(rng);
  }
  return obs;
}

Observation apply_degradation(const Image& x, const DegradationSpec& spec) {
  Rng rng(spec.seed);
  return apply_degradation(x, spec, rng);
}

Image pad_observation(const Observation& obs) {
  Image out(obs.rows, obs.cols, 0.0);
  const auto& spec = obs.spec;
  if (obs.values.size() != spec.observation_size(obs.rows, obs.cols))
    throw ShapeError("observation holds " + std::to_string(obs.values.size()) + " values, operator expects " +
                     std::to_string(spec.observation_size(obs.rows, obs.cols)));
  switch (spec.kind) {
    case Task::Denoise: out.data = obs.values; break;
    case Task::Inpaint: {
      std::size_t k = 0;
      for (std::size_t i = 0; i < out.size(); ++i)
        if (spec.observed.data[i]) out.data[i] = obs.values[k++];
      break;
    }
    case Task::SuperRes:
      throw UnsupportedError("super-resolution observations are consumed as low-resolution images, not zero-filled");
    case Task::Generate: break;
  }
  return out;
}

Image lowres_image(const Observation& obs) {
  if (obs.spec.kind != Task::SuperRes) throw UnsupportedError("lowres_image requires a super-resolution observation");
  const int m = obs.spec.factor;
  Image lr(obs.rows / m, obs.cols / m);
  if (obs.values.size() != lr.size()) throw ShapeError("super-resolution observation has wrong length");
  lr.data = obs.values;
  return lr;
}

Eigen::MatrixXd materialize_matrix(const DegradationSpec& spec, int rows, int cols) {
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (n > kOracleCapacity)
    throw CapacityError("materialize_matrix is oracle-scale only: " + shape_str(rows, cols) + " exceeds " +
                        std::to_string(kOracleCapacity) + " cells");
  const std::size_t a = spec.observation_size(rows, cols);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(n));
  switch (spec.kind) {
    case Task::Denoise: A.setIdentity(); break;
    case Task::Inpaint: {
      Eigen::Index k = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (spec.observed.data[i]) A(k++, static_cast<Eigen::Index>(i)) = 1.0;
      break;
    }
    case Task::SuperRes: {
      const int m = spec.factor;
      const int lc = cols / m;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) A((r / m) * lc + c / m, r * cols + c) = 1.0 / (m * m);
      break;
    }
    case Task::Generate: break;
  }
  return A;
}

Eigen::VectorXd vec(const Image& x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace ckm
