#include "ckm/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <queue>

#include "ckm/io.hpp"

namespace ckm::features {

Mask binarize_buildings(const Image& image, double threshold) {
  Mask m(image.rows, image.cols, 0);
  for (std::size_t i = 0; i < image.size(); ++i) m.data[i] = image.data[i] <= threshold ? 1 : 0;
  return m;
}

namespace {

// Replicate-border accessor.
double at(const Image& img, int r, int c) {
  return img(std::clamp(r, 0, img.rows - 1), std::clamp(c, 0, img.cols - 1));
}

Image gaussian_blur5(const Image& in, double sigma) {
  std::array<double, 5> k{};
  double s = 0.0;
  for (int i = -2; i <= 2; ++i) s += k[i + 2] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  Image tmp(in.rows, in.cols), out(in.rows, in.cols);
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c) {
      double v = 0.0;
      for (int i = -2; i <= 2; ++i) v += k[i + 2] * at(in, r, c + i);
      tmp(r, c) = v;
    }
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c) {
      double v = 0.0;
      for (int i = -2; i <= 2; ++i) v += k[i + 2] * at(tmp, r + i, c);
      out(r, c) = v;
    }
  return out;
}

}  // namespace

Mask canny_edges(const Mask& mask, const CannyConfig& cfg) {
  const int rows = mask.rows, cols = mask.cols;
  Image img(rows, cols);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = mask.data[i] ? 1.0 : 0.0;
  const Image b = gaussian_blur5(img, cfg.sigma);

  Image mag(rows, cols, 0.0), gx(rows, cols, 0.0), gy(rows, cols, 0.0);
  double max_mag = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double x = (at(b, r - 1, c + 1) + 2 * at(b, r, c + 1) + at(b, r + 1, c + 1)) -
                       (at(b, r - 1, c - 1) + 2 * at(b, r, c - 1) + at(b, r + 1, c - 1));
      const double y = (at(b, r + 1, c - 1) + 2 * at(b, r + 1, c) + at(b, r + 1, c + 1)) -
                       (at(b, r - 1, c - 1) + 2 * at(b, r - 1, c) + at(b, r - 1, c + 1));
      gx(r, c) = x;
      gy(r, c) = y;
      mag(r, c) = std::hypot(x, y);
      max_mag = std::max(max_mag, mag(r, c));
    }
  Mask edges(rows, cols, 0);
  if (max_mag <= 1e-12) return edges;

  // Non-maximum suppression along the quantized gradient direction.
  Image thin(rows, cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double m = mag(r, c);
      if (m <= 0.0) continue;
      double angle = std::atan2(gy(r, c), gx(r, c)) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int dr, dc;
      if (angle < 22.5 || angle >= 157.5) {
        dr = 0, dc = 1;
      } else if (angle < 67.5) {
        dr = 1, dc = 1;
      } else if (angle < 112.5) {
        dr = 1, dc = 0;
      } else {
        dr = 1, dc = -1;
      }
      auto nb = [&](int rr, int cc) {
        return (rr < 0 || rr >= rows || cc < 0 || cc >= cols) ? 0.0 : mag(rr, cc);
      };
      const double m1 = nb(r + dr, c + dc), m2 = nb(r - dr, c - dc);
      // Ties resolve towards the forward neighbour so plateaus keep a single pixel.
      if (m > m1 && m >= m2) thin(r, c) = m;
    }

  const double hi = cfg.high * max_mag, lo = cfg.low * max_mag;
  std::queue<std::pair<int, int>> q;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (thin(r, c) >= hi) {
        edges(r, c) = 1;
        q.emplace(r, c);
      }
  // Hysteresis: weak pixels survive when 8-connected to a strong one.
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop();
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols || edges(rr, cc)) continue;
        if (thin(rr, cc) >= lo) {
          edges(rr, cc) = 1;
          q.emplace(rr, cc);
        }
      }
  }
  return edges;
}

Image ConditionImage::channel(int c) const {
  if (c < 0 || c >= kChannels) throw RangeError("condition channel index out of range");
  Image out(rows, cols);
  const auto n = static_cast<std::size_t>(rows) * cols;
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(c * n), n, out.data.begin());
  return out;
}

ConditionImage stack_condition(const Image& gray, const Mask& mask, const Mask& edges) {
  if (gray.rows != mask.rows || gray.cols != mask.cols || gray.rows != edges.rows || gray.cols != edges.cols)
    throw ShapeError("condition channels differ in shape: gray " + shape_str(gray.rows, gray.cols) + ", mask " +
                     shape_str(mask.rows, mask.cols) + ", edges " + shape_str(edges.rows, edges.cols));
  ConditionImage out{gray.rows, gray.cols, {}};
  const std::size_t n = gray.size();
  out.data.resize(3 * n);
  std::copy(gray.data.begin(), gray.data.end(), out.data.begin());
  for (std::size_t i = 0; i < n; ++i) {
    out.data[n + i] = mask.data[i] ? 1.0 : 0.0;
    out.data[2 * n + i] = edges.data[i] ? 1.0 : 0.0;
  }
  return out;
}

ConditionImage emphasize(const Image& gray, double noise_std, const CannyConfig& cfg) {
  const Mask m = binarize_buildings(gray, noise_std > 0.0 ? kNoisyThreshold : kExactZero);
  return stack_condition(gray, m, canny_edges(m, cfg));
}

Image upsample_nearest(const Image& img, int factor) {
  if (factor < 1) throw RangeError("upsampling factor must be >= 1");
  Image out(img.rows * factor, img.cols * factor);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) = img(r / factor, c / factor);
  return out;
}

ConditionImage condition_for(const Observation& obs, const CannyConfig& cfg) {
  switch (obs.spec.kind) {
    case Task::Generate: return {obs.rows, obs.cols, std::vector<double>(3u * obs.rows * obs.cols, 0.0)};
    case Task::SuperRes: {
      const int m = obs.spec.factor;
      const ConditionImage lr = emphasize(lowres_image(obs), obs.spec.noise_std, cfg);
      ConditionImage out{obs.rows, obs.cols, {}};
      for (int c = 0; c < ConditionImage::kChannels; ++c) {
        const Image up = upsample_nearest(lr.channel(c), m);
        out.data.insert(out.data.end(), up.data.begin(), up.data.end());
      }
      return out;
    }
    default: return emphasize(pad_observation(obs), obs.spec.noise_std, cfg);
  }
}

void dump_channels(const std::filesystem::path& dir, const ConditionImage& cond) {
  io::write_preview_pgm(dir / "gray.pgm", cond.channel(0));
  io::write_preview_pgm(dir / "mask.pgm", cond.channel(1));
  io::write_preview_pgm(dir / "edges.pgm", cond.channel(2));
}

}  // namespace ckm::features
