#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ckm/errors.hpp"

namespace ckm {

using Rng = std::mt19937_64;

// Row-major 2-D array. vec(x) is the row-major flattening of `data`.
template <class T>
struct Grid2D {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid2D() = default;
  Grid2D(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {
    if (r <= 0 || c <= 0) throw ShapeError("grid dimensions must be positive, got " + std::to_string(r) + "x" + std::to_string(c));
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols + c; }
  T& operator()(int r, int c) { return data[index(r, c)]; }
  const T& operator()(int r, int c) const { return data[index(r, c)]; }
  bool same_shape(const Grid2D& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Grid2D&) const = default;
};

using Image = Grid2D<double>;         // normalized pixels, nominally in [0,1]
using Mask = Grid2D<std::uint8_t>;    // 0/1

std::string shape_str(int rows, int cols);
void require_same_shape(const Image& a, const Image& b, const char* what);

// Affine pixel <-> dB map: pixel 0 is min_db, pixel 1 is max_db.
struct ValueMap {
  double min_db = -147.0;
  double max_db = -47.0;

  double span() const { return max_db - min_db; }
  void validate() const;
  bool operator==(const ValueMap&) const = default;
};

// Gain range -250..-50 dB of the CKMImageNet channel-gain images.
inline constexpr ValueMap kCkmImageNetMap{-250.0, -50.0};
// RadioMapSeer path-loss images: 0 is the -147 dB reliability threshold, 1 is -47 dB.
inline constexpr ValueMap kRadioMapSeerMap{-147.0, -47.0};

double pixel_of_gain(double gain_db, const ValueMap& map);
double gain_of_pixel(double pixel, const ValueMap& map);

// A channel gain map. Building cells carry map.min_db.
class CkmGrid {
 public:
  CkmGrid(Image gains_db, ValueMap map, std::optional<Mask> buildings = std::nullopt);

  static CkmGrid from_pixels(const Image& pixels, ValueMap map, std::optional<Mask> buildings = std::nullopt);

  int rows() const { return gains_.rows; }
  int cols() const { return gains_.cols; }
  const Image& gains() const { return gains_; }
  const ValueMap& value_map() const { return map_; }
  const std::optional<Mask>& building_mask() const { return buildings_; }
  Image pixels() const;

 private:
  Image gains_;
  ValueMap map_;
  std::optional<Mask> buildings_;
};

enum class Task { Denoise, Inpaint, SuperRes, Generate };

std::string task_name(Task t);
Task parse_task(const std::string& name);

// Declarative operator A plus noise level, y = A x + n.
struct DegradationSpec {
  Task kind = Task::Denoise;
  Mask observed;  // Inpaint only: 1 = observed
  int factor = 1;  // SuperRes only
  double noise_std = 0.0;  // normalized pixel units
  std::uint64_t seed = 0;

  static DegradationSpec denoise(double noise_std, std::uint64_t seed = 0);
  static DegradationSpec inpaint(Mask observed, double noise_std, std::uint64_t seed = 0);
  static DegradationSpec super_res(int factor, double noise_std, std::uint64_t seed = 0);
  static DegradationSpec generate(std::uint64_t seed = 0);

  // Number of rows of A for a rows x cols source grid.
  std::size_t observation_size(int rows, int cols) const;
  void validate(int rows, int cols) const;
};

// Inpaint mask that hides one rectangle of `frac` times each side, placed uniformly at random.
Mask random_rect_mask(int rows, int cols, double frac, Rng& rng);

struct Observation {
  std::vector<double> values;
  DegradationSpec spec;
  int rows = 0;  // source grid shape
  int cols = 0;
};

Observation apply_degradation(const Image& x, const DegradationSpec& spec, Rng& rng);
// Seeds the noise stream from spec.seed.
Observation apply_degradation(const Image& x, const DegradationSpec& spec);

// Zero-filled A^T y on the source grid. SuperRes is rejected.
Image pad_observation(const Observation& obs);
// SuperRes observation viewed as an (rows/m) x (cols/m) image.
Image lowres_image(const Observation& obs);

inline constexpr std::size_t kOracleCapacity = 4096;
// Dense A (a x lw). Test oracle for the structured operators.
Eigen::MatrixXd materialize_matrix(const DegradationSpec& spec, int rows, int cols);

Eigen::VectorXd vec(const Image& x);

}  // namespace ckm
