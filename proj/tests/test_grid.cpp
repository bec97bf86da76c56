#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ckm/grid.hpp"
#include "ckm/io.hpp"
#include "ckm/parallel.hpp"

using namespace ckm;
namespace fs = std::filesystem;

namespace {

Image image_of(int rows, int cols, std::initializer_list<double> v) {
  Image im(rows, cols);
  std::copy(v.begin(), v.end(), im.data.begin());
  return im;
}

Image random_image(int rows, int cols, Rng& rng) {
  Image im(rows, cols);
  for (double& v : im.data) v = std::uniform_real_distribution<double>(0, 1)(rng);
  return im;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ckm_test_grid_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("value maps") {
  CHECK(pixel_of_gain(-50, kCkmImageNetMap) == doctest::Approx(1.0));
  CHECK(pixel_of_gain(-250, kCkmImageNetMap) == doctest::Approx(0.0));
  CHECK(pixel_of_gain(-147, kRadioMapSeerMap) == doctest::Approx(0.0));
  CHECK(gain_of_pixel(1.0, kRadioMapSeerMap) == doctest::Approx(-47.0));
  CHECK(gain_of_pixel(0.5, kCkmImageNetMap) == doctest::Approx(-150.0));
  CHECK(gain_of_pixel(0.25, kRadioMapSeerMap) == doctest::Approx(-122.0));
  CHECK_THROWS_AS(pixel_of_gain(-40, kRadioMapSeerMap), RangeError);
  CHECK_THROWS_AS(gain_of_pixel(1.5, kRadioMapSeerMap), RangeError);
  CHECK_THROWS_AS((ValueMap{-40, -50}.validate()), RangeError);
}

TEST_CASE("pixel/gain round trip on 1000 points") {
  for (const ValueMap& m : {kCkmImageNetMap, kRadioMapSeerMap}) {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double g = m.min_db + m.span() * i / 999.0;
      worst = std::max(worst, std::abs(gain_of_pixel(pixel_of_gain(g, m), m) - g) / std::abs(g));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("degradation examples") {
  const Image x = image_of(2, 2, {0.0, 0.2, 0.4, 0.6});
  SUBCASE("denoise without noise is exact") {
    const auto y = apply_degradation(x, DegradationSpec::denoise(0.0));
    CHECK(y.values == x.data);
    CHECK(pad_observation(y) == x);
  }
  SUBCASE("sr block average") {
    const auto y = apply_degradation(x, DegradationSpec::super_res(2, 0.0));
    REQUIRE(y.values.size() == 1);
    CHECK(y.values[0] == doctest::Approx(0.3).epsilon(1e-15));
    const Eigen::MatrixXd a = materialize_matrix(DegradationSpec::super_res(2, 0.0), 2, 2);
    CHECK(a.rows() == 1);
    CHECK(a.cols() == 4);
    CHECK((a.array() == 0.25).all());
    CHECK(lowres_image(y)(0, 0) == doctest::Approx(0.3));
    CHECK_THROWS_AS(pad_observation(y), UnsupportedError);
  }
  SUBCASE("generate is empty") {
    const auto y = apply_degradation(x, DegradationSpec::generate());
    CHECK(y.values.empty());
    CHECK(materialize_matrix(DegradationSpec::generate(), 2, 2).rows() == 0);
    CHECK(pad_observation(y) == Image(2, 2));
  }
  SUBCASE("inpaint single observed cell") {
    Mask m(2, 2, 0);
    m(0, 0) = 1;
    const auto y = apply_degradation(image_of(2, 2, {0.7, 0.1, 0.2, 0.3}), DegradationSpec::inpaint(m, 0.0));
    CHECK(pad_observation(y) == image_of(2, 2, {0.7, 0, 0, 0}));
    const auto all = apply_degradation(x, DegradationSpec::inpaint(Mask(2, 2, 1), 0.0));
    CHECK(pad_observation(all) == x);
  }
  SUBCASE("identity matrix") {
    CHECK(materialize_matrix(DegradationSpec::denoise(0.0), 2, 2).isIdentity());
  }
}

TEST_CASE("degradation errors") {
  const Image x(4, 4, 0.5);
  CHECK_THROWS_AS(apply_degradation(x, DegradationSpec::super_res(3, 0.0)), ShapeError);
  CHECK_THROWS_AS(apply_degradation(x, DegradationSpec::inpaint(Mask(3, 3, 1), 0.0)), ShapeError);
  CHECK_THROWS_AS(apply_degradation(x, DegradationSpec::denoise(-0.1)), RangeError);
  CHECK_THROWS_AS(materialize_matrix(DegradationSpec::denoise(0), 65, 64), CapacityError);
  CHECK_THROWS(parse_task("deblur"));
  for (Task t : {Task::Denoise, Task::Inpaint, Task::SuperRes, Task::Generate}) CHECK(parse_task(task_name(t)) == t);
}

TEST_CASE("property: operator equals dense matrix up to 64x64") {
  Rng rng(3);
  for (auto [r, c] : {std::pair{1, 1}, std::pair{3, 5}, std::pair{8, 8}, std::pair{12, 20}, std::pair{64, 64}}) {
    const Image x = random_image(r, c, rng);
    std::vector<DegradationSpec> specs{DegradationSpec::denoise(0), DegradationSpec::generate(),
                                       DegradationSpec::inpaint(random_rect_mask(r, c, 0.3, rng), 0)};
    for (int m : {2, 4})
      if (r % m == 0 && c % m == 0) specs.push_back(DegradationSpec::super_res(m, 0));
    for (const auto& s : specs) {
      const Eigen::VectorXd ax = materialize_matrix(s, r, c) * vec(x);
      const auto y = apply_degradation(x, s);
      REQUIRE(static_cast<std::size_t>(ax.size()) == y.values.size());
      for (Eigen::Index i = 0; i < ax.size(); ++i) CHECK(std::abs(ax[i] - y.values[static_cast<std::size_t>(i)]) < 1e-10);
    }
  }
}

TEST_CASE("property: inpaint selector is row-orthonormal and padding is idempotent") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Mask m(6, 7, 0);
    for (auto& v : m.data) v = std::bernoulli_distribution(0.5)(rng);
    m.data[0] = 1;
    const auto s = DegradationSpec::inpaint(m, 0.0);
    const Eigen::MatrixXd a = materialize_matrix(s, 6, 7);
    CHECK((a * a.transpose()).isIdentity(1e-15));
    const Image x = random_image(6, 7, rng);
    const Image padded = pad_observation(apply_degradation(x, s));
    CHECK(pad_observation(apply_degradation(padded, s)) == padded);
  }
}

TEST_CASE("noise statistics") {
  const double sd = 30.0 / 255.0;
  const Image x(320, 320, 0.5);
  const auto y = apply_degradation(x, DegradationSpec::denoise(sd, 11));
  const double n = static_cast<double>(y.values.size());
  double mean = 0;
  for (double v : y.values) mean += (v - 0.5) / n;
  double var = 0;
  for (double v : y.values) var += (v - 0.5 - mean) * (v - 0.5 - mean) / (n - 1);
  CHECK(std::abs(mean) < 4 * sd / std::sqrt(n));
  CHECK(std::abs(std::sqrt(var) - sd) < 0.02 * sd);
  // No clipping of noisy values.
  bool outside = false;
  for (double v : apply_degradation(Image(32, 32, 0.0), DegradationSpec::denoise(sd, 1)).values) outside |= v < 0;
  CHECK(outside);
}

TEST_CASE("inpaint noise only on observed cells and seeded determinism") {
  Rng rng(5);
  const Mask m = random_rect_mask(16, 16, 0.25, rng);
  int hidden = 0;
  for (auto v : m.data) hidden += v == 0;
  CHECK(hidden == 16);
  const auto s = DegradationSpec::inpaint(m, 0.1, 9);
  const Image x(16, 16, 0.5);
  const auto a = apply_degradation(x, s), b = apply_degradation(x, s);
  CHECK(a.values == b.values);
  CHECK(a.values.size() == 256 - 16);
}

TEST_CASE("ckm grid construction") {
  Image g(2, 2, -100.0);
  Mask b(2, 2, 0);
  b(1, 1) = 1;
  CHECK_THROWS_AS(CkmGrid(g, kRadioMapSeerMap, b), RangeError);
  g(1, 1) = -147.0;
  const CkmGrid grid(g, kRadioMapSeerMap, b);
  CHECK(grid.pixels()(1, 1) == 0.0);
  CHECK(grid.pixels()(0, 0) == doctest::Approx(0.47));
  CHECK_THROWS_AS(CkmGrid(Image(2, 2, -10.0), kRadioMapSeerMap), RangeError);
}

TEST_CASE("pgm and ckm files round trip") {
  const fs::path dir = scratch("io");
  Rng rng(6);
  const Image px = random_image(5, 7, rng);
  Mask b(5, 7, 0);
  Image q = px;
  b(2, 3) = 1;
  q(2, 3) = 0.0;
  const auto grid = CkmGrid::from_pixels(q, kCkmImageNetMap, b);
  io::write_ckm(dir / "m.pgm", grid);
  const CkmGrid back = io::read_ckm(dir / "m.pgm");
  CHECK(back.value_map() == kCkmImageNetMap);
  REQUIRE(back.building_mask());
  CHECK(*back.building_mask() == b);
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(std::abs(back.pixels().data[i] - q.data[i]) <= 0.5 / 65535 + 1e-12);
    CHECK(back.pixels().data[i] == doctest::Approx(io::quantize_pixel(q.data[i])).epsilon(1e-12));
  }
  CHECK_THROWS_AS(io::read_ckm(dir / "missing.pgm"), IoError);
  io::write_text(dir / "bad.pgm", "P2\n1 1\n255\n0\n");
  CHECK_THROWS(io::read_pgm(dir / "bad.pgm"));
}

TEST_CASE("observation files round trip") {
  const fs::path dir = scratch("obs");
  Rng rng(7);
  const Image x = random_image(8, 8, rng);
  for (const auto& s : {DegradationSpec::denoise(0.1, 3), DegradationSpec::super_res(4, 0.1, 3),
                        DegradationSpec::inpaint(random_rect_mask(8, 8, 0.25, rng), 0.1, 3), DegradationSpec::generate(3)}) {
    const auto y = apply_degradation(x, s);
    io::write_observation(dir / "o.obs", y);
    const auto z = io::read_observation(dir / "o.obs");
    CHECK(z.values == y.values);
    CHECK(z.spec.kind == s.kind);
    CHECK(z.spec.factor == y.spec.factor);
    CHECK(z.spec.observed == y.spec.observed);
    CHECK(z.spec.noise_std == s.noise_std);
    CHECK(z.rows == 8);
  }
}

TEST_CASE("seed derivation and parallel_for") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  std::vector<int> out(100, 0);
  parallel_for(out.size(), [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; }, 3);
  for (int i = 0; i < 100; ++i) CHECK(out[static_cast<std::size_t>(i)] == 2 * i);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) { if (i == 7) throw RangeError("boom"); }, 2), RangeError);
}
