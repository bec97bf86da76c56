#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ckm/envgen.hpp"
#include "ckm/io.hpp"

using namespace ckm;
using namespace ckm::envgen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ckm_test_envgen_" + name);
  fs::remove_all(p);
  return p;
}

PropagationParams quiet(double k_db, double n_pl) {
  PropagationParams p;
  p.k_db = k_db;
  p.n_pl = n_pl;
  p.shadow_var = 0;
  p.multipath_var = 0;
  p.wall_penalty_db = 0;
  return p;
}

}  // namespace

TEST_CASE("environment layouts") {
  EnvironmentSpec s;
  s.building_count = 0;
  s.seed = 3;
  const auto e0 = generate_environment(s);
  for (auto v : e0.buildings.data) CHECK(v == 0);

  s.building_count = 6;
  const auto a = generate_environment(s), b = generate_environment(s);
  CHECK(a.buildings == b.buildings);
  CHECK(a.tx == b.tx);
  CHECK(a.buildings(a.tx.row, a.tx.col) == 0);

  EnvironmentSpec big;
  big.rows = big.cols = 64;
  big.building_count = 8;
  big.min_size = 4;
  big.max_size = 10;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    big.seed = seed;
    const auto e = generate_environment(big);
    int n = 0;
    for (auto v : e.buildings.data) n += v;
    CHECK(n >= 16);   // at least one full building survives any overlap
    CHECK(n <= 800);
    CHECK(e.buildings(e.tx.row, e.tx.col) == 0);
  }

  EnvironmentSpec fixed;
  fixed.tx = Cell{3, 4};
  fixed.seed = 9;
  CHECK(generate_environment(fixed).tx == Cell{3, 4});
  fixed.tx = Cell{40, 4};
  CHECK_THROWS_AS(generate_environment(fixed), PreconditionError);
  EnvironmentSpec crowded;
  crowded.building_count = 40;
  CHECK_THROWS_AS(generate_environment(crowded), PreconditionError);
}

TEST_CASE("path loss examples") {
  const auto p = quiet(-40, 2);
  CHECK(path_loss_db(p, 10) == doctest::Approx(-60.0));
  CHECK(path_loss_db(p, 1) == -40.0);
  CHECK(path_loss_db(p, 0) == -40.0);
  CHECK(path_loss_db(p, 0.5) == -40.0);

  Rng rng(1);
  const Mask empty(21, 21, 0);
  const ValueMap wide{-250.0, -30.0};
  const auto g = simulate_gain_map(empty, p, {10, 10}, rng, wide);
  CHECK(g.gains()(10, 10) == -40.0);
  // Gains above the map ceiling are clamped to it.
  CHECK(simulate_gain_map(empty, p, {10, 10}, rng, kCkmImageNetMap).gains()(10, 10) == -50.0);
  CHECK(g.gains()(0, 10) == doctest::Approx(-60.0));
  CHECK(g.gains()(10, 0) == doctest::Approx(-60.0));
}

TEST_CASE("walls attenuate and buildings carry the floor value") {
  Mask m(16, 16, 0);
  for (int r = 4; r < 12; ++r) m(r, 8) = 1;
  CHECK(wall_crossings(m, {8, 2}, {8, 14}) == 2);
  CHECK(wall_crossings(m, {1, 2}, {1, 14}) == 0);
  CHECK(wall_crossings(m, {8, 2}, {8, 5}) == 0);
  auto p = quiet(-50, 2);
  p.wall_penalty_db = 10;
  Rng rng(2);
  const auto g = simulate_gain_map(m, p, {8, 2}, rng);
  CHECK(g.gains()(8, 8) == kRadioMapSeerMap.min_db);
  CHECK(g.gains()(8, 12) == doctest::Approx(path_loss_db(p, 10) - 20));
  CHECK_THROWS_AS(simulate_gain_map(m, p, {8, 8}, rng), PreconditionError);
}

TEST_CASE("property: gain non-increasing along unobstructed rays") {
  Rng rng(8);
  auto p = quiet(-45, 3);
  p.wall_penalty_db = 15;
  EnvironmentSpec es;
  es.rows = es.cols = 33;
  es.tx = Cell{16, 16};
  es.seed = 4;
  const auto env = generate_environment(es);
  const auto g = simulate_gain_map(env.buildings, p, env.tx, rng, kCkmImageNetMap);
  int rays = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const double ang = std::uniform_real_distribution<double>(0, 2 * M_PI)(rng);
    std::vector<std::pair<double, double>> seen;  // (distance, gain)
    for (double s = 0; s <= 16; s += 0.25) {
      const int r = static_cast<int>(std::lround(env.tx.row + s * std::sin(ang)));
      const int c = static_cast<int>(std::lround(env.tx.col + s * std::cos(ang)));
      if (r < 0 || r >= 33 || c < 0 || c >= 33) break;
      if (env.buildings(r, c) || wall_crossings(env.buildings, env.tx, {r, c}) > 0) break;
      seen.emplace_back(std::hypot(r - env.tx.row, c - env.tx.col), g.gains()(r, c));
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 1; i < seen.size(); ++i) CHECK(seen[i].second <= seen[i - 1].second + 1e-12);
    rays += seen.size() > 4;
  }
  CHECK(rays > 20);
}

TEST_CASE("shadowing covariance and stationarity") {
  Rng rng(10);
  const int n = 400, side = 24;
  double cov8 = 0.0, var_corner = 0.0, var_centre = 0.0;
  const double pairs = 2.0 * side * (side - 8);
  for (int t = 0; t < n; ++t) {
    const Image f = shadowing_field(side, side, 4.0, 8.0, rng);
    // Every lag-8 pair along both axes; a single pair per field is too noisy for 10%.
    for (int i = 0; i < side; ++i)
      for (int j = 0; j + 8 < side; ++j) cov8 += (f(i, j) * f(i, j + 8) + f(j, i) * f(j + 8, i)) / (pairs * n);
    var_corner += f(0, 0) * f(0, 0) / n;
    var_centre += f(12, 12) * f(12, 12) / n;
  }
  CHECK(cov8 == doctest::Approx(4.0 * std::exp(-1.0)).epsilon(0.10));
  CHECK(var_corner == doctest::Approx(4.0).epsilon(0.15));
  CHECK(var_centre == doctest::Approx(4.0).epsilon(0.15));
  Rng r2(1);
  const Image zero = shadowing_field(4, 4, 0.0, 8.0, r2);
  for (double v : zero.data) CHECK(v == 0.0);
}

TEST_CASE("datasets") {
  DatasetOptions o;
  o.n_maps = 1;
  const fs::path one = scratch("one");
  const auto m1 = build_dataset(o, one);
  REQUIRE(m1.entries.size() == 1);
  const auto back = read_manifest(one / "manifest.json");
  CHECK(back.entries[0].path == m1.entries[0].path);
  CHECK(back.entries[0].tx == m1.entries[0].tx);
  const CkmGrid g = io::read_ckm(back.resolve(back.entries[0].path));
  CHECK(g.rows() == 32);
  REQUIRE(g.building_mask());

  o.n_maps = 20;
  o.corpus_seed = 5;
  const auto a = build_dataset(o, scratch("a"));
  const auto b = build_dataset(o, scratch("b"));
  CHECK(corpus_hash(a) == corpus_hash(b));
  CHECK(a.split("train").size() == 18);
  CHECK(a.split("test").size() == 2);
  o.corpus_seed = 6;
  CHECK(corpus_hash(build_dataset(o, scratch("c"))) != corpus_hash(a));

  o.n_maps = 2000;
  o.env.rows = o.env.cols = 16;
  o.env.building_count = 2;
  const auto big = build_dataset(o, scratch("big"));
  CHECK(big.split("train").size() == 1800);
  CHECK(big.split("test").size() == 200);
  CHECK_THROWS_AS(read_manifest(scratch("none") / "manifest.json"), IoError);
}
