#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ckm/baselines.hpp"
#include "ckm/envgen.hpp"

using namespace ckm;
using namespace ckm::baselines;

namespace {

Image random_image(int rows, int cols, Rng& rng) {
  Image im(rows, cols);
  for (double& v : im.data) v = std::uniform_real_distribution<double>(0, 1)(rng);
  return im;
}

Observation make_obs(const DegradationSpec& s, int rows, int cols, std::vector<double> values) {
  Observation o;
  o.spec = s;
  o.rows = rows;
  o.cols = cols;
  o.values = std::move(values);
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Mask sparse_mask(int rows, int cols, double p, Rng& rng) {
  Mask m(rows, cols, 0);
  for (auto& v : m.data) v = std::bernoulli_distribution(p)(rng);
  return m;
}

}  // namespace

TEST_CASE("least squares examples") {
  const Image x(2, 2, 0.4);
  CHECK(ls_reconstruct(apply_degradation(x, DegradationSpec::denoise(0))) == x);
  const auto sr = make_obs(DegradationSpec::super_res(2, 0), 2, 2, {0.3});
  for (double v : ls_reconstruct(sr).data) CHECK(v == doctest::Approx(0.3));
  CHECK(ls_reconstruct(apply_degradation(x, DegradationSpec::generate())) == Image(2, 2));

  // Inpaint on 4x4 against a brute-force pseudo-inverse.
  Rng rng(1);
  const Mask m = sparse_mask(4, 4, 0.5, rng);
  const auto s = DegradationSpec::inpaint(m, 0.05);
  const auto y = apply_degradation(random_image(4, 4, rng), s, rng);
  const Eigen::MatrixXd a = materialize_matrix(s, 4, 4);
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.values.data(), static_cast<Eigen::Index>(y.values.size()));
  const Eigen::VectorXd pinv = a.completeOrthogonalDecomposition().pseudoInverse() * yv;
  const Image xl = ls_reconstruct(y);
  for (int i = 0; i < 16; ++i) CHECK(std::abs(xl.data[static_cast<std::size_t>(i)] - pinv[i]) < 1e-12);
  CHECK((ls_reconstruct_dense(a, yv) - pinv).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(ls_reconstruct_dense(Eigen::MatrixXd::Ones(2, 3), Eigen::VectorXd::Ones(2)), NumericalError);
}

TEST_CASE("property: least squares beats random perturbations") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Image x = random_image(8, 8, rng);
    for (const auto& s : {DegradationSpec::super_res(4, 0.1), DegradationSpec::inpaint(sparse_mask(8, 8, 0.4, rng), 0.1),
                          DegradationSpec::denoise(0.1)}) {
      const auto y = apply_degradation(x, s, rng);
      const Eigen::MatrixXd a = materialize_matrix(s, 8, 8);
      const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.values.data(), static_cast<Eigen::Index>(y.values.size()));
      const Eigen::VectorXd xl = vec(ls_reconstruct(y));
      const double best = (yv - a * xl).norm();
      for (int k = 0; k < 100; ++k) {
        const Eigen::VectorXd z = xl + 0.1 * Eigen::VectorXd::Random(64);
        CHECK(best <= (yv - a * z).norm() + 1e-12);
      }
    }
  }
}

TEST_CASE("interpolation examples") {
  SUBCASE("knn k=1 copies the nearest point") {
    Mask m(3, 3, 0);
    m(0, 0) = 1;
    m(2, 2) = 1;
    const auto o = make_obs(DegradationSpec::inpaint(m, 0), 3, 3, {0.1, 0.9});
    const Image r = interpolate(o, {Interp::Knn, 1, 2.0});
    CHECK(r(0, 1) == 0.1);
    CHECK(r(2, 1) == 0.9);
    CHECK(r(1, 1) == 0.1);  // equidistant: lower row-major index wins
  }
  SUBCASE("idw with equidistant points") {
    Mask m(1, 3, 0);
    m(0, 0) = 1;
    m(0, 2) = 1;
    const auto o = make_obs(DegradationSpec::inpaint(m, 0), 1, 3, {0.2, 0.6});
    CHECK(interpolate(o, {Interp::Idw, 0, 2.0})(0, 1) == doctest::Approx(0.4));
  }
  SUBCASE("bilinear reproduces affine fields and means") {
    const auto o = make_obs(DegradationSpec::super_res(2, 0), 4, 4, {0.0, 0.4, 0.4, 0.8});
    const Image r = interpolate(o, {Interp::Bilinear, 4, 2.0});
    CHECK(r(1, 1) == doctest::Approx(0.2));
    CHECK(r(2, 2) == doctest::Approx(0.6));
    CHECK((r(1, 1) + r(1, 2) + r(2, 1) + r(2, 2)) / 4 == doctest::Approx(0.4));
  }
  SUBCASE("bicubic is exact on lr sample positions for m = 1") {
    Rng rng(3);
    const Image x = random_image(5, 5, rng);
    const auto o = apply_degradation(x, DegradationSpec::denoise(0));
    const Image r = interpolate(o, {Interp::Bicubic, 4, 2.0});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
  }
  CHECK(cubic_kernel(0) == 1.0);
  CHECK(cubic_kernel(1) == 0.0);
  CHECK(cubic_kernel(2.5) == 0.0);
  CHECK_THROWS_AS(interpolate(make_obs(DegradationSpec::inpaint(Mask(2, 2, 1), 0), 2, 2, {0, 0, 0, 0}), {Interp::Bilinear, 4, 2}),
                  PreconditionError);
  CHECK_THROWS_AS((InterpolatorConfig{Interp::Knn, 0, 2.0}.validate()), PreconditionError);
  CHECK_THROWS_AS((InterpolatorConfig{Interp::Idw, 4, 0.0}.validate()), PreconditionError);
}

TEST_CASE("property: interpolation weights sum to one") {
  Rng rng(4);
  const Image x = random_image(8, 8, rng);
  const auto inp = apply_degradation(x, DegradationSpec::inpaint(sparse_mask(8, 8, 0.3, rng), 0.1), rng);
  const auto sr = apply_degradation(x, DegradationSpec::super_res(4, 0.1), rng);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      for (const auto& [o, cfg] : {std::pair{inp, InterpolatorConfig{Interp::Idw, 8, 2.0}},
                                   std::pair{sr, InterpolatorConfig{Interp::Bilinear, 4, 2.0}},
                                   std::pair{sr, InterpolatorConfig{Interp::Bicubic, 4, 2.0}}}) {
        const auto s = interpolation_stencil(o, cfg, r, c);
        double t = 0;
        for (double w : s.weight) t += w;
        CHECK(t == doctest::Approx(1.0).epsilon(1e-9));
      }
      const auto pts = observed_points(inp);
      std::vector<ObservedPoint> nb(pts.begin(), pts.begin() + 6);
      const auto w = kriging_weights(nb, r, c, {1.0, 3.0, 0.1});
      REQUIRE(w);
      CHECK(w->head(6).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("kriging examples") {
  std::vector<ObservedPoint> two{{0, 0, 0.2, -1}, {0, 4, 0.8, -1}};
  const auto w = kriging_weights(two, 3, 1, {1.0, 1e-9, 1.0});
  REQUIRE(w);
  CHECK((*w)[0] == doctest::Approx(0.5));
  CHECK((*w)[1] == doctest::Approx(0.5));

  Rng rng(5);
  const Image x = random_image(12, 12, rng);
  const auto o = apply_degradation(x, DegradationSpec::inpaint(sparse_mask(12, 12, 0.4, rng), 0.05), rng);
  const auto fit = fit_variogram(o);
  const Image est = kriging_reconstruct(o, fit.variogram).estimate;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i)
    if (o.spec.observed.data[i]) CHECK(est.data[i] == o.values[j++]);

  CHECK(Variogram{2.0, 3.0, 0.5}(0.0) == 0.0);
  CHECK(Variogram{2.0, 3.0, 0.5}(1e9) == doctest::Approx(2.0));
  CHECK_THROWS_AS((Variogram{1.0, 1.0, 2.0}.validate()), PreconditionError);
}

TEST_CASE("variogram fitting") {
  const auto flat = apply_degradation(Image(8, 8, 0.3), DegradationSpec::denoise(0));
  const auto f0 = fit_variogram(flat);
  CHECK(f0.degenerate);
  CHECK(f0.variogram.sill == doctest::Approx(0.0));
  for (const auto& b : fit_variogram(apply_degradation(Image(8, 8, 0.3), DegradationSpec::denoise(0.1, 1))).bins)
    CHECK(b.pairs > 0);

  Rng rng(6);
  std::vector<double> sills;
  for (int t = 0; t < 50; ++t) {
    const Image f = envgen::shadowing_field(32, 32, 4.0, 8.0, rng);
    sills.push_back(fit_variogram(apply_degradation(f, DegradationSpec::denoise(0))).variogram.sill);
  }
  CHECK(median(sills) == doctest::Approx(4.0).epsilon(0.25));
}

TEST_CASE("statistical: kriging beats idw on correlated fields") {
  Rng rng(7);
  std::vector<double> ek, ei;
  for (int t = 0; t < 20; ++t) {
    const Image f = envgen::shadowing_field(24, 24, 1.0, 6.0, rng);
    const auto o = apply_degradation(f, DegradationSpec::inpaint(sparse_mask(24, 24, 0.2, rng), 0.0), rng);
    const Image k = kriging_reconstruct(o, fit_variogram(o).variogram).estimate;
    const Image i = interpolate(o, {Interp::Idw, 8, 2.0});
    double sk = 0, si = 0;
    for (std::size_t c = 0; c < f.size(); ++c) {
      sk += (k.data[c] - f.data[c]) * (k.data[c] - f.data[c]);
      si += (i.data[c] - f.data[c]) * (i.data[c] - f.data[c]);
    }
    ek.push_back(sk);
    ei.push_back(si);
  }
  CHECK(median(ek) < median(ei));
}

TEST_CASE("path-loss fit") {
  const envgen::Cell tx{3, 5};
  std::vector<GainSample> s;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c)
      s.push_back({double(r), double(c), -40.0 - 20.0 * std::log10(std::max(1.0, std::hypot(r - 3, c - 5)))});
  const auto fit = fit_path_loss(s, tx);
  CHECK(std::abs(fit.k_db + 40) < 1e-8);
  CHECK(std::abs(fit.n_pl - 2) < 1e-8);
  CHECK(fit.shadow_var < 1e-10);
  CHECK(fit.multipath_var < 1e-10);

  const auto pred = spatial_model_predict(fit, s, {{3.0, 5.0}, {9.0, 9.0}, {0.5, 0.5}});
  CHECK(pred[0] == doctest::Approx(-40.0));
  CHECK(pred[1] == doctest::Approx(fit.path_loss(9, 9)));
  CHECK(pred[2] == doctest::Approx(fit.path_loss(0.5, 0.5)));

  CHECK_THROWS_AS(fit_path_loss({{0, 0, -40}, {0, 1, -41}}, tx), PreconditionError);
  CHECK_THROWS_AS(fit_path_loss({{3, 6, -40}, {4, 5, -41}, {2, 5, -42}}, tx), NumericalError);
}

TEST_CASE("spatial model conditional mean") {
  PathLossFit fit;
  fit.k_db = -50;
  fit.n_pl = 3;
  fit.shadow_var = 4;
  fit.corr_dist = 5;
  fit.multipath_var = 0;
  fit.tx = {0, 0};
  std::vector<GainSample> s{{4, 4, fit.path_loss(4, 4) + 3.0}, {10, 2, fit.path_loss(10, 2) - 1.0}};
  const auto p = spatial_model_predict(fit, s, {{4, 4}, {400, 400}});
  CHECK(p[0] == doctest::Approx(s[0].gain_db));
  CHECK(p[1] == doctest::Approx(fit.path_loss(400, 400)).epsilon(1e-9));
  fit.shadow_var = 0;
  CHECK(spatial_model_predict(fit, s, {{7, 7}})[0] == doctest::Approx(fit.path_loss(7, 7)));
}

TEST_CASE("statistical: correlation distance recovered on synthetic maps") {
  Rng rng(8);
  envgen::PropagationParams p;
  p.shadow_var = 9;
  p.corr_dist = 8;
  p.multipath_var = 1;
  p.wall_penalty_db = 0;
  // 64x64 so that the field mean removed by the regression carries little of the variance.
  const int n = 64;
  const Mask empty(n, n, 0);
  std::vector<double> ds;
  for (int t = 0; t < 50; ++t) {
    const envgen::Cell tx{std::uniform_int_distribution<int>(0, n - 1)(rng), std::uniform_int_distribution<int>(0, n - 1)(rng)};
    const auto g = envgen::simulate_gain_map(empty, p, tx, rng, kCkmImageNetMap);
    std::vector<GainSample> s;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) s.push_back({double(r), double(c), g.gains()(r, c)});
    ds.push_back(fit_path_loss(s, tx).corr_dist);
  }
  CHECK(median(ds) == doctest::Approx(8.0).epsilon(0.30));
}

TEST_CASE("gaussian prior examples") {
  GaussianPrior pr;
  pr.mean = Eigen::Vector2d(0, 0);
  pr.covariance.resize(2, 2);
  pr.covariance << 1, 0.9, 0.9, 1;
  Mask m(1, 2, 0);
  m(0, 0) = 1;
  const auto o = make_obs(DegradationSpec::inpaint(m, std::sqrt(0.1)), 1, 2, {1.0});
  const Image a = mmse_reconstruct(o, pr), b = map_reconstruct(o, pr);
  CHECK(a(0, 0) == doctest::Approx(1.0 / 1.1));
  CHECK(a(0, 1) == doctest::Approx(0.9 / 1.1));
  CHECK(std::abs(a(0, 0) - b(0, 0)) < 1e-12);
  // Brute-force search of the negative log posterior.
  const Eigen::Matrix2d inv = pr.covariance.inverse();
  double best = 1e300, bx = 0, by = 0;
  for (double u = 0.5; u <= 1.2; u += 0.001)
    for (double v = 0.4; v <= 1.1; v += 0.001) {
      const Eigen::Vector2d z(u, v);
      const double f = (1.0 - u) * (1.0 - u) / 0.1 + z.dot(inv * z);
      if (f < best) {
        best = f;
        bx = u;
        by = v;
      }
    }
  CHECK(bx == doctest::Approx(a(0, 0)).epsilon(2e-3));
  CHECK(by == doctest::Approx(a(0, 1)).epsilon(2e-3));
}

TEST_CASE("gaussian prior limits and MAP = MMSE") {
  const auto pr = GaussianPrior::exponential(4, 4, 0.5, 0.04, 2.0);
  Rng rng(9);
  const Image x = random_image(4, 4, rng);
  const auto ylo = apply_degradation(x, DegradationSpec::denoise(1e-6), rng);
  const Image lo = mmse_reconstruct(ylo, pr);
  const Image hi = mmse_reconstruct(apply_degradation(x, DegradationSpec::denoise(1e4), rng), pr);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(lo.data[i] - ylo.values[i]) < 1e-8);
    CHECK(hi.data[i] == doctest::Approx(0.5).epsilon(1e-3));
  }
  for (const auto& s : {DegradationSpec::super_res(2, 0.1), DegradationSpec::inpaint(sparse_mask(4, 4, 0.5, rng), 0.1),
                        DegradationSpec::denoise(0.05)}) {
    const auto y = apply_degradation(x, s, rng);
    const Image a = map_reconstruct(y, pr), b = mmse_reconstruct(y, pr);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-9);
  }
  GaussianPrior bad = pr;
  bad.covariance(0, 0) = -1;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS_AS(mmse_reconstruct(apply_degradation(x, DegradationSpec::denoise(0.0)), pr), PreconditionError);
}

TEST_CASE("property: every baseline is exact on noise-free denoise") {
  Rng rng(10);
  const Image x = random_image(8, 8, rng);
  const auto y = apply_degradation(x, DegradationSpec::denoise(0));
  CHECK(ls_reconstruct(y) == x);
  for (auto m : {Interp::Knn, Interp::Idw, Interp::Bilinear, Interp::Bicubic}) {
    const Image r = interpolate(y, {m, 4, 2.0});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
  }
  const Image k = kriging_reconstruct(y, fit_variogram(y).variogram).estimate;
  CHECK(k == x);
  const Image sm = spatial_model_reconstruct(y, kRadioMapSeerMap, {2, 2});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(sm.data[i] == doctest::Approx(x.data[i]).epsilon(1e-9));
}

TEST_CASE("building cells are excluded from observations") {
  Mask b(4, 4, 0);
  b(1, 1) = 1;
  const auto y = apply_degradation(Image(4, 4, 0.5), DegradationSpec::denoise(0));
  CHECK(observed_points(y, &b).size() == 15);
  CHECK(observed_points(y).size() == 16);
  const auto sr = apply_degradation(Image(4, 4, 0.5), DegradationSpec::super_res(2, 0));
  CHECK(observed_points(sr, &b).size() == 4);
  const auto pts = observed_points(sr);
  CHECK(pts[0].row == 0.5);
  CHECK(pts[3].col == 2.5);
}
