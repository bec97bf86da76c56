#include "ckm/selftest.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "ckm/baselines.hpp"
#include "ckm/diffusion.hpp"
#include "ckm/metrics.hpp"
#include "ckm/model.hpp"

namespace ckm::selftest {

using ad::Tensor;

namespace {

template <class F>
Check timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c{name, false, "", 0.0};
  try {
    body(c);
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = std::string("exception: ") + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Image random_image(int rows, int cols, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image im(rows, cols);
  for (double& v : im.data) v = u(rng);
  return im;
}

}  // namespace

GradCheck gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs, double h,
                     std::size_t max_entries) {
  for (const auto& t : inputs)
    if (!t.requires_grad()) throw PreconditionError("gradcheck inputs must require gradients");
  for (auto t : inputs) t.zero_grad();
  ad::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));
  GradCheck r;
  double scale = 0.0;
  std::vector<double> diff(inputs.size(), 0.0);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    auto& v = t.data();
    const std::size_t n = v.size();
    const std::size_t probes = max_entries ? std::min(max_entries, n) : n;
    ad::NoGradGuard ng;
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t i = probes == n ? p : p * n / probes;
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = loss().item();
      v[i] = orig - h;
      const double fm = loss().item();
      v[i] = orig;
      const double num = (fp - fm) / (2 * h);
      diff[k] = std::max(diff[k], std::abs(num - analytic[k][i]));
      scale = std::max(scale, std::abs(num));
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const double rel = diff[k] / std::max(scale, 1e-8);
    if (rel >= r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst = "input " + std::to_string(k);
    }
  }
  for (auto t : inputs) t.zero_grad();
  return r;
}

Check forward_marginals() {
  return timed("forward-marginals", [](Check& c) {
    const std::size_t n = 100000;
    const double z0 = 0.7;
    Rng rng(20240601);
    std::normal_distribution<double> nd;
    std::vector<double> zs(n, z0), eps(n);
    bool ok = true;
    std::ostringstream det;
    for (double t : {0.1, 0.5, 0.9}) {
      for (double& e : eps) e = nd(rng);
      const auto zt = diffusion::ddm_forward_sample(zs, t, eps);
      double m = 0.0;
      for (double v : zt) m += v;
      m /= n;
      double var = 0.0;
      for (double v : zt) var += (v - m) * (v - m);
      var /= n - 1;
      const double mean_tol = 4.0 * std::sqrt(t) / std::sqrt(static_cast<double>(n));
      const bool mok = std::abs(m - (1 - t) * z0) <= mean_tol;
      const bool vok = std::abs(var - t) <= 0.02 * t;
      ok = ok && mok && vok;
      det << "t=" << t << " mean err " << sci(std::abs(m - (1 - t) * z0)) << " (tol " << sci(mean_tol) << "), var rel err "
          << sci(std::abs(var - t) / t) << "; ";
    }
    c.pass = ok;
    c.detail = det.str();
  });
}

Check reverse_identity() {
  return timed("reverse-step", [](Check& c) {
    Rng rng(77);
    std::normal_distribution<double> nd;
    const std::size_t n = 1024;
    std::vector<double> z0(n), eps(n);
    for (double& v : z0) v = std::uniform_real_distribution<double>(0, 1)(rng);
    for (double& v : eps) v = nd(rng);

    // One step, S = 1, no noise: z1 = eps lands on z0.
    const auto one = diffusion::ddm_oracle_sample(z0, eps, {1e-4, 1}, nullptr);
    double e1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) e1 = std::max(e1, std::abs(one[i] - z0[i]));

    // One oracle step from the forward sample at t lands on the bridge mean at t - dt.
    double e2 = 0.0;
    for (double t : {0.9, 0.5, 0.1}) {
      const double dt = 0.05, s = t - dt;
      const auto zt = diffusion::ddm_forward_sample(z0, t, eps);
      std::vector<double> ch, eh;
      diffusion::OracleHeads{z0}(zt, t, ch, eh);
      const auto step = diffusion::ddm_reverse_step(zt, t, dt, ch, eh, std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < n; ++i) {
        const double mean = (1 - s) * z0[i] + (s / t) * (zt[i] - (1 - t) * z0[i]);
        e2 = std::max(e2, std::abs(step[i] - mean));
      }
    }

    // S = 1000 with injected noise.
    Rng nrng(78);
    const auto many = diffusion::ddm_oracle_sample(z0, eps, {1e-4, 1000}, &nrng);
    double mse = 0.0;
    for (std::size_t i = 0; i < n; ++i) mse += (many[i] - z0[i]) * (many[i] - z0[i]);
    mse /= n;
    c.pass = e1 < 1e-12 && e2 < 1e-12 && mse < 1e-4;
    c.detail = "S=1 max err " + sci(e1) + ", bridge-mean max err " + sci(e2) + ", S=1000 MSE " + sci(mse);
  });
}

Check autodiff() {
  return timed("autodiff", [](Check& c) {
    Rng rng(5);
    auto rnd = [&rng](const ad::Shape& s) { return Tensor::randn(s, rng, true); };
    // Inputs bounded away from 0 so that relu's kink is not probed.
    auto away = [&rng](const ad::Shape& s) {
      Tensor t = Tensor::randn(s, rng, true);
      for (double& v : t.data()) v += v >= 0 ? 0.2 : -0.2;
      return t;
    };
    struct Case {
      std::string name;
      std::vector<Tensor> in;
      std::function<Tensor(const std::vector<Tensor>&)> f;
    };
    std::vector<Case> cases;
    auto add_case = [&](std::string name, std::vector<Tensor> in, std::function<Tensor(const std::vector<Tensor>&)> f) {
      // Fixed random weights so that every output entry carries a distinct weight.
      Tensor w = Tensor::randn(f(in).shape(), rng);
      cases.push_back({std::move(name), in, [f, w](const std::vector<Tensor>& x) { return ad::sum(ad::mul(f(x), w)); }});
    };
    add_case("add", {rnd({2, 3}), rnd({2, 3})}, [](auto& x) { return ad::add(x[0], x[1]); });
    add_case("sub", {rnd({2, 3}), rnd({2, 3})}, [](auto& x) { return ad::sub(x[0], x[1]); });
    add_case("mul", {rnd({2, 3}), rnd({2, 3})}, [](auto& x) { return ad::mul(x[0], x[1]); });
    add_case("scale", {rnd({4})}, [](auto& x) { return ad::scale(x[0], -1.7); });
    add_case("matmul", {rnd({3, 4}), rnd({4, 2})}, [](auto& x) { return ad::matmul(x[0], x[1]); });
    add_case("linear", {rnd({3, 4}), rnd({5, 4}), rnd({5})}, [](auto& x) { return ad::linear(x[0], x[1], x[2]); });
    add_case("conv2d", {rnd({2, 3, 5, 5}), rnd({4, 3, 3, 3}), rnd({4})},
             [](auto& x) { return ad::conv2d(x[0], x[1], x[2], 1, 1); });
    add_case("conv2d-stride2", {rnd({2, 2, 6, 6}), rnd({3, 2, 3, 3}), rnd({3})},
             [](auto& x) { return ad::conv2d(x[0], x[1], x[2], 2, 1); });
    add_case("conv2d-1x1", {rnd({2, 3, 4, 4}), rnd({2, 3, 1, 1}), rnd({2})},
             [](auto& x) { return ad::conv2d(x[0], x[1], x[2], 1, 0); });
    add_case("conv_transpose2d", {rnd({2, 3, 3, 3}), rnd({3, 2, 4, 4}), rnd({2})},
             [](auto& x) { return ad::conv_transpose2d(x[0], x[1], x[2], 2, 1); });
    add_case("avg_pool2d", {rnd({2, 2, 4, 4})}, [](auto& x) { return ad::avg_pool2d(x[0], 2); });
    add_case("upsample_nearest", {rnd({2, 2, 3, 3})}, [](auto& x) { return ad::upsample_nearest(x[0], 2); });
    add_case("relu", {away({3, 4})}, [](auto& x) { return ad::relu(x[0]); });
    add_case("silu", {rnd({3, 4})}, [](auto& x) { return ad::silu(x[0]); });
    add_case("group_norm", {rnd({2, 4, 3, 3}), rnd({4}), rnd({4})},
             [](auto& x) { return ad::group_norm(x[0], 2, x[1], x[2]); });
    add_case("concat", {rnd({2, 2, 3}), rnd({2, 1, 3})}, [](auto& x) { return ad::concat({x[0], x[1]}, 1); });
    add_case("reshape", {rnd({2, 6})}, [](auto& x) { return ad::reshape(x[0], {3, 4}); });
    add_case("slice", {rnd({3, 5})}, [](auto& x) { return ad::slice(x[0], 1, 1, 3); });
    add_case("add_channel", {rnd({2, 3, 2, 2}), rnd({2, 3})}, [](auto& x) { return ad::add_channel(x[0], x[1]); });
    add_case("sum", {rnd({3, 3})}, [](auto& x) { return ad::scale(ad::sum(x[0]), 1.0); });
    add_case("mean", {rnd({3, 3})}, [](auto& x) { return ad::mean(x[0]); });
    add_case("mse", {rnd({3, 3}), rnd({3, 3})}, [](auto& x) { return ad::mse(x[0], x[1]); });

    double worst = 0.0;
    std::string worst_name;
    for (auto& cs : cases) {
      const auto r = gradcheck([&] { return cs.f(cs.in); }, cs.in);
      if (r.max_rel_err >= worst) {
        worst = r.max_rel_err;
        worst_name = cs.name;
      }
    }

    // Training loss of a tiny denoiser, every entry of every parameter tensor.
    model::ModelConfig cfg;
    cfg.image_size = 8;
    cfg.base_channels = 4;
    cfg.channel_mult = {1, 2};
    cfg.num_blocks = 1;
    cfg.cond_channels = 2;
    cfg.batch = 2;
    cfg.sampling_steps = 4;
    const model::DenoiserNet net(cfg);
    diffusion::IdentityCodec codec;
    std::vector<Image> x0{random_image(8, 8, rng), random_image(8, 8, rng)};
    std::vector<features::ConditionImage> conds;
    for (const auto& im : x0) conds.push_back(model::make_example(im, DegradationSpec::denoise(0.1), rng).cond);
    const Tensor eps = Tensor::randn({2, 1, 8, 8}, rng);
    const std::vector<double> t{0.3, 0.8};
    std::vector<Tensor> params;
    for (const auto& [name, p] : net.params().items) params.push_back(p);
    const auto r = gradcheck([&] { return model::diffusion_loss(net, codec, x0, conds, t, eps); }, params, 1e-5, 0);
    c.pass = worst < 1e-4 && r.max_rel_err < 1e-4;
    c.detail = std::to_string(cases.size()) + " op cases, worst " + worst_name + " " + sci(worst) + "; training loss over " +
               std::to_string(params.size()) + " parameter tensors " + sci(r.max_rel_err);
  });
}

Check degradation_operators() {
  return timed("degradation-operators", [](Check& c) {
    Rng rng(9);
    double worst = 0.0;
    int cases = 0;
    for (auto [rows, cols] : {std::pair{4, 4}, std::pair{8, 6}, std::pair{16, 16}}) {
      const Image x = random_image(rows, cols, rng);
      std::vector<DegradationSpec> specs{DegradationSpec::denoise(0.0), DegradationSpec::generate()};
      specs.push_back(DegradationSpec::inpaint(random_rect_mask(rows, cols, 0.5, rng), 0.0));
      Mask sparse(rows, cols, 0);
      for (auto& v : sparse.data) v = std::bernoulli_distribution(0.3)(rng) ? 1 : 0;
      specs.push_back(DegradationSpec::inpaint(sparse, 0.0));
      for (int m : {2, 4})
        if (rows % m == 0 && cols % m == 0) specs.push_back(DegradationSpec::super_res(m, 0.0));
      for (const auto& s : specs) {
        const Observation y = apply_degradation(x, s, rng);
        const Eigen::MatrixXd a = materialize_matrix(s, rows, cols);
        const Eigen::VectorXd ax = a * vec(x);
        if (static_cast<std::size_t>(ax.size()) != y.values.size()) throw ShapeError("operator sizes disagree");
        for (Eigen::Index i = 0; i < ax.size(); ++i)
          worst = std::max(worst, std::abs(ax[i] - y.values[static_cast<std::size_t>(i)]));
        ++cases;
      }
    }
    c.pass = worst < 1e-10;
    c.detail = std::to_string(cases) + " operator cases, max |A x - apply| " + sci(worst);
  });
}

Check baseline_oracles() {
  return timed("baselines", [](Check& c) {
    Rng rng(11);
    std::ostringstream det;
    bool ok = true;

    // Least squares against random perturbations.
    {
      const Image x = random_image(8, 8, rng);
      int violations = 0;
      for (const auto& s : {DegradationSpec::super_res(2, 0.05), DegradationSpec::inpaint(random_rect_mask(8, 8, 0.5, rng), 0.05)}) {
        const Observation obs = apply_degradation(x, s, rng);
        const Eigen::MatrixXd a = materialize_matrix(s, 8, 8);
        const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(obs.values.data(), static_cast<Eigen::Index>(obs.values.size()));
        const Eigen::VectorXd xl = vec(baselines::ls_reconstruct(obs));
        const double base = (y - a * xl).squaredNorm();
        std::normal_distribution<double> nd(0.0, 0.1);
        for (int k = 0; k < 100; ++k) {
          Eigen::VectorXd d(xl.size());
          for (auto& v : d) v = nd(rng);
          if ((y - a * (xl + d)).squaredNorm() < base - 1e-12) ++violations;
        }
      }
      ok = ok && violations == 0;
      det << "LS perturbation violations " << violations << "; ";
    }

    // Kriging reproduces observed cells.
    {
      const Image x = random_image(16, 16, rng);
      const Observation obs = apply_degradation(x, DegradationSpec::inpaint(random_rect_mask(16, 16, 0.4, rng), 0.05), rng);
      const auto fit = baselines::fit_variogram(obs);
      const auto est = baselines::kriging_reconstruct(obs, fit.variogram).estimate;
      double err = 0.0;
      std::size_t j = 0;
      for (std::size_t i = 0; i < est.size(); ++i)
        if (obs.spec.observed.data[i]) err = std::max(err, std::abs(est.data[i] - obs.values[j++]));
      ok = ok && err < 1e-9;
      det << "Kriging at observed cells " << sci(err) << "; ";
    }

    // MAP and MMSE coincide under a Gaussian prior.
    {
      const auto prior = baselines::GaussianPrior::exponential(8, 8, 0.5, 0.04, 3.0);
      const Image x = random_image(8, 8, rng);
      double err = 0.0;
      for (const auto& s : {DegradationSpec::denoise(0.1), DegradationSpec::super_res(2, 0.1),
                            DegradationSpec::inpaint(random_rect_mask(8, 8, 0.5, rng), 0.1)}) {
        const Observation obs = apply_degradation(x, s, rng);
        const Image a = baselines::map_reconstruct(obs, prior), b = baselines::mmse_reconstruct(obs, prior);
        for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a.data[i] - b.data[i]));
      }
      ok = ok && err < 1e-9;
      det << "MAP vs MMSE " << sci(err) << "; ";
    }

    // Path-loss recovery on noise-free data.
    {
      const envgen::Cell tx{5, 9};
      const double k_db = -42.5, n_pl = 2.7;
      std::vector<baselines::GainSample> samples;
      for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 16; ++col) {
          const double d = std::max(1.0, std::hypot(r - tx.row, col - tx.col));
          samples.push_back({static_cast<double>(r), static_cast<double>(col), k_db - 10.0 * n_pl * std::log10(d)});
        }
      const auto fit = baselines::fit_path_loss(samples, tx);
      const double err = std::max(std::abs(fit.k_db - k_db), std::abs(fit.n_pl - n_pl));
      ok = ok && err < 1e-8;
      det << "path-loss parameters " << sci(err);
    }
    c.pass = ok;
    c.detail = det.str();
  });
}

namespace {

// Scalar-loop references, written straight from the metric definitions.
struct Ref {
  static double mse(const metrics::Batch& x, const metrics::Batch& y) {
    double s = 0;
    int n = 0;
    for (std::size_t m = 0; m < x.size(); ++m)
      for (int r = 0; r < x[m].rows; ++r)
        for (int c = 0; c < x[m].cols; ++c) {
          s += (x[m](r, c) - y[m](r, c)) * (x[m](r, c) - y[m](r, c));
          ++n;
        }
    return s / n;
  }
  static double nmse(const metrics::Batch& x, const metrics::Batch& y) {
    double s = 0;
    for (std::size_t m = 0; m < x.size(); ++m) {
      double num = 0, den = 0;
      for (int r = 0; r < x[m].rows; ++r)
        for (int c = 0; c < x[m].cols; ++c) {
          num += (x[m](r, c) - y[m](r, c)) * (x[m](r, c) - y[m](r, c));
          den += x[m](r, c) * x[m](r, c);
        }
      s += num / den;
    }
    return s / static_cast<double>(x.size());
  }
  static double gain(const metrics::Batch& x, const metrics::Batch& y, const ValueMap& map) {
    double s = 0;
    int n = 0;
    for (std::size_t m = 0; m < x.size(); ++m)
      for (int r = 0; r < x[m].rows; ++r)
        for (int c = 0; c < x[m].cols; ++c) {
          const double gx = map.min_db + x[m](r, c) * (map.max_db - map.min_db);
          const double gy = map.min_db + y[m](r, c) * (map.max_db - map.min_db);
          s += (gx - gy) * (gx - gy);
          ++n;
        }
    return s / n;
  }
  static double psnr(const metrics::Batch& x, const metrics::Batch& y) {
    double s = 0;
    for (std::size_t m = 0; m < x.size(); ++m) {
      double e = 0;
      for (int r = 0; r < x[m].rows; ++r)
        for (int c = 0; c < x[m].cols; ++c) e += (x[m](r, c) - y[m](r, c)) * (x[m](r, c) - y[m](r, c));
      s += 10.0 * std::log10(static_cast<double>(x[m].rows * x[m].cols) / e);
    }
    return s / static_cast<double>(x.size());
  }
  static double ssim(const metrics::Batch& x, const metrics::Batch& y) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double s = 0;
    for (std::size_t m = 0; m < x.size(); ++m) {
      const double n = x[m].rows * x[m].cols;
      double mx = 0, my = 0;
      for (int r = 0; r < x[m].rows; ++r)
        for (int c = 0; c < x[m].cols; ++c) {
          mx += x[m](r, c) / n;
          my += y[m](r, c) / n;
        }
      double vx = 0, vy = 0, cv = 0;
      for (int r = 0; r < x[m].rows; ++r)
        for (int c = 0; c < x[m].cols; ++c) {
          vx += (x[m](r, c) - mx) * (x[m](r, c) - mx) / n;
          vy += (y[m](r, c) - my) * (y[m](r, c) - my) / n;
          cv += (x[m](r, c) - mx) * (y[m](r, c) - my) / n;
        }
      s += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return s / static_cast<double>(x.size());
  }
  // Two samples per side make both covariances rank one: S = 2 d d^T with d half the
  // difference of the samples, and tr sqrt(S_r S_c) = 2 |d . e|.
  static double fd2(const Eigen::MatrixXd& fr, const Eigen::MatrixXd& fc) {
    double mu = 0, dd = 0, ee = 0, de = 0;
    for (Eigen::Index j = 0; j < fr.cols(); ++j) {
      const double mr = 0.5 * (fr(0, j) + fr(1, j)), mc = 0.5 * (fc(0, j) + fc(1, j));
      const double d = 0.5 * (fr(0, j) - fr(1, j)), e = 0.5 * (fc(0, j) - fc(1, j));
      mu += (mr - mc) * (mr - mc);
      dd += d * d;
      ee += e * e;
      de += d * e;
    }
    return mu + 2 * dd + 2 * ee - 4 * std::abs(de);
  }
};

}  // namespace

Check metric_oracles() {
  return timed("metrics", [](Check& c) {
    Rng rng(13);
    std::ostringstream det;
    double worst = 0.0;
    std::string worst_name;
    auto track = [&](const std::string& name, double a, double b) {
      const double e = std::abs(a - b);
      if (e >= worst) {
        worst = e;
        worst_name = name;
      }
    };
    for (int trial = 0; trial < 20; ++trial) {
      metrics::Batch x{random_image(2, 2, rng), random_image(2, 2, rng)};
      metrics::Batch y{random_image(2, 2, rng), random_image(2, 2, rng)};
      track("mse_pixel", metrics::mse_pixel(x, y), Ref::mse(x, y));
      track("rmse", metrics::rmse(x, y), std::sqrt(Ref::mse(x, y)));
      track("nmse", metrics::nmse(x, y).value, Ref::nmse(x, y));
      // Gains span 100 dB, so the dB^2 error is compared relative to its size.
      track("mse_gain", metrics::mse_gain(x, y, kRadioMapSeerMap) / 1e4, Ref::gain(x, y, kRadioMapSeerMap) / 1e4);
      track("psnr", metrics::psnr(x, y).value, Ref::psnr(x, y));
      track("ssim", metrics::ssim(x, y), Ref::ssim(x, y));
      track("fd", metrics::frechet_distance(metrics::builtin_features(x), metrics::builtin_features(y)).value,
            Ref::fd2(metrics::builtin_features(x), metrics::builtin_features(y)));
    }
    det << "worst scalar-loop deviation " << sci(worst) << " (" << worst_name << "); ";

    const Eigen::VectorXd m0 = Eigen::VectorXd::Zero(1), m1 = Eigen::VectorXd::Constant(1, 1.0);
    const Eigen::MatrixXd s1 = Eigen::MatrixXd::Constant(1, 1, 1.0), s4 = Eigen::MatrixXd::Constant(1, 1, 4.0);
    const double fd_a = metrics::frechet_from_moments(m0, s1, m1, s1).value;
    const double fd_b = metrics::frechet_from_moments(m0, s1, m0, s4).value;
    det << "FD N(0,1)|N(1,1) " << fd_a << ", N(0,1)|N(0,4) " << fd_b << "; ";

    metrics::Batch x{random_image(16, 16, rng), random_image(16, 16, rng)};
    metrics::Batch y{random_image(16, 16, rng), random_image(16, 16, rng)};
    x[0](3, 3) = 0.0;
    y[0](3, 3) = 0.4;
    const double ss = metrics::ssim(x, x);
    double ident = 0.0;
    for (bool excl : {false, true}) {
      metrics::MetricOptions o;
      o.exclude_buildings = excl;
      const double span = kCkmImageNetMap.span();
      ident = std::max(ident, std::abs(metrics::mse_gain(x, y, kCkmImageNetMap, o) - metrics::mse_pixel(x, y, o) * span * span) /
                                  (span * span));
    }
    det << "SSIM(X,X) " << ss << "; gain identity rel err " << sci(ident);
    c.pass = worst < 1e-12 && std::abs(fd_a - 1.0) < 1e-12 && std::abs(fd_b - 1.0) < 1e-12 && std::abs(ss - 1.0) < 1e-12 &&
             ident < 1e-12;
    c.detail = det.str();
  });
}

std::vector<Check> run_all() {
  return {forward_marginals(), reverse_identity(), autodiff(), degradation_operators(), baseline_oracles(), metric_oracles()};
}

}  // namespace ckm::selftest
