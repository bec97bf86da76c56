// Acceptance harness: one PASS/FAIL line per criterion.
//   ckm_acceptance [--criteria 1,2,...] [--cli path/to/ckmforge] [--cache dir]
// Criteria 9 and 10 train (or reuse) the 20k-step toy model under --cache.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ckm/bench.hpp"
#include "ckm/envgen.hpp"
#include "ckm/metrics.hpp"
#include "ckm/model.hpp"
#include "ckm/parallel.hpp"
#include "ckm/selftest.hpp"

using namespace ckm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& text) {
  if (!pass) ++failures;
  std::printf("%s  criterion %2d  %s\n", pass ? "PASS" : "FAIL", id, text.c_str());
  std::fflush(stdout);
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

void from_selftest(int id, const selftest::Check& c, double budget_s) {
  const bool in_time = budget_s <= 0.0 || c.seconds < budget_s;
  std::string text = c.name + ": " + c.detail + fmt(" [%.2f s", c.seconds);
  text += budget_s > 0.0 ? fmt(" < %.0f s]", budget_s) : "]";
  report(id, c.pass && in_time, text);
}

// Toy end-to-end run shared by criteria 9 and 10.
constexpr int kMaps = 2000;
constexpr int kSide = 32;
constexpr std::uint64_t kCorpusSeed = 1;
constexpr long kSteps = 20000;

model::ModelConfig toy_config() {
  auto cfg = model::ModelConfig::compact();
  cfg.seed = 1;
  cfg.iterations = kSteps;
  return cfg;
}

fs::path ensure_checkpoint(const envgen::DatasetManifest& man, std::uint64_t hash, const fs::path& cache, std::string& how) {
  const fs::path ck = cache / "ckmdiff.ckmd";
  long have = 0;
  if (fs::exists(ck)) {
    try {
      const auto l = model::load_checkpoint(ck);
      if (l.extra.value("corpus_hash", std::uint64_t{0}) == hash) have = l.trained_steps;
    } catch (const std::exception& e) {
      std::cerr << "ignoring unreadable cached checkpoint: " << e.what() << "\n";
    }
  }
  if (have == kSteps) {
    const auto l = model::load_checkpoint(ck);
    how = "cached checkpoint, " + std::to_string(have) + " steps";
    if (l.extra.contains("train_seconds")) how += fmt(", trained in %.0f s", l.extra["train_seconds"].get<double>());
    return ck;
  }
  const auto cfg = toy_config();
  model::Trainer tr(cfg, bench::load_images(man, "train"));
  if (have > 0 && have < kSteps) tr.resume(ck);
  std::cerr << "training " << tr.steps_done() << " -> " << kSteps << " steps (" << tr.net().parameter_count()
            << " parameters)\n";
  nlohmann::json extra{{"manifest", fs::absolute(man.root / "manifest.json").string()}, {"corpus_hash", hash}};
  const auto t0 = Clock::now();
  while (tr.steps_done() < kSteps) {
    const auto r = tr.step();
    const long s = tr.steps_done();
    if (s % 500 == 0) std::cerr << "step " << s << " loss " << r.loss << fmt(" (%.0f s)", since(t0)) << "\n";
    if (s % 1000 == 0 || s == kSteps) {
      extra["train_seconds"] = since(t0);
      model::save_checkpoint(ck, tr.net(), &tr.optimizer(), extra);
    }
  }
  how = fmt("trained %.0f s this run", since(t0));
  return ck;
}

void toy_criteria(const fs::path& cache, bool want9, bool want10) {
  fs::create_directories(cache);
  envgen::DatasetOptions o;
  o.n_maps = kMaps;
  o.corpus_seed = kCorpusSeed;
  o.train_fraction = 0.9;
  o.env.rows = o.env.cols = kSide;
  const auto man = envgen::build_dataset(o, cache / "corpus");
  const std::uint64_t hash = envgen::corpus_hash(man);
  std::string how;
  const fs::path ck = ensure_checkpoint(man, hash, cache, how);

  bench::BenchConfig bc;
  bc.methods = {"knn", "kriging", "bilinear", "bicubic", "ckmdiff"};
  bc.tasks = {Task::Inpaint, Task::SuperRes};
  bc.checkpoint = ck;
  const auto t0 = Clock::now();
  const auto res = bench::run_bench(man, bc);
  bench::write_bench(cache / "bench", res, bc);
  const double bench_s = since(t0);

  auto gain = [&](Task task, const std::string& method) {
    for (const auto& tr : res.tasks)
      if (tr.task == task)
        for (const auto& row : tr.rows)
          if (row.method == method) return row.report.mse_gain;
    throw std::runtime_error("missing bench row " + method);
  };
  const double ck_in = gain(Task::Inpaint, "CKMDiff"), knn = gain(Task::Inpaint, "knn"),
               krig = gain(Task::Inpaint, "kriging");
  const double ck_sr = gain(Task::SuperRes, "CKMDiff"), bil = gain(Task::SuperRes, "bilinear"),
               bic = gain(Task::SuperRes, "bicubic");
  const std::size_t n = res.truth.size();

  if (want9) {
    std::ostringstream s;
    s << "toy ordering on " << n << " test maps (" << how << ", bench " << fmt("%.0f s", bench_s) << "); gain MSE dB^2: "
      << fmt("inpaint CKMDiff %.2f vs KNN %.2f, Kriging %.2f; ", ck_in, knn, krig)
      << fmt("SR x4 CKMDiff %.2f vs bilinear %.2f, bicubic %.2f", ck_sr, bil, bic);
    report(9, ck_in < knn && ck_in < krig && ck_sr < bil && ck_sr < bic, s.str());
  }
  if (want10) {
    const auto m = model::load_checkpoint(ck);
    std::vector<Observation> obs(n);
    for (std::size_t i = 0; i < n; ++i) obs[i] = bench::bench_observation(res.truth[i], Task::Inpaint, bc, i);
    const auto shuffled = bench::ckmdiff_reconstruct(m, obs, bc.seed, bc.sample_steps, true, worker_count());
    const double sh = metrics::mse_gain(res.truth, shuffled, man.value_map);
    report(10, ck_in <= 0.8 * sh,
           fmt("inpaint gain MSE true condition %.2f vs shuffled %.2f (ratio %.3f, need <= 0.800)", ck_in, sh, ck_in / sh));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ckmforge acceptance criteria"};
  std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  std::string cli = "ckmforge";
  std::string cache = "acceptance_cache";
  app.add_option("--criteria", criteria, "Criteria to run")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--cli", cli, "Path to the ckmforge binary (criterion 11)");
  app.add_option("--cache", cache, "Corpus and checkpoint cache for criteria 9 and 10");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> want(criteria.begin(), criteria.end());

  try {
    if (want.count(1))
      report(1, true,
             "scale statement: published table values need GPU-scale training on licensed corpora and are not "
             "reproduced; criteria 2-11 are property checks and a toy-scale run");
    if (want.count(2)) from_selftest(2, selftest::forward_marginals(), 5.0);
    if (want.count(3)) from_selftest(3, selftest::reverse_identity(), 10.0);
    if (want.count(4)) from_selftest(4, selftest::autodiff(), 60.0);
    if (want.count(5)) from_selftest(5, selftest::degradation_operators(), 0.0);
    if (want.count(6)) from_selftest(6, selftest::baseline_oracles(), 0.0);
    if (want.count(7)) from_selftest(7, selftest::metric_oracles(), 0.0);
    if (want.count(8)) {
      const auto r = metrics::table_ratio_check(0.0011, 10.7240, kRadioMapSeerMap.span());
      report(8, r.pass,
             fmt("published ratio 10.7240/0.0011 = %.1f vs span^2 %.0f: raw deviation %.2f%%, ", r.ratio, r.expected,
                 100.0 * r.raw_deviation) +
                 fmt("rounding interval [%.0f, %.0f], interval deviation %.2f%% (tolerance 5%%)", r.ratio_low, r.ratio_high,
                     100.0 * r.rounded_deviation));
    }
    if (want.count(9) || want.count(10)) toy_criteria(cache, want.count(9) > 0, want.count(10) > 0);
    if (want.count(11)) {
      setenv("CKMFORGE_THREADS", "1", 1);
      const std::string cmd = "\"" + cli + "\" selftest";
      const auto t0 = Clock::now();
      const int rc = std::system(cmd.c_str());
      const double s = since(t0);
      const int code = rc == -1 ? -1 : WEXITSTATUS(rc);
      report(11, code == 0 && s < 180.0, fmt("`ckmforge selftest` single-threaded: exit %.0f in %.1f s (budget 180 s)", code, s));
    }
  } catch (const std::exception& e) {
    std::printf("FAIL  harness error: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
