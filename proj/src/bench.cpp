#include "ckm/bench.hpp"

#include <algorithm>
#include <fstream>

#include "ckm/features.hpp"
#include "ckm/io.hpp"
#include "ckm/parallel.hpp"

namespace ckm::bench {

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"ls",      "knn",           "bilinear",     "bicubic",       "idw",
                                              "kriging", "spatial-model", "gaussian-map", "gaussian-mmse", "ckmdiff"};
  return names;
}

bool is_method(const std::string& name) {
  const auto& n = method_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

bool supports(const std::string& method, Task task) {
  if (!is_method(method)) throw UnsupportedError("unknown method '" + method + "'");
  if (method == "ls" || method == "ckmdiff") return true;
  if (task == Task::Generate) return false;
  if (method == "bilinear" || method == "bicubic") return task == Task::SuperRes || task == Task::Denoise;
  return true;
}

Image reconstruct(const std::string& method, const Observation& obs, const Context& ctx) {
  if (!supports(method, obs.spec.kind))
    throw UnsupportedError("method " + method + " does not apply to task " + task_name(obs.spec.kind));
  using namespace baselines;
  if (method == "ls") return ls_reconstruct(obs);
  if (method == "knn") return interpolate(obs, {Interp::Knn, 4, 2.0});
  if (method == "idw") return interpolate(obs, {Interp::Idw, 8, 2.0});
  if (method == "bilinear") return interpolate(obs, {Interp::Bilinear, 4, 2.0});
  if (method == "bicubic") return interpolate(obs, {Interp::Bicubic, 4, 2.0});
  if (method == "kriging") return kriging_reconstruct(obs, fit_variogram(obs).variogram).estimate;
  if (method == "spatial-model") {
    if (!ctx.tx) throw UnsupportedError("spatial-model needs the transmitter location");
    return spatial_model_reconstruct(obs, ctx.map, *ctx.tx, ctx.buildings);
  }
  if (method == "gaussian-map" || method == "gaussian-mmse") {
    if (!ctx.prior) throw UnsupportedError(method + " needs a Gaussian prior");
    return method == "gaussian-map" ? map_reconstruct(obs, *ctx.prior) : mmse_reconstruct(obs, *ctx.prior);
  }
  if (!ctx.model) throw UnsupportedError("ckmdiff needs a trained checkpoint");
  return ckmdiff_reconstruct(*ctx.model, {obs}, ctx.seed, ctx.sample_steps).front();
}

Observation bench_observation(const Image& truth, Task task, const BenchConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(task)), index));
  DegradationSpec spec;
  switch (task) {
    case Task::Inpaint:
      spec = DegradationSpec::inpaint(random_rect_mask(truth.rows, truth.cols, cfg.mask_frac, rng), cfg.noise_std);
      break;
    case Task::SuperRes: spec = DegradationSpec::super_res(cfg.sr_factor, cfg.noise_std); break;
    case Task::Denoise: spec = DegradationSpec::denoise(cfg.noise_std); break;
    case Task::Generate: spec = DegradationSpec::generate(); break;
  }
  return apply_degradation(truth, spec, rng);
}

TestSet load_split(const envgen::DatasetManifest& man, const std::string& split, std::size_t max_images) {
  TestSet ts;
  for (const auto* e : man.split(split)) {
    if (max_images && ts.truth.size() >= max_images) break;
    const CkmGrid g = io::read_ckm(man.resolve(e->path));
    ts.truth.push_back(g.pixels());
    ts.buildings.push_back(g.building_mask() ? *g.building_mask() : Mask(g.rows(), g.cols(), 0));
    ts.tx.push_back(e->tx);
  }
  return ts;
}

std::vector<Image> load_images(const envgen::DatasetManifest& man, const std::string& split) {
  return load_split(man, split).truth;
}

std::vector<Image> ckmdiff_reconstruct(const model::LoadedModel& m, const std::vector<Observation>& obs,
                                       std::uint64_t seed, int steps, bool shuffle, int threads) {
  std::vector<features::ConditionImage> conds;
  conds.reserve(obs.size());
  for (const auto& o : obs) conds.push_back(features::condition_for(o));
  if (shuffle && conds.size() > 1) std::rotate(conds.begin(), conds.begin() + 1, conds.end());
  model::SampleOptions so;
  so.steps = steps;
  so.t_min = std::min(m.net->config().t_min, 1.0 / steps);
  so.threads = threads;
  return model::sample(*m.net, *m.codec, conds, seed, so);
}

BenchResult run_bench(const envgen::DatasetManifest& man, const BenchConfig& cfg) {
  for (const auto& mth : cfg.methods)
    if (!is_method(mth)) throw UnsupportedError("unknown method '" + mth + "'");
  const TestSet ts = load_split(man, "test", cfg.max_images);
  if (ts.truth.empty()) throw PreconditionError("manifest has no test images");
  const int threads = cfg.threads > 0 ? cfg.threads : worker_count();

  std::optional<baselines::GaussianPrior> prior;
  const bool wants_prior = std::any_of(cfg.methods.begin(), cfg.methods.end(),
                                       [](const std::string& m) { return m.rfind("gaussian", 0) == 0; });
  if (wants_prior && ts.truth[0].size() <= baselines::kGaussianOracleCells) {
    const auto train = load_images(man, "train");
    if (train.size() >= 2) {
      prior = baselines::GaussianPrior::empirical(train);
      prior->prepare();
    }
  }
  std::optional<model::LoadedModel> mdl;
  if (!cfg.checkpoint.empty()) mdl = model::load_checkpoint(cfg.checkpoint);

  BenchResult res;
  res.truth = ts.truth;
  const std::size_t n = ts.truth.size();
  for (Task task : cfg.tasks) {
    TaskResult tr{task, {}, {}};
    std::vector<Observation> obs(n);
    for (std::size_t i = 0; i < n; ++i) obs[i] = bench_observation(ts.truth[i], task, cfg, i);
    for (const auto& mth : cfg.methods) {
      metrics::ReportRow row{mth == "ckmdiff" ? "CKMDiff" : mth, task_name(task), cfg.dataset_name, {}, true, ""};
      row.report.n_images = static_cast<int>(n);
      std::vector<Image> out;
      std::string why;
      if (!supports(mth, task)) {
        why = "not defined for this task";
      } else if (mth == "ckmdiff" && !mdl) {
        why = "no checkpoint";
      } else if (mth.rfind("gaussian", 0) == 0 && (!prior || cfg.noise_std <= 0.0)) {
        why = !prior ? "no prior (grid too large or no training split)" : "needs observation noise";
      } else if (mth == "ckmdiff") {
        out = ckmdiff_reconstruct(*mdl, obs, cfg.seed, cfg.sample_steps, false, threads);
      } else {
        out.resize(n);
        parallel_for(
            n,
            [&](std::size_t i) {
              Context ctx;
              ctx.map = man.value_map;
              ctx.buildings = &ts.buildings[i];
              ctx.tx = ts.tx[i];
              ctx.prior = prior ? &*prior : nullptr;
              out[i] = reconstruct(mth, obs[i], ctx);
            },
            threads);
      }
      if (out.empty()) {
        row.available = false;
        row.note = why;
      } else {
        row.report = metrics::evaluate(ts.truth, out, man.value_map, cfg.metric);
      }
      tr.rows.push_back(std::move(row));
      tr.recon.push_back(std::move(out));
    }
    res.tasks.push_back(std::move(tr));
  }
  return res;
}

void write_bench(const std::filesystem::path& dir, const BenchResult& res, const BenchConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream txt(dir / "tables.txt"), csv(dir / "tables.csv");
  if (!txt || !csv) throw IoError("cannot write benchmark tables under " + dir.string());
  bool header = true;
  for (const auto& tr : res.tasks) {
    const std::string title = tr.task == Task::Inpaint
                                  ? "Inpainting with noisy observation (" + std::to_string(tr.rows.empty() ? 0 : tr.rows[0].report.n_images) + " maps)"
                              : tr.task == Task::SuperRes ? "Super-resolution x" + std::to_string(cfg.sr_factor) + " with noisy observation"
                                                          : "Task " + task_name(tr.task);
    metrics::write_table(txt, title, tr.rows);
    txt << '\n';
    metrics::write_csv(csv, tr.rows, header);
    header = false;
  }
  nlohmann::json j{{"methods", cfg.methods},
                   {"mask_frac", cfg.mask_frac},
                   {"sr_factor", cfg.sr_factor},
                   {"noise_std", cfg.noise_std},
                   {"seed", cfg.seed},
                   {"sample_steps", cfg.sample_steps},
                   {"checkpoint", cfg.checkpoint.string()},
                   {"exclude_buildings", cfg.metric.exclude_buildings},
                   {"windowed_ssim", cfg.metric.windowed_ssim},
                   {"max_images", cfg.max_images},
                   {"dataset", cfg.dataset_name}};
  std::vector<std::string> tasks;
  for (Task t : cfg.tasks) tasks.push_back(task_name(t));
  j["tasks"] = tasks;
  io::write_text(dir / "config.json", j.dump(2) + "\n");
}

}  // namespace ckm::bench
