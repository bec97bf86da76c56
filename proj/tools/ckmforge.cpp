// ckmforge: data generation, degradation, reconstruction, training, sampling, evaluation.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ckm/bench.hpp"
#include "ckm/checkpoint.hpp"
#include "ckm/envgen.hpp"
#include "ckm/features.hpp"
#include "ckm/io.hpp"
#include "ckm/metrics.hpp"
#include "ckm/model.hpp"
#include "ckm/parallel.hpp"
#include "ckm/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ckm;

namespace {

constexpr int kUsageExit = 2;

// Thrown for argument combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void echo_config(const fs::path& dir, const json& resolved) {
  fs::create_directories(dir.empty() ? fs::path(".") : dir);
  io::write_text((dir.empty() ? fs::path(".") : dir) / "config.resolved.json", resolved.dump(2) + "\n");
}

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

// ---- gen-data
struct GenArgs {
  int maps = 100;
  int size = 32;
  std::uint64_t seed = 1;
  double train_fraction = 0.9;
  std::string out;
};

int run_gen(const GenArgs& a) {
  envgen::DatasetOptions o;
  o.n_maps = a.maps;
  o.corpus_seed = a.seed;
  o.train_fraction = a.train_fraction;
  o.env.rows = o.env.cols = a.size;
  const auto m = envgen::build_dataset(o, a.out);
  echo_config(a.out, {{"command", "gen-data"},
                      {"maps", a.maps},
                      {"size", a.size},
                      {"seed", a.seed},
                      {"train_fraction", a.train_fraction},
                      {"corpus_hash", envgen::corpus_hash(m)}});
  std::cout << "wrote " << m.entries.size() << " maps (" << m.split("train").size() << " train, " << m.split("test").size()
            << " test) to " << a.out << "\n";
  return 0;
}

// ---- degrade
struct DegradeArgs {
  std::string task = "denoise";
  double mask_frac = 0.25;
  int factor = 4;
  double noise_std = 30.0 / 255.0;
  std::uint64_t seed = 0;
  std::string in, out;
};

int run_degrade(const DegradeArgs& a) {
  const Image x = io::read_ckm(a.in).pixels();
  Rng rng(a.seed);
  DegradationSpec spec;
  switch (parse_task(a.task)) {
    case Task::Denoise: spec = DegradationSpec::denoise(a.noise_std, a.seed); break;
    case Task::Inpaint: spec = DegradationSpec::inpaint(random_rect_mask(x.rows, x.cols, a.mask_frac, rng), a.noise_std, a.seed); break;
    case Task::SuperRes: spec = DegradationSpec::super_res(a.factor, a.noise_std, a.seed); break;
    case Task::Generate: spec = DegradationSpec::generate(a.seed); break;
  }
  io::write_observation(a.out, apply_degradation(x, spec, rng));
  std::cout << "wrote " << task_name(spec.kind) << " observation to " << a.out << "\n";
  return 0;
}

// ---- reconstruct
struct ReconArgs {
  std::string method, obs, out, checkpoint, manifest, buildings;
  std::vector<int> tx;
  double min_db = kRadioMapSeerMap.min_db, max_db = kRadioMapSeerMap.max_db;
  std::uint64_t seed = 0;
  int steps = 50;
};

void write_image(const fs::path& out, const Image& img, const ValueMap& map) {
  Image clamped = img;
  for (double& v : clamped.data) v = std::clamp(v, 0.0, 1.0);
  io::write_ckm(out, CkmGrid::from_pixels(clamped, map));
}

int run_reconstruct(const ReconArgs& a) {
  const Observation obs = io::read_observation(a.obs);
  bench::Context ctx;
  ctx.map = {a.min_db, a.max_db};
  ctx.map.validate();
  ctx.seed = a.seed;
  ctx.sample_steps = a.steps;
  std::optional<Mask> buildings;
  if (!a.buildings.empty()) {
    buildings = io::read_mask(a.buildings);
    ctx.buildings = &*buildings;
  }
  if (!a.tx.empty()) ctx.tx = envgen::Cell{a.tx[0], a.tx[1]};
  std::optional<baselines::GaussianPrior> prior;
  if (a.method.rfind("gaussian", 0) == 0) {
    if (a.manifest.empty()) throw UsageError(a.method + " needs --manifest to estimate the prior from the train split");
    const auto man = envgen::read_manifest(a.manifest);
    prior = baselines::GaussianPrior::empirical(bench::load_images(man, "train"));
    ctx.prior = &*prior;
    ctx.map = man.value_map;
  }
  std::optional<model::LoadedModel> m;
  if (a.method == "ckmdiff") {
    if (a.checkpoint.empty()) throw UsageError("ckmdiff needs --checkpoint");
    m = model::load_checkpoint(a.checkpoint);
    ctx.model = &*m;
  }
  write_image(a.out, bench::reconstruct(a.method, obs, ctx), ctx.map);
  std::cout << "wrote " << a.method << " reconstruction to " << a.out << "\n";
  return 0;
}

// ---- train
struct TrainArgs {
  std::string manifest, config, out, resume;
  long iters = 0;
  int log_every = 50;
  int ckpt_every = 1000;
  std::string preset;
};

int run_train(const TrainArgs& a) {
  model::ModelConfig cfg = a.preset.empty() ? model::ModelConfig::compact() : model::ModelConfig::preset(a.preset);
  if (!a.config.empty()) {
    json j = json::parse(io::read_text(a.config));
    if (!j.contains("preset") && !a.preset.empty()) j["preset"] = a.preset;
    cfg = j.get<model::ModelConfig>();
  }
  if (a.iters > 0) cfg.iterations = a.iters;
  cfg.validate();
  const auto man = envgen::read_manifest(a.manifest);
  auto images = bench::load_images(man, "train");
  if (images.empty()) throw PreconditionError("manifest has no training images");

  const fs::path out(a.out);
  const fs::path dir = parent_or_cwd(out);
  json resolved{{"command", "train"}, {"manifest", fs::absolute(a.manifest).string()}, {"model", cfg},
                {"train_images", images.size()}, {"corpus_hash", envgen::corpus_hash(man)}};
  echo_config(dir, resolved);

  model::Trainer tr(cfg, std::move(images));
  if (!a.resume.empty()) tr.resume(a.resume);
  std::ofstream log(out.string() + ".loss.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open loss log next to " + out.string());
  std::cout << "parameters " << tr.net().parameter_count() << ", steps " << tr.steps_done() << " -> " << cfg.iterations << "\n";
  json extra{{"manifest", resolved["manifest"]}, {"corpus_hash", resolved["corpus_hash"]}};
  const auto t0 = std::chrono::steady_clock::now();
  double window = 0.0;
  int in_window = 0;
  while (tr.steps_done() < cfg.iterations) {
    model::StepResult r;
    try {
      r = tr.step();
    } catch (const NumericalError&) {
      const fs::path abort_path = out.string() + ".abort";
      model::save_checkpoint(abort_path, tr.net(), &tr.optimizer(), extra);
      std::cerr << "training diverged; last good weights saved to " << abort_path << "\n";
      throw;
    }
    const long s = tr.steps_done();
    window += r.loss;
    ++in_window;
    const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << json{{"step", s}, {"loss", r.loss}, {"lr", r.lr}, {"batch_seed", r.batch_seed}, {"elapsed_s", el}}.dump() << "\n";
    if (s % a.log_every == 0 || s == cfg.iterations) {
      std::cout << "step " << s << " loss " << window / in_window << " lr " << r.lr << " (" << std::fixed
                << std::setprecision(1) << el << " s)" << std::defaultfloat << std::setprecision(6) << std::endl;
      log.flush();
      window = 0.0;
      in_window = 0;
    }
    if (a.ckpt_every > 0 && s % a.ckpt_every == 0) {
      extra["train_seconds"] = el;
      model::save_checkpoint(out, tr.net(), &tr.optimizer(), extra);
    }
  }
  extra["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  model::save_checkpoint(out, tr.net(), &tr.optimizer(), extra);
  std::cout << "wrote checkpoint " << out << "\n";
  return 0;
}

// ---- sample
struct SampleArgs {
  std::string checkpoint, condition, out, dump;
  int steps = 50;
  std::uint64_t seed = 0;
  double min_db = kRadioMapSeerMap.min_db, max_db = kRadioMapSeerMap.max_db;
};

int run_sample(const SampleArgs& a) {
  const auto m = model::load_checkpoint(a.checkpoint);
  const int side = m.net->config().image_size;
  features::ConditionImage cond;
  if (a.condition.empty()) {
    cond = features::condition_for(apply_degradation(Image(side, side), DegradationSpec::generate()));
  } else {
    cond = features::condition_for(io::read_observation(a.condition));
  }
  if (!a.dump.empty()) features::dump_channels(a.dump, cond);
  model::SampleOptions so;
  so.steps = a.steps;
  so.t_min = std::min(m.net->config().t_min, 1.0 / a.steps);
  const Image x = model::sample(*m.net, *m.codec, {cond}, a.seed, so).front();
  write_image(a.out, x, {a.min_db, a.max_db});
  std::cout << "wrote sample to " << a.out << "\n";
  return 0;
}

// ---- eval
struct EvalArgs {
  std::vector<std::string> truth, recon;
  bool exclude_buildings = false;
  bool windowed_ssim = false;
  std::string json_out;
};

int run_eval(const EvalArgs& a) {
  if (a.truth.size() != a.recon.size()) throw UsageError("--truth and --recon need the same number of files");
  metrics::Batch t, r;
  std::optional<ValueMap> map;
  for (std::size_t i = 0; i < a.truth.size(); ++i) {
    const CkmGrid g = io::read_ckm(a.truth[i]);
    if (map && !(*map == g.value_map())) throw PreconditionError("truth files use different value maps");
    map = g.value_map();
    t.push_back(g.pixels());
    r.push_back(io::read_ckm(a.recon[i]).pixels());
  }
  metrics::MetricOptions o;
  o.exclude_buildings = a.exclude_buildings;
  o.windowed_ssim = a.windowed_ssim;
  const auto rep = metrics::evaluate(t, r, *map, o);
  const json j{{"mse_pixel", rep.mse_pixel}, {"rmse", rep.rmse},     {"nmse", rep.nmse},
               {"mse_gain", rep.mse_gain},   {"psnr_db", rep.psnr},  {"ssim", rep.ssim},
               {"fd", rep.n_images >= 2 ? json(rep.fd) : json(nullptr)},
               {"fd_label", metrics::kFdLabel},
               {"n_images", rep.n_images},   {"value_map", {{"min_db", map->min_db}, {"max_db", map->max_db}}},
               {"flags", rep.flags}};
  std::cout << j.dump(2) << "\n";
  if (!a.json_out.empty()) io::write_text(a.json_out, j.dump(2) + "\n");
  return 0;
}

// ---- bench
struct BenchArgs {
  std::string manifest, out, checkpoint;
  std::vector<std::string> methods, tasks;
  double mask_frac = 0.25;
  int factor = 4;
  double noise_std = 30.0 / 255.0;
  std::uint64_t seed = 7;
  int steps = 50;
  std::size_t max_images = 0;
  bool exclude_buildings = false, windowed_ssim = false;
};

int run_bench(const BenchArgs& a) {
  const auto man = envgen::read_manifest(a.manifest);
  bench::BenchConfig cfg;
  if (!a.methods.empty()) cfg.methods = a.methods;
  if (!a.tasks.empty()) {
    cfg.tasks.clear();
    for (const auto& t : a.tasks) cfg.tasks.push_back(parse_task(t));
  }
  cfg.mask_frac = a.mask_frac;
  cfg.sr_factor = a.factor;
  cfg.noise_std = a.noise_std;
  cfg.seed = a.seed;
  cfg.sample_steps = a.steps;
  cfg.checkpoint = a.checkpoint;
  cfg.max_images = a.max_images;
  cfg.metric.exclude_buildings = a.exclude_buildings;
  cfg.metric.windowed_ssim = a.windowed_ssim;
  cfg.dataset_name = fs::path(a.manifest).parent_path().filename().string();
  if (cfg.dataset_name.empty()) cfg.dataset_name = "synthetic";
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = bench::run_bench(man, cfg);
  bench::write_bench(a.out, res, cfg);
  std::cout << io::read_text(fs::path(a.out) / "tables.txt");
  std::cout << "bench finished in " << std::fixed << std::setprecision(1)
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return 0;
}

int run_selftest() {
  bool ok = true;
  for (const auto& c : selftest::run_all()) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << std::left << std::setw(22) << c.name << std::right << std::fixed
              << std::setprecision(2) << std::setw(7) << c.seconds << " s  " << c.detail << "\n";
    ok = ok && c.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ckmforge: channel knowledge map construction with diffusion and classical baselines"};
  app.require_subcommand(1);
  std::function<int()> action;

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic corpus and manifest");
  g->add_option("--maps", gen.maps, "Number of maps")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "Map side in cells")->check(CLI::Range(4, 4096));
  g->add_option("--seed", gen.seed, "Corpus seed");
  g->add_option("--train-fraction", gen.train_fraction, "Fraction of maps in the train split")->check(CLI::Range(0.0, 1.0));
  g->add_option("--out", gen.out, "Output directory")->required();
  g->callback([&] { action = [&] { return run_gen(gen); }; });

  DegradeArgs deg;
  auto* d = app.add_subcommand("degrade", "Apply y = A x + n to a map");
  d->add_option("--task", deg.task)->check(CLI::IsMember({"denoise", "inpaint", "sr", "generate"}))->required();
  d->add_option("--mask-frac", deg.mask_frac, "Hidden square side / map side (inpaint)")->check(CLI::Range(0.0, 1.0));
  d->add_option("--factor", deg.factor, "Block size (sr)")->check(CLI::PositiveNumber);
  d->add_option("--noise-std", deg.noise_std, "Noise std in pixel units")->check(CLI::NonNegativeNumber);
  d->add_option("--seed", deg.seed, "Mask and noise seed");
  d->add_option("--in", deg.in, "Input map (.pgm)")->required()->check(CLI::ExistingFile);
  d->add_option("--out", deg.out, "Output observation")->required();
  d->callback([&] { action = [&] { return run_degrade(deg); }; });

  ReconArgs rec;
  std::vector<std::string> all_methods = bench::method_names();
  auto* r = app.add_subcommand("reconstruct", "Reconstruct a map from an observation");
  r->add_option("--method", rec.method)->check(CLI::IsMember(all_methods))->required();
  r->add_option("--obs", rec.obs, "Observation file")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rec.out, "Output map (.pgm)")->required();
  r->add_option("--checkpoint", rec.checkpoint, "Model checkpoint (ckmdiff)");
  r->add_option("--manifest", rec.manifest, "Corpus whose train split estimates the Gaussian prior");
  r->add_option("--buildings", rec.buildings, "Building mask (.pgm) for spatial-model");
  r->add_option("--tx", rec.tx, "Transmitter row col for spatial-model")->expected(2);
  r->add_option("--min-db", rec.min_db);
  r->add_option("--max-db", rec.max_db);
  r->add_option("--seed", rec.seed, "Sampling seed (ckmdiff)");
  r->add_option("--steps", rec.steps, "Sampling steps (ckmdiff)")->check(CLI::PositiveNumber);
  r->callback([&] { action = [&] { return run_reconstruct(rec); }; });

  TrainArgs tra;
  auto* t = app.add_subcommand("train", "Train the conditional diffusion model");
  t->add_option("--manifest", tra.manifest)->required()->check(CLI::ExistingFile);
  t->add_option("--config", tra.config, "Model/training config (JSON)")->check(CLI::ExistingFile);
  t->add_option("--preset", tra.preset, "Base preset")->check(CLI::IsMember({"desk", "compact", "paper"}));
  t->add_option("--iters", tra.iters, "Override the iteration count");
  t->add_option("--out", tra.out, "Checkpoint path")->required();
  t->add_option("--resume", tra.resume, "Resume from checkpoint")->check(CLI::ExistingFile);
  t->add_option("--log-every", tra.log_every)->check(CLI::PositiveNumber);
  t->add_option("--ckpt-every", tra.ckpt_every, "Checkpoint period in steps (0 = end only)");
  t->callback([&] { action = [&] { return run_train(tra); }; });

  SampleArgs sam;
  auto* s = app.add_subcommand("sample", "Draw a reconstruction from a trained model");
  s->add_option("--checkpoint", sam.checkpoint)->required()->check(CLI::ExistingFile);
  s->add_option("--condition", sam.condition, "Observation file (omit for unconditional generation)")->check(CLI::ExistingFile);
  s->add_option("--steps", sam.steps)->check(CLI::PositiveNumber);
  s->add_option("--seed", sam.seed);
  s->add_option("--out", sam.out)->required();
  s->add_option("--dump-condition", sam.dump, "Write the condition channels as PGM into this directory");
  s->add_option("--min-db", sam.min_db);
  s->add_option("--max-db", sam.max_db);
  s->callback([&] { action = [&] { return run_sample(sam); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compare reconstructions with ground truth");
  e->add_option("--truth", ev.truth, "Ground-truth maps")->required()->check(CLI::ExistingFile);
  e->add_option("--recon", ev.recon, "Reconstructed maps, same order")->required()->check(CLI::ExistingFile);
  e->add_flag("--exclude-buildings", ev.exclude_buildings, "Skip cells whose truth pixel is 0");
  e->add_flag("--windowed-ssim", ev.windowed_ssim, "11x11 Gaussian-window SSIM");
  e->add_option("--json", ev.json_out, "Also write the report here");
  e->callback([&] { action = [&] { return run_eval(ev); }; });

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Run every method on the test split and write tables");
  b->add_option("--manifest", be.manifest)->required()->check(CLI::ExistingFile);
  b->add_option("--methods", be.methods)->delimiter(',')->check(CLI::IsMember(all_methods));
  b->add_option("--tasks", be.tasks)->delimiter(',')->check(CLI::IsMember({"denoise", "inpaint", "sr", "generate"}));
  b->add_option("--out", be.out)->required();
  b->add_option("--checkpoint", be.checkpoint)->check(CLI::ExistingFile);
  b->add_option("--mask-frac", be.mask_frac)->check(CLI::Range(0.0, 1.0));
  b->add_option("--factor", be.factor)->check(CLI::PositiveNumber);
  b->add_option("--noise-std", be.noise_std)->check(CLI::NonNegativeNumber);
  b->add_option("--seed", be.seed);
  b->add_option("--steps", be.steps)->check(CLI::PositiveNumber);
  b->add_option("--max-images", be.max_images);
  b->add_flag("--exclude-buildings", be.exclude_buildings);
  b->add_flag("--windowed-ssim", be.windowed_ssim);
  b->callback([&] { action = [&] { return run_bench(be); }; });

  auto* st = app.add_subcommand("selftest", "Oracle checks of the diffusion math, autodiff, operators, baselines and metrics");
  st->callback([&] { action = [] { return run_selftest(); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe);
    return kUsageExit;
  }
  try {
    return action();
  } catch (const UsageError& u) {
    std::cerr << "usage error: " << u.what() << "\n";
    return kUsageExit;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
