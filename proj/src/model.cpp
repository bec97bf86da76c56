#include "ckm/model.hpp"

#include <algorithm>
#include <cmath>

#include "ckm/checkpoint.hpp"
#include "ckm/parallel.hpp"

namespace ckm::model {

using ad::Tensor;

// ---- configuration ----

void MixtureConfig::validate(int image_size) const {
  if (tasks.empty()) throw RangeError("degradation mixture has no tasks");
  for (const auto& t : tasks) parse_task(t);
  if (!(inpaint_frac > 0.0 && inpaint_frac <= 1.0)) throw RangeError("inpaint_frac must lie in (0,1]");
  for (int m : sr_factors)
    if (m < 1 || image_size % m != 0)
      throw RangeError("super-resolution factor " + std::to_string(m) + " does not divide " + std::to_string(image_size));
  if (noise_levels.empty()) throw RangeError("degradation mixture has no noise levels");
  for (double s : noise_levels)
    if (!(s >= 0.0)) throw RangeError("noise levels must be >= 0");
}

DegradationSpec MixtureConfig::draw(int rows, int cols, Rng& rng) const {
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const Task task = parse_task(tasks[pick(tasks.size())]);
  const double noise = noise_levels[pick(noise_levels.size())];
  switch (task) {
    case Task::Inpaint: return DegradationSpec::inpaint(random_rect_mask(rows, cols, inpaint_frac, rng), noise);
    case Task::SuperRes: return DegradationSpec::super_res(sr_factors[pick(sr_factors.size())], noise);
    case Task::Generate: return DegradationSpec::generate();
    case Task::Denoise: break;
  }
  return DegradationSpec::denoise(noise);
}

void ModelConfig::validate() const {
  if (image_size < 1) throw RangeError("image_size must be positive");
  if (base_channels < 1 || cond_channels < 1) throw RangeError("channel counts must be positive");
  if (channel_mult.empty()) throw RangeError("channel_mult must have at least one level");
  for (int m : channel_mult)
    if (m < 1) throw RangeError("channel multipliers must be >= 1");
  if (num_blocks < 1) throw RangeError("num_blocks must be >= 1");
  if (batch < 1) throw RangeError("batch must be >= 1");
  if (iterations < 1) throw RangeError("iterations must be >= 1");
  const int down = 1 << (channel_mult.size() - 1);
  const int latent = image_size / diffusion::make_codec(codec)->downscale();
  if (image_size % diffusion::make_codec(codec)->downscale() != 0 || latent % down != 0)
    throw RangeError("image_size " + std::to_string(image_size) + " is not divisible by the " +
                     std::to_string(channel_mult.size()) + "-level UNet");
  diffusion::DdmSchedule{t_min, sampling_steps}.validate();
  optim::AdamWConfig{lr_start, lr_end, iterations, 0.9, 0.999, 1e-8, weight_decay}.validate();
  mixture.validate(image_size);
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::compact() {
  ModelConfig c;
  c.base_channels = 16;
  c.channel_mult = {1, 2, 2};
  c.num_blocks = 1;
  c.cond_channels = 8;
  c.batch = 8;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.image_size = 128;
  c.base_channels = 128;
  c.channel_mult = {1, 2, 4, 8};
  c.num_blocks = 2;
  c.cond_channels = 64;
  c.batch = 48;
  c.iterations = 400000;
  c.lr_start = 4e-5;
  c.lr_end = 4e-6;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "compact") return compact();
  if (name == "paper") return paper();
  throw UnsupportedError("unknown model preset '" + name + "' (desk, compact, paper)");
}

void to_json(nlohmann::json& j, const MixtureConfig& m) {
  j = {{"tasks", m.tasks}, {"inpaint_frac", m.inpaint_frac}, {"sr_factors", m.sr_factors}, {"noise_levels", m.noise_levels}};
}

void from_json(const nlohmann::json& j, MixtureConfig& m) {
  const MixtureConfig d;
  m.tasks = j.value("tasks", d.tasks);
  m.inpaint_frac = j.value("inpaint_frac", d.inpaint_frac);
  m.sr_factors = j.value("sr_factors", d.sr_factors);
  m.noise_levels = j.value("noise_levels", d.noise_levels);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_size", c.image_size},
       {"base_channels", c.base_channels},
       {"channel_mult", c.channel_mult},
       {"num_blocks", c.num_blocks},
       {"cond_channels", c.cond_channels},
       {"batch", c.batch},
       {"iterations", c.iterations},
       {"lr_start", c.lr_start},
       {"lr_end", c.lr_end},
       {"weight_decay", c.weight_decay},
       {"t_min", c.t_min},
       {"sampling_steps", c.sampling_steps},
       {"codec", c.codec},
       {"seed", c.seed},
       {"mixture", c.mixture}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d = c;
  if (j.contains("preset")) d = ModelConfig::preset(j.at("preset").get<std::string>());
  c.image_size = j.value("image_size", d.image_size);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.channel_mult = j.value("channel_mult", d.channel_mult);
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.cond_channels = j.value("cond_channels", d.cond_channels);
  c.batch = j.value("batch", d.batch);
  c.iterations = j.value("iterations", d.iterations);
  c.lr_start = j.value("lr_start", d.lr_start);
  c.lr_end = j.value("lr_end", d.lr_end);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.t_min = j.value("t_min", d.t_min);
  c.sampling_steps = j.value("sampling_steps", d.sampling_steps);
  c.codec = j.value("codec", d.codec);
  c.seed = j.value("seed", d.seed);
  c.mixture = j.contains("mixture") ? j.at("mixture").get<MixtureConfig>() : d.mixture;
}

// ---- networks ----

ConditionEncoder::ConditionEncoder(const ModelConfig& cfg, Rng& rng) {
  int prev = features::ConditionImage::kChannels;
  for (std::size_t i = 0; i < cfg.channel_mult.size(); ++i) {
    const int ch = cfg.cond_channels * cfg.channel_mult[i];
    first.emplace_back(prev, ch, 3, rng, i == 0 ? 1 : 2, 1);
    second.emplace_back(ch, ch, 3, rng);
    prev = ch;
  }
}

std::vector<Tensor> ConditionEncoder::operator()(const Tensor& cond) const {
  std::vector<Tensor> out;
  Tensor h = cond;
  for (std::size_t i = 0; i < first.size(); ++i) {
    h = ad::silu(second[i](ad::silu(first[i](h))));
    out.push_back(h);
  }
  return out;
}

void ConditionEncoder::params(const std::string& prefix, nn::ParamList& out) const {
  for (std::size_t i = 0; i < first.size(); ++i) {
    first[i].params(prefix + "." + std::to_string(i) + ".a", out);
    second[i].params(prefix + "." + std::to_string(i) + ".b", out);
  }
}

DenoiserNet::DenoiserNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const int levels = static_cast<int>(cfg_.channel_mult.size());
  const int base = cfg_.base_channels, emb = cfg_.emb_dim();
  auto ch = [&](int i) { return base * cfg_.channel_mult[static_cast<std::size_t>(i)]; };

  in_conv_ = nn::Conv2d(1, base, 3, rng);
  temb1_ = nn::Linear(base, emb, rng);
  temb2_ = nn::Linear(emb, emb, rng);

  std::vector<int> skips{base};
  int cur = base;
  down_.resize(static_cast<std::size_t>(levels));
  for (int i = 0; i < levels; ++i) {
    for (int b = 0; b < cfg_.num_blocks; ++b) {
      down_[static_cast<std::size_t>(i)].emplace_back(cur, ch(i), emb, rng);
      cur = ch(i);
      skips.push_back(cur);
    }
    if (i + 1 < levels) {
      downsample_.emplace_back(cur, cur, 3, rng, 2, 1);
      skips.push_back(cur);
    }
  }
  mid1_ = nn::ResBlock(cur, cur, emb, rng);
  mid2_ = nn::ResBlock(cur, cur, emb, rng);
  up_.resize(static_cast<std::size_t>(levels));
  upsample_.resize(static_cast<std::size_t>(levels));
  for (int i = levels - 1; i >= 0; --i) {
    cur += cfg_.cond_channels * cfg_.channel_mult[static_cast<std::size_t>(i)];
    for (int b = 0; b <= cfg_.num_blocks; ++b) {
      const int s = skips.back();
      skips.pop_back();
      up_[static_cast<std::size_t>(i)].emplace_back(cur + s, ch(i), emb, rng);
      cur = ch(i);
    }
    if (i > 0) upsample_[static_cast<std::size_t>(i)] = nn::Conv2d(cur, cur, 3, rng);
  }
  out_norm_ = nn::GroupNorm(cur);
  c_head1_ = nn::Conv2d(cur, cur, 3, rng);
  c_head2_ = nn::Conv2d(cur, 1, 3, rng);
  e_head1_ = nn::Conv2d(cur, cur, 3, rng);
  e_head2_ = nn::Conv2d(cur, 1, 3, rng);
  cond_enc_ = ConditionEncoder(cfg_, rng);

  in_conv_.params("in_conv", params_);
  temb1_.params("temb1", params_);
  temb2_.params("temb2", params_);
  for (int i = 0; i < levels; ++i) {
    for (std::size_t b = 0; b < down_[static_cast<std::size_t>(i)].size(); ++b)
      down_[static_cast<std::size_t>(i)][b].params("down." + std::to_string(i) + "." + std::to_string(b), params_);
    if (i + 1 < levels) downsample_[static_cast<std::size_t>(i)].params("downsample." + std::to_string(i), params_);
  }
  mid1_.params("mid1", params_);
  mid2_.params("mid2", params_);
  for (int i = levels - 1; i >= 0; --i) {
    for (std::size_t b = 0; b < up_[static_cast<std::size_t>(i)].size(); ++b)
      up_[static_cast<std::size_t>(i)][b].params("up." + std::to_string(i) + "." + std::to_string(b), params_);
    if (i > 0) upsample_[static_cast<std::size_t>(i)].params("upsample." + std::to_string(i), params_);
  }
  out_norm_.params("out_norm", params_);
  c_head1_.params("c_head.0", params_);
  c_head2_.params("c_head.1", params_);
  e_head1_.params("eps_head.0", params_);
  e_head2_.params("eps_head.1", params_);
  cond_enc_.params("cond", params_);
}

Heads DenoiserNet::operator()(const Tensor& z, const std::vector<double>& t, const Tensor& cond) const {
  const int levels = static_cast<int>(cfg_.channel_mult.size());
  const int d = diffusion::make_codec(cfg_.codec)->downscale();
  const int side = cfg_.image_size / d;
  if (z.shape() != ad::Shape{z.dim(0), 1, side, side})
    throw ShapeError("denoiser input " + ad::shape_str(z.shape()) + " does not match the configured latent (N,1," +
                     std::to_string(side) + "," + std::to_string(side) + ")");
  if (cond.shape() != ad::Shape{z.dim(0), features::ConditionImage::kChannels, cfg_.image_size, cfg_.image_size})
    throw ShapeError("condition " + ad::shape_str(cond.shape()) + " does not match the model configuration");
  if (static_cast<int>(t.size()) != z.dim(0)) throw ShapeError("one time value per example is required");

  const Tensor temb = ad::silu(temb2_(ad::silu(temb1_(nn::timestep_embedding(t, cfg_.base_channels)))));
  const auto cfeat = cond_enc_(d > 1 ? ad::avg_pool2d(cond, d) : cond);

  Tensor h = in_conv_(z);
  std::vector<Tensor> skips{h};
  for (int i = 0; i < levels; ++i) {
    for (const auto& blk : down_[static_cast<std::size_t>(i)]) {
      h = blk(h, temb);
      skips.push_back(h);
    }
    if (i + 1 < levels) {
      h = downsample_[static_cast<std::size_t>(i)](h);
      skips.push_back(h);
    }
  }
  h = mid2_(mid1_(h, temb), temb);
  for (int i = levels - 1; i >= 0; --i) {
    h = ad::concat({h, cfeat[static_cast<std::size_t>(i)]}, 1);
    for (const auto& blk : up_[static_cast<std::size_t>(i)]) {
      h = blk(ad::concat({h, skips.back()}, 1), temb);
      skips.pop_back();
    }
    if (i > 0) h = upsample_[static_cast<std::size_t>(i)](ad::upsample_nearest(h, 2));
  }
  h = ad::silu(out_norm_(h));
  return {c_head2_(ad::silu(c_head1_(h))), e_head2_(ad::silu(e_head1_(h)))};
}

// ---- data ----

Example make_example(const Image& x0, const DegradationSpec& spec, Rng& rng) {
  Example ex{x0, apply_degradation(x0, spec, rng), {}};
  ex.cond = features::condition_for(ex.obs);
  return ex;
}

Tensor stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("cannot stack an empty image list");
  const int r = images[0].rows, c = images[0].cols;
  std::vector<double> v;
  v.reserve(images.size() * images[0].size());
  for (const auto& im : images) {
    if (im.rows != r || im.cols != c) throw ShapeError("stacked images differ in shape");
    v.insert(v.end(), im.data.begin(), im.data.end());
  }
  return Tensor::from({static_cast<int>(images.size()), 1, r, c}, std::move(v));
}

Tensor stack_conditions(const std::vector<features::ConditionImage>& conds) {
  if (conds.empty()) throw ShapeError("cannot stack an empty condition list");
  const int r = conds[0].rows, c = conds[0].cols;
  std::vector<double> v;
  v.reserve(conds.size() * conds[0].data.size());
  for (const auto& cd : conds) {
    if (cd.rows != r || cd.cols != c) throw ShapeError("stacked conditions differ in shape");
    v.insert(v.end(), cd.data.begin(), cd.data.end());
  }
  return Tensor::from({static_cast<int>(conds.size()), features::ConditionImage::kChannels, r, c}, std::move(v));
}

// ---- training ----

Tensor diffusion_loss(const DenoiserNet& net, const diffusion::Codec& codec, const std::vector<Image>& x0,
                      const std::vector<features::ConditionImage>& conds, const std::vector<double>& t,
                      const Tensor& eps) {
  Tensor z0;
  {
    ad::NoGradGuard ng;
    z0 = codec.encode(stack_images(x0)).detach();
  }
  if (eps.shape() != z0.shape()) throw ShapeError("noise " + ad::shape_str(eps.shape()) + " vs latent " + ad::shape_str(z0.shape()));
  const std::size_t per = z0.numel() / x0.size();
  std::vector<double> zt(z0.numel());
  for (std::size_t i = 0; i < x0.size(); ++i)
    diffusion::ddm_forward_sample(z0.data().data() + i * per, eps.data().data() + i * per, t[i], zt.data() + i * per, per);
  const Heads h = net(Tensor::from(z0.shape(), std::move(zt)), t, stack_conditions(conds));
  return ad::add(ad::mse(h.c, ad::scale(z0, -1.0)), ad::mse(h.eps, eps));
}

Trainer::Trainer(ModelConfig cfg, std::vector<Image> train_images) : cfg_(std::move(cfg)), images_(std::move(train_images)) {
  cfg_.validate();
  if (images_.empty()) throw PreconditionError("training needs at least one image");
  for (const auto& im : images_)
    if (im.rows != cfg_.image_size || im.cols != cfg_.image_size)
      throw ShapeError("training image " + shape_str(im.rows, im.cols) + " does not match image_size " +
                       std::to_string(cfg_.image_size));
  codec_ = diffusion::make_codec(cfg_.codec);
  if (cfg_.codec != "identity") {
    const std::size_t n = std::min<std::size_t>(images_.size(), 64);
    diffusion::require_codec(*codec_, std::vector<Image>(images_.begin(), images_.begin() + static_cast<std::ptrdiff_t>(n)));
  }
  net_ = std::make_unique<DenoiserNet>(cfg_);
  opt_ = std::make_unique<optim::AdamW>(
      net_->params(), optim::AdamWConfig{cfg_.lr_start, cfg_.lr_end, cfg_.iterations, 0.9, 0.999, 1e-8, cfg_.weight_decay});
}

StepResult Trainer::step() {
  StepResult r;
  r.batch_seed = derive_seed(derive_seed(cfg_.seed, 0x747261696eULL), static_cast<std::uint64_t>(opt_->step_count()));
  r.lr = opt_->current_lr();
  Rng rng(r.batch_seed);
  std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::vector<Image> x0;
  std::vector<features::ConditionImage> conds;
  std::vector<double> t;
  for (int i = 0; i < cfg_.batch; ++i) {
    const Image& img = images_[pick(rng)];
    const DegradationSpec spec = cfg_.mixture.draw(img.rows, img.cols, rng);
    Example ex = make_example(img, spec, rng);
    x0.push_back(std::move(ex.x0));
    conds.push_back(std::move(ex.cond));
    t.push_back(std::max(cfg_.t_min, ut(rng)));
  }
  const int side = cfg_.image_size / codec_->downscale();
  const Tensor eps = Tensor::randn({cfg_.batch, 1, side, side}, rng);
  const Tensor loss = diffusion_loss(*net_, *codec_, x0, conds, t, eps);
  r.loss = loss.item();
  if (!std::isfinite(r.loss))
    throw NumericalError("non-finite training loss at step " + std::to_string(opt_->step_count()) + " (batch seed " +
                         std::to_string(r.batch_seed) + ")");
  ad::backward(loss);
  opt_->step();
  opt_->zero_grad();
  return r;
}

// ---- checkpoints ----

namespace {

void copy_into(const ckpt::Checkpoint& ck, const nn::ParamList& params) {
  for (const auto& [name, t] : params.items) {
    const auto* rec = ck.find(name);
    if (!rec) throw IoError("checkpoint lacks parameter " + name);
    if (rec->shape != t.shape())
      throw ShapeError("checkpoint parameter " + name + " has shape " + ad::shape_str(rec->shape) + ", model expects " +
                       ad::shape_str(t.shape()));
    auto& dst = const_cast<Tensor&>(t).data();
    dst = rec->data;
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DenoiserNet& net, optim::AdamW* opt,
                     const nlohmann::json& extra) {
  ckpt::Checkpoint ck;
  ck.config = {{"format", "ckmforge-model"},
               {"model", net.config()},
               {"codec", net.config().codec},
               {"trained_steps", opt ? opt->step_count() : 0},
               {"parameter_count", net.parameter_count()},
               {"extra", extra}};
  for (const auto& [name, t] : net.params().items) ck.tensors.push_back({name, t.shape(), t.data()});
  if (opt) {
    const auto& items = opt->params().items;
    for (std::size_t k = 0; k < items.size(); ++k) {
      ck.tensors.push_back({"adamw.m." + items[k].first, items[k].second.shape(), opt->first_moments()[k]});
      ck.tensors.push_back({"adamw.v." + items[k].first, items[k].second.shape(), opt->second_moments()[k]});
    }
    ck.config["optimizer_step"] = opt->step_count();
  }
  ckpt::save(path, ck);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  const ckpt::Checkpoint ck = ckpt::load(path);
  if (ck.config.value("format", "") != "ckmforge-model") throw IoError(path.string() + " is not a model checkpoint");
  LoadedModel m;
  m.net = std::make_unique<DenoiserNet>(ck.config.at("model").get<ModelConfig>());
  copy_into(ck, m.net->params());
  m.codec = diffusion::make_codec(ck.config.value("codec", std::string("identity")));
  m.trained_steps = ck.config.value("trained_steps", 0L);
  m.extra = ck.config.value("extra", nlohmann::json::object());
  return m;
}

void Trainer::resume(const std::filesystem::path& path) {
  const ckpt::Checkpoint ck = ckpt::load(path);
  copy_into(ck, net_->params());
  const auto& items = opt_->params().items;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto* m = ck.find("adamw.m." + items[k].first);
    const auto* v = ck.find("adamw.v." + items[k].first);
    if (!m || !v) throw IoError("checkpoint " + path.string() + " carries no optimizer state");
    opt_->first_moments()[k] = m->data;
    opt_->second_moments()[k] = v->data;
  }
  opt_->set_step_count(ck.config.value("optimizer_step", 0L));
}

// ---- sampling ----

std::vector<Image> sample(const DenoiserNet& net, const diffusion::Codec& codec,
                          const std::vector<features::ConditionImage>& conds, std::uint64_t seed, const SampleOptions& opt) {
  const diffusion::DdmSchedule sch{opt.t_min, opt.steps};
  sch.validate();
  if (opt.batch < 1) throw RangeError("sampling batch must be >= 1");
  const auto& cfg = net.config();
  for (const auto& c : conds)
    if (c.rows != cfg.image_size || c.cols != cfg.image_size)
      throw ShapeError("condition " + shape_str(c.rows, c.cols) + " does not match the model image size " +
                       std::to_string(cfg.image_size));
  const int side = cfg.image_size / codec.downscale();
  const std::size_t per = static_cast<std::size_t>(side) * side;
  std::vector<Image> out(conds.size());
  const std::size_t nbatches = (conds.size() + static_cast<std::size_t>(opt.batch) - 1) / static_cast<std::size_t>(opt.batch);
  parallel_for(
      nbatches,
      [&](std::size_t bi) {
        ad::NoGradGuard ng;
        const std::size_t lo = bi * static_cast<std::size_t>(opt.batch);
        const std::size_t hi = std::min(conds.size(), lo + static_cast<std::size_t>(opt.batch));
        const int n = static_cast<int>(hi - lo);
        // One engine and one distribution per image: the distribution caches half of each
        // polar pair, so sharing it would couple images in the same batch.
        std::vector<Rng> rngs;
        std::vector<std::normal_distribution<double>> nds(static_cast<std::size_t>(n));
        std::vector<double> z(static_cast<std::size_t>(n) * per);
        for (int i = 0; i < n; ++i) {
          rngs.emplace_back(derive_seed(seed, lo + static_cast<std::size_t>(i)));
          for (std::size_t k = 0; k < per; ++k) z[static_cast<std::size_t>(i) * per + k] = nds[static_cast<std::size_t>(i)](rngs.back());
        }
        const Tensor cond = stack_conditions(std::vector<features::ConditionImage>(
            conds.begin() + static_cast<std::ptrdiff_t>(lo), conds.begin() + static_cast<std::ptrdiff_t>(hi)));
        for (int s = sch.steps; s >= 1; --s) {
          const double t = sch.time_of(s);
          const auto k = diffusion::ddm_reverse_coefficients(t, sch.dt());
          const Heads h = net(Tensor::from({n, 1, side, side}, z), std::vector<double>(static_cast<std::size_t>(n), t), cond);
          for (int i = 0; i < n; ++i)
            for (std::size_t q = 0; q < per; ++q) {
              const std::size_t idx = static_cast<std::size_t>(i) * per + q;
              const double xi = k.noise > 0.0 ? nds[static_cast<std::size_t>(i)](rngs[static_cast<std::size_t>(i)]) : 0.0;
              z[idx] = z[idx] - k.c * h.c.data()[idx] - k.eps * h.eps.data()[idx] + k.noise * xi;
            }
        }
        const Tensor x = codec.decode(Tensor::from({n, 1, side, side}, z));
        for (int i = 0; i < n; ++i) {
          Image im(cfg.image_size, cfg.image_size);
          const std::size_t npx = im.size();
          for (std::size_t q = 0; q < npx; ++q)
            im.data[q] = std::clamp(x.data()[static_cast<std::size_t>(i) * npx + q], 0.0, 1.0);
          out[lo + static_cast<std::size_t>(i)] = std::move(im);
        }
      },
      opt.threads);
  return out;
}

}  // namespace ckm::model
