#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ckm/diffusion.hpp"
#include "ckm/features.hpp"
#include "ckm/nn.hpp"
#include "ckm/optim.hpp"

namespace ckm::model {

// Distribution of the random operator A drawn for each training example.
struct MixtureConfig {
  std::vector<std::string> tasks{"inpaint", "sr", "denoise"};  // drawn uniformly
  double inpaint_frac = 0.25;                // hidden rectangle side / image side
  std::vector<int> sr_factors{2, 4};
  std::vector<double> noise_levels{0.0, 30.0 / 255.0};

  void validate(int image_size) const;
  DegradationSpec draw(int rows, int cols, Rng& rng) const;
};

struct ModelConfig {
  int image_size = 32;
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 4};
  int num_blocks = 2;
  int cond_channels = 16;   // condition-encoder width at full resolution, scaled by channel_mult
  int batch = 16;
  long iterations = 20000;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  double weight_decay = 0.0;
  double t_min = diffusion::kDefaultTimeFloor;
  int sampling_steps = 50;
  std::string codec = "identity";
  std::uint64_t seed = 1;
  MixtureConfig mixture;

  void validate() const;
  int emb_dim() const { return 4 * base_channels; }

  // 32x32, 32 channels, [1,2,4], 2 blocks, batch 16.
  static ModelConfig desk();
  // 16 channels, [1,2,2], 1 block, batch 8: a 20k-step run fits in two hours on one core.
  static ModelConfig compact();
  // Shapes of the published inpainting setup (128x128, 128 channels, [1,2,4,8]).
  static ModelConfig paper();
  static ModelConfig preset(const std::string& name);
};

void to_json(nlohmann::json& j, const MixtureConfig& m);
void from_json(const nlohmann::json& j, MixtureConfig& m);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Multi-level convolutional features of the condition image, one map per decoder level.
struct ConditionEncoder {
  std::vector<nn::Conv2d> first, second;

  ConditionEncoder() = default;
  ConditionEncoder(const ModelConfig& cfg, Rng& rng);
  std::vector<ad::Tensor> operator()(const ad::Tensor& cond) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

struct Heads {
  ad::Tensor c;
  ad::Tensor eps;
};

// UNet trunk with time embedding, condition features concatenated at every decoder level
// and two output branches (c and eps) of two stacked convolutions each.
class DenoiserNet {
 public:
  explicit DenoiserNet(const ModelConfig& cfg);

  // z (N,1,h,w) latent, t per example, cond (N,3,H,W) at pixel resolution.
  Heads operator()(const ad::Tensor& z, const std::vector<double>& t, const ad::Tensor& cond) const;

  const ModelConfig& config() const { return cfg_; }
  const nn::ParamList& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

 private:
  ModelConfig cfg_;
  nn::Conv2d in_conv_;
  nn::Linear temb1_, temb2_;
  std::vector<std::vector<nn::ResBlock>> down_;
  std::vector<nn::Conv2d> downsample_;
  nn::ResBlock mid1_, mid2_;
  std::vector<std::vector<nn::ResBlock>> up_;
  std::vector<nn::Conv2d> upsample_;
  nn::GroupNorm out_norm_;
  nn::Conv2d c_head1_, c_head2_, e_head1_, e_head2_;
  ConditionEncoder cond_enc_;
  nn::ParamList params_;
};

// A training example: clean image, its observation and the derived condition.
struct Example {
  Image x0;
  Observation obs;
  features::ConditionImage cond;
};

Example make_example(const Image& x0, const DegradationSpec& spec, Rng& rng);

// Stacks images (N,1,H,W) and conditions (N,3,H,W).
ad::Tensor stack_images(const std::vector<Image>& images);
ad::Tensor stack_conditions(const std::vector<features::ConditionImage>& conds);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  std::uint64_t batch_seed = 0;
};

// The two-term loss mse(c_hat, -z0) + mse(eps_hat, eps) on one batch with per-example times.
ad::Tensor diffusion_loss(const DenoiserNet& net, const diffusion::Codec& codec, const std::vector<Image>& x0,
                          const std::vector<features::ConditionImage>& conds, const std::vector<double>& t,
                          const ad::Tensor& eps);

class Trainer {
 public:
  Trainer(ModelConfig cfg, std::vector<Image> train_images);

  // One optimizer step on a batch drawn with a seed derived from (cfg.seed, step).
  StepResult step();

  DenoiserNet& net() { return *net_; }
  const DenoiserNet& net() const { return *net_; }
  optim::AdamW& optimizer() { return *opt_; }
  const diffusion::Codec& codec() const { return *codec_; }
  long steps_done() const { return opt_->step_count(); }

  // Restores network weights and optimizer moments written by save_checkpoint.
  void resume(const std::filesystem::path& ckpt);

 private:
  ModelConfig cfg_;
  std::vector<Image> images_;
  std::unique_ptr<DenoiserNet> net_;
  std::unique_ptr<optim::AdamW> opt_;
  std::unique_ptr<diffusion::Codec> codec_;
};

void save_checkpoint(const std::filesystem::path& path, const DenoiserNet& net, optim::AdamW* opt = nullptr,
                     const nlohmann::json& extra = {});

struct LoadedModel {
  std::unique_ptr<DenoiserNet> net;
  std::unique_ptr<diffusion::Codec> codec;
  long trained_steps = 0;
  nlohmann::json extra;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

struct SampleOptions {
  int steps = 50;
  double t_min = diffusion::kDefaultTimeFloor;
  int batch = 16;
  int threads = 1;  // worker threads across batches
};

// Reverse process from z1 ~ N(0,I) for each condition, decoded and clamped to [0,1]. Image i
// draws its noise from derive_seed(seed, i), so results do not depend on batching.
std::vector<Image> sample(const DenoiserNet& net, const diffusion::Codec& codec,
                          const std::vector<features::ConditionImage>& conds, std::uint64_t seed,
                          const SampleOptions& opt = {});

}  // namespace ckm::model
