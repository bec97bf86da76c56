#pragma once

#include <filesystem>

#include "ckm/grid.hpp"

namespace ckm::features {

// Threshold for binarizing noise-free grayscale: only exact zeros are buildings.
inline constexpr double kExactZero = 0.0;
// Threshold used when the input carries additive noise.
inline constexpr double kNoisyThreshold = 2.0 / 255.0;

// True where pixel <= threshold (the black building regions).
Mask binarize_buildings(const Image& image, double threshold = kExactZero);

struct CannyConfig {
  double sigma = 1.0;  // Gaussian blur, 5x5 kernel
  double low = 0.1;    // fractions of the maximum gradient magnitude
  double high = 0.3;
};

Mask canny_edges(const Mask& mask, const CannyConfig& cfg = {});

// Channel-major (gray, mask, edges) stack, shape 3 x rows x cols.
struct ConditionImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  static constexpr int kChannels = 3;
  Image channel(int c) const;
  bool operator==(const ConditionImage&) const = default;
};

ConditionImage stack_condition(const Image& gray, const Mask& mask, const Mask& edges);

// Binarize (threshold chosen from the noise level), Canny, stack.
ConditionImage emphasize(const Image& gray, double noise_std, const CannyConfig& cfg = {});

// Condition for an observation at the source resolution: zero-filled image for
// denoise/inpaint, the low-resolution image upsampled (nearest) for super-resolution,
// all zeros for generation.
ConditionImage condition_for(const Observation& obs, const CannyConfig& cfg = {});

Image upsample_nearest(const Image& img, int factor);

// gray.pgm, mask.pgm, edges.pgm in `dir`.
void dump_channels(const std::filesystem::path& dir, const ConditionImage& cond);

}  // namespace ckm::features
