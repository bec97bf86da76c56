#pragma once

#include <filesystem>
#include <string>

#include "ckm/grid.hpp"

namespace ckm::io {

namespace fs = std::filesystem;

// Binary PGM (P5). maxval 65535 stores big-endian 16-bit samples, maxval <= 255 one byte per sample.
struct Pgm {
  int rows = 0;
  int cols = 0;
  int maxval = 0;
  std::vector<std::uint16_t> samples;
};

Pgm read_pgm(const fs::path& path);
void write_pgm(const fs::path& path, const Pgm& pgm);

// 8-bit visualization dump of an image, clamped to [0,1].
void write_preview_pgm(const fs::path& path, const Image& img);

// CKM image: <stem>.pgm (16-bit pixels, round(x*65535)), <stem>.json sidecar and,
// when present, <stem>_mask.pgm (maxval 1).
fs::path sidecar_path(const fs::path& pgm_path);
fs::path mask_path(const fs::path& pgm_path);
void write_ckm(const fs::path& pgm_path, const CkmGrid& grid);
CkmGrid read_ckm(const fs::path& pgm_path);

void write_mask(const fs::path& path, const Mask& mask);
Mask read_mask(const fs::path& path);

double quantize_pixel(double x);  // round-trip value of a stored pixel

// Observation: one line of JSON header, then `count` little-endian float64 values.
// Inpaint masks are written next to the file as <file>.mask.pgm and referenced by name.
void write_observation(const fs::path& path, const Observation& obs);
Observation read_observation(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace ckm::io
