#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ckm/grid.hpp"

namespace ckm::envgen {

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

// Synthetic urban layout: axis-aligned rectangular buildings, one transmitter.
struct EnvironmentSpec {
  int rows = 32;
  int cols = 32;
  int building_count = 6;
  int min_size = 3;
  int max_size = 7;
  std::optional<Cell> tx;  // drawn at random when unset
  std::uint64_t seed = 0;
};

struct Environment {
  Mask buildings;
  Cell tx;
};

Environment generate_environment(const EnvironmentSpec& spec);

// Log-distance path loss with shadowing and multipath plus a per-wall penalty.
// Defaults are not fitted to any measured data; they give plausible 32x32 maps.
struct PropagationParams {
  double k_db = -50.0;           // intercept at 1 cell
  double n_pl = 3.0;             // path-loss exponent
  double shadow_var = 9.0;       // o, dB^2
  double corr_dist = 6.0;        // d, cells
  double multipath_var = 1.0;    // sigma^2, dB^2
  double wall_penalty_db = 12.0; // per building-edge crossing

  void validate() const;
};

// Shadowing field nu with unit-lag correlation exp(-1/d) along each axis and variance o.
Image shadowing_field(int rows, int cols, double variance, double corr_dist, Rng& rng);

// Building-edge crossings on the straight segment a -> b (supercover traversal).
int wall_crossings(const Mask& buildings, Cell a, Cell b);

double path_loss_db(const PropagationParams& p, double distance);

CkmGrid simulate_gain_map(const Mask& buildings, const PropagationParams& params, Cell tx, Rng& rng,
                          ValueMap map = kRadioMapSeerMap);

struct ManifestEntry {
  std::string path;       // relative to the manifest directory
  std::string mask_path;  // relative, empty if none
  std::uint64_t seed = 0;
  std::string split;      // "train" or "test"
  Cell tx;
};

struct DatasetManifest {
  int schema_version = 1;
  ValueMap value_map;
  std::uint64_t corpus_seed = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory holding the manifest, not serialized

  std::vector<const ManifestEntry*> split(const std::string& name) const;
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

struct DatasetOptions {
  int n_maps = 100;
  double train_fraction = 0.9;
  std::uint64_t corpus_seed = 1;
  EnvironmentSpec env;
  PropagationParams params;
  ValueMap map = kRadioMapSeerMap;
};

DatasetManifest build_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

// FNV-1a over the bytes of every file in the manifest, in entry order.
std::uint64_t corpus_hash(const DatasetManifest& m);

}  // namespace ckm::envgen
