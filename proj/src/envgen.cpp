#include "ckm/envgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ckm/io.hpp"
#include "ckm/parallel.hpp"

namespace ckm::envgen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr int kTxRetries = 1000;
constexpr int kLayoutRetries = 100;

bool inside(const Mask& m, int r, int c) { return r >= 0 && r < m.rows && c >= 0 && c < m.cols; }
}  // namespace

Environment generate_environment(const EnvironmentSpec& spec) {
  if (spec.rows <= 0 || spec.cols <= 0) throw ShapeError("environment grid must be non-empty");
  if (spec.building_count < 0 || spec.min_size < 1 || spec.max_size < spec.min_size)
    throw PreconditionError("invalid building size range");
  if (static_cast<long long>(spec.building_count) * spec.max_size * spec.max_size * 2 >= static_cast<long long>(spec.rows) * spec.cols)
    throw PreconditionError("buildings could cover more than half of the grid");
  if (spec.max_size > std::min(spec.rows, spec.cols)) throw PreconditionError("building larger than the grid");
  if (spec.tx && !(spec.tx->row >= 0 && spec.tx->row < spec.rows && spec.tx->col >= 0 && spec.tx->col < spec.cols))
    throw PreconditionError("transmitter outside the grid");

  Rng rng(spec.seed);
  for (int attempt = 0; attempt < kLayoutRetries; ++attempt) {
    Mask m(spec.rows, spec.cols, 0);
    std::uniform_int_distribution<int> size(spec.min_size, spec.max_size);
    for (int b = 0; b < spec.building_count; ++b) {
      const int h = size(rng);
      const int w = size(rng);
      const int top = std::uniform_int_distribution<int>(0, spec.rows - h)(rng);
      const int left = std::uniform_int_distribution<int>(0, spec.cols - w)(rng);
      for (int r = top; r < top + h; ++r)
        for (int c = left; c < left + w; ++c) m(r, c) = 1;
    }
    if (spec.tx) {
      if (!m(spec.tx->row, spec.tx->col)) return {std::move(m), *spec.tx};
      continue;  // fixed transmitter covered: redraw the layout
    }
    std::uniform_int_distribution<int> rr(0, spec.rows - 1), cc(0, spec.cols - 1);
    for (int t = 0; t < kTxRetries; ++t) {
      Cell tx{rr(rng), cc(rng)};
      if (!m(tx.row, tx.col)) return {std::move(m), tx};
    }
  }
  throw Error("could not place the transmitter outside buildings after bounded retries");
}

void PropagationParams::validate() const {
  if (!(n_pl > 0.0)) throw PreconditionError("path-loss exponent must be positive");
  if (!(shadow_var >= 0.0 && multipath_var >= 0.0 && wall_penalty_db >= 0.0))
    throw PreconditionError("variances and wall penalty must be nonnegative");
  if (!(corr_dist > 0.0)) throw PreconditionError("correlation distance must be positive");
}

Image shadowing_field(int rows, int cols, double variance, double corr_dist, Rng& rng) {
  Image f(rows, cols, 0.0);
  if (variance <= 0.0) return f;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double& v : f.data) v = n01(rng);
  // Stationary AR(1) along rows, then along columns: unit variance, lag correlation
  // a^|dr| * a^|dc| with a = exp(-1/d), i.e. exp(-h/d) along each axis.
  const double a = std::exp(-1.0 / corr_dist);
  const double b = std::sqrt(1.0 - a * a);
  for (int r = 0; r < rows; ++r)
    for (int c = 1; c < cols; ++c) f(r, c) = a * f(r, c - 1) + b * f(r, c);
  for (int c = 0; c < cols; ++c)
    for (int r = 1; r < rows; ++r) f(r, c) = a * f(r - 1, c) + b * f(r, c);
  const double s = std::sqrt(variance);
  for (double& v : f.data) v *= s;
  return f;
}

int wall_crossings(const Mask& buildings, Cell a, Cell b) {
  int crossings = 0;
  bool have_prev = false;
  std::uint8_t prev = 0;
  auto visit = [&](int r, int c) {
    if (!inside(buildings, r, c)) return;
    const std::uint8_t s = buildings(r, c);
    if (have_prev && s != prev) ++crossings;
    prev = s;
    have_prev = true;
  };
  // Supercover traversal: every cell the segment between cell centers touches.
  int x = a.col, y = a.row;
  int dx = b.col - a.col, dy = b.row - a.row;
  const int xstep = dx < 0 ? -1 : 1;
  const int ystep = dy < 0 ? -1 : 1;
  dx = std::abs(dx);
  dy = std::abs(dy);
  const int ddx = 2 * dx, ddy = 2 * dy;
  visit(y, x);
  if (ddx >= ddy) {
    int error = dx, errorprev = dx;
    for (int i = 0; i < dx; ++i) {
      x += xstep;
      error += ddy;
      if (error > ddx) {
        y += ystep;
        error -= ddx;
        if (error + errorprev < ddx) {
          visit(y - ystep, x);
        } else if (error + errorprev > ddx) {
          visit(y, x - xstep);
        } else {
          visit(y - ystep, x);
          visit(y, x - xstep);
        }
      }
      visit(y, x);
      errorprev = error;
    }
  } else {
    int error = dy, errorprev = dy;
    for (int i = 0; i < dy; ++i) {
      y += ystep;
      error += ddx;
      if (error > ddy) {
        x += xstep;
        error -= ddy;
        if (error + errorprev < ddy) {
          visit(y, x - xstep);
        } else if (error + errorprev > ddy) {
          visit(y - ystep, x);
        } else {
          visit(y, x - xstep);
          visit(y - ystep, x);
        }
      }
      visit(y, x);
      errorprev = error;
    }
  }
  return crossings;
}

double path_loss_db(const PropagationParams& p, double distance) {
  return p.k_db - 10.0 * p.n_pl * std::log10(std::max(distance, 1.0));
}

CkmGrid simulate_gain_map(const Mask& buildings, const PropagationParams& params, Cell tx, Rng& rng, ValueMap map) {
  params.validate();
  map.validate();
  if (!inside(buildings, tx.row, tx.col)) throw PreconditionError("transmitter outside the grid");
  if (buildings(tx.row, tx.col)) throw PreconditionError("transmitter inside a building");
  const Image shadow = shadowing_field(buildings.rows, buildings.cols, params.shadow_var, params.corr_dist, rng);
  std::normal_distribution<double> multipath(0.0, std::sqrt(params.multipath_var));
  Image g(buildings.rows, buildings.cols);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      const double fading = params.multipath_var > 0.0 ? multipath(rng) : 0.0;
      if (buildings(r, c)) {
        g(r, c) = map.min_db;
        continue;
      }
      const double dist = std::hypot(r - tx.row, c - tx.col);
      double v = path_loss_db(params, dist) + shadow(r, c) + fading;
      if (params.wall_penalty_db > 0.0) v -= params.wall_penalty_db * wall_crossings(buildings, tx, {r, c});
      g(r, c) = std::clamp(v, map.min_db, map.max_db);
    }
  return CkmGrid(std::move(g), map, buildings);
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(&e);
  return out;
}

DatasetManifest build_dataset(const DatasetOptions& opts, const fs::path& out_dir) {
  if (opts.n_maps <= 0) throw PreconditionError("n_maps must be positive");
  if (!(opts.train_fraction >= 0.0 && opts.train_fraction <= 1.0)) throw PreconditionError("train fraction must lie in [0,1]");
  try {
    fs::create_directories(out_dir / "maps");
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directory '" + out_dir.string() + "': " + e.what());
  }
  DatasetManifest m;
  m.value_map = opts.map;
  m.corpus_seed = opts.corpus_seed;
  m.root = out_dir;
  m.entries.resize(static_cast<std::size_t>(opts.n_maps));
  const auto n_train = static_cast<std::size_t>(std::llround(opts.train_fraction * opts.n_maps));
  parallel_for(m.entries.size(), [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(opts.corpus_seed, i);
    EnvironmentSpec es = opts.env;
    es.seed = seed;
    Environment env = generate_environment(es);
    Rng rng(derive_seed(seed, 1));
    CkmGrid grid = simulate_gain_map(env.buildings, opts.params, env.tx, rng, opts.map);
    char name[32];
    std::snprintf(name, sizeof name, "maps/map_%05zu.pgm", i);
    const fs::path rel(name);
    io::write_ckm(out_dir / rel, grid);
    ManifestEntry& e = m.entries[i];
    e.path = rel.generic_string();
    e.mask_path = io::mask_path(rel).generic_string();
    e.seed = seed;
    e.split = i < n_train ? "train" : "test";
    e.tx = env.tx;
  });
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  json j;
  j["schema_version"] = m.schema_version;
  j["value_map"] = {{"min_db", m.value_map.min_db}, {"max_db", m.value_map.max_db}};
  j["corpus_seed"] = m.corpus_seed;
  j["entries"] = json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back(
        {{"path", e.path}, {"mask_path", e.mask_path}, {"seed", e.seed}, {"split", e.split}, {"tx", {e.tx.row, e.tx.col}}});
  io::write_text(path, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& path) {
  DatasetManifest m;
  try {
    const json j = json::parse(io::read_text(path));
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != 1) throw IoError("unsupported manifest schema version " + std::to_string(m.schema_version));
    m.value_map = {j.at("value_map").at("min_db").get<double>(), j.at("value_map").at("max_db").get<double>()};
    m.corpus_seed = j.value("corpus_seed", std::uint64_t{0});
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.path = e.at("path").get<std::string>();
      me.mask_path = e.value("mask_path", "");
      me.seed = e.at("seed").get<std::uint64_t>();
      me.split = e.at("split").get<std::string>();
      if (e.contains("tx")) me.tx = {e["tx"][0].get<int>(), e["tx"][1].get<int>()};
      m.entries.push_back(std::move(me));
    }
  } catch (const json::exception& e) {
    throw IoError("bad manifest '" + path.string() + "': " + e.what());
  }
  m.root = path.parent_path();
  return m;
}

std::uint64_t corpus_hash(const DatasetManifest& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const std::string& bytes) {
    for (unsigned char ch : bytes) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& e : m.entries) {
    mix(io::read_text(m.resolve(e.path)));
    mix(io::read_text(io::sidecar_path(m.resolve(e.path))));
    if (!e.mask_path.empty() && fs::exists(m.resolve(e.mask_path))) mix(io::read_text(m.resolve(e.mask_path)));
  }
  return h;
}

}  // namespace ckm::envgen
