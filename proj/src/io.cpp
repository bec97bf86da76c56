#include "ckm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ckm::io {

using nlohmann::json;

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

void put_f64_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(buf, 8);
}

double get_f64_le(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw IoError("truncated float64 payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

Pgm read_pgm(const fs::path& path) {
  auto in = open_in(path);
  if (next_token(in) != "P5") throw IoError("'" + path.string() + "' is not a binary PGM (P5)");
  Pgm p;
  try {
    p.cols = std::stoi(next_token(in));
    p.rows = std::stoi(next_token(in));
    p.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed PGM header in '" + path.string() + "'");
  }
  if (p.rows <= 0 || p.cols <= 0 || p.maxval <= 0 || p.maxval > 65535)
    throw IoError("unsupported PGM geometry in '" + path.string() + "'");
  const std::size_t n = static_cast<std::size_t>(p.rows) * p.cols;
  p.samples.resize(n);
  if (p.maxval > 255) {
    std::vector<unsigned char> raw(2 * n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw IoError("truncated PGM payload in '" + path.string() + "'");
    for (std::size_t i = 0; i < n; ++i) p.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  } else {
    std::vector<unsigned char> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw IoError("truncated PGM payload in '" + path.string() + "'");
    std::copy(raw.begin(), raw.end(), p.samples.begin());
  }
  for (auto s : p.samples)
    if (s > p.maxval) throw IoError("PGM sample exceeds maxval in '" + path.string() + "'");
  return p;
}

void write_pgm(const fs::path& path, const Pgm& p) {
  auto out = open_out(path);
  out << "P5\n" << p.cols << " " << p.rows << "\n" << p.maxval << "\n";
  if (p.maxval > 255) {
    std::vector<unsigned char> raw(2 * p.samples.size());
    for (std::size_t i = 0; i < p.samples.size(); ++i) {
      raw[2 * i] = static_cast<unsigned char>(p.samples[i] >> 8);
      raw[2 * i + 1] = static_cast<unsigned char>(p.samples[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  } else {
    std::vector<unsigned char> raw(p.samples.begin(), p.samples.end());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_preview_pgm(const fs::path& path, const Image& img) {
  Pgm p{img.rows, img.cols, 255, {}};
  p.samples.reserve(img.size());
  for (double v : img.data) p.samples.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  write_pgm(path, p);
}

fs::path sidecar_path(const fs::path& pgm_path) {
  fs::path p = pgm_path;
  return p.replace_extension(".json");
}

fs::path mask_path(const fs::path& pgm_path) {
  fs::path p = pgm_path;
  return p.replace_filename(pgm_path.stem().string() + "_mask.pgm");
}

double quantize_pixel(double x) { return std::round(std::clamp(x, 0.0, 1.0) * 65535.0) / 65535.0; }

void write_mask(const fs::path& path, const Mask& mask) {
  Pgm p{mask.rows, mask.cols, 1, {}};
  p.samples.assign(mask.data.begin(), mask.data.end());
  write_pgm(path, p);
}

Mask read_mask(const fs::path& path) {
  Pgm p = read_pgm(path);
  if (p.maxval != 1) throw IoError("mask '" + path.string() + "' must have maxval 1");
  Mask m(p.rows, p.cols);
  std::copy(p.samples.begin(), p.samples.end(), m.data.begin());
  return m;
}

void write_ckm(const fs::path& pgm_path, const CkmGrid& grid) {
  Image px = grid.pixels();
  Pgm p{px.rows, px.cols, 65535, {}};
  p.samples.reserve(px.size());
  for (double v : px.data) p.samples.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)));
  write_pgm(pgm_path, p);
  const bool has_mask = grid.building_mask().has_value();
  json meta = {{"min_db", grid.value_map().min_db},
               {"max_db", grid.value_map().max_db},
               {"height", grid.rows()},
               {"width", grid.cols()},
               {"has_building_mask", has_mask}};
  write_text(sidecar_path(pgm_path), meta.dump(2) + "\n");
  if (has_mask) write_mask(mask_path(pgm_path), *grid.building_mask());
}

CkmGrid read_ckm(const fs::path& pgm_path) {
  json meta;
  try {
    meta = json::parse(read_text(sidecar_path(pgm_path)));
  } catch (const json::exception& e) {
    throw IoError("bad CKM sidecar for '" + pgm_path.string() + "': " + e.what());
  }
  Pgm p = read_pgm(pgm_path);
  if (p.maxval != 65535) throw IoError("CKM image '" + pgm_path.string() + "' must have maxval 65535");
  if (meta.at("height").get<int>() != p.rows || meta.at("width").get<int>() != p.cols)
    throw IoError("sidecar shape disagrees with '" + pgm_path.string() + "'");
  ValueMap map{meta.at("min_db").get<double>(), meta.at("max_db").get<double>()};
  Image px(p.rows, p.cols);
  for (std::size_t i = 0; i < px.size(); ++i) px.data[i] = p.samples[i] / 65535.0;
  std::optional<Mask> mask;
  if (meta.value("has_building_mask", false)) mask = read_mask(mask_path(pgm_path));
  return CkmGrid::from_pixels(px, map, std::move(mask));
}

void write_observation(const fs::path& path, const Observation& obs) {
  json h = {{"format", "ckm-observation"},
            {"version", 1},
            {"kind", task_name(obs.spec.kind)},
            {"rows", obs.rows},
            {"cols", obs.cols},
            {"noise_std", obs.spec.noise_std},
            {"seed", obs.spec.seed},
            {"count", obs.values.size()}};
  if (obs.spec.kind == Task::SuperRes) h["factor"] = obs.spec.factor;
  if (obs.spec.kind == Task::Inpaint) {
    fs::path mp = path;
    mp += ".mask.pgm";
    write_mask(mp, obs.spec.observed);
    h["mask"] = mp.filename().string();
  }
  auto out = open_out(path);
  out << h.dump() << "\n";
  for (double v : obs.values) put_f64_le(out, v);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Observation read_observation(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty observation file '" + path.string() + "'");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("bad observation header in '" + path.string() + "': " + e.what());
  }
  if (h.value("format", "") != "ckm-observation") throw IoError("'" + path.string() + "' is not an observation file");
  Observation obs;
  obs.rows = h.at("rows").get<int>();
  obs.cols = h.at("cols").get<int>();
  obs.spec.kind = parse_task(h.at("kind").get<std::string>());
  obs.spec.noise_std = h.at("noise_std").get<double>();
  obs.spec.seed = h.at("seed").get<std::uint64_t>();
  if (obs.spec.kind == Task::SuperRes) obs.spec.factor = h.at("factor").get<int>();
  if (obs.spec.kind == Task::Inpaint) obs.spec.observed = read_mask(path.parent_path() / h.at("mask").get<std::string>());
  const auto count = h.at("count").get<std::size_t>();
  obs.values.resize(count);
  for (auto& v : obs.values) v = get_f64_le(in);
  if (count != obs.spec.observation_size(obs.rows, obs.cols))
    throw IoError("observation '" + path.string() + "' has " + std::to_string(count) + " values, operator expects " +
                  std::to_string(obs.spec.observation_size(obs.rows, obs.cols)));
  return obs;
}

std::string read_text(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace ckm::io
