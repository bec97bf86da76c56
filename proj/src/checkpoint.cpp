#include "ckm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace ckm::ckpt {

namespace {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw IoError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    if (t.data.size() != ad::numel(t.shape)) throw ShapeError("checkpoint tensor " + t.name + " has inconsistent size");
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f64"}, {"offset", offset}, {"count", t.data.size()}});
    offset += t.data.size() * sizeof(double);
  }
  const std::string header = nlohmann::json{{"config", ck.config}, {"tensors", table}}.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    put_le<std::uint16_t>(os, kFormatVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : ck.tensors)
      for (double v : t.data) put_le<double>(os, v);
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + " is not a CKMD checkpoint");
  const auto version = get_le<std::uint16_t>(is);
  if (version != kFormatVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  const auto hlen = get_le<std::uint32_t>(is);
  std::string header(hlen, '\0');
  if (!is.read(header.data(), hlen)) throw IoError("checkpoint header truncated in " + path.string());
  const auto j = nlohmann::json::parse(header);
  const auto payload_start = is.tellg();
  Checkpoint ck;
  ck.config = j.at("config");
  for (const auto& e : j.at("tensors")) {
    if (e.at("dtype") != "f64") throw IoError("unsupported dtype " + e.at("dtype").get<std::string>());
    TensorRecord t;
    t.name = e.at("name");
    t.shape = e.at("shape").get<ad::Shape>();
    const auto count = e.at("count").get<std::size_t>();
    if (count != ad::numel(t.shape)) throw IoError("checkpoint tensor " + t.name + " has inconsistent size");
    is.seekg(payload_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    t.data.resize(count);
    for (auto& v : t.data) v = get_le<double>(is);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

}  // namespace ckm::ckpt
