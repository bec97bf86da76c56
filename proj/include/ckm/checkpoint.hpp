#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ckm/tensor.hpp"

namespace ckm::ckpt {

inline constexpr char kMagic[4] = {'C', 'K', 'M', 'D'};
inline constexpr std::uint16_t kFormatVersion = 1;

struct TensorRecord {
  std::string name;
  ad::Shape shape;
  std::vector<double> data;
};

// Layout: "CKMD", u16 version, u32 header length, JSON header holding the config and the
// tensor table (name, shape, dtype, offset, count), then little-endian float64 payloads.
// Offsets count bytes from the start of the payload block.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

void save(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load(const std::filesystem::path& path);

}  // namespace ckm::ckpt
