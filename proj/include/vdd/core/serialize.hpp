#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vdd/core/tensor.hpp"
#include "vdd/errors.hpp"

namespace vdd {

// Versioned binary container of named tensors. Used for checkpoints; entry
// prefixes distinguish parameters, buffers, optimizer moments and metadata.
inline constexpr char kCheckpointMagic[8] = {'V', 'D', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_tensor_map(const std::string& path, const std::map<std::string, Tensor<T>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainingError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_i64 = [&](int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  put_u32(kCheckpointVersion);
  put_u32(static_cast<uint32_t>(sizeof(T)));
  put_u32(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(static_cast<uint32_t>(t.ndim()));
    for (size_t d = 0; d < t.ndim(); ++d) put_i64(t.dim(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  if (!out) throw TrainingError("short write on checkpoint " + path);
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensor_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainingError("cannot read checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw TrainingError("bad checkpoint magic in " + path);
  auto get_u32 = [&] {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_i64 = [&] {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  if (get_u32() != kCheckpointVersion) throw TrainingError("unsupported checkpoint version");
  if (get_u32() != sizeof(T)) throw TrainingError("checkpoint scalar width mismatch");
  const uint32_t count = get_u32();
  std::map<std::string, Tensor<T>> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = get_u32();
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = get_i64();
    Tensor<T> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!in) throw TrainingError("truncated checkpoint " + path);
    tensors.emplace(std::move(name), std::move(t));
  }
  return tensors;
}

}  // namespace vdd
