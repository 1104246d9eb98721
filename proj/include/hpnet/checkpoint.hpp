#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "hpnet/tensor.hpp"

namespace hpnet {

// Binary parameter container, all integers and floats little-endian:
//
//   magic      8 bytes  "HPNETCKP"
//   version    u32      (currently 1)
//   n_meta     u32      then n_meta x { u32 len, key bytes, u32 len, value bytes }
//   n_tensors  u32      then n_tensors x
//                         { u32 len, name bytes, u32 rank, rank x u64 dim,
//                           prod(dims) x f64 payload }
//
// Tensors are written in name order. Metadata carries free-form text such as
// the training epoch; tensors carry parameters and optimizer moments.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hpnet
