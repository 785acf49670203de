#pragma once

// Named-tensor container, "punr-ckpt-v1".
//
// Layout (all integers little-endian):
//   "punr-ckpt-v1\n"
//   u32 metadata_count, then per entry: str key, str value
//   u32 tensor_count, then per tensor: str name, str dtype ("f64"),
//       u32 rank, u64 dims[rank], f64 payload[prod(dims)]
// where str = u32 byte length followed by the bytes.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "punr/tensor.hpp"

namespace punr {

inline constexpr const char* kCheckpointMagic = "punr-ckpt-v1";

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace punr
