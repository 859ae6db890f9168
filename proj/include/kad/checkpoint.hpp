#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kad/net.hpp"
#include "kad/tensor.hpp"

namespace kad {

// On-disk format, little-endian:
//   magic "KADC", u32 version, u64 config hash, u32 tensor count,
//   then per tensor: u32 name length, UTF-8 name, u8 rank, u64 per dim,
//   raw f32 payload.
// Optimizer velocity, the iteration counter and the RNG state travel as
// ordinary named tensors ("opt.velocity.*", "meta.*").
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  uint64_t config_hash = 0;
  std::vector<NamedTensor> tensors;

  void add(const std::string& name, const Tensor& t);
  const Tensor* find(const std::string& name) const;

  // Copies payloads into a network's parameters and buffers, matching
  // "<prefix>.<param name>". Every parameter must be present.
  void load_into(const std::string& prefix, Network& net) const;

  // Snapshot of a network's parameters and buffers under a prefix.
  void add_network(const std::string& prefix, Network& net);

  void add_scalar(const std::string& name, double v);
  double scalar(const std::string& name) const;

  void add_u64(const std::string& name, uint64_t v);  // 4 x 16-bit words
  uint64_t u64(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);

// MissingArtifactError when the file does not exist; IoError when it is
// unreadable or malformed.
Checkpoint load_checkpoint(const std::string& path);

// FNV over the raw parameter bytes; the frozen-parameter contract compares
// these across training.
uint64_t params_checksum(Network& net);

}  // namespace kad
