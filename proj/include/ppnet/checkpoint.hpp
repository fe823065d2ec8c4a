#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppnet/network.hpp"

namespace ppnet {

/// Checkpoint container (all integers little-endian uint32):
///
///   "PPNC" | version (=1) | entry count
///   per entry: name length | name bytes | ndim | dims[ndim] | float32 data
///
/// Learnable tensors are stored under their parameter names; batch-norm
/// running statistics as "<bn name>.running_mean" / ".running_var".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void write_checkpoint_entries(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NetworkParams<T>& params);

/// Overwrites `params` (already laid out for the matching config) from the
/// file. Throws ErrorKind::Format on a missing entry or shape mismatch.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, NetworkParams<T>& params);

}  // namespace ppnet
