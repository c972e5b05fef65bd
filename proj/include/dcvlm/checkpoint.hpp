#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dcvlm/nn.hpp"

namespace dcvlm {

/// Container layout:
///
///   DCVLM-CHECKPOINT 1
///   tensors <count>
///   <name> <f32|f64> <dims comma-separated, '-' for rank 0> <offset> <nbytes>
///   ...
///   end
///   <raw little-endian arrays, offsets relative to the byte after "end\n">
struct CheckpointEntry {
    std::string name;
    std::string dtype;  // "f32" or "f64"
    Shape shape;
    std::vector<std::byte> bytes;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename T>
CheckpointEntry to_entry(const std::string& name, const Tensor<T>& tensor);

/// Converts to T when the stored dtype differs.
template <typename T>
Tensor<T> from_entry(const CheckpointEntry& entry);

template <typename T>
void save_params(const std::filesystem::path& path, const ParamList<T>& params);

template <typename T>
std::map<std::string, Tensor<T>> load_tensors(const std::filesystem::path& path);

/// Copies stored values into existing leaves, matching by name. Throws when a
/// parameter is missing or its shape differs.
template <typename T>
void load_params(const std::filesystem::path& path, const ParamList<T>& params);

}  // namespace dcvlm
