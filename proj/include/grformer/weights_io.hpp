#pragma once

#include <string>
#include <utility>

#include "grformer/network.hpp"

namespace grf {

// Container layout, all integers little-endian:
//   "GRFW1"
//   u32 config length, config text (serialize_config)
//   u32 tensor count
//   per tensor: u32 name length, name (UTF-8), u32 dtype length, dtype
//               ("f32" | "f64"), u32 rank, u64 dims[rank], u64 byte offset
//               relative to the start of the data section
//   data section: raw little-endian scalars, tensors back to back
inline constexpr char kWeightsMagic[] = "GRFW1";

template <typename T>
std::string encode_weights(const ModelConfig& cfg, const GrformerParams<T>& params);

// Rebuilds the parameter structure from the embedded config and fills it by
// name. Throws FormatError on any mismatch. Stored f64 data loaded as f32 (or
// the reverse) is converted; same-precision loads are bit-exact.
template <typename T>
std::pair<ModelConfig, GrformerParams<T>> decode_weights(const std::string& bytes);

template <typename T>
void save_weights(const std::string& path, const ModelConfig& cfg, const GrformerParams<T>& params);
template <typename T>
std::pair<ModelConfig, GrformerParams<T>> load_weights(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace grf
