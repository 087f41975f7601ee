#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "grformer/attention.hpp"
#include "grformer/rng.hpp"
#include "grformer/tensor.hpp"

namespace grf {

struct ModelConfig {
  std::size_t num_groups = 4;
  std::size_t blocks_per_group = 6;
  std::size_t channels = 60;
  std::size_t heads = 3;
  WindowSpec window{8, 32};
  std::size_t scale = 4;
  // Inner FFN width is round(ffn_ratio * channels).
  double ffn_ratio = 2.4;
  std::size_t c_in = 3;
  std::size_t c_out = 3;
  bool shift_windows = true;
  std::size_t c_hidden_rpb = 128;
  AttentionVariant variant;

  std::size_t ffn_hidden() const;
  std::size_t block_count() const { return num_groups * blocks_per_group; }
  GrsaShape grsa_shape() const;
  // Throws DimensionError / ContractError on an unusable configuration.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Flat "key = value" text, one field per line, '#' comments.
ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::string& path);
std::string serialize_config(const ModelConfig& cfg);

template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [Cout, Cin, 3, 3]
  Tensor<T> bias;    // [Cout]
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [Cin, Cout]
  Tensor<T> bias;    // [Cout]
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
struct GrsabParams {
  GrsaParams<T> grsa;
  LayerNormParams<T> norm1;
  LinearParams<T> ffn1;
  LinearParams<T> ffn2;
  LayerNormParams<T> norm2;
};

template <typename T>
struct GrsabGroupParams {
  std::vector<GrsabParams<T>> blocks;
  Conv2dParams<T> conv;
};

template <typename T>
struct GrformerParams {
  Conv2dParams<T> conv_shallow;
  std::vector<GrsabGroupParams<T>> groups;
  Conv2dParams<T> conv_body;
  Conv2dParams<T> conv_pre_up;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Every learnable tensor with a stable dotted name, in a fixed order.
template <typename T>
NamedTensors<T> named_parameters(const GrformerParams<T>& p);
template <typename T>
NamedTensors<T> named_parameters(const GrsabParams<T>& p, const std::string& prefix = "");
template <typename T>
NamedTensors<T> named_parameters(const GrsaParams<T>& p, const std::string& prefix = "");

template <typename T>
std::size_t parameter_count(const NamedTensors<T>& params);

// Odd-indexed blocks are shifted by half a window when cfg.shift_windows.
WindowShift block_shift(const ModelConfig& cfg, std::size_t block_index);

template <typename T>
Tensor<T> grsab_forward(const Tensor<T>& x, const GrsabParams<T>& p, const ModelConfig& cfg,
                        std::size_t block_index);
template <typename T>
Tensor<T> grsab_group_forward(const Tensor<T>& x, const GrsabGroupParams<T>& p,
                              const ModelConfig& cfg);
// [c_in, H, W] -> [c_out, r*H, r*W]. Pads to window multiples internally.
template <typename T>
Tensor<T> grformer_forward(const Tensor<T>& img, const GrformerParams<T>& p, const ModelConfig& cfg);

// [c * r^2, H, W] -> [c, r*H, r*W].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r);

// Reflect-pads a [C, H, W] map at the bottom/right to height x width.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::size_t height, std::size_t width);
// Top-left crop of a [C, H, W] map.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width);

template <typename T>
GrformerParams<T> init_parameters(const ModelConfig& cfg, Rng rng);

}  // namespace grf
