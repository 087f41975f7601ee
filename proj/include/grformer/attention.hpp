#pragma once

#include <cstddef>
#include <utility>
#include <variant>
#include <vector>

#include "grformer/rng.hpp"
#include "grformer/tensor.hpp"

namespace grf {

struct WindowSpec {
  std::size_t h = 8;
  std::size_t w = 32;

  std::size_t tokens() const { return h * w; }
  // (2h - 1) * (2w - 1) distinct relative offsets.
  std::size_t offset_count() const { return (2 * h - 1) * (2 * w - 1); }
  bool operator==(const WindowSpec&) const = default;
};

// Cyclic shift in pixels applied before partitioning.
struct WindowShift {
  std::size_t dy = 0;
  std::size_t dx = 0;
};

// Toggles for the ablation arms: grouped vs dense QKV/proj, QKV residual on
// or off, exponential-space MLP bias vs a free per-offset table.
struct AttentionVariant {
  bool grouped = true;
  bool residual = true;
  bool es_rpb = true;
  bool operator==(const AttentionVariant&) const = default;
};

// Channel-grouped affine map. With two groups and residual on this is the
// grouped residual linear layer: each half gets x_g * W_g + b_g + x_g.
template <typename T>
struct GrlParams {
  std::vector<Tensor<T>> weights;  // per group, [C/g, C/g]
  std::vector<Tensor<T>> biases;   // per group, [C/g]
  bool residual = true;

  std::size_t groups() const { return weights.size(); }
};

template <typename T>
struct EsRpbParams {
  Tensor<T> alpha;   // scalar, horizontal distance sensitivity
  Tensor<T> beta;    // scalar, vertical distance sensitivity
  Tensor<T> mlp_w1;  // [2, hidden], no bias
  Tensor<T> mlp_w2;  // [hidden, heads], no bias
};

// Baseline bias: one free scalar per (offset, head).
template <typename T>
struct RpbTableParams {
  Tensor<T> table;  // [(2h-1)(2w-1), heads]
};

template <typename T>
using PositionBiasParams = std::variant<EsRpbParams<T>, RpbTableParams<T>>;

template <typename T>
struct GrsaParams {
  GrlParams<T> q, k, v;
  GrlParams<T> proj;  // never residual
  Tensor<T> log_lambda;  // [heads]; scale factor is exp(log_lambda)
  PositionBiasParams<T> bias;
  std::size_t heads = 1;
};

// Upper bound on the attention scale; enforced by the optimizer.
inline constexpr double kMaxLambda = 100.0;

struct OffsetTable {
  std::vector<int> dx;  // per unique offset, row-major over (dy, dx)
  std::vector<int> dy;
  // gather_index[i * N + j] -> unique-offset row for token pair (i, j),
  // offset = coord(i) - coord(j).
  std::vector<std::size_t> gather_index;
};

OffsetTable relative_offset_table(const WindowSpec& win);

// sign(d) * (1 - exp(-|rate * d|)) as a plain function.
double exp_space_offset(double rate, double d);

template <typename T>
Tensor<T> grl_forward(const Tensor<T>& x, const GrlParams<T>& p);

// Pre-MLP features [(2h-1)(2w-1), 2]; column 0 from dX, column 1 from dY.
template <typename T>
Tensor<T> es_rpb_features(const WindowSpec& win, const EsRpbParams<T>& p);
// MLP output before the token-pair gather: [(2h-1)(2w-1), heads].
template <typename T>
Tensor<T> es_rpb_table(const WindowSpec& win, const EsRpbParams<T>& p);
// [heads, N, N].
template <typename T>
Tensor<T> es_rpb_bias(const WindowSpec& win, const EsRpbParams<T>& p);
template <typename T>
Tensor<T> rpb_table_bias(const WindowSpec& win, const RpbTableParams<T>& p);
template <typename T>
Tensor<T> position_bias(const WindowSpec& win, const PositionBiasParams<T>& p);

// x is [N, C] or [B, N, C]; bias is [heads, N, N].
template <typename T>
Tensor<T> grsa_forward(const Tensor<T>& x, const GrsaParams<T>& p, const Tensor<T>& bias);

// [C, H, W] -> [windows, h*w, C]. Reflect-pads H and W up to window
// multiples, then rolls by -shift so that the window grid starts at `shift`.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowSpec& win, WindowShift shift = {});
// Inverse of window_partition for an original extent of height x width.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowSpec& win, std::size_t height,
                         std::size_t width, WindowShift shift = {});

// Mirror index into [0, n) with period 2n, defined for any integer i.
std::size_t reflect_index(long i, std::size_t n);

struct GrsaShape {
  std::size_t channels = 60;
  std::size_t heads = 3;
  std::size_t rpb_hidden = 128;
  WindowSpec window;
  AttentionVariant variant;
};

// Weights ~ truncated normal(0, 0.02) within +-2 sigma, biases 0,
// alpha = beta = 1, lambda = 10.
template <typename T>
GrsaParams<T> init_grsa(const GrsaShape& shape, Rng rng);

template <typename T>
GrlParams<T> make_grouped_linear(std::size_t channels, std::size_t groups, bool residual, Rng rng);

void validate_grsa_shape(const GrsaShape& shape);

}  // namespace grf
