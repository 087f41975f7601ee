#include "grformer/attention.hpp"

#include <cmath>
#include <string>

#include "grformer/errors.hpp"
#include "grformer/ops.hpp"

namespace grf {

namespace {

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng rng, double stddev = 0.02) {
  std::vector<T> values(shape_numel(shape));
  for (T& v : values) v = static_cast<T>(rng.truncated_normal(0.0, stddev, 2.0));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

}  // namespace

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n) - 2;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

double exp_space_offset(double rate, double d) {
  const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
  return s * (1.0 - std::exp(-std::abs(rate * d)));
}

OffsetTable relative_offset_table(const WindowSpec& win) {
  if (win.h == 0 || win.w == 0) throw ContractError("window dimensions must be positive");
  const long h = static_cast<long>(win.h), w = static_cast<long>(win.w);
  const long cols = 2 * w - 1;
  OffsetTable t;
  for (long dy = -(h - 1); dy <= h - 1; ++dy) {
    for (long dx = -(w - 1); dx <= w - 1; ++dx) {
      t.dy.push_back(static_cast<int>(dy));
      t.dx.push_back(static_cast<int>(dx));
    }
  }
  const std::size_t n = win.tokens();
  t.gather_index.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const long yi = static_cast<long>(i / win.w), xi = static_cast<long>(i % win.w);
    for (std::size_t j = 0; j < n; ++j) {
      const long yj = static_cast<long>(j / win.w), xj = static_cast<long>(j % win.w);
      const long row = (yi - yj + h - 1) * cols + (xi - xj + w - 1);
      t.gather_index[i * n + j] = static_cast<std::size_t>(row);
    }
  }
  return t;
}

template <typename T>
Tensor<T> grl_forward(const Tensor<T>& x, const GrlParams<T>& p) {
  const std::size_t g = p.groups();
  if (g == 0 || p.biases.size() != g) throw ContractError("grl_forward: malformed parameters");
  const std::size_t c = x.dim(x.rank() - 1);
  if (c % g != 0) {
    throw DimensionError("grl_forward: " + std::to_string(c) + " channels cannot split into " +
                         std::to_string(g) + " groups");
  }
  if (g == 1) {
    Tensor<T> y = linear(x, p.weights[0], p.biases[0]);
    return p.residual ? add(y, x) : y;
  }
  std::vector<Tensor<T>> parts = split(x, -1, g);
  std::vector<Tensor<T>> outs;
  outs.reserve(g);
  for (std::size_t i = 0; i < g; ++i) {
    Tensor<T> y = linear(parts[i], p.weights[i], p.biases[i]);
    outs.push_back(p.residual ? add(y, parts[i]) : y);
  }
  return concat(outs, -1);
}

template <typename T>
Tensor<T> es_rpb_features(const WindowSpec& win, const EsRpbParams<T>& p) {
  const OffsetTable table = relative_offset_table(win);
  const std::size_t rows = table.dx.size();
  std::vector<T> dx(rows), dy(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    dx[i] = static_cast<T>(table.dx[i]);
    dy[i] = static_cast<T>(table.dy[i]);
  }
  const auto mapped = [](const Tensor<T>& rate, std::vector<T> offsets) {
    const std::size_t n = offsets.size();
    Tensor<T> d = Tensor<T>::from({n, 1}, std::move(offsets));
    Tensor<T> r = reshape(rate, {1, 1});
    // sign(d) * (1 - exp(-|rate * d|))
    Tensor<T> decay = exp(neg(abs(mul(d, r))));
    return mul(sign(d), add_scalar(neg(decay), T(1)));
  };
  return concat<T>({mapped(p.alpha, std::move(dx)), mapped(p.beta, std::move(dy))}, 1);
}

template <typename T>
Tensor<T> es_rpb_table(const WindowSpec& win, const EsRpbParams<T>& p) {
  Tensor<T> hidden = relu(matmul(es_rpb_features(win, p), p.mlp_w1));
  return matmul(hidden, p.mlp_w2);
}

namespace {

// table [(2h-1)(2w-1), heads] -> [heads, N, N]
template <typename T>
Tensor<T> gather_bias(const WindowSpec& win, const Tensor<T>& table) {
  const OffsetTable offsets = relative_offset_table(win);
  const std::size_t heads = table.dim(1);
  const std::size_t n = win.tokens();
  std::vector<std::size_t> index(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t k = 0; k < n * n; ++k) {
      index[h * n * n + k] = offsets.gather_index[k] * heads + h;
    }
  }
  return gather(table, std::move(index), {heads, n, n});
}

}  // namespace

template <typename T>
Tensor<T> es_rpb_bias(const WindowSpec& win, const EsRpbParams<T>& p) {
  return gather_bias(win, es_rpb_table(win, p));
}

template <typename T>
Tensor<T> rpb_table_bias(const WindowSpec& win, const RpbTableParams<T>& p) {
  if (p.table.rank() != 2 || p.table.dim(0) != win.offset_count()) {
    throw DimensionError("rpb table " + shape_str(p.table.shape()) + " does not match window " +
                         std::to_string(win.h) + "x" + std::to_string(win.w));
  }
  return gather_bias(win, p.table);
}

template <typename T>
Tensor<T> position_bias(const WindowSpec& win, const PositionBiasParams<T>& p) {
  if (const auto* es = std::get_if<EsRpbParams<T>>(&p)) return es_rpb_bias(win, *es);
  return rpb_table_bias(win, std::get<RpbTableParams<T>>(p));
}

template <typename T>
Tensor<T> grsa_forward(const Tensor<T>& x, const GrsaParams<T>& p, const Tensor<T>& bias) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("grsa_forward: expected [N, C] or [B, N, C], got " + shape_str(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const Tensor<T> xb = batched ? x : reshape(x, {1, x.dim(0), x.dim(1)});
  const std::size_t b = xb.dim(0), n = xb.dim(1), c = xb.dim(2);
  const std::size_t heads = p.heads;
  if (heads == 0 || c % heads != 0) {
    throw DimensionError("grsa_forward: " + std::to_string(c) + " channels not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (bias.shape() != Shape{heads, n, n}) {
    throw DimensionError("grsa_forward: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(heads) + " heads over " + std::to_string(n) + " tokens");
  }
  if (p.log_lambda.shape() != Shape{heads}) {
    throw DimensionError("grsa_forward: lambda must have one entry per head");
  }
  const std::size_t hd = c / heads;
  const auto split_heads = [&](const Tensor<T>& t) {
    return permute(reshape(t, {b, n, heads, hd}), {0, 2, 1, 3});
  };
  Tensor<T> q = l2_normalize(split_heads(grl_forward(xb, p.q)), -1);
  Tensor<T> k = l2_normalize(split_heads(grl_forward(xb, p.k)), -1);
  Tensor<T> v = split_heads(grl_forward(xb, p.v));

  Tensor<T> lambda = reshape(exp(p.log_lambda), {heads, 1, 1});
  Tensor<T> logits = add(mul(matmul(q, transpose(k)), lambda), bias);
  Tensor<T> attn = softmax(logits, -1);
  Tensor<T> merged = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {b, n, c});
  Tensor<T> out = grl_forward(merged, p.proj);
  return batched ? out : reshape(out, {n, c});
}

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowSpec& win, WindowShift shift) {
  if (x.rank() != 3) throw DimensionError("window_partition: expected [C, H, W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t hp = round_up(h, win.h), wp = round_up(w, win.w);
  const std::size_t wy_count = hp / win.h, wx_count = wp / win.w;
  const std::size_t n = win.tokens();
  std::vector<std::size_t> index(wy_count * wx_count * n * c);
  std::size_t k = 0;
  for (std::size_t wy = 0; wy < wy_count; ++wy) {
    for (std::size_t wx = 0; wx < wx_count; ++wx) {
      for (std::size_t ty = 0; ty < win.h; ++ty) {
        for (std::size_t tx = 0; tx < win.w; ++tx) {
          const std::size_t py = (wy * win.h + ty + shift.dy) % hp;
          const std::size_t px = (wx * win.w + tx + shift.dx) % wp;
          const std::size_t sy = reflect_index(static_cast<long>(py), h);
          const std::size_t sx = reflect_index(static_cast<long>(px), w);
          for (std::size_t ch = 0; ch < c; ++ch) index[k++] = (ch * h + sy) * w + sx;
        }
      }
    }
  }
  return gather(x, std::move(index), {wy_count * wx_count, n, c});
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowSpec& win, std::size_t height,
                         std::size_t width, WindowShift shift) {
  const std::size_t hp = round_up(height, win.h), wp = round_up(width, win.w);
  const std::size_t wx_count = wp / win.w;
  const std::size_t n = win.tokens();
  if (windows.rank() != 3 || windows.dim(0) != (hp / win.h) * wx_count || windows.dim(1) != n) {
    throw DimensionError("window_reverse: " + shape_str(windows.shape()) +
                         " does not tile a " + std::to_string(height) + "x" +
                         std::to_string(width) + " map");
  }
  const std::size_t c = windows.dim(2);
  std::vector<std::size_t> index(c * height * width);
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t qy = (y + hp - shift.dy % hp) % hp;
        const std::size_t qx = (x + wp - shift.dx % wp) % wp;
        const std::size_t win_index = (qy / win.h) * wx_count + qx / win.w;
        const std::size_t token = (qy % win.h) * win.w + qx % win.w;
        index[k++] = (win_index * n + token) * c + ch;
      }
    }
  }
  return gather(windows, std::move(index), {c, height, width});
}

void validate_grsa_shape(const GrsaShape& s) {
  if (s.heads == 0 || s.channels % s.heads != 0) {
    throw DimensionError("channels (" + std::to_string(s.channels) +
                         ") must be divisible by heads (" + std::to_string(s.heads) + ")");
  }
  if (s.variant.grouped && s.channels % 2 != 0) {
    throw DimensionError("grouped projections need an even channel count, got " +
                         std::to_string(s.channels));
  }
  if (s.window.h == 0 || s.window.w == 0) throw ContractError("window dimensions must be positive");
  if (s.variant.es_rpb && s.rpb_hidden == 0) throw ContractError("rpb hidden width must be positive");
}

template <typename T>
GrlParams<T> make_grouped_linear(std::size_t channels, std::size_t groups, bool residual, Rng rng) {
  GrlParams<T> p;
  p.residual = residual;
  const std::size_t cg = channels / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    p.weights.push_back(truncated_normal<T>({cg, cg}, rng.split("w" + std::to_string(g + 1))));
    p.biases.push_back(Tensor<T>::zeros({cg}, true));
  }
  return p;
}

template <typename T>
GrsaParams<T> init_grsa(const GrsaShape& s, Rng rng) {
  validate_grsa_shape(s);
  const std::size_t groups = s.variant.grouped ? 2 : 1;
  GrsaParams<T> p;
  p.heads = s.heads;
  p.q = make_grouped_linear<T>(s.channels, groups, s.variant.residual, rng.split("q"));
  p.k = make_grouped_linear<T>(s.channels, groups, s.variant.residual, rng.split("k"));
  p.v = make_grouped_linear<T>(s.channels, groups, s.variant.residual, rng.split("v"));
  p.proj = make_grouped_linear<T>(s.channels, groups, false, rng.split("proj"));
  p.log_lambda = Tensor<T>::full({s.heads}, static_cast<T>(std::log(10.0)), true);
  if (s.variant.es_rpb) {
    EsRpbParams<T> es;
    es.alpha = Tensor<T>::scalar(T(1), true);
    es.beta = Tensor<T>::scalar(T(1), true);
    es.mlp_w1 = truncated_normal<T>({2, s.rpb_hidden}, rng.split("rpb.w1"));
    es.mlp_w2 = truncated_normal<T>({s.rpb_hidden, s.heads}, rng.split("rpb.w2"));
    p.bias = std::move(es);
  } else {
    p.bias = RpbTableParams<T>{truncated_normal<T>({s.window.offset_count(), s.heads},
                                                   rng.split("rpb.table"))};
  }
  return p;
}

#define GRF_INSTANTIATE_ATTENTION(T)                                                             \
  template Tensor<T> grl_forward(const Tensor<T>&, const GrlParams<T>&);                         \
  template Tensor<T> es_rpb_features(const WindowSpec&, const EsRpbParams<T>&);                  \
  template Tensor<T> es_rpb_table(const WindowSpec&, const EsRpbParams<T>&);                     \
  template Tensor<T> es_rpb_bias(const WindowSpec&, const EsRpbParams<T>&);                      \
  template Tensor<T> rpb_table_bias(const WindowSpec&, const RpbTableParams<T>&);                \
  template Tensor<T> position_bias(const WindowSpec&, const PositionBiasParams<T>&);             \
  template Tensor<T> grsa_forward(const Tensor<T>&, const GrsaParams<T>&, const Tensor<T>&);     \
  template Tensor<T> window_partition(const Tensor<T>&, const WindowSpec&, WindowShift);         \
  template Tensor<T> window_reverse(const Tensor<T>&, const WindowSpec&, std::size_t,            \
                                    std::size_t, WindowShift);                                   \
  template GrsaParams<T> init_grsa(const GrsaShape&, Rng);                                       \
  template GrlParams<T> make_grouped_linear(std::size_t, std::size_t, bool, Rng);

GRF_INSTANTIATE_ATTENTION(float)
GRF_INSTANTIATE_ATTENTION(double)

}  // namespace grf
