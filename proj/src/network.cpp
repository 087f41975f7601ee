#include "grformer/network.hpp"

#include <cmath>
#include <string>

#include "grformer/errors.hpp"
#include "grformer/ops.hpp"

namespace grf {

WindowShift block_shift(const ModelConfig& cfg, std::size_t block_index) {
  if (!cfg.shift_windows || block_index % 2 == 0) return {};
  return {cfg.window.h / 2, cfg.window.w / 2};
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 3) throw DimensionError("pixel_shuffle: expected [C, H, W], got " + shape_str(x.shape()));
  if (r == 0 || x.dim(0) % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(x.dim(0)) +
                         " channels not divisible by r^2 = " + std::to_string(r * r));
  }
  const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * r, ow = w * r;
  std::vector<std::size_t> index(c * oh * ow);
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t src_c = ch * r * r + (y % r) * r + xx % r;
        index[k++] = (src_c * h + y / r) * w + xx / r;
      }
    }
  }
  return gather(x, std::move(index), {c, oh, ow});
}

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::size_t height, std::size_t width) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (height < h || width < w) throw DimensionError("reflect_pad: target smaller than input");
  if (height == h && width == w) return x;
  std::vector<std::size_t> index(c * height * width);
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = reflect_index(static_cast<long>(y), h);
      for (std::size_t xx = 0; xx < width; ++xx) {
        index[k++] = (ch * h + sy) * w + reflect_index(static_cast<long>(xx), w);
      }
    }
  }
  return gather(x, std::move(index), {c, height, width});
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width) {
  if (height == x.dim(1) && width == x.dim(2)) return x;
  return narrow(narrow(x, 1, 0, height), 2, 0, width);
}

namespace {

// [C, H, W] <-> [H*W, C]
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  return reshape(permute(x, {1, 2, 0}), {x.dim(1) * x.dim(2), x.dim(0)});
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& t, std::size_t h, std::size_t w) {
  return permute(reshape(t, {h, w, t.dim(1)}), {2, 0, 1});
}

}  // namespace

template <typename T>
Tensor<T> grsab_forward(const Tensor<T>& x, const GrsabParams<T>& p, const ModelConfig& cfg,
                        std::size_t block_index) {
  if (x.rank() != 3 || x.dim(0) != cfg.channels) {
    throw DimensionError("grsab_forward: expected [" + std::to_string(cfg.channels) +
                         ", H, W], got " + shape_str(x.shape()));
  }
  const std::size_t h = x.dim(1), w = x.dim(2);
  const WindowShift shift = block_shift(cfg, block_index);
  const Tensor<T> bias = position_bias(cfg.window, p.grsa.bias);

  Tensor<T> windows = window_partition(x, cfg.window, shift);
  Tensor<T> attn = grsa_forward(windows, p.grsa, bias);
  // Layer norm is per token, so it commutes with the window permutation.
  attn = layer_norm(attn, p.norm1.gamma, p.norm1.beta);
  Tensor<T> x1 = add(window_reverse(attn, cfg.window, h, w, shift), x);

  Tensor<T> tokens = to_tokens(x1);
  Tensor<T> ffn = linear(gelu(linear(tokens, p.ffn1.weight, p.ffn1.bias)), p.ffn2.weight, p.ffn2.bias);
  ffn = layer_norm(ffn, p.norm2.gamma, p.norm2.beta);
  return add(from_tokens(ffn, h, w), x1);
}

template <typename T>
Tensor<T> grsab_group_forward(const Tensor<T>& x, const GrsabGroupParams<T>& p,
                              const ModelConfig& cfg) {
  Tensor<T> chain = x;
  for (std::size_t j = 0; j < p.blocks.size(); ++j) chain = grsab_forward(chain, p.blocks[j], cfg, j);
  return add(conv2d_3x3(chain, p.conv.weight, p.conv.bias), chain);
}

template <typename T>
Tensor<T> grformer_forward(const Tensor<T>& img, const GrformerParams<T>& p, const ModelConfig& cfg) {
  if (img.rank() != 3 || img.dim(0) != cfg.c_in) {
    throw DimensionError("grformer_forward: expected [" + std::to_string(cfg.c_in) +
                         ", H, W], got " + shape_str(img.shape()));
  }
  const std::size_t h = img.dim(1), w = img.dim(2);
  const std::size_t hp = (h + cfg.window.h - 1) / cfg.window.h * cfg.window.h;
  const std::size_t wp = (w + cfg.window.w - 1) / cfg.window.w * cfg.window.w;
  const Tensor<T> padded = reflect_pad(img, hp, wp);

  const Tensor<T> x0 = conv2d_3x3(padded, p.conv_shallow.weight, p.conv_shallow.bias);
  Tensor<T> deep = x0;
  for (const auto& group : p.groups) deep = grsab_group_forward(deep, group, cfg);
  const Tensor<T> idf = add(conv2d_3x3(deep, p.conv_body.weight, p.conv_body.bias), x0);
  const Tensor<T> up = conv2d_3x3(add(idf, x0), p.conv_pre_up.weight, p.conv_pre_up.bias);
  return crop(pixel_shuffle(up, cfg.scale), h * cfg.scale, w * cfg.scale);
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng rng) {
  std::vector<T> values(shape_numel(shape));
  for (T& v : values) v = static_cast<T>(rng.truncated_normal(0.0, 0.02, 2.0));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
Conv2dParams<T> make_conv(std::size_t cin, std::size_t cout, Rng rng) {
  return {trunc_normal<T>({cout, cin, 3, 3}, rng), Tensor<T>::zeros({cout}, true)};
}

template <typename T>
LayerNormParams<T> make_norm(std::size_t c) {
  return {Tensor<T>::full({c}, T(1), true), Tensor<T>::zeros({c}, true)};
}

template <typename T>
void append(NamedTensors<T>& out, const std::string& name, const Tensor<T>& t) {
  out.emplace_back(name, t);
}

template <typename T>
void append_conv(NamedTensors<T>& out, const std::string& prefix, const Conv2dParams<T>& c) {
  append(out, prefix + ".weight", c.weight);
  append(out, prefix + ".bias", c.bias);
}

template <typename T>
void append_grl(NamedTensors<T>& out, const std::string& prefix, const GrlParams<T>& g) {
  for (std::size_t i = 0; i < g.groups(); ++i) {
    append(out, prefix + ".w" + std::to_string(i + 1), g.weights[i]);
    append(out, prefix + ".b" + std::to_string(i + 1), g.biases[i]);
  }
}

}  // namespace

template <typename T>
NamedTensors<T> named_parameters(const GrsaParams<T>& p, const std::string& prefix) {
  NamedTensors<T> out;
  append_grl(out, prefix + "q", p.q);
  append_grl(out, prefix + "k", p.k);
  append_grl(out, prefix + "v", p.v);
  append_grl(out, prefix + "proj", p.proj);
  append(out, prefix + "log_lambda", p.log_lambda);
  if (const auto* es = std::get_if<EsRpbParams<T>>(&p.bias)) {
    append(out, prefix + "rpb.alpha", es->alpha);
    append(out, prefix + "rpb.beta", es->beta);
    append(out, prefix + "rpb.mlp_w1", es->mlp_w1);
    append(out, prefix + "rpb.mlp_w2", es->mlp_w2);
  } else {
    append(out, prefix + "rpb.table", std::get<RpbTableParams<T>>(p.bias).table);
  }
  return out;
}

template <typename T>
NamedTensors<T> named_parameters(const GrsabParams<T>& p, const std::string& prefix) {
  NamedTensors<T> out = named_parameters(p.grsa, prefix + "grsa.");
  append(out, prefix + "norm1.gamma", p.norm1.gamma);
  append(out, prefix + "norm1.beta", p.norm1.beta);
  append(out, prefix + "ffn1.weight", p.ffn1.weight);
  append(out, prefix + "ffn1.bias", p.ffn1.bias);
  append(out, prefix + "ffn2.weight", p.ffn2.weight);
  append(out, prefix + "ffn2.bias", p.ffn2.bias);
  append(out, prefix + "norm2.gamma", p.norm2.gamma);
  append(out, prefix + "norm2.beta", p.norm2.beta);
  return out;
}

template <typename T>
NamedTensors<T> named_parameters(const GrformerParams<T>& p) {
  NamedTensors<T> out;
  append_conv(out, "conv_shallow", p.conv_shallow);
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    const std::string gp = "groups." + std::to_string(g) + ".";
    for (std::size_t b = 0; b < p.groups[g].blocks.size(); ++b) {
      auto block = named_parameters(p.groups[g].blocks[b], gp + "blocks." + std::to_string(b) + ".");
      out.insert(out.end(), block.begin(), block.end());
    }
    append_conv(out, gp + "conv", p.groups[g].conv);
  }
  append_conv(out, "conv_body", p.conv_body);
  append_conv(out, "conv_pre_up", p.conv_pre_up);
  return out;
}

template <typename T>
std::size_t parameter_count(const NamedTensors<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
GrformerParams<T> init_parameters(const ModelConfig& cfg, Rng rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  const std::size_t hidden = cfg.ffn_hidden();
  GrformerParams<T> p;
  p.conv_shallow = make_conv<T>(cfg.c_in, c, rng.split("conv_shallow"));
  for (std::size_t g = 0; g < cfg.num_groups; ++g) {
    const Rng grng = rng.split("groups").split(g);
    GrsabGroupParams<T> group;
    for (std::size_t b = 0; b < cfg.blocks_per_group; ++b) {
      const Rng brng = grng.split("blocks").split(b);
      GrsabParams<T> block;
      block.grsa = init_grsa<T>(cfg.grsa_shape(), brng.split("grsa"));
      block.norm1 = make_norm<T>(c);
      block.ffn1 = {trunc_normal<T>({c, hidden}, brng.split("ffn1")), Tensor<T>::zeros({hidden}, true)};
      block.ffn2 = {trunc_normal<T>({hidden, c}, brng.split("ffn2")), Tensor<T>::zeros({c}, true)};
      block.norm2 = make_norm<T>(c);
      group.blocks.push_back(std::move(block));
    }
    group.conv = make_conv<T>(c, c, grng.split("conv"));
    p.groups.push_back(std::move(group));
  }
  p.conv_body = make_conv<T>(c, c, rng.split("conv_body"));
  p.conv_pre_up = make_conv<T>(c, cfg.c_out * cfg.scale * cfg.scale, rng.split("conv_pre_up"));
  return p;
}

#define GRF_INSTANTIATE_NETWORK(T)                                                                \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> reflect_pad(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t);                            \
  template Tensor<T> grsab_forward(const Tensor<T>&, const GrsabParams<T>&, const ModelConfig&,   \
                                   std::size_t);                                                  \
  template Tensor<T> grsab_group_forward(const Tensor<T>&, const GrsabGroupParams<T>&,            \
                                         const ModelConfig&);                                     \
  template Tensor<T> grformer_forward(const Tensor<T>&, const GrformerParams<T>&,                 \
                                      const ModelConfig&);                                        \
  template NamedTensors<T> named_parameters(const GrformerParams<T>&);                            \
  template NamedTensors<T> named_parameters(const GrsabParams<T>&, const std::string&);           \
  template NamedTensors<T> named_parameters(const GrsaParams<T>&, const std::string&);            \
  template std::size_t parameter_count(const NamedTensors<T>&);                                   \
  template GrformerParams<T> init_parameters(const ModelConfig&, Rng);

GRF_INSTANTIATE_NETWORK(float)
GRF_INSTANTIATE_NETWORK(double)

}  // namespace grf
