#include "grformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "grformer/errors.hpp"
#include "grformer/ops.hpp"

namespace grf {

std::vector<std::size_t> scaled_milestones(std::size_t iters) {
  std::vector<std::size_t> out;
  for (const double at : {250.0, 400.0, 510.0, 540.0}) {
    out.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(iters) * at / 600.0)));
  }
  return out;
}

double learning_rate(const TrainConfig& cfg, std::size_t iter) {
  const auto milestones = cfg.milestones.empty() ? scaled_milestones(cfg.iters) : cfg.milestones;
  if (!std::is_sorted(milestones.begin(), milestones.end())) {
    throw ContractError("learning_rate: milestones must be ascending");
  }
  double lr = cfg.lr;
  for (const std::size_t m : milestones) {
    if (iter >= m) lr *= 0.5;
  }
  return lr;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  return mean(abs(sub(pred, target)));
}

template <typename T>
void adam_step(const NamedTensors<T>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.numel(), T(0));
      state.v.emplace_back(t.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state was built for a different parameter set");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double lambda_cap = std::log(kMaxLambda);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = params[i];
    Tensor<T> p = tensor;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != data.size()) throw ContractError("adam_step: moment size mismatch for " + name);
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps);
      data[j] = static_cast<T>(data[j] - update);
    }
    if (name.size() >= 10 && name.compare(name.size() - 10, 10, "log_lambda") == 0) {
      for (auto& x : data) x = std::min(x, static_cast<T>(lambda_cap));
    }
  }
}

namespace {

// Index map of a dihedral op on an h x w grid: out (y, x) reads in[src].
std::vector<std::size_t> dihedral_map(std::size_t h, std::size_t w, int op, std::size_t& oh,
                                      std::size_t& ow) {
  if (op < 0 || op >= 8) throw ContractError("dihedral: op must be in [0, 8)");
  std::vector<std::size_t> idx(h * w);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::size_t ch = h, cw = w;
  auto rot = [&]() {
    // Counter-clockwise: out[y][x] = in[x][cw - 1 - y], out is cw x ch.
    std::vector<std::size_t> next(idx.size());
    for (std::size_t y = 0; y < cw; ++y) {
      for (std::size_t x = 0; x < ch; ++x) next[y * ch + x] = idx[x * cw + (cw - 1 - y)];
    }
    idx.swap(next);
    std::swap(ch, cw);
  };
  for (int r = 0; r < op % 4; ++r) rot();
  if (op >= 4) {
    std::vector<std::size_t> next(idx.size());
    for (std::size_t y = 0; y < ch; ++y) {
      for (std::size_t x = 0; x < cw; ++x) next[y * cw + x] = idx[y * cw + (cw - 1 - x)];
    }
    idx.swap(next);
  }
  oh = ch;
  ow = cw;
  return idx;
}

}  // namespace

int dihedral_inverse(int op) {
  if (op < 0 || op >= 8) throw ContractError("dihedral: op must be in [0, 8)");
  // A mirrored op is an involution; a pure rotation inverts by turning back.
  return op >= 4 ? op : (4 - op) % 4;
}

template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, int op) {
  if (x.rank() != 3) throw DimensionError("dihedral: expected [C, H, W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t oh = 0, ow = 0;
  const auto map = dihedral_map(h, w, op, oh, ow);
  std::vector<T> out(x.numel());
  const auto d = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < map.size(); ++i) out[ch * h * w + i] = d[ch * h * w + map[i]];
  }
  return Tensor<T>::from({c, oh, ow}, std::move(out));
}

PlaneF dihedral(const PlaneF& p, int op) {
  std::size_t oh = 0, ow = 0;
  const auto map = dihedral_map(p.height, p.width, op, oh, ow);
  PlaneF out(ow, oh);
  for (std::size_t i = 0; i < map.size(); ++i) out.values[i] = p.values[map[i]];
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& hr, const Tensor<T>& lr, Rng& rng) {
  const int op = static_cast<int>(rng.below(8));
  return {dihedral(hr, op), dihedral(lr, op)};
}

std::array<PlaneF, 3> degrade(const ImageU8& hr, std::size_t scale) {
  if (scale == 0) throw ContractError("degrade: scale must be positive");
  if (hr.width % scale != 0 || hr.height % scale != 0) {
    throw DimensionError("degrade: image " + std::to_string(hr.width) + "x" +
                         std::to_string(hr.height) + " is not divisible by scale " +
                         std::to_string(scale));
  }
  auto planes = to_planes(hr);
  for (auto& p : planes) p = bicubic_resize_to(p, hr.width / scale, hr.height / scale);
  return planes;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.num_groups = 1;
  cfg.blocks_per_group = 2;
  cfg.channels = 16;
  cfg.heads = 2;
  cfg.window = {8, 8};
  cfg.scale = 2;
  cfg.ffn_ratio = 2.0;
  cfg.c_hidden_rpb = 16;
  return cfg;
}

TrainConfig toy_train_config() {
  TrainConfig t;
  t.iters = 500;
  t.patch = 48;
  t.lr = 2e-3;
  return t;
}

ImageU8 synthetic_image(std::size_t width, std::size_t height, std::uint64_t seed) {
  Rng rng(seed);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = rng.uniform(0.35, 0.65) * static_cast<double>(width);
  const double cy = rng.uniform(0.35, 0.65) * static_cast<double>(height);
  const double radius = 0.22 * static_cast<double>(std::min(width, height));
  Rng noise = rng.split("noise");
  ImageU8 img(width, height, 3);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double stripes = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (fx + fy) / 7.0 + phase);
      const double ramp = fx / static_cast<double>(width);
      const bool inside = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy) < radius * radius;
      const double rgb[3] = {inside ? 0.9 : 0.25 + 0.5 * stripes, 0.2 + 0.6 * ramp,
                             inside ? 0.15 : 0.7 * stripes + 0.2 * ramp};
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = rgb[c] + noise.uniform(-3.0, 3.0) / 255.0;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

template <typename T>
ImageU8 super_resolve(const ImageU8& lr, const GrformerParams<T>& params, const ModelConfig& cfg) {
  NoGradGuard no_grad;
  ImageU8 input = lr;
  if (input.channels != cfg.c_in) {
    if (input.channels == 1 && cfg.c_in == 3) {
      input = from_planes(to_planes(lr));
    } else {
      throw DimensionError("super_resolve: image has " + std::to_string(lr.channels) +
                           " channels, model expects " + std::to_string(cfg.c_in));
    }
  }
  return tensor_to_image(grformer_forward(image_to_tensor<T>(input), params, cfg));
}

namespace {

template <typename T>
double eval_loss(const Tensor<T>& lr, const Tensor<T>& hr, const GrformerParams<T>& p,
                 const ModelConfig& cfg) {
  NoGradGuard no_grad;
  return static_cast<double>(l1_loss(grformer_forward(lr, p, cfg), hr).item());
}

double y_psnr(const ImageU8& a, const ImageU8& b, std::size_t crop) {
  return psnr(rgb_to_y(a), rgb_to_y(b), crop);
}

}  // namespace

template <typename T>
ToyResult<T> train_toy(const ModelConfig& cfg, const TrainConfig& tcfg, const ImageU8& hr_img) {
  cfg.validate();
  if (tcfg.batch == 0) throw ContractError("train_toy: batch must be positive");
  if (hr_img.channels != 3 || cfg.c_in != 3 || cfg.c_out != 3) {
    throw DimensionError("train_toy: expects an RGB image and a 3-channel model");
  }
  const std::size_t r = cfg.scale;
  const ImageU8 lr_img = from_planes(degrade(hr_img, r));
  const Tensor<T> hr = image_to_tensor<T>(hr_img);
  const Tensor<T> lr = image_to_tensor<T>(lr_img);

  ToyResult<T> result;
  result.params = init_parameters<T>(cfg, Rng(tcfg.seed));
  const NamedTensors<T> named = named_parameters(result.params);
  result.initial_loss = eval_loss(lr, hr, result.params, cfg);

  Rng rng = Rng(tcfg.seed).split("train");
  AdamState<T> state;
  const std::size_t lr_h = lr.dim(1), lr_w = lr.dim(2);
  const std::size_t lp = std::max<std::size_t>(1, tcfg.patch / r);
  for (std::size_t it = 0; it < tcfg.iters; ++it) {
    for (const auto& entry : named) Tensor<T>(entry.second).zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < tcfg.batch; ++b) {
      Tensor<T> lr_patch = lr, hr_patch = hr;
      if (lr_h > lp || lr_w > lp) {
        const std::size_t ph = std::min(lp, lr_h), pw = std::min(lp, lr_w);
        const std::size_t y0 = rng.below(lr_h - ph + 1), x0 = rng.below(lr_w - pw + 1);
        lr_patch = narrow(narrow(lr, 1, y0, ph), 2, x0, pw);
        hr_patch = narrow(narrow(hr, 1, y0 * r, ph * r), 2, x0 * r, pw * r);
      }
      if (tcfg.augment) std::tie(hr_patch, lr_patch) = augment(hr_patch, lr_patch, rng);
      const Tensor<T> loss = scale(l1_loss(grformer_forward(lr_patch, result.params, cfg), hr_patch),
                                   static_cast<T>(1.0 / static_cast<double>(tcfg.batch)));
      backward(loss);
      total += static_cast<double>(loss.item());
    }
    result.losses.push_back(total);
    adam_step(named, state, learning_rate(tcfg, it), tcfg);
  }
  for (const auto& entry : named) Tensor<T>(entry.second).zero_grad();

  result.final_loss = eval_loss(lr, hr, result.params, cfg);
  result.sr_psnr = y_psnr(super_resolve(lr_img, result.params, cfg), hr_img, r);
  const auto lr_planes = to_planes(lr_img);
  std::array<PlaneF, 3> up;
  for (std::size_t c = 0; c < 3; ++c) up[c] = bicubic_resize_to(lr_planes[c], hr_img.width, hr_img.height);
  result.bicubic_psnr = y_psnr(from_planes(up), hr_img, r);
  return result;
}

std::string format_loss_csv(const std::vector<double>& losses) {
  std::ostringstream os;
  os.precision(9);
  os << "iteration,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
  return os.str();
}

#define GRF_INSTANTIATE_TRAINING(T)                                                            \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                              \
  template void adam_step(const NamedTensors<T>&, AdamState<T>&, double, const TrainConfig&);  \
  template Tensor<T> dihedral(const Tensor<T>&, int);                                          \
  template std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>&, const Tensor<T>&, Rng&);  \
  template ToyResult<T> train_toy(const ModelConfig&, const TrainConfig&, const ImageU8&);     \
  template ImageU8 super_resolve(const ImageU8&, const GrformerParams<T>&, const ModelConfig&);

GRF_INSTANTIATE_TRAINING(float)
GRF_INSTANTIATE_TRAINING(double)

}  // namespace grf
