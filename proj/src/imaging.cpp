#include "grformer/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "grformer/errors.hpp"

namespace grf {

PlaneF rgb_to_y(const std::array<PlaneF, 3>& rgb) {
  PlaneF y(rgb[0].width, rgb[0].height);
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    const double r = rgb[0].values[i], g = rgb[1].values[i], b = rgb[2].values[i];
    y.values[i] = static_cast<float>((16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
  }
  return y;
}

PlaneF rgb_to_y(const ImageU8& image) {
  if (image.channels == 1) {
    // A gray image is R = G = B.
    std::array<PlaneF, 3> p;
    p.fill(to_planes(image)[0]);
    return rgb_to_y(p);
  }
  return rgb_to_y(to_planes(image));
}

std::array<PlaneF, 3> to_planes(const ImageU8& image) {
  std::array<PlaneF, 3> out;
  for (auto& p : out) p = PlaneF(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = image.channels == 1 ? 0 : c;
        out[c].at(x, y) = static_cast<float>(image.at(x, y, src) / 255.0);
      }
    }
  }
  return out;
}

namespace {

std::uint8_t quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

double cubic(double x) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return 1.5 * ax * ax * ax - 2.5 * ax * ax + 1.0;
  if (ax <= 2.0) return -0.5 * ax * ax * ax + 2.5 * ax * ax - 4.0 * ax + 2.0;
  return 0.0;
}

struct Taps {
  std::vector<std::size_t> index;  // taps per output sample, flattened
  std::vector<double> weight;
  std::size_t per_output = 0;
};

// Resampling taps along one axis, 1-based sample geometry as in the usual
// image-resize convention: u = i / s + (1 - 1/s) / 2.
Taps taps_for(std::size_t in_len, std::size_t out_len, double scale) {
  const bool shrink = scale < 1.0;
  const double kernel_width = shrink ? 4.0 / scale : 4.0;
  Taps t;
  t.per_output = static_cast<std::size_t>(std::ceil(kernel_width)) + 2;
  t.index.resize(out_len * t.per_output);
  t.weight.resize(out_len * t.per_output);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double u = static_cast<double>(i + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const double left = std::floor(u - kernel_width / 2.0);
    double total = 0.0;
    for (std::size_t k = 0; k < t.per_output; ++k) {
      const double j = left + static_cast<double>(k);
      const double d = u - j;
      const double w = shrink ? scale * cubic(scale * d) : cubic(d);
      const long clamped = std::clamp(static_cast<long>(j), 1L, static_cast<long>(in_len));
      t.index[i * t.per_output + k] = static_cast<std::size_t>(clamped - 1);
      t.weight[i * t.per_output + k] = w;
      total += w;
    }
    for (std::size_t k = 0; k < t.per_output; ++k) t.weight[i * t.per_output + k] /= total;
  }
  return t;
}

void check_same_shape(const PlaneF& a, const PlaneF& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw DimensionError(std::string(what) + ": plane sizes differ (" + std::to_string(a.width) +
                         "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + ")");
  }
}

PlaneF cropped(const PlaneF& p, std::size_t crop) {
  if (2 * crop >= p.width || 2 * crop >= p.height) {
    throw DimensionError("border crop of " + std::to_string(crop) + " leaves no pixels");
  }
  PlaneF out(p.width - 2 * crop, p.height - 2 * crop);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) out.at(x, y) = p.at(x + crop, y + crop);
  }
  return out;
}

}  // namespace

ImageU8 from_planes(const std::array<PlaneF, 3>& rgb) {
  ImageU8 img(rgb[0].width, rgb[0].height, 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = quantize(rgb[c].at(x, y));
    }
  }
  return img;
}

PlaneF bicubic_resize_to(const PlaneF& plane, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw DimensionError("bicubic_resize: empty output");
  if (width == plane.width && height == plane.height) return plane;
  const Taps tx = taps_for(plane.width, width,
                           static_cast<double>(width) / static_cast<double>(plane.width));
  const Taps ty = taps_for(plane.height, height,
                           static_cast<double>(height) / static_cast<double>(plane.height));
  // Horizontal pass, then vertical.
  std::vector<double> tmp(width * plane.height);
  for (std::size_t y = 0; y < plane.height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < tx.per_output; ++k) {
        acc += tx.weight[x * tx.per_output + k] * plane.at(tx.index[x * tx.per_output + k], y);
      }
      tmp[y * width + x] = acc;
    }
  }
  PlaneF out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ty.per_output; ++k) {
        acc += ty.weight[y * ty.per_output + k] * tmp[ty.index[y * ty.per_output + k] * width + x];
      }
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

PlaneF bicubic_resize(const PlaneF& plane, double scale) {
  if (!(scale > 0.0)) throw ContractError("bicubic_resize: scale must be positive");
  const auto extent = [scale](std::size_t n) {
    // Guard against 0.5 * 2 style products landing a hair above an integer.
    const double v = static_cast<double>(n) * scale;
    return static_cast<std::size_t>(std::ceil(v - 1e-9));
  };
  return bicubic_resize_to(plane, extent(plane.width), extent(plane.height));
}

double psnr(const PlaneF& a, const PlaneF& b, std::size_t crop) {
  check_same_shape(a, b, "psnr");
  const PlaneF ca = cropped(a, crop), cb = cropped(b, crop);
  double se = 0.0;
  for (std::size_t i = 0; i < ca.values.size(); ++i) {
    const double d = static_cast<double>(ca.values[i]) - static_cast<double>(cb.values[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(ca.values.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const PlaneF& a, const PlaneF& b, std::size_t crop) {
  check_same_shape(a, b, "ssim");
  const PlaneF ca = cropped(a, crop), cb = cropped(b, crop);
  constexpr int kSize = 11;
  constexpr double kSigma = 1.5;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (ca.width < kSize || ca.height < kSize) {
    throw DimensionError("ssim: planes must be at least 11x11 after cropping");
  }
  std::array<double, kSize * kSize> window{};
  double total = 0.0;
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const double dy = y - kSize / 2, dx = x - kSize / 2;
      window[y * kSize + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      total += window[y * kSize + x];
    }
  }
  for (double& w : window) w /= total;

  const std::size_t ow = ca.width - kSize + 1, oh = ca.height - kSize + 1;
  double acc = 0.0;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
          const double w = window[y * kSize + x];
          const double va = ca.at(ox + x, oy + y), vb = cb.at(ox + x, oy + y);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  }
  return acc / static_cast<double>(ow * oh);
}

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& image) {
  const std::size_t c = image.channels, h = image.height, w = image.width;
  std::vector<T> data(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        data[(ch * h + y) * w + x] = static_cast<T>(image.at(x, y, ch) / 255.0);
      }
    }
  }
  return Tensor<T>::from({c, h, w}, std::move(data));
}

template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw DimensionError("tensor_to_image: expected [1|3, H, W], got " + shape_str(chw.shape()));
  }
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  ImageU8 img(w, h, c);
  const auto d = chw.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) img.at(x, y, ch) = quantize(d[(ch * h + y) * w + x]);
    }
  }
  return img;
}

template Tensor<float> image_to_tensor(const ImageU8&);
template Tensor<double> image_to_tensor(const ImageU8&);
template ImageU8 tensor_to_image(const Tensor<float>&);
template ImageU8 tensor_to_image(const Tensor<double>&);

}  // namespace grf
