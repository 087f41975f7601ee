#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "grformer/tensor.hpp"

namespace grf {

// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(std::size_t w, std::size_t h, std::size_t c)
      : width(w), height(h), channels(c), pixels(w * h * c, 0) {}
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// Single floating-point channel, nominal range [0, 1].
struct PlaneF {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  PlaneF() = default;
  PlaneF(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), values(w * h, fill) {}
  float& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

// Reads gray, gray+alpha, RGB, RGBA or palette PNGs; alpha is dropped.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& image);

// Studio-swing BT.601 luma in [16/255, 235/255].
PlaneF rgb_to_y(const ImageU8& image);
PlaneF rgb_to_y(const std::array<PlaneF, 3>& rgb);

std::array<PlaneF, 3> to_planes(const ImageU8& image);
ImageU8 from_planes(const std::array<PlaneF, 3>& rgb);

// Cubic convolution (a = -0.5) with edge replication; when downscaling the
// kernel is widened by 1/scale to antialias. Output extent is ceil(in * scale).
PlaneF bicubic_resize(const PlaneF& plane, double scale);
PlaneF bicubic_resize_to(const PlaneF& plane, std::size_t width, std::size_t height);

// 10 log10(1 / MSE) after removing `crop` pixels from every border.
// Identical inputs give +infinity.
double psnr(const PlaneF& a, const PlaneF& b, std::size_t crop = 0);
// Mean SSIM over the valid region of an 11x11, sigma 1.5 Gaussian window,
// K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim(const PlaneF& a, const PlaneF& b, std::size_t crop = 0);

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& image);
// Clamps to [0, 1] and rounds to the nearest 8-bit level.
template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& chw);

}  // namespace grf
