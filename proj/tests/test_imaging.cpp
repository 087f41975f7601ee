#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "grformer/errors.hpp"
#include "grformer/imaging.hpp"
#include "grformer/rng.hpp"

using namespace grf;
namespace fs = std::filesystem;

namespace {

PlaneF random_plane(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  PlaneF p(w, h);
  for (auto& v : p.values) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return p;
}

ImageU8 solid(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageU8 img(w, h, 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  }
  return img;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "grformer_test_imaging";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Luma, StudioSwingEndpoints) {
  EXPECT_NEAR(rgb_to_y(solid(2, 2, 0, 0, 0)).at(0, 0), 16.0 / 255.0, 1e-6);
  EXPECT_NEAR(rgb_to_y(solid(2, 2, 255, 255, 255)).at(1, 1), 235.0 / 255.0, 1e-6);
}

TEST(Luma, MonotoneInGray) {
  float prev = -1.0f;
  for (int g = 0; g < 256; ++g) {
    const auto v = static_cast<std::uint8_t>(g);
    const float y = rgb_to_y(solid(1, 1, v, v, v)).at(0, 0);
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(Luma, GrayImageMatchesReplicatedRgb) {
  ImageU8 gray(3, 2, 1);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = static_cast<std::uint8_t>(40 * i);
  ImageU8 rgb(3, 2, 3);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    for (int c = 0; c < 3; ++c) rgb.pixels[3 * i + c] = gray.pixels[i];
  }
  EXPECT_EQ(rgb_to_y(gray).values, rgb_to_y(rgb).values);
}

TEST(Planes, RoundTripIsLossless) {
  ImageU8 img(5, 4, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  EXPECT_EQ(from_planes(to_planes(img)).pixels, img.pixels);
}

TEST(Planes, QuantizationClamps) {
  std::array<PlaneF, 3> p{PlaneF(1, 1, -0.2f), PlaneF(1, 1, 1.7f), PlaneF(1, 1, 0.5f)};
  const ImageU8 img = from_planes(p);
  EXPECT_EQ(img.at(0, 0, 0), 0);
  EXPECT_EQ(img.at(0, 0, 1), 255);
  EXPECT_EQ(img.at(0, 0, 2), 128);
}

TEST(Bicubic, ConstantStaysConstant) {
  const PlaneF p(13, 9, 0.3f);
  for (double s : {0.25, 0.5, 1.0 / 3.0, 2.0, 3.0, 4.0}) {
    const PlaneF r = bicubic_resize(p, s);
    for (float v : r.values) EXPECT_NEAR(v, 0.3f, 1e-6) << "scale " << s;
  }
}

TEST(Bicubic, OutputExtent) {
  const PlaneF p(10, 7);
  const PlaneF up = bicubic_resize(p, 4.0);
  EXPECT_EQ(up.width, 40u);
  EXPECT_EQ(up.height, 28u);
  const PlaneF down = bicubic_resize(PlaneF(48, 36), 0.25);
  EXPECT_EQ(down.width, 12u);
  EXPECT_EQ(down.height, 9u);
  const PlaneF odd = bicubic_resize(PlaneF(10, 7), 0.5);
  EXPECT_EQ(odd.width, 5u);
  EXPECT_EQ(odd.height, 4u);
}

TEST(Bicubic, UnitScaleIsBitExact) {
  const PlaneF p = random_plane(11, 6, 3);
  EXPECT_EQ(bicubic_resize(p, 1.0).values, p.values);
}

TEST(Bicubic, DownscaledRampIsRampAwayFromBorders) {
  PlaneF p(64, 8);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) p.at(x, y) = 0.01f * static_cast<float>(x);
  }
  const PlaneF r = bicubic_resize(p, 0.5);
  // Output pixel i sits at source coordinate 2i + 0.5.
  for (std::size_t i = 3; i + 3 < r.width; ++i) {
    EXPECT_NEAR(r.at(i, 2), 0.01 * (2.0 * static_cast<double>(i) + 0.5), 1e-5) << i;
  }
}

TEST(Bicubic, UpscaledRampIsRampAwayFromBorders) {
  PlaneF p(16, 4);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) p.at(x, y) = 0.05f * static_cast<float>(x);
  }
  const PlaneF r = bicubic_resize(p, 4.0);
  // Output pixel i sits at source coordinate (i + 0.5) / 4 - 0.5.
  for (std::size_t i = 8; i + 8 < r.width; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / 4.0 - 0.5;
    EXPECT_NEAR(r.at(i, 5), 0.05 * u, 1e-5) << i;
  }
}

TEST(Bicubic, ResizeToArbitraryShape) {
  const PlaneF r = bicubic_resize_to(random_plane(9, 9, 1), 5, 13);
  EXPECT_EQ(r.width, 5u);
  EXPECT_EQ(r.height, 13u);
}

TEST(Psnr, IdenticalIsInfinite) {
  const PlaneF p = random_plane(8, 8, 1);
  EXPECT_TRUE(std::isinf(psnr(p, p)));
  EXPECT_GT(psnr(p, p), 0.0);
}

TEST(Psnr, ConstantOffset) {
  const PlaneF a(10, 10, 0.3f);
  const PlaneF b(10, 10, 0.3f + 16.0f / 255.0f);
  EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0 / 16.0), 1e-3);
  EXPECT_NEAR(psnr(a, b), 24.048, 1e-3);
}

TEST(Psnr, SymmetricAndCropped) {
  const PlaneF a = random_plane(12, 10, 1);
  const PlaneF b = random_plane(12, 10, 2);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  PlaneF c = a;
  c.at(0, 0) = 1.0f - c.at(0, 0);
  EXPECT_TRUE(std::isinf(psnr(a, c, 1)));
  EXPECT_FALSE(std::isinf(psnr(a, c, 0)));
}

TEST(Psnr, MonotoneInNoise) {
  const PlaneF a(16, 16, 0.5f);
  double prev = std::numeric_limits<double>::infinity();
  for (float amp : {0.01f, 0.02f, 0.05f, 0.1f}) {
    PlaneF b = a;
    for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] += (i % 2 ? amp : -amp);
    const double v = psnr(a, b);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Psnr, ShapeErrors) {
  EXPECT_THROW(psnr(PlaneF(4, 4), PlaneF(4, 5)), DimensionError);
  EXPECT_THROW(psnr(PlaneF(4, 4), PlaneF(4, 4), 2), DimensionError);
}

TEST(Ssim, IdenticalIsOne) {
  const PlaneF p = random_plane(20, 17, 4);
  EXPECT_EQ(ssim(p, p), 1.0);
}

TEST(Ssim, InvertedIsLow) {
  const PlaneF a = random_plane(24, 24, 5);
  PlaneF b = a;
  for (auto& v : b.values) v = 1.0f - v;
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, ConstantsMatchLuminanceTerm) {
  const double x = 0.2, y = 0.6, c1 = 0.01 * 0.01;
  const double expected = (2 * x * y + c1) / (x * x + y * y + c1);
  EXPECT_NEAR(ssim(PlaneF(16, 16, 0.2f), PlaneF(16, 16, 0.6f)), expected, 1e-5);
}

TEST(Ssim, FlipInvariant) {
  const PlaneF a = random_plane(18, 15, 6);
  PlaneF b = a;
  for (auto& v : b.values) v = std::clamp(v + 0.1f * (v - 0.5f), 0.0f, 1.0f);
  const auto flip = [](const PlaneF& p) {
    PlaneF f(p.width, p.height);
    for (std::size_t y = 0; y < p.height; ++y) {
      for (std::size_t x = 0; x < p.width; ++x) f.at(p.width - 1 - x, y) = p.at(x, y);
    }
    return f;
  };
  EXPECT_NEAR(ssim(a, b), ssim(flip(a), flip(b)), 1e-6);
  EXPECT_NEAR(psnr(a, b), psnr(flip(a), flip(b)), 1e-9);
}

TEST(Ssim, TooSmallThrows) {
  EXPECT_THROW(ssim(PlaneF(10, 20), PlaneF(10, 20)), DimensionError);
  EXPECT_THROW(ssim(PlaneF(20, 20), PlaneF(20, 20), 5), DimensionError);
}

TEST(TensorConversion, RoundTrip) {
  ImageU8 img(4, 3, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
  const Tensor<float> t = image_to_tensor<float>(img);
  EXPECT_EQ(t.shape(), (Shape{3, 3, 4}));
  EXPECT_NEAR(t.at({1, 2, 3}), img.at(3, 2, 1) / 255.0f, 1e-7);
  EXPECT_EQ(tensor_to_image(t).pixels, img.pixels);
  EXPECT_EQ(tensor_to_image(image_to_tensor<double>(img)).pixels, img.pixels);
}

TEST(Png, RoundTripRgbAndGray) {
  ImageU8 rgb(7, 5, 3);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 11);
  const fs::path a = temp_file("rgb.png");
  write_png(a.string(), rgb);
  const ImageU8 r = read_png(a.string());
  EXPECT_EQ(r.width, 7u);
  EXPECT_EQ(r.height, 5u);
  EXPECT_EQ(r.channels, 3u);
  EXPECT_EQ(r.pixels, rgb.pixels);

  ImageU8 gray(3, 4, 1);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = static_cast<std::uint8_t>(i * 20);
  const fs::path b = temp_file("gray.png");
  write_png(b.string(), gray);
  const ImageU8 g = read_png(b.string());
  EXPECT_EQ(g.channels, 1u);
  EXPECT_EQ(g.pixels, gray.pixels);
}

TEST(Png, ReadErrors) {
  EXPECT_THROW(read_png(temp_file("does_not_exist.png").string()), IoError);
  const fs::path junk = temp_file("junk.png");
  std::ofstream(junk) << "this is not a png file at all";
  EXPECT_THROW(read_png(junk.string()), FormatError);
}

TEST(Png, WriteRejectsBadBuffers) {
  ImageU8 img(2, 2, 3);
  img.pixels.pop_back();
  EXPECT_THROW(write_png(temp_file("bad.png").string(), img), DimensionError);
  EXPECT_THROW(write_png(temp_file("bad.png").string(), ImageU8(2, 2, 2)), DimensionError);
}
