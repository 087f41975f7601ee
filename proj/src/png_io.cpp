#include <png.h>

#include <cstring>
#include <string>

#include "grformer/errors.hpp"
#include "grformer/imaging.hpp"

namespace grf {

ImageU8 read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    if (msg.find("open") != std::string::npos || msg.find("No such") != std::string::npos) {
      throw IoError("cannot read '" + path + "': " + msg);
    }
    throw FormatError("'" + path + "' is not a valid PNG: " + msg);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 out(image.width, image.height, gray ? 1 : 3);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("'" + path + "' is not a valid PNG: " + msg);
  }
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DimensionError("write_png: only gray and RGB images are supported");
  }
  if (img.pixels.size() != img.width * img.height * img.channels) {
    throw DimensionError("write_png: pixel buffer does not match image size");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write '" + path + "': " + msg);
  }
}

}  // namespace grf
