#include "twoview/image.hpp"

#include <png.h>

#include <cstring>

#include "twoview/error.hpp"

namespace twoview {

Image Image::crop(int y0, int x0, int h, int w) const {
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* src = &pixels[(static_cast<std::size_t>(y0 + y) * width + x0) * 3];
    std::memcpy(&out.pixels[static_cast<std::size_t>(y) * w * 3], src, static_cast<std::size_t>(w) * 3);
  }
  return out;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError("cannot decode image '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(png.height), static_cast<int>(png.width));
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw DataError("cannot decode image '" + path.string() + "': " + message);
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write image '" + path.string() + "': " + png.message);
  }
}

}  // namespace twoview
