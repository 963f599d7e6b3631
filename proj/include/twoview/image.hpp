#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace twoview {

// Interleaved 8-bit RGB image, row-major (H x W x 3).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  Image crop(int y0, int x0, int h, int w) const;

  bool operator==(const Image&) const = default;
};

// PNG I/O. Any PNG color type is converted to 8-bit RGB on read.
// Throws DataError naming the path on failure.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace twoview
