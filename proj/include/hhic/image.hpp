#pragma once

#include <string>
#include <vector>

namespace hhic {

// RGB image, row-major H x W x 3, channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(std::size_t(w) * h * 3, 0.0f) {}

  float& at(int y, int x, int c) { return pixels[(std::size_t(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(std::size_t(y) * width + x) * 3 + c]; }

  Image flipped_horizontally() const;

  friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit PNG I/O through libpng. Values are quantized to 1/255 on write.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

}  // namespace hhic
