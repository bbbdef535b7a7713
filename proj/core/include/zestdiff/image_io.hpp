#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace zestdiff {

/// 8-bit image, interleaved channels (1 = grey, 3 = RGB), row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

Image8 make_image(int width, int height, int channels, std::uint8_t fill = 0);

// Binary netpbm: P6 for RGB, P5 for grey.
void write_ppm(const std::filesystem::path& path, const Image8& image);
void write_pgm(const std::filesystem::path& path, const Image8& image);
Image8 read_pnm(const std::filesystem::path& path);

/// Nearest-neighbour upscale by an integer factor.
Image8 upscale(const Image8& image, int factor);
/// Images side by side with a `gap`-pixel separator; all must share height and channels.
Image8 hstack(const std::vector<Image8>& images, int gap = 1, std::uint8_t gap_value = 255);

}  // namespace zestdiff
