#include "zestdiff/image_io.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

namespace zestdiff {

Image8 make_image(int width, int height, int channels, std::uint8_t fill) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    throw std::invalid_argument("image: invalid dimensions");
  }
  Image8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<size_t>(width * height * channels), fill);
  return img;
}

namespace {

void write_pnm(const std::filesystem::path& path, const Image8& image, int channels) {
  if (image.channels != channels) throw std::invalid_argument("image: channel count does not match format");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  int v = -1;
  if (!(in >> v)) throw std::runtime_error("pnm: malformed header");
  return v;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image8& image) { write_pnm(path, image, 3); }
void write_pgm(const std::filesystem::path& path, const Image8& image) { write_pnm(path, image, 1); }

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw std::runtime_error(path.string() + ": not a binary PGM/PPM file");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path.string() + ": unsupported header");
  in.get();
  Image8 img = make_image(w, h, magic == "P6" ? 3 : 1);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error(path.string() + ": truncated payload");
  }
  return img;
}

Image8 upscale(const Image8& image, int factor) {
  if (factor < 1) throw std::invalid_argument("upscale: factor must be >= 1");
  Image8 out = make_image(image.width * factor, image.height * factor, image.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y / factor, x / factor, c);
    }
  }
  return out;
}

Image8 hstack(const std::vector<Image8>& images, int gap, std::uint8_t gap_value) {
  if (images.empty()) throw std::invalid_argument("hstack: no images");
  const int h = images[0].height;
  const int ch = images[0].channels;
  int w = 0;
  for (const auto& im : images) {
    if (im.height != h || im.channels != ch) throw std::invalid_argument("hstack: mismatched images");
    w += im.width;
  }
  w += gap * static_cast<int>(images.size() - 1);
  Image8 out = make_image(w, h, ch, gap_value);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < im.width; ++x) {
        for (int c = 0; c < ch; ++c) out.at(y, x0 + x, c) = im.at(y, x, c);
      }
    }
    x0 += im.width + gap;
  }
  return out;
}

}  // namespace zestdiff
