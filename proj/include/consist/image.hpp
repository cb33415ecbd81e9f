#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace consist {

// Small RGB image, values in [0,1], row-major, interleaved channels.
struct Image {
  std::size_t width = 16;
  std::size_t height = 16;
  std::vector<double> pixels;  // width*height*3

  Image() : pixels(16 * 16 * 3, 0.0) {}
  Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0.0) {}

  std::size_t pixel_dim() const { return width * height * 3; }

  double& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  void validate() const {
    if (pixels.size() != pixel_dim()) throw std::invalid_argument("Image: pixel buffer size mismatch");
    for (double v : pixels)
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("Image: pixel value outside [0,1]");
  }
};

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  img.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path.string());
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    row[i] = static_cast<unsigned char>(std::lround(img.pixels[i] * 255.0));
  f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  if (!f) throw std::runtime_error("write_ppm: short write to " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw std::runtime_error("read_ppm: unsupported format in " + path.string());
  f.get();  // single whitespace after header
  Image img(w, h);
  std::vector<unsigned char> raw(w * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("read_ppm: truncated file " + path.string());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

// Latent binary format: 8-byte little-endian dimension header, then
// float64 little-endian values.
inline void write_latent(const std::vector<double>& z, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_latent: cannot open " + path.string());
  std::uint64_t dim = z.size();
  f.write(reinterpret_cast<const char*>(&dim), 8);
  f.write(reinterpret_cast<const char*>(z.data()), static_cast<std::streamsize>(z.size() * sizeof(double)));
}

inline std::vector<double> read_latent(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_latent: cannot open " + path.string());
  std::uint64_t dim = 0;
  f.read(reinterpret_cast<char*>(&dim), 8);
  std::vector<double> z(dim);
  f.read(reinterpret_cast<char*>(z.data()), static_cast<std::streamsize>(dim * sizeof(double)));
  if (!f) throw std::runtime_error("read_latent: truncated file " + path.string());
  return z;
}

}  // namespace consist
