#include "fsce/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fsce {

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) {
    float v = img.pix[i];
    if (v < 0.f) v = 0.f;
    if (v > 1.f) v = 1.f;
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.f));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_pgm: unsupported header in " + path);
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("read_pgm: truncated data in " + path);
  GrayImage img(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) img.pix[i] = static_cast<float>(bytes[i]) / 255.f;
  return img;
}

}  // namespace fsce
