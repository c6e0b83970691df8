#ifndef FSCE_IMAGE_HPP
#define FSCE_IMAGE_HPP

#include <string>
#include <vector>

namespace fsce {

// Single-channel image, row-major, values in [0,1].
struct GrayImage {
  int width = 0, height = 0;
  std::vector<float> pix;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), pix(static_cast<size_t>(w) * h, 0.f) {}
  float& at(int y, int x) { return pix[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return pix[static_cast<size_t>(y) * width + x]; }
};

// Binary PGM (P5, maxval 255). Quantizes to 8 bits on write.
void write_pgm(const GrayImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);

}  // namespace fsce

#endif  // FSCE_IMAGE_HPP
