#pragma once

#include <cstdint>
#include <vector>

namespace dscm {

// Single-channel row-major image. Intensities are white-matter normalized
// (WM mean ~ 1.0); background is 0.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<size_t>(h) * w, fill) {}

  size_t size() const { return pixels.size(); }
  float& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
  bool empty() const { return pixels.empty(); }
};

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<size_t>(h) * w, 0) {}

  size_t size() const { return bits.size(); }
  bool at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool on = true) {
    bits[static_cast<size_t>(y) * width + x] = on ? 1 : 0;
  }
  size_t count() const {
    size_t n = 0;
    for (auto b : bits) n += (b != 0);
    return n;
  }
};

double mean_absolute_error(const Image& a, const Image& b);
double max_absolute_error(const Image& a, const Image& b);

}  // namespace dscm
