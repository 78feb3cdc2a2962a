#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dscm {

struct Gray8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;
};

// Interleaved 8-bit RGB, for report figures.
struct Rgb8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // 3 per pixel
};

// 8-bit grayscale PNG. Errors are Error(kIo) naming the path.
void write_png(const std::string& path, const Gray8& image);
Gray8 read_png(const std::string& path);
std::vector<uint8_t> encode_png(const Gray8& image);
Gray8 decode_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png(const Rgb8& image);
void write_png(const std::string& path, const Rgb8& image);

}  // namespace dscm
