#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kad {

// Minimal binary PPM (P6) / PGM (P5) reader and writer, maxval 255.
// channels is 3 for PPM and 1 for PGM; pixels are row-major, interleaved.
struct ImageU8 {
  int channels = 0;
  int h = 0;
  int w = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int c, int y, int x) const {
    return pixels[(static_cast<size_t>(y) * w + x) * channels + c];
  }
  uint8_t& at(int c, int y, int x) {
    return pixels[(static_cast<size_t>(y) * w + x) * channels + c];
  }
};

void write_pnm(const std::string& path, const ImageU8& img);
ImageU8 read_pnm(const std::string& path);  // dispatches on the magic

}  // namespace kad
