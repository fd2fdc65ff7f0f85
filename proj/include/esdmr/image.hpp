#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace esdmr {

/// Decoded raster: interleaved samples, 1 (gray) or 3 (RGB) channels,
/// 8- or 16-bit values held in uint16 (max_value tells which).
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;       // 1 or 3
  int max_value = 255;    // 255 or 65535
  std::vector<std::uint16_t> samples;
};

/// Reads a PNG (any color type; palettes and alpha are normalized away) or a
/// PNM (P2/P3/P5/P6) image, chosen by file magic.
ImageBuffer read_image(const std::string& path);

void write_png_gray8(const std::string& path, int width, int height,
                     const std::uint8_t* pixels);
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::uint8_t* pixels);

}  // namespace esdmr
