#pragma once

#include <filesystem>
#include <vector>

namespace hcma {

/// RGB image, channel-planar (3 x side x side), values in [0,1].
struct Image {
  int side = 0;
  std::vector<float> data;

  Image() = default;
  explicit Image(int s) : side(s), data(3u * s * s, 0.0f) {}

  float& at(int c, int y, int x) { return data[(size_t(c) * side + y) * side + x]; }
  float at(int c, int y, int x) const { return data[(size_t(c) * side + y) * side + x]; }
};

/// Binary P6 portable pixmap, 8-bit.
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Axis-aligned crop in pixel coordinates, nearest-neighbor resized to out_side.
Image crop_resize_nearest(const Image& img, int px0, int py0, int px1, int py1, int out_side);

/// Nearest-neighbor resize of the whole image.
Image resize_nearest(const Image& img, int out_side);

}  // namespace hcma
