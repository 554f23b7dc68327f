#include "hcma/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hcma {

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P6\n" << img.side << " " << img.side << "\n255\n";
  std::vector<unsigned char> row(3u * img.side);
  for (int y = 0; y < img.side; ++y) {
    for (int x = 0; x < img.side; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[3 * x + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  if (magic != "P6" || w != h || maxv != 255)
    throw std::runtime_error("unsupported pixmap: " + path.string());
  in.get();  // single whitespace after header
  Image img(w);
  std::vector<unsigned char> row(3u * w);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[3 * x + c] / 255.0f;
  }
  if (!in) throw std::runtime_error("truncated pixmap: " + path.string());
  return img;
}

Image crop_resize_nearest(const Image& img, int px0, int py0, int px1, int py1, int out_side) {
  if (px1 - px0 < 1 || py1 - py0 < 1)
    throw std::runtime_error("degenerate crop: box smaller than one pixel");
  Image out(out_side);
  const int cw = px1 - px0, ch = py1 - py0;
  for (int y = 0; y < out_side; ++y) {
    int sy = py0 + static_cast<int>((y + 0.5) * ch / out_side);
    sy = std::clamp(sy, py0, py1 - 1);
    for (int x = 0; x < out_side; ++x) {
      int sx = px0 + static_cast<int>((x + 0.5) * cw / out_side);
      sx = std::clamp(sx, px0, px1 - 1);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = img.at(c, sy, sx);
    }
  }
  return out;
}

Image resize_nearest(const Image& img, int out_side) {
  return crop_resize_nearest(img, 0, 0, img.side, img.side, out_side);
}

}  // namespace hcma
