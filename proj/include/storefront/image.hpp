// 8-bit RGB raster with binary PPM (P6) IO, seam-aware patch extraction and
// box-average gray downsampling for the model featurizer.
#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "storefront/geometry.hpp"

namespace storefront {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB, row-major

  static Image filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
      img.pixels[i] = r;
      img.pixels[i + 1] = g;
      img.pixels[i + 2] = b;
    }
    return img;
  }

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  auto next_token = [&in, &path]() {
    // Skips whitespace and '#' comments per the PPM grammar.
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        while (in.get(c) && c != '\n') {
        }
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        tok.push_back(c);
        while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
        return tok;
      }
    }
    throw std::runtime_error("read_ppm: truncated header in " + path);
  };
  Image img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw std::runtime_error("read_ppm: unsupported dimensions or maxval in " + path);
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  }
  return img;
}

// Extracts the pixels of a crop from a panorama, wrapping x at the seam.
// The patch keeps the source resolution of the crop region.
inline Image extract_crop(const Image& pano, const CropSpec& crop) {
  const int cw = std::max(1, static_cast<int>(std::lround(crop.width * pano.width)));
  const int ch = std::max(1, static_cast<int>(std::lround(crop.height * pano.height)));
  const int x0 = static_cast<int>(std::lround(crop.x_offset * pano.width));
  const int y0 = static_cast<int>(std::lround(crop.y_offset * pano.height));
  Image patch;
  patch.width = cw;
  patch.height = ch;
  patch.pixels.resize(static_cast<std::size_t>(cw) * ch * 3);
  for (int y = 0; y < ch; ++y) {
    const int sy = std::min(pano.height - 1, std::max(0, y0 + y));
    for (int x = 0; x < cw; ++x) {
      int sx = (x0 + x) % pano.width;
      if (sx < 0) sx += pano.width;
      const std::uint8_t* src = pano.at(sx, sy);
      std::uint8_t* dst = patch.at(x, y);
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  }
  return patch;
}

// Box-averages an RGB patch down to a grid x grid gray image in [0, 1].
inline std::vector<double> gray_grid(const Image& patch, int grid) {
  if (grid <= 0) throw std::invalid_argument("gray_grid: grid must be positive");
  std::vector<double> out(static_cast<std::size_t>(grid) * grid, 0.0);
  for (int gy = 0; gy < grid; ++gy) {
    const int y0 = gy * patch.height / grid;
    const int y1 = std::max(y0 + 1, (gy + 1) * patch.height / grid);
    for (int gx = 0; gx < grid; ++gx) {
      const int x0 = gx * patch.width / grid;
      const int x1 = std::max(x0 + 1, (gx + 1) * patch.width / grid);
      double sum = 0.0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::uint8_t* p = patch.at(std::min(x, patch.width - 1),
                                           std::min(y, patch.height - 1));
          sum += (p[0] + p[1] + p[2]) / 3.0;
        }
      }
      out[static_cast<std::size_t>(gy) * grid + gx] =
          sum / (255.0 * (y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

// Draws a hollow rectangle (panorama frame, seam-aware) for overlay output.
inline void draw_box(Image& img, const Box& pano_box, std::uint8_t r, std::uint8_t g,
                     std::uint8_t b, int thickness = 2) {
  for (const Box& part : split_at_seam(pano_box)) {
    const int x0 = std::max(0, static_cast<int>(part.x_min * img.width));
    const int x1 = std::min(img.width - 1, static_cast<int>(part.x_max * img.width));
    const int y0 = std::max(0, static_cast<int>(part.y_min * img.height));
    const int y1 = std::min(img.height - 1, static_cast<int>(part.y_max * img.height));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const bool on_edge = x - x0 < thickness || x1 - x < thickness ||
                             y - y0 < thickness || y1 - y < thickness;
        if (!on_edge) continue;
        std::uint8_t* px = img.at(x, y);
        px[0] = r;
        px[1] = g;
        px[2] = b;
      }
    }
  }
}

}  // namespace storefront
