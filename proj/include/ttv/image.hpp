#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ttv {

// 8-bit RGB raster, row-major, channels interleaved.
struct RasterFrame {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
  std::int64_t capture_ts = 0;

  RasterFrame() = default;
  RasterFrame(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const std::uint8_t& at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool valid() const {
    return width > 0 && height > 0 && channels == 3 &&
           pixels.size() == static_cast<std::size_t>(width) * height * channels;
  }
};

// Binary PPM (P6, maxval 255).
RasterFrame read_ppm(const std::string& path);
void write_ppm(const std::string& path, const RasterFrame& frame);

RasterFrame resize_bilinear(const RasterFrame& src, int out_w, int out_h);
RasterFrame crop(const RasterFrame& src, int x0, int y0, int w, int h);

// Rotation about the frame center; exposed corners sample the nearest edge
// pixel rather than a fill color.
RasterFrame rotate_deg(const RasterFrame& src, double degrees);

// factor 1.0 = identity; values clipped to [0, 255].
RasterFrame adjust_brightness(const RasterFrame& src, double factor);
// Contrast scales deviations around the frame's global mean.
RasterFrame adjust_contrast(const RasterFrame& src, double factor);

// Rec.601 luma statistics over a pixel rectangle [x0, x1) x [y0, y1).
double mean_luma(const RasterFrame& frame, int x0, int y0, int x1, int y1);
double stddev_luma(const RasterFrame& frame, int x0, int y0, int x1, int y1);

}  // namespace ttv
