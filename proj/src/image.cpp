#include "ttv/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ttv/errors.hpp"

namespace ttv {

namespace {

std::uint8_t clip_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Reads one whitespace-delimited token from a PNM header, skipping comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

RasterFrame read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (next_token(in) != "P6") throw FormatError(path + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw FormatError(path + ": bad PPM header");
  }
  if (w <= 0 || h <= 0) throw FormatError(path + ": bad PPM dimensions");
  if (maxval != 255) throw FormatError(path + ": unsupported maxval " + std::to_string(maxval));
  RasterFrame f(w, h);
  in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(f.pixels.size())) {
    throw FormatError(path + ": truncated pixel data");
  }
  return f;
}

void write_ppm(const std::string& path, const RasterFrame& frame) {
  if (!frame.valid()) throw ArgumentError("write_ppm: invalid frame");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw IoError("write failed for " + path);
}

namespace {

// Bilinear sample with edge clamping; (x, y) in source pixel coordinates.
void sample_bilinear(const RasterFrame& src, double x, double y, std::uint8_t* out) {
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, src.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, src.height - 1);
  const int x1 = std::min(x0 + 1, src.width - 1);
  const int y1 = std::min(y0 + 1, src.height - 1);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    const double top = src.at(x0, y0, c) * (1 - fx) + src.at(x1, y0, c) * fx;
    const double bot = src.at(x0, y1, c) * (1 - fx) + src.at(x1, y1, c) * fx;
    out[c] = clip_byte(top * (1 - fy) + bot * fy);
  }
}

}  // namespace

RasterFrame resize_bilinear(const RasterFrame& src, int out_w, int out_h) {
  if (!src.valid()) throw ArgumentError("resize_bilinear: invalid frame");
  if (out_w <= 0 || out_h <= 0) throw ArgumentError("resize_bilinear: bad target size");
  if (out_w == src.width && out_h == src.height) return src;
  RasterFrame dst(out_w, out_h);
  dst.capture_ts = src.capture_ts;
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      sample_bilinear(src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, &dst.at(x, y, 0));
    }
  }
  return dst;
}

RasterFrame crop(const RasterFrame& src, int x0, int y0, int w, int h) {
  if (!src.valid()) throw ArgumentError("crop: invalid frame");
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > src.width || y0 + h > src.height) {
    throw ArgumentError("crop: rectangle out of bounds");
  }
  RasterFrame dst(w, h);
  dst.capture_ts = src.capture_ts;
  for (int y = 0; y < h; ++y) {
    const auto* s = &src.at(x0, y0 + y, 0);
    auto* d = &dst.at(0, y, 0);
    std::copy(s, s + static_cast<std::size_t>(w) * 3, d);
  }
  return dst;
}

RasterFrame rotate_deg(const RasterFrame& src, double degrees) {
  if (!src.valid()) throw ArgumentError("rotate_deg: invalid frame");
  RasterFrame dst(src.width, src.height);
  dst.capture_ts = src.capture_ts;
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      // Inverse map: destination pixel pulled from source.
      const double dx = x - cx, dy = y - cy;
      const double sxf = cs * dx + sn * dy + cx;
      const double syf = -sn * dx + cs * dy + cy;
      sample_bilinear(src, std::clamp(sxf, 0.0, src.width - 1.0),
                      std::clamp(syf, 0.0, src.height - 1.0), &dst.at(x, y, 0));
    }
  }
  return dst;
}

RasterFrame adjust_brightness(const RasterFrame& src, double factor) {
  if (!src.valid()) throw ArgumentError("adjust_brightness: invalid frame");
  RasterFrame dst = src;
  for (auto& v : dst.pixels) v = clip_byte(v * factor);
  return dst;
}

RasterFrame adjust_contrast(const RasterFrame& src, double factor) {
  if (!src.valid()) throw ArgumentError("adjust_contrast: invalid frame");
  double mean = 0;
  for (auto v : src.pixels) mean += v;
  mean /= static_cast<double>(src.pixels.size());
  RasterFrame dst = src;
  for (auto& v : dst.pixels) v = clip_byte((v - mean) * factor + mean);
  return dst;
}

namespace {

double luma_at(const RasterFrame& f, int x, int y) {
  return 0.299 * f.at(x, y, 0) + 0.587 * f.at(x, y, 1) + 0.114 * f.at(x, y, 2);
}

}  // namespace

double mean_luma(const RasterFrame& frame, int x0, int y0, int x1, int y1) {
  double sum = 0;
  long n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      sum += luma_at(frame, x, y);
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

double stddev_luma(const RasterFrame& frame, int x0, int y0, int x1, int y1) {
  const double m = mean_luma(frame, x0, y0, x1, y1);
  double ss = 0;
  long n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double d = luma_at(frame, x, y) - m;
      ss += d * d;
      ++n;
    }
  }
  return n ? std::sqrt(ss / n) : 0.0;
}

}  // namespace ttv
