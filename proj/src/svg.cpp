#include "ttv/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ttv/errors.hpp"

namespace ttv::svg {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 480;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 30;
constexpr int kMarginTop = 50;
constexpr int kMarginBottom = 60;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::ofstream open_svg(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight
      << "' font-family='sans-serif'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  return out;
}

void title_text(std::ofstream& out, const std::string& title) {
  out << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

void write_confusion_heatmap(const std::string& path, const std::string& title,
                             const std::array<std::array<double, kNumBands>, kNumBands>& cells) {
  auto out = open_svg(path);
  title_text(out, title);
  const int cell = 80;
  const int x0 = 140, y0 = 70;
  for (int r = 0; r < kNumBands; ++r) {
    for (int c = 0; c < kNumBands; ++c) {
      const double v = std::clamp(cells[r][c], 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      out << "<rect x='" << x0 + c * cell << "' y='" << y0 + r * cell << "' width='" << cell
          << "' height='" << cell << "' fill='rgb(" << shade << "," << shade << ",255)'"
          << " stroke='#888'/>\n";
      out << "<text x='" << x0 + c * cell + cell / 2 << "' y='" << y0 + r * cell + cell / 2 + 5
          << "' text-anchor='middle' font-size='14'>" << fmt(cells[r][c]) << "</text>\n";
    }
  }
  for (int i = 0; i < kNumBands; ++i) {
    const auto& name = band_name(static_cast<TravelTimeBand>(i));
    out << "<text x='" << x0 - 8 << "' y='" << y0 + i * cell + cell / 2 + 5
        << "' text-anchor='end' font-size='12'>" << name << "</text>\n";
    out << "<text x='" << x0 + i * cell + cell / 2 << "' y='" << y0 + kNumBands * cell + 18
        << "' text-anchor='middle' font-size='12'>" << name << "</text>\n";
  }
  out << "<text x='30' y='" << y0 + 2 * cell
      << "' font-size='12' transform='rotate(-90 30 " << y0 + 2 * cell << ")'>predicted</text>\n";
  out << "<text x='" << x0 + 2 * cell << "' y='" << y0 + kNumBands * cell + 44
      << "' text-anchor='middle' font-size='12'>true</text>\n";
  out << "</svg>\n";
}

namespace {

struct Scale {
  double lo = 0, hi = 1;
  double px0 = 0, px1 = 1;
  double operator()(double v) const {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return px0 + t * (px1 - px0);
  }
};

void axes(std::ofstream& out, const Scale& sx, const Scale& sy, const std::string& x_label,
          const std::string& y_label) {
  out << "<line x1='" << kMarginLeft << "' y1='" << kHeight - kMarginBottom << "' x2='"
      << kWidth - kMarginRight << "' y2='" << kHeight - kMarginBottom
      << "' stroke='black'/>\n";
  out << "<line x1='" << kMarginLeft << "' y1='" << kMarginTop << "' x2='" << kMarginLeft
      << "' y2='" << kHeight - kMarginBottom << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = sx.lo + (sx.hi - sx.lo) * i / 4.0;
    const double yv = sy.lo + (sy.hi - sy.lo) * i / 4.0;
    out << "<text x='" << sx(xv) << "' y='" << kHeight - kMarginBottom + 18
        << "' text-anchor='middle' font-size='11'>" << fmt(xv) << "</text>\n";
    out << "<text x='" << kMarginLeft - 6 << "' y='" << sy(yv) + 4
        << "' text-anchor='end' font-size='11'>" << fmt(yv) << "</text>\n";
  }
  out << "<text x='" << (kMarginLeft + kWidth - kMarginRight) / 2 << "' y='" << kHeight - 16
      << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
  out << "<text x='18' y='" << kHeight / 2 << "' font-size='12' transform='rotate(-90 18 "
      << kHeight / 2 << ")'>" << y_label << "</text>\n";
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  auto out = open_svg(path);
  title_text(out, title);
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      xlo = std::min(xlo, s.points[i].first);
      xhi = std::max(xhi, s.points[i].first);
      ylo = std::min(ylo, s.points[i].second);
      yhi = std::max(yhi, s.points[i].second);
      if (i < s.band.size()) {
        ylo = std::min(ylo, s.band[i].first);
        yhi = std::max(yhi, s.band[i].second);
      }
    }
  }
  if (xlo > xhi) {
    xlo = 0;
    xhi = 1;
    ylo = 0;
    yhi = 1;
  }
  if (yhi - ylo < 1e-9) {
    yhi += 0.05;
    ylo -= 0.05;
  }
  Scale sx{xlo, xhi, kMarginLeft, static_cast<double>(kWidth - kMarginRight)};
  Scale sy{ylo, yhi, static_cast<double>(kHeight - kMarginBottom), static_cast<double>(kMarginTop)};
  axes(out, sx, sy, x_label, y_label);
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 8];
    if (s.band.size() == s.points.size() && !s.points.empty()) {
      out << "<path d='M";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        out << sx(s.points[i].first) << ' ' << sy(s.band[i].first) << ' ';
      }
      for (std::size_t i = s.points.size(); i-- > 0;) {
        out << sx(s.points[i].first) << ' ' << sy(s.band[i].second) << ' ';
      }
      out << "Z' fill='" << color << "' opacity='0.15' stroke='none'/>\n";
    }
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (const auto& [x, y] : s.points) out << sx(x) << ',' << sy(y) << ' ';
    out << "'/>\n";
    out << "<text x='" << kWidth - kMarginRight - 4 << "' y='" << kMarginTop + 16 * (si + 1)
        << "' text-anchor='end' font-size='12' fill='" << color << "'>" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

void write_scatter(const std::string& path, const std::string& title, const std::string& x_label,
                   const std::string& y_label, const std::vector<ScatterGroup>& groups) {
  auto out = open_svg(path);
  title_text(out, title);
  double lo = 1e300, hi = -1e300;
  for (const auto& g : groups) {
    for (const auto& [x, y] : g.points) {
      lo = std::min({lo, x, y});
      hi = std::max({hi, x, y});
    }
  }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  Scale sx{lo, hi, kMarginLeft, static_cast<double>(kWidth - kMarginRight)};
  Scale sy{lo, hi, static_cast<double>(kHeight - kMarginBottom), static_cast<double>(kMarginTop)};
  axes(out, sx, sy, x_label, y_label);
  out << "<line x1='" << sx(lo) << "' y1='" << sy(lo) << "' x2='" << sx(hi) << "' y2='" << sy(hi)
      << "' stroke='#999' stroke-dasharray='4'/>\n";
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const char* color = kPalette[gi % 8];
    for (const auto& [x, y] : groups[gi].points) {
      out << "<circle cx='" << sx(x) << "' cy='" << sy(y) << "' r='2.5' fill='" << color
          << "' opacity='0.55'/>\n";
    }
    out << "<text x='" << kWidth - kMarginRight - 4 << "' y='" << kMarginTop + 16 * (gi + 1)
        << "' text-anchor='end' font-size='12' fill='" << color << "'>" << groups[gi].name
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace ttv::svg
