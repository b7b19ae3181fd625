#include "chartlab/chartgen/raster.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <string>

#include "chartlab/util/error.hpp"

namespace chartlab::chartgen {
namespace {

constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kWhite{255, 255, 255};

struct GlyphRow {
  char c;
  std::array<std::uint8_t, 7> rows;
};

// clang-format off
constexpr GlyphRow kFont[] = {
  {' ', {0x00,0x00,0x00,0x00,0x00,0x00,0x00}},
  {'0', {0x0E,0x11,0x13,0x15,0x19,0x11,0x0E}},
  {'1', {0x04,0x0C,0x04,0x04,0x04,0x04,0x0E}},
  {'2', {0x0E,0x11,0x01,0x02,0x04,0x08,0x1F}},
  {'3', {0x1F,0x02,0x04,0x02,0x01,0x11,0x0E}},
  {'4', {0x02,0x06,0x0A,0x12,0x1F,0x02,0x02}},
  {'5', {0x1F,0x10,0x1E,0x01,0x01,0x11,0x0E}},
  {'6', {0x06,0x08,0x10,0x1E,0x11,0x11,0x0E}},
  {'7', {0x1F,0x01,0x02,0x04,0x08,0x08,0x08}},
  {'8', {0x0E,0x11,0x11,0x0E,0x11,0x11,0x0E}},
  {'9', {0x0E,0x11,0x11,0x0F,0x01,0x02,0x0C}},
  {'A', {0x0E,0x11,0x11,0x1F,0x11,0x11,0x11}},
  {'B', {0x1E,0x11,0x11,0x1E,0x11,0x11,0x1E}},
  {'C', {0x0E,0x11,0x10,0x10,0x10,0x11,0x0E}},
  {'D', {0x1C,0x12,0x11,0x11,0x11,0x12,0x1C}},
  {'E', {0x1F,0x10,0x10,0x1E,0x10,0x10,0x1F}},
  {'F', {0x1F,0x10,0x10,0x1E,0x10,0x10,0x10}},
  {'G', {0x0E,0x11,0x10,0x17,0x11,0x11,0x0F}},
  {'H', {0x11,0x11,0x11,0x1F,0x11,0x11,0x11}},
  {'I', {0x0E,0x04,0x04,0x04,0x04,0x04,0x0E}},
  {'J', {0x07,0x02,0x02,0x02,0x02,0x12,0x0C}},
  {'K', {0x11,0x12,0x14,0x18,0x14,0x12,0x11}},
  {'L', {0x10,0x10,0x10,0x10,0x10,0x10,0x1F}},
  {'M', {0x11,0x1B,0x15,0x15,0x11,0x11,0x11}},
  {'N', {0x11,0x11,0x19,0x15,0x13,0x11,0x11}},
  {'O', {0x0E,0x11,0x11,0x11,0x11,0x11,0x0E}},
  {'P', {0x1E,0x11,0x11,0x1E,0x10,0x10,0x10}},
  {'Q', {0x0E,0x11,0x11,0x11,0x15,0x12,0x0D}},
  {'R', {0x1E,0x11,0x11,0x1E,0x14,0x12,0x11}},
  {'S', {0x0F,0x10,0x10,0x0E,0x01,0x01,0x1E}},
  {'T', {0x1F,0x04,0x04,0x04,0x04,0x04,0x04}},
  {'U', {0x11,0x11,0x11,0x11,0x11,0x11,0x0E}},
  {'V', {0x11,0x11,0x11,0x11,0x11,0x0A,0x04}},
  {'W', {0x11,0x11,0x11,0x15,0x15,0x15,0x0A}},
  {'X', {0x11,0x11,0x0A,0x04,0x0A,0x11,0x11}},
  {'Y', {0x11,0x11,0x11,0x0A,0x04,0x04,0x04}},
  {'Z', {0x1F,0x01,0x02,0x04,0x08,0x10,0x1F}},
  {'.', {0x00,0x00,0x00,0x00,0x00,0x0C,0x0C}},
  {'-', {0x00,0x00,0x00,0x1F,0x00,0x00,0x00}},
  {'%', {0x18,0x19,0x02,0x04,0x08,0x13,0x03}},
  {'?', {0x0E,0x11,0x01,0x02,0x04,0x00,0x04}},
};
// clang-format on

void require_resolution(int resolution) {
  if (resolution != 64 && resolution != 128 && resolution != 224) {
    throw ContractError("render_chart: unsupported resolution " + std::to_string(resolution) +
                        " (expected 64, 128 or 224)");
  }
}

std::string tick_text(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) < 1e-9) return std::to_string(static_cast<long long>(r));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

int point_row(const ChartLayout& l, const ChartSpec& spec, double v) {
  const double frac = (v - spec.y_min) / (spec.y_max - spec.y_min);
  return l.plot.y1 - static_cast<int>(std::lround(frac * (l.plot.height() - 1)));
}

int category_center(const ChartLayout& l, std::size_t i) {
  return l.plot.x0 + static_cast<int>(i) * l.slot_width + l.slot_width / 2;
}

bool style_on(LineStyle style, int step, int scale) {
  const int k = step / scale;
  switch (style) {
    case LineStyle::solid: return true;
    case LineStyle::dashed: return k % 6 < 4;
    case LineStyle::dotted: return k % 2 == 0;
  }
  return true;
}

void stamp(RasterImage& img, int x, int y, int size, Rgb c, const Rect& clip) {
  for (int dy = 0; dy < size; ++dy) {
    for (int dx = 0; dx < size; ++dx) {
      const int px = x + dx;
      const int py = y + dy;
      if (px >= clip.x0 && px <= clip.x1 && py >= clip.y0 && py <= clip.y1) img.set(px, py, c);
    }
  }
}

// Bresenham with a style pattern that continues across segments via `step`.
void draw_segment(RasterImage& img, int x0, int y0, int x1, int y1, LineStyle style, int scale, Rgb c,
                  const Rect& clip, int& step) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int half = scale / 2;
  while (true) {
    if (style_on(style, step, scale)) stamp(img, x0 - half, y0 - half, scale, c, clip);
    ++step;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

RasterImage::RasterImage(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<std::size_t>(w * h * 3)) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill.r;
    pixels[i + 1] = fill.g;
    pixels[i + 2] = fill.b;
  }
}

Rgb RasterImage::get(int x, int y) const {
  const auto i = static_cast<std::size_t>((y * width + x) * 3);
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RasterImage::set(int x, int y, Rgb c) {
  if (!contains(x, y)) return;
  const auto i = static_cast<std::size_t>((y * width + x) * 3);
  pixels[i] = c.r;
  pixels[i + 1] = c.g;
  pixels[i + 2] = c.b;
}

void RasterImage::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::max(0, y0); y <= std::min(height - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(width - 1, x1); ++x) set(x, y, c);
  }
}

namespace font {

const std::uint8_t* glyph(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont) {
    if (g.c == u) return g.rows.data();
  }
  for (const auto& g : kFont) {
    if (g.c == '?') return g.rows.data();
  }
  return nullptr;
}

int text_width(std::string_view text, int scale) {
  if (text.empty()) return 0;
  return static_cast<int>(text.size()) * kAdvance * scale - scale;
}

void draw_text(RasterImage& img, int x, int y, std::string_view text, int scale, Rgb color) {
  for (char c : text) {
    const std::uint8_t* rows = glyph(c);
    for (int r = 0; r < kGlyphHeight; ++r) {
      for (int col = 0; col < kGlyphWidth; ++col) {
        if (rows[r] & (0x10 >> col)) img.fill_rect(x + col * scale, y + r * scale, x + (col + 1) * scale - 1,
                                                   y + (r + 1) * scale - 1, color);
      }
    }
    x += kAdvance * scale;
  }
}

}  // namespace font

ChartLayout compute_layout(const ChartSpec& spec, int resolution) {
  require_resolution(resolution);
  ChartLayout l;
  l.resolution = resolution;
  const int s = resolution / 64;
  l.scale = s;
  const int R = resolution;
  l.title_band = {0, s, R - 1, 8 * s};
  l.legend_band = {0, 10 * s, R - 1, 17 * s - 1};

  int label_w = 0;
  for (double f : {0.0, 0.5, 1.0}) {
    label_w = std::max(label_w, font::text_width(tick_text(spec.y_min + f * (spec.y_max - spec.y_min)), s));
  }
  const int axis_x = s + label_w + 2 * s;
  l.plot.x0 = axis_x + s;
  l.plot.x1 = R - 1 - 2 * s;
  l.plot.y0 = 19 * s;
  l.plot.y1 = R - 1 - 11 * s;

  const int n_cat = static_cast<int>(spec.categories.size());
  const int n_series = static_cast<int>(spec.series.size());
  if (n_cat < 1 || n_series < 1) throw ContractError("compute_layout: chart has no data");
  l.slot_width = l.plot.width() / n_cat;
  if (l.slot_width < 2) {
    throw ContractError("render_chart: resolution " + std::to_string(R) + " too small for " + std::to_string(n_cat) +
                        " categories");
  }
  if (spec.chart_type == ChartType::bar) {
    const int gap = std::max(1, l.slot_width / 5);
    l.bar_width = (l.slot_width - gap) / n_series;
    if (l.bar_width < 1) {
      throw ContractError("render_chart: resolution " + std::to_string(R) + " too small for " +
                          std::to_string(n_series) + " series x " + std::to_string(n_cat) + " categories");
    }
  }
  return l;
}

int value_to_height(const ChartLayout& layout, const ChartSpec& spec, double value) {
  const double frac = (value - spec.y_min) / (spec.y_max - spec.y_min);
  return static_cast<int>(std::lround(frac * layout.plot.height()));
}

RasterImage render_chart(const ChartSpec& spec, int resolution) {
  validate(spec);
  const ChartLayout l = compute_layout(spec, resolution);
  const int s = l.scale;
  const int R = resolution;
  RasterImage img(R, R, kWhite);
  const auto& pal = palette();

  // Title, centred and truncated to the band.
  {
    std::string title = upper(spec.title);
    while (!title.empty() && font::text_width(title, s) > R - 2 * s) title.pop_back();
    font::draw_text(img, (R - font::text_width(title, s)) / 2, l.title_band.y0, title, s, kBlack);
  }

  // Legend: swatch (or styled stroke) followed by the name, shortened until it fits.
  {
    const bool lines = spec.chart_type != ChartType::bar;
    const int swatch = lines ? 7 * s : 5 * s;
    for (std::size_t keep : {std::string::npos, std::size_t{3}, std::size_t{1}}) {
      if (s == 1 && keep != 1) continue;
      int total = 0;
      for (const auto& ser : spec.series) {
        total += swatch + s + font::text_width(upper(ser.name.substr(0, keep)), s) + 3 * s;
      }
      if (total > R - 2 * s && keep != 1) continue;
      int x = std::max(s, (R - total) / 2);
      const int ty = l.legend_band.y0;
      for (const auto& ser : spec.series) {
        const Rgb c = pal[static_cast<std::size_t>(ser.color_index)];
        const int mid = ty + 3 * s;
        if (lines) {
          int step = 0;
          draw_segment(img, x, mid, x + swatch - 1, mid, ser.line_style, s, c, l.legend_band, step);
        } else {
          img.fill_rect(x, mid - 2 * s, x + swatch - 1, mid + 3 * s - 1, c);
        }
        x += swatch + s;
        const std::string label = upper(ser.name.substr(0, keep));
        font::draw_text(img, x, ty, label, s, kBlack);
        x += font::text_width(label, s) + 3 * s;
      }
      break;
    }
  }

  // Axes.
  const int axis_x = l.plot.x0 - s;
  const int axis_y = l.plot.y1 + 1;
  img.fill_rect(axis_x, l.plot.y0, axis_x + s - 1, axis_y + s - 1, kBlack);
  img.fill_rect(axis_x, axis_y, l.plot.x1, axis_y + s - 1, kBlack);

  // Y ticks at min, middle and max.
  for (double f : {0.0, 0.5, 1.0}) {
    const double v = spec.y_min + f * (spec.y_max - spec.y_min);
    const int row = f == 0.0 ? axis_y : point_row(l, spec, v);
    img.fill_rect(axis_x - s, row, axis_x - 1, row + s - 1, kBlack);
    const std::string text = tick_text(v);
    const int ty = std::clamp(row - 3 * s, 0, R - font::kGlyphHeight * s);
    font::draw_text(img, axis_x - 2 * s - font::text_width(text, s), ty, text, s, kBlack);
  }

  // X ticks and category labels, trailing characters kept when space is short.
  const int chars_fit = (l.slot_width + s) / (font::kAdvance * s);
  for (std::size_t i = 0; i < spec.categories.size(); ++i) {
    const int cx = category_center(l, i);
    img.fill_rect(cx, axis_y + s, cx + s - 1, axis_y + 2 * s - 1, kBlack);
    if (chars_fit <= 0) continue;
    std::string label = spec.categories[i];
    if (static_cast<int>(label.size()) > chars_fit) label = label.substr(label.size() - static_cast<std::size_t>(chars_fit));
    font::draw_text(img, cx - font::text_width(label, s) / 2, axis_y + 3 * s, label, s, kBlack);
  }

  // Data marks.
  if (spec.chart_type == ChartType::bar) {
    const int n_series = static_cast<int>(spec.series.size());
    for (std::size_t i = 0; i < spec.categories.size(); ++i) {
      const int group_left = l.plot.x0 + static_cast<int>(i) * l.slot_width +
                             (l.slot_width - n_series * l.bar_width) / 2;
      for (int j = 0; j < n_series; ++j) {
        const Series& ser = spec.series[static_cast<std::size_t>(j)];
        const int h = value_to_height(l, spec, ser.values[i]);
        if (h <= 0) continue;
        const int x0 = group_left + j * l.bar_width;
        img.fill_rect(x0, l.plot.y1 - h + 1, x0 + l.bar_width - 1, l.plot.y1,
                      pal[static_cast<std::size_t>(ser.color_index)]);
      }
    }
  } else {
    for (const Series& ser : spec.series) {
      const Rgb c = pal[static_cast<std::size_t>(ser.color_index)];
      int step = 0;
      for (std::size_t i = 0; i + 1 < spec.categories.size(); ++i) {
        draw_segment(img, category_center(l, i), point_row(l, spec, ser.values[i]), category_center(l, i + 1),
                     point_row(l, spec, ser.values[i + 1]), ser.line_style, s, c, l.plot, step);
        --step;  // shared endpoint
      }
      if (spec.chart_type == ChartType::dotline) {
        for (std::size_t i = 0; i < spec.categories.size(); ++i) {
          stamp(img, category_center(l, i) - s, point_row(l, spec, ser.values[i]) - s, 2 * s + 1, c, l.plot);
        }
      }
    }
  }
  return img;
}

}  // namespace chartlab::chartgen
