#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "chartlab/chartgen/chart_spec.hpp"

namespace chartlab::chartgen {

/// 8-bit RGB image, row-major, three interleaved channels.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RasterImage() = default;
  RasterImage(int w, int h, Rgb fill = {255, 255, 255});

  Rgb get(int x, int y) const;
  void set(int x, int y, Rgb c);
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);  ///< inclusive bounds, clipped

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  ///< inclusive
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
};

/// Pixel geometry shared by the renderer and by tests that measure rasters.
struct ChartLayout {
  int resolution = 0;
  int scale = 1;  ///< font and stroke multiplier
  Rect title_band;
  Rect legend_band;
  Rect plot;  ///< data area; axes are drawn just outside it
  int slot_width = 0;  ///< horizontal space per category
  int bar_width = 0;   ///< bar charts only
};

ChartLayout compute_layout(const ChartSpec& spec, int resolution);

/// Pixel height of a bar for `value` (0 at y_min, plot height at y_max).
int value_to_height(const ChartLayout& layout, const ChartSpec& spec, double value);

/// Rasterizes `spec`; deterministic for a given (spec, resolution).
/// Throws ContractError if the resolution is unsupported or too small for the layout.
RasterImage render_chart(const ChartSpec& spec, int resolution);

namespace font {
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kAdvance = 6;
/// Row bitmaps (bit 4 = leftmost column); lowercase renders as uppercase.
const std::uint8_t* glyph(char c);
int text_width(std::string_view text, int scale);
void draw_text(RasterImage& img, int x, int y, std::string_view text, int scale, Rgb color);
}  // namespace font

void write_png(const std::filesystem::path& path, const RasterImage& img);
RasterImage read_png(const std::filesystem::path& path);
/// Encoded PNG bytes (used for digests without touching the filesystem).
std::vector<std::uint8_t> encode_png(const RasterImage& img);

}  // namespace chartlab::chartgen
