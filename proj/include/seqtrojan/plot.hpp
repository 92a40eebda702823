#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace seqtrojan::plot {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  std::string hex() const;
};

inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kWhite{255, 255, 255};
inline constexpr Color kGrey{160, 160, 160};
inline constexpr Color kLightGrey{225, 225, 225};
// Series palette, cycled.
Color palette(std::size_t i);

enum class Anchor { Start, Middle, End };

struct Line { double x1, y1, x2, y2; Color color; double width; };
struct Rect { double x, y, w, h; Color fill; Color stroke; bool filled; };
struct Circle { double cx, cy, r; Color fill; };
struct Text { double x, y; std::string text; double size; Anchor anchor; Color color; };

using Shape = std::variant<Line, Rect, Circle, Text>;

// Display list rendered identically to SVG and to an RGB raster.
class Canvas {
 public:
  Canvas(int width, int height) : width_(width), height_(height) {}

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<Shape>& shapes() const { return shapes_; }

  void line(double x1, double y1, double x2, double y2, Color c = kBlack, double w = 1.0);
  void rect(double x, double y, double w, double h, Color fill, Color stroke = kBlack);
  void outline(double x, double y, double w, double h, Color stroke = kBlack);
  void circle(double cx, double cy, double r, Color fill);
  void text(double x, double y, std::string s, double size = 12, Anchor a = Anchor::Start, Color c = kBlack);

  std::string to_svg() const;
  // Row-major RGB, 3 bytes per pixel.
  std::vector<std::uint8_t> rasterize() const;
  std::string to_png() const;

 private:
  int width_;
  int height_;
  std::vector<Shape> shapes_;
};

std::string encode_png(int width, int height, std::span<const std::uint8_t> rgb);

// Axis mapping value -> pixel.
struct Scale {
  double v0, v1, p0, p1;
  double operator()(double v) const { return v1 == v0 ? (p0 + p1) / 2 : p0 + (v - v0) * (p1 - p0) / (v1 - v0); }
};

// Rounded lower/upper bounds and tick values for a data range.
struct Ticks {
  double lo, hi;
  std::vector<double> values;
};
Ticks nice_ticks(double lo, double hi, int target = 5);

}  // namespace seqtrojan::plot
