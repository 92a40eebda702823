#include "seqtrojan/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <png.h>

#include "seqtrojan/error.hpp"

namespace seqtrojan::plot {

std::string Color::hex() const {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

Color palette(std::size_t i) {
  static constexpr std::array<Color, 6> colors = {
      Color{31, 119, 180}, Color{255, 127, 14}, Color{44, 160, 44},
      Color{214, 39, 40},  Color{148, 103, 189}, Color{140, 86, 75}};
  return colors[i % colors.size()];
}

void Canvas::line(double x1, double y1, double x2, double y2, Color c, double w) {
  shapes_.emplace_back(Line{x1, y1, x2, y2, c, w});
}
void Canvas::rect(double x, double y, double w, double h, Color fill, Color stroke) {
  shapes_.emplace_back(Rect{x, y, w, h, fill, stroke, true});
}
void Canvas::outline(double x, double y, double w, double h, Color stroke) {
  shapes_.emplace_back(Rect{x, y, w, h, kWhite, stroke, false});
}
void Canvas::circle(double cx, double cy, double r, Color fill) { shapes_.emplace_back(Circle{cx, cy, r, fill}); }
void Canvas::text(double x, double y, std::string s, double size, Anchor a, Color c) {
  shapes_.emplace_back(Text{x, y, std::move(s), size, a, c});
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// 5x7 bitmap glyphs, one byte per row, bit 4 is the leftmost column.
struct Glyph {
  char ch;
  std::array<std::uint8_t, 7> rows;
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}}, {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}}, {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}}, {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}}, {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}}, {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}}, {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}}, {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}}, {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}}, {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}}, {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}}, {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}}, {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
};

const Glyph* glyph_for(char ch) {
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const auto& g : kFont) {
    if (g.ch == ch) return &g;
  }
  return nullptr;
}

// UTF-8 "±" is drawn as '+' over '-'; other multi-byte characters are skipped.
std::vector<char> text_cells(const std::string& s) {
  std::vector<char> cells;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xB1) {
      cells.push_back('\x01');
      ++i;
    } else if (c < 0x80) {
      cells.push_back(static_cast<char>(c));
    }
  }
  return cells;
}

class Raster {
 public:
  Raster(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  void fill_rect(double x0, double y0, double x1, double y1, Color c) {
    const int xa = static_cast<int>(std::lround(std::min(x0, x1)));
    const int xb = static_cast<int>(std::lround(std::max(x0, x1)));
    const int ya = static_cast<int>(std::lround(std::min(y0, y1)));
    const int yb = static_cast<int>(std::lround(std::max(y0, y1)));
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) set(x, y, c);
    }
  }

  void disk(double cx, double cy, double r, Color c) {
    const int xa = static_cast<int>(std::floor(cx - r)), xb = static_cast<int>(std::ceil(cx + r));
    const int ya = static_cast<int>(std::floor(cy - r)), yb = static_cast<int>(std::ceil(cy + r));
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r + 0.25) set(x, y, c);
      }
    }
  }

  void line(double x1, double y1, double x2, double y2, double width, Color c) {
    const double len = std::hypot(x2 - x1, y2 - y1);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    const double r = std::max(0.0, (width - 1.0) / 2.0);
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double x = x1 + t * (x2 - x1), y = y1 + t * (y2 - y1);
      if (r == 0.0) {
        set(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)), c);
      } else {
        disk(x, y, r, c);
      }
    }
  }

  void text(const Text& t) {
    const auto cells = text_cells(t.text);
    const int scale = std::max(1, static_cast<int>(std::lround(t.size / 10.0)));
    const int advance = 6 * scale;
    const double width = static_cast<double>(cells.size()) * advance;
    double x = t.x;
    if (t.anchor == Anchor::Middle) x -= width / 2;
    if (t.anchor == Anchor::End) x -= width;
    const int top = static_cast<int>(std::lround(t.y)) - 7 * scale;
    int cx = static_cast<int>(std::lround(x));
    for (char ch : cells) {
      if (ch == '\x01') {
        draw_glyph(*glyph_for('+'), cx, top - scale, scale, t.color);
        draw_glyph(*glyph_for('_'), cx, top, scale, t.color);
      } else if (const Glyph* g = glyph_for(ch)) {
        draw_glyph(*g, cx, top, scale, t.color);
      }
      cx += advance;
    }
  }

  std::vector<std::uint8_t> take() { return std::move(px_); }

 private:
  void draw_glyph(const Glyph& g, int x0, int y0, int scale, Color c) {
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (!(g.rows[row] & (0x10 >> col))) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) set(x0 + col * scale + dx, y0 + row * scale + dy, c);
        }
      }
    }
  }

  int w_, h_;
  std::vector<std::uint8_t> px_;
};

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void flush_nothing(png_structp) {}

}  // namespace

std::string Canvas::to_svg() const {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width_) + "\" height=\"" +
                  std::to_string(height_) + "\" viewBox=\"0 0 " + std::to_string(width_) + " " +
                  std::to_string(height_) + "\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width_) + "\" height=\"" + std::to_string(height_) +
       "\" fill=\"#ffffff\"/>\n";
  for (const auto& shape : shapes_) {
    if (const auto* l = std::get_if<Line>(&shape)) {
      s += "<line x1=\"" + num(l->x1) + "\" y1=\"" + num(l->y1) + "\" x2=\"" + num(l->x2) + "\" y2=\"" + num(l->y2) +
           "\" stroke=\"" + l->color.hex() + "\" stroke-width=\"" + num(l->width) + "\"/>\n";
    } else if (const auto* r = std::get_if<Rect>(&shape)) {
      s += "<rect x=\"" + num(r->x) + "\" y=\"" + num(r->y) + "\" width=\"" + num(r->w) + "\" height=\"" +
           num(r->h) + "\" fill=\"" + (r->filled ? r->fill.hex() : std::string("none")) + "\" stroke=\"" +
           r->stroke.hex() + "\"/>\n";
    } else if (const auto* c = std::get_if<Circle>(&shape)) {
      s += "<circle cx=\"" + num(c->cx) + "\" cy=\"" + num(c->cy) + "\" r=\"" + num(c->r) + "\" fill=\"" +
           c->fill.hex() + "\"/>\n";
    } else if (const auto* t = std::get_if<Text>(&shape)) {
      const char* anchor = t->anchor == Anchor::Start ? "start" : t->anchor == Anchor::Middle ? "middle" : "end";
      s += "<text x=\"" + num(t->x) + "\" y=\"" + num(t->y) + "\" font-family=\"sans-serif\" font-size=\"" +
           num(t->size) + "\" text-anchor=\"" + anchor + "\" fill=\"" + t->color.hex() + "\">" +
           xml_escape(t->text) + "</text>\n";
    }
  }
  s += "</svg>\n";
  return s;
}

std::vector<std::uint8_t> Canvas::rasterize() const {
  Raster r(width_, height_);
  for (const auto& shape : shapes_) {
    if (const auto* l = std::get_if<Line>(&shape)) {
      r.line(l->x1, l->y1, l->x2, l->y2, l->width, l->color);
    } else if (const auto* rc = std::get_if<Rect>(&shape)) {
      if (rc->filled) r.fill_rect(rc->x, rc->y, rc->x + rc->w, rc->y + rc->h, rc->fill);
      r.line(rc->x, rc->y, rc->x + rc->w, rc->y, 1, rc->stroke);
      r.line(rc->x + rc->w, rc->y, rc->x + rc->w, rc->y + rc->h, 1, rc->stroke);
      r.line(rc->x + rc->w, rc->y + rc->h, rc->x, rc->y + rc->h, 1, rc->stroke);
      r.line(rc->x, rc->y + rc->h, rc->x, rc->y, 1, rc->stroke);
    } else if (const auto* c = std::get_if<Circle>(&shape)) {
      r.disk(c->cx, c->cy, c->r, c->fill);
    } else if (const auto* t = std::get_if<Text>(&shape)) {
      r.text(*t);
    }
  }
  return r.take();
}

std::string Canvas::to_png() const { return encode_png(width_, height_, rasterize()); }

std::string encode_png(int width, int height, std::span<const std::uint8_t> rgb) {
  if (width <= 0 || height <= 0 || rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw Error(ErrorKind::Input, "raster size does not match the image dimensions");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::Io, "cannot initialise the png writer");
  }
  std::string out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "png encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_nothing);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Ticks nice_ticks(double lo, double hi, int target) {
  if (!(hi > lo)) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  Ticks t;
  t.lo = std::floor(lo / step + 1e-9) * step;
  t.hi = std::ceil(hi / step - 1e-9) * step;
  for (double v = t.lo; v <= t.hi + step * 1e-6; v += step) t.values.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return t;
}

}  // namespace seqtrojan::plot
