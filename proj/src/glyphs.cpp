#include "equicaps/glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "equicaps/rng.hpp"

namespace equicaps {

namespace {

struct Segment {
  Vec2 a;
  Vec2 b;
};

// Canonical strokes in units of the glyph half extent, y down.
std::vector<Segment> strokes(std::size_t shape) {
  switch (shape) {
    case 0: return {{{-1, -1}, {1, -1}}, {{0, -1}, {0, 1}}};
    case 1: return {{{-0.7, -1}, {-0.7, 1}}, {{-0.7, 1}, {0.9, 1}}};
    case 2: return {{{-1, 0}, {1, 0}}, {{0, -1}, {0, 1}}};
    case 3: return {{{0, -1}, {0, 1}}, {{0, -1}, {-0.7, -0.3}}, {{0, -1}, {0.7, -0.3}}};
    case 4: return {{{-0.8, -1}, {0, 1}}, {{0, 1}, {0.8, -1}}};
    case 5: return {{{-0.9, -1}, {0.9, -1}}, {{0.9, -1}, {-0.9, 1}}, {{-0.9, 1}, {0.9, 1}}};
    default: throw std::invalid_argument("glyph shape index " + std::to_string(shape) + " out of range");
  }
}

double segment_distance(Vec2 p, const Segment& s) {
  const double ex = s.b.x - s.a.x;
  const double ey = s.b.y - s.a.y;
  const double len2 = ex * ex + ey * ey;
  double t = len2 > 0.0 ? ((p.x - s.a.x) * ex + (p.y - s.a.y) * ey) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (s.a.x + t * ex), p.y - (s.a.y + t * ey));
}

constexpr double kHalfExtent = 3.0;

}  // namespace

std::string glyph_name(std::size_t shape) {
  static const char* names[kGlyphShapes] = {"T", "L", "plus", "arrow", "V", "Z"};
  if (shape >= kGlyphShapes) throw std::invalid_argument("glyph shape index out of range");
  return names[shape];
}

ImageGrid render_glyph(std::size_t shape, std::size_t size, const GlyphJitter& jitter) {
  const std::vector<Segment> segs = strokes(shape);
  const double extent = kHalfExtent * jitter.scale;
  const double center = (static_cast<double>(size) - 1.0) / 2.0;
  ImageGrid img(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const Vec2 p{static_cast<double>(c) - center - jitter.dx, static_cast<double>(r) - center - jitter.dy};
      double v = 0.0;
      for (const Segment& s : segs) {
        const Segment scaled{{s.a.x * extent, s.a.y * extent}, {s.b.x * extent, s.b.y * extent}};
        v = std::max(v, std::clamp(jitter.half_width + 0.5 - segment_distance(p, scaled), 0.0, 1.0));
      }
      img.at(r, c) = v;
    }
  }
  return img;
}

std::vector<GlyphSample> make_glyph_dataset(std::size_t count, std::size_t classes, std::size_t size,
                                            std::uint64_t seed) {
  if (classes < 2 || classes > kGlyphShapes) {
    throw std::invalid_argument("make_glyph_dataset: classes must be in [2, " + std::to_string(kGlyphShapes) +
                                "], got " + std::to_string(classes));
  }
  if (size < 8) throw std::invalid_argument("make_glyph_dataset: canvas must be at least 8 pixels");
  Rng rng(seed);
  std::vector<GlyphSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    GlyphJitter j;
    j.scale = rng.uniform(0.85, 1.05);
    j.dx = rng.uniform(-0.75, 0.75);
    j.dy = rng.uniform(-0.75, 0.75);
    j.half_width = rng.uniform(0.7, 1.1);
    GlyphSample s;
    s.label = i % classes;
    s.quarter = static_cast<int>(rng.below(4));
    s.image = rotate_quarter(render_glyph(s.label, size, j), s.quarter);
    out.push_back(std::move(s));
  }
  return out;
}

ImageGrid rotate_image(const ImageGrid& img, double radians) {
  const double turns = radians / (std::numbers::pi / 2.0);
  const double nearest = std::round(turns);
  if (std::abs(turns - nearest) * (std::numbers::pi / 2.0) <= 1e-12) {
    return rotate_quarter(img, static_cast<int>(std::fmod(nearest, 4.0)));
  }
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cs = std::cos(radians);
  const double sn = std::sin(radians);
  auto px = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return 0.0;
    return img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  ImageGrid out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c) - cx;
      const double y = static_cast<double>(r) - cy;
      // Inverse rotation gives the source position.
      const double sx = cs * x + sn * y + cx;
      const double sy = -sn * x + cs * y + cy;
      const double fx0 = std::floor(sx);
      const double fy0 = std::floor(sy);
      const double fx = sx - fx0;
      const double fy = sy - fy0;
      const long x0 = static_cast<long>(fx0);
      const long y0 = static_cast<long>(fy0);
      out.at(r, c) = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                     fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
    }
  }
  return out;
}

}  // namespace equicaps
