#pragma once

// Procedural glyph images for the toy classification task.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "equicaps/grid.hpp"

namespace equicaps {

inline constexpr std::size_t kGlyphShapes = 6;

// "T", "L", "plus", "arrow", "V", "Z".
std::string glyph_name(std::size_t shape);

struct GlyphJitter {
  double scale = 1.0;
  double dx = 0.0;
  double dy = 0.0;
  double half_width = 0.9;  // stroke half width in pixels
};

// Upright glyph on a size x size canvas, anti-aliased strokes in [0, 1].
ImageGrid render_glyph(std::size_t shape, std::size_t size, const GlyphJitter& jitter = {});

struct GlyphSample {
  ImageGrid image;
  std::size_t label = 0;
  int quarter = 0;  // quarter turns applied to the upright glyph
};

// Labels cycle through 0..classes-1; each sample gets random jitter and a
// random quarter-turn orientation.
std::vector<GlyphSample> make_glyph_dataset(std::size_t count, std::size_t classes, std::size_t size,
                                            std::uint64_t seed);

// Rotation by `radians` about the image center with bilinear resampling and
// zero fill. Multiples of pi/2 (within 1e-12) are exact permutations.
ImageGrid rotate_image(const ImageGrid& img, double radians);

}  // namespace equicaps
