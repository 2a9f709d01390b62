#include "equicaps/grid.hpp"

namespace equicaps {

GridIndex rotate_index(std::size_t h, std::size_t w, GridIndex src, int k) {
  k = ((k % 4) + 4) % 4;
  for (int i = 0; i < k; ++i) {
    // (x, y) -> (-y, x) about the center.
    src = GridIndex{src.col, h - 1 - src.row};
    std::swap(h, w);
  }
  return src;
}

FeatureMap ImageGrid::to_feature_map() const {
  FeatureMap f(h_, w_, 1);
  f.data() = px_;
  return f;
}

std::size_t BlockGeometry::output_extent(std::size_t input_extent) const {
  if (size < 1 || stride < 1 || size < stride) {
    throw std::invalid_argument("BlockGeometry: need size >= stride >= 1");
  }
  if ((size - stride) % 2 != 0) {
    throw std::invalid_argument("BlockGeometry: size - stride must be even for centered blocks");
  }
  if (input_extent % static_cast<std::size_t>(stride) != 0) {
    throw std::invalid_argument("BlockGeometry: extent " + std::to_string(input_extent) +
                                " not divisible by stride " + std::to_string(stride));
  }
  return input_extent / static_cast<std::size_t>(stride);
}

ImageGrid rotate_quarter(const ImageGrid& img, int k) {
  const bool odd = (((k % 4) + 4) % 4) % 2 == 1;
  ImageGrid out(odd ? img.width() : img.height(), odd ? img.height() : img.width());
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      const GridIndex d = rotate_index(img.height(), img.width(), {r, c}, k);
      out.at(d.row, d.col) = img.at(r, c);
    }
  }
  return out;
}

FeatureMap rotate_quarter(const FeatureMap& f, int k) {
  const bool odd = (((k % 4) + 4) % 4) % 2 == 1;
  FeatureMap out(odd ? f.width() : f.height(), odd ? f.height() : f.width(), f.channels());
  for (std::size_t r = 0; r < f.height(); ++r) {
    for (std::size_t c = 0; c < f.width(); ++c) {
      const GridIndex d = rotate_index(f.height(), f.width(), {r, c}, k);
      for (std::size_t ch = 0; ch < f.channels(); ++ch) out.at(d.row, d.col, ch) = f.at(r, c, ch);
    }
  }
  return out;
}

CapsuleField rotate_quarter(const CapsuleField& field, int k) {
  const bool odd = (((k % 4) + 4) % 4) % 2 == 1;
  const Rot2 g = Rot2::quarter_turn(k);
  CapsuleField out(odd ? field.width() : field.height(), odd ? field.height() : field.width(),
                   field.channels());
  for (std::size_t r = 0; r < field.height(); ++r) {
    for (std::size_t c = 0; c < field.width(); ++c) {
      const GridIndex d = rotate_index(field.height(), field.width(), {r, c}, k);
      for (std::size_t ch = 0; ch < field.channels(); ++ch) {
        out.pose(d.row, d.col, ch) = compose(g, field.pose(r, c, ch));
        out.activation(d.row, d.col, ch) = field.activation(r, c, ch);
      }
    }
  }
  return out;
}

namespace {
bool shifted_source(std::size_t r, std::size_t c, int dr, int dc, std::size_t h, std::size_t w,
                    std::size_t& sr, std::size_t& sc) {
  const long rr = static_cast<long>(r) - dr;
  const long cc = static_cast<long>(c) - dc;
  if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) return false;
  sr = static_cast<std::size_t>(rr);
  sc = static_cast<std::size_t>(cc);
  return true;
}
}  // namespace

FeatureMap shift(const FeatureMap& f, int dr, int dc) {
  FeatureMap out(f.height(), f.width(), f.channels());
  for (std::size_t r = 0; r < f.height(); ++r) {
    for (std::size_t c = 0; c < f.width(); ++c) {
      std::size_t sr, sc;
      if (!shifted_source(r, c, dr, dc, f.height(), f.width(), sr, sc)) continue;
      for (std::size_t ch = 0; ch < f.channels(); ++ch) out.at(r, c, ch) = f.at(sr, sc, ch);
    }
  }
  return out;
}

CapsuleField shift(const CapsuleField& field, int dr, int dc) {
  CapsuleField out(field.height(), field.width(), field.channels());
  for (std::size_t r = 0; r < field.height(); ++r) {
    for (std::size_t c = 0; c < field.width(); ++c) {
      std::size_t sr, sc;
      if (!shifted_source(r, c, dr, dc, field.height(), field.width(), sr, sc)) continue;
      for (std::size_t ch = 0; ch < field.channels(); ++ch) {
        out.pose(r, c, ch) = field.pose(sr, sc, ch);
        out.activation(r, c, ch) = field.activation(sr, sc, ch);
      }
    }
  }
  return out;
}

}  // namespace equicaps
