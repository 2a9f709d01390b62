#pragma once

// Grid containers shared by the capsule and convolution paths, and the exact
// quarter-turn / integer-shift transformations used by the equivariance checks.
//
// Pixel coordinates are (x, y) = (column, row) with y pointing down. A rotation
// g acts on a grid about its center: the value at centered position p moves to
// g(p).

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "equicaps/group.hpp"

namespace equicaps {

struct GridIndex {
  std::size_t row = 0;
  std::size_t col = 0;
};

// Destination of cell (row, col) of an h x w grid after k quarter turns. The
// rotated grid has shape (w, h) for odd k.
GridIndex rotate_index(std::size_t h, std::size_t w, GridIndex src, int k);

// H x W x K scalar signal.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t k, double fill = 0.0)
      : h_(h), w_(w), k_(k), data_(h * w * k, fill) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return k_; }
  double& at(std::size_t r, std::size_t c, std::size_t ch) { return data_[(r * w_ + c) * k_ + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const { return data_[(r * w_ + c) * k_ + ch]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::size_t k_ = 0;
  std::vector<double> data_;
};

// Grid of capsules: `channels` (pose, activation) tuples per cell.
class CapsuleField {
 public:
  CapsuleField() = default;
  CapsuleField(std::size_t h, std::size_t w, std::size_t channels)
      : h_(h), w_(w), c_(channels), poses_(h * w * channels), acts_(h * w * channels, 0.0) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return c_; }
  std::size_t index(std::size_t r, std::size_t c, std::size_t ch) const { return (r * w_ + c) * c_ + ch; }
  Rot2& pose(std::size_t r, std::size_t c, std::size_t ch) { return poses_[index(r, c, ch)]; }
  const Rot2& pose(std::size_t r, std::size_t c, std::size_t ch) const { return poses_[index(r, c, ch)]; }
  double& activation(std::size_t r, std::size_t c, std::size_t ch) { return acts_[index(r, c, ch)]; }
  double activation(std::size_t r, std::size_t c, std::size_t ch) const { return acts_[index(r, c, ch)]; }
  const std::vector<Rot2>& poses() const { return poses_; }
  const std::vector<double>& activations() const { return acts_; }

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::size_t c_ = 0;
  std::vector<Rot2> poses_;
  std::vector<double> acts_;
};

// Single-channel image, pixels nominally in [0, 1].
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(std::size_t h, std::size_t w, double fill = 0.0) : h_(h), w_(w), px_(h * w, fill) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  double& at(std::size_t r, std::size_t c) { return px_[r * w_ + c]; }
  double at(std::size_t r, std::size_t c) const { return px_[r * w_ + c]; }
  const std::vector<double>& pixels() const { return px_; }
  std::vector<double>& pixels() { return px_; }

  FeatureMap to_feature_map() const;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<double> px_;
};

// Square receptive-field layout with "same"-style placement: output cell i
// covers input rows [i*stride - (size-stride)/2, +size).
struct BlockGeometry {
  int size = 2;
  int stride = 2;

  static BlockGeometry two_by_two() { return {2, 2}; }
  static BlockGeometry three_by_three() { return {3, 1}; }

  std::size_t output_extent(std::size_t input_extent) const;
  int origin(std::size_t out_index) const { return static_cast<int>(out_index) * stride - (size - stride) / 2; }
  std::size_t cells() const { return static_cast<std::size_t>(size * size); }
  // Offset of block cell (dr, dc) from the block center, in input pixels.
  Vec2 offset(int dr, int dc) const {
    const double half = (size - 1) / 2.0;
    return {dc - half, dr - half};
  }
};

// Exact quarter-turn rotations: positions permute, poses are left-composed
// with the rotation.
ImageGrid rotate_quarter(const ImageGrid& img, int k);
FeatureMap rotate_quarter(const FeatureMap& f, int k);
CapsuleField rotate_quarter(const CapsuleField& field, int k);

// Integer shifts with zero fill (dead capsules for fields).
FeatureMap shift(const FeatureMap& f, int dr, int dc);
CapsuleField shift(const CapsuleField& field, int dr, int dc);

}  // namespace equicaps
