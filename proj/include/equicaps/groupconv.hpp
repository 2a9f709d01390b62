#pragma once

// Sparse evaluation of SO(2) x (R^2,+) group convolution at capsule poses:
// for every output cell the local input window is rotated by the cell's pose
// and correlated with a kernel; the rotation part is indexed sparsely by the
// poses, the translation part is evaluated densely.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "equicaps/grid.hpp"
#include "equicaps/group.hpp"
#include "equicaps/routing.hpp"

namespace equicaps {

// Taps at k x k integer offsets (k odd), applied at rotated continuous
// positions. taps[(o * in + i) * out + j].
struct ContinuousKernel {
  std::size_t size = 3;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<Vec2> offsets;
  std::vector<double> taps;

  static ContinuousKernel square(std::size_t size, std::size_t in_channels, std::size_t out_channels);
  // Single tap at the center offset mapping input channel i to output i.
  static ContinuousKernel delta(std::size_t size, std::size_t channels);

  std::size_t tap_count() const { return offsets.size() * in_channels * out_channels; }
  double& tap(std::size_t o, std::size_t i, std::size_t j) { return taps[(o * in_channels + i) * out_channels + j]; }
  double tap(std::size_t o, std::size_t i, std::size_t j) const { return taps[(o * in_channels + i) * out_channels + j]; }
  void validate() const;
};

struct SampleTap {
  std::size_t cell = 0;  // row * width + col
  double weight = 0.0;
};

// Bilinear weights for reading an h x w grid at center + displacement, with
// zero padding. Taps with zero weight or outside the grid are dropped. The
// integer part of `center` is split off before adding the displacement, so
// integer shifts of `center` shift the taps exactly.
struct SamplePoint {
  std::array<SampleTap, 4> taps{};
  int count = 0;
};
SamplePoint bilinear_point(std::size_t h, std::size_t w, Vec2 center, Vec2 displacement);

// g(offset), using exact coordinate permutation when g is a quarter turn.
Vec2 rotate_offset(const Rot2& g, Vec2 offset);

// Samples f at center + pose(offset) for each offset; |offsets| x K, row-major.
std::vector<double> warp_patch(const FeatureMap& f, Vec2 center, const Rot2& pose,
                               std::span<const Vec2> offsets);

// Center, in input pixel coordinates, of output cell (row, col) when an
// in_h x in_w grid is evaluated on an out_h x out_w grid.
Vec2 output_center(std::size_t row, std::size_t col, std::size_t out_h, std::size_t out_w,
                   std::size_t in_h, std::size_t in_w);

// Evaluates the convolution at every cell and capsule channel of `poses`.
// `kernels` holds one kernel shared by all channels or one per channel.
// Output: poses.height() x poses.width() x (poses.channels() * out_channels).
FeatureMap sparse_group_conv(const FeatureMap& f, const CapsuleField& poses,
                             std::span<const ContinuousKernel> kernels);
FeatureMap sparse_group_conv(const FeatureMap& f, const CapsuleField& poses,
                             const ContinuousKernel& kernel);

// Scales each capsule channel's block of conv_out by that capsule's activation.
FeatureMap modulate(const FeatureMap& conv_out, const CapsuleField& agreements);

// Weighted average of the block cells' features. `weights` holds geom.cells()
// entries per output cell, row-major over the output grid. Blocks whose
// weight sum is below 1e-12 produce zeros.
FeatureMap pool_by_agreement(const FeatureMap& f, BlockGeometry geom, std::span<const double> weights);

// Per-cell routing weight toward output capsule j, summed over the cell's
// input channels.
std::vector<double> block_cell_weights(const CapsuleOutput<Rot2>& routed, std::size_t cells,
                                       std::size_t channels, std::size_t j);

}  // namespace equicaps
