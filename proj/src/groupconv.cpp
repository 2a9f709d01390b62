#include "equicaps/groupconv.hpp"

#include <cmath>
#include <string>

namespace equicaps {

ContinuousKernel ContinuousKernel::square(std::size_t size, std::size_t in_channels,
                                          std::size_t out_channels) {
  ContinuousKernel k;
  k.size = size;
  k.in_channels = in_channels;
  k.out_channels = out_channels;
  const double half = (static_cast<double>(size) - 1.0) / 2.0;
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      k.offsets.push_back({static_cast<double>(c) - half, static_cast<double>(r) - half});
    }
  }
  k.taps.assign(k.tap_count(), 0.0);
  k.validate();
  return k;
}

ContinuousKernel ContinuousKernel::delta(std::size_t size, std::size_t channels) {
  ContinuousKernel k = square(size, channels, channels);
  const std::size_t center = k.offsets.size() / 2;
  for (std::size_t i = 0; i < channels; ++i) k.tap(center, i, i) = 1.0;
  return k;
}

void ContinuousKernel::validate() const {
  if (size % 2 == 0) throw std::invalid_argument("ContinuousKernel: size must be odd");
  if (offsets.size() != size * size) throw ShapeError("ContinuousKernel: expected size^2 offsets");
  if (taps.size() != tap_count()) throw ShapeError("ContinuousKernel: tap array has wrong length");
  for (std::size_t o = 0; o < offsets.size(); ++o) {
    const Vec2 mirror = offsets[offsets.size() - 1 - o];
    if (mirror.x != -offsets[o].x || mirror.y != -offsets[o].y) {
      throw std::invalid_argument("ContinuousKernel: offsets not symmetric about the origin");
    }
  }
}

SamplePoint bilinear_point(std::size_t h, std::size_t w, Vec2 center, Vec2 displacement) {
  const double bx = std::floor(center.x);
  const double by = std::floor(center.y);
  const double lx = (center.x - bx) + displacement.x;
  const double ly = (center.y - by) + displacement.y;
  const double fx0 = std::floor(lx);
  const double fy0 = std::floor(ly);
  const double fx = lx - fx0;
  const double fy = ly - fy0;
  const long x0 = static_cast<long>(bx) + static_cast<long>(fx0);
  const long y0 = static_cast<long>(by) + static_cast<long>(fy0);

  SamplePoint sp;
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const double weight = wy[dy] * wx[dx];
      const long x = x0 + dx;
      const long y = y0 + dy;
      if (weight == 0.0 || x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) {
        continue;
      }
      sp.taps[sp.count++] = {static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x), weight};
    }
  }
  return sp;
}

Vec2 rotate_offset(const Rot2& g, Vec2 o) {
  switch (g.quarter_index()) {
    case 0: return o;
    case 1: return {-o.y, o.x};
    case 2: return {-o.x, -o.y};
    case 3: return {o.y, -o.x};
    default: return act_on_point(g, o);
  }
}

std::vector<double> warp_patch(const FeatureMap& f, Vec2 center, const Rot2& pose,
                               std::span<const Vec2> offsets) {
  const std::size_t k = f.channels();
  std::vector<double> patch(offsets.size() * k, 0.0);
  const double* data = f.data().data();
  for (std::size_t o = 0; o < offsets.size(); ++o) {
    const SamplePoint sp = bilinear_point(f.height(), f.width(), center, rotate_offset(pose, offsets[o]));
    for (int t = 0; t < sp.count; ++t) {
      const double* px = data + sp.taps[t].cell * k;
      for (std::size_t ch = 0; ch < k; ++ch) patch[o * k + ch] += sp.taps[t].weight * px[ch];
    }
  }
  return patch;
}

Vec2 output_center(std::size_t row, std::size_t col, std::size_t out_h, std::size_t out_w,
                   std::size_t in_h, std::size_t in_w) {
  if (out_h == 0 || out_w == 0 || in_h % out_h != 0 || in_w % out_w != 0) {
    throw ShapeError("output_center: input grid " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                     " is not an integer multiple of output grid " + std::to_string(out_h) + "x" +
                     std::to_string(out_w));
  }
  const double sy = static_cast<double>(in_h / out_h);
  const double sx = static_cast<double>(in_w / out_w);
  return {(static_cast<double>(col) + 0.5) * sx - 0.5, (static_cast<double>(row) + 0.5) * sy - 0.5};
}

FeatureMap sparse_group_conv(const FeatureMap& f, const CapsuleField& poses,
                             std::span<const ContinuousKernel> kernels) {
  const std::size_t c = poses.channels();
  if (kernels.empty() || (kernels.size() != 1 && kernels.size() != c)) {
    throw ShapeError("sparse_group_conv: need one kernel or one per capsule channel");
  }
  const std::size_t kout = kernels[0].out_channels;
  for (const auto& k : kernels) {
    k.validate();
    if (k.in_channels != f.channels()) {
      throw ShapeError("sparse_group_conv: kernel expects " + std::to_string(k.in_channels) +
                       " input channels, map has " + std::to_string(f.channels()));
    }
    if (k.out_channels != kout) throw ShapeError("sparse_group_conv: kernels differ in output width");
  }
  const std::size_t oh = poses.height();
  const std::size_t ow = poses.width();
  FeatureMap out(oh, ow, c * kout);
  const std::size_t kin = f.channels();
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t col = 0; col < ow; ++col) {
      const Vec2 center = output_center(r, col, oh, ow, f.height(), f.width());
      for (std::size_t ch = 0; ch < c; ++ch) {
        const ContinuousKernel& kernel = kernels.size() == 1 ? kernels[0] : kernels[ch];
        const std::vector<double> patch = warp_patch(f, center, poses.pose(r, col, ch), kernel.offsets);
        for (std::size_t j = 0; j < kout; ++j) {
          double acc = 0.0;
          for (std::size_t o = 0; o < kernel.offsets.size(); ++o) {
            for (std::size_t i = 0; i < kin; ++i) acc += patch[o * kin + i] * kernel.tap(o, i, j);
          }
          out.at(r, col, ch * kout + j) = acc;
        }
      }
    }
  }
  return out;
}

FeatureMap sparse_group_conv(const FeatureMap& f, const CapsuleField& poses,
                             const ContinuousKernel& kernel) {
  return sparse_group_conv(f, poses, std::span<const ContinuousKernel>(&kernel, 1));
}

FeatureMap modulate(const FeatureMap& conv_out, const CapsuleField& agreements) {
  const std::size_t c = agreements.channels();
  if (conv_out.height() != agreements.height() || conv_out.width() != agreements.width() || c == 0 ||
      conv_out.channels() % c != 0) {
    throw ShapeError("modulate: feature map and agreement grid are not aligned");
  }
  const std::size_t block = conv_out.channels() / c;
  FeatureMap out = conv_out;
  for (std::size_t r = 0; r < out.height(); ++r) {
    for (std::size_t col = 0; col < out.width(); ++col) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = agreements.activation(r, col, ch);
        for (std::size_t k = 0; k < block; ++k) out.at(r, col, ch * block + k) *= a;
      }
    }
  }
  return out;
}

FeatureMap pool_by_agreement(const FeatureMap& f, BlockGeometry geom, std::span<const double> weights) {
  const std::size_t oh = geom.output_extent(f.height());
  const std::size_t ow = geom.output_extent(f.width());
  const std::size_t cells = geom.cells();
  if (weights.size() != oh * ow * cells) {
    throw ShapeError("pool_by_agreement: expected " + std::to_string(oh * ow * cells) + " weights");
  }
  FeatureMap out(oh, ow, f.channels());
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t col = 0; col < ow; ++col) {
      const double* w = weights.data() + (r * ow + col) * cells;
      double wsum = 0.0;
      for (std::size_t k = 0; k < cells; ++k) {
        if (!(w[k] >= 0.0)) throw std::invalid_argument("pool_by_agreement: negative weight");
        wsum += w[k];
      }
      if (wsum < 1e-12) continue;
      const int r0 = geom.origin(r);
      const int c0 = geom.origin(col);
      for (int dr = 0; dr < geom.size; ++dr) {
        for (int dc = 0; dc < geom.size; ++dc) {
          const int y = r0 + dr;
          const int x = c0 + dc;
          if (y < 0 || x < 0 || y >= static_cast<int>(f.height()) || x >= static_cast<int>(f.width())) continue;
          const double wk = w[dr * geom.size + dc] / wsum;
          for (std::size_t ch = 0; ch < f.channels(); ++ch) out.at(r, col, ch) += wk * f.at(y, x, ch);
        }
      }
    }
  }
  return out;
}

std::vector<double> block_cell_weights(const CapsuleOutput<Rot2>& routed, std::size_t cells,
                                       std::size_t channels, std::size_t j) {
  const std::size_t m = routed.size();
  if (routed.weights.size() != cells * channels * m || j >= m) {
    throw ShapeError("block_cell_weights: routing output does not match the block layout");
  }
  std::vector<double> out(cells, 0.0);
  for (std::size_t k = 0; k < cells; ++k) {
    for (std::size_t ch = 0; ch < channels; ++ch) out[k] += routed.weights[(k * channels + ch) * m + j];
  }
  return out;
}

}  // namespace equicaps
