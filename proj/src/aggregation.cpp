#include "equicaps/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace equicaps {

void ReceptiveField::validate() const {
  if (positions.empty()) throw ShapeError("ReceptiveField: no positions");
  if (positions.size() != capsules.size()) {
    throw ShapeError("ReceptiveField: " + std::to_string(positions.size()) + " positions but " +
                     std::to_string(capsules.size()) + " capsule sets");
  }
  for (const auto& caps : capsules) {
    caps.validate();
    if (caps.size() != capsules[0].size()) {
      throw ShapeError("ReceptiveField: inconsistent channel count across positions");
    }
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t j = i + 1; j < positions.size(); ++j) {
      if (positions[i] == positions[j]) throw ShapeError("ReceptiveField: duplicate position");
    }
  }
}

CapsuleInput<Rot2> ReceptiveField::flatten() const {
  CapsuleInput<Rot2> flat;
  flat.poses.reserve(size() * channels());
  flat.activations.reserve(size() * channels());
  for (const auto& caps : capsules) {
    flat.poses.insert(flat.poses.end(), caps.poses.begin(), caps.poses.end());
    flat.activations.insert(flat.activations.end(), caps.activations.begin(), caps.activations.end());
  }
  return flat;
}

// ---------------------------------------------------------------- KernelMLP

KernelMLP::KernelMLP(std::size_t in_caps, std::size_t out_caps, std::size_t hidden)
    : c_(in_caps), m_(out_caps), h_(hidden) {
  if (in_caps == 0 || out_caps == 0 || hidden == 0) {
    throw std::invalid_argument("KernelMLP: all dimensions must be positive");
  }
  params_.assign(3 * h_ + 2 * c_ * m_ * h_ + 2 * c_ * m_, 0.0);
}

KernelMLP KernelMLP::random(std::size_t in_caps, std::size_t out_caps, std::size_t hidden, Rng& rng,
                            double scale) {
  KernelMLP mlp(in_caps, out_caps, hidden);
  for (double& p : mlp.params_) p = scale * rng.normal();
  return mlp;
}

KernelMLP KernelMLP::constant(std::size_t in_caps, std::size_t out_caps, std::size_t hidden,
                              std::span<const Rot2> pairs) {
  KernelMLP mlp(in_caps, out_caps, hidden);
  if (pairs.size() != in_caps * out_caps) {
    throw std::invalid_argument("KernelMLP::constant: expected in_caps * out_caps transforms");
  }
  const std::size_t b2 = mlp.b2_offset();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    mlp.params_[b2 + 2 * k] = pairs[k].c();
    mlp.params_[b2 + 2 * k + 1] = pairs[k].s();
  }
  return mlp;
}

std::vector<Rot2> KernelMLP::evaluate(Vec2 position) const {
  const double* w1 = params_.data() + w1_offset();
  const double* b1 = params_.data() + b1_offset();
  const double* w2 = params_.data() + w2_offset();
  const double* b2 = params_.data() + b2_offset();

  std::vector<double> hidden(h_);
  for (std::size_t u = 0; u < h_; ++u) {
    const double z = w1[2 * u] * position.x + w1[2 * u + 1] * position.y + b1[u];
    hidden[u] = z > 0.0 ? z : 0.0;
  }
  const std::size_t outputs = 2 * c_ * m_;
  std::vector<Rot2> transforms;
  transforms.reserve(c_ * m_);
  for (std::size_t k = 0; k < c_ * m_; ++k) {
    double pair[2];
    for (std::size_t d = 0; d < 2; ++d) {
      const std::size_t o = 2 * k + d;
      double z = b2[o];
      const double* row = w2 + o * h_;
      for (std::size_t u = 0; u < h_; ++u) z += row[u] * hidden[u];
      pair[d] = z;
    }
    if (!(std::hypot(pair[0], pair[1]) >= kDegenerateTransformThreshold)) {
      throw DegenerateTransform("KernelMLP: output pair " + std::to_string(k) + " of " +
                                std::to_string(outputs / 2) + " has (near) zero length");
    }
    transforms.push_back(Rot2::from_vector(pair[0], pair[1]));
  }
  return transforms;
}

// ---------------------------------------------------------------- aggregation

Rot2 mean_pose(const ReceptiveField& field) {
  const CapsuleInput<Rot2> flat = field.flatten();
  bool any = false;
  bool all = true;
  for (double a : flat.activations) {
    any = any || a > 0.0;
    all = all && a > 0.0;
  }
  if (!any) throw DeadField("mean_pose: every capsule in the receptive field is inactive");
  if (all) {
    const std::vector<double> ones(flat.size(), 1.0);
    return weighted_mean(std::span<const Rot2>(flat.poses), std::span<const double>(ones));
  }
  return weighted_mean(std::span<const Rot2>(flat.poses), std::span<const double>(flat.activations));
}

std::vector<Vec2> aligned_positions(const ReceptiveField& field, bool aligned) {
  double radius = 0.0;
  for (const Vec2& p : field.positions) radius = std::max(radius, norm(p));
  const double scale = radius > 0.0 ? 1.0 / radius : 1.0;

  std::vector<Vec2> out;
  out.reserve(field.size());
  for (const Vec2& p : field.positions) out.push_back({p.x * scale, p.y * scale});
  if (!aligned) return out;

  const Rot2 undo = inverse(mean_pose(field));
  for (Vec2& p : out) p = act_on_point(undo, p);
  return out;
}

TransformSet<Rot2> align_and_generate(const ReceptiveField& field, const KernelMLP& mlp,
                                      bool aligned) {
  field.validate();
  const std::size_t c = field.channels();
  if (mlp.in_caps() != c) {
    throw ShapeError("align_and_generate: field has " + std::to_string(c) +
                     " channels but kernel expects " + std::to_string(mlp.in_caps()));
  }
  const std::size_t m = mlp.out_caps();
  const std::vector<Vec2> positions = aligned_positions(field, aligned);
  TransformSet<Rot2> t(field.size() * c, m);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const std::vector<Rot2> ts = mlp.evaluate(positions[i]);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < m; ++j) t.at(i * c + ch, j) = ts[ch * m + j];
    }
  }
  return t;
}

namespace {

CapsuleOutput<Rot2> inactive_output(std::size_t n, std::size_t m, std::uint8_t flag) {
  CapsuleOutput<Rot2> out;
  out.poses.assign(m, Rot2{});
  out.activations.assign(m, 0.0);
  out.weights.assign(n * m, 0.0);
  out.flags.assign(m, flag);
  return out;
}

}  // namespace

CapsuleOutput<Rot2> aggregate_block(const ReceptiveField& field, const KernelMLP& mlp,
                                    const RoutingConfig& cfg, bool aligned) {
  field.validate();
  const std::size_t n = field.size() * field.channels();
  TransformSet<Rot2> transforms;
  try {
    transforms = align_and_generate(field, mlp, aligned);
  } catch (const DeadField&) {
    return inactive_output(n, mlp.out_caps(), capsule_flags::kDead);
  } catch (const DegenerateMean&) {
    return inactive_output(n, mlp.out_caps(), capsule_flags::kDegenerate);
  } catch (const DegenerateTransform&) {
    return inactive_output(n, mlp.out_caps(), capsule_flags::kDegenerate);
  }
  return route(field.flatten(), transforms, cfg);
}

ReceptiveField extract_block(const CapsuleField& field, BlockGeometry geom, std::size_t out_row,
                             std::size_t out_col) {
  ReceptiveField rf;
  const int r0 = geom.origin(out_row);
  const int c0 = geom.origin(out_col);
  const std::size_t c = field.channels();
  for (int dr = 0; dr < geom.size; ++dr) {
    for (int dc = 0; dc < geom.size; ++dc) {
      rf.positions.push_back(geom.offset(dr, dc));
      CapsuleInput<Rot2> caps;
      caps.poses.assign(c, Rot2{});
      caps.activations.assign(c, 0.0);
      const int r = r0 + dr;
      const int col = c0 + dc;
      if (r >= 0 && col >= 0 && r < static_cast<int>(field.height()) &&
          col < static_cast<int>(field.width())) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          caps.poses[ch] = field.pose(r, col, ch);
          caps.activations[ch] = field.activation(r, col, ch);
        }
      }
      rf.capsules.push_back(std::move(caps));
    }
  }
  return rf;
}

FieldAggregation aggregate_field(const CapsuleField& input, const KernelMLP& mlp,
                                 const RoutingConfig& cfg, BlockGeometry geom, bool aligned) {
  const std::size_t oh = geom.output_extent(input.height());
  const std::size_t ow = geom.output_extent(input.width());
  FieldAggregation agg;
  agg.output = CapsuleField(oh, ow, mlp.out_caps());
  agg.blocks.reserve(oh * ow);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      CapsuleOutput<Rot2> out = aggregate_block(extract_block(input, geom, r, c), mlp, cfg, aligned);
      for (std::size_t j = 0; j < out.size(); ++j) {
        agg.output.pose(r, c, j) = out.poses[j];
        agg.output.activation(r, c, j) = out.activations[j];
      }
      agg.blocks.push_back(std::move(out));
    }
  }
  return agg;
}

}  // namespace equicaps
