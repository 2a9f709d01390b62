#pragma once

// Spatial aggregation of SO(2) capsules over local receptive fields, with
// transformation kernels generated from pose-aligned positions.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "equicaps/grid.hpp"
#include "equicaps/group.hpp"
#include "equicaps/rng.hpp"
#include "equicaps/routing.hpp"

namespace equicaps {

// Every capsule in the receptive field has activation zero.
class DeadField : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// The kernel generator produced a (near) zero vector for a transformation.
class DegenerateTransform : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kDegenerateTransformThreshold = 1e-7;

struct ReceptiveField {
  std::vector<Vec2> positions;                 // offsets from the block center, pixels
  std::vector<CapsuleInput<Rot2>> capsules;    // one per position, `channels()` each

  std::size_t size() const { return positions.size(); }
  std::size_t channels() const { return capsules.empty() ? 0 : capsules[0].size(); }
  void validate() const;
  // Position-major flattening: input capsule i = position * channels + channel.
  CapsuleInput<Rot2> flatten() const;
};

// Two-layer perceptron mapping a normalized 2D position to in_caps * out_caps
// SO(2) transformations: relu(W1 x + b1) -> W2 h + b2 -> pairs -> unit vectors.
class KernelMLP {
 public:
  KernelMLP() = default;
  KernelMLP(std::size_t in_caps, std::size_t out_caps, std::size_t hidden = 16);

  // Gaussian weights with the given scale; biases drawn the same way.
  static KernelMLP random(std::size_t in_caps, std::size_t out_caps, std::size_t hidden, Rng& rng,
                          double scale = 1.0);
  // Position-independent kernel: zero weights, output bias holds `pairs`
  // (in_caps * out_caps elements, index ch * out_caps + j).
  static KernelMLP constant(std::size_t in_caps, std::size_t out_caps, std::size_t hidden,
                            std::span<const Rot2> pairs);

  std::size_t in_caps() const { return c_; }
  std::size_t out_caps() const { return m_; }
  std::size_t hidden() const { return h_; }

  // Transformations for one position; index ch * out_caps + j.
  std::vector<Rot2> evaluate(Vec2 position) const;

  // Flat parameter vector [W1 (h x 2), b1 (h), W2 (2cm x h), b2 (2cm)].
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return 2 * h_; }
  std::size_t w2_offset() const { return 3 * h_; }
  std::size_t b2_offset() const { return 3 * h_ + 2 * c_ * m_ * h_; }

 private:
  std::size_t c_ = 0;
  std::size_t m_ = 0;
  std::size_t h_ = 0;
  std::vector<double> params_;
};

// Summary pose of the field. Unit weights when every capsule is active,
// activation weights otherwise, so inactive capsules never contribute.
// Throws DeadField when no capsule is active, DegenerateMean on cancellation.
Rot2 mean_pose(const ReceptiveField& field);

// Positions scaled into the unit disc (by the largest offset norm) and, when
// `aligned`, rotated by the inverse mean pose.
std::vector<Vec2> aligned_positions(const ReceptiveField& field, bool aligned = true);

// (k * channels) x out_caps transformations for the field's capsules.
TransformSet<Rot2> align_and_generate(const ReceptiveField& field, const KernelMLP& mlp,
                                      bool aligned = true);

// Routes all capsules of the field to mlp.out_caps() outputs. Dead or
// degenerate fields give zero-activation outputs with identity poses.
CapsuleOutput<Rot2> aggregate_block(const ReceptiveField& field, const KernelMLP& mlp,
                                    const RoutingConfig& cfg, bool aligned = true);

// Block of a capsule grid. Cells outside the grid become inactive capsules.
ReceptiveField extract_block(const CapsuleField& field, BlockGeometry geom, std::size_t out_row,
                             std::size_t out_col);

struct FieldAggregation {
  CapsuleField output;
  std::vector<CapsuleOutput<Rot2>> blocks;  // row-major over the output grid
};

// Applies aggregate_block to every block of the grid with shared kernels.
FieldAggregation aggregate_field(const CapsuleField& input, const KernelMLP& mlp,
                                 const RoutingConfig& cfg, BlockGeometry geom, bool aligned = true);

}  // namespace equicaps
