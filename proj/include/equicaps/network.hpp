#pragma once

// Capsule network with pose-guided sparse convolutions:
//
//   image -> Sobel poses -> [capsule aggregation -> pose-indexed conv] x stages
//         -> (mean agreement per class, linear head on pooled conv features)

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "equicaps/aggregation.hpp"
#include "equicaps/grid.hpp"
#include "equicaps/groupconv.hpp"
#include "equicaps/routing.hpp"

namespace equicaps {

struct StageSpec {
  std::size_t capsules = 8;   // output capsules per cell
  int iterations = 2;         // routing iterations
  std::size_t channels = 8;   // conv channels per output capsule
};

struct NetworkConfig {
  std::vector<StageSpec> stages = {{8, 2, 8}, {8, 2, 8}, {4, 2, 8}};
  std::size_t classes = 4;
  std::size_t image_size = 16;
  std::size_t mlp_hidden = 16;
  std::size_t kernel_size = 3;
  BlockGeometry geometry = BlockGeometry::two_by_two();
  SigmaParams sigma_init;

  // Training.
  int epochs = 20;
  double learning_rate = 0.05;
  double margin_start = 0.2;
  double margin_end = 0.9;
  std::size_t batch_size = 16;
  std::size_t train_samples = 400;
  std::size_t holdout_samples = 200;
  std::uint64_t seed = 7;

  // Default stage layout with the last stage sized to `classes`.
  static NetworkConfig with_classes(std::size_t classes);
  void validate() const;
  double margin_at(int epoch) const;
};

struct StageParams {
  KernelMLP mlp;
  SigmaParams sigma;
  std::vector<ContinuousKernel> kernels;  // one per output capsule
  std::vector<double> bias;               // capsules * channels
};

struct TrainState {
  NetworkConfig config;
  std::vector<StageParams> stages;
  std::vector<double> head_weight;  // classes x feature_width, row-major
  std::vector<double> head_bias;    // classes
  int epoch = 0;
  std::uint64_t seed = 0;

  // Training initialization: zero classifier head and identical class
  // capsule kernels, so the untrained network scores every class equally.
  static TrainState initialize(const NetworkConfig& cfg, std::uint64_t seed);
  // Every parameter random, for equivariance checks on untrained networks.
  static TrainState random(const NetworkConfig& cfg, std::uint64_t seed);

  std::size_t feature_width() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

// Sobel gradient direction as pose and gradient length (scaled by the image
// maximum) as activation. Pixels without gradient get the identity pose and
// activation zero.
CapsuleField init_poses(const ImageGrid& img);

struct ForwardResult {
  std::vector<double> capsule_activations;  // per class, in [0, 1)
  std::vector<double> conv_logits;          // per class
  std::vector<Rot2> final_poses;            // per class
};

// Intermediate values kept for backpropagation and for partial recomputation.
// Index 0 holds the network input (Sobel capsules, raw image); index l the
// output of stage l.
struct ForwardTrace {
  std::vector<CapsuleField> capsules;
  std::vector<FeatureMap> features;
  std::vector<FeatureMap> preact;  // conv output before modulation, index l >= 1
  std::vector<double> pooled;
  ForwardResult result;
};

ForwardResult forward(const TrainState& state, const ImageGrid& img);
// Full pass recording a trace.
void forward_traced(const TrainState& state, const ImageGrid& img, ForwardTrace& trace);
// Re-runs stages first_stage.. using trace inputs at index first_stage - 1.
void forward_from(const TrainState& state, std::size_t first_stage, ForwardTrace& trace);

// sum over i != target of max(0, margin - (a_target - a_i))^2.
double spread_loss(std::span<const double> activations, std::size_t target, double margin);
double cross_entropy(std::span<const double> logits, std::size_t target);
std::vector<double> softmax(std::span<const double> logits);
// argmax of capsule activation + conv softmax probability; ties go to the
// lowest class index.
std::size_t predict(const ForwardResult& out);

// Hierarchical unit-weight averaging of the Sobel poses of active pixels over
// the same block geometry; identity if nothing remains.
Rot2 naive_pose(const ImageGrid& img, BlockGeometry geom, std::size_t levels);

}  // namespace equicaps
