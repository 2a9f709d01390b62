#pragma once

// Desk-scale trainer: plain gradient descent with gradients obtained by
// backpropagation through the conv path, the routing iterations, the pose
// alignment and the kernel generators.

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "equicaps/glyphs.hpp"
#include "equicaps/network.hpp"

namespace equicaps {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every scalar parameter in a stable order: per stage (MLP, sigma alpha and
// beta, kernel taps, bias), then head weights and biases.
std::vector<double*> enumerate_parameters(TrainState& state);

// spread(capsule activations) + cross-entropy(conv logits).
double sample_loss(const ForwardResult& out, std::size_t label, double margin);
double mean_loss(const TrainState& state, const std::vector<GlyphSample>& samples, double margin);
double evaluate_accuracy(const TrainState& state, const std::vector<GlyphSample>& samples);

// Same layout as `state`, every parameter zero.
TrainState zero_like(const TrainState& state);
// Adds d(sample_loss)/d(parameter) for one traced sample into `grad`.
void accumulate_gradient(const TrainState& state, const ForwardTrace& trace, std::size_t label, double margin,
                         TrainState& grad);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  double holdout_accuracy = 0.0;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> metrics;  // row 0: untrained state
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

struct ToyDatasets {
  std::vector<GlyphSample> train;
  std::vector<GlyphSample> holdout;
};
// Training and held-out glyph sets for cfg, seeded by cfg.seed and
// cfg.seed + 1000.
ToyDatasets make_toy_datasets(const NetworkConfig& cfg);

// Throws TrainingDiverged on a non-finite loss or parameter.
TrainResult train_toy(const NetworkConfig& cfg, const std::vector<GlyphSample>& train,
                      const std::vector<GlyphSample>& holdout, const EpochCallback& on_epoch = {});

}  // namespace equicaps
