#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "equicaps/io.hpp"
#include "equicaps/rng.hpp"
#include "equicaps/training.hpp"

using namespace equicaps;

namespace {

double loss_of(const TrainState& st, const ImageGrid& img, std::size_t label, double margin) {
  return sample_loss(forward(st, img), label, margin);
}

}  // namespace

// Central differences with step 1e-4 against the backpropagated gradient for
// 20 randomly chosen parameters of a random state.
TEST(Gradient, MatchesCentralDifferences) {
  const TrainState base = TrainState::random(NetworkConfig{}, 17);
  const auto data = make_glyph_dataset(3, 4, 16, 23);
  const double margin = 0.4;

  TrainState grad = zero_like(base);
  ForwardTrace trace;
  for (const auto& s : data) {
    forward_traced(base, s.image, trace);
    accumulate_gradient(base, trace, s.label, margin, grad);
  }
  TrainState probe = base;
  std::vector<double*> p = enumerate_parameters(probe);
  const std::vector<double*> g = enumerate_parameters(grad);
  ASSERT_EQ(p.size(), base.parameter_count());

  Rng rng(99);
  const double h = 1e-4;
  int checked = 0;
  for (int attempt = 0; attempt < 200 && checked < 20; ++attempt) {
    const std::size_t i = rng.below(p.size());
    const double keep = *p[i];
    auto total = [&]() {
      double sum = 0.0;
      for (const auto& s : data) sum += loss_of(probe, s.image, s.label, margin);
      return sum;
    };
    *p[i] = keep + h;
    const double up = total();
    *p[i] = keep - h;
    const double down = total();
    *p[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double an = *g[i];
    // Parameters with no influence carry no information about the gradient.
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
    EXPECT_LE(rel, 1e-2) << "parameter " << i << " fd " << fd << " analytic " << an;
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST(Training, EnumeratedParametersCoverTheState) {
  TrainState st = TrainState::random(NetworkConfig{}, 3);
  const std::vector<double*> p = enumerate_parameters(st);
  std::vector<double*> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_EQ(p.front(), &st.stages[0].mlp.params()[0]);
  EXPECT_EQ(p.back(), &st.head_bias.back());
}

TEST(Training, LossDecreasesOverFirstFiveEpochs) {
  NetworkConfig cfg;
  cfg.epochs = 5;
  const ToyDatasets d = make_toy_datasets(cfg);
  const TrainResult res = train_toy(cfg, d.train, d.holdout);
  ASSERT_EQ(res.metrics.size(), 6u);
  // Compared at one margin: the schedule raises the margin every epoch.
  const double before = mean_loss(TrainState::initialize(cfg, cfg.seed), d.train, cfg.margin_start);
  const double after = mean_loss(res.state, d.train, cfg.margin_start);
  EXPECT_LT(after, before);
  EXPECT_GT(res.metrics.back().holdout_accuracy, res.metrics.front().holdout_accuracy);
}

TEST(Training, TwoEpochsAreBitwiseReproducible) {
  NetworkConfig cfg;
  cfg.epochs = 2;
  cfg.train_samples = 48;
  cfg.holdout_samples = 16;
  const ToyDatasets d = make_toy_datasets(cfg);
  const TrainResult a = train_toy(cfg, d.train, d.holdout);
  const TrainResult b = train_toy(cfg, d.train, d.holdout);
  EXPECT_EQ(serialize_snapshot(a.state), serialize_snapshot(b.state));
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
}

TEST(Training, UntrainedAccuracyIsChance) {
  NetworkConfig cfg;
  const ToyDatasets d = make_toy_datasets(cfg);
  // Identical class capsules and a zero head predict class 0 everywhere.
  EXPECT_DOUBLE_EQ(evaluate_accuracy(TrainState::initialize(cfg, cfg.seed), d.holdout), 0.25);
}

TEST(Training, Preconditions) {
  NetworkConfig cfg;
  std::vector<GlyphSample> none;
  EXPECT_THROW(train_toy(cfg, none, none), std::invalid_argument);
  auto bad = make_glyph_dataset(12, 6, 16, 1);  // labels 4 and 5 exceed 4 classes
  EXPECT_THROW(train_toy(cfg, bad, bad), std::invalid_argument);
}

TEST(Training, DivergenceIsReported) {
  NetworkConfig cfg;
  cfg.epochs = 3;
  cfg.train_samples = 32;
  cfg.holdout_samples = 8;
  cfg.learning_rate = 1e308;
  const ToyDatasets d = make_toy_datasets(cfg);
  EXPECT_THROW(train_toy(cfg, d.train, d.holdout), TrainingDiverged);
}
