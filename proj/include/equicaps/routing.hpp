#pragma once

// Routing by agreement over an arbitrary group. A group type G must provide,
// via ADL: compose, inverse, distance, weighted_mean and identity_like.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "equicaps/group.hpp"

namespace equicaps {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// sigma(x) = logistic(alpha * x + beta).
struct SigmaParams {
  double alpha = 1.0;
  double beta = 0.0;

  double operator()(double x) const { return logistic(alpha * x + beta); }
};

enum class WeightMode {
  kSigmoid,  // independent sigmoid per weight
  kSoftmax,  // softmax over the output capsule dimension
};

// Which inputs enter the final agreement average. kActiveInputs drops inputs
// with zero activation, whose poses carry no information.
enum class AgreementMode { kAllInputs, kActiveInputs };

struct RoutingConfig {
  int iterations = 2;
  SigmaParams sigma;
  WeightMode mode = WeightMode::kSigmoid;
  AgreementMode agreement = AgreementMode::kAllInputs;
};

template <class G>
struct CapsuleInput {
  std::vector<G> poses;
  std::vector<double> activations;

  std::size_t size() const { return poses.size(); }

  void validate() const {
    if (poses.empty()) throw ShapeError("CapsuleInput: no capsules");
    if (poses.size() != activations.size()) {
      throw ShapeError("CapsuleInput: " + std::to_string(poses.size()) + " poses but " +
                       std::to_string(activations.size()) + " activations");
    }
    for (double a : activations) {
      if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("CapsuleInput: activation outside [0,1]");
    }
  }
};

// Dense rows x cols array of group elements, row-major.
template <class G>
class GroupMatrix {
 public:
  GroupMatrix() = default;
  GroupMatrix(std::size_t rows, std::size_t cols, const G& fill = G{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  G& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const G& at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  const std::vector<G>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<G> data_;
};

// t[i][j]: transformation from input capsule i to output capsule j.
template <class G>
using TransformSet = GroupMatrix<G>;
// v[i][j] = p_i o t[i][j].
template <class G>
using VoteMatrix = GroupMatrix<G>;

namespace capsule_flags {
inline constexpr std::uint8_t kUniformRetry = 1;  // a weighted mean fell back to uniform weights
inline constexpr std::uint8_t kDegenerate = 2;    // no mean could be formed; pose undefined
inline constexpr std::uint8_t kDead = 4;          // no input carried activation
}  // namespace capsule_flags

template <class G>
struct CapsuleOutput {
  std::vector<G> poses;
  std::vector<double> activations;
  // Routing weights used for the final pose estimate, n x m row-major.
  std::vector<double> weights;
  std::vector<std::uint8_t> flags;

  std::size_t size() const { return poses.size(); }
  bool alive(std::size_t j) const { return activations[j] > 0.0; }
};

template <class G>
struct RoutingTrace {
  VoteMatrix<G> votes;
  // One entry per pose estimate: the initial one and one per iteration.
  std::vector<std::vector<G>> poses;
  std::vector<std::vector<double>> weights;  // n x m, same indexing as poses
};

struct GroupDistance {
  template <class G>
  double operator()(const G& a, const G& b) const {
    return distance(a, b);
  }
};

template <class G>
VoteMatrix<G> cast_votes(const CapsuleInput<G>& input, const TransformSet<G>& transforms) {
  input.validate();
  if (transforms.rows() != input.size()) {
    throw ShapeError("cast_votes: " + std::to_string(input.size()) + " inputs but transforms have " +
                     std::to_string(transforms.rows()) + " rows");
  }
  VoteMatrix<G> votes(transforms.rows(), transforms.cols(), input.poses[0]);
  for (std::size_t i = 0; i < transforms.rows(); ++i) {
    for (std::size_t j = 0; j < transforms.cols(); ++j) {
      votes.at(i, j) = compose(input.poses[i], transforms.at(i, j));
    }
  }
  return votes;
}

namespace detail {

// Weighted mean of column j; on degeneracy retries with uniform weights over
// the active inputs. Returns false if that fails too.
template <class G>
bool column_mean(const VoteMatrix<G>& votes, std::size_t j, const std::vector<double>& weights,
                 const std::vector<double>& activations, G& out, std::uint8_t& flags) {
  const std::size_t n = votes.rows();
  std::vector<G> column;
  column.reserve(n);
  for (std::size_t i = 0; i < n; ++i) column.push_back(votes.at(i, j));
  try {
    out = weighted_mean(std::span<const G>(column), std::span<const double>(weights));
    return true;
  } catch (const DegenerateMean&) {
  }
  std::vector<double> uniform(n);
  for (std::size_t i = 0; i < n; ++i) uniform[i] = activations[i] > 0.0 ? 1.0 : 0.0;
  flags |= capsule_flags::kUniformRetry;
  try {
    out = weighted_mean(std::span<const G>(column), std::span<const double>(uniform));
    return true;
  } catch (const DegenerateMean&) {
    return false;
  }
}

}  // namespace detail

// Group capsule layer: iterative weighted-mean routing followed by agreement.
// Output poses are left-equivariant and activations invariant whenever the
// distance is preserved by left multiplication.
template <class G, class Distance = GroupDistance>
CapsuleOutput<G> route(const CapsuleInput<G>& input, const TransformSet<G>& transforms,
                       const RoutingConfig& cfg, Distance dist = {},
                       RoutingTrace<G>* trace = nullptr) {
  if (cfg.iterations < 0) throw std::invalid_argument("route: negative iteration count");
  const VoteMatrix<G> votes = cast_votes(input, transforms);
  const std::size_t n = votes.rows();
  const std::size_t m = votes.cols();
  const G identity = identity_like(input.poses[0]);

  CapsuleOutput<G> out;
  out.poses.assign(m, identity);
  out.activations.assign(m, 0.0);
  out.flags.assign(m, 0);
  out.weights.assign(n * m, 0.0);

  bool any_active = false;
  for (double a : input.activations) any_active = any_active || a > 0.0;
  if (!any_active) {
    for (auto& f : out.flags) f = capsule_flags::kDead;
    return out;
  }

  std::vector<bool> alive(m, true);
  std::vector<double> w(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) w[i * m + j] = input.activations[i];
  }

  auto estimate = [&]() {
    std::vector<double> col(n);
    for (std::size_t j = 0; j < m; ++j) {
      if (!alive[j]) continue;
      for (std::size_t i = 0; i < n; ++i) col[i] = w[i * m + j];
      if (!detail::column_mean(votes, j, col, input.activations, out.poses[j], out.flags[j])) {
        alive[j] = false;
        out.poses[j] = identity;
        out.flags[j] |= capsule_flags::kDegenerate;
      }
    }
    if (trace) {
      trace->poses.push_back(out.poses);
      trace->weights.push_back(w);
    }
  };

  if (trace) {
    *trace = {};
    trace->votes = votes;
  }
  estimate();

  std::vector<double> logits(m);
  for (int it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = input.activations[i];
      if (cfg.mode == WeightMode::kSigmoid) {
        for (std::size_t j = 0; j < m; ++j) {
          w[i * m + j] = alive[j] ? cfg.sigma(-dist(out.poses[j], votes.at(i, j))) * a : 0.0;
        }
        continue;
      }
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        if (!alive[j]) continue;
        logits[j] = cfg.sigma.alpha * -dist(out.poses[j], votes.at(i, j)) + cfg.sigma.beta;
        peak = std::max(peak, logits[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (alive[j]) z += std::exp(logits[j] - peak);
      }
      for (std::size_t j = 0; j < m; ++j) {
        w[i * m + j] = alive[j] ? std::exp(logits[j] - peak) / z * a : 0.0;
      }
    }
    estimate();
  }

  std::vector<double> deltas;
  deltas.reserve(n);
  for (std::size_t j = 0; j < m; ++j) {
    if (!alive[j]) continue;
    deltas.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.agreement == AgreementMode::kActiveInputs && !(input.activations[i] > 0.0)) continue;
      deltas.push_back(dist(out.poses[j], votes.at(i, j)));
    }
    const double mean_delta = canonical_sum(deltas) / static_cast<double>(deltas.size());
    out.activations[j] = cfg.sigma(-mean_delta);
  }
  for (std::size_t k = 0; k < n * m; ++k) out.weights[k] = alive[k % m] ? w[k] : 0.0;
  return out;
}

}  // namespace equicaps
