#pragma once

// Randomized equivariance checks and the pose-error harness. Every procedure is
// a pure function of its seed.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "equicaps/glyphs.hpp"
#include "equicaps/group.hpp"
#include "equicaps/network.hpp"

namespace equicaps {

struct EquivarianceReport {
  std::string theorem;
  std::size_t trials = 0;
  double max_pose_dev = 0.0;
  double max_act_dev = 0.0;
  double max_feature_dev = 0.0;  // conv outputs under joint rotation
  double max_shift_dev = 0.0;    // conv outputs under grid shifts; must be exactly 0
  double tolerance = 0.0;
  bool passed = false;
  std::uint64_t seed = 0;
  // Negative control: the check is meant to fail.
  bool expected_fail = false;

  bool as_expected() const { return expected_fail ? !passed : passed; }
};

// Routing under random left multiplication g: poses must map to g o poses and
// activations stay fixed. `sabotage` swaps in a distance that is not
// preserved by left multiplication, which must make the check fail.
EquivarianceReport verify_routing(std::uint64_t seed, std::size_t trials, double tolerance,
                                  const GroupDesc& group = GroupDesc::so2(), bool sabotage = false,
                                  int max_iterations = 3);

struct AggregationOptions {
  bool aligned = true;
  // Position-independent kernels instead of random MLPs.
  bool constant_kernels = false;
  // Add trials with arbitrary rotation angles on continuous block positions.
  bool arbitrary_angles = true;
};
EquivarianceReport verify_aggregation(std::uint64_t seed, std::size_t trials, double tolerance,
                                      const AggregationOptions& options = {});

// Joint quarter-turn rotation of signal and poses leaves sparse conv outputs
// unchanged up to the permutation of cells; integer grid shifts move them
// exactly.
EquivarianceReport verify_groupconv(std::uint64_t seed, std::size_t trials, double tolerance);

// Random untrained networks on glyph and noise images under quarter turns.
EquivarianceReport verify_network(std::uint64_t seed, std::size_t networks, std::size_t images,
                                  double tolerance, const NetworkConfig& cfg = {});

std::string report_to_json(const EquivarianceReport& report);
// Reports as a JSON document with a schema version and a summary flag.
std::string reports_to_json(const std::vector<EquivarianceReport>& reports);

// ---------------------------------------------------------------- pose error

enum class PoseMode { kCapsule, kNaive };
std::string pose_mode_name(PoseMode mode);

inline constexpr std::size_t kPoseErrorBins = 18;  // 10 degree bins over [0, 180]

struct PoseErrorHistogram {
  std::size_t label = 0;
  std::vector<double> bin_edges;   // kPoseErrorBins + 1 edges, degrees
  std::vector<std::size_t> counts;
  std::size_t samples = 0;
  double mean_error_degrees = 0.0;
};

enum class RotationSampling {
  kUniform,       // angle uniform in [0, 2 pi)
  kQuarterTurns,  // k pi / 2, k uniform in 0..3
  kIdentity,      // no rotation
};

struct PoseErrorOptions {
  RotationSampling rotations = RotationSampling::kUniform;
  std::uint64_t seed = 0;
};

struct PoseErrorReport {
  PoseMode mode = PoseMode::kCapsule;
  std::vector<PoseErrorHistogram> classes;  // one per class label
  std::size_t samples = 0;
  double mean_error_degrees = 0.0;
};

// Angle between the pose change of a sample under a rotation and the applied
// rotation, in degrees within [0, 180]. Capsule mode reads the pose of the
// capsule of the sample's label.
PoseErrorReport pose_error_eval(const TrainState& state, const std::vector<GlyphSample>& samples,
                                PoseMode mode, const PoseErrorOptions& options = {});

// Columns class, bin_low_deg, bin_high_deg, count.
std::string histogram_csv(const PoseErrorReport& report);
std::string pose_summary_json(const PoseErrorReport& capsule, const PoseErrorReport& naive,
                              const PoseErrorOptions& options);

}  // namespace equicaps
