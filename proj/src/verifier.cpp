#include "equicaps/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "equicaps/aggregation.hpp"
#include "equicaps/groupconv.hpp"
#include "equicaps/rng.hpp"
#include "equicaps/routing.hpp"
#include "json.hpp"

namespace equicaps {

namespace {

void require_trials(std::size_t trials, const char* who) {
  if (trials == 0) throw std::invalid_argument(std::string(who) + ": trials must be at least 1");
}

GroupElement random_element(const GroupDesc& desc, Rng& rng) {
  switch (desc.kind) {
    case GroupDesc::Kind::kSO2: return GroupElement(rng.rotation());
    case GroupDesc::Kind::kTrans: {
      std::vector<double> v(desc.dim);
      for (double& x : v) x = rng.normal();
      return GroupElement(TransN(std::move(v)));
    }
    case GroupDesc::Kind::kProduct: {
      GroupElement::Product parts;
      for (const auto& p : desc.parts) parts.push_back(random_element(p, rng));
      return GroupElement(std::move(parts));
    }
  }
  throw GroupKindError("random_element: unknown group kind");
}

double first_coordinate(const GroupElement& g) {
  if (g.is_rot2()) return g.rot2().c();
  if (g.is_trans()) return g.trans().dim() == 0 ? 0.0 : g.trans()[0];
  return first_coordinate(g.parts().front());
}

// -a.b + 0.5 b.x for SO(2): the extra term depends on the absolute pose.
struct SabotagedDistance {
  double operator()(const GroupElement& a, const GroupElement& b) const {
    return distance(a, b) + 0.5 * first_coordinate(b);
  }
};

double random_activation(Rng& rng) { return rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.05, 1.0); }

RoutingConfig random_routing(Rng& rng, int max_iterations) {
  RoutingConfig rc;
  rc.iterations = rng.integer(0, max_iterations);
  rc.sigma = {rng.uniform(0.5, 3.0), rng.uniform(-1.0, 1.0)};
  rc.mode = rng.uniform() < 0.5 ? WeightMode::kSigmoid : WeightMode::kSoftmax;
  rc.agreement = rng.uniform() < 0.5 ? AgreementMode::kAllInputs : AgreementMode::kActiveInputs;
  return rc;
}

template <class G>
void compare_outputs(const CapsuleOutput<G>& base, const CapsuleOutput<G>& moved, const G& g,
                     EquivarianceReport& rep) {
  for (std::size_t j = 0; j < base.size(); ++j) {
    rep.max_act_dev = std::max(rep.max_act_dev, std::abs(base.activations[j] - moved.activations[j]));
    if (!base.alive(j) && !moved.alive(j)) continue;
    rep.max_pose_dev = std::max(rep.max_pose_dev, pose_deviation(moved.poses[j], compose(g, base.poses[j])));
  }
}

void finish(EquivarianceReport& rep) {
  rep.passed = rep.max_pose_dev <= rep.tolerance && rep.max_act_dev <= rep.tolerance &&
               rep.max_feature_dev <= rep.tolerance && rep.max_shift_dev == 0.0;
}

}  // namespace

// ---------------------------------------------------------------- routing

EquivarianceReport verify_routing(std::uint64_t seed, std::size_t trials, double tolerance,
                                  const GroupDesc& group, bool sabotage, int max_iterations) {
  require_trials(trials, "verify_routing");
  EquivarianceReport rep;
  rep.theorem = std::string(sabotage ? "routing-sabotaged-distance" : "routing") + ":" + group.name();
  rep.trials = trials;
  rep.tolerance = tolerance;
  rep.seed = seed;
  rep.expected_fail = sabotage;

  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 8));
    const std::size_t m = static_cast<std::size_t>(rng.integer(1, 4));
    CapsuleInput<GroupElement> in;
    for (std::size_t i = 0; i < n; ++i) {
      in.poses.push_back(random_element(group, rng));
      in.activations.push_back(random_activation(rng));
    }
    // At least one live input, otherwise the trial checks nothing.
    in.activations[rng.below(n)] = rng.uniform(0.05, 1.0);
    TransformSet<GroupElement> transforms(n, m, GroupElement::identity(group));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) transforms.at(i, j) = random_element(group, rng);
    }
    const RoutingConfig rc = random_routing(rng, max_iterations);
    const GroupElement g = random_element(group, rng);

    CapsuleInput<GroupElement> moved = in;
    for (auto& p : moved.poses) p = compose(g, p);

    if (sabotage) {
      compare_outputs(route(in, transforms, rc, SabotagedDistance{}),
                      route(moved, transforms, rc, SabotagedDistance{}), g, rep);
    } else {
      compare_outputs(route(in, transforms, rc), route(moved, transforms, rc), g, rep);
    }
  }
  finish(rep);
  return rep;
}

// ---------------------------------------------------------------- aggregation

EquivarianceReport verify_aggregation(std::uint64_t seed, std::size_t trials, double tolerance,
                                      const AggregationOptions& options) {
  require_trials(trials, "verify_aggregation");
  EquivarianceReport rep;
  rep.theorem = options.constant_kernels ? "aggregation-constant-kernels"
                : options.aligned         ? "aggregation-aligned"
                                          : "aggregation-unaligned";
  rep.trials = trials;
  rep.tolerance = tolerance;
  rep.seed = seed;
  rep.expected_fail = !options.aligned && !options.constant_kernels;

  const BlockGeometry geom = BlockGeometry::two_by_two();
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = static_cast<std::size_t>(rng.integer(1, 3));
    const std::size_t m = static_cast<std::size_t>(rng.integer(1, 4));
    const std::size_t hidden = 8;
    KernelMLP mlp;
    if (options.constant_kernels) {
      std::vector<Rot2> pairs(c * m);
      for (auto& p : pairs) p = rng.rotation();
      mlp = KernelMLP::constant(c, m, hidden, pairs);
    } else {
      mlp = KernelMLP::random(c, m, hidden, rng);
    }
    const RoutingConfig rc = random_routing(rng, 3);

    CapsuleField field(2, 2, c);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t col = 0; col < 2; ++col) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          field.pose(r, col, ch) = rng.rotation();
          field.activation(r, col, ch) = random_activation(rng);
        }
      }
    }
    field.activation(rng.below(2), rng.below(2), rng.below(c)) = rng.uniform(0.05, 1.0);
    const ReceptiveField base = extract_block(field, geom, 0, 0);

    const bool arbitrary = options.arbitrary_angles && t % 2 == 1;
    Rot2 g;
    ReceptiveField moved;
    if (arbitrary) {
      // Rotated copy on continuous positions: the pixel lattice is not
      // preserved, so the block is described by its positions directly.
      g = rng.rotation();
      moved = base;
      for (auto& x : moved.positions) x = act_on_point(g, x);
      for (auto& caps : moved.capsules) {
        for (auto& p : caps.poses) p = compose(g, p);
      }
    } else {
      const int k = rng.integer(1, 3);
      g = Rot2::quarter_turn(k);
      moved = extract_block(rotate_quarter(field, k), geom, 0, 0);
    }
    compare_outputs(aggregate_block(base, mlp, rc, options.aligned),
                    aggregate_block(moved, mlp, rc, options.aligned), g, rep);
  }
  finish(rep);
  return rep;
}

// ---------------------------------------------------------------- group conv

namespace {

double max_abs_diff(const FeatureMap& a, const FeatureMap& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels()) {
    return std::numeric_limits<double>::infinity();
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

EquivarianceReport verify_groupconv(std::uint64_t seed, std::size_t trials, double tolerance) {
  require_trials(trials, "verify_groupconv");
  EquivarianceReport rep;
  rep.theorem = "groupconv";
  rep.trials = trials;
  rep.tolerance = tolerance;
  rep.seed = seed;

  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 * static_cast<std::size_t>(rng.integer(2, 5));
    const std::size_t stride = rng.uniform() < 0.5 ? 1 : 2;
    const std::size_t kin = static_cast<std::size_t>(rng.integer(1, 3));
    const std::size_t kout = static_cast<std::size_t>(rng.integer(1, 3));
    const std::size_t caps = static_cast<std::size_t>(rng.integer(1, 2));
    const std::size_t ksize = rng.uniform() < 0.75 ? 3 : 5;

    FeatureMap f(n, n, kin);
    for (double& v : f.data()) v = rng.normal();
    CapsuleField poses(n / stride, n / stride, caps);
    for (std::size_t r = 0; r < poses.height(); ++r) {
      for (std::size_t c = 0; c < poses.width(); ++c) {
        for (std::size_t ch = 0; ch < caps; ++ch) {
          // A quarter of the poses are exact quarter turns.
          poses.pose(r, c, ch) = rng.uniform() < 0.25 ? Rot2::quarter_turn(rng.integer(0, 3)) : rng.rotation();
          poses.activation(r, c, ch) = 1.0;
        }
      }
    }
    std::vector<ContinuousKernel> kernels;
    for (std::size_t ch = 0; ch < caps; ++ch) {
      ContinuousKernel k = ContinuousKernel::square(ksize, kin, kout);
      for (double& w : k.taps) w = rng.normal();
      kernels.push_back(std::move(k));
    }
    const FeatureMap out = sparse_group_conv(f, poses, kernels);

    const int q = rng.integer(1, 3);
    const FeatureMap rotated = sparse_group_conv(rotate_quarter(f, q), rotate_quarter(poses, q), kernels);
    rep.max_feature_dev = std::max(rep.max_feature_dev, max_abs_diff(rotated, rotate_quarter(out, q)));

    const int dr = rng.integer(-1, 1);
    const int dc = rng.integer(-1, 1);
    const int s = static_cast<int>(stride);
    const FeatureMap shifted = sparse_group_conv(shift(f, dr * s, dc * s), shift(poses, dr, dc), kernels);
    // Cells whose sampling footprint stays inside the grid before and after
    // the shift.
    const double reach = (static_cast<double>(ksize) - 1.0) / 2.0 * std::numbers::sqrt2 + 1.0;
    auto inside = [&](Vec2 ctr) {
      return ctr.x - reach >= 0.0 && ctr.y - reach >= 0.0 && ctr.x + reach <= static_cast<double>(n - 1) &&
             ctr.y + reach <= static_cast<double>(n - 1);
    };
    for (std::size_t r = 0; r < out.height(); ++r) {
      for (std::size_t c = 0; c < out.width(); ++c) {
        const long r2 = static_cast<long>(r) + dr;
        const long c2 = static_cast<long>(c) + dc;
        if (r2 < 0 || c2 < 0 || r2 >= static_cast<long>(out.height()) || c2 >= static_cast<long>(out.width())) continue;
        const Vec2 ctr = output_center(r, c, out.height(), out.width(), n, n);
        const Vec2 ctr2 = output_center(static_cast<std::size_t>(r2), static_cast<std::size_t>(c2), out.height(),
                                        out.width(), n, n);
        if (!inside(ctr) || !inside(ctr2)) continue;
        for (std::size_t ch = 0; ch < out.channels(); ++ch) {
          rep.max_shift_dev = std::max(
              rep.max_shift_dev,
              std::abs(out.at(r, c, ch) - shifted.at(static_cast<std::size_t>(r2), static_cast<std::size_t>(c2), ch)));
        }
      }
    }
  }
  finish(rep);
  return rep;
}

// ---------------------------------------------------------------- network

EquivarianceReport verify_network(std::uint64_t seed, std::size_t networks, std::size_t images,
                                  double tolerance, const NetworkConfig& cfg) {
  require_trials(networks, "verify_network");
  require_trials(images, "verify_network");
  EquivarianceReport rep;
  rep.theorem = "network";
  rep.trials = networks * images;
  rep.tolerance = tolerance;
  rep.seed = seed;

  Rng rng(seed);
  const std::size_t size = cfg.image_size;
  for (std::size_t net = 0; net < networks; ++net) {
    const TrainState state = TrainState::random(cfg, rng.fork());
    const std::vector<GlyphSample> glyphs = make_glyph_dataset(images, kGlyphShapes, size, rng.fork());
    for (std::size_t i = 0; i < images; ++i) {
      ImageGrid img = glyphs[i].image;
      if (i % 2 == 1) {
        // Sparse noise image.
        for (double& p : img.pixels()) p = rng.uniform() < 0.6 ? 0.0 : rng.uniform();
      }
      const ForwardResult base = forward(state, img);
      for (int k = 1; k < 4; ++k) {
        const ForwardResult moved = forward(state, rotate_quarter(img, k));
        const Rot2 g = Rot2::quarter_turn(k);
        for (std::size_t j = 0; j < cfg.classes; ++j) {
          rep.max_act_dev = std::max(rep.max_act_dev,
                                     std::abs(base.capsule_activations[j] - moved.capsule_activations[j]));
          rep.max_act_dev = std::max(rep.max_act_dev, std::abs(base.conv_logits[j] - moved.conv_logits[j]));
          if (base.capsule_activations[j] > 0.0 || moved.capsule_activations[j] > 0.0) {
            rep.max_pose_dev =
                std::max(rep.max_pose_dev, pose_deviation(moved.final_poses[j], compose(g, base.final_poses[j])));
          }
        }
      }
    }
  }
  finish(rep);
  return rep;
}

// ---------------------------------------------------------------- reports

namespace {

nlohmann::ordered_json report_json(const EquivarianceReport& r) {
  nlohmann::ordered_json j;
  j["theorem"] = r.theorem;
  j["trials"] = r.trials;
  j["max_pose_dev"] = r.max_pose_dev;
  j["max_act_dev"] = r.max_act_dev;
  j["max_feature_dev"] = r.max_feature_dev;
  j["max_shift_dev"] = r.max_shift_dev;
  j["tolerance"] = r.tolerance;
  j["passed"] = r.passed;
  j["expected_fail"] = r.expected_fail;
  j["as_expected"] = r.as_expected();
  j["seed"] = r.seed;
  return j;
}

}  // namespace

std::string report_to_json(const EquivarianceReport& report) { return report_json(report).dump(2) + "\n"; }

std::string reports_to_json(const std::vector<EquivarianceReport>& reports) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = 1;
  bool ok = true;
  doc["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    doc["reports"].push_back(report_json(r));
    ok = ok && r.as_expected();
  }
  doc["all_as_expected"] = ok;
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------- pose error

std::string pose_mode_name(PoseMode mode) { return mode == PoseMode::kCapsule ? "capsule" : "naive"; }

PoseErrorReport pose_error_eval(const TrainState& state, const std::vector<GlyphSample>& samples, PoseMode mode,
                                const PoseErrorOptions& options) {
  PoseErrorReport rep;
  rep.mode = mode;
  const std::size_t classes = state.config.classes;
  for (std::size_t c = 0; c < classes; ++c) {
    PoseErrorHistogram h;
    h.label = c;
    for (std::size_t b = 0; b <= kPoseErrorBins; ++b) h.bin_edges.push_back(10.0 * static_cast<double>(b));
    h.counts.assign(kPoseErrorBins, 0);
    rep.classes.push_back(std::move(h));
  }
  std::vector<std::vector<double>> errors(classes);

  Rng rng(options.seed);
  for (const auto& s : samples) {
    if (s.label >= classes) throw std::invalid_argument("pose_error_eval: sample label outside the class range");
    double theta = 0.0;
    switch (options.rotations) {
      case RotationSampling::kUniform: theta = rng.uniform(0.0, 2.0 * std::numbers::pi); break;
      case RotationSampling::kQuarterTurns: theta = static_cast<double>(rng.below(4)) * std::numbers::pi / 2.0; break;
      case RotationSampling::kIdentity: break;
    }
    const ImageGrid rotated = rotate_image(s.image, theta);
    Rot2 before, after;
    if (mode == PoseMode::kCapsule) {
      before = forward(state, s.image).final_poses[s.label];
      after = forward(state, rotated).final_poses[s.label];
    } else {
      const std::size_t levels = state.stages.size();
      before = naive_pose(s.image, state.config.geometry, levels);
      after = naive_pose(rotated, state.config.geometry, levels);
    }
    const double diff = std::remainder(compose(inverse(before), after).angle() - theta, 2.0 * std::numbers::pi);
    const double deg = std::abs(diff) * 180.0 / std::numbers::pi;
    errors[s.label].push_back(deg);
    PoseErrorHistogram& h = rep.classes[s.label];
    const std::size_t bin = std::min(kPoseErrorBins - 1, static_cast<std::size_t>(deg / 10.0));
    ++h.counts[bin];
    ++h.samples;
  }
  std::vector<double> all;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!errors[c].empty()) {
      rep.classes[c].mean_error_degrees = canonical_sum(errors[c]) / static_cast<double>(errors[c].size());
    }
    all.insert(all.end(), errors[c].begin(), errors[c].end());
  }
  rep.samples = all.size();
  if (!all.empty()) rep.mean_error_degrees = canonical_sum(all) / static_cast<double>(all.size());
  return rep;
}

std::string histogram_csv(const PoseErrorReport& report) {
  std::ostringstream out;
  out << "class,bin_low_deg,bin_high_deg,count\n";
  for (const auto& h : report.classes) {
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      out << h.label << ',' << h.bin_edges[b] << ',' << h.bin_edges[b + 1] << ',' << h.counts[b] << '\n';
    }
  }
  return out.str();
}

std::string pose_summary_json(const PoseErrorReport& capsule, const PoseErrorReport& naive,
                              const PoseErrorOptions& options) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = 1;
  doc["seed"] = options.seed;
  doc["rotations"] = options.rotations == RotationSampling::kUniform        ? "uniform"
                     : options.rotations == RotationSampling::kQuarterTurns ? "quarter_turns"
                                                                            : "identity";
  for (const PoseErrorReport* r : {&capsule, &naive}) {
    nlohmann::ordered_json m;
    m["samples"] = r->samples;
    m["mean_error_deg"] = r->mean_error_degrees;
    nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
    for (const auto& h : r->classes) {
      per_class.push_back({{"class", h.label}, {"samples", h.samples}, {"mean_error_deg", h.mean_error_degrees}});
    }
    m["classes"] = per_class;
    doc[pose_mode_name(r->mode)] = m;
  }
  doc["capsule_below_naive"] = capsule.mean_error_degrees < naive.mean_error_degrees;
  return doc.dump(2) + "\n";
}

}  // namespace equicaps
