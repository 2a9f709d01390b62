#include "equicaps/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "equicaps/rng.hpp"

namespace equicaps {

// ---------------------------------------------------------------- config

NetworkConfig NetworkConfig::with_classes(std::size_t classes) {
  NetworkConfig cfg;
  cfg.classes = classes;
  cfg.stages.back().capsules = classes;
  return cfg;
}

void NetworkConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("NetworkConfig: no stages");
  if (classes < 2) throw std::invalid_argument("NetworkConfig: need at least two classes");
  if (stages.back().capsules != classes) {
    throw std::invalid_argument("NetworkConfig: final stage must have one capsule per class (" +
                                std::to_string(classes) + "), got " +
                                std::to_string(stages.back().capsules));
  }
  for (const auto& s : stages) {
    if (s.capsules == 0 || s.channels == 0 || s.iterations < 0) {
      throw std::invalid_argument("NetworkConfig: invalid stage specification");
    }
  }
  if (kernel_size % 2 == 0) throw std::invalid_argument("NetworkConfig: kernel size must be odd");
  if (!(margin_start > 0.0 && margin_start < 1.0 && margin_end > 0.0 && margin_end < 1.0)) {
    throw std::invalid_argument("NetworkConfig: margins must lie in (0, 1)");
  }
  if (batch_size == 0) throw std::invalid_argument("NetworkConfig: batch size must be positive");
  if (epochs < 0) throw std::invalid_argument("NetworkConfig: negative epoch count");
  std::size_t extent = image_size;
  for (std::size_t l = 0; l < stages.size(); ++l) extent = geometry.output_extent(extent);
}

double NetworkConfig::margin_at(int epoch) const {
  if (epochs <= 1) return margin_start;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return margin_start + (margin_end - margin_start) * std::min(1.0, std::max(0.0, t));
}

// ---------------------------------------------------------------- state

namespace {

// Activations below one shrink the conv signal at every stage; the gain keeps
// the pooled features at unit scale for the default depth.
constexpr double kTapGain = 4.0;

std::size_t stage_input_caps(const NetworkConfig& cfg, std::size_t l) {
  return l == 0 ? 1 : cfg.stages[l - 1].capsules;
}

std::size_t stage_input_channels(const NetworkConfig& cfg, std::size_t l) {
  return l == 0 ? 1 : cfg.stages[l - 1].capsules * cfg.stages[l - 1].channels;
}

void fill_mlp(KernelMLP& mlp, Rng& rng) {
  auto p = mlp.params();
  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(mlp.hidden()));
  for (std::size_t i = mlp.w1_offset(); i < mlp.b1_offset(); ++i) p[i] = rng.normal();
  for (std::size_t i = mlp.b1_offset(); i < mlp.w2_offset(); ++i) p[i] = 0.5 * rng.normal();
  for (std::size_t i = mlp.w2_offset(); i < mlp.b2_offset(); ++i) p[i] = w2_scale * rng.normal();
  for (std::size_t i = mlp.b2_offset(); i < p.size(); ++i) p[i] = rng.normal();
}

// Copies the generator outputs of capsule 0 to every output capsule.
void symmetrize_outputs(KernelMLP& mlp) {
  auto p = mlp.params();
  const std::size_t c = mlp.in_caps();
  const std::size_t m = mlp.out_caps();
  const std::size_t h = mlp.hidden();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 1; j < m; ++j) {
      for (std::size_t d = 0; d < 2; ++d) {
        const std::size_t src = 2 * (ch * m) + d;
        const std::size_t dst = 2 * (ch * m + j) + d;
        for (std::size_t u = 0; u < h; ++u) p[mlp.w2_offset() + dst * h + u] = p[mlp.w2_offset() + src * h + u];
        p[mlp.b2_offset() + dst] = p[mlp.b2_offset() + src];
      }
    }
  }
}

TrainState build_state(const NetworkConfig& cfg, std::uint64_t seed, bool fully_random) {
  cfg.validate();
  Rng rng(seed);
  TrainState st;
  st.config = cfg;
  st.seed = seed;
  for (std::size_t l = 0; l < cfg.stages.size(); ++l) {
    const StageSpec& spec = cfg.stages[l];
    StageParams sp;
    sp.mlp = KernelMLP(stage_input_caps(cfg, l), spec.capsules, cfg.mlp_hidden);
    fill_mlp(sp.mlp, rng);
    if (!fully_random && l + 1 == cfg.stages.size()) symmetrize_outputs(sp.mlp);
    sp.sigma = cfg.sigma_init;
    if (fully_random) sp.sigma = {rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)};

    const std::size_t kin = stage_input_channels(cfg, l);
    const double tap_scale =
        kTapGain * std::sqrt(2.0 / static_cast<double>(cfg.kernel_size * cfg.kernel_size * kin));
    for (std::size_t j = 0; j < spec.capsules; ++j) {
      ContinuousKernel k = ContinuousKernel::square(cfg.kernel_size, kin, spec.channels);
      for (double& t : k.taps) t = tap_scale * rng.normal();
      sp.kernels.push_back(std::move(k));
    }
    sp.bias.assign(spec.capsules * spec.channels, 0.0);
    if (fully_random) {
      for (double& b : sp.bias) b = 0.1 * rng.normal();
    }
    st.stages.push_back(std::move(sp));
  }
  const std::size_t width = st.feature_width();
  st.head_weight.assign(cfg.classes * width, 0.0);
  st.head_bias.assign(cfg.classes, 0.0);
  if (fully_random) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(width));
    for (double& w : st.head_weight) w = scale * rng.normal();
    for (double& b : st.head_bias) b = 0.1 * rng.normal();
  }
  return st;
}

}  // namespace

TrainState TrainState::initialize(const NetworkConfig& cfg, std::uint64_t seed) {
  return build_state(cfg, seed, false);
}

TrainState TrainState::random(const NetworkConfig& cfg, std::uint64_t seed) {
  return build_state(cfg, seed, true);
}

std::size_t TrainState::feature_width() const {
  return config.stages.back().capsules * config.stages.back().channels;
}

std::size_t TrainState::parameter_count() const {
  std::size_t n = head_weight.size() + head_bias.size();
  for (const auto& s : stages) {
    n += s.mlp.param_count() + 2 + s.bias.size();
    for (const auto& k : s.kernels) n += k.taps.size();
  }
  return n;
}

bool TrainState::all_finite() const {
  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(head_weight) || !finite(head_bias)) return false;
  for (const auto& s : stages) {
    if (!finite(s.mlp.params()) || !finite(s.bias) || !std::isfinite(s.sigma.alpha) ||
        !std::isfinite(s.sigma.beta)) {
      return false;
    }
    for (const auto& k : s.kernels) {
      if (!finite(k.taps)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- initial poses

CapsuleField init_poses(const ImageGrid& img) {
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  auto px = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return 0.0;
    return img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  // Each three-tap column/row sum is formed as (a + c) + 2b so that mirrored
  // neighbourhoods give bitwise mirrored gradients.
  std::vector<double> gx(h * w), gy(h * w), mag(h * w);
  double peak = 0.0;
  for (long r = 0; r < static_cast<long>(h); ++r) {
    for (long c = 0; c < static_cast<long>(w); ++c) {
      const double right = (px(r - 1, c + 1) + px(r + 1, c + 1)) + 2.0 * px(r, c + 1);
      const double left = (px(r - 1, c - 1) + px(r + 1, c - 1)) + 2.0 * px(r, c - 1);
      const double down = (px(r + 1, c - 1) + px(r + 1, c + 1)) + 2.0 * px(r + 1, c);
      const double up = (px(r - 1, c - 1) + px(r - 1, c + 1)) + 2.0 * px(r - 1, c);
      const std::size_t i = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
      gx[i] = right - left;
      gy[i] = down - up;
      mag[i] = std::hypot(gx[i], gy[i]);
      peak = std::max(peak, mag[i]);
    }
  }
  CapsuleField field(h, w, 1);
  if (!(peak > 0.0)) return field;
  const double floor = 1e-12 * peak;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      if (mag[i] <= floor) continue;
      field.pose(r, c, 0) = Rot2::from_vector(gx[i], gy[i]);
      field.activation(r, c, 0) = mag[i] / peak;
    }
  }
  return field;
}

// ---------------------------------------------------------------- forward

namespace {

void run_stage(const TrainState& state, std::size_t l, ForwardTrace& trace) {
  const NetworkConfig& cfg = state.config;
  const StageParams& sp = state.stages[l];
  RoutingConfig rc;
  rc.iterations = cfg.stages[l].iterations;
  rc.sigma = sp.sigma;
  rc.agreement = AgreementMode::kActiveInputs;

  const CapsuleField& caps_in = trace.capsules[l];
  FieldAggregation agg = aggregate_field(caps_in, sp.mlp, rc, cfg.geometry);
  CapsuleField& caps_out = trace.capsules[l + 1];
  caps_out = std::move(agg.output);

  FeatureMap pre = sparse_group_conv(trace.features[l], caps_out, sp.kernels);
  const std::size_t kc = cfg.stages[l].channels;
  FeatureMap feat(pre.height(), pre.width(), pre.channels());
  for (std::size_t r = 0; r < pre.height(); ++r) {
    for (std::size_t c = 0; c < pre.width(); ++c) {
      for (std::size_t j = 0; j < caps_out.channels(); ++j) {
        const double a = caps_out.activation(r, c, j);
        for (std::size_t k = 0; k < kc; ++k) {
          double& z = pre.at(r, c, j * kc + k);
          z += sp.bias[j * kc + k];
          const double y = a * z;
          feat.at(r, c, j * kc + k) = y > 0.0 ? y : 0.0;
        }
      }
    }
  }
  trace.preact[l + 1] = std::move(pre);
  trace.features[l + 1] = std::move(feat);
}

void readout(const TrainState& state, ForwardTrace& trace) {
  const CapsuleField& last = trace.capsules.back();
  const FeatureMap& feat = trace.features.back();
  const std::size_t cells = last.height() * last.width();
  const std::size_t classes = state.config.classes;

  ForwardResult& res = trace.result;
  res.capsule_activations.assign(classes, 0.0);
  res.final_poses.assign(classes, Rot2{});
  std::vector<double> acts(cells);
  std::vector<Rot2> poses(cells);
  for (std::size_t j = 0; j < classes; ++j) {
    for (std::size_t t = 0; t < cells; ++t) {
      acts[t] = last.activation(t / last.width(), t % last.width(), j);
      poses[t] = last.pose(t / last.width(), t % last.width(), j);
    }
    res.capsule_activations[j] = canonical_sum(acts) / static_cast<double>(cells);
    try {
      res.final_poses[j] = weighted_mean(std::span<const Rot2>(poses), std::span<const double>(acts));
    } catch (const DegenerateMean&) {
      res.final_poses[j] = Rot2{};
    }
  }

  const std::size_t width = feat.channels();
  trace.pooled.assign(width, 0.0);
  std::vector<double> column(cells);
  for (std::size_t ch = 0; ch < width; ++ch) {
    for (std::size_t t = 0; t < cells; ++t) column[t] = feat.data()[t * width + ch];
    trace.pooled[ch] = canonical_sum(column) / static_cast<double>(cells);
  }
  res.conv_logits.assign(classes, 0.0);
  for (std::size_t j = 0; j < classes; ++j) {
    double z = state.head_bias[j];
    for (std::size_t ch = 0; ch < width; ++ch) z += state.head_weight[j * width + ch] * trace.pooled[ch];
    res.conv_logits[j] = z;
  }
}

void check_input(const TrainState& state, const ImageGrid& img) {
  std::size_t h = img.height();
  std::size_t w = img.width();
  const BlockGeometry geom = state.config.geometry;
  for (std::size_t l = 0; l < state.stages.size(); ++l) {
    if (h == 0 || w == 0 || h % static_cast<std::size_t>(geom.stride) != 0 ||
        w % static_cast<std::size_t>(geom.stride) != 0) {
      throw ShapeError("forward: image " + std::to_string(img.height()) + "x" +
                       std::to_string(img.width()) + " not divisible by the stage strides");
    }
    h = geom.output_extent(h);
    w = geom.output_extent(w);
  }
}

}  // namespace

void forward_traced(const TrainState& state, const ImageGrid& img, ForwardTrace& trace) {
  check_input(state, img);
  const std::size_t stages = state.stages.size();
  trace.capsules.assign(stages + 1, CapsuleField{});
  trace.features.assign(stages + 1, FeatureMap{});
  trace.preact.assign(stages + 1, FeatureMap{});
  trace.capsules[0] = init_poses(img);
  trace.features[0] = img.to_feature_map();
  forward_from(state, 1, trace);
}

void forward_from(const TrainState& state, std::size_t first_stage, ForwardTrace& trace) {
  if (first_stage < 1 || first_stage > state.stages.size()) {
    throw std::invalid_argument("forward_from: stage index out of range");
  }
  for (std::size_t l = first_stage - 1; l < state.stages.size(); ++l) run_stage(state, l, trace);
  readout(state, trace);
}

ForwardResult forward(const TrainState& state, const ImageGrid& img) {
  ForwardTrace trace;
  forward_traced(state, img, trace);
  return std::move(trace.result);
}

// ---------------------------------------------------------------- losses

double spread_loss(std::span<const double> activations, std::size_t target, double margin) {
  if (target >= activations.size()) {
    throw std::invalid_argument("spread_loss: target " + std::to_string(target) + " out of range");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < activations.size(); ++i) {
    if (i == target) continue;
    const double gap = margin - (activations[target] - activations[i]);
    if (gap > 0.0) loss += gap * gap;
  }
  return loss;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

double cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw std::invalid_argument("cross_entropy: target " + std::to_string(target) + " out of range");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - peak);
  return std::log(z) - (logits[target] - peak);
}

std::size_t predict(const ForwardResult& out) {
  const std::vector<double> p = softmax(out.conv_logits);
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double score = out.capsule_activations[j] + p[j];
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

Rot2 naive_pose(const ImageGrid& img, BlockGeometry geom, std::size_t levels) {
  CapsuleField field = init_poses(img);
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t oh = geom.output_extent(field.height());
    const std::size_t ow = geom.output_extent(field.width());
    CapsuleField next(oh, ow, 1);
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        const ReceptiveField rf = extract_block(field, geom, r, c);
        const CapsuleInput<Rot2> flat = rf.flatten();
        std::vector<double> ones(flat.size());
        bool any = false;
        for (std::size_t i = 0; i < flat.size(); ++i) {
          ones[i] = flat.activations[i] > 0.0 ? 1.0 : 0.0;
          any = any || ones[i] > 0.0;
        }
        if (!any) continue;
        try {
          next.pose(r, c, 0) = weighted_mean(std::span<const Rot2>(flat.poses), std::span<const double>(ones));
          next.activation(r, c, 0) = 1.0;
        } catch (const DegenerateMean&) {
        }
      }
    }
    field = std::move(next);
  }
  std::vector<double> ones(field.activations().size());
  for (std::size_t i = 0; i < ones.size(); ++i) ones[i] = field.activations()[i] > 0.0 ? 1.0 : 0.0;
  try {
    return weighted_mean(std::span<const Rot2>(field.poses()), std::span<const double>(ones));
  } catch (const DegenerateMean&) {
    return Rot2{};
  }
}

}  // namespace equicaps
