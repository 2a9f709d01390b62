#include "equicaps/training.hpp"

#include <algorithm>
#include <cmath>

#include "equicaps/rng.hpp"

namespace equicaps {

std::vector<double*> enumerate_parameters(TrainState& state) {
  std::vector<double*> refs;
  refs.reserve(state.parameter_count());
  for (StageParams& sp : state.stages) {
    for (double& p : sp.mlp.params()) refs.push_back(&p);
    refs.push_back(&sp.sigma.alpha);
    refs.push_back(&sp.sigma.beta);
    for (auto& k : sp.kernels) {
      for (double& t : k.taps) refs.push_back(&t);
    }
    for (double& b : sp.bias) refs.push_back(&b);
  }
  for (double& w : state.head_weight) refs.push_back(&w);
  for (double& b : state.head_bias) refs.push_back(&b);
  return refs;
}

double sample_loss(const ForwardResult& out, std::size_t label, double margin) {
  return spread_loss(out.capsule_activations, label, margin) + cross_entropy(out.conv_logits, label);
}

double mean_loss(const TrainState& state, const std::vector<GlyphSample>& samples, double margin) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += sample_loss(forward(state, s.image), s.label, margin);
  return total / static_cast<double>(samples.size());
}

double evaluate_accuracy(const TrainState& state, const std::vector<GlyphSample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) hits += predict(forward(state, s.image)) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

TrainState zero_like(const TrainState& state) {
  TrainState g = state;
  for (double* p : enumerate_parameters(g)) *p = 0.0;
  return g;
}

namespace {

// d(loss)/d(pose components) and d(loss)/d(activation) for every capsule of a field.
struct FieldGrad {
  std::vector<Vec2> pose;
  std::vector<double> act;

  explicit FieldGrad(const CapsuleField& f)
      : pose(f.poses().size(), Vec2{0.0, 0.0}), act(f.activations().size(), 0.0) {}
};

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
Vec2 as_vec(const Rot2& r) { return {r.c(), r.s()}; }

// Backward through y = x / |x| with y already known.
Vec2 normalize_backward(Vec2 g, Vec2 y, double length) {
  const double radial = dot(g, y);
  return {(g.x - radial * y.x) / length, (g.y - radial * y.y) / length};
}

// Complex product v = p * t: dL/dp = g * conj(t).
Vec2 times_conj(Vec2 g, Vec2 t) { return {g.x * t.x + g.y * t.y, g.y * t.x - g.x * t.y}; }

double pixel(const FeatureMap& f, long r, long c, std::size_t ch) {
  if (r < 0 || c < 0 || r >= static_cast<long>(f.height()) || c >= static_cast<long>(f.width())) return 0.0;
  return f.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
}

// Spatial derivative of the bilinear sample at center + disp, per channel,
// contracted with `upstream` (one value per channel). Mirrors bilinear_point.
Vec2 sample_position_grad(const FeatureMap& f, Vec2 center, Vec2 disp, const double* upstream) {
  const double bx = std::floor(center.x);
  const double by = std::floor(center.y);
  const double lx = (center.x - bx) + disp.x;
  const double ly = (center.y - by) + disp.y;
  const double fx0 = std::floor(lx);
  const double fy0 = std::floor(ly);
  const double fx = lx - fx0;
  const double fy = ly - fy0;
  const long x0 = static_cast<long>(bx) + static_cast<long>(fx0);
  const long y0 = static_cast<long>(by) + static_cast<long>(fy0);
  Vec2 g{0.0, 0.0};
  for (std::size_t ch = 0; ch < f.channels(); ++ch) {
    if (upstream[ch] == 0.0) continue;
    const double f00 = pixel(f, y0, x0, ch);
    const double f01 = pixel(f, y0, x0 + 1, ch);
    const double f10 = pixel(f, y0 + 1, x0, ch);
    const double f11 = pixel(f, y0 + 1, x0 + 1, ch);
    g.x += upstream[ch] * ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10));
    g.y += upstream[ch] * ((1.0 - fx) * (f10 - f00) + fx * (f11 - f01));
  }
  return g;
}

// Conv stage l (1-based): consumes dfeat for features[l]; produces parameter
// gradients, capsule gradients for capsules[l] and, for l > 1, dfeat for
// features[l - 1].
void conv_backward(const TrainState& state, const ForwardTrace& trace, std::size_t l, const FeatureMap& dfeat,
                   TrainState& grad, FieldGrad& dcaps, FeatureMap* dinput) {
  const StageParams& sp = state.stages[l - 1];
  StageParams& gp = grad.stages[l - 1];
  const CapsuleField& caps = trace.capsules[l];
  const FeatureMap& pre = trace.preact[l];
  const FeatureMap& input = trace.features[l - 1];
  const std::size_t kc = state.config.stages[l - 1].channels;
  const std::size_t kin = input.channels();

  std::vector<double> dz(kc);
  std::vector<double> dpatch;
  for (std::size_t r = 0; r < caps.height(); ++r) {
    for (std::size_t c = 0; c < caps.width(); ++c) {
      const Vec2 center = output_center(r, c, caps.height(), caps.width(), input.height(), input.width());
      for (std::size_t j = 0; j < caps.channels(); ++j) {
        const double a = caps.activation(r, c, j);
        if (a == 0.0) continue;
        bool any = false;
        double da = 0.0;
        for (std::size_t k = 0; k < kc; ++k) {
          const double z = pre.at(r, c, j * kc + k);
          const double g = a * z > 0.0 ? dfeat.at(r, c, j * kc + k) : 0.0;
          da += g * z;
          dz[k] = g * a;
          any = any || dz[k] != 0.0;
        }
        const std::size_t idx = caps.index(r, c, j);
        dcaps.act[idx] += da;
        if (!any) continue;
        for (std::size_t k = 0; k < kc; ++k) gp.bias[j * kc + k] += dz[k];

        const ContinuousKernel& kernel = sp.kernels[j];
        ContinuousKernel& gk = gp.kernels[j];
        const Rot2& pose = caps.pose(r, c, j);
        const std::vector<double> patch = warp_patch(input, center, pose, kernel.offsets);
        dpatch.assign(kernel.offsets.size() * kin, 0.0);
        for (std::size_t o = 0; o < kernel.offsets.size(); ++o) {
          for (std::size_t i = 0; i < kin; ++i) {
            const double x = patch[o * kin + i];
            double back = 0.0;
            for (std::size_t k = 0; k < kc; ++k) {
              gk.tap(o, i, k) += x * dz[k];
              back += kernel.tap(o, i, k) * dz[k];
            }
            dpatch[o * kin + i] = back;
          }
        }
        Vec2 dpose{0.0, 0.0};
        for (std::size_t o = 0; o < kernel.offsets.size(); ++o) {
          const Vec2 off = kernel.offsets[o];
          const Vec2 disp = rotate_offset(pose, off);
          const Vec2 dpos = sample_position_grad(input, center, disp, dpatch.data() + o * kin);
          // disp = (c ox - s oy, s ox + c oy)
          dpose.x += dpos.x * off.x + dpos.y * off.y;
          dpose.y += -dpos.x * off.y + dpos.y * off.x;
          if (dinput == nullptr) continue;
          const SamplePoint spt = bilinear_point(input.height(), input.width(), center, disp);
          for (int t = 0; t < spt.count; ++t) {
            double* dst = dinput->data().data() + spt.taps[t].cell * kin;
            for (std::size_t i = 0; i < kin; ++i) dst[i] += spt.taps[t].weight * dpatch[o * kin + i];
          }
        }
        dcaps.pose[idx].x += dpose.x;
        dcaps.pose[idx].y += dpose.y;
      }
    }
  }
}

// Routing backward for one block. gpose/gact: gradients w.r.t. the outputs;
// accumulates into gp/ga (inputs), gt (transforms) and the sigma gradient.
void route_backward(const CapsuleInput<Rot2>& in, const TransformSet<Rot2>& transforms, const RoutingConfig& rc,
                    const RoutingTrace<Rot2>& rt, const CapsuleOutput<Rot2>& out, const std::vector<Vec2>& gpose,
                    const std::vector<double>& gact, std::vector<Vec2>& gp, std::vector<double>& ga,
                    std::vector<Vec2>& gt, SigmaParams& gsigma) {
  const std::size_t n = in.size();
  const std::size_t m = out.size();
  const double alpha = rc.sigma.alpha;
  std::vector<Vec2> gv(n * m, Vec2{0.0, 0.0});
  std::vector<double> gw(n);
  const std::size_t estimates = rt.poses.size();

  for (std::size_t j = 0; j < m; ++j) {
    if (!out.alive(j)) continue;
    if (gpose[j].x == 0.0 && gpose[j].y == 0.0 && gact[j] == 0.0) continue;
    Vec2 gmu = gpose[j];

    {
      const Vec2 mu = as_vec(rt.poses[estimates - 1][j]);
      double total = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(in.activations[i] > 0.0)) continue;
        total += dot(mu, as_vec(rt.votes.at(i, j)));
        ++count;
      }
      const double mean_dot = total / static_cast<double>(count);
      const double act = out.activations[j];
      const double gq = gact[j] * act * (1.0 - act);
      gsigma.alpha += gq * mean_dot;
      gsigma.beta += gq;
      const double gdot = gq * alpha / static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(in.activations[i] > 0.0)) continue;
        const Vec2 v = as_vec(rt.votes.at(i, j));
        gmu.x += gdot * v.x;
        gmu.y += gdot * v.y;
        gv[i * m + j].x += gdot * mu.x;
        gv[i * m + j].y += gdot * mu.y;
      }
    }

    for (std::size_t e = estimates; e-- > 0;) {
      const std::vector<double>& w = rt.weights[e];
      Vec2 sum{0.0, 0.0};
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2 v = as_vec(rt.votes.at(i, j));
        sum.x += w[i * m + j] * v.x;
        sum.y += w[i * m + j] * v.y;
      }
      bool uniform = false;
      if (std::hypot(sum.x, sum.y) < kDegenerateMeanThreshold) {
        uniform = true;
        sum = {0.0, 0.0};
        for (std::size_t i = 0; i < n; ++i) {
          if (!(in.activations[i] > 0.0)) continue;
          sum.x += rt.votes.at(i, j).c();
          sum.y += rt.votes.at(i, j).s();
        }
      }
      const Vec2 mu = as_vec(rt.poses[e][j]);
      const Vec2 gsum = normalize_backward(gmu, mu, std::hypot(sum.x, sum.y));
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2 v = as_vec(rt.votes.at(i, j));
        const double wi = uniform ? (in.activations[i] > 0.0 ? 1.0 : 0.0) : w[i * m + j];
        gv[i * m + j].x += wi * gsum.x;
        gv[i * m + j].y += wi * gsum.y;
        gw[i] = uniform ? 0.0 : dot(gsum, v);
      }
      Vec2 gprev{0.0, 0.0};
      if (e == 0) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += gw[i];
      } else {
        const Vec2 prev = as_vec(rt.poses[e - 1][j]);
        for (std::size_t i = 0; i < n; ++i) {
          const double a = in.activations[i];
          if (gw[i] == 0.0) continue;
          const Vec2 v = as_vec(rt.votes.at(i, j));
          const double d = dot(prev, v);
          const double s = rc.sigma(d);
          ga[i] += gw[i] * s;
          const double gl = gw[i] * a * s * (1.0 - s);
          gsigma.alpha += gl * d;
          gsigma.beta += gl;
          const double gd = gl * alpha;
          gprev.x += gd * v.x;
          gprev.y += gd * v.y;
          gv[i * m + j].x += gd * prev.x;
          gv[i * m + j].y += gd * prev.y;
        }
      }
      gmu = gprev;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = as_vec(in.poses[i]);
    for (std::size_t j = 0; j < m; ++j) {
      const Vec2 g = gv[i * m + j];
      if (g.x == 0.0 && g.y == 0.0) continue;
      const Vec2 t = as_vec(transforms.at(i, j));
      const Vec2 dp = times_conj(g, t);
      const Vec2 dt = times_conj(g, p);
      gp[i].x += dp.x;
      gp[i].y += dp.y;
      gt[i * m + j].x += dt.x;
      gt[i * m + j].y += dt.y;
    }
  }
}

// Aggregation stage l (1-based): consumes capsule gradients for capsules[l];
// produces MLP / sigma gradients and, for l > 1, capsule gradients for
// capsules[l - 1].
void aggregation_backward(const TrainState& state, const ForwardTrace& trace, std::size_t l,
                          const FieldGrad& dcaps, TrainState& grad, FieldGrad* dprev) {
  const StageParams& sp = state.stages[l - 1];
  StageParams& gp = grad.stages[l - 1];
  const KernelMLP& mlp = sp.mlp;
  const BlockGeometry geom = state.config.geometry;
  const CapsuleField& input = trace.capsules[l - 1];
  const CapsuleField& output = trace.capsules[l];
  const std::size_t c = input.channels();
  const std::size_t m = mlp.out_caps();
  const std::size_t h = mlp.hidden();
  RoutingConfig rc;
  rc.iterations = state.config.stages[l - 1].iterations;
  rc.sigma = sp.sigma;
  rc.agreement = AgreementMode::kActiveInputs;

  const std::span<const double> prm = mlp.params();
  const double* w1 = prm.data() + mlp.w1_offset();
  const double* b1 = prm.data() + mlp.b1_offset();
  const double* w2 = prm.data() + mlp.w2_offset();
  const double* b2 = prm.data() + mlp.b2_offset();
  const std::span<double> gprm = gp.mlp.params();
  double* gw1 = gprm.data() + mlp.w1_offset();
  double* gb1 = gprm.data() + mlp.b1_offset();
  double* gw2 = gprm.data() + mlp.w2_offset();
  double* gb2 = gprm.data() + mlp.b2_offset();

  std::vector<Vec2> gpose(m);
  std::vector<double> gact(m);
  for (std::size_t r = 0; r < output.height(); ++r) {
    for (std::size_t col = 0; col < output.width(); ++col) {
      bool any = false;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t idx = output.index(r, col, j);
        gpose[j] = dcaps.pose[idx];
        gact[j] = dcaps.act[idx];
        any = any || gpose[j].x != 0.0 || gpose[j].y != 0.0 || gact[j] != 0.0;
      }
      if (!any) continue;

      const ReceptiveField rf = extract_block(input, geom, r, col);
      const CapsuleInput<Rot2> flat = rf.flatten();
      const std::size_t n = flat.size();
      bool live = false;
      bool all = true;
      for (double a : flat.activations) {
        live = live || a > 0.0;
        all = all && a > 0.0;
      }
      if (!live) continue;

      // Mean pose used for alignment.
      std::vector<double> align_w(n);
      Vec2 sum{0.0, 0.0};
      for (std::size_t i = 0; i < n; ++i) {
        align_w[i] = all ? 1.0 : flat.activations[i];
        sum.x += align_w[i] * flat.poses[i].c();
        sum.y += align_w[i] * flat.poses[i].s();
      }
      Rot2 mu;
      try {
        mu = mean_pose(rf);
      } catch (const DegenerateMean&) {
        continue;
      }
      const double sum_len = std::hypot(sum.x, sum.y);

      const std::vector<Vec2> positions = aligned_positions(rf, true);
      double radius = 0.0;
      for (const Vec2& p : rf.positions) radius = std::max(radius, norm(p));
      const double scale = radius > 0.0 ? 1.0 / radius : 1.0;

      // Forward MLP with recorded hidden layer.
      std::vector<std::vector<double>> pre1(rf.size(), std::vector<double>(h));
      std::vector<std::vector<double>> hid(rf.size(), std::vector<double>(h));
      std::vector<std::vector<double>> zs(rf.size(), std::vector<double>(2 * c * m));
      TransformSet<Rot2> transforms(n, m);
      bool degenerate = false;
      for (std::size_t k = 0; k < rf.size() && !degenerate; ++k) {
        for (std::size_t u = 0; u < h; ++u) {
          pre1[k][u] = w1[2 * u] * positions[k].x + w1[2 * u + 1] * positions[k].y + b1[u];
          hid[k][u] = pre1[k][u] > 0.0 ? pre1[k][u] : 0.0;
        }
        for (std::size_t o = 0; o < 2 * c * m; ++o) {
          double z = b2[o];
          for (std::size_t u = 0; u < h; ++u) z += w2[o * h + u] * hid[k][u];
          zs[k][o] = z;
        }
        for (std::size_t q = 0; q < c * m; ++q) {
          if (!(std::hypot(zs[k][2 * q], zs[k][2 * q + 1]) >= kDegenerateTransformThreshold)) {
            degenerate = true;
            break;
          }
          transforms.at(k * c + q / m, q % m) = Rot2::from_vector(zs[k][2 * q], zs[k][2 * q + 1]);
        }
      }
      if (degenerate) continue;

      RoutingTrace<Rot2> rt;
      const CapsuleOutput<Rot2> routed = route(flat, transforms, rc, GroupDistance{}, &rt);

      std::vector<Vec2> gin_pose(n, Vec2{0.0, 0.0});
      std::vector<double> gin_act(n, 0.0);
      std::vector<Vec2> gt(n * m, Vec2{0.0, 0.0});
      route_backward(flat, transforms, rc, rt, routed, gpose, gact, gin_pose, gin_act, gt, gp.sigma);

      // Back through the kernel generator and the alignment.
      Vec2 gmu{0.0, 0.0};
      std::vector<double> gz(2 * c * m);
      std::vector<double> gh(h);
      for (std::size_t k = 0; k < rf.size(); ++k) {
        for (std::size_t q = 0; q < c * m; ++q) {
          const std::size_t i = k * c + q / m;
          const std::size_t j = q % m;
          const Vec2 t = as_vec(transforms.at(i, j));
          const Vec2 g = normalize_backward(gt[i * m + j], t, std::hypot(zs[k][2 * q], zs[k][2 * q + 1]));
          gz[2 * q] = g.x;
          gz[2 * q + 1] = g.y;
        }
        std::fill(gh.begin(), gh.end(), 0.0);
        for (std::size_t o = 0; o < 2 * c * m; ++o) {
          if (gz[o] == 0.0) continue;
          gb2[o] += gz[o];
          for (std::size_t u = 0; u < h; ++u) {
            gw2[o * h + u] += gz[o] * hid[k][u];
            gh[u] += gz[o] * w2[o * h + u];
          }
        }
        Vec2 gpos{0.0, 0.0};
        for (std::size_t u = 0; u < h; ++u) {
          if (!(pre1[k][u] > 0.0)) continue;
          gb1[u] += gh[u];
          gw1[2 * u] += gh[u] * positions[k].x;
          gw1[2 * u + 1] += gh[u] * positions[k].y;
          gpos.x += gh[u] * w1[2 * u];
          gpos.y += gh[u] * w1[2 * u + 1];
        }
        // positions[k] = conj(mu) * x, x the scaled block offset.
        const double X = rf.positions[k].x * scale;
        const double Y = rf.positions[k].y * scale;
        gmu.x += gpos.x * X + gpos.y * Y;
        gmu.y += gpos.x * Y - gpos.y * X;
      }
      const Vec2 gsum = normalize_backward(gmu, as_vec(mu), sum_len);
      for (std::size_t i = 0; i < n; ++i) {
        gin_pose[i].x += align_w[i] * gsum.x;
        gin_pose[i].y += align_w[i] * gsum.y;
        if (!all) gin_act[i] += dot(gsum, as_vec(flat.poses[i]));
      }

      if (dprev == nullptr) continue;
      const int r0 = geom.origin(r);
      const int c0 = geom.origin(col);
      for (int dr = 0; dr < geom.size; ++dr) {
        for (int dc = 0; dc < geom.size; ++dc) {
          const int y = r0 + dr;
          const int x = c0 + dc;
          if (y < 0 || x < 0 || y >= static_cast<int>(input.height()) || x >= static_cast<int>(input.width())) {
            continue;
          }
          const std::size_t k = static_cast<std::size_t>(dr * geom.size + dc);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t idx = input.index(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch);
            dprev->pose[idx].x += gin_pose[k * c + ch].x;
            dprev->pose[idx].y += gin_pose[k * c + ch].y;
            dprev->act[idx] += gin_act[k * c + ch];
          }
        }
      }
    }
  }
}

}  // namespace

void accumulate_gradient(const TrainState& state, const ForwardTrace& trace, std::size_t label, double margin,
                         TrainState& grad) {
  const std::size_t classes = state.config.classes;
  const std::size_t width = trace.pooled.size();
  const std::size_t stages = state.stages.size();

  std::vector<double> dlogits = softmax(trace.result.conv_logits);
  dlogits[label] -= 1.0;
  std::vector<double> dpooled(width, 0.0);
  for (std::size_t j = 0; j < classes; ++j) {
    grad.head_bias[j] += dlogits[j];
    for (std::size_t ch = 0; ch < width; ++ch) {
      grad.head_weight[j * width + ch] += dlogits[j] * trace.pooled[ch];
      dpooled[ch] += dlogits[j] * state.head_weight[j * width + ch];
    }
  }

  const CapsuleField& last = trace.capsules[stages];
  const std::size_t cells = last.height() * last.width();
  const std::vector<double>& acts = trace.result.capsule_activations;
  std::vector<double> dacts(classes, 0.0);
  for (std::size_t i = 0; i < classes; ++i) {
    if (i == label) continue;
    const double gap = margin - (acts[label] - acts[i]);
    if (gap > 0.0) {
      dacts[i] += 2.0 * gap;
      dacts[label] -= 2.0 * gap;
    }
  }

  FeatureMap dfeat(last.height(), last.width(), width);
  for (std::size_t t = 0; t < cells; ++t) {
    for (std::size_t ch = 0; ch < width; ++ch) dfeat.data()[t * width + ch] = dpooled[ch] / static_cast<double>(cells);
  }
  FieldGrad dcaps(last);
  for (std::size_t t = 0; t < cells; ++t) {
    for (std::size_t j = 0; j < classes; ++j) dcaps.act[t * classes + j] += dacts[j] / static_cast<double>(cells);
  }

  for (std::size_t l = stages; l >= 1; --l) {
    FeatureMap dinput;
    if (l > 1) {
      const FeatureMap& in = trace.features[l - 1];
      dinput = FeatureMap(in.height(), in.width(), in.channels());
    }
    conv_backward(state, trace, l, dfeat, grad, dcaps, l > 1 ? &dinput : nullptr);
    if (l > 1) {
      FieldGrad dprev(trace.capsules[l - 1]);
      aggregation_backward(state, trace, l, dcaps, grad, &dprev);
      dcaps = std::move(dprev);
      dfeat = std::move(dinput);
    } else {
      aggregation_backward(state, trace, l, dcaps, grad, nullptr);
    }
  }
}

namespace {

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss)) {
    throw TrainingDiverged("training diverged: non-finite loss in epoch " + std::to_string(epoch));
  }
}

}  // namespace

ToyDatasets make_toy_datasets(const NetworkConfig& cfg) {
  ToyDatasets d;
  d.train = make_glyph_dataset(cfg.train_samples, cfg.classes, cfg.image_size, cfg.seed);
  d.holdout = make_glyph_dataset(cfg.holdout_samples, cfg.classes, cfg.image_size, cfg.seed + 1000);
  return d;
}

TrainResult train_toy(const NetworkConfig& cfg, const std::vector<GlyphSample>& train,
                      const std::vector<GlyphSample>& holdout, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_toy: empty training set");
  for (const auto& s : train) {
    if (s.label >= cfg.classes) throw std::invalid_argument("train_toy: label out of range");
  }

  TrainResult result;
  result.state = TrainState::initialize(cfg, cfg.seed);
  TrainState& state = result.state;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  EpochMetrics m0;
  m0.loss = mean_loss(state, train, cfg.margin_at(0));
  check_finite(m0.loss, 0);
  m0.holdout_accuracy = evaluate_accuracy(state, holdout);
  result.metrics.push_back(m0);
  if (on_epoch) on_epoch(m0);

  const std::vector<double*> params = enumerate_parameters(state);
  std::vector<std::size_t> order(train.size());
  ForwardTrace trace;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double margin = cfg.margin_at(epoch - 1);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      TrainState grad = zero_like(state);
      double loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const GlyphSample& s = train[order[i]];
        forward_traced(state, s.image, trace);
        loss += sample_loss(trace.result, s.label, margin);
        accumulate_gradient(state, trace, s.label, margin, grad);
      }
      check_finite(loss, epoch);
      epoch_loss += loss;
      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      const std::vector<double*> g = enumerate_parameters(grad);
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= step * *g[i];
    }

    if (!state.all_finite()) {
      throw TrainingDiverged("training diverged: non-finite parameters after epoch " + std::to_string(epoch));
    }
    state.epoch = epoch;
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = epoch_loss / static_cast<double>(train.size());
    m.holdout_accuracy = evaluate_accuracy(state, holdout);
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace equicaps
