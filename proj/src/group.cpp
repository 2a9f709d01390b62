#include "equicaps/group.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

namespace equicaps {

namespace {

void check_weights(std::size_t n_elems, std::span<const double> weights) {
  if (n_elems == 0) throw std::invalid_argument("weighted_mean: empty input");
  if (weights.size() != n_elems) {
    throw std::invalid_argument("weighted_mean: " + std::to_string(n_elems) + " elements but " +
                                std::to_string(weights.size()) + " weights");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("weighted_mean: weights must be finite and nonnegative");
    }
  }
}

// Index order sorted by (weight, coordinates...). Identical keys have identical
// contributions, so summing in this order is permutation invariant.
template <class KeyFn>
std::vector<std::size_t> canonical_order(std::size_t n, KeyFn key) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  return order;
}

}  // namespace

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

double canonical_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

// ---------------------------------------------------------------- Rot2

Rot2 Rot2::renormalized(double c, double s) {
  const double n = std::hypot(c, s);
  return Rot2(c / n, s / n);
}

Rot2 Rot2::from_angle(double radians) { return Rot2(std::cos(radians), std::sin(radians)); }

Rot2 Rot2::from_vector(double x, double y) {
  const double n = std::hypot(x, y);
  if (!(n >= kDegenerateMeanThreshold)) {
    throw DegenerateMean("Rot2::from_vector: vector too short to normalize");
  }
  return Rot2(x / n, y / n);
}

Rot2 Rot2::quarter_turn(int k) {
  switch (((k % 4) + 4) % 4) {
    case 0: return Rot2(1.0, 0.0);
    case 1: return Rot2(0.0, 1.0);
    case 2: return Rot2(-1.0, 0.0);
    default: return Rot2(0.0, -1.0);
  }
}

double Rot2::angle() const { return std::atan2(s_, c_); }

int Rot2::quarter_index(double tol) const {
  for (int k = 0; k < 4; ++k) {
    const Rot2 q = quarter_turn(k);
    if (std::abs(c_ - q.c_) <= tol && std::abs(s_ - q.s_) <= tol) return k;
  }
  return -1;
}

namespace {
bool exact_quarter(double c, double s) {
  return (c == 0.0 && (s == 1.0 || s == -1.0)) || (s == 0.0 && (c == 1.0 || c == -1.0));
}
}  // namespace

Rot2 compose(const Rot2& a, const Rot2& b) {
  const double c = a.c_ * b.c_ - a.s_ * b.s_;
  const double s = a.c_ * b.s_ + a.s_ * b.c_;
  // A product with an exact quarter turn is a coordinate permutation.
  if (exact_quarter(a.c_, a.s_) || exact_quarter(b.c_, b.s_)) return Rot2(c, s);
  return Rot2::renormalized(c, s);
}

Rot2 inverse(const Rot2& g) { return Rot2(g.c_, -g.s_); }

Rot2 weighted_mean(std::span<const Rot2> poses, std::span<const double> weights) {
  check_weights(poses.size(), weights);
  const auto order = canonical_order(poses.size(), [&](std::size_t i) {
    return std::tuple(weights[i], poses[i].c_, poses[i].s_);
  });
  double sc = 0.0;
  double ss = 0.0;
  for (std::size_t i : order) {
    sc += weights[i] * poses[i].c_;
    ss += weights[i] * poses[i].s_;
  }
  const double n = std::hypot(sc, ss);
  if (!(n >= kDegenerateMeanThreshold)) {
    throw DegenerateMean("weighted_mean: weighted SO(2) poses sum to (near) zero");
  }
  return Rot2(sc / n, ss / n);
}

double distance(const Rot2& a, const Rot2& b) { return -(a.c() * b.c() + a.s() * b.s()); }

Vec2 act_on_point(const Rot2& g, Vec2 x) {
  return {g.c() * x.x - g.s() * x.y, g.s() * x.x + g.c() * x.y};
}

double pose_deviation(const Rot2& a, const Rot2& b) {
  return std::hypot(a.c() - b.c(), a.s() - b.s());
}

// ---------------------------------------------------------------- TransN

TransN::TransN(std::vector<double> v) : v_(std::move(v)) {
  for (double x : v_) {
    if (!std::isfinite(x)) throw std::invalid_argument("TransN: non-finite component");
  }
}

namespace {
void check_same_dim(const TransN& a, const TransN& b) {
  if (a.dim() != b.dim()) {
    throw GroupKindError("translation groups of different dimension: " + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()));
  }
}
}  // namespace

TransN compose(const TransN& a, const TransN& b) {
  check_same_dim(a, b);
  std::vector<double> out(a.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return TransN(std::move(out));
}

TransN inverse(const TransN& g) {
  std::vector<double> out(g.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -g[i];
  return TransN(std::move(out));
}

TransN weighted_mean(std::span<const TransN> points, std::span<const double> weights) {
  check_weights(points.size(), weights);
  const std::size_t dim = points[0].dim();
  for (const auto& p : points) check_same_dim(points[0], p);
  const auto order = canonical_order(points.size(), [&](std::size_t i) {
    return std::pair<double, const std::vector<double>&>(weights[i], points[i].v());
  });
  double wsum = 0.0;
  std::vector<double> acc(dim, 0.0);
  for (std::size_t i : order) {
    wsum += weights[i];
    for (std::size_t d = 0; d < dim; ++d) acc[d] += weights[i] * points[i][d];
  }
  if (!(wsum > 0.0)) throw DegenerateMean("weighted_mean: all translation weights are zero");
  for (double& x : acc) x /= wsum;
  return TransN(std::move(acc));
}

double distance(const TransN& a, const TransN& b) {
  check_same_dim(a, b);
  std::vector<double> sq(a.dim());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(canonical_sum(std::move(sq)));
}

Vec2 act_on_point(const TransN& g, Vec2 x) {
  if (g.dim() != 2) {
    throw GroupKindError("act_on_point: translation of dimension " + std::to_string(g.dim()) +
                         " cannot act on a 2D point");
  }
  return {x.x + g[0], x.y + g[1]};
}

double pose_deviation(const TransN& a, const TransN& b) { return distance(a, b); }

// ---------------------------------------------------------------- GroupDesc

GroupDesc GroupDesc::parse(const std::string& text) {
  std::vector<GroupDesc> parts;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, 'x')) {
    if (token == "so2") {
      parts.push_back(so2());
    } else if (token.size() >= 2 && token[0] == 'r' &&
               std::all_of(token.begin() + 1, token.end(), ::isdigit)) {
      const auto n = std::stoul(token.substr(1));
      if (n == 0) throw std::invalid_argument("group: R^0 is not supported");
      parts.push_back(trans(n));
    } else {
      throw std::invalid_argument("group: unknown component '" + token + "' in '" + text + "'");
    }
  }
  if (parts.empty()) throw std::invalid_argument("group: empty descriptor");
  if (parts.size() == 1) return parts[0];
  return product(std::move(parts));
}

std::string GroupDesc::name() const {
  switch (kind) {
    case Kind::kSO2: return "so2";
    case Kind::kTrans: return "r" + std::to_string(dim);
    case Kind::kProduct: {
      std::string out;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += 'x';
        out += parts[i].name();
      }
      return out;
    }
  }
  return "?";
}

// ---------------------------------------------------------------- GroupElement

GroupElement GroupElement::identity(const GroupDesc& desc) {
  switch (desc.kind) {
    case GroupDesc::Kind::kSO2: return GroupElement(Rot2{});
    case GroupDesc::Kind::kTrans: return GroupElement(TransN::zero(desc.dim));
    case GroupDesc::Kind::kProduct: {
      Product parts;
      parts.reserve(desc.parts.size());
      for (const auto& p : desc.parts) parts.push_back(identity(p));
      return GroupElement(std::move(parts));
    }
  }
  throw GroupKindError("identity: unknown group kind");
}

GroupDesc GroupElement::desc() const {
  if (is_rot2()) return GroupDesc::so2();
  if (is_trans()) return GroupDesc::trans(trans().dim());
  std::vector<GroupDesc> parts;
  for (const auto& p : this->parts()) parts.push_back(p.desc());
  return GroupDesc::product(std::move(parts));
}

const Rot2& GroupElement::rot2() const {
  if (!is_rot2()) throw GroupKindError("element is not an SO(2) element");
  return std::get<Rot2>(value_);
}

const TransN& GroupElement::trans() const {
  if (!is_trans()) throw GroupKindError("element is not a translation");
  return std::get<TransN>(value_);
}

const GroupElement::Product& GroupElement::parts() const {
  if (!is_product()) throw GroupKindError("element is not a product element");
  return std::get<Product>(value_);
}

namespace {

void check_same_kind(const GroupElement& a, const GroupElement& b) {
  if (a.is_rot2() != b.is_rot2() || a.is_trans() != b.is_trans() ||
      a.is_product() != b.is_product()) {
    throw GroupKindError("mismatched group kinds: " + a.desc().name() + " vs " + b.desc().name());
  }
  if (a.is_product() && a.parts().size() != b.parts().size()) {
    throw GroupKindError("mismatched product arity: " + a.desc().name() + " vs " +
                         b.desc().name());
  }
}

}  // namespace

GroupElement compose(const GroupElement& a, const GroupElement& b) {
  check_same_kind(a, b);
  if (a.is_rot2()) return compose(a.rot2(), b.rot2());
  if (a.is_trans()) return compose(a.trans(), b.trans());
  GroupElement::Product out;
  out.reserve(a.parts().size());
  for (std::size_t i = 0; i < a.parts().size(); ++i) {
    out.push_back(compose(a.parts()[i], b.parts()[i]));
  }
  return GroupElement(std::move(out));
}

GroupElement inverse(const GroupElement& g) {
  if (g.is_rot2()) return inverse(g.rot2());
  if (g.is_trans()) return inverse(g.trans());
  GroupElement::Product out;
  for (const auto& p : g.parts()) out.push_back(inverse(p));
  return GroupElement(std::move(out));
}

GroupElement weighted_mean(std::span<const GroupElement> elems, std::span<const double> weights) {
  check_weights(elems.size(), weights);
  for (const auto& e : elems) check_same_kind(elems[0], e);
  const GroupElement& first = elems[0];
  if (first.is_rot2()) {
    std::vector<Rot2> r;
    r.reserve(elems.size());
    for (const auto& e : elems) r.push_back(e.rot2());
    return weighted_mean(r, weights);
  }
  if (first.is_trans()) {
    std::vector<TransN> t;
    t.reserve(elems.size());
    for (const auto& e : elems) {
      check_same_dim(first.trans(), e.trans());
      t.push_back(e.trans());
    }
    return weighted_mean(t, weights);
  }
  GroupElement::Product out;
  std::vector<GroupElement> column(elems.size());
  for (std::size_t c = 0; c < first.parts().size(); ++c) {
    for (std::size_t i = 0; i < elems.size(); ++i) column[i] = elems[i].parts()[c];
    out.push_back(weighted_mean(column, weights));
  }
  return GroupElement(std::move(out));
}

double distance(const GroupElement& a, const GroupElement& b) {
  check_same_kind(a, b);
  if (a.is_rot2()) return distance(a.rot2(), b.rot2());
  if (a.is_trans()) return distance(a.trans(), b.trans());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.parts().size(); ++i) acc += distance(a.parts()[i], b.parts()[i]);
  return acc;
}

Vec2 act_on_point(const GroupElement& g, Vec2 x) {
  if (g.is_rot2()) return act_on_point(g.rot2(), x);
  if (g.is_trans()) return act_on_point(g.trans(), x);
  for (const auto& p : g.parts()) x = act_on_point(p, x);
  return x;
}

double pose_deviation(const GroupElement& a, const GroupElement& b) {
  check_same_kind(a, b);
  if (a.is_rot2()) return pose_deviation(a.rot2(), b.rot2());
  if (a.is_trans()) return pose_deviation(a.trans(), b.trans());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.parts().size(); ++i) {
    worst = std::max(worst, pose_deviation(a.parts()[i], b.parts()[i]));
  }
  return worst;
}

}  // namespace equicaps
