#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace equicaps {

// Thrown when two operands belong to different groups, or when an operation is
// not defined for a group kind.
class GroupKindError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a weighted mean has no well-defined value (all weight on
// cancelling elements, or no positive weight).
class DegenerateMean : public std::domain_error {
 public:
  explicit DegenerateMean(const std::string& what, long index = -1)
      : std::domain_error(what), index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

inline constexpr double kDegenerateMeanThreshold = 1e-7;
inline constexpr double kUnitNormTolerance = 1e-9;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double norm(Vec2 v);

// SO(2) element stored as the unit vector (cos t, sin t).
class Rot2 {
 public:
  Rot2() = default;

  static Rot2 from_angle(double radians);
  // Normalizes (x, y). Throws DegenerateMean if the vector is shorter than
  // kDegenerateMeanThreshold.
  static Rot2 from_vector(double x, double y);
  // Exact multiples of a quarter turn; k may be negative.
  static Rot2 quarter_turn(int k);

  double c() const { return c_; }
  double s() const { return s_; }
  double angle() const;
  // Returns 0..3 when this is within tol of a quarter turn, else -1.
  int quarter_index(double tol = 1e-12) const;

  friend bool operator==(const Rot2&, const Rot2&) = default;

 private:
  Rot2(double c, double s) : c_(c), s_(s) {}
  static Rot2 renormalized(double c, double s);

  double c_ = 1.0;
  double s_ = 0.0;

  friend Rot2 compose(const Rot2& a, const Rot2& b);
  friend Rot2 inverse(const Rot2& g);
  friend Rot2 weighted_mean(std::span<const Rot2> poses, std::span<const double> weights);
};

Rot2 compose(const Rot2& a, const Rot2& b);
Rot2 inverse(const Rot2& g);
// Renormalized Euclidean weighted mean of unit vectors.
Rot2 weighted_mean(std::span<const Rot2> poses, std::span<const double> weights);
// Negative scalar product, in [-1, 1].
double distance(const Rot2& a, const Rot2& b);
Vec2 act_on_point(const Rot2& g, Vec2 x);
inline Rot2 identity_like(const Rot2&) { return Rot2{}; }
// Euclidean distance between the unit-vector representations.
double pose_deviation(const Rot2& a, const Rot2& b);

// (R^n, +).
class TransN {
 public:
  TransN() = default;
  explicit TransN(std::vector<double> v);
  static TransN zero(std::size_t n) { return TransN(std::vector<double>(n, 0.0)); }

  std::size_t dim() const { return v_.size(); }
  const std::vector<double>& v() const { return v_; }
  double operator[](std::size_t i) const { return v_[i]; }

  friend bool operator==(const TransN&, const TransN&) = default;

 private:
  std::vector<double> v_;
};

TransN compose(const TransN& a, const TransN& b);
TransN inverse(const TransN& g);
TransN weighted_mean(std::span<const TransN> points, std::span<const double> weights);
// l2 distance.
double distance(const TransN& a, const TransN& b);
Vec2 act_on_point(const TransN& g, Vec2 x);
inline TransN identity_like(const TransN& g) { return TransN::zero(g.dim()); }
double pose_deviation(const TransN& a, const TransN& b);

// Runtime description of a group: SO(2), (R^n, +) or a direct product.
struct GroupDesc {
  enum class Kind { kSO2, kTrans, kProduct };

  Kind kind = Kind::kSO2;
  std::size_t dim = 0;           // kTrans only
  std::vector<GroupDesc> parts;  // kProduct only

  static GroupDesc so2() { return {}; }
  static GroupDesc trans(std::size_t n) { return {Kind::kTrans, n, {}}; }
  static GroupDesc product(std::vector<GroupDesc> parts) {
    return {Kind::kProduct, 0, std::move(parts)};
  }
  // Accepts "so2", "r<n>" and 'x'-joined products such as "so2xr2".
  static GroupDesc parse(const std::string& text);
  std::string name() const;

  friend bool operator==(const GroupDesc&, const GroupDesc&) = default;
};

// Dynamically typed group element. Operations check that both operands share
// the same GroupDesc and throw GroupKindError otherwise.
class GroupElement {
 public:
  using Product = std::vector<GroupElement>;

  GroupElement() = default;
  GroupElement(Rot2 r) : value_(r) {}  // NOLINT(google-explicit-constructor)
  GroupElement(TransN t) : value_(std::move(t)) {}  // NOLINT(google-explicit-constructor)
  explicit GroupElement(Product parts) : value_(std::move(parts)) {}

  static GroupElement identity(const GroupDesc& desc);

  GroupDesc desc() const;
  bool is_rot2() const { return std::holds_alternative<Rot2>(value_); }
  bool is_trans() const { return std::holds_alternative<TransN>(value_); }
  bool is_product() const { return std::holds_alternative<Product>(value_); }
  const Rot2& rot2() const;
  const TransN& trans() const;
  const Product& parts() const;

  friend bool operator==(const GroupElement&, const GroupElement&) = default;

 private:
  std::variant<Rot2, TransN, Product> value_;
};

GroupElement compose(const GroupElement& a, const GroupElement& b);
GroupElement inverse(const GroupElement& g);
GroupElement weighted_mean(std::span<const GroupElement> elems, std::span<const double> weights);
// Sum of component distances for products.
double distance(const GroupElement& a, const GroupElement& b);
// Product components act in order, so SO(2) x (R^2,+) maps x to R x + t.
Vec2 act_on_point(const GroupElement& g, Vec2 x);
inline GroupElement identity_like(const GroupElement& g) { return GroupElement::identity(g.desc()); }
double pose_deviation(const GroupElement& a, const GroupElement& b);

// Sums values in an order determined only by the multiset of values, so the
// result is bitwise independent of the input order.
double canonical_sum(std::vector<double> values);

}  // namespace equicaps
