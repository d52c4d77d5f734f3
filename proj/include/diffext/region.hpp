#pragma once
/// Point sets used as map domains, routing regions of piecewise maps, and
/// sampling regions of the checks.

#include "diffext/core.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>

namespace diffext {

using Json = nlohmann::ordered_json;

class MapNode;
using NodePtr = std::shared_ptr<const MapNode>;

struct Box {
  Vec lo;
  Vec hi;

  bool contains(const Vec& x) const { return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all(); }
  Vec extent() const { return hi - lo; }
  Box padded(double frac, double abs = 0.0) const {
    const Vec pad = (frac * extent()).array() + abs;
    return {lo - pad, hi + pad};
  }
  static Box hull(const Box& a, const Box& b) { return {a.lo.cwiseMin(b.lo), a.hi.cwiseMax(b.hi)}; }
};

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

class Region {
 public:
  enum class Kind { all, ball, annulus, box, complement, intersection, union_of, image_of, predicate };

  static Region all(int n) {
    auto d = std::make_shared<Data>();
    d->kind = Kind::all;
    d->dim = n;
    return Region(std::move(d));
  }

  /// Closed ball |x - c| <= r, or open ball |x - c| < r.
  static Region ball(const Vec& center, double radius, bool closed = true) {
    if (!(radius > 0.0)) throw Error(ErrorKind::parameter, "region: ball radius must be > 0");
    auto d = std::make_shared<Data>();
    d->kind = Kind::ball;
    d->dim = static_cast<int>(center.size());
    d->center = center;
    d->r0 = radius;
    d->closed = closed;
    return Region(std::move(d));
  }

  /// r_inner <= |x - c| < r_outer.
  static Region annulus(const Vec& center, double r_inner, double r_outer) {
    if (!(r_inner > 0.0 && r_inner < r_outer)) throw Error(ErrorKind::parameter, "region: annulus needs 0 < r_inner < r_outer");
    auto d = std::make_shared<Data>();
    d->kind = Kind::annulus;
    d->dim = static_cast<int>(center.size());
    d->center = center;
    d->r0 = r_inner;
    d->r1 = r_outer;
    return Region(std::move(d));
  }

  static Region box(const Vec& lo, const Vec& hi) {
    if (lo.size() != hi.size() || !((hi.array() > lo.array()).all()))
      throw Error(ErrorKind::parameter, "region: box needs lo < hi componentwise");
    auto d = std::make_shared<Data>();
    d->kind = Kind::box;
    d->dim = static_cast<int>(lo.size());
    d->lo = lo;
    d->hi = hi;
    return Region(std::move(d));
  }

  static Region complement(const Region& r) {
    auto d = std::make_shared<Data>();
    d->kind = Kind::complement;
    d->dim = r.dim();
    d->children = {r};
    return Region(std::move(d));
  }

  static Region intersection(std::vector<Region> parts) {
    if (parts.empty()) throw Error(ErrorKind::parameter, "region: empty intersection");
    auto d = std::make_shared<Data>();
    d->kind = Kind::intersection;
    d->dim = parts.front().dim();
    d->children = std::move(parts);
    return Region(std::move(d));
  }

  static Region union_of(std::vector<Region> parts) {
    if (parts.empty()) throw Error(ErrorKind::parameter, "region: empty union");
    auto d = std::make_shared<Data>();
    d->kind = Kind::union_of;
    d->dim = parts.front().dim();
    d->children = std::move(parts);
    return Region(std::move(d));
  }

  /// f(base). Membership inverts f (structurally or by Newton); a failed
  /// inversion counts as outside. Defined in map.hpp.
  static Region image_of(NodePtr map, const Region& base);

  /// Arbitrary membership test with an explicit bounding box; not replayable
  /// from its serialized form.
  static Region predicate(int n, std::function<bool(const Vec&)> test, std::optional<Box> bounds, std::string label) {
    auto d = std::make_shared<Data>();
    d->kind = Kind::predicate;
    d->dim = n;
    d->test = std::move(test);
    d->bounds = std::move(bounds);
    d->label = std::move(label);
    return Region(std::move(d));
  }

  Kind kind() const { return d_->kind; }
  int dim() const { return d_->dim; }
  const Vec& center() const { return d_->center; }
  double radius() const { return d_->r0; }
  double inner_radius() const { return d_->r0; }
  double outer_radius() const { return d_->r1; }
  bool closed() const { return d_->closed; }
  const std::vector<Region>& children() const { return d_->children; }
  const NodePtr& map() const { return d_->map; }

  bool contains(const Vec& x) const;

  /// Axis-aligned bounds when the region is bounded.
  std::optional<Box> bounds() const;

  Json to_json() const;

 private:
  struct Data {
    Kind kind = Kind::all;
    int dim = 0;
    Vec center;
    double r0 = 0.0, r1 = 0.0;
    bool closed = true;
    Vec lo, hi;
    std::vector<Region> children;
    NodePtr map;
    std::function<bool(const Vec&)> test;
    std::optional<Box> bounds;
    std::string label;
  };

  explicit Region(std::shared_ptr<const Data> d) : d_(std::move(d)) {}
  std::shared_ptr<const Data> d_;
};

inline Region ball_region(const Vec& c, double r) { return Region::ball(c, r, true); }
inline Region open_ball_region(const Vec& c, double r) { return Region::ball(c, r, false); }

}  // namespace diffext
