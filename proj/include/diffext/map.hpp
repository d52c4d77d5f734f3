#pragma once
/// The map algebra: a common contract for smooth maps (value, analytic
/// Jacobian, inverse, domain), composition, region-routed gluing, the radial
/// squeeze, extension by the identity, and Newton inversion.

#include "diffext/region.hpp"
#include "diffext/sampling.hpp"

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace diffext {

enum class Orientation { preserving, reversing, unknown };

inline const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::preserving: return "preserving";
    case Orientation::reversing: return "reversing";
    case Orientation::unknown: return "unknown";
  }
  return "unknown";
}

/// Regularity tag; kSmooth stands for C-infinity.
inline constexpr int kSmooth = -1;

inline double default_newton_tol(const Vec& y) { return 1e-12 * std::max(1.0, y.norm()); }

class MapNode {
 public:
  MapNode(int dim, Region domain, Orientation orientation, int regularity = kSmooth)
      : dim_(dim), domain_(std::move(domain)), orientation_(orientation), regularity_(regularity) {}
  virtual ~MapNode() = default;
  MapNode(const MapNode&) = delete;
  MapNode& operator=(const MapNode&) = delete;

  int dim() const { return dim_; }
  const Region& domain() const { return domain_; }
  Orientation orientation() const { return orientation_; }
  int regularity() const { return regularity_; }

  virtual Vec eval(const Vec& x) const = 0;
  virtual std::pair<Vec, Mat> eval_jac(const Vec& x) const = 0;

  /// True when `inverse` never falls back to a generic root search.
  virtual bool structural_inverse() const { return false; }

  /// Preimage of y, or nullopt when it cannot be certified.
  virtual std::optional<Vec> inverse(const Vec& y) const;

  /// Preferred starting points for Newton inversion.
  virtual std::vector<Vec> seeds(const Vec& y) const { return {y}; }

  virtual bool is_identity() const { return false; }
  virtual Json to_json() const = 0;

 private:
  int dim_;
  Region domain_;
  Orientation orientation_;
  int regularity_;
};

// ---------------------------------------------------------------------------
// Newton inversion

struct NewtonResult {
  Vec x;
  bool converged = false;
  double residual = std::numeric_limits<double>::infinity();
};

inline NewtonResult newton_from(const MapNode& f, const Vec& y, const Vec& seed, double tol, int max_iter = 60) {
  NewtonResult out{seed, false, std::numeric_limits<double>::infinity()};
  Vec x = seed;
  for (int it = 0; it <= max_iter; ++it) {
    auto [fx, J] = f.eval_jac(x);
    const Vec r = fx - y;
    const double res = r.norm();
    if (!std::isfinite(res)) break;
    if (res < out.residual) {
      out.x = x;
      out.residual = res;
    }
    if (res <= tol) {
      out.converged = true;
      break;
    }
    if (it == max_iter) break;
    Eigen::PartialPivLU<Mat> lu(J);
    const Vec dx = lu.solve(r);
    if (!dx.allFinite()) break;
    double alpha = 1.0;
    bool improved = false;
    for (int k = 0; k < 40; ++k) {
      const Vec xn = x - alpha * dx;
      const double rn = (f.eval(xn) - y).norm();
      if (rn < res) {
        x = xn;
        improved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!improved) break;
  }
  return out;
}

/// Cell centres of a 2^n and a 4^n lattice over the domain bounds (or around
/// y when the domain is unbounded).
inline std::vector<Vec> multigrid_seeds(const MapNode& f, const Vec& y) {
  std::vector<Vec> out;
  const int n = f.dim();
  Box b;
  if (auto bb = f.domain().bounds())
    b = *bb;
  else
    b = Box{y.array() - (1.0 + y.norm()), y.array() + (1.0 + y.norm())};
  for (int level : {2, 4}) {
    long cells = 1;
    for (int k = 0; k < n; ++k) cells *= level;
    if (cells > 4096) break;
    for (long c = 0; c < cells; ++c) {
      Vec x(n);
      long rem = c;
      for (int k = 0; k < n; ++k) {
        const long i = rem % level;
        rem /= level;
        x(k) = b.lo(k) + (b.hi(k) - b.lo(k)) * (static_cast<double>(i) + 0.5) / level;
      }
      out.push_back(std::move(x));
    }
  }
  return out;
}

/// Damped Newton from each seed in turn; the first converged solve wins.
/// Without convergence the best iterate is returned with converged = false.
inline NewtonResult newton_invert(const MapNode& f, const Vec& y, const std::vector<Vec>& seeds, double tol) {
  if (seeds.empty()) throw Error(ErrorKind::parameter, "newton_invert: no seeds");
  NewtonResult best;
  best.x = seeds.front();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    NewtonResult r = newton_from(f, y, seeds[i], tol, i == 0 ? 60 : 30);
    if (r.converged) return r;
    if (r.residual < best.residual) best = r;
  }
  return best;
}

inline std::optional<Vec> MapNode::inverse(const Vec& y) const {
  std::vector<Vec> s = seeds(y);
  for (auto& g : multigrid_seeds(*this, y)) s.push_back(std::move(g));
  NewtonResult r = newton_invert(*this, y, s, default_newton_tol(y));
  if (!r.converged) return std::nullopt;
  return r.x;
}

// ---------------------------------------------------------------------------
// SmoothMap: shared immutable handle

class SmoothMap {
 public:
  SmoothMap() = default;
  SmoothMap(NodePtr node) : node_(std::move(node)) {}  // NOLINT(google-explicit-constructor)

  int dim() const { return node_->dim(); }
  Vec operator()(const Vec& x) const { return node_->eval(x); }
  Mat jacobian(const Vec& x) const { return node_->eval_jac(x).second; }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const { return node_->eval_jac(x); }
  std::optional<Vec> inverse(const Vec& y) const { return node_->inverse(y); }
  bool structural_inverse() const { return node_->structural_inverse(); }
  bool is_identity() const { return node_->is_identity(); }
  const Region& domain() const { return node_->domain(); }
  Orientation orientation() const { return node_->orientation(); }
  int regularity() const { return node_->regularity(); }
  Json to_json() const { return node_->to_json(); }

  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  template <class T>
  const T* as() const {
    return dynamic_cast<const T*>(node_.get());
  }

 private:
  NodePtr node_;
};

inline NewtonResult newton_invert(const SmoothMap& f, const Vec& y, const std::vector<Vec>& seeds, double tol) {
  return newton_invert(*f.node(), y, seeds, tol);
}

// ---------------------------------------------------------------------------
// Region members that need maps

inline Region Region::image_of(NodePtr map, const Region& base) {
  auto d = std::make_shared<Data>();
  d->kind = Kind::image_of;
  d->dim = map->dim();
  d->children = {base};
  if (auto bb = base.bounds()) {
    const int n = map->dim();
    Box out{Vec::Constant(n, std::numeric_limits<double>::infinity()), Vec::Constant(n, -std::numeric_limits<double>::infinity())};
    auto add = [&](const Vec& x) {
      const Vec y = map->eval(x);
      out.lo = out.lo.cwiseMin(y);
      out.hi = out.hi.cwiseMax(y);
    };
    if (base.kind() == Kind::ball || base.kind() == Kind::annulus) {
      const double r = base.kind() == Kind::ball ? base.radius() : base.outer_radius();
      for (const Vec& u : sphere_directions(n, default_sphere_count(n))) add(base.center() + r * u);
    } else {
      for (std::uint64_t k = 0; k < 4000; ++k) {
        const Vec x = halton_point(bb->lo, bb->hi, k);
        if (base.contains(x)) add(x);
      }
    }
    if (out.lo.allFinite() && out.hi.allFinite()) d->bounds = out.padded(0.1, 1e-9);
  }
  d->map = std::move(map);
  return Region(std::move(d));
}

inline bool Region::contains(const Vec& x) const {
  const Data& d = *d_;
  switch (d.kind) {
    case Kind::all: return true;
    case Kind::ball: {
      const double r = (x - d.center).norm();
      return d.closed ? r <= d.r0 : r < d.r0;
    }
    case Kind::annulus: {
      const double r = (x - d.center).norm();
      return r >= d.r0 && r < d.r1;
    }
    case Kind::box: return (x.array() >= d.lo.array()).all() && (x.array() <= d.hi.array()).all();
    case Kind::complement: return !d.children.front().contains(x);
    case Kind::intersection:
      for (const auto& c : d.children)
        if (!c.contains(x)) return false;
      return true;
    case Kind::union_of:
      for (const auto& c : d.children)
        if (c.contains(x)) return true;
      return false;
    case Kind::image_of: {
      if (d.bounds && !d.bounds->contains(x)) return false;
      auto pre = d.map->inverse(x);
      return pre && d.children.front().contains(*pre);
    }
    case Kind::predicate:
      if (d.bounds && !d.bounds->contains(x)) return false;
      return d.test(x);
  }
  return false;
}

inline std::optional<Box> Region::bounds() const {
  const Data& d = *d_;
  switch (d.kind) {
    case Kind::all:
    case Kind::complement: return std::nullopt;
    case Kind::ball: return Box{d.center.array() - d.r0, d.center.array() + d.r0};
    case Kind::annulus: return Box{d.center.array() - d.r1, d.center.array() + d.r1};
    case Kind::box: return Box{d.lo, d.hi};
    case Kind::intersection: {
      std::optional<Box> out;
      for (const auto& c : d.children) {
        auto b = c.bounds();
        if (!b) continue;
        if (!out)
          out = b;
        else
          out = Box{out->lo.cwiseMax(b->lo), out->hi.cwiseMin(b->hi)};
      }
      return out;
    }
    case Kind::union_of: {
      std::optional<Box> out;
      for (const auto& c : d.children) {
        auto b = c.bounds();
        if (!b) return std::nullopt;
        out = out ? Box::hull(*out, *b) : *b;
      }
      return out;
    }
    case Kind::image_of:
    case Kind::predicate: return d.bounds;
  }
  return std::nullopt;
}

inline Json Region::to_json() const {
  const Data& d = *d_;
  Json j;
  switch (d.kind) {
    case Kind::all: j["all"] = d.dim; break;
    case Kind::ball: j["ball"] = Json{{"center", diffext::to_json(d.center)}, {"radius", d.r0}, {"closed", d.closed}}; break;
    case Kind::annulus:
      j["annulus"] = Json{{"center", diffext::to_json(d.center)}, {"inner", d.r0}, {"outer", d.r1}};
      break;
    case Kind::box: j["box"] = Json{{"lo", diffext::to_json(d.lo)}, {"hi", diffext::to_json(d.hi)}}; break;
    case Kind::complement: j["complement"] = d.children.front().to_json(); break;
    case Kind::intersection:
    case Kind::union_of: {
      Json parts = Json::array();
      for (const auto& c : d.children) parts.push_back(c.to_json());
      j[d.kind == Kind::intersection ? "intersection" : "union"] = std::move(parts);
      break;
    }
    case Kind::image_of: j["image_of"] = Json{{"map", d.map->to_json()}, {"region", d.children.front().to_json()}}; break;
    case Kind::predicate: j["predicate"] = d.label; break;
  }
  return j;
}

// ---------------------------------------------------------------------------
// region sampling

/// `count` points of `region`, a pure function of (seed, stream). Image
/// regions are sampled by pushing forward samples of their base; everything
/// else by rejection inside its bounds (Halton points when low_discrepancy).
inline std::vector<Vec> sample_region(const Region& region, int count, std::uint64_t seed, std::uint64_t stream,
                                      bool low_discrepancy = false) {
  std::vector<Vec> out;
  if (count <= 0) return out;
  out.reserve(static_cast<std::size_t>(count));
  if (region.kind() == Region::Kind::image_of) {
    for (const Vec& x : sample_region(region.children().front(), count, seed, stream, low_discrepancy))
      out.push_back(region.map()->eval(x));
    return out;
  }
  auto bb = region.bounds();
  if (!bb) throw Error(ErrorKind::sampling, "sample_region: region is unbounded");
  CounterRng rng(seed, stream);
  const std::uint64_t min_attempts = 20000;
  std::uint64_t attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    const Vec x = low_discrepancy ? halton_point(bb->lo, bb->hi, attempts) : rng.uniform_in(bb->lo, bb->hi, attempts);
    ++attempts;
    if (region.contains(x)) out.push_back(x);
    if (attempts >= min_attempts && static_cast<double>(out.size()) < 1e-4 * static_cast<double>(attempts))
      throw Error(ErrorKind::sampling, "sample_region: acceptance rate below 1e-4");
  }
  return out;
}

/// Nodes of the lattice with `per_axis` points per axis spanning the box.
inline std::vector<Vec> lattice_points(const Box& box, int per_axis) {
  if (per_axis < 2) throw Error(ErrorKind::parameter, "lattice_points: need at least 2 points per axis");
  const int n = static_cast<int>(box.lo.size());
  long total = 1;
  for (int k = 0; k < n; ++k) total *= per_axis;
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(total));
  for (long c = 0; c < total; ++c) {
    Vec x(n);
    long rem = c;
    for (int k = 0; k < n; ++k) {
      x(k) = box.lo(k) + (box.hi(k) - box.lo(k)) * static_cast<double>(rem % per_axis) / (per_axis - 1);
      rem /= per_axis;
    }
    out.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// concrete nodes

class IdentityMap final : public MapNode {
 public:
  explicit IdentityMap(int n) : MapNode(n, Region::all(n), Orientation::preserving) {}
  Vec eval(const Vec& x) const override { return x; }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override { return {x, identity(dim())}; }
  bool structural_inverse() const override { return true; }
  std::optional<Vec> inverse(const Vec& y) const override { return y; }
  bool is_identity() const override { return true; }
  Json to_json() const override { return Json{{"family", "identity"}, {"dim", dim()}}; }
};

/// x -> A (x - center) + center + shift.
class AffineMap final : public MapNode {
 public:
  AffineMap(Mat A, Vec center, Vec shift, Json spec = {})
      : MapNode(static_cast<int>(A.rows()), Region::all(static_cast<int>(A.rows())),
                A.determinant() > 0 ? Orientation::preserving : Orientation::reversing),
        A_(std::move(A)),
        c_(std::move(center)),
        t_(std::move(shift)),
        spec_(std::move(spec)) {
    if (A_.rows() != A_.cols() || c_.size() != A_.rows() || t_.size() != A_.rows())
      throw Error(ErrorKind::parameter, "affine: dimension mismatch");
    if (!(std::abs(A_.determinant()) > 0.0)) throw Error(ErrorKind::not_diffeo, "affine: singular matrix");
    Ainv_ = A_.inverse();
  }

  const Mat& matrix() const { return A_; }
  const Vec& center() const { return c_; }
  const Vec& shift() const { return t_; }

  Vec eval(const Vec& x) const override { return Vec(A_ * (x - c_)) + c_ + t_; }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override { return {eval(x), A_}; }
  bool structural_inverse() const override { return true; }
  std::optional<Vec> inverse(const Vec& y) const override { return Vec(Ainv_ * (y - c_ - t_)) + c_; }
  Json to_json() const override {
    if (!spec_.is_null()) return spec_;
    return Json{{"family", "affine"}, {"matrix", diffext::to_json(A_)}, {"center", diffext::to_json(c_)}, {"shift", diffext::to_json(t_)}};
  }

 private:
  Mat A_, Ainv_;
  Vec c_, t_;
  Json spec_;
};

/// Right-to-left composite: maps = [f0, f1, ..., fk] evaluates f0(f1(...fk(x))).
class CompositeMap final : public MapNode {
 public:
  explicit CompositeMap(std::vector<SmoothMap> maps)
      : MapNode(maps.back().dim(), maps.back().domain(), combined_orientation(maps)), maps_(std::move(maps)) {}

  const std::vector<SmoothMap>& maps() const { return maps_; }

  Vec eval(const Vec& x) const override {
    Vec y = x;
    for (auto it = maps_.rbegin(); it != maps_.rend(); ++it) y = (*it)(y);
    return y;
  }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override {
    Vec y = x;
    Mat J = identity(dim());
    for (auto it = maps_.rbegin(); it != maps_.rend(); ++it) {
      auto [v, Ji] = it->eval_jac(y);
      y = std::move(v);
      J = Ji * J;
    }
    return {y, J};
  }
  bool structural_inverse() const override {
    for (const auto& m : maps_)
      if (!m.structural_inverse()) return false;
    return true;
  }
  std::optional<Vec> inverse(const Vec& y) const override {
    Vec x = y;
    for (const auto& m : maps_) {
      auto p = m.inverse(x);
      if (!p) return std::nullopt;
      x = std::move(*p);
    }
    return x;
  }
  Json to_json() const override {
    Json a = Json::array();
    for (const auto& m : maps_) a.push_back(m.to_json());
    return Json{{"compose", std::move(a)}};
  }

 private:
  static Orientation combined_orientation(const std::vector<SmoothMap>& maps) {
    if (maps.empty()) throw Error(ErrorKind::composition, "compose: empty list");
    bool flip = false;
    for (const auto& m : maps) {
      if (m.orientation() == Orientation::unknown) return Orientation::unknown;
      if (m.orientation() == Orientation::reversing) flip = !flip;
    }
    return flip ? Orientation::reversing : Orientation::preserving;
  }

  std::vector<SmoothMap> maps_;
};

/// Swaps evaluation and inversion of the wrapped map.
class InverseMap final : public MapNode {
 public:
  explicit InverseMap(SmoothMap f) : MapNode(f.dim(), Region::all(f.dim()), f.orientation(), f.regularity()), f_(std::move(f)) {}

  const SmoothMap& base() const { return f_; }

  Vec eval(const Vec& y) const override {
    auto x = f_.inverse(y);
    if (!x) throw Error(ErrorKind::numeric, "inverse map: preimage did not converge");
    return *x;
  }
  std::pair<Vec, Mat> eval_jac(const Vec& y) const override {
    Vec x = eval(y);
    Mat J = f_.jacobian(x);
    return {x, Mat(J.inverse())};
  }
  bool structural_inverse() const override { return true; }
  std::optional<Vec> inverse(const Vec& x) const override { return f_(x); }
  bool is_identity() const override { return f_.is_identity(); }
  Json to_json() const override { return Json{{"inverse", f_.to_json()}}; }

 private:
  SmoothMap f_;
};

/// x -> center + phi(|x - center|) (x - center).
class RadialMap final : public MapNode {
 public:
  RadialMap(TransitionProfile phi, Vec center)
      : MapNode(static_cast<int>(center.size()), Region::all(static_cast<int>(center.size())), Orientation::preserving),
        phi_(phi),
        c_(std::move(center)) {}

  const TransitionProfile& profile() const { return phi_; }
  const Vec& center() const { return c_; }

  Vec eval(const Vec& x) const override {
    const Vec u = x - c_;
    const double r = u.norm();
    if (r >= phi_.b() && phi_.outer() == 1.0) return x;
    return c_ + phi_(r) * u;
  }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override {
    const Vec u = x - c_;
    const double r = u.norm();
    if (r >= phi_.b() && phi_.outer() == 1.0) return {x, identity(dim())};
    Mat J = phi_(r) * identity(dim());
    const double dphi = phi_.derivative(r);
    if (dphi != 0.0 && r > 0.0) J += (dphi / r) * (u * u.transpose());
    return {c_ + phi_(r) * u, J};
  }
  bool structural_inverse() const override { return true; }
  std::optional<Vec> inverse(const Vec& y) const override {
    const Vec v = y - c_;
    const double s = v.norm();
    if (s >= phi_.b() * phi_.outer() && phi_.outer() == 1.0) return y;
    if (s <= phi_.a() * phi_.inner()) return c_ + v / phi_.inner();
    const double r = invert_radial_profile(phi_, s);
    return c_ + (r / s) * v;
  }
  bool is_identity() const override { return phi_.inner() == 1.0 && phi_.outer() == 1.0; }
  Json to_json() const override {
    return Json{{"family", "radial"},
                {"a", phi_.a()},
                {"b", phi_.b()},
                {"c0", phi_.inner()},
                {"c1", phi_.outer()},
                {"center", diffext::to_json(c_)}};
  }

 private:
  TransitionProfile phi_;
  Vec c_;
};

struct SeamEvidence {
  int first = 0;
  int second = 0;
  int samples = 0;
  double worst = 0.0;
  Vec worst_point;

  Json to_json() const {
    Json j{{"pieces", Json::array({first, second})}, {"samples", samples}, {"worst", worst}};
    j["worst_point"] = worst_point.size() ? diffext::to_json(worst_point) : Json(nullptr);
    return j;
  }
};

/// First-match routing over (region, map) pieces.
class PiecewiseMap final : public MapNode {
 public:
  using Piece = std::pair<Region, SmoothMap>;

  PiecewiseMap(std::vector<Piece> pieces, std::vector<SeamEvidence> evidence, Region domain)
      : MapNode(pieces.front().second.dim(), std::move(domain), combined(pieces)),
        pieces_(std::move(pieces)),
        evidence_(std::move(evidence)) {}

  const std::vector<Piece>& pieces() const { return pieces_; }
  const std::vector<SeamEvidence>& evidence() const { return evidence_; }

  int route(const Vec& x) const {
    for (std::size_t i = 0; i < pieces_.size(); ++i)
      if (pieces_[i].first.contains(x)) return static_cast<int>(i);
    return -1;
  }

  Vec eval(const Vec& x) const override { return piece_for(x)(x); }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override { return piece_for(x).eval_jac(x); }

  bool structural_inverse() const override {
    for (const auto& p : pieces_)
      if (!p.second.structural_inverse()) return false;
    return true;
  }

  /// The preimage must route back to the piece that produced it; pieces agree
  /// on overlaps, so a rounding-level disagreement falls back to the first
  /// converged candidate.
  std::optional<Vec> inverse(const Vec& y) const override {
    std::optional<Vec> fallback;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      auto x = pieces_[i].second.inverse(y);
      if (!x) continue;
      if (route(*x) == static_cast<int>(i)) return x;
      if (!fallback && pieces_[i].first.contains(*x)) fallback = x;
    }
    return fallback;
  }

  Json to_json() const override {
    Json a = Json::array();
    for (const auto& [r, m] : pieces_) a.push_back(Json{{"region", r.to_json()}, {"map", m.to_json()}});
    Json ev = Json::array();
    for (const auto& e : evidence_) ev.push_back(e.to_json());
    return Json{{"piecewise", std::move(a)}, {"seams", std::move(ev)}};
  }

 private:
  const SmoothMap& piece_for(const Vec& x) const {
    const int i = route(x);
    if (i < 0) throw Error(ErrorKind::coverage, "piecewise map: point not covered by any region");
    return pieces_[static_cast<std::size_t>(i)].second;
  }

  static Orientation combined(const std::vector<Piece>& pieces) {
    if (pieces.empty()) throw Error(ErrorKind::gluing, "glue: no pieces");
    const Orientation o = pieces.front().second.orientation();
    for (const auto& p : pieces)
      if (p.second.orientation() != o) return Orientation::unknown;
    return o;
  }

  std::vector<Piece> pieces_;
  std::vector<SeamEvidence> evidence_;
};

// ---------------------------------------------------------------------------
// operations

inline SmoothMap identity_map(int n) { return SmoothMap(std::make_shared<IdentityMap>(n)); }

inline SmoothMap translation_map(const Vec& t) {
  return SmoothMap(std::make_shared<AffineMap>(identity(static_cast<int>(t.size())), zeros(static_cast<int>(t.size())), t));
}

inline SmoothMap inverse_of(const SmoothMap& f) {
  if (auto inv = f.as<InverseMap>()) return inv->base();
  if (f.is_identity()) return f;
  return SmoothMap(std::make_shared<InverseMap>(f));
}

/// compose({f, g, h}) = f o g o h. When the rightmost map has a bounded
/// domain, `validation_samples` points of it are pushed through the chain and
/// must land in each successive domain.
inline SmoothMap compose(const std::vector<SmoothMap>& maps, int validation_samples = 64) {
  if (maps.empty()) throw Error(ErrorKind::composition, "compose: empty list");
  const int n = maps.front().dim();
  for (const auto& m : maps)
    if (!m || m.dim() != n) throw Error(ErrorKind::composition, "compose: dimension mismatch");
  std::vector<SmoothMap> flat;
  for (const auto& m : maps) {
    if (m.is_identity()) continue;
    if (auto c = m.as<CompositeMap>())
      flat.insert(flat.end(), c->maps().begin(), c->maps().end());
    else
      flat.push_back(m);
  }
  if (flat.empty()) return maps.back().is_identity() ? maps.back() : identity_map(n);
  if (flat.size() == 1) return flat.front();
  if (validation_samples > 0 && flat.back().domain().bounds()) {
    auto pts = sample_region(flat.back().domain(), validation_samples, 0xc0de, 0);
    for (const Vec& p : pts) {
      Vec y = p;
      for (std::size_t k = flat.size(); k-- > 1;) {
        y = flat[k](y);
        if (!flat[k - 1].domain().contains(y)) {
          std::ostringstream os;
          os << "compose: image of map " << k << " leaves the domain of map " << (k - 1);
          throw Error(ErrorKind::composition, os.str());
        }
      }
    }
  }
  return SmoothMap(std::make_shared<CompositeMap>(std::move(flat)));
}

/// Glue region-routed pieces. Every sampled point lying in two regions must
/// get the same value from both pieces (within tol), and sampled points of the
/// intended domain must be covered.
inline SmoothMap glue_piecewise(std::vector<PiecewiseMap::Piece> pieces, int overlap_samples = 200, double tol = 1e-10,
                                std::optional<Region> intended = std::nullopt, std::uint64_t seed = 1) {
  if (pieces.empty()) throw Error(ErrorKind::gluing, "glue: no pieces");
  const int n = pieces.front().second.dim();
  for (const auto& p : pieces)
    if (p.second.dim() != n || p.first.dim() != n) throw Error(ErrorKind::gluing, "glue: dimension mismatch");

  std::optional<Box> hull;
  for (const auto& p : pieces)
    if (auto b = p.first.bounds()) hull = hull ? Box::hull(*hull, *b) : *b;

  // coverage of the intended domain
  const Region domain = intended ? *intended : Region::all(n);
  std::optional<Box> cover_box = domain.bounds();
  if (!cover_box && hull) cover_box = hull->padded(0.5);
  if (cover_box) {
    CounterRng rng(seed, 0xc0);
    for (std::uint64_t k = 0; k < 2000; ++k) {
      const Vec x = rng.uniform_in(cover_box->lo, cover_box->hi, k);
      if (!domain.contains(x)) continue;
      bool covered = false;
      for (const auto& p : pieces)
        if (p.first.contains(x)) {
          covered = true;
          break;
        }
      if (!covered) {
        std::ostringstream os;
        os << "glue: point (" << x.transpose() << ") of the intended domain is not covered";
        throw Error(ErrorKind::coverage, os.str());
      }
    }
  }

  std::vector<SeamEvidence> evidence;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    for (std::size_t j = i + 1; j < pieces.size(); ++j) {
      auto bi = pieces[i].first.bounds();
      auto bj = pieces[j].first.bounds();
      std::optional<Box> box;
      if (bi && bj)
        box = Box{bi->lo.cwiseMax(bj->lo), bi->hi.cwiseMin(bj->hi)};
      else if (bi)
        box = bi;
      else if (bj)
        box = bj;
      else if (hull)
        box = hull->padded(0.5);
      if (!box || !((box->hi.array() >= box->lo.array()).all())) continue;
      SeamEvidence ev;
      ev.first = static_cast<int>(i);
      ev.second = static_cast<int>(j);
      CounterRng rng(seed, 0x5ea0 + i * 64 + j);
      const std::uint64_t max_attempts = 200ULL * static_cast<std::uint64_t>(std::max(overlap_samples, 1));
      for (std::uint64_t k = 0; k < max_attempts && ev.samples < overlap_samples; ++k) {
        const Vec x = rng.uniform_in(box->lo, box->hi, k);
        if (!pieces[i].first.contains(x) || !pieces[j].first.contains(x)) continue;
        ++ev.samples;
        const double d = (pieces[i].second(x) - pieces[j].second(x)).norm();
        if (d >= ev.worst) {
          ev.worst = d;
          ev.worst_point = x;
        }
      }
      if (ev.worst > tol) {
        std::ostringstream os;
        os << "glue: pieces " << i << " and " << j << " disagree by " << ev.worst << " at (" << ev.worst_point.transpose() << ")";
        throw Error(ErrorKind::gluing, os.str());
      }
      if (ev.samples > 0) evidence.push_back(std::move(ev));
    }
  }
  return SmoothMap(std::make_shared<PiecewiseMap>(std::move(pieces), std::move(evidence), domain));
}

/// Phi(x) = center + phi(|x - center|) (x - center); identity beyond the
/// outer knot.
inline SmoothMap radial_squeeze(const TransitionProfile& phi, const Vec& center) {
  if (phi.outer() != 1.0) throw Error(ErrorKind::parameter, "radial_squeeze: outer plateau must be 1");
  return SmoothMap(std::make_shared<RadialMap>(phi, center));
}

/// `inner` on `inner_region`, the identity elsewhere. `inner` must already be
/// the identity on `safe_shell` (the band where membership of inner_region is
/// numerically ambiguous), so misrouting there is harmless.
inline SmoothMap extend_by_identity(const SmoothMap& inner, const Region& inner_region, const Region& safe_shell,
                                    int shell_samples = 100, double tol = 1e-10, std::uint64_t seed = 3) {
  const int n = inner.dim();
  SeamEvidence ev;
  ev.first = 0;
  ev.second = 1;
  for (const Vec& y : sample_region(safe_shell, shell_samples, seed, 0x5e11)) {
    const double d = (inner(y) - y).norm();
    ++ev.samples;
    if (d >= ev.worst) {
      ev.worst = d;
      ev.worst_point = y;
    }
  }
  if (ev.worst > tol) {
    std::ostringstream os;
    os << "extend_by_identity: inner map moves a safe-shell point by " << ev.worst;
    throw Error(ErrorKind::construction, os.str());
  }
  std::vector<PiecewiseMap::Piece> pieces{{inner_region, inner}, {Region::all(n), identity_map(n)}};
  return SmoothMap(std::make_shared<PiecewiseMap>(std::move(pieces), std::vector<SeamEvidence>{ev}, Region::all(n)));
}

// ---------------------------------------------------------------------------
// ball diffeomorphisms

/// A map defined on B(center, radius * (1 + margin)) that is a diffeomorphism
/// onto its image.
struct BallDiffeo {
  SmoothMap map;
  Vec center;
  double radius = 1.0;
  double margin = 0.0;

  int dim() const { return static_cast<int>(center.size()); }
  double outer_radius() const { return radius * (1.0 + margin); }
  Region ball(bool closed = true) const { return Region::ball(center, radius, closed); }
  Region extended_ball() const { return Region::ball(center, outer_radius()); }

  Json to_json() const {
    return Json{{"map", map.to_json()}, {"center", diffext::to_json(center)}, {"radius", radius}, {"margin", margin}};
  }
};

/// Checks radius, margin and dimensions, and that the map is defined on
/// sampled points of the extended ball.
inline BallDiffeo make_ball_diffeo(SmoothMap map, Vec center, double radius, double margin) {
  if (!map) throw Error(ErrorKind::parameter, "ball diffeo: missing map");
  if (map.dim() != static_cast<int>(center.size())) throw Error(ErrorKind::parameter, "ball diffeo: dimension mismatch");
  if (!(radius > 0.0 && std::isfinite(radius))) throw Error(ErrorKind::parameter, "ball diffeo: radius must be > 0");
  if (!(margin > 0.0 && std::isfinite(margin))) throw Error(ErrorKind::parameter, "ball diffeo: margin must be > 0");
  BallDiffeo b{std::move(map), std::move(center), radius, margin};
  const int n = b.dim();
  for (const Vec& u : sphere_directions(n, n == 2 ? 64 : 256)) {
    const Vec x = b.center + (b.outer_radius() * (1.0 - 1e-12)) * u;
    if (!b.map.domain().contains(x)) {
      std::ostringstream os;
      os << "ball diffeo: map is not defined at (" << x.transpose() << ") of the extended ball";
      throw Error(ErrorKind::parameter, os.str());
    }
  }
  return b;
}

}  // namespace diffext
