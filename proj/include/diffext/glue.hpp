#pragma once
/// Gluing prescribed ball maps into one global diffeomorphism, and inserting
/// an inner map into a given embedding.

#include "diffext/palais.hpp"

#include <sstream>

namespace diffext {

struct GluePair {
  BallDiffeo source;  // parametrizes D_i
  BallDiffeo target;  // parametrizes D'_i
  SmoothMap map;      // F_i with F_i(D_i) = D'_i
  Polyline route;     // waypoints strictly between q_i and p_i; clearance 0 selects 1.25 eps
};

struct GlueScenario {
  int n = 2;
  Region U = Region::all(2);
  std::vector<GluePair> pairs;
  double eps = 0.1;
  double boundary_tol = 1e-9;  // F_i(dD_i) = dD'_i, relative to the target radius
};

struct GlueResult {
  SmoothMap map;
  NormalizedBalls sources;
  NormalizedBalls targets;
  SmoothMap mover;
  std::vector<Polyline> routes;
  std::vector<SmoothMap> automorphisms;  // extended G_i
  std::vector<double> automorphism_margins;
  SmoothMap automorphism_glue;

  Json to_json() const {
    Json src = Json::array(), tgt = Json::array(), rts = Json::array(), margins = Json::array();
    for (const auto& p : sources.anchors) src.push_back(diffext::to_json(p));
    for (const auto& q : targets.anchors) tgt.push_back(diffext::to_json(q));
    for (const auto& r : routes) rts.push_back(r.to_json());
    for (double m : automorphism_margins) margins.push_back(m);
    Json src_pipes = Json::array(), tgt_pipes = Json::array();
    for (const auto& p : sources.pipelines) src_pipes.push_back(p.to_json());
    for (const auto& p : targets.pipelines) tgt_pipes.push_back(p.to_json());
    return Json{{"source_anchors", std::move(src)},
                {"target_anchors", std::move(tgt)},
                {"routing", "target anchors to source anchors"},
                {"routes", std::move(rts)},
                {"automorphism_margins", std::move(margins)},
                {"source_normalization", std::move(src_pipes)},
                {"target_normalization", std::move(tgt_pipes)}};
  }
};

namespace detail {

inline std::vector<Vec> region_probe_directions(int n) { return sphere_directions(n, n == 2 ? 16 : 26); }

/// Every sampled boundary point y of D = G(B) has B(y, 1.1 eps) inside U.
inline void check_neighbourhood_inside(const BallDiffeo& G, double eps, const Region& U, const std::string& what) {
  const auto dirs = region_probe_directions(G.dim());
  for (const Vec& y : ball_boundary(G, G.dim() == 2 ? 360 : 1000))
    for (const Vec& v : dirs)
      if (!U.contains(Vec(y + 1.1 * eps * v))) {
        std::ostringstream os;
        os << what << ": the eps-neighbourhood of the ball leaves U near (" << y.transpose() << ")";
        throw Error(ErrorKind::geometry, os.str());
      }
}

/// F maps the boundary sphere of D onto that of D' (sampled via the
/// parametrizations) and preserves orientation at the centre.
inline void check_pair(const GluePair& p, double tol, std::size_t i) {
  const std::string tag = "pair[" + std::to_string(i) + "]";
  const Vec c = p.source.map(p.source.center);
  if (!(p.map.jacobian(c).determinant() > 0.0)) throw Error(ErrorKind::orientation, tag + ": F_i reverses orientation");
  for (const Vec& y : ball_boundary(p.source, p.source.dim() == 2 ? 360 : 1000)) {
    const auto pre = p.target.map.inverse(p.map(y));
    const double r = pre ? (*pre - p.target.center).norm() : std::numeric_limits<double>::infinity();
    if (!(std::abs(r - p.target.radius) <= tol * std::max(1.0, p.target.radius))) {
      std::ostringstream os;
      os << tag << ": F_i does not map the boundary of D_i onto that of D'_i (parametric radius " << r << " vs "
         << p.target.radius << ")";
      throw Error(ErrorKind::automorphism, os.str());
    }
  }
}

/// Largest relative margin m in {0.5, 0.25, ...} for which f is defined on the
/// image under a of the sphere of radius eps (1 + m) around p.
inline double defined_margin(const SmoothMap& f, const SmoothMap& a, const Vec& p, double eps) {
  const auto dirs = sphere_directions(static_cast<int>(p.size()), p.size() == 2 ? 128 : 400);
  for (double m = 0.5; m > 1e-3; m *= 0.5) {
    bool ok = true;
    for (const Vec& u : dirs)
      if (!f.domain().contains(a(Vec(p + eps * (1.0 + m) * u)))) {
        ok = false;
        break;
      }
    if (ok) return m;
  }
  throw Error(ErrorKind::margin, "glue: F_i is not defined on any neighbourhood of D_i");
}

}  // namespace detail

/// Global diffeomorphism F with F = F_i on every D_i and F = id outside U.
inline GlueResult glue_ball_maps(const GlueScenario& s, const PalaisOptions& opts = {}) {
  if (s.pairs.empty()) throw Error(ErrorKind::parameter, "glue: no pairs");
  if (!(s.eps > 0.0)) throw Error(ErrorKind::parameter, "glue: eps must be > 0");
  const int n = s.n;
  std::vector<BallDiffeo> sources, targets;
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    const auto& p = s.pairs[i];
    if (p.source.dim() != n || p.target.dim() != n || p.map.dim() != n)
      throw Error(ErrorKind::parameter, "glue: pair[" + std::to_string(i) + "] dimension mismatch");
    detail::check_pair(p, s.boundary_tol, i);
    detail::check_neighbourhood_inside(p.source, s.eps, s.U, "glue: source[" + std::to_string(i) + "]");
    detail::check_neighbourhood_inside(p.target, s.eps, s.U, "glue: target[" + std::to_string(i) + "]");
    sources.push_back(p.source);
    targets.push_back(p.target);
  }

  GlueResult out;
  try {
    out.sources = normalize_balls(sources, s.eps, opts);
  } catch (const Error& e) {
    throw e.tagged("normalize sources");
  }
  try {
    out.targets = normalize_balls(targets, s.eps, opts);
  } catch (const Error& e) {
    throw e.tagged("normalize targets");
  }

  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    Polyline r;
    r.vertices.push_back(out.targets.anchors[i]);
    for (const Vec& v : s.pairs[i].route.vertices) r.vertices.push_back(v);
    r.vertices.push_back(out.sources.anchors[i]);
    r.clearance = s.pairs[i].route.clearance > 0.0 ? s.pairs[i].route.clearance : 1.25 * s.eps;
    out.routes.push_back(std::move(r));
  }
  try {
    out.mover = move_balls(s.U, out.routes, s.eps, opts.linearize.flow);
  } catch (const Error& e) {
    throw e.tagged("move balls");
  }

  const SmoothMap A1 = out.sources.map;
  const SmoothMap A2inv = inverse_of(out.targets.map);
  std::vector<SmoothMap> stages;
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    const Vec& p = out.sources.anchors[i];
    try {
      const double m = detail::defined_margin(s.pairs[i].map, A1, p, s.eps);
      out.automorphism_margins.push_back(m);
      const SmoothMap Gi = compose({out.mover, A2inv, s.pairs[i].map, A1}, 0);
      const BallDiffeo ball{Gi, p, s.eps, m};
      out.automorphisms.push_back(extend_ball_automorphism(ball, s.eps, opts));
    } catch (const Error& e) {
      throw e.tagged("ball automorphism[" + std::to_string(i) + "]");
    }
    stages.push_back(out.automorphisms.back());
  }
  out.automorphism_glue = compose(stages, 0);
  out.map = compose({out.targets.map, inverse_of(out.mover), out.automorphism_glue, inverse_of(A1)}, 0);
  return out;
}

struct InsertResult {
  SmoothMap map;    // F o Phi
  SmoothMap inner;  // Phi
  GlueResult glue;
  double eps = 0.0;
};

/// H with H = G on D2 = B(g.center, g.radius) and H = F outside the interior
/// of D1 = d1.map(B(d1.center, d1.radius)). `u_inner` defaults to that
/// interior; eps <= 0 selects one fifth of the smallest clearance between D2,
/// F^-1 G (D2) and the boundary of U.
inline InsertResult insert_inner_map(const SmoothMap& F, const BallDiffeo& g, const BallDiffeo& d1,
                                     std::optional<Region> u_inner = std::nullopt, double eps = 0.0,
                                     const PalaisOptions& opts = {}) {
  const int n = g.dim();
  if (F.dim() != n || d1.dim() != n) throw Error(ErrorKind::parameter, "insert: dimension mismatch");
  if (!(F.jacobian(g.center).determinant() > 0.0)) throw Error(ErrorKind::orientation, "insert: F reverses orientation");
  if (!(g.map.jacobian(g.center).determinant() > 0.0)) throw Error(ErrorKind::orientation, "insert: G reverses orientation");
  const Region U = u_inner ? *u_inner
                           : Region::predicate(
                                 n, [d1](const Vec& x) { return detail::inside_parametrized(d1, x); },
                                 Region::image_of(d1.map.node(), d1.ball()).bounds(), "interior of D1");
  const int count = n == 2 ? 360 : 1000;
  const SmoothMap Finv = inverse_of(F);
  const SmoothMap target_map = compose({Finv, g.map}, 0);
  const BallDiffeo source{identity_map(n), g.center, g.radius, g.margin};
  const BallDiffeo target{target_map, g.center, g.radius, g.margin};

  auto boundary_gap = [&](const BallDiffeo& b, const std::string& what) {
    const auto dirs = detail::region_probe_directions(n);
    const double reach = 2.0 * b.radius * std::max(1.0, spectral_norm(b.map.jacobian(b.center)));
    double gap = reach;
    for (const Vec& y : detail::ball_boundary(b, count)) {
      if (!U.contains(y)) {
        std::ostringstream os;
        os << "insert: " << what << " is not contained in the interior of D1 (boundary point (" << y.transpose() << "))";
        throw Error(ErrorKind::containment, os.str());
      }
      for (const Vec& v : dirs) {
        if (U.contains(Vec(y + reach * v))) continue;
        double inside = 0.0, outside = reach;
        for (int k = 0; k < 30; ++k) {
          const double mid = 0.5 * (inside + outside);
          (U.contains(Vec(y + mid * v)) ? inside : outside) = mid;
        }
        gap = std::min(gap, inside);
      }
    }
    return gap;
  };
  const double gap_src = boundary_gap(source, "D2");
  const double gap_tgt = boundary_gap(target, "F^-1 G (D2)");
  if (!(eps > 0.0)) eps = 0.2 * std::min({gap_src, gap_tgt, g.radius});

  GlueScenario s;
  s.n = n;
  s.U = U;
  s.eps = eps;
  s.pairs.push_back(GluePair{source, target, target_map, Polyline{}});
  InsertResult res;
  res.eps = eps;
  res.glue = glue_ball_maps(s, opts);
  res.inner = res.glue.map;
  res.map = compose({F, res.inner}, 0);
  return res;
}

}  // namespace diffext
