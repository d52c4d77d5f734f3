#pragma once
/// Standard verification suites of the constructions: the contract of each
/// pipeline expressed as seeded checks.

#include "diffext/glue.hpp"
#include "diffext/verify.hpp"

namespace diffext {

struct ToleranceTable {
  double agreement = 1e-12;        // ball agreement of extensions and linearizations
  double identity = 1e-13;         // structural identities
  double roundtrip = 1e-8;         // single-ball constructions
  double jacobian_fd = 1e-5;       // relative finite-difference error
  double internal = 1e-10;         // shell identity and stage agreement
  double glue_agreement = 1e-9;    // restriction fidelity of glued maps
  double glue_roundtrip = 1e-7;    // deep composites

  Json to_json() const {
    return Json{{"agreement", agreement},   {"identity", identity},       {"roundtrip", roundtrip},
                {"jacobian_fd", jacobian_fd}, {"internal", internal},     {"glue_agreement", glue_agreement},
                {"glue_roundtrip", glue_roundtrip}};
  }
};

struct SampleTable {
  int agreement = 1000;
  int outside = 1000;
  int roundtrip = 10000;
  int orientation = 10000;
  int jacobian_fd = 200;
  int internal = 100;

  Json to_json() const {
    return Json{{"agreement", agreement},     {"outside", outside},         {"roundtrip", roundtrip},
                {"orientation", orientation}, {"jacobian_fd", jacobian_fd}, {"internal", internal}};
  }
};

struct SuiteSettings {
  std::uint64_t seed = 1;
  ToleranceTable tol;
  SampleTable samples;
  double fd_step = 1e-6;
};

/// The set A = B(c, rho) u H(B(c, rho)) of an extension, with a conservative
/// distance: the image rim is sampled and its spacing subtracted, so points
/// reported at distance >= d are at true distance >= d.
class ExtensionZone {
 public:
  explicit ExtensionZone(const BallDiffeo& H) : H_(H) {
    const int n = H.dim();
    const int count = n == 2 ? 4000 : 20000;
    double lip = 0.0;
    reach_ = H.radius;
    for (const Vec& u : sphere_directions(n, count)) {
      const Vec x = H.center + H.radius * u;
      rim_.push_back(H.map(x));
      lip = std::max(lip, spectral_norm(H.map.jacobian(x)));
      reach_ = std::max(reach_, (rim_.back() - H.center).norm());
    }
    spacing_ = lip * H.radius * sphere_spacing(n, count);
  }

  /// Radius around the centre containing A.
  double reach() const { return reach_; }

  double distance(const Vec& x) const {
    if ((x - H_.center).norm() <= H_.radius) return 0.0;
    if (auto pre = H_.map.inverse(x); pre && (*pre - H_.center).norm() <= H_.radius && (H_.map(*pre) - x).norm() < 1e-12)
      return 0.0;
    double d = std::max(0.0, (x - H_.center).norm() - H_.radius);
    for (const Vec& y : rim_) d = std::min(d, (x - y).norm());
    return std::max(0.0, d - spacing_);
  }

  /// Points of the box around the centre of half-width `half` at distance >= d from A.
  Region far_region(double d, double half) const {
    const Vec& c = H_.center;
    auto self = std::make_shared<ExtensionZone>(*this);
    return Region::predicate(
        H_.dim(), [self, d](const Vec& x) { return self->distance(x) >= d; }, Box{c.array() - half, c.array() + half},
        "dist(x, A) >= " + std::to_string(d));
  }

 private:
  BallDiffeo H_;
  std::vector<Vec> rim_;
  double spacing_ = 0.0;
  double reach_ = 0.0;
};

namespace detail {

inline CheckSpec make_check(CheckKind kind, std::string name, Region region, int samples, double tol, const SuiteSettings& s) {
  CheckSpec c;
  c.kind = kind;
  c.name = std::move(name);
  c.region = std::move(region);
  c.samples = samples;
  c.seed = s.seed;
  c.tol = tol;
  c.fd_step = s.fd_step;
  c.low_discrepancy = kind == CheckKind::orientation;
  return c;
}

inline Region box_around(const Vec& c, double half) { return Region::box(Vec(c.array() - half), Vec(c.array() + half)); }

}  // namespace detail

/// Extension contract and internal identities of one Palais pipeline.
inline std::vector<SuiteEntry> palais_suite(const PalaisPipeline& p, const SuiteSettings& s = {}) {
  using detail::make_check;
  const BallDiffeo& H = p.input;
  const Vec& c = H.center;
  const ExtensionZone zone(H);
  const double reach = zone.reach() + 2.0 * p.eps;
  std::vector<SuiteEntry> out;
  out.push_back({make_check(CheckKind::agreement, "agrees with H on the closed ball", Region::ball(c, H.radius),
                            s.samples.agreement, s.tol.agreement, s),
                 H.map, std::nullopt});
  out.push_back({make_check(CheckKind::identity_outside, "identity where dist(x, A) >= eps", zone.far_region(p.eps, reach),
                            s.samples.outside, s.tol.identity, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::roundtrip, "structural roundtrip", Region::ball(c, reach), s.samples.roundtrip,
                            s.tol.roundtrip, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::orientation, "det J > 0", detail::box_around(c, reach), s.samples.orientation,
                            1.0, s),
                 std::nullopt, std::nullopt});
  auto fd = make_check(CheckKind::jacobian_fd, "analytic vs central-difference Jacobian", Region::ball(c, reach),
                       s.samples.jacobian_fd, s.tol.jacobian_fd, s);
  fd.scale = p.tau > 0.0 ? std::min(1.0, p.tau) : 1.0;
  out.push_back({fd, std::nullopt, std::nullopt});
  if (p.tau > 0.0) {
    const double rho = H.radius, tau = p.tau;
    const SmoothMap& H1 = p.linearization.map;
    out.push_back({make_check(CheckKind::identity_outside, "shell identity of psi",
                              Region::image_of(H1.node(), Region::annulus(c, rho + 2.0 * tau, rho + 3.0 * tau)),
                              s.samples.internal, s.tol.internal, s),
                   std::nullopt, p.psi});
    out.push_back({make_check(CheckKind::agreement, "H2 agrees with H1 on B(c, rho + tau)", Region::ball(c, rho + tau, false),
                              s.samples.internal, s.tol.internal, s),
                   H1, p.h2});
  }
  return out;
}

inline Json palais_environment(const PalaisPipeline& p) {
  return Json{{"dimension", p.input.dim()}, {"center", to_json(p.input.center)}, {"radius", p.input.radius},
              {"margin", p.input.margin},   {"eps", p.eps},                       {"tau", p.tau},
              {"tau_halvings", p.tau_halvings}, {"delta", p.delta},              {"seam_radius", p.seam_radius}};
}

/// Identity near the centre, agreement with H on the outer half, inverse,
/// orientation and Jacobian of a local linearization.
inline std::vector<SuiteEntry> linearize_suite(const BallDiffeo& H, const LinearizationResult& r, const SuiteSettings& s = {}) {
  using detail::make_check;
  const Vec& c = H.center;
  const double rho = H.radius;
  std::vector<SuiteEntry> out;
  out.push_back({make_check(CheckKind::identity_outside, "identity on B(c, delta)", Region::ball(c, r.delta, false),
                            s.samples.agreement, s.tol.identity, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::agreement, "agrees with H on rho/2 <= |x - c| <= rho", Region::annulus(c, 0.5 * rho, rho),
                            s.samples.agreement, s.tol.agreement, s),
                 H.map, std::nullopt});
  out.push_back({make_check(CheckKind::roundtrip, "structural roundtrip", Region::ball(c, rho), s.samples.roundtrip, s.tol.roundtrip, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::orientation, "det J > 0", Region::ball(c, rho), s.samples.orientation, 1.0, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::jacobian_fd, "analytic vs central-difference Jacobian", Region::ball(c, rho),
                            s.samples.jacobian_fd, s.tol.jacobian_fd, s),
                 std::nullopt, std::nullopt});
  return out;
}

inline Json linearize_environment(const BallDiffeo& H, const LinearizationResult& r) {
  return Json{{"dimension", H.dim()}, {"center", to_json(H.center)}, {"radius", H.radius}, {"delta", r.delta},
              {"halvings", r.halvings}, {"radii", Json{{"d0", r.radii.d0}, {"d1_prime", r.radii.d1_prime}, {"d1", r.radii.d1}, {"d2", r.radii.d2}}}};
}

/// Restriction fidelity, identity outside U, roundtrip and orientation of a
/// glued map. U must be bounded.
inline std::vector<SuiteEntry> glue_suite(const GlueScenario& g, const SuiteSettings& s = {}) {
  using detail::make_check;
  const auto bb = g.U.bounds();
  if (!bb) throw Error(ErrorKind::parameter, "glue suite: U must be bounded");
  std::vector<SuiteEntry> out;
  for (std::size_t i = 0; i < g.pairs.size(); ++i) {
    const auto& p = g.pairs[i];
    out.push_back({make_check(CheckKind::agreement, "agrees with F_" + std::to_string(i) + " on D_" + std::to_string(i),
                              Region::image_of(p.source.map.node(), p.source.ball()), s.samples.agreement,
                              s.tol.glue_agreement, s),
                   p.map, std::nullopt});
  }
  const Box outer = bb->padded(0.5);
  out.push_back({make_check(CheckKind::identity_outside, "identity outside U",
                            Region::intersection({Region::box(outer.lo, outer.hi), Region::complement(g.U)}), s.samples.outside,
                            s.tol.identity, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::roundtrip, "structural roundtrip on U", g.U, s.samples.roundtrip, s.tol.glue_roundtrip, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::orientation, "det J > 0 on U", g.U, s.samples.orientation, 1.0, s), std::nullopt, std::nullopt});
  return out;
}

inline Json glue_environment(const GlueScenario& g, const GlueResult& r) {
  return Json{{"dimension", g.n}, {"eps", g.eps}, {"pairs", g.pairs.size()}, {"routing", "target anchors to source anchors"},
              {"automorphism_margins", r.to_json()["automorphism_margins"]}};
}

/// H = G on D2 and H = F off the interior of D1, with roundtrip and
/// orientation on `domain`.
inline std::vector<SuiteEntry> insert_suite(const SmoothMap& F, const BallDiffeo& g, const Region& u_inner, const Region& domain,
                                            const SuiteSettings& s = {}) {
  using detail::make_check;
  const auto bb = domain.bounds();
  if (!bb) throw Error(ErrorKind::parameter, "insert suite: the domain must be bounded");
  std::vector<SuiteEntry> out;
  out.push_back({make_check(CheckKind::agreement, "agrees with G on D2", Region::ball(g.center, g.radius), s.samples.agreement,
                            s.tol.glue_agreement, s),
                 g.map, std::nullopt});
  out.push_back({make_check(CheckKind::agreement, "agrees with F off the interior of D1",
                            Region::intersection({domain, Region::complement(u_inner)}), s.samples.outside, s.tol.identity, s),
                 F, std::nullopt});
  out.push_back({make_check(CheckKind::roundtrip, "structural roundtrip", domain, s.samples.roundtrip, s.tol.glue_roundtrip, s),
                 std::nullopt, std::nullopt});
  out.push_back({make_check(CheckKind::orientation, "det J > 0", domain, s.samples.orientation, 1.0, s), std::nullopt, std::nullopt});
  return out;
}

}  // namespace diffext
