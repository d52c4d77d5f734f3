#pragma once
/// Extension of ball diffeomorphisms to global diffeomorphisms: the Palais
/// construction, extension of automorphisms of a closed ball, and the
/// normalization of a family of flat balls to small round balls.

#include "diffext/linearize.hpp"

#include <sstream>

namespace diffext {

struct PalaisOptions {
  int max_tau_halvings = 20;
  int containment_directions = 0;  // 0: default_sphere_count(n)
  int check_samples = 100;
  std::uint64_t seed = 5;
  LinearizeOptions linearize;
};

/// Every stage of one extension, kept for inspection and replay.
struct PalaisPipeline {
  BallDiffeo input;
  double eps = 0.0;
  double tau = 0.0;
  int tau_halvings = 0;
  double delta = 0.0;
  double seam_radius = 0.0;
  LinearizationResult linearization;
  SmoothMap phi;        // radial squeeze onto the identity plateau of H1
  SmoothMap psi;        // H1 o phi^-1 o H1^-1 on H1(B(c, rho + 3 tau))
  SmoothMap extension;  // psi extended by the identity
  SmoothMap h2;         // extension o phi
  SmoothMap map;        // H on the closed ball, h2 elsewhere
  SeamEvidence interior_agreement;  // h2 against H1 on B(c, rho + tau)

  Json to_json() const {
    return Json{{"center", diffext::to_json(input.center)},
                {"radius", input.radius},
                {"margin", input.margin},
                {"eps", eps},
                {"tau", tau},
                {"tau_halvings", tau_halvings},
                {"delta", delta},
                {"seam_radius", seam_radius},
                {"linearization", linearization.to_json()},
                {"phi", phi.to_json()},
                {"h2", h2.to_json()},
                {"interior_agreement", interior_agreement.to_json()}};
  }
};

namespace detail {

/// Largest distance, over sampled directions u and s in {rho + tau, rho + 2 tau,
/// rho + 3 tau}, between H(c + s u) and H(c + rho u).
inline double image_collar_width(const BallDiffeo& H, double tau, int directions) {
  double worst = 0.0;
  for (const Vec& u : sphere_directions(H.dim(), directions)) {
    const Vec base = H.map(H.center + H.radius * u);
    for (int k = 1; k <= 3; ++k) worst = std::max(worst, (H.map(H.center + (H.radius + k * tau) * u) - base).norm());
  }
  return worst;
}

}  // namespace detail

/// Global diffeomorphism equal to H on the closed ball B(c, rho) and to the
/// identity wherever dist(x, B(c, rho) u H(B(c, rho))) >= eps. H must fix c
/// and preserve orientation.
inline PalaisPipeline palais_pipeline(const BallDiffeo& H, double eps, const PalaisOptions& opts = {}) {
  const int n = H.dim();
  if (!(eps > 0.0)) throw Error(ErrorKind::parameter, "palais_extend: eps must be > 0");
  if (!(H.margin > 0.0)) throw Error(ErrorKind::margin, "palais_extend: the map needs a positive extension margin");
  const Vec& c = H.center;
  const double rho = H.radius;
  detail::center_derivative(H, "palais_extend");

  PalaisPipeline p;
  p.input = H;
  p.eps = eps;
  if (H.map.is_identity()) {
    p.linearization.map = p.phi = p.psi = p.extension = p.h2 = p.map = H.map;
    return p;
  }

  const int dirs = opts.containment_directions > 0 ? opts.containment_directions : default_sphere_count(n);
  double tau = std::min(rho * H.margin / 3.0, 0.25 * rho);
  bool fits = false;
  double width = 0.0;
  for (int k = 0; k <= opts.max_tau_halvings; ++k) {
    width = std::max(3.0 * tau, detail::image_collar_width(H, tau, dirs));
    p.tau_halvings = k;
    if (1.1 * width < eps) {
      fits = true;
      break;
    }
    tau *= 0.5;
  }
  if (!fits) {
    std::ostringstream os;
    os << "palais_extend: no tau <= margin/3 keeps the collar inside the eps-neighbourhood (collar " << width
       << " after " << opts.max_tau_halvings << " halvings, eps " << eps << ")";
    throw Error(ErrorKind::margin, os.str());
  }
  p.tau = tau;

  const double R = rho + 3.0 * tau;
  const BallDiffeo big{H.map, c, R, H.outer_radius() / R - 1.0};
  p.linearization = local_linearize(big, opts.linearize);
  p.delta = p.linearization.delta;
  const SmoothMap& H1 = p.linearization.map;

  p.phi = radial_squeeze(transition_profile(rho + tau, rho + 2.0 * tau, p.delta / (rho + tau), 1.0), c);
  p.psi = compose({H1, inverse_of(p.phi), inverse_of(H1)}, 0);
  const Region image = Region::image_of(H1.node(), Region::ball(c, R));
  const Region shell = Region::image_of(H1.node(), Region::annulus(c, rho + 2.0 * tau, R));
  try {
    p.extension = extend_by_identity(p.psi, image, shell, opts.check_samples, 1e-10, opts.seed);
  } catch (const Error& e) {
    throw e.tagged("palais shell");
  }
  p.h2 = compose({p.extension, p.phi}, 0);

  SeamEvidence& ev = p.interior_agreement;
  for (const Vec& x : sample_region(Region::ball(c, rho + tau, false), opts.check_samples, opts.seed, 0x1e6)) {
    const double d = (p.h2(x) - H1(x)).norm();
    ++ev.samples;
    if (d >= ev.worst) {
      ev.worst = d;
      ev.worst_point = x;
    }
  }
  if (ev.worst > 1e-10) {
    std::ostringstream os;
    os << "palais_extend: H2 departs from H1 by " << ev.worst << " inside B(c, rho + tau)";
    throw Error(ErrorKind::construction, os.str());
  }

  p.seam_radius = std::max(0.5 * rho, 0.5 * R);
  std::vector<PiecewiseMap::Piece> pieces{{Region::ball(c, rho), H.map},
                                          {Region::complement(Region::ball(c, p.seam_radius, false)), p.h2}};
  p.map = glue_piecewise(std::move(pieces), 200, 1e-10, std::nullopt, opts.seed);
  return p;
}

inline SmoothMap palais_extend(const BallDiffeo& H, double eps, const PalaisOptions& opts = {}) {
  return palais_pipeline(H, eps, opts).map;
}

/// Global diffeomorphism equal to G on the closed ball B(a, r) and to the
/// identity outside B(a, r + eps), for G mapping that ball onto itself.
inline SmoothMap extend_ball_automorphism(const BallDiffeo& G, double eps, const PalaisOptions& opts = {}) {
  const int n = G.dim();
  const Vec& a = G.center;
  const double r = G.radius;
  const double tol = 1e-10 * std::max(1.0, r);
  for (const Vec& u : sphere_directions(n, n == 2 ? 360 : 1000)) {
    const Vec x = a + r * u;
    const double out = (G.map(x) - a).norm();
    if (out > r + tol) {
      std::ostringstream os;
      os << "extend_ball_automorphism: boundary point maps to radius " << out << " > " << r;
      throw Error(ErrorKind::automorphism, os.str());
    }
    const auto pre = G.map.inverse(x);
    if (!pre || (*pre - a).norm() > r + tol) {
      std::ostringstream os;
      os << "extend_ball_automorphism: boundary point (" << x.transpose() << ") has no preimage in the ball";
      throw Error(ErrorKind::automorphism, os.str());
    }
  }
  if (G.map.is_identity()) return G.map;

  const Vec ga = G.map(a);
  const double d = (ga - a).norm();
  SmoothMap recenter = identity_map(n);
  if (d > 0.0) {
    if (!(d < r)) throw Error(ErrorKind::geometry, "extend_ball_automorphism: the centre maps onto the boundary");
    const double tube = 0.5 * (r - d);
    recenter = damped_translation(ga, a, tube / 1.25, tube, Region::ball(a, r, false), opts.linearize.flow);
  }
  BallDiffeo fixed{compose({recenter, G.map}, 0), a, r, G.margin};
  const SmoothMap ext = palais_extend(fixed, eps, opts);
  return compose({inverse_of(recenter), ext}, 0);
}

/// Result of normalizing a family of flat balls D_i = G_i(B(c_i, rho_i)).
struct NormalizedBalls {
  SmoothMap map;             // F with F(B(p_i, eps)) = D_i
  std::vector<Vec> anchors;  // p_i = G_i(c_i)
  std::vector<PalaisPipeline> pipelines;
};

namespace detail {

inline std::vector<Vec> ball_boundary(const BallDiffeo& G, int count) {
  std::vector<Vec> out;
  for (const Vec& u : sphere_directions(G.dim(), count)) out.push_back(G.map(G.center + G.radius * u));
  return out;
}

inline bool inside_parametrized(const BallDiffeo& G, const Vec& x, double shrink = 1.0) {
  const auto pre = G.map.inverse(x);
  return pre && (*pre - G.center).norm() < shrink * G.radius;
}

}  // namespace detail

/// F with F(B(p_i, eps)) = D_i for p_i = G_i(c_i), and F(x) = x whenever
/// dist(x, D_1 u ... u D_l) >= eps.
inline NormalizedBalls normalize_balls(const std::vector<BallDiffeo>& balls, double eps, const PalaisOptions& opts = {}) {
  if (balls.empty()) throw Error(ErrorKind::parameter, "normalize_balls: no balls");
  if (!(eps > 0.0)) throw Error(ErrorKind::parameter, "normalize_balls: eps must be > 0");
  const int n = balls.front().dim();
  const int count = n == 2 ? 360 : (n == 3 ? 1000 : 2000);
  std::vector<std::vector<Vec>> rims;
  for (const auto& G : balls) {
    if (G.dim() != n) throw Error(ErrorKind::parameter, "normalize_balls: dimension mismatch");
    rims.push_back(detail::ball_boundary(G, count));
  }
  for (std::size_t i = 0; i < balls.size(); ++i)
    for (std::size_t j = i + 1; j < balls.size(); ++j) {
      double gap = std::numeric_limits<double>::infinity();
      for (const Vec& x : rims[i])
        for (const Vec& y : rims[j]) gap = std::min(gap, (x - y).norm());
      const bool nested = detail::inside_parametrized(balls[i], balls[j].map(balls[j].center)) ||
                          detail::inside_parametrized(balls[j], balls[i].map(balls[i].center));
      if (nested || !(gap > 4.0 * eps)) {
        std::ostringstream os;
        os << "normalize_balls: balls " << i << " and " << j << " are closer than 4 eps (sampled gap " << gap << ")";
        throw Error(ErrorKind::geometry, os.str());
      }
    }

  NormalizedBalls out;
  std::vector<SmoothMap> stages;
  for (std::size_t i = 0; i < balls.size(); ++i) {
    const BallDiffeo& G = balls[i];
    const Vec p = G.map(G.center);
    for (const Vec& u : sphere_directions(n, count))
      if (!detail::inside_parametrized(G, p + eps * u)) {
        std::ostringstream os;
        os << "normalize_balls: eps too large, B(p_" << i << ", eps) leaves the interior of ball " << i;
        throw Error(ErrorKind::geometry, os.str());
      }
    const double s = G.radius / eps;
    const SmoothMap scale(std::make_shared<AffineMap>(s * identity(n), p, Vec(G.center - p)));
    const BallDiffeo H{compose({G.map, scale}, 0), p, eps, G.margin};
    try {
      out.pipelines.push_back(palais_pipeline(H, eps, opts));
    } catch (const Error& e) {
      throw e.tagged("ball[" + std::to_string(i) + "]");
    }
    stages.push_back(out.pipelines.back().map);
    out.anchors.push_back(p);
  }
  out.map = compose(stages, 0);
  return out;
}

}  // namespace diffext
