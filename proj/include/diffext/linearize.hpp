#pragma once
/// Local linearization of a ball diffeomorphism at a fixed centre: the
/// derivative blend, the flow-built deformation of a linear map to the
/// identity, and the assembled map that is the identity near the centre and
/// unchanged near the ball boundary.

#include "diffext/flows.hpp"

#include <cmath>
#include <sstream>

namespace diffext {

/// H_b(x) = H(x) for |x - c| >= outer, c + A (x - c) for |x - c| <= inner,
/// and psi H(x) + (1 - psi) (c + A (x - c)) in between, where psi rises from
/// 0 at inner to 1 at outer.
class BlendMap final : public MapNode {
 public:
  BlendMap(SmoothMap H, Mat A, Vec center, double inner, double outer)
      : MapNode(H.dim(), H.domain(), Orientation::preserving),
        H_(std::move(H)),
        A_(std::move(A)),
        Ainv_(A_.inverse()),
        c_(std::move(center)),
        inner_(inner),
        outer_(outer) {
    if (!(0.0 < inner_ && inner_ < outer_)) throw Error(ErrorKind::parameter, "blend: need 0 < inner < outer");
  }

  const SmoothMap& base() const { return H_; }
  const Mat& derivative() const { return A_; }
  const Vec& center() const { return c_; }
  double inner() const { return inner_; }
  double outer() const { return outer_; }

  double psi(double r) const { return smooth_step((r - inner_) / (outer_ - inner_)); }
  double psi_d(double r) const { return smooth_step_derivative((r - inner_) / (outer_ - inner_)) / (outer_ - inner_); }

  Vec eval(const Vec& x) const override {
    const Vec z = x - c_;
    const double r = z.norm();
    if (r >= outer_) return H_(x);
    const Vec lin = c_ + A_ * z;
    if (r <= inner_) return lin;
    const double p = psi(r);
    return p * H_(x) + (1.0 - p) * lin;
  }

  std::pair<Vec, Mat> eval_jac(const Vec& x) const override {
    const Vec z = x - c_;
    const double r = z.norm();
    if (r >= outer_) return H_.eval_jac(x);
    const Vec lin = c_ + A_ * z;
    if (r <= inner_) return {lin, A_};
    const double p = psi(r);
    auto [h, Dh] = H_.eval_jac(x);
    Mat J = p * Dh + (1.0 - p) * A_;
    J += ((psi_d(r) / r) * (h - lin)) * z.transpose();
    return {p * h + (1.0 - p) * lin, std::move(J)};
  }

  std::vector<Vec> seeds(const Vec& y) const override {
    std::vector<Vec> s{c_ + Ainv_ * (y - c_), y};
    if (H_.structural_inverse())
      if (auto x = H_.inverse(y)) s.push_back(*x);
    return s;
  }

  Json to_json() const override {
    return Json{{"blend", Json{{"map", H_.to_json()},
                               {"derivative", diffext::to_json(A_)},
                               {"center", diffext::to_json(c_)},
                               {"inner", inner_},
                               {"outer", outer_}}}};
  }

 private:
  SmoothMap H_;
  Mat A_, Ainv_;
  Vec c_;
  double inner_, outer_;
};

/// Outcome of one blend attempt. `accepted` holds when every sampled point of
/// the annulus has det J > 0 and ||DH_b - A|| < sigma_min(A); the second bound
/// makes H_b injective on the blend ball.
struct BlendAttempt {
  SmoothMap map;
  bool accepted = false;
  int samples = 0;
  double min_det = std::numeric_limits<double>::infinity();
  double max_deviation = 0.0;
  double deviation_bound = 0.0;
  Vec worst_point;

  Json to_json() const {
    Json j{{"accepted", accepted}, {"samples", samples}, {"min_det", min_det}, {"max_deviation", max_deviation},
           {"deviation_bound", deviation_bound}};
    j["worst_point"] = worst_point.size() ? diffext::to_json(worst_point) : Json(nullptr);
    return j;
  }
};

namespace detail {

inline int blend_grid_per_axis(int n) {
  if (n == 2) return 200;
  if (n == 3) return 40;
  return std::max(4, static_cast<int>(std::floor(std::pow(60000.0, 1.0 / n))));
}

inline Mat center_derivative(const BallDiffeo& H, const std::string& what) {
  auto [hc, A] = H.map.eval_jac(H.center);
  if ((hc - H.center).norm() > 1e-12 * std::max(1.0, H.center.norm())) {
    std::ostringstream os;
    os << what << ": the map must fix its centre (moves it by " << (hc - H.center).norm() << ")";
    throw Error(ErrorKind::parameter, os.str());
  }
  const double det = A.determinant();
  if (!(det > 0.0)) {
    std::ostringstream os;
    os << what << ": derivative at the centre has det " << det << " (orientation reversing or singular)";
    throw Error(ErrorKind::orientation, os.str());
  }
  return A;
}

}  // namespace detail

/// Blend H with its derivative at the centre over the annulus inner..outer,
/// validated on a lattice of the annulus.
inline BlendAttempt blend_with_derivative(const BallDiffeo& H, double outer, double inner) {
  if (!(0.0 < inner && inner < outer && outer <= 0.5 * H.radius))
    throw Error(ErrorKind::parameter, "blend_with_derivative: need 0 < inner < outer <= radius / 2");
  const Mat A = detail::center_derivative(H, "blend_with_derivative");
  BlendAttempt out;
  out.map = SmoothMap(std::make_shared<BlendMap>(H.map, A, H.center, inner, outer));
  const Eigen::MatrixXd Ad = A;
  out.deviation_bound = Eigen::JacobiSVD<Eigen::MatrixXd>(Ad).singularValues().minCoeff();
  const int n = H.dim();
  const Box box{H.center.array() - outer, H.center.array() + outer};
  for (const Vec& x : lattice_points(box, detail::blend_grid_per_axis(n))) {
    const double r = (x - H.center).norm();
    if (r < inner || r > outer) continue;
    const Mat J = out.map.jacobian(x);
    const double det = J.determinant();
    const double dev = spectral_norm(Mat(J - A));
    ++out.samples;
    const bool worse = det < out.min_det || dev > out.max_deviation;
    out.min_det = std::min(out.min_det, det);
    out.max_deviation = std::max(out.max_deviation, dev);
    if (worse) out.worst_point = x;
  }
  out.accepted = out.min_det > 0.0 && out.max_deviation < out.deviation_bound;
  return out;
}

/// Global diffeomorphism equal to x -> A x on B(0, r_in) and to the identity
/// outside B(0, r_out): time-1 flows of beta(|x|) Y/m x (m times), then of
/// beta(|x|) K x, where A = exp(K) exp(Y).
inline SmoothMap damped_linear_deform(const Mat& A, double r_in, double r_out, const FlowOptions& opts = {}) {
  if (A.rows() != A.cols() || A.rows() < 1) throw Error(ErrorKind::parameter, "damped_linear_deform: A must be square");
  if (!(0.0 < r_in && r_in < r_out)) throw Error(ErrorKind::parameter, "damped_linear_deform: need 0 < r_in < r_out");
  const int n = static_cast<int>(A.rows());
  if ((A - identity(n)).cwiseAbs().maxCoeff() == 0.0) return identity_map(n);
  const auto f = linear_factorize(A);
  Mat K = 0.5 * (f.K - f.K.transpose());
  Mat Y = 0.5 * (f.Y + f.Y.transpose());
  double nY = spectral_norm(Y);
  if (nY <= 1e-14) {
    Y.setZero();
    nY = 0.0;
  }
  if (K.cwiseAbs().maxCoeff() <= 1e-14) K.setZero();
  const double plateau = 1.1 * r_in * std::exp(nY);
  if (plateau >= r_out) {
    std::ostringstream os;
    os << "damped_linear_deform: plateau 1.1 r_in exp(|Y|) = " << plateau << " does not fit inside r_out = " << r_out
       << "; shrink r_in";
    throw Error(ErrorKind::geometry, os.str());
  }
  std::vector<SmoothMap> stages;
  if (!K.isZero(0.0)) stages.push_back(flow_map(std::make_shared<DampedLinearField>(K, plateau, r_out), 1.0, opts));
  if (!Y.isZero(0.0)) {
    const int m = std::max(1, static_cast<int>(std::ceil(nY / std::log(2.0))));
    const SmoothMap stage = flow_map(std::make_shared<DampedLinearField>(Mat(Y / m), plateau, r_out), 1.0, opts);
    for (int j = 0; j < m; ++j) stages.push_back(stage);
  }
  if (stages.empty()) return identity_map(n);
  return compose(stages, 0);
}

struct LinearizationRadii {
  double d0 = 0.0;        // identity plateau
  double d1_prime = 0.0;  // outer radius of the linear deformation
  double d1 = 0.0;        // inner radius of the blend
  double d2 = 0.0;        // outer radius of the blend

  Json to_json() const { return Json{{"delta0", d0}, {"delta1_prime", d1_prime}, {"delta1", d1}, {"delta2", d2}}; }
};

struct LinearizationResult {
  SmoothMap map;
  double delta = 0.0;
  LinearizationRadii radii;
  int halvings = 0;
  BlendAttempt blend;
  double min_det = std::numeric_limits<double>::infinity();
  Vec min_det_point;
  int det_samples = 0;

  Json to_json() const {
    Json j{{"delta", delta}, {"radii", radii.to_json()}, {"halvings", halvings}, {"blend", blend.to_json()},
           {"min_det", min_det}, {"det_samples", det_samples}, {"map", map.to_json()}};
    j["min_det_point"] = min_det_point.size() ? diffext::to_json(min_det_point) : Json(nullptr);
    return j;
  }
};

struct LinearizeOptions {
  int max_halvings = 40;
  int det_samples = 10000;
  std::uint64_t seed = 11;
  FlowOptions flow;
};

/// H1 with H1 = id on B(c, delta) and H1 = H outside B(c, 1.5 delta2), where
/// delta2 <= radius / 4. H must fix the centre c and preserve orientation.
inline LinearizationResult local_linearize(const BallDiffeo& H, const LinearizeOptions& opts = {}) {
  const int n = H.dim();
  if (!(H.margin >= 0.0)) throw Error(ErrorKind::parameter, "local_linearize: margin must be >= 0");
  const Mat A = detail::center_derivative(H, "local_linearize");
  const Vec& c = H.center;
  LinearizationResult res;
  if (H.map.is_identity()) {
    res.map = H.map;
    res.radii.d2 = 0.25 * H.radius;
    res.radii.d1 = 0.5 * res.radii.d2;
    res.radii.d1_prime = res.radii.d1 / 1.1;
    res.radii.d0 = res.radii.d1_prime / 1.5;
    res.delta = res.radii.d2;
    res.min_det = 1.0;
    return res;
  }

  const Mat Ainv = A.inverse();
  const double nY = spectral_norm(linear_factorize(Ainv).Y);

  double d2 = 0.25 * H.radius;
  bool accepted = false;
  for (int k = 0; k <= opts.max_halvings; ++k) {
    res.blend = blend_with_derivative(H, d2, 0.5 * d2);
    res.halvings = k;
    if (res.blend.accepted) {
      accepted = true;
      break;
    }
    d2 *= 0.5;
  }
  if (!accepted) {
    std::ostringstream os;
    os << "local_linearize: no admissible blend radius after " << opts.max_halvings << " halvings (worst det J "
       << res.blend.min_det << ", derivative deviation " << res.blend.max_deviation << " vs bound "
       << res.blend.deviation_bound << ")";
    throw Error(ErrorKind::linearization, os.str());
  }
  res.radii.d2 = d2;
  res.radii.d1 = 0.5 * d2;
  res.radii.d1_prime = res.radii.d1 / (1.1 * std::exp(nY));
  res.radii.d0 = res.radii.d1_prime / (1.5 * std::exp(nY));
  res.delta = res.radii.d0;

  SmoothMap lambda = damped_linear_deform(Ainv, res.radii.d0, res.radii.d1_prime, opts.flow);
  if (!lambda.is_identity() && c.norm() != 0.0)
    lambda = compose({translation_map(c), lambda, translation_map(Vec(-c))}, 0);
  const SmoothMap middle = compose({res.blend.map, lambda}, 0);

  std::vector<PiecewiseMap::Piece> pieces{
      {Region::ball(c, res.radii.d0), identity_map(n)},
      {Region::ball(c, 1.5 * d2), middle},
      {Region::complement(Region::ball(c, d2, false)), H.map},
  };
  res.map = glue_piecewise(std::move(pieces), 200, 1e-10, H.extended_ball(), opts.seed);

  for (const Vec& x : sample_region(Region::ball(c, H.radius), opts.det_samples, opts.seed, 0xde7)) {
    const double d = res.map.jacobian(x).determinant();
    ++res.det_samples;
    if (d < res.min_det) {
      res.min_det = d;
      res.min_det_point = x;
    }
  }
  if (!(res.min_det > 0.0)) {
    std::ostringstream os;
    os << "local_linearize: sampled det J " << res.min_det << " <= 0 at (" << res.min_det_point.transpose() << ")";
    throw Error(ErrorKind::linearization, os.str());
  }
  return res;
}

}  // namespace diffext
