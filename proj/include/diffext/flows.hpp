#pragma once
/// Compactly supported vector fields and their time-t maps: exact damped
/// translations along tubes, polyline transports of balls, and the
/// multi-ball mover.

#include "diffext/map.hpp"

#include <array>
#include <sstream>
#include <tuple>

namespace diffext {

class VectorField {
 public:
  explicit VectorField(int dim) : dim_(dim) {}
  virtual ~VectorField() = default;

  int dim() const { return dim_; }
  virtual Vec value(const Vec& x) const = 0;
  virtual std::pair<Vec, Mat> value_jac(const Vec& x) const = 0;

  /// True when the field vanishes at x and x is a fixed point of the flow.
  virtual bool outside_support(const Vec& x) const = 0;

  /// Closed-form time-t map when the whole trajectory of x stays where the
  /// field has constant coefficients.
  virtual std::optional<std::pair<Vec, Mat>> exact_flow(const Vec& /*x*/, double /*t*/, bool /*with_jac*/) const {
    return std::nullopt;
  }

  /// Bounded region outside of which the field vanishes (nullopt: unbounded).
  virtual std::optional<Region> support() const = 0;

  /// Points whose trajectories cross the non-constant part of the field;
  /// used to calibrate step counts.
  virtual std::vector<Vec> probes() const { return {}; }

  virtual Json to_json() const = 0;

 private:
  int dim_;
};

using FieldPtr = std::shared_ptr<const VectorField>;

/// v(x) = v everywhere.
class ConstantField final : public VectorField {
 public:
  explicit ConstantField(Vec v) : VectorField(static_cast<int>(v.size())), v_(std::move(v)) {}
  Vec value(const Vec&) const override { return v_; }
  std::pair<Vec, Mat> value_jac(const Vec&) const override { return {v_, Mat::Zero(dim(), dim())}; }
  bool outside_support(const Vec&) const override { return v_.isZero(0.0); }
  std::optional<Region> support() const override { return std::nullopt; }
  Json to_json() const override { return Json{{"constant", diffext::to_json(v_)}}; }

 private:
  Vec v_;
};

/// v(x) = M x everywhere.
class LinearField final : public VectorField {
 public:
  explicit LinearField(Mat M) : VectorField(static_cast<int>(M.rows())), M_(std::move(M)) {}
  Vec value(const Vec& x) const override { return M_ * x; }
  std::pair<Vec, Mat> value_jac(const Vec& x) const override { return {M_ * x, M_}; }
  bool outside_support(const Vec& x) const override { return x.isZero(0.0); }
  std::optional<Region> support() const override { return std::nullopt; }
  Json to_json() const override { return Json{{"linear", diffext::to_json(M_)}}; }

 private:
  Mat M_;
};

/// v(x) = beta(|x|) M x with beta = 1 on |x| <= plateau and 0 on |x| >= outer.
/// For skew M the norm is conserved along trajectories, so the time-t map is
/// exp(t beta(|x|) M) x in closed form.
class DampedLinearField final : public VectorField {
 public:
  DampedLinearField(Mat M, double plateau, double outer)
      : VectorField(static_cast<int>(M.rows())), M_(std::move(M)), plateau_(plateau), outer_(outer) {
    if (!(0.0 < plateau_ && plateau_ < outer_)) throw Error(ErrorKind::parameter, "damped linear field: need 0 < plateau < outer");
    exp_fwd_ = matrix_exp(M_);
    exp_bwd_ = matrix_exp(Mat(-M_));
    grow_fwd_ = std::max(0.0, log_norm(M_));
    grow_bwd_ = std::max(0.0, log_norm(Mat(-M_)));
    skew_ = (M_ + M_.transpose()).cwiseAbs().maxCoeff() == 0.0;
  }

  const Mat& matrix() const { return M_; }
  double plateau() const { return plateau_; }
  double outer() const { return outer_; }

  double beta(double r) const { return smooth_step((outer_ - r) / (outer_ - plateau_)); }
  double beta_d(double r) const { return -smooth_step_derivative((outer_ - r) / (outer_ - plateau_)) / (outer_ - plateau_); }

  Vec value(const Vec& x) const override { return beta(x.norm()) * (M_ * x); }
  std::pair<Vec, Mat> value_jac(const Vec& x) const override {
    const double r = x.norm();
    const Vec Mx = M_ * x;
    const double b = beta(r);
    Mat J = b * M_;
    const double db = beta_d(r);
    if (db != 0.0 && r > 0.0) J += (db / r) * (Mx * x.transpose());
    return {b * Mx, J};
  }
  bool outside_support(const Vec& x) const override { return x.norm() >= outer_; }

  std::optional<std::pair<Vec, Mat>> exact_flow(const Vec& x, double t, bool with_jac) const override {
    const double r = x.norm();
    if (skew_ && r > plateau_) {
      const Mat E = matrix_exp(Mat((t * beta(r)) * M_));
      Vec y = E * x;
      if (!with_jac) return std::make_pair(std::move(y), Mat());
      Mat J = E + ((t * beta_d(r) / r) * (M_ * y)) * x.transpose();
      return std::make_pair(std::move(y), std::move(J));
    }
    if (t == 1.0 || t == -1.0) {
      const double grow = t > 0 ? grow_fwd_ : grow_bwd_;
      if (r * std::exp(grow) > plateau_) return std::nullopt;
      const Mat& E = t > 0 ? exp_fwd_ : exp_bwd_;
      return std::make_pair(Vec(E * x), E);
    }
    const double grow = std::max(0.0, log_norm(Mat(t * M_)));
    if (r * std::exp(grow) > plateau_) return std::nullopt;
    Mat E = matrix_exp(Mat(t * M_));
    return std::make_pair(Vec(E * x), E);
  }

  std::optional<Region> support() const override { return Region::ball(zeros(dim()), outer_, false); }

  std::vector<Vec> probes() const override {
    std::vector<Vec> out;
    const auto dirs = sphere_directions(dim(), dim() == 2 ? 12 : 24);
    for (double f : {0.5, 0.8, 0.95}) {
      for (const Vec& u : dirs) out.push_back(f * plateau_ * u);
    }
    for (double f : {0.1, 0.4, 0.7, 0.95}) {
      for (const Vec& u : dirs) out.push_back((plateau_ + f * (outer_ - plateau_)) * u);
    }
    return out;
  }

  Json to_json() const override {
    return Json{{"damped_linear", Json{{"matrix", diffext::to_json(M_)}, {"plateau", plateau_}, {"outer", outer_}}}};
  }

 private:
  Mat M_, exp_fwd_, exp_bwd_;
  double plateau_, outer_;
  double grow_fwd_ = 0.0, grow_bwd_ = 0.0;
  bool skew_ = false;
};

/// Closest distance from x to the segment [a, a + d].
inline double point_segment_distance(const Vec& x, const Vec& a, const Vec& d) {
  const double dd = d.squaredNorm();
  if (dd == 0.0) return (x - a).norm();
  const double s = std::clamp((x - a).dot(d) / dd, 0.0, 1.0);
  return (x - a - s * d).norm();
}

/// Distance between segments [p1, q1] and [p2, q2] in any dimension.
inline double segment_segment_distance(const Vec& p1, const Vec& q1, const Vec& p2, const Vec& q2) {
  const Vec d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= 0.0 && e <= 0.0) return r.norm();
  if (a <= 0.0) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 0.0) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double den = a * e - b * b;
      s = den > 0.0 ? std::clamp((b * f - c * e) / den, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return (p1 + s * d1 - (p2 + t * d2)).norm();
}

namespace detail {

/// Globally adaptive 15-point Gauss-Kronrod quadrature of a 2-component
/// integrand. The panel with the largest Kronrod-Gauss discrepancy is bisected
/// until the discrepancy summed over panels and components is within `rel`
/// times the integral of the summed absolute values, the value turns
/// non-finite, or `max_panels` panels are in use. Both components should
/// therefore be expressed in comparable units.
template <class F>
std::array<double, 2> gauss_kronrod(const F& f, double a, double b, double rel = 1e-13, int max_panels = 1000) {
  static constexpr double xk[7] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                   0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                   0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                   0.207784955007898467600689403773245};
  static constexpr double wk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                   0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                   0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                   0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  static constexpr double wg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                   0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
  struct Panel {
    double lo, hi;
    std::array<double, 2> value, error, mass;
  };
  const auto rule = [&](double lo, double hi) {
    Panel p{lo, hi, {}, {}, {}};
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    std::array<double, 2> G{};
    const auto mid = f(c);
    for (int k = 0; k < 2; ++k) {
      p.value[k] = wk[7] * mid[k];
      G[k] = wg[3] * mid[k];
      p.mass[k] = wk[7] * std::abs(mid[k]);
    }
    for (int i = 0; i < 7; ++i) {
      const auto l = f(c - h * xk[i]);
      const auto r = f(c + h * xk[i]);
      for (int k = 0; k < 2; ++k) {
        p.value[k] += wk[i] * (l[k] + r[k]);
        p.mass[k] += wk[i] * (std::abs(l[k]) + std::abs(r[k]));
        if (i % 2 == 1) G[k] += wg[i / 2] * (l[k] + r[k]);
      }
    }
    for (int k = 0; k < 2; ++k) {
      p.error[k] = std::abs(p.value[k] - G[k]) * h;
      p.value[k] *= h;
      p.mass[k] *= h;
    }
    return p;
  };
  std::vector<Panel> panels{rule(a, b)};
  for (;;) {
    std::array<double, 2> value{}, error{}, mass{};
    for (const Panel& p : panels)
      for (int k = 0; k < 2; ++k) {
        value[k] += p.value[k];
        error[k] += p.error[k];
        mass[k] += p.mass[k];
      }
    if (!std::isfinite(value[0]) || !std::isfinite(value[1]) || static_cast<int>(panels.size()) >= max_panels) return value;
    if (error[0] + error[1] <= rel * (mass[0] + mass[1])) return value;
    std::size_t worst = 0;
    double worst_score = -1.0;
    for (std::size_t i = 0; i < panels.size(); ++i) {
      const double score = panels[i].error[0] + panels[i].error[1];
      const double c = 0.5 * (panels[i].lo + panels[i].hi);
      if (score > worst_score && c > panels[i].lo && c < panels[i].hi) {
        worst_score = score;
        worst = i;
      }
    }
    if (worst_score < 0.0) return value;
    const Panel p = panels[worst];
    const double c = 0.5 * (p.lo + p.hi);
    panels[worst] = rule(p.lo, c);
    panels.push_back(rule(c, p.hi));
  }
}

}  // namespace detail

/// v(x) = (p - q) beta(rho(x)), where rho is a smoothed distance to the
/// segment [q, p]: rho^2 = |x_perp|^2 + w(s)^2 with s the axial coordinate and
/// w a C-infinity ramp that vanishes on [0, L] and equals the overshoot a
/// quarter-margin past the ends. beta = 1 for rho <= eps + margin/4 and 0 for
/// rho >= tube - margin/4, so the support sits strictly inside the capsule of
/// radius `tube`, and every trajectory starting in the closed eps-ball around
/// q sees a constant field.
///
/// Trajectories are straight lines parallel to p - q with a perpendicular
/// offset r that never changes, so the time-t map reduces to the scalar
/// problem  integral_{s0}^{s1} ds / a(s) = t  with speed a(s) = L beta(rho).
/// With `reduced` set, the flow is evaluated through that reduction (adaptive
/// quadrature plus monotone Newton); otherwise by the caller's integrator.
class TubeTranslationField final : public VectorField {
 public:
  TubeTranslationField(Vec q, Vec p, double eps, double tube, bool reduced = true)
      : VectorField(static_cast<int>(q.size())), q_(std::move(q)), p_(std::move(p)), eps_(eps), tube_(tube), reduced_(reduced) {
    d_ = p_ - q_;
    L_ = d_.norm();
    if (!(L_ > 0.0)) throw Error(ErrorKind::parameter, "tube field: endpoints coincide");
    if (!(eps_ > 0.0 && tube_ > eps_)) throw Error(ErrorKind::parameter, "tube field: need 0 < eps < tube");
    e_ = d_ / L_;
    kappa_ = 0.25 * (tube_ - eps_);
    plateau_ = eps_ + kappa_;
    outer_ = tube_ - kappa_;
  }

  const Vec& from() const { return q_; }
  const Vec& to() const { return p_; }
  double eps() const { return eps_; }
  double tube() const { return tube_; }
  double plateau() const { return plateau_; }
  bool reduced() const { return reduced_; }

  Vec value(const Vec& x) const override {
    const double rho = smoothed_distance(x, nullptr);
    if (rho >= outer_) return Vec::Zero(dim());
    return beta(rho) * d_;
  }

  std::pair<Vec, Mat> value_jac(const Vec& x) const override {
    Vec grad(dim());
    const double rho = smoothed_distance(x, &grad);
    if (rho <= plateau_) return {d_, Mat::Zero(dim(), dim())};
    if (rho >= outer_) return {Vec::Zero(dim()), Mat::Zero(dim(), dim())};
    return {beta(rho) * d_, Mat(d_ * (beta_d(rho) * grad).transpose())};
  }

  bool outside_support(const Vec& x) const override { return smoothed_distance(x, nullptr) >= outer_; }

  std::optional<std::pair<Vec, Mat>> exact_flow(const Vec& x, double t, bool with_jac) const override {
    const Vec y = x + t * d_;
    if (point_segment_distance(x, q_, d_) <= plateau_ && point_segment_distance(y, q_, d_) <= plateau_)
      return std::make_pair(y, with_jac ? identity(dim()) : Mat());
    if (!reduced_) return std::nullopt;
    return reduced_flow(x, t, with_jac);
  }

  std::optional<Region> support() const override {
    return Region::predicate(
        dim(), [self = *this](const Vec& x) { return !self.outside_support(x); },
        Box{q_.cwiseMin(p_).array() - tube_, q_.cwiseMax(p_).array() + tube_}, "tube");
  }

  std::vector<Vec> probes() const override {
    std::vector<Vec> out;
    const auto dirs = sphere_directions(dim(), dim() == 2 ? 16 : 32);
    for (double f : {0.15, 0.5, 0.85})
      for (const Vec& u : dirs) {
        const double r = plateau_ + f * (outer_ - plateau_);
        out.push_back(p_ + r * u);
        out.push_back(q_ + r * u);
        out.push_back(q_ + 0.5 * d_ + r * u);
      }
    return out;
  }

  Json to_json() const override {
    return Json{{"tube_translation",
                 Json{{"from", diffext::to_json(q_)}, {"to", diffext::to_json(p_)}, {"eps", eps_}, {"tube", tube_}, {"reduced", reduced_}}}};
  }

 private:
  double width() const { return outer_ - plateau_; }
  double beta(double rho) const { return smooth_step((outer_ - rho) / width()); }
  double beta_d(double rho) const { return -smooth_step_derivative((outer_ - rho) / width()) / width(); }

  double ramp(double u) const { return u <= 0.0 ? 0.0 : u * smooth_step(u / kappa_); }

  double smoothed_distance(const Vec& x, Vec* grad) const {
    const Vec rel = x - q_;
    const double s = rel.dot(e_);
    const Vec perp = rel - s * e_;
    double w = 0.0, dw = 0.0;
    if (s < 0.0 || s > L_) {
      const double u = s < 0.0 ? -s : s - L_;
      const double S = smooth_step(u / kappa_);
      w = u * S;
      const double dwdu = S + (u / kappa_) * smooth_step_derivative(u / kappa_);
      dw = s < 0.0 ? -dwdu : dwdu;
    }
    const double rho = std::sqrt(perp.squaredNorm() + w * w);
    if (grad) {
      if (rho > 0.0)
        *grad = (perp + (w * dw) * e_) / rho;
      else
        grad->setZero();
    }
    return rho;
  }

  // speed a and its r-derivative at perpendicular offset r, distance u >= 0 past an end
  std::pair<double, double> cap_speed(double r, double u) const {
    const double w = ramp(u);
    const double rho = std::sqrt(r * r + w * w);
    if (rho >= outer_) return {0.0, 0.0};
    const double a = L_ * beta(rho);
    const double da = rho > 0.0 ? L_ * beta_d(rho) * r / rho : 0.0;
    return {a, da};
  }

  double cap_rate(double r, double u) const {
    const double w = ramp(u);
    const double rho = std::sqrt(r * r + w * w);
    return rho >= outer_ ? 0.0 : L_ * beta(rho);
  }

  // integral over [lo, hi] of (1/a, a_r / a^2) along a cap
  std::array<double, 2> cap_integral(double r, double lo, double hi) const {
    if (hi == lo) return {0.0, 0.0};
    const double sign = hi > lo ? 1.0 : -1.0;
    const auto f = [&](double u) -> std::array<double, 2> {
      const auto [a, da] = cap_speed(r, u);
      if (!(a > 0.0)) return {std::numeric_limits<double>::infinity(), 0.0};
      return {1.0 / a, width() * ((da / a) / a)};
    };
    auto v = detail::gauss_kronrod(f, std::min(lo, hi), std::max(lo, hi));
    return {sign * v[0], sign * v[1] / width()};
  }

  // true when the cap integral of du / a between u = x and u = y provably exceeds
  // `budget`; 1 / a is nondecreasing in u on both caps
  bool overshoots(double r, double x, double y, double budget) const {
    const double lo = std::min(x, y), hi = std::max(x, y);
    const double a_hi = cap_rate(r, hi);
    for (int j = 1; j <= 30; ++j) {
      const double len = std::ldexp(hi - lo, -j);
      if (a_hi > 0.0 && len <= a_hi * budget) return false;
      const double a = cap_rate(r, hi - len);
      if (!(a > 0.0) || len > a * budget) return true;
    }
    return false;
  }

  // cap coordinate u1 with |integral_{u0}^{u1} du / a| = t, moving away from the
  // segment when `downstream` and towards it otherwise; returns (u1, integral of a_r / a^2).
  // Integrals are always taken from the bracket end that has not yet reached t.
  std::pair<double, double> solve_cap(double r, double u0, double t, bool downstream) const {
    constexpr double ulp = std::numeric_limits<double>::epsilon();
    const double sgn = downstream ? 1.0 : -1.0;
    double lo = downstream ? u0 : 0.0, hi = downstream ? u0 + outer_ + kappa_ : u0;
    const auto [a0, da0] = cap_speed(r, u0);
    if (!(a0 > 0.0)) return {u0, 0.0};
    const double reach = 4.0 * ulp * std::max(1.0, u0);
    if (a0 * t <= reach && cap_rate(r, u0 + sgn * reach) <= 2.0 * a0) return {u0 + sgn * a0 * t, da0 * t / a0};
    double anchor = u0;
    std::array<double, 2> at_anchor{0.0, 0.0};
    double u = std::clamp(u0 + sgn * a0 * t, lo, hi);
    double step_old = hi - lo, step = step_old;
    for (int it = 0; it < 400; ++it) {
      if (overshoots(r, anchor, u, t - at_anchor[0])) {
        (downstream ? hi : lo) = u;
        u = 0.5 * (lo + hi);
        continue;
      }
      const auto inc = cap_integral(r, anchor, u);
      const std::array<double, 2> val{at_anchor[0] + sgn * inc[0], at_anchor[1] + inc[1]};
      const double res = val[0] - t;
      const bool finite = std::isfinite(val[0]) && std::isfinite(val[1]);
      const double newton = finite ? sgn * res * cap_rate(r, u) : 0.0;
      if (finite && (std::abs(res) <= 4.0 * ulp * std::max(t, 1.0) ||
                     (std::abs(newton) <= 4.0 * ulp * std::max(1.0, u) && std::abs(res) <= 1e-6 * std::max(t, 1.0))))
        return {u, sgn * val[1]};
      if (!finite || res > 0.0) {
        (downstream ? hi : lo) = u;
      } else {
        (downstream ? lo : hi) = u;
        anchor = u;
        at_anchor = val;
      }
      if (!(hi - lo > 2.0 * ulp * std::max(1.0, hi))) break;
      double next = u - newton;
      if (!finite || !(next > lo && next < hi) || std::abs(2.0 * newton) > std::abs(step_old)) {
        step_old = step;
        next = 0.5 * (lo + hi);
        step = next - u;
      } else {
        step_old = step;
        step = newton;
      }
      u = next;
    }
    return {anchor, sgn * at_anchor[1]};
  }

  // forward travel for time t >= 0 from axial coordinate s0; returns (s1, integral of a_r / a^2)
  std::pair<double, double> travel(double r, double s0, double t) const {
    double s = s0, dr = 0.0;
    if (s < 0.0) {
      const bool stays = overshoots(r, 0.0, -s, t);
      const auto up = stays ? std::array<double, 2>{t, 0.0} : cap_integral(r, 0.0, -s);
      if (stays || up[0] >= t) {
        const auto [u1, d] = solve_cap(r, -s, t, false);
        return {-u1, d};
      }
      t -= up[0];
      dr += up[1];
      s = 0.0;
    }
    if (s <= L_) {
      const auto [ac, dac] = cap_speed(r, 0.0);
      const double need = (L_ - s) / ac;
      if (need >= t) return {s + ac * t, dr + dac * t / ac};
      t -= need;
      dr += dac * need / ac;
      s = L_;
    }
    const auto [u1, d] = solve_cap(r, s - L_, t, true);
    return {L_ + u1, dr + d};
  }

  double axial_speed(double r, double s) const { return cap_rate(r, s < 0.0 ? -s : (s > L_ ? s - L_ : 0.0)); }

  std::optional<std::pair<Vec, Mat>> reduced_flow(const Vec& x, double t, bool with_jac) const {
    const Vec rel = x - q_;
    const double s0 = rel.dot(e_);
    const Vec perp = rel - s0 * e_;
    const double r = perp.norm();
    const double a0 = axial_speed(r, s0);
    if (!(a0 > 0.0) || t == 0.0) return std::make_pair(x, with_jac ? identity(dim()) : Mat());
    if (a0 <= kStationary) return std::make_pair(Vec(x + (a0 * t) * e_), with_jac ? identity(dim()) : Mat());
    double s1, dr;
    if (t > 0.0) {
      std::tie(s1, dr) = travel(r, s0, t);
    } else {
      double s1r, drr;
      std::tie(s1r, drr) = travel(r, L_ - s0, -t);
      s1 = L_ - s1r;
      dr = -drr;
    }
    Vec y = q_ + s1 * e_ + perp;
    if (!with_jac) return std::make_pair(std::move(y), Mat());
    const double a1 = axial_speed(r, s1);
    const double ds_ds0 = a1 / a0;
    const double ds_dr = a1 * dr;
    Mat J = identity(dim()) + (ds_ds0 - 1.0) * (e_ * e_.transpose());
    if (r > 0.0) J += (ds_dr / r) * (e_ * perp.transpose());
    return std::make_pair(std::move(y), std::move(J));
  }

  static constexpr double kStationary = 1e-100;

  Vec q_, p_, d_, e_;
  double L_ = 0.0, eps_, tube_, kappa_ = 0.0, plateau_ = 0.0, outer_ = 0.0;
  bool reduced_ = true;
};

// ---------------------------------------------------------------------------
// integration

namespace detail {

/// Fixed-step classical RK4 from x over [0, t], carrying the exact Jacobian of
/// the discrete map when J is non-null.
inline Vec rk4(const VectorField& f, double t, const Vec& x0, int steps, Mat* J) {
  const int n = f.dim();
  const double h = t / steps;
  Vec x = x0;
  if (J) *J = identity(n);
  const Mat I = identity(n);
  for (int s = 0; s < steps; ++s) {
    if (J) {
      auto [k1, K1] = f.value_jac(x);
      auto [k2, D2] = f.value_jac(Vec(x + 0.5 * h * k1));
      const Mat K2 = D2 * (I + 0.5 * h * K1);
      auto [k3, D3] = f.value_jac(Vec(x + 0.5 * h * k2));
      const Mat K3 = D3 * (I + 0.5 * h * K2);
      auto [k4, D4] = f.value_jac(Vec(x + h * k3));
      const Mat K4 = D4 * (I + h * K3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      *J = (I + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)) * (*J);
    } else {
      const Vec k1 = f.value(x);
      const Vec k2 = f.value(x + 0.5 * h * k1);
      const Vec k3 = f.value(x + 0.5 * h * k2);
      const Vec k4 = f.value(x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) throw Error(ErrorKind::numeric, "flow integration: non-finite state");
  }
  return x;
}

}  // namespace detail

/// Fixed-step 4th-order integration of x' = field(x) over [0, t].
inline Vec integrate_flow(const VectorField& field, double t, const Vec& x, int steps) {
  if (steps < 1) throw Error(ErrorKind::parameter, "integrate_flow: steps must be >= 1");
  if (field.outside_support(x)) return x;
  if (!field.value(x).allFinite()) throw Error(ErrorKind::numeric, "integrate_flow: non-finite field value");
  return detail::rk4(field, t, x, steps, nullptr);
}

/// Smallest power-of-two multiple of `start` for which doubling the step
/// count moves every probe by at most `tol`.
inline int calibrate_steps(const VectorField& field, double t, const std::vector<Vec>& probes, double tol = 1e-11,
                           int start = 64, int max_steps = 1 << 16) {
  std::vector<Vec> live;
  for (const Vec& p : probes)
    if (!field.outside_support(p) && !field.exact_flow(p, t, false)) live.push_back(p);
  if (live.empty()) return start;
  std::vector<Vec> coarse;
  for (const Vec& p : live) coarse.push_back(detail::rk4(field, t, p, start, nullptr));
  for (int n = start; n < max_steps; n *= 2) {
    double worst = 0.0;
    std::vector<Vec> fine;
    fine.reserve(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      fine.push_back(detail::rk4(field, t, live[i], 2 * n, nullptr));
      worst = std::max(worst, (fine.back() - coarse[i]).norm());
    }
    if (worst <= tol) return n;
    coarse = std::move(fine);
  }
  return max_steps;
}

/// Time-t map of a vector field. Structurally invertible by running the
/// same integrator backwards in time with the same step count.
class FlowMap final : public MapNode {
 public:
  FlowMap(FieldPtr field, double time, int steps, Json spec = {})
      : MapNode(field->dim(), Region::all(field->dim()), Orientation::preserving),
        field_(std::move(field)),
        time_(time),
        steps_(steps),
        spec_(std::move(spec)) {
    if (steps_ < 1) throw Error(ErrorKind::parameter, "flow: steps must be >= 1");
  }

  const VectorField& field() const { return *field_; }
  const FieldPtr& field_ptr() const { return field_; }
  double time() const { return time_; }
  int steps() const { return steps_; }

  Vec eval(const Vec& x) const override { return run(x, time_); }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override { return run_jac(x, time_); }
  bool structural_inverse() const override { return true; }
  std::optional<Vec> inverse(const Vec& y) const override { return run(y, -time_); }
  Json to_json() const override {
    if (!spec_.is_null()) return spec_;
    return Json{{"flow", Json{{"field", field_->to_json()}, {"time", time_}, {"steps", steps_}}}};
  }

  Vec run(const Vec& x, double t) const {
    if (field_->outside_support(x)) return x;
    if (auto e = field_->exact_flow(x, t, false)) return e->first;
    return detail::rk4(*field_, t, x, steps_, nullptr);
  }

  std::pair<Vec, Mat> run_jac(const Vec& x, double t) const {
    if (field_->outside_support(x)) return {x, identity(dim())};
    if (auto e = field_->exact_flow(x, t, true)) return *e;
    Mat J;
    Vec y = detail::rk4(*field_, t, x, steps_, &J);
    return {y, J};
  }

 private:
  FieldPtr field_;
  double time_;
  int steps_;
  Json spec_;
};

struct FlowOptions {
  int steps = 0;    // 0: calibrate
  int start_steps = 64;  // first step count tried by calibration
  int refine = 1;   // multiplier on the chosen step count
  double calibration_tol = 1e-11;
  bool reduced = true;  // tube translations: evaluate through the scalar travel-time reduction
};

inline int resolve_steps(const VectorField& field, double time, const FlowOptions& opts) {
  const int steps = opts.steps > 0 ? opts.steps : calibrate_steps(field, time, field.probes(), opts.calibration_tol, opts.start_steps);
  return steps * std::max(1, opts.refine);
}

inline SmoothMap flow_map(FieldPtr field, double time, const FlowOptions& opts = {}, Json spec = {}) {
  const int steps = resolve_steps(*field, time, opts);
  return SmoothMap(std::make_shared<FlowMap>(std::move(field), time, steps, std::move(spec)));
}

// ---------------------------------------------------------------------------
// tubes, polylines, ball movers

/// Points covering the closed capsule of radius r around [a, b] (surface
/// shells at r and 0.5 r, sampled along the axis).
inline std::vector<Vec> capsule_points(const Vec& a, const Vec& b, double r) {
  const int n = static_cast<int>(a.size());
  std::vector<Vec> out;
  const double L = (b - a).norm();
  const int axial = std::max(2, static_cast<int>(std::ceil(L / (0.5 * r))) + 1);
  const auto dirs = sphere_directions(n, n == 2 ? 32 : 96);
  for (int k = 0; k < axial; ++k) {
    const double s = static_cast<double>(k) / (axial - 1);
    const Vec c = a + s * (b - a);
    for (const Vec& u : dirs) out.push_back(c + r * u);
  }
  return out;
}

inline void check_tube_in_region(const Vec& a, const Vec& b, double r, const Region& region, const std::string& what) {
  for (const Vec& x : capsule_points(a, b, r))
    if (!region.contains(x)) {
      std::ostringstream os;
      os << what << ": tube point (" << x.transpose() << ") leaves the working region";
      throw Error(ErrorKind::geometry, os.str());
    }
}

/// Global diffeomorphism that is the exact translation by p - q on the closed
/// eps-ball around q and the identity outside the capsule of radius
/// tube_radius around [q, p]. A non-positive tube_radius selects 1.25 eps.
inline SmoothMap damped_translation(const Vec& q, const Vec& p, double eps, double tube_radius,
                                    const std::optional<Region>& working_region = std::nullopt, const FlowOptions& opts = {}) {
  if (q.size() != p.size()) throw Error(ErrorKind::parameter, "damped_translation: dimension mismatch");
  if (!(eps > 0.0)) throw Error(ErrorKind::parameter, "damped_translation: eps must be > 0");
  if (tube_radius <= 0.0) tube_radius = 1.25 * eps;
  if (!(tube_radius > eps)) throw Error(ErrorKind::parameter, "damped_translation: tube radius must exceed eps");
  const int n = static_cast<int>(q.size());
  if ((p - q).norm() == 0.0) return identity_map(n);
  if (working_region) check_tube_in_region(q, p, tube_radius, *working_region, "damped_translation");
  auto field = std::make_shared<TubeTranslationField>(q, p, eps, tube_radius, opts.reduced);
  const int steps = resolve_steps(*field, 1.0, opts);
  Json spec{{"family", "damped_translate"}, {"from", to_json(q)}, {"to", to_json(p)}, {"eps", eps},
            {"tube", tube_radius}, {"steps", steps}, {"reduced", opts.reduced}};
  return SmoothMap(std::make_shared<FlowMap>(std::move(field), 1.0, steps, std::move(spec)));
}

struct Polyline {
  std::vector<Vec> vertices;
  double clearance = 0.0;

  bool trivial() const {
    for (const auto& v : vertices)
      if ((v - vertices.front()).norm() != 0.0) return false;
    return true;
  }
  const Vec& first() const { return vertices.front(); }
  const Vec& last() const { return vertices.back(); }

  Json to_json() const {
    Json v = Json::array();
    for (const auto& x : vertices) v.push_back(diffext::to_json(x));
    return Json{{"vertices", std::move(v)}, {"clearance", clearance}};
  }
};

/// Composite of per-segment damped translations carrying the closed eps-ball
/// at the first vertex onto the one at the last vertex.
inline SmoothMap transport_along_polyline(const Polyline& path, double eps, const std::optional<Region>& working_region = std::nullopt,
                                          const FlowOptions& opts = {}) {
  if (path.vertices.empty()) throw Error(ErrorKind::parameter, "polyline: no vertices");
  const int n = static_cast<int>(path.vertices.front().size());
  if (path.trivial()) return identity_map(n);
  if (path.vertices.size() < 2) throw Error(ErrorKind::parameter, "polyline: need at least 2 vertices");
  if (!(path.clearance >= 1.25 * eps))
    throw Error(ErrorKind::geometry, "polyline: clearance must be at least 1.25 eps");
  std::vector<SmoothMap> stages;
  for (std::size_t k = 0; k + 1 < path.vertices.size(); ++k) {
    if ((path.vertices[k + 1] - path.vertices[k]).norm() == 0.0)
      throw Error(ErrorKind::parameter, "polyline: consecutive vertices coincide");
    stages.push_back(damped_translation(path.vertices[k], path.vertices[k + 1], eps, path.clearance, working_region, opts));
  }
  std::reverse(stages.begin(), stages.end());
  return compose(stages, 0);
}

/// H with H(B(q_i, eps)) = B(p_i, eps) for routes q_i -> p_i, identity outside U.
inline SmoothMap move_balls(const Region& U, const std::vector<Polyline>& routes, double eps, const FlowOptions& opts = {}) {
  if (routes.empty()) throw Error(ErrorKind::parameter, "move_balls: no routes");
  const int n = static_cast<int>(routes.front().first().size());
  for (std::size_t i = 0; i < routes.size(); ++i)
    for (std::size_t j = i + 1; j < routes.size(); ++j) {
      if ((routes[i].first() - routes[j].first()).norm() == 0.0 || (routes[i].last() - routes[j].last()).norm() == 0.0) {
        std::ostringstream os;
        os << "move_balls: routes " << i << " and " << j << " share an endpoint";
        throw Error(ErrorKind::geometry, os.str());
      }
      if (routes[i].trivial() && routes[j].trivial()) continue;
      // a trivial route occupies the degenerate segment at its payload centre
      auto segs = [](const Polyline& r) {
        std::vector<std::pair<Vec, Vec>> s;
        if (r.trivial() || r.vertices.size() < 2)
          s.emplace_back(r.first(), r.first());
        else
          for (std::size_t k = 0; k + 1 < r.vertices.size(); ++k) s.emplace_back(r.vertices[k], r.vertices[k + 1]);
        return s;
      };
      const double ri = routes[i].trivial() ? eps : routes[i].clearance;
      const double rj = routes[j].trivial() ? eps : routes[j].clearance;
      for (const auto& [a, b] : segs(routes[i]))
        for (const auto& [c, d] : segs(routes[j]))
          if (segment_segment_distance(a, b, c, d) <= ri + rj) {
            std::ostringstream os;
            os << "move_balls: tubes of routes " << i << " and " << j << " intersect";
            throw Error(ErrorKind::geometry, os.str());
          }
    }
  std::vector<SmoothMap> stages;
  for (std::size_t i = 0; i < routes.size(); ++i) {
    try {
      stages.push_back(transport_along_polyline(routes[i], eps, U, opts));
    } catch (const Error& e) {
      throw e.tagged("route[" + std::to_string(i) + "]");
    }
  }
  (void)n;
  return compose(stages, 0);
}

}  // namespace diffext
