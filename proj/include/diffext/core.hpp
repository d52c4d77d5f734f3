#pragma once
/// Scalar and linear-algebra kernels shared by every construction: smooth
/// steps, transition profiles, the (rotation, stretch) logarithm split of a
/// matrix with positive determinant, and inversion of radial profiles.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace diffext {

inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

enum class ErrorKind {
  parameter,
  orientation,
  conditioning,
  not_diffeo,
  composition,
  gluing,
  coverage,
  construction,
  geometry,
  margin,
  linearization,
  automorphism,
  containment,
  sampling,
  numeric,
  schema,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::orientation: return "orientation";
    case ErrorKind::conditioning: return "conditioning";
    case ErrorKind::not_diffeo: return "not-a-diffeomorphism";
    case ErrorKind::composition: return "composition";
    case ErrorKind::gluing: return "gluing";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::construction: return "construction";
    case ErrorKind::geometry: return "geometry";
    case ErrorKind::margin: return "margin";
    case ErrorKind::linearization: return "linearization";
    case ErrorKind::automorphism: return "automorphism";
    case ErrorKind::containment: return "containment";
    case ErrorKind::sampling: return "sampling";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::schema: return "schema";
  }
  return "unknown";
}

/// Every failure in the library is reported through this type. `stage` is a
/// pipeline tag ("palais/linearize", "glue/normalize[1]", ...) filled in as
/// the error bubbles up.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::string stage = {})
      : std::runtime_error(what), kind_(kind), stage_(std::move(stage)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }

  /// Prefix the stage tag, keeping the innermost detail.
  Error tagged(const std::string& outer) const {
    return Error(kind_, what(), stage_.empty() ? outer : outer + "/" + stage_);
  }

 private:
  ErrorKind kind_;
  std::string stage_;
};

inline Vec zeros(int n) { return Vec::Zero(n); }
inline Mat identity(int n) { return Mat::Identity(n, n); }

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline Vec unit(int n, int axis) {
  Vec e = Vec::Zero(n);
  e(axis) = 1.0;
  return e;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// smooth step

namespace detail {
inline double exp_inv(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }
inline double exp_inv_d(double t) { return t > 0.0 ? std::exp(-1.0 / t) / (t * t) : 0.0; }
}  // namespace detail

/// s(t) = f(t) / (f(t) + f(1-t)), f(t) = exp(-1/t) for t > 0 and 0 otherwise.
/// C-infinity, 0 for t <= 0, 1 for t >= 1.
inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = detail::exp_inv(t);
  const double b = detail::exp_inv(1.0 - t);
  return a / (a + b);
}

inline double smooth_step_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double a = detail::exp_inv(t);
  const double b = detail::exp_inv(1.0 - t);
  const double da = detail::exp_inv_d(t);
  const double db = -detail::exp_inv_d(1.0 - t);
  const double den = a + b;
  return (da * b - a * db) / (den * den);
}

// ---------------------------------------------------------------------------
// transition profile

enum class ProfileKind { exp_smoothstep };

/// Non-decreasing C-infinity profile: `inner` for t <= a, `outer` for t >= b.
class TransitionProfile {
 public:
  TransitionProfile(double a, double b, double inner, double outer) : a_(a), b_(b), c0_(inner), c1_(outer) {
    if (!(std::isfinite(a) && std::isfinite(b) && std::isfinite(inner) && std::isfinite(outer)))
      throw Error(ErrorKind::parameter, "transition profile: non-finite parameter");
    if (!(0.0 <= a && a < b))
      throw Error(ErrorKind::parameter, "transition profile: knots must satisfy 0 <= a < b");
    if (!(0.0 < inner && inner <= outer))
      throw Error(ErrorKind::parameter, "transition profile: plateaus must satisfy 0 < c0 <= c1");
  }

  double a() const { return a_; }
  double b() const { return b_; }
  double inner() const { return c0_; }
  double outer() const { return c1_; }
  ProfileKind kind() const { return ProfileKind::exp_smoothstep; }

  double operator()(double t) const {
    if (t <= a_) return c0_;
    if (t >= b_) return c1_;
    return c0_ + (c1_ - c0_) * smooth_step((t - a_) / (b_ - a_));
  }

  double derivative(double t) const {
    if (t <= a_ || t >= b_) return 0.0;
    return (c1_ - c0_) * smooth_step_derivative((t - a_) / (b_ - a_)) / (b_ - a_);
  }

  /// g(r) = phi(r) * r, the radial scaling law.
  double radial(double r) const { return (*this)(r) * r; }
  double radial_derivative(double r) const { return (*this)(r) + derivative(r) * r; }

  friend bool operator==(const TransitionProfile&, const TransitionProfile&) = default;

 private:
  double a_, b_, c0_, c1_;
};

inline TransitionProfile transition_profile(double a, double b, double c0, double c1) {
  return TransitionProfile(a, b, c0, c1);
}

/// Solve phi(r) * r = y for r >= 0. The plateaus are solved in closed form,
/// the transition by bracketing plus safeguarded Newton.
inline double invert_radial_profile(const TransitionProfile& phi, double y) {
  if (!(y >= 0.0)) throw Error(ErrorKind::parameter, "invert_radial_profile: y must be >= 0");
  const double ga = phi.inner() * phi.a();
  const double gb = phi.outer() * phi.b();
  if (y <= ga) return y / phi.inner();
  if (y >= gb) return phi.outer() == 1.0 ? y : y / phi.outer();

  double lo = phi.a(), hi = phi.b();
  double r = lo + (hi - lo) * (y - ga) / (gb - ga);
  const double target = 1e-15 * std::max(1.0, y);
  for (int it = 0; it < 200; ++it) {
    const double f = phi.radial(r) - y;
    if (std::abs(f) <= target) return r;
    if (f > 0.0)
      hi = r;
    else
      lo = r;
    const double df = phi.radial_derivative(r);
    double next = df > 0.0 ? r - f / df : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return next;
    r = next;
  }
  return r;
}

// ---------------------------------------------------------------------------
// (rotation, stretch) logarithm split

/// A = exp(K) * exp(Y) with K skew-symmetric and Y symmetric.
struct LinearLogFactors {
  Mat K;
  Mat Y;
};

inline Mat matrix_exp(const Mat& m) {
  Eigen::MatrixXd d = m;
  Eigen::MatrixXd e = d.exp();
  return e;
}

/// Principal logarithm of a proper rotation, read off its real Schur form.
inline Mat rotation_log(const Mat& R) {
  const Eigen::Index n = R.rows();
  Eigen::RealSchur<Eigen::MatrixXd> schur(Eigen::MatrixXd(R), true);
  const Eigen::MatrixXd& T = schur.matrixT();
  const Eigen::MatrixXd& Q = schur.matrixU();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  std::vector<Eigen::Index> flipped;
  for (Eigen::Index i = 0; i < n;) {
    if (i + 1 < n && std::abs(T(i + 1, i)) > 0.0) {
      const double c = 0.5 * (T(i, i) + T(i + 1, i + 1));
      const double s = 0.5 * (T(i + 1, i) - T(i, i + 1));
      const double theta = std::atan2(s, c);
      L(i + 1, i) = theta;
      L(i, i + 1) = -theta;
      i += 2;
    } else {
      if (T(i, i) < 0.0) flipped.push_back(i);
      i += 1;
    }
  }
  // det R = +1, so -1 eigenvalues pair up into half-turns.
  for (std::size_t k = 0; k + 1 < flipped.size(); k += 2) {
    L(flipped[k + 1], flipped[k]) = std::numbers::pi;
    L(flipped[k], flipped[k + 1]) = -std::numbers::pi;
  }
  Eigen::MatrixXd K = Q * L * Q.transpose();
  K = 0.5 * (K - K.transpose());
  return Mat(K);
}

/// Polar split A = R P, then K = log R on the principal branch and
/// Y = log P through the symmetric eigendecomposition.
inline LinearLogFactors linear_factorize(const Mat& A) {
  if (A.rows() != A.cols() || A.rows() < 1) throw Error(ErrorKind::parameter, "linear_factorize: square matrix required");
  if (!A.allFinite()) throw Error(ErrorKind::parameter, "linear_factorize: non-finite entries");
  const double det = A.determinant();
  if (!(det > 0.0)) throw Error(ErrorKind::orientation, "linear_factorize: det(A) <= 0");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(A), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cond = sv(0) / sv(sv.size() - 1);
  if (!(cond <= 1e12)) throw Error(ErrorKind::conditioning, "linear_factorize: condition number exceeds 1e12");
  const Eigen::MatrixXd& U = svd.matrixU();
  const Eigen::MatrixXd& V = svd.matrixV();
  Eigen::MatrixXd R = U * V.transpose();
  Eigen::MatrixXd logs = sv.array().log().matrix().asDiagonal();
  Eigen::MatrixXd Y = V * logs * V.transpose();
  Y = 0.5 * (Y + Y.transpose());
  return {rotation_log(Mat(R)), Mat(Y)};
}

/// Logarithmic norm max eig((M + M^T)/2): exp(tM) grows norms by at most exp(t * mu).
inline double log_norm(const Mat& M) {
  Eigen::MatrixXd S = 0.5 * (Eigen::MatrixXd(M) + Eigen::MatrixXd(M).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline double spectral_norm(const Mat& M) {
  const Eigen::MatrixXd D = M;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
  return svd.singularValues()(0);
}

}  // namespace diffext
