#include "diffext/builtins.hpp"
#include "diffext/linearize.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace diffext;
using diffext::testing::ball_samples;
using diffext::testing::jacobian_rel_error;

namespace {

Mat rot2(double theta) {
  Mat R(2, 2);
  R << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return R;
}

BallDiffeo ball(SmoothMap f, int n, double radius = 1.0, double margin = 0.5) {
  return make_ball_diffeo(std::move(f), zeros(n), radius, margin);
}

void expect_error(ErrorKind kind, const std::function<void()>& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected error " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

std::vector<Vec> grid2(double half, int per_axis) {
  return lattice_points(Box{Vec::Constant(2, -half), Vec::Constant(2, half)}, per_axis);
}

/// Every property a linearization must have, checked on H over its ball.
void check_linearization(const BallDiffeo& H, const LinearizationResult& res) {
  const int n = H.dim();
  const double rho = H.radius;
  ASSERT_GT(res.delta, 0.0);
  EXPECT_LT(res.radii.d0, res.radii.d1_prime);
  EXPECT_LE(res.radii.d1_prime, res.radii.d1);
  EXPECT_LT(res.radii.d1, res.radii.d2);
  EXPECT_LE(res.radii.d2, 0.5 * rho);
  EXPECT_GT(res.min_det, 0.0);

  for (const Vec& x : ball_samples(H.center, 0.99 * res.delta, 1000, 21)) {
    const Vec y = res.map(x);
    ASSERT_TRUE((y.array() == x.array()).all()) << x.transpose();
  }
  int boundary = 0;
  for (const Vec& x : ball_samples(H.center, rho, 4000, 22)) {
    const double r = (x - H.center).norm();
    if (r <= 0.5 * rho) continue;
    ++boundary;
    ASSERT_LE((res.map(x) - H.map(x)).norm(), 1e-12) << x.transpose();
  }
  EXPECT_GE(boundary, 1000);

  double worst_rt = 0.0, worst_fd = 0.0;
  int k = 0;
  for (const Vec& x : ball_samples(H.center, rho, 2000, 23)) {
    const auto back = res.map.inverse(res.map(x));
    ASSERT_TRUE(back.has_value()) << x.transpose();
    worst_rt = std::max(worst_rt, (*back - x).norm());
    if (k++ < 200) worst_fd = std::max(worst_fd, jacobian_rel_error(res.map, x));
  }
  EXPECT_LE(worst_rt, 1e-8);
  EXPECT_LE(worst_fd, 1e-5);

  // the annulus where the blend and the deformation act, sampled densely
  for (const Vec& x : ball_samples(H.center, 1.5 * res.radii.d2, 2000, 24)) {
    ASSERT_GT(res.map.jacobian(x).determinant(), 0.0) << x.transpose();
    const auto back = res.map.inverse(res.map(x));
    ASSERT_TRUE(back.has_value());
    ASSERT_LE((*back - x).norm(), 1e-8) << x.transpose();
  }
  (void)n;
}

}  // namespace

TEST(BallDiffeo, Validation) {
  EXPECT_NO_THROW(ball(identity_map(2), 2));
  expect_error(ErrorKind::parameter, [] { make_ball_diffeo(identity_map(2), zeros(2), 0.0, 0.5); });
  expect_error(ErrorKind::parameter, [] { make_ball_diffeo(identity_map(2), zeros(2), 1.0, 0.0); });
  expect_error(ErrorKind::parameter, [] { make_ball_diffeo(identity_map(2), zeros(3), 1.0, 0.5); });
  const SmoothMap p = poly_perturb_map(2, 0.1, 0, 1, zeros(2), 1.2);
  expect_error(ErrorKind::parameter, [&] { make_ball_diffeo(p, zeros(2), 1.0, 0.5); });
  EXPECT_NO_THROW(make_ball_diffeo(p, zeros(2), 1.0, 0.2));
}

TEST(Blend, IdentityStaysIdentity) {
  const auto H = ball(identity_map(2), 2);
  const auto b = blend_with_derivative(H, 0.4, 0.2);
  EXPECT_TRUE(b.accepted);
  EXPECT_EQ(b.max_deviation, 0.0);
  for (const Vec& x : ball_samples(zeros(2), 1.4, 500, 1)) {
    ASSERT_LE((b.map(x) - x).norm(), 1e-15);
    ASSERT_LE((b.map.jacobian(x) - identity(2)).norm(), 1e-15);
  }
}

TEST(Blend, LinearMapIsItsOwnBlend) {
  Mat A(3, 3);
  A << 1.2, 0.3, 0.0, -0.1, 0.9, 0.2, 0.0, 0.4, 1.1;
  const SmoothMap L(std::make_shared<AffineMap>(A, zeros(3), zeros(3)));
  const auto H = ball(L, 3);
  const auto b = blend_with_derivative(H, 0.5, 0.25);
  EXPECT_TRUE(b.accepted);
  EXPECT_GT(b.samples, 1000);
  for (const Vec& x : ball_samples(zeros(3), 1.4, 500, 2)) {
    ASSERT_LE((b.map(x) - A * x).norm(), 1e-14);
    ASSERT_LE((b.map.jacobian(x) - A).norm(), 1e-14);
  }
}

TEST(Blend, QuadraticPerturbation) {
  const SmoothMap p = poly_perturb_map(2, 1.0, 0, 1, zeros(2), 1.5);
  const auto H = ball(p, 2, 1.0, 0.5);
  const auto b = blend_with_derivative(H, 0.2, 0.1);
  EXPECT_TRUE(b.accepted) << b.to_json().dump();
  for (const Vec& x : ball_samples(zeros(2), 0.1, 500, 3)) ASSERT_LE((b.map(x) - x).norm(), 1e-15);
  for (const Vec& x : ball_samples(zeros(2), 1.5, 2000, 4)) {
    if (x.norm() <= 0.2) continue;
    ASSERT_TRUE((b.map(x).array() == p(x).array()).all());
  }
  double worst = std::numeric_limits<double>::infinity();
  for (const Vec& x : grid2(0.2, 200)) worst = std::min(worst, b.map.jacobian(x).determinant());
  EXPECT_GT(worst, 0.0);
  const SmoothMap m = b.map;
  for (const Vec& x : ball_samples(zeros(2), 0.2, 200, 5)) {
    EXPECT_LE(jacobian_rel_error(m, x), 1e-6) << x.transpose();
    const auto back = m.inverse(m(x));
    ASSERT_TRUE(back.has_value());
    EXPECT_LE((*back - x).norm(), 1e-10);
  }
}

TEST(Blend, RejectsLargeRadiusForStrongPerturbation) {
  const SmoothMap p = poly_perturb_map(2, 1.0, 0, 1, zeros(2), 3.0);
  const auto H = ball(p, 2, 2.0, 0.5);
  const auto b = blend_with_derivative(H, 1.0, 0.5);
  EXPECT_FALSE(b.accepted);
  EXPECT_GT(b.max_deviation, b.deviation_bound);
}

TEST(Blend, Preconditions) {
  const auto H = ball(identity_map(2), 2);
  expect_error(ErrorKind::parameter, [&] { blend_with_derivative(H, 0.6, 0.2); });
  expect_error(ErrorKind::parameter, [&] { blend_with_derivative(H, 0.2, 0.2); });
  const auto moved = ball(translation_map(vec({0.1, 0.0})), 2);
  expect_error(ErrorKind::parameter, [&] { blend_with_derivative(moved, 0.4, 0.2); });
  Mat R = identity(2);
  R(0, 0) = -1.0;
  const auto flip = ball(SmoothMap(std::make_shared<AffineMap>(R, zeros(2), zeros(2))), 2);
  expect_error(ErrorKind::orientation, [&] { blend_with_derivative(flip, 0.4, 0.2); });
}

TEST(DampedLinearDeform, IdentityMatrix) {
  EXPECT_TRUE(damped_linear_deform(identity(3), 0.2, 1.0).is_identity());
}

TEST(DampedLinearDeform, QuarterTurnPreservesNorm) {
  const Mat A = rot2(std::numbers::pi / 2);
  const SmoothMap L = damped_linear_deform(A, 0.5, 1.0);
  for (const Vec& x : ball_samples(zeros(2), 1.3, 2000, 6)) {
    const Vec y = L(x);
    ASSERT_LE(std::abs(y.norm() - x.norm()), 1e-10) << x.transpose();
    if (x.norm() <= 0.5) {
      ASSERT_LE((y - A * x).norm(), 1e-14);
    }
    if (x.norm() >= 1.0) {
      ASSERT_TRUE((y.array() == x.array()).all());
    }
    const auto back = L.inverse(y);
    ASSERT_TRUE(back.has_value());
    ASSERT_LE((*back - x).norm(), 1e-12);
  }
  for (const Vec& x : ball_samples(zeros(2), 1.0, 200, 7)) EXPECT_LE(jacobian_rel_error(L, x), 1e-7);
}

TEST(DampedLinearDeform, DiagonalStretchAgainstRefinedIntegration) {
  Mat A = Mat::Zero(2, 2);
  A(0, 0) = 2.0;
  A(1, 1) = 0.5;
  const SmoothMap L = damped_linear_deform(A, 0.1, 1.0);
  EXPECT_LE((L(vec({0.05, 0.0})) - vec({0.1, 0.0})).norm(), 1e-14);

  const auto* stage = L.as<FlowMap>();
  ASSERT_NE(stage, nullptr);
  FlowOptions fine;
  fine.steps = stage->steps();
  fine.refine = 10;
  const SmoothMap R = damped_linear_deform(A, 0.1, 1.0, fine);
  double worst = 0.0;
  for (const Vec& x : grid2(1.1, 50)) {
    const Vec y = L(x);
    worst = std::max(worst, (y - R(x)).norm());
    if (x.norm() >= 1.0) {
      ASSERT_TRUE((y.array() == x.array()).all());
    }
    if (x.norm() <= 0.1) {
      ASSERT_LE((y - A * x).norm(), 1e-14);
    }
  }
  EXPECT_LE(worst, 1e-9);
  for (const Vec& x : ball_samples(zeros(2), 1.0, 300, 8)) {
    const auto back = L.inverse(L(x));
    ASSERT_TRUE(back.has_value());
    ASSERT_LE((*back - x).norm(), 1e-10);
    ASSERT_GT(L.jacobian(x).determinant(), 0.0);
  }
}

TEST(DampedLinearDeform, GeneralMatrixSplitsStretch) {
  Mat A(3, 3);
  A << 3.0, 0.5, 0.0, -0.4, 0.8, 0.3, 0.1, 0.0, 2.5;
  ASSERT_GT(A.determinant(), 0.0);
  const double nY = spectral_norm(linear_factorize(A).Y);
  const double r_in = 0.05;
  const SmoothMap L = damped_linear_deform(A, r_in, 1.0);
  const auto* comp = L.as<CompositeMap>();
  ASSERT_NE(comp, nullptr);
  EXPECT_EQ(static_cast<int>(comp->maps().size()), 1 + static_cast<int>(std::ceil(nY / std::log(2.0))));
  for (const Vec& x : ball_samples(zeros(3), r_in, 300, 9)) ASSERT_LE((L(x) - A * x).norm(), 1e-13);
  for (const Vec& x : ball_samples(zeros(3), 1.2, 500, 10)) {
    if (x.norm() >= 1.0) {
      ASSERT_TRUE((L(x).array() == x.array()).all());
    }
    const auto back = L.inverse(L(x));
    ASSERT_TRUE(back.has_value());
    ASSERT_LE((*back - x).norm(), 1e-10);
    ASSERT_GT(L.jacobian(x).determinant(), 0.0);
  }
}

TEST(DampedLinearDeform, Errors) {
  Mat A = Mat::Zero(2, 2);
  A(0, 0) = 10.0;
  A(1, 1) = 0.1;
  expect_error(ErrorKind::geometry, [&] { damped_linear_deform(A, 0.2, 1.0); });
  Mat R = identity(2);
  R(1, 1) = -1.0;
  expect_error(ErrorKind::orientation, [&] { damped_linear_deform(R, 0.2, 1.0); });
  expect_error(ErrorKind::parameter, [&] { damped_linear_deform(rot2(0.3), 1.0, 0.5); });
}

TEST(LocalLinearize, Identity) {
  const auto H = ball(identity_map(2), 2);
  const auto res = local_linearize(H);
  EXPECT_TRUE(res.map.is_identity());
  EXPECT_DOUBLE_EQ(res.delta, 0.25);
}

TEST(LocalLinearize, Shear) {
  const auto H = ball(shear_map(2, 1.0, zeros(2)), 2);
  const auto res = local_linearize(H);
  EXPECT_EQ(res.halvings, 0);
  check_linearization(H, res);
}

TEST(LocalLinearize, Twist) {
  const auto H = ball(twist_map(2, std::numbers::pi / 3, 0.3, 0.9, zeros(2)), 2);
  EXPECT_LE((H.map.jacobian(zeros(2)) - rot2(std::numbers::pi / 3)).norm(), 1e-14);
  const auto res = local_linearize(H);
  check_linearization(H, res);
}

TEST(LocalLinearize, QuadraticPerturbation) {
  const auto H = ball(poly_perturb_map(2, 0.1, 0, 1, zeros(2), 1.5), 2);
  const auto res = local_linearize(H);
  check_linearization(H, res);
}

TEST(LocalLinearize, OffCentreStretchRotation3D) {
  Mat A(3, 3);
  A << 1.5, -0.4, 0.0, 0.3, 0.9, 0.2, 0.0, -0.1, 1.1;
  const Vec c = vec({0.5, -1.0, 2.0});
  const SmoothMap L(std::make_shared<AffineMap>(A, c, zeros(3)));
  const SmoothMap tw = twist_map(3, 0.7, 0.2, 1.2, c, {1, 2});
  const auto H = make_ball_diffeo(compose({tw, L}), c, 1.0, 0.3);
  const auto res = local_linearize(H);
  check_linearization(H, res);
}

TEST(LocalLinearize, StrongPerturbationNeedsHalving) {
  const auto H = ball(poly_perturb_map(2, 1.0, 0, 1, zeros(2), 3.0), 2, 2.0, 0.5);
  const auto res = local_linearize(H);
  EXPECT_GT(res.halvings, 0);
  check_linearization(H, res);
}

TEST(LocalLinearize, Errors) {
  Mat R = identity(2);
  R(0, 0) = -1.0;
  const auto flip = ball(SmoothMap(std::make_shared<AffineMap>(R, zeros(2), zeros(2))), 2);
  expect_error(ErrorKind::orientation, [&] { local_linearize(flip); });
  LinearizeOptions tight;
  tight.max_halvings = 0;
  const auto strong = ball(poly_perturb_map(2, 1.0, 0, 1, zeros(2), 3.0), 2, 2.0, 0.5);
  expect_error(ErrorKind::linearization, [&] { local_linearize(strong, tight); });
}
