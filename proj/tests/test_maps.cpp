#include "diffext/builtins.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace diffext;
using diffext::testing::ball_samples;
using diffext::testing::jacobian_rel_error;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::parameter;
}

std::vector<SmoothMap> builtin_corpus(int n) {
  const Vec c = Vec::Constant(n, 0.1);
  std::vector<SmoothMap> out{
      rotation_map(n, 0.7, c),
      shear_map(n, 0.8, c),
      twist_map(n, 1.0, 0.2, 1.2, c),
      poly_perturb_map(n, 0.1, 0, 1, zeros(n), 1.5),
      radial_squeeze(transition_profile(0.6, 1.1, 0.4, 1.0), c),
      construct_builtin(Json{{"family", "affine"}, {"matrix", n == 2 ? Json::parse("[[2,1],[0.5,1]]") : Json::parse("[[2,1,0],[0.5,1,0],[0,0.3,1]]")},
                             {"shift", Json(std::vector<double>(n, 0.2))}}),
  };
  return out;
}

}  // namespace

TEST(Builtins, IdentityJacobian) {
  const auto f = construct_builtin(Json{{"family", "identity"}, {"dim", 3}});
  const Vec x = vec({0.3, -1.0, 2.0});
  EXPECT_EQ(f(x), x);
  EXPECT_EQ(f.jacobian(x), identity(3));
  EXPECT_TRUE(f.is_identity());
}

TEST(Builtins, RotationQuarterPi) {
  const auto f = construct_builtin(Json{{"family", "rotation"}, {"dim", 2}, {"angle", std::numbers::pi / 4}});
  const Vec y = f(vec({1.0, 0.0}));
  EXPECT_NEAR(y(0), std::sqrt(2.0) / 2, 1e-15);
  EXPECT_NEAR(y(1), std::sqrt(2.0) / 2, 1e-15);
  EXPECT_TRUE(f.structural_inverse());
}

TEST(Builtins, PolyPerturbAccepted) {
  const auto f = construct_builtin(Json{{"family", "poly_perturb"}, {"dim", 2}, {"coefficient", 0.1}, {"domain_radius", 1.5}});
  for (const Vec& x : ball_samples(zeros(2), 1.5, 200, 4)) EXPECT_NEAR(f.jacobian(x).determinant(), 1.0, 1e-15);
  EXPECT_FALSE(f.structural_inverse());
}

TEST(Builtins, PolyPerturbRejectsFold) {
  const Json spec{{"family", "poly_perturb"}, {"dim", 2}, {"coefficient", 1.0}, {"source", 0}, {"target", 0}, {"domain_radius", 1.5}};
  EXPECT_EQ(kind_of([&] { construct_builtin(spec); }), ErrorKind::not_diffeo);
}

TEST(Builtins, UnknownFamilyAndBadParams) {
  EXPECT_EQ(kind_of([] { construct_builtin(Json{{"family", "rotaton"}, {"dim", 2}}); }), ErrorKind::parameter);
  EXPECT_EQ(kind_of([] { construct_builtin(Json{{"family", "rotation"}, {"dim", 2}}); }), ErrorKind::parameter);
  EXPECT_EQ(kind_of([] { construct_builtin(Json{{"family", "twist"}, {"dim", 2}, {"angle", 1}, {"inner", 1}, {"outer", 0.5}}); }),
            ErrorKind::parameter);
}

TEST(Builtins, TwistIsIdentityOutsideAndRotationInside) {
  const auto f = twist_map(2, std::numbers::pi / 3, 0.2, 1.2, zeros(2));
  const Vec far = vec({1.0, 0.8});
  EXPECT_EQ(f(far), far);
  const Vec in = vec({0.1, 0.05});
  const auto R = rotation_map(2, std::numbers::pi / 3, zeros(2));
  EXPECT_LE((f(in) - R(in)).norm(), 1e-15);
  EXPECT_LE((f.jacobian(zeros(2)) - R.jacobian(zeros(2))).norm(), 1e-15);
}

TEST(Compose, IdentityIsNeutral) {
  const auto f = twist_map(2, 1.0, 0.2, 1.2, zeros(2));
  const auto g = compose({identity_map(2), f});
  for (const Vec& x : ball_samples(zeros(2), 2.0, 100, 1)) EXPECT_EQ(g(x), f(x));
}

TEST(Compose, RotationGroupLaw) {
  const auto g = compose({rotation_map(2, 0.4, zeros(2)), rotation_map(2, 0.9, zeros(2))});
  const auto h = rotation_map(2, 1.3, zeros(2));
  for (const Vec& x : ball_samples(zeros(2), 3.0, 1000, 2)) ASSERT_LE((g(x) - h(x)).norm(), 1e-13);
}

TEST(Compose, ChainRuleTwistAffine) {
  const auto A = construct_builtin(Json{{"family", "affine"}, {"matrix", Json::parse("[[1.5,0.3],[-0.2,0.8]]")}, {"shift", {0.1, -0.2}}});
  const auto g = compose({twist_map(2, 1.0, 0.2, 1.2, zeros(2)), A});
  for (const Vec& x : ball_samples(zeros(2), 1.2, 100, 3)) ASSERT_LE(jacobian_rel_error(g, x), 1e-6);
}

TEST(Compose, InverseIsReversedComposite) {
  const auto g = compose({twist_map(3, 1.0, 0.2, 1.2, zeros(3)), shear_map(3, 0.5, zeros(3)), rotation_map(3, 0.3, zeros(3))});
  EXPECT_TRUE(g.structural_inverse());
  for (const Vec& x : ball_samples(zeros(3), 2.0, 300, 5)) ASSERT_LE((*g.inverse(g(x)) - x).norm(), 1e-12);
}

TEST(Compose, DomainMismatchIsReported) {
  const auto small = poly_perturb_map(2, 0.1, 0, 1, zeros(2), 0.5);
  const auto big_shift = translation_map(vec({3.0, 0.0}));
  EXPECT_EQ(kind_of([&] { compose({small, big_shift, poly_perturb_map(2, 0.1, 0, 1, zeros(2), 1.0)}); }), ErrorKind::composition);
  EXPECT_EQ(kind_of([] { compose({}); }), ErrorKind::composition);
  EXPECT_EQ(kind_of([] { compose({identity_map(2), identity_map(3)}); }), ErrorKind::composition);
}

TEST(Glue, TwoIdentityPieces) {
  const auto g = glue_piecewise({{Region::ball(zeros(2), 1.0), identity_map(2)}, {Region::complement(Region::ball(zeros(2), 0.5)), identity_map(2)}});
  for (const Vec& x : ball_samples(zeros(2), 3.0, 200, 6)) EXPECT_EQ(g(x), x);
}

TEST(Glue, GapIsCoverageError) {
  EXPECT_EQ(kind_of([] {
              glue_piecewise({{Region::ball(zeros(2), 1.0), rotation_map(2, std::numbers::pi / 4, zeros(2))},
                              {Region::complement(Region::ball(zeros(2), 2.0)), identity_map(2)}});
            }),
            ErrorKind::coverage);
}

TEST(Glue, DisagreementReportsWorstPoint) {
  try {
    glue_piecewise({{Region::ball(zeros(2), 1.0), rotation_map(2, 0.5, zeros(2))}, {Region::complement(Region::ball(zeros(2), 0.5)), identity_map(2)}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::gluing);
    EXPECT_NE(std::string(e.what()).find("disagree"), std::string::npos);
  }
}

TEST(Glue, RecordsSeamEvidenceAndRoutesFirstMatch) {
  const auto tw = twist_map(2, 1.0, 0.2, 1.2, zeros(2));
  const auto g = glue_piecewise({{Region::ball(zeros(2), 1.5), tw}, {Region::complement(Region::ball(zeros(2), 1.3)), identity_map(2)}});
  const auto* pw = g.as<PiecewiseMap>();
  ASSERT_NE(pw, nullptr);
  ASSERT_EQ(pw->evidence().size(), 1u);
  EXPECT_GT(pw->evidence()[0].samples, 0);
  EXPECT_LE(pw->evidence()[0].worst, 1e-10);
  for (const Vec& x : ball_samples(zeros(2), 3.0, 500, 7)) {
    EXPECT_EQ(g(x), tw(x));
    EXPECT_LE((*g.inverse(g(x)) - x).norm(), 1e-12);
  }
}

TEST(RadialSqueeze, PlateausAndInverse) {
  const Vec c = vec({0.5, -0.5});
  const double delta = 0.1, rho = 1.0, tau = 0.1;
  const auto phi = transition_profile(1.1, 1.2, delta / (rho + tau), 1.0);
  const auto P = radial_squeeze(phi, c);
  const Vec in = c + vec({0.6, 0.7});
  EXPECT_LE((P(in) - (c + phi.inner() * (in - c))).norm(), 1e-15);
  const Vec out = c + vec({1.0, 0.8});
  EXPECT_EQ(P(out), out);
  for (const Vec& x : ball_samples(c, 2.0, 1000, 8)) ASSERT_LE((*P.inverse(P(x)) - x).norm(), 1e-11);
  for (const Vec& x : ball_samples(c, 1.3, 100, 9)) ASSERT_LE(jacobian_rel_error(P, x), 1e-6);
  EXPECT_EQ(kind_of([&] { radial_squeeze(transition_profile(1.0, 2.0, 0.5, 2.0), c); }), ErrorKind::parameter);
}

TEST(RadialSqueeze, MapsBallsOntoBalls) {
  const auto phi = transition_profile(0.5, 1.0, 0.2, 1.0);
  const auto P = radial_squeeze(phi, zeros(3));
  for (double r : {0.3, 0.7, 0.9, 1.4})
    for (const Vec& u : sphere_directions(3, 50)) EXPECT_NEAR(P(r * u).norm(), phi.radial(r), 1e-14);
}

TEST(ExtendByIdentity, IdentityInner) {
  const auto f = extend_by_identity(identity_map(2), Region::ball(zeros(2), 1.0), Region::annulus(zeros(2), 0.8, 1.0));
  for (const Vec& x : ball_samples(zeros(2), 3.0, 200, 10)) EXPECT_EQ(f(x), x);
}

TEST(ExtendByIdentity, BranchesAgreeOnShell) {
  const auto tw = twist_map(2, 1.0, 0.1, 0.8, zeros(2));
  const Region shell = Region::annulus(zeros(2), 0.85, 1.0);
  const auto f = extend_by_identity(tw, Region::image_of(tw.node(), Region::ball(zeros(2), 1.0)), shell);
  for (const Vec& x : sample_region(shell, 100, 11, 0)) EXPECT_LE((tw(x) - x).norm(), 1e-10);
  const Vec far = vec({2.0, 2.0});
  EXPECT_EQ(f(far), far);
  EXPECT_EQ(kind_of([&] { extend_by_identity(tw, Region::ball(zeros(2), 1.0), Region::annulus(zeros(2), 0.3, 1.0)); }),
            ErrorKind::construction);
}

TEST(Newton, AffineOneStepAndIdentity) {
  const auto A = construct_builtin(Json{{"family", "affine"}, {"matrix", Json::parse("[[2,1],[0,3]]")}, {"shift", {1, 1}}});
  const Vec y = vec({0.3, 0.2});
  const auto r = newton_from(*A.node(), y, zeros(2), 1e-13, 1);
  EXPECT_TRUE(r.converged);
  EXPECT_LE((A(r.x) - y).norm(), 1e-13);
  const auto id = newton_invert(identity_map(2), y, {y}, 1e-14);
  EXPECT_TRUE(id.converged);
  EXPECT_EQ(id.x, y);
}

TEST(Newton, PolyPerturbRecoversPoint) {
  const auto f = poly_perturb_map(2, 0.1, 0, 1, zeros(2), 1.5);
  const Vec x = vec({0.3, 0.4});
  const auto r = newton_invert(f, f(x), {f(x)}, 1e-14);
  EXPECT_TRUE(r.converged);
  EXPECT_LE((r.x - x).norm(), 1e-10);
  EXPECT_LE((*f.inverse(f(x)) - x).norm(), 1e-10);
}

TEST(Newton, NonConvergenceIsFlagged) {
  const auto tw = twist_map(2, 1.0, 0.2, 1.2, zeros(2));
  const auto sq = compose({tw, poly_perturb_map(2, 0.1, 0, 1, zeros(2), 1.0)});
  const auto r = newton_invert(sq, vec({std::nan(""), 0.0}), {zeros(2)}, 1e-12);
  EXPECT_FALSE(r.converged);
}

TEST(Properties, StructuralRoundtrip) {
  for (int n : {2, 3}) {
    for (const auto& f : builtin_corpus(n)) {
      const auto pts = ball_samples(zeros(n), 1.4, 10000, 12);
      for (const Vec& x : pts) {
        const auto back = f.inverse(f(x));
        ASSERT_TRUE(back.has_value()) << f.to_json().dump();
        ASSERT_LE((*back - x).norm(), 1e-9) << f.to_json().dump();
      }
      for (std::size_t k = 0; k < 2000; ++k) {
        const Vec& y = pts[k];
        auto x = f.inverse(y);
        ASSERT_TRUE(x.has_value());
        ASSERT_LE((f(*x) - y).norm(), 1e-9);
      }
    }
  }
}

TEST(Properties, ChainRuleRandomComposites) {
  CounterRng rng(77, 0);
  for (int n : {2, 3}) {
    const auto corpus = builtin_corpus(n);
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      const int len = 1 + static_cast<int>(rng.bits(trial, 0) % 4);
      std::vector<SmoothMap> chain;
      for (int k = 0; k < len; ++k) {
        std::size_t pick = rng.bits(trial, 1 + static_cast<std::uint64_t>(k)) % corpus.size();
        // the bounded-domain family only goes last
        if (pick == 3 && k != len - 1) pick = 2;
        chain.push_back(corpus[pick]);
      }
      SmoothMap g;
      try {
        g = compose(chain);
      } catch (const Error&) {
        continue;
      }
      for (const Vec& x : ball_samples(zeros(n), 1.0, 100, 100 + trial)) ASSERT_LE(jacobian_rel_error(g, x), 1e-5);
    }
  }
}

TEST(Properties, OrientationSignConstant) {
  for (int n : {2, 3})
    for (const auto& f : builtin_corpus(n)) {
      ASSERT_EQ(f.orientation(), Orientation::preserving);
      for (const Vec& x : ball_samples(zeros(n), 1.4, 1000, 13)) ASSERT_GT(f.jacobian(x).determinant(), 0.0);
    }
}
