#include <gtest/gtest.h>

#include <boost/math/special_functions/zeta.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>

#include "mdperc/renorm.hpp"

using namespace mdperc;
using Big = boost::multiprecision::cpp_dec_float_50;

TEST(Scales, ZetaMatchesBoost) {
  EXPECT_NEAR(zeta_three_halves(), boost::math::zeta(1.5), 1e-13);
  EXPECT_NEAR(std::exp(zeta_three_halves()), 13.6323, 1e-3);
  EXPECT_NEAR(zeta_euler_maclaurin(2.0), M_PI * M_PI / 6, 1e-13);
}

TEST(Scales, SecondScaleFromTen) {
  const auto seq = scale_sequence(10.0, 2);
  EXPECT_NEAR(seq.L(2), 20.0 * (1.0 + 1.0 / (6.0 * std::sqrt(6.0))), 1e-12);
  EXPECT_NEAR(seq.L(2), 21.3608, 1e-4);
}

TEST(Scales, RecursionAgreesWithHighPrecision) {
  for (double L1 : {1.0, 8.0, 100.0}) {
    const auto seq = scale_sequence(L1, 50);
    Big L = L1;
    for (int k = 1; k <= 50; ++k) {
      const double rel = static_cast<double>(abs((Big(seq.L(k)) - L) / L));
      EXPECT_LT(rel, 1e-12) << "L1 " << L1 << " k " << k;
      L *= 2 * (1 + pow(Big(k + 5), Big(-1.5)));
    }
    EXPECT_LE(scale_bound_violation(seq), 1e-9);
  }
}

TEST(Scales, RatioDecreasesTowardTwo) {
  const auto seq = scale_sequence(3.0, 40);
  double prev = 3.0;
  for (int k = 1; k < 40; ++k) {
    const double r = seq.L(k + 1) / seq.L(k);
    EXPECT_GT(r, 2.0);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(Scales, GrowthConstantsStayBelowThreeAndSeven) {
  for (int k = 1; k <= 1000000; ++k) {
    ASSERT_LT(scale_growth(k), 3.0);
    ASSERT_LT(3.0 * scale_growth(k), 7.0);
  }
}

TEST(Scales, Errors) {
  EXPECT_THROW(scale_sequence(0.5, 3), ContractViolation);
  EXPECT_THROW(scale_sequence(2.0, 0), ContractViolation);
  EXPECT_THROW(scale_sequence(1e10, 1100), ResourceError);
}

TEST(Covering, TenToTwentyOneHasNineCorePoints) {
  ScaleSequence seq;
  seq.L1 = 10;
  seq.scales = {10.0, 21.4};
  const auto cov = build_covering(seq, 1);
  EXPECT_EQ(cov.core_points.size(), 9u);
  EXPECT_TRUE(cov.exhaustive);
  EXPECT_TRUE(cov.verified());
  EXPECT_GE(cov.min_separation, 1);
}

TEST(Covering, AllSmallLevelsVerify) {
  for (double L1 : {1.0, 8.0, 100.0}) {
    const auto seq = scale_sequence(L1, 12);
    for (int k = 1; k < seq.kmax(); ++k) {
      if (std::floor(seq.L(k + 1)) > 512) break;
      const auto cov = build_covering(seq, k);
      EXPECT_TRUE(cov.exhaustive);
      EXPECT_TRUE(cov.verified()) << "L1 " << L1 << " k " << k;
    }
  }
}

TEST(Covering, LargeLevelsUseSampledChecks) {
  const auto seq = scale_sequence(100.0, 5);
  const auto cov = build_covering(seq, 3);
  EXPECT_FALSE(cov.exhaustive);
  EXPECT_TRUE(cov.verified());
}

TEST(Covering, DegenerateSpacing) {
  ScaleSequence seq;
  seq.scales = {0.5, 1.2};
  EXPECT_THROW(build_covering(seq, 1), ContractViolation);
}

TEST(Cascade, TrivialConfigurations) {
  const auto seq = scale_sequence(8.0, 3);
  const auto cov = build_covering(seq, 1);
  const Region r = cascade_region(cov);
  EXPECT_TRUE(cascade_check(SpinConfig(r, 1), seq, 1));
  EXPECT_TRUE(cascade_check(SpinConfig(r, 0), seq, 1));
  StampSet vis(r);
  std::vector<Site> st;
  const SpinConfig open(r, 1);
  const auto o = cascade_outcome(ConfigView{&open}, cov, vis, st);
  EXPECT_TRUE(o.a0 && o.some_core && o.some_shell);
}

TEST(Cascade, TooSmallRegion) {
  const auto seq = scale_sequence(8.0, 3);
  EXPECT_THROW(cascade_check(SpinConfig(Region(-5, 5, -5, 5)), seq, 1), ContractViolation);
}

TEST(Cascade, RandomConfigurationsNeverViolate) {
  const auto seq = scale_sequence(8.0, 4);
  for (int k = 1; k <= 2; ++k) {
    const auto cov = build_covering(seq, k);
    for (double p : {0.3, 0.5927, 0.8}) {
      const auto s = cascade_sweep(cov, p, 500, StreamFamily{3, "casc"}, 0);
      EXPECT_EQ(s.violations, 0u);
      if (p == 0.8) {
        EXPECT_GT(s.a0_count, 0u);
      }
    }
  }
}

TEST(Cascade, LazyViewAgreesWithMaterialized) {
  const auto seq = scale_sequence(8.0, 3);
  const auto cov = build_covering(seq, 1);
  const Region r = cascade_region(cov);
  for (std::uint64_t key = 0; key < 20; ++key) {
    const HashedBernoulliView view{key, 0.6, r};
    SpinConfig cfg(r);
    for (std::size_t i = 0; i < r.area(); ++i) cfg.mutable_values()[i] = view.open(r.site(i));
    StampSet vis(r);
    std::vector<Site> st;
    const auto a = cascade_outcome(view, cov, vis, st);
    const auto b = cascade_outcome(ConfigView{&cfg}, cov, vis, st);
    EXPECT_EQ(a.a0, b.a0);
    EXPECT_EQ(a.some_core, b.some_core);
    EXPECT_EQ(a.some_shell, b.some_shell);
  }
}

TEST(Audit, ExtremeDensities) {
  SimParams sp;
  sp.p = 0.0;
  auto a = recursion_audit(sp, 2.0, 2, 20, StreamFamily{1, "a"});
  ASSERT_EQ(a.rows.size(), 3u);
  for (const auto& r : a.rows) EXPECT_EQ(r.pk.mean, 0.0);
  EXPECT_TRUE(a.all_satisfied());
  EXPECT_EQ(a.rows.back().satisfied, "NA");
  sp.p = 1.0;
  a = recursion_audit(sp, 2.0, 2, 20, StreamFamily{1, "a"});
  for (const auto& r : a.rows) EXPECT_EQ(r.pk.mean, 1.0);
  EXPECT_EQ(a.rows[0].satisfied, "true");
  EXPECT_GE(a.rows[0].n_pairs, 1u);
}
