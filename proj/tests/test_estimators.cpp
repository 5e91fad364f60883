#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mdperc/estimators.hpp"
#include "oracles.hpp"

using namespace mdperc;

namespace {

bool lr_crossing(const SpinConfig& cfg, std::int64_t n) {
  std::vector<Site> left, right;
  for (std::int64_t y = 1; y <= n; ++y) {
    left.push_back({1, y});
    right.push_back({n, y});
  }
  return has_path(cfg, left, right, 1, Connectivity::nearest, Region::rectangle(n, n));
}

ClockField certified_empty(const Region& r, const Region& core) {
  auto c = ClockField::empty(r, 1, 1.0);
  c.set_certified_core(core);
  return c;
}

}  // namespace

TEST(Intervals, WilsonEdgeCases) {
  const auto [lo, hi] = wilson_interval(0, 20);
  EXPECT_DOUBLE_EQ(lo, 0.0);
  const double z2 = kZ95 * kZ95;
  EXPECT_NEAR(hi, z2 / (20 + z2), 1e-12);
  const auto [a, b] = wilson_interval(10, 20);
  EXPECT_NEAR(a + b, 1.0, 1e-12);
  EXPECT_LT(a, 0.5);
}

TEST(Intervals, IndicatorStandardError) {
  std::vector<std::uint8_t> hits(40, 0);
  for (int i = 0; i < 10; ++i) hits[static_cast<std::size_t>(i)] = 1;
  const auto e = indicator_estimate(hits, "s");
  EXPECT_DOUBLE_EQ(e.mean, 0.25);
  EXPECT_NEAR(e.std_error, std::sqrt(0.25 * 0.75 / 39.0), 1e-12);
  EXPECT_EQ(e.replicas, 40u);
  EXPECT_EQ(e.seed_descriptor, "s");
}

TEST(Intervals, LeastSquaresRecoversLine) {
  const std::vector<double> x{1, 2, 3, 4}, y{-1, -3, -5, -7};
  const auto f = least_squares(x, y);
  EXPECT_NEAR(f.slope, -2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(MonteCarlo, TimeZeroMatchesDirectCount) {
  const StreamFamily fam{7, "direct"};
  SimParams sp;
  sp.p = 0.6;
  const std::int64_t n = 8;
  const auto est = mc_event_probability(crossing_event(CrossingSpec::open_horizontal(n)), sp, 300, fam);
  double hits = 0;
  for (std::size_t r = 0; r < 300; ++r)
    hits += lr_crossing(coupled_initial(Region::rectangle(n, n), sp.p, fam.key(r, Purpose::initial)), n);
  EXPECT_DOUBLE_EQ(est.mean, hits / 300.0);
}

TEST(MonteCarlo, ThreadCountDoesNotChangeResults) {
  const StreamFamily fam{11, "threads"};
  SimParams sp;
  sp.p = 0.55;
  sp.t = 0.7;
  sp.k = 3;
  const auto ev = crossing_event(CrossingSpec::open_horizontal(10));
  const auto a = mc_event_probability(ev, sp, 64, fam, 1);
  const auto b = mc_event_probability(ev, sp, 64, fam, 4);
  EXPECT_EQ(a.mean, b.mean);
  const auto ta = coupled_thresholds(ev, sp, 64, fam, 1);
  const auto tb = coupled_thresholds(ev, sp, 64, fam, 5);
  EXPECT_EQ(ta.thresholds, tb.thresholds);
}

TEST(Coupled, ThresholdAtTimeZeroMatchesSequentialFilling) {
  const StreamFamily fam{3, "nz"};
  const std::int64_t n = 6;
  const auto ev = crossing_event(CrossingSpec::open_horizontal(n));
  for (std::uint64_t r = 0; r < 40; ++r) {
    const double th = replica_threshold(ev, SimParams{}, fam, r);
    const Region rn = Region::rectangle(n, n);
    std::vector<std::pair<double, Site>> order;
    for (std::size_t i = 0; i < rn.area(); ++i) {
      const Site s = rn.site(i);
      order.emplace_back(site_uniform(fam.key(r, Purpose::initial), s.x, s.y), s);
    }
    std::sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.first < b.first; });
    SpinConfig cfg(rn);
    double expect = kNeverHolds;
    for (auto& [u, s] : order) {
      cfg.set(s, 1);
      if (lr_crossing(cfg, n)) {
        expect = u;
        break;
      }
    }
    EXPECT_EQ(th, expect) << "replica " << r;
  }
}

TEST(Coupled, ThresholdSeparatesHoldingFromFailing) {
  const StreamFamily fam{5, "mono"};
  SimParams sp;
  sp.t = 1.0;
  sp.k = 2;
  const std::int64_t n = 8;
  const auto ev = crossing_event(CrossingSpec::open_horizontal(n));
  for (std::uint64_t r = 0; r < 12; ++r) {
    const double th = replica_threshold(ev, sp, fam, r);
    for (double p : {0.1, 0.3, 0.45, 0.5, 0.55, 0.7, 0.9}) {
      SimParams q = sp;
      q.p = p;
      const bool holds = ev.holds(replica_final(ev.support, q, fam, r));
      EXPECT_EQ(holds, p > th) << "replica " << r << " p " << p << " theta " << th;
    }
  }
}

TEST(Coupled, EdgeThresholds) {
  const StreamFamily fam{2, "edge"};
  const Event always{"always", Region::rectangle(2, 2), [](const SpinConfig&) { return true; }};
  const Event never{"never", Region::rectangle(2, 2), [](const SpinConfig&) { return false; }};
  EXPECT_EQ(replica_threshold(always, SimParams{}, fam, 0), kAlwaysHolds);
  EXPECT_EQ(replica_threshold(never, SimParams{}, fam, 0), kNeverHolds);
}

TEST(Coupled, BisectionFindsOrderStatistic) {
  CoupledSample cs;
  for (int i = 1; i <= 100; ++i) cs.thresholds.push_back(i / 101.0);
  const auto q = bisect_level(cs, 0.5, 1e-6);
  EXPECT_NEAR(q.value, 50 / 101.0, 2e-6);
  EXPECT_LE(q.ci_lo, q.value);
  EXPECT_GE(q.ci_hi, q.value);
  EXPECT_FALSE(q.flagged);
  CoupledSample tiny;
  tiny.thresholds = {0.4, 0.6};
  EXPECT_TRUE(bisect_level(tiny, 0.1).flagged);
}

TEST(Coupled, TimeZeroCriticalPointMatchesNewmanZiff) {
  const StreamFamily fam{17, "pc0"};
  const auto res = estimate_pc(0.0, {16}, 1, 2000, fam, 0);
  const double oracle = oracle::iid_median_threshold(16, 4000, 99);
  EXPECT_NEAR(res.per_n[0].pc.value, oracle, 0.02);
  EXPECT_LE(res.per_n[0].pc.ci_lo, res.per_n[0].pc.value);
}

TEST(Coupled, WindowIsOrdered) {
  const auto w = threshold_window(12, 0.0, 0.1, 1, 800, StreamFamily{1, "win"}, 0);
  EXPECT_LT(w.p_lo.value, w.p_hi.value);
  EXPECT_NEAR(w.length, w.p_hi.value - w.p_lo.value, 1e-15);
  EXPECT_LE(w.length_ci_lo, w.length);
  EXPECT_GE(w.length_ci_hi, w.length);
}

TEST(Quenched, ExtremeDensities) {
  SimParams sp;
  sp.t = 1.0;
  sp.k = 2;
  const auto ev = crossing_event(CrossingSpec::open_horizontal(6));
  const auto w = padded_exact_window_keyed(ev.support, sp.k, sp.t, 9, 4);
  const StreamFamily fam{4, "q"};
  EXPECT_DOUBLE_EQ(quenched_probability(w.clocks, ev, 1.0, 50, fam).mean, 1.0);
  EXPECT_DOUBLE_EQ(quenched_probability(w.clocks, ev, 0.0, 50, fam).mean, 0.0);
}

TEST(Quenched, SingleSiteWithoutRingsIsBernoulli) {
  const Region r(-2, 2, -2, 2);
  const auto clocks = certified_empty(r, Region(-1, 1, -1, 1));
  const auto e = quenched_probability(clocks, site_open_event({0, 0}), 0.3, 4000, StreamFamily{8, "b"});
  EXPECT_NEAR(e.mean, 0.3, 3.5 * std::sqrt(0.21 / 4000));
}

TEST(Quenched, RequiresCertifiedSupport) {
  const auto clocks = ClockField::empty(Region::rectangle(5, 5), 1, 1.0);
  EXPECT_THROW(quenched_probability(clocks, site_open_event({2, 2}), 0.5, 10, StreamFamily{}), ContractViolation);
}

TEST(Variance, AnovaByHand) {
  // groups of 4: means 0.25, 0.75
  const auto v = anova_variance({1, 3}, 4);
  const double sb = 2 * 0.25 * 0.25 / 1.0;
  const double sw = (0.25 * 0.75 * 4 / 3.0) * 2 / 2.0;
  EXPECT_NEAR(v.s_between, sb, 1e-12);
  EXPECT_NEAR(v.s_within, sw, 1e-12);
  EXPECT_NEAR(v.v_hat, sb - sw / 4, 1e-12);
}

TEST(Variance, NoClockRandomnessAtTimeZero) {
  SimParams sp;
  sp.p = 0.59;
  const auto v = variance_of_quenched_mean(sp, 8, 30, 40, StreamFamily{21, "v0"}, 0);
  EXPECT_LE(std::abs(v.v_hat), 3.5 * v.se + 1e-3);
  EXPECT_TRUE(v.pass);
}

TEST(Variance, RateOneBoundHolds) {
  SimParams sp;
  sp.p = 0.59;
  sp.t = 1.0;
  sp.k = 1;
  const auto v = variance_of_quenched_mean(sp, 8, 20, 30, StreamFamily{22, "v1"}, 0);
  EXPECT_TRUE(v.pass);
  EXPECT_DOUBLE_EQ(v.bound, 1.0);
  EXPECT_EQ(v.group_means.size(), 20u);
}

TEST(Influence, SiteOutsideConeHasNone) {
  const Region r(-3, 9, -3, 9);
  const auto clocks = certified_empty(r, Region(-2, 8, -2, 8));
  const auto ev = crossing_event(CrossingSpec::open_horizontal(4));
  EXPECT_DOUBLE_EQ(site_influence(clocks, ev, {7, 7}, 0.5, 100, StreamFamily{}).mean, 0.0);
}

TEST(Influence, SingleSiteCrossingIsPivotal) {
  const auto clocks = certified_empty(Region(0, 2, 0, 2), Region(1, 1, 1, 1));
  const auto ev = crossing_event(CrossingSpec::open_horizontal(1));
  EXPECT_DOUBLE_EQ(site_influence(clocks, ev, {1, 1}, 0.3, 50, StreamFamily{}).mean, 1.0);
}

TEST(Influence, RingBitMatchesMajorityDisagreement) {
  const Region r = Region::rectangle(5, 5);
  std::vector<std::vector<double>> lists(r.area());
  lists[r.index({3, 3})] = {0.5};
  auto clocks = ClockField::from_lists(r, 1, 1.0, lists);
  clocks.set_certified_core(Region(2, 4, 2, 4));
  const auto e = clock_influence(clocks, site_open_event({3, 3}), {3, 3}, 0, 0.5, 8000, StreamFamily{31, "ci"}, 0);
  EXPECT_NEAR(e.mean, 5.0 / 16.0, 4 * std::sqrt(5.0 / 16 * 11.0 / 16 / 8000));
}

TEST(Revealment, NoRingsFullyOpen) {
  const auto clocks = certified_empty(Region(0, 4, 0, 4), Region::rectangle(3, 3));
  const auto res = revealment(clocks, 3, 1.0, 20, StreamFamily{1, "r"});
  EXPECT_DOUBLE_EQ(res.sup, 1.0);
  EXPECT_DOUBLE_EQ(res.guard_fraction, 0.0);
  EXPECT_DOUBLE_EQ(res.mean_queried, 9.0);
}

TEST(Revealment, NoRingsFullyClosedRevealsColumnOnly) {
  const auto clocks = certified_empty(Region(0, 4, 0, 4), Region::rectangle(3, 3));
  const auto res = revealment(clocks, 3, 0.0, 400, StreamFamily{1, "r"});
  const auto at = [&](Site s) { return res.per_site[clocks.region().index(s)]; };
  EXPECT_NEAR(at({1, 2}) + at({2, 2}), 1.0, 1e-12);
  EXPECT_NEAR(at({1, 1}), 0.5, 0.1);
  EXPECT_DOUBLE_EQ(at({3, 1}), 0.0);
  EXPECT_DOUBLE_EQ(res.mean_queried, 3.0);
}

TEST(Revealment, GuardRevealsAllCones) {
  SimParams sp;
  const auto w = padded_exact_window_keyed(Region::rectangle(8, 8), 8, 1.0, 5, 4);
  const auto res = revealment(w.clocks, 8, 0.5, 5, StreamFamily{});
  EXPECT_DOUBLE_EQ(res.guard_fraction, 1.0);
  EXPECT_DOUBLE_EQ(res.sup, 1.0);
}

TEST(OneArm, MatchesPathOracleForOneCentre) {
  SimParams sp;
  sp.p = 0.6;
  sp.t = 0.5;
  sp.k = 2;
  const StreamFamily fam{12, "arm"};
  const std::vector<std::int64_t> ns{1, 3, 5};
  const auto res = one_arm_curve(sp, ns, 60, 1, fam);
  const Region support = Region(0, 0, 0, 0).padded(5);
  for (std::size_t q = 0; q < ns.size(); ++q) {
    double hits = 0;
    for (std::size_t r = 0; r < 60; ++r) {
      const auto fin = replica_final(support, sp, fam, r);
      const Site c{0, 0};
      const auto tgt = ball_boundary(c, ns[q]);
      hits += has_path(fin, std::span<const Site>(&c, 1), tgt, 1, Connectivity::nearest, Region::ball(c, ns[q]));
    }
    EXPECT_DOUBLE_EQ(res.rows[q].estimate.mean, hits / 60.0) << "n " << ns[q];
  }
}

TEST(OneArm, CensoringAndFit) {
  SimParams sp;
  sp.p = 0.0;
  const auto res = one_arm_curve(sp, {2, 4}, 4, 3, StreamFamily{});
  EXPECT_TRUE(res.rows[0].censored);
  EXPECT_EQ(res.fit.points, 0u);
  sp.p = 1.0;
  const auto full = one_arm_curve(sp, {2, 4}, 4, 3, StreamFamily{});
  EXPECT_DOUBLE_EQ(full.rows[1].estimate.mean, 1.0);
}

TEST(Correlation, IdenticalEventsGiveVariance) {
  SimParams sp;
  sp.p = 0.3;
  const auto a = site_open_event({0, 0});
  const auto g = correlation_gap(a, a, sp, 4000, StreamFamily{40, "c"});
  EXPECT_NEAR(g.gap, g.a.mean * (1 - g.a.mean), 1e-12);
  const auto h = correlation_gap(a, site_open_event({5, 0}), sp, 4000, StreamFamily{41, "c"});
  EXPECT_LE(std::abs(h.gap), 4 * h.std_error + 1e-9);
}
