#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mdperc/estimators.hpp"
#include "mdperc/exact.hpp"
#include "oracles.hpp"

using namespace mdperc;

namespace {

ExactInstance single_site(double p) {
  ExactInstance inst;
  inst.clocks = ClockField::empty(Region(0, 2, 0, 2), 1, 1.0);
  inst.clocks.set_certified_core(Region::rectangle(1, 1));
  inst.n = 1;
  inst.p = p;
  return inst;
}

ExplorationOptions no_guard() {
  ExplorationOptions o;
  o.guard_radius = 1 << 20;
  return o;
}

// Full-field brute force: every bit of the domain enumerated, every other
// site and ring set to `fill`, evolution by the naive replay.
struct Brute {
  double mean = 0;
  std::vector<double> influence;
};

Brute brute_force(const ExactInstance& inst, const std::vector<ExactBit>& dom, std::uint8_t fill) {
  const Region& reg = inst.clocks.region();
  const std::size_t m = dom.size();
  const Region rn = Region::rectangle(inst.n, inst.n);
  auto eval = [&](std::uint64_t w) {
    SpinConfig init(reg, fill);
    UpdateSelection sel{std::vector<std::uint8_t>(inst.clocks.ring_count(), fill), {}};
    for (std::size_t b = 0; b < m; ++b) {
      const std::uint8_t v = (w >> b) & 1;
      if (dom[b].kind == ExactBit::Kind::site)
        init.set(dom[b].site, v);
      else
        sel.accept[dom[b].ring_id] = v;
    }
    const auto fin = oracle::naive_evolve(init, inst.clocks, sel, inst.rule);
    std::vector<Site> left, right;
    for (std::int64_t y = 1; y <= inst.n; ++y) {
      left.push_back({1, y});
      right.push_back({inst.n, y});
    }
    return has_path(fin, left, right, 1, Connectivity::nearest, rn);
  };
  Brute out;
  out.influence.assign(m, 0.0);
  for (std::uint64_t w = 0; w < (std::uint64_t{1} << m); ++w) {
    double weight = 1;
    for (std::size_t b = 0; b < m; ++b) {
      const double q = dom[b].kind == ExactBit::Kind::site ? inst.p : 1.0 / inst.k;
      weight *= (w >> b) & 1 ? q : 1 - q;
    }
    const bool f = eval(w);
    out.mean += weight * f;
    for (std::size_t b = 0; b < m; ++b)
      if (f != eval(w ^ (std::uint64_t{1} << b))) out.influence[b] += weight;
  }
  return out;
}

}  // namespace

TEST(Exact, SingleSiteNoRings) {
  const auto rep = exact_enumerate(single_site(0.3));
  ASSERT_EQ(rep.domain.size(), 1u);
  EXPECT_NEAR(rep.mean, 0.3, 1e-15);
  EXPECT_NEAR(rep.variance, 0.21, 1e-15);
  EXPECT_NEAR(rep.influence[0], 1.0, 1e-15);
  EXPECT_NEAR(rep.derivative, 1.0, 1e-15);
  const auto rc = russo_check(single_site(0.3), 1e-3);
  EXPECT_TRUE(rc.exact);
  EXPECT_LT(rc.gap_h, 1e-12);
}

TEST(Exact, BudgetIsEnforced) {
  const auto inst = sample_exact_instance(3, 0.5, 4, 0.3, 24, 77);
  EXPECT_THROW(exact_enumerate(inst, 5), ResourceError);
}

TEST(Exact, AgreesWithBruteForceReplay) {
  for (std::uint64_t key = 1; key <= 4; ++key) {
    auto inst = sample_exact_instance(3, 0.45, 3, 0.25, 14, key);
    const auto rep = exact_enumerate(inst);
    for (std::uint8_t fill : {0, 1}) {
      const auto br = brute_force(inst, rep.domain, fill);
      EXPECT_NEAR(rep.mean, br.mean, 1e-12);
      for (std::size_t b = 0; b < rep.domain.size(); ++b) EXPECT_NEAR(rep.influence[b], br.influence[b], 1e-12);
    }
  }
}

TEST(Exact, OsssAndRussoHold) {
  for (std::uint64_t key = 10; key < 22; ++key) {
    auto inst = sample_exact_instance(3, 0.3 + 0.03 * static_cast<double>(key - 10), 4, 0.2, 18, key);
    for (bool guard : {true, false}) {
      if (!guard) inst.explore = no_guard();
      const auto rep = exact_enumerate(inst, 24, 0);
      EXPECT_GE(rep.osss_rhs - rep.variance, -1e-12) << "key " << key;
      EXPECT_NEAR(rep.derivative, rep.influence_sum_sites, 1e-12);
      const auto rc = russo_from_report(rep, inst.p, 1e-3);
      EXPECT_LE(rc.gap_h, 1e-4);
      if (!rc.exact) {
        EXPECT_GE(rc.order, 1.9);
      }
    }
  }
}

TEST(Exact, RevealmentIsOneUnderGuard) {
  auto inst = sample_exact_instance(3, 0.5, 4, 0.3, 20, 5);
  inst.explore.guard_radius = 0;
  const auto rep = exact_enumerate(inst);
  EXPECT_TRUE(rep.guard_triggered);
  for (double d : rep.revealment) EXPECT_NEAR(d, 1.0, 1e-12);
}

TEST(Exact, SampledEstimatorsConverge) {
  auto inst = sample_exact_instance(3, 0.55, 4, 0.3, 16, 33);
  inst.explore = no_guard();
  const auto rep = exact_enumerate(inst);
  const Event ev = crossing_event(CrossingSpec::open_horizontal(3));
  const std::size_t inner = 20000;
  const auto q = quenched_probability(inst.clocks, ev, inst.p, inner, StreamFamily{1, "q"}, 0);
  EXPECT_NEAR(q.mean, rep.mean, 4 * std::sqrt(rep.variance / inner) + 1e-9);
  for (std::size_t b = 0; b < rep.site_bits; ++b) {
    const auto e = site_influence(inst.clocks, ev, rep.domain[b].site, inst.p, inner, StreamFamily{2, "i"}, 0);
    const double sd = std::sqrt(rep.influence[b] * (1 - rep.influence[b]) / inner);
    EXPECT_NEAR(e.mean, rep.influence[b], 4 * sd + 1e-9) << rep.domain[b].site;
  }
  for (std::size_t b = rep.site_bits; b < rep.domain.size(); ++b) {
    const auto& bit = rep.domain[b];
    const auto rings = inst.clocks.rings(bit.site);
    const std::size_t idx = bit.ring_id - inst.clocks.ring_id(bit.site, 0);
    ASSERT_EQ(rings[idx], bit.time);
    const auto e = clock_influence(inst.clocks, ev, bit.site, idx, inst.p, inner, StreamFamily{3, "c"}, 0);
    const double sd = std::sqrt(rep.influence[b] * (1 - rep.influence[b]) / inner);
    EXPECT_NEAR(e.mean, rep.influence[b], 4 * sd + 1e-9);
  }
  const auto rv = revealment(inst.clocks, 3, inst.p, inner, StreamFamily{4, "r"}, Orientation::horizontal, 0,
                             inst.explore);
  for (std::size_t b = 0; b < rep.site_bits; ++b) {
    const double d = std::clamp(rep.revealment[b], 0.0, 1.0);
    const double got = rv.per_site[inst.clocks.region().index(rep.domain[b].site)];
    EXPECT_NEAR(got, d, 4 * std::sqrt(d * (1 - d) / inner) + 1e-9) << rep.domain[b].site;
  }
}
