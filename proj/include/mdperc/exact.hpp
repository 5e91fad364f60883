#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mdperc/errors.hpp"
#include "mdperc/events.hpp"
#include "mdperc/graphical.hpp"
#include "mdperc/lattice.hpp"
#include "mdperc/replicas.hpp"
#include "mdperc/rng.hpp"

namespace mdperc {

// A small clock field on which f = 1{H(n, n) at time t} is enumerated over
// every assignment of its input bits: initial opinions of the union past cone
// of R_n (Bernoulli(p)) and accept bits of the rings that can matter
// (Bernoulli(1/k)).
struct ExactInstance {
  ClockField clocks;
  std::int64_t n = 1;
  double p = 0.5;
  int k = 1;
  UpdateRule rule = UpdateRule::majority;
  ExplorationOptions explore;
};

struct ExactBit {
  enum class Kind { site, ring } kind = Kind::site;
  Site site;
  std::uint32_t ring_id = 0;  // clock-field ring id for ring bits
  double time = 0.0;
};

struct ExactReport {
  std::vector<ExactBit> domain;
  std::size_t site_bits = 0;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> influence;   // per bit
  std::vector<double> revealment;  // per bit, averaged over the column choice
  double osss_rhs = 0.0;
  double influence_sum_sites = 0.0;
  double derivative = 0.0;  // d/dp E_p[f] from the polynomial in p
  // E_p[f] = sum_j poly[j] p^j (1 - p)^(m - j), m = site_bits
  std::vector<double> poly;
  bool guard_triggered = false;
};

inline std::vector<ExactBit> exact_domain(const ExactInstance& inst, const RestrictedSchedule& rs) {
  std::vector<ExactBit> d;
  for (auto i : rs.sites) d.push_back({ExactBit::Kind::site, inst.clocks.region().site(i), 0, 0.0});
  for (const auto& r : rs.rings) d.push_back({ExactBit::Kind::ring, inst.clocks.region().site(r.site), r.ring, r.time});
  return d;
}

inline double exact_polynomial_value(const std::vector<double>& poly, double p) {
  const auto m = static_cast<int>(poly.size()) - 1;
  double s = 0;
  for (int j = 0; j <= m; ++j) s += poly[static_cast<std::size_t>(j)] * std::pow(p, j) * std::pow(1.0 - p, m - j);
  return s;
}

inline double exact_polynomial_derivative(const std::vector<double>& poly, double p) {
  const auto m = static_cast<int>(poly.size()) - 1;
  double s = 0;
  for (int j = 0; j <= m; ++j) {
    double d = 0;
    if (j > 0) d += j * std::pow(p, j - 1) * std::pow(1.0 - p, m - j);
    if (j < m) d -= (m - j) * std::pow(p, j) * std::pow(1.0 - p, m - j - 1);
    s += poly[static_cast<std::size_t>(j)] * d;
  }
  return s;
}

inline ExactReport exact_enumerate(const ExactInstance& inst, std::size_t max_bits = 24, unsigned threads = 1) {
  const std::int64_t n = inst.n;
  const Region rn = Region::rectangle(n, n);
  const ClockField& clocks = inst.clocks;
  const Region& reg = clocks.region();
  require(n >= 1, "exact_enumerate: n must be >= 1");
  require(inst.p >= 0.0 && inst.p <= 1.0, "exact_enumerate: p must lie in [0, 1]");
  require(inst.k >= 1, "exact_enumerate: k must be >= 1");
  require(max_bits <= 30, "exact_enumerate: max_bits must be <= 30");
  const auto rs = restrict_schedule(clocks, rn);
  require(!rs.escapes && clocks.certified_core() && clocks.certified_core()->contains(rn),
          "exact_enumerate: clock field does not certify R_n");
  ExactReport rep;
  rep.domain = exact_domain(inst, rs);
  rep.site_bits = rs.sites.size();
  const std::size_t m = rep.domain.size();
  if (m > max_bits) throw ResourceError("exact_enumerate: bit domain exceeds the enumeration budget");
  const std::size_t ms = rep.site_bits;
  const std::uint64_t total = std::uint64_t{1} << m;

  std::vector<std::int32_t> site_bit(reg.area(), -1);
  for (std::size_t b = 0; b < ms; ++b) site_bit[reg.index(rep.domain[b].site)] = static_cast<std::int32_t>(b);
  const ConeTable cones(clocks, n);
  std::vector<std::uint64_t> cone_mask(rn.area(), 0);
  for (std::size_t i = 0; i < rn.area(); ++i)
    for (auto mbr : cones.cone(i)) cone_mask[i] |= std::uint64_t{1} << site_bit[mbr];
  std::vector<std::uint64_t> ring_owner(m, 0);  // site-bit mask owning each bit
  for (std::size_t b = 0; b < m; ++b)
    ring_owner[b] = b < ms ? std::uint64_t{1} << b
                           : std::uint64_t{1} << site_bit[reg.index(rep.domain[b].site)];
  rep.guard_triggered = cones.max_radius(inst.explore.guard_norm) >= inst.explore.radius_for(n);
  const std::int64_t x_lo = column_lo(n), x_hi = column_hi(n);
  const double columns = static_cast<double>(x_hi - x_lo + 1);

  const double keep = 1.0 / static_cast<double>(inst.k);
  std::vector<double> q1(m), q0(m);
  for (std::size_t b = 0; b < m; ++b) {
    q1[b] = b < ms ? inst.p : keep;
    q0[b] = 1.0 - q1[b];
  }
  const CrossingSpec spec = CrossingSpec::open_horizontal(n);

  // Pass 1: f table.  Pass 2 (needs f of neighbours): weighted sums.
  std::vector<std::uint8_t> f(total);
  struct Partial {
    std::vector<double> reveal;
  };
  const std::uint64_t chunk = std::uint64_t{1} << std::min<std::size_t>(m, 12);
  const std::size_t chunks = static_cast<std::size_t>(total / chunk);
  const auto reveal_parts = run_replicas(chunks, threads, [&](std::size_t c) {
    Partial part;
    part.reveal.assign(m, 0.0);
    UpdateSelection sel;
    sel.accept.assign(clocks.ring_count(), 0);
    if (inst.rule == UpdateRule::voter) sel.voter_choice.assign(clocks.ring_count(), 0);
    SpinConfig cfg(reg);
    std::vector<std::uint8_t> init;
    ExplorationTrace tr;
    tr.n = n;
    for (std::uint64_t w = c * chunk; w < (c + 1) * chunk; ++w) {
      auto& v = cfg.mutable_values();
      for (std::size_t b = 0; b < ms; ++b) v[reg.index(rep.domain[b].site)] = (w >> b) & 1;
      for (std::size_t b = ms; b < m; ++b) sel.accept[rep.domain[b].ring_id] = (w >> b) & 1;
      if (MDPERC_TIE_KEEPS_INITIAL) {
        init = v;
        evolve_restricted(rs, sel, inst.rule, v, &init);
      } else {
        evolve_restricted(rs, sel, inst.rule, v);
      }
      f[w] = crossing(cfg, spec) ? 1 : 0;
      double weight = 1.0;
      for (std::size_t b = 0; b < m; ++b) weight *= (w >> b) & 1 ? q1[b] : q0[b];
      if (rep.guard_triggered) {
        for (std::size_t b = 0; b < m; ++b) part.reveal[b] += weight;
        continue;
      }
      for (std::int64_t x0 = x_lo; x0 <= x_hi; ++x0) {
        tr.queried.assign(static_cast<std::size_t>(n * n), 0);
        tr.queried_count = 0;
        detail::explore_clusters(cfg.values(), reg, n, x0, inst.explore, tr);
        std::uint64_t seen = 0;
        for (std::size_t i = 0; i < tr.queried.size(); ++i)
          if (tr.queried[i]) seen |= cone_mask[i];
        for (std::size_t b = 0; b < m; ++b)
          if (seen & ring_owner[b]) part.reveal[b] += weight / columns;
      }
    }
    return part;
  });
  rep.revealment.assign(m, 0.0);
  for (const auto& part : reveal_parts)
    for (std::size_t b = 0; b < m; ++b) rep.revealment[b] += part.reveal[b];

  struct Sums {
    double mean = 0;
    std::vector<double> inf;
    std::vector<double> poly;
  };
  const auto sum_parts = run_replicas(chunks, threads, [&](std::size_t c) {
    Sums s;
    s.inf.assign(m, 0.0);
    s.poly.assign(ms + 1, 0.0);
    for (std::uint64_t w = c * chunk; w < (c + 1) * chunk; ++w) {
      double weight = 1.0, ring_weight = 1.0;
      for (std::size_t b = 0; b < m; ++b) {
        const double q = (w >> b) & 1 ? q1[b] : q0[b];
        weight *= q;
        if (b >= ms) ring_weight *= q;
      }
      if (f[w]) {
        s.mean += weight;
        s.poly[static_cast<std::size_t>(std::popcount(w & ((std::uint64_t{1} << ms) - 1)))] += ring_weight;
      }
      for (std::size_t b = 0; b < m; ++b)
        if (f[w] != f[w ^ (std::uint64_t{1} << b)]) s.inf[b] += weight;
    }
    return s;
  });
  rep.influence.assign(m, 0.0);
  rep.poly.assign(ms + 1, 0.0);
  for (const auto& s : sum_parts) {
    rep.mean += s.mean;
    for (std::size_t b = 0; b < m; ++b) rep.influence[b] += s.inf[b];
    for (std::size_t j = 0; j <= ms; ++j) rep.poly[j] += s.poly[j];
  }
  rep.variance = rep.mean * (1.0 - rep.mean);
  for (std::size_t b = 0; b < m; ++b) rep.osss_rhs += rep.revealment[b] * rep.influence[b];
  for (std::size_t b = 0; b < ms; ++b) rep.influence_sum_sites += rep.influence[b];
  rep.derivative = exact_polynomial_derivative(rep.poly, inst.p);
  return rep;
}

struct RussoCheck {
  double h = 0.0;
  double influence_sum = 0.0;
  double derivative = 0.0;  // exact polynomial derivative
  double fd_h = 0.0, fd_half = 0.0;
  double gap_h = 0.0, gap_half = 0.0;
  double order = 0.0;   // log2(gap_h / gap_half); infinity when both gaps vanish
  bool exact = false;   // both gaps at roundoff level
};

inline RussoCheck russo_from_report(const ExactReport& rep, double p, double h) {
  require(h > 0.0 && h < std::min(p, 1.0 - p), "russo_check: need 0 < h < min(p, 1 - p)");
  RussoCheck rc;
  rc.h = h;
  rc.influence_sum = rep.influence_sum_sites;
  rc.derivative = rep.derivative;
  auto fd = [&](double s) {
    return (exact_polynomial_value(rep.poly, p + s) - exact_polynomial_value(rep.poly, p - s)) / (2.0 * s);
  };
  rc.fd_h = fd(h);
  rc.fd_half = fd(h / 2);
  rc.gap_h = std::abs(rc.fd_h - rc.influence_sum);
  rc.gap_half = std::abs(rc.fd_half - rc.influence_sum);
  constexpr double kRoundoff = 1e-11;
  rc.exact = rc.gap_h < kRoundoff && rc.gap_half < kRoundoff;
  rc.order = rc.exact ? std::numeric_limits<double>::infinity() : std::log2(rc.gap_h / rc.gap_half);
  return rc;
}

inline RussoCheck russo_check(const ExactInstance& inst, double h, std::size_t max_bits = 24, unsigned threads = 1) {
  return russo_from_report(exact_enumerate(inst, max_bits, threads), inst.p, h);
}

// Draws clock fields on [0, n + 1]^2 until one certifies R_n with at most
// `max_bits` input bits.
inline ExactInstance sample_exact_instance(std::int64_t n, double p, int k, double t, std::size_t max_bits,
                                           std::uint64_t key, std::size_t max_attempts = 100000) {
  require(n >= 1, "sample_exact_instance: n must be >= 1");
  const Region rn = Region::rectangle(n, n);
  const Region window = rn.padded(1);
  for (std::size_t a = 0; a < max_attempts; ++a) {
    auto clocks = sample_clock_field_keyed(window, k, t, derive_key(key, a));
    const auto rs = restrict_schedule(clocks, rn);
    if (rs.escapes || rs.sites.size() + rs.rings.size() > max_bits) continue;
    clocks.set_certified_core(rn);
    ExactInstance inst;
    inst.clocks = std::move(clocks);
    inst.n = n;
    inst.p = p;
    inst.k = k;
    return inst;
  }
  throw ResourceError("sample_exact_instance: no instance within the bit budget");
}

}  // namespace mdperc
