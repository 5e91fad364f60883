#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdperc/errors.hpp"
#include "mdperc/events.hpp"
#include "mdperc/graphical.hpp"
#include "mdperc/lattice.hpp"
#include "mdperc/replicas.hpp"
#include "mdperc/rng.hpp"

namespace mdperc {

inline constexpr double kZ95 = 1.959963984540054;

struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t replicas = 0;
  std::string seed_descriptor;
  double ci_lo = 0.0;  // 95% interval: Wilson for indicators, normal otherwise
  double ci_hi = 0.0;
};

inline std::pair<double, double> wilson_interval(double successes, double n, double z = kZ95) {
  if (n <= 0) return {0.0, 1.0};
  const double ph = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (ph + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// Mean, sample standard deviation over sqrt(n), Wilson interval.
inline MCEstimate indicator_estimate(const std::vector<std::uint8_t>& hits, std::string seed) {
  MCEstimate e;
  e.replicas = hits.size();
  e.seed_descriptor = std::move(seed);
  const double n = static_cast<double>(hits.size());
  double s = 0;
  for (auto h : hits) s += h;
  e.mean = n > 0 ? s / n : 0.0;
  e.std_error = n > 1 ? std::sqrt(e.mean * (1.0 - e.mean) * n / (n - 1.0) / n) : 0.0;
  std::tie(e.ci_lo, e.ci_hi) = wilson_interval(s, n);
  return e;
}

inline MCEstimate real_estimate(const std::vector<double>& xs, std::string seed) {
  MCEstimate e;
  e.replicas = xs.size();
  e.seed_descriptor = std::move(seed);
  const double n = static_cast<double>(xs.size());
  if (xs.empty()) return e;
  e.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0;
  for (double x : xs) ss += (x - e.mean) * (x - e.mean);
  e.std_error = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  e.ci_lo = e.mean - kZ95 * e.std_error;
  e.ci_hi = e.mean + kZ95 * e.std_error;
  return e;
}

// ---------------------------------------------------------------------------
// Events evaluated on the time-t configuration.  `support` is the set of
// sites whose values the detector reads.

struct Event {
  std::string name;
  Region support;
  std::function<bool(const SpinConfig&)> holds;
};

inline Event crossing_event(const CrossingSpec& spec) {
  return {"crossing", spec.rectangle(), [spec](const SpinConfig& c) {
            thread_local CrossingWorkspace ws;
            return crossing(c, spec, ws);
          }};
}

inline Event site_open_event(Site x) {
  return {"site_open", Region(x.x, x.x, x.y, x.y), [x](const SpinConfig& c) { return c.at(x) == 1; }};
}

inline Event arm_event_of(std::int64_t r_in, std::int64_t r_out, std::uint8_t state = 1,
                          Connectivity conn = Connectivity::nearest) {
  return {"arm", Region::ball({0, 0}, r_out),
          [=](const SpinConfig& c) { return arm_event(c, r_in, r_out, state, conn); }};
}

inline Event circuit_event_of(std::int64_t m, std::uint8_t state = 1, Connectivity conn = Connectivity::nearest) {
  return {"circuit", Region::ball({0, 0}, 3 * m),
          [=](const SpinConfig& c) { return circuit_exists(c, m, state, conn); }};
}

inline Event annulus_event_of(Site x, double L) {
  const Box d = outer_box(x, L);
  return {"annulus", Region(d.x_min - 1, d.x_max + 1, d.y_min - 1, d.y_max + 1),
          [=](const SpinConfig& c) { return annulus_crossing(c, x, L); }};
}

// ---------------------------------------------------------------------------
// Per-replica sampling.  Every random input of replica r comes from the
// stream family keyed by (r, purpose), so replicas are order-free.

struct SimParams {
  double p = 0.5;
  double t = 0.0;
  int k = 1;
  UpdateRule rule = UpdateRule::majority;
  std::int64_t margin_init = 4;
  std::optional<std::int64_t> margin_cap;
};

inline void validate(const SimParams& sp) {
  require(sp.p >= 0.0 && sp.p <= 1.0, "p must lie in [0, 1]");
  require(sp.t >= 0.0 && std::isfinite(sp.t), "t must be finite and >= 0");
  require(sp.k >= 1, "k must be >= 1");
  require(sp.margin_init >= 1, "margin_init must be >= 1");
}

// Overwrites accept bits (and voter choices) of the rings of `sites` only.
// Site streams are keyed by coordinates, so the bits equal those of
// sample_update_selection_keyed on the same key.
inline void fill_selection_sites(const ClockField& clocks, UpdateRule rule, std::uint64_t key,
                                 std::span<const std::uint32_t> sites, UpdateSelection& sel) {
  if (sel.accept.size() != clocks.ring_count()) sel.accept.assign(clocks.ring_count(), 0);
  if (rule == UpdateRule::voter && sel.voter_choice.size() != clocks.ring_count())
    sel.voter_choice.assign(clocks.ring_count(), 0);
  const int k = clocks.rate();
  const double keep = 1.0 / static_cast<double>(k);
  const Region& r = clocks.region();
  for (auto i : sites) {
    const auto rings = clocks.rings_at(i);
    if (rings.empty()) continue;
    const Site s = r.site(i);
    RngStream g = site_stream(key, s.x, s.y);
    const std::uint32_t base = clocks.first_ring(i);
    for (std::size_t j = 0; j < rings.size(); ++j) {
      sel.accept[base + j] = k > 1 ? (uniform01(g) < keep ? 1 : 0) : 1;
      if (rule == UpdateRule::voter) sel.voter_choice[base + j] = static_cast<std::uint8_t>(g() >> 62);
    }
  }
}

inline void fill_initial_sites(const Region& r, double p, std::uint64_t key, std::span<const std::uint32_t> sites,
                               std::vector<std::uint8_t>& values) {
  for (auto i : sites) {
    const Site s = r.site(i);
    values[i] = site_uniform(key, s.x, s.y) < p ? 1 : 0;
  }
}

// Reusable per-worker state for repeated evaluation on one clock field.
struct QuenchedScratch {
  UpdateSelection sel;
  SpinConfig cfg;
  std::vector<std::uint8_t> initial;
};

// Samples the time-t configuration on `schedule.support` for fresh
// (initial opinions, selection) keyed by `sel_key`, `init_key`.
inline const SpinConfig& quenched_final(const ClockField& clocks, const RestrictedSchedule& schedule, double p,
                                        UpdateRule rule, std::uint64_t sel_key, std::uint64_t init_key,
                                        QuenchedScratch& scratch) {
  fill_selection_sites(clocks, rule, sel_key, schedule.sites, scratch.sel);
  if (scratch.cfg.region() != clocks.region() || scratch.cfg.values().size() != clocks.region().area())
    scratch.cfg = SpinConfig(clocks.region());
  auto& v = scratch.cfg.mutable_values();
  fill_initial_sites(clocks.region(), p, init_key, schedule.sites, v);
  if (MDPERC_TIE_KEEPS_INITIAL) {
    scratch.initial = v;
    evolve_restricted(schedule, scratch.sel, rule, v, &scratch.initial);
  } else {
    evolve_restricted(schedule, scratch.sel, rule, v);
  }
  return scratch.cfg;
}

struct ReplicaWindow {
  ClockField clocks;
  RestrictedSchedule schedule;
};

inline ReplicaWindow replica_window(const Region& support, const SimParams& sp, const StreamFamily& fam,
                                    std::uint64_t r) {
  auto w = padded_exact_window_keyed(support, sp.k, sp.t, fam.key(r, Purpose::clocks), sp.margin_init, sp.margin_cap);
  auto rs = restrict_schedule(w.clocks, support);
  return {std::move(w.clocks), std::move(rs)};
}

// Time-t configuration of replica r (exact on `support`).
inline SpinConfig replica_final(const Region& support, const SimParams& sp, const StreamFamily& fam, std::uint64_t r) {
  const auto w = replica_window(support, sp, fam, r);
  QuenchedScratch scratch;
  return quenched_final(w.clocks, w.schedule, sp.p, sp.rule, fam.key(r, Purpose::selection),
                        fam.key(r, Purpose::initial), scratch);
}

// P_{p,t}[event]: fresh certified window, clocks, selection and initial
// configuration per replica.
inline MCEstimate mc_event_probability(const Event& event, const SimParams& sp, std::size_t replicas,
                                       const StreamFamily& fam, unsigned threads = 1) {
  validate(sp);
  require(replicas >= 1, "replicas must be >= 1");
  const auto hits = run_replicas(replicas, threads, [&](std::size_t r) -> std::uint8_t {
    return event.holds(replica_final(event.support, sp, fam, r)) ? 1 : 0;
  });
  return indicator_estimate(hits, fam.descriptor());
}

// P_{p}[event | clocks]: only (initial opinions, selection) are resampled.
inline MCEstimate quenched_probability(const ClockField& clocks, const Event& event, double p, std::size_t inner,
                                       const StreamFamily& fam, unsigned threads = 1,
                                       UpdateRule rule = UpdateRule::majority) {
  require(p >= 0.0 && p <= 1.0, "p must lie in [0, 1]");
  require(inner >= 1, "inner must be >= 1");
  require(clocks.certified_core() && clocks.certified_core()->contains(event.support),
          "quenched_probability: clock field does not certify the event support");
  const auto rs = restrict_schedule(clocks, event.support);
  const auto hits = run_replicas(inner, threads, [&](std::size_t i) -> std::uint8_t {
    QuenchedScratch scratch;
    return event.holds(quenched_final(clocks, rs, p, rule, fam.key(i, Purpose::selection),
                                      fam.key(i, Purpose::initial), scratch))
               ? 1
               : 0;
  });
  return indicator_estimate(hits, fam.descriptor());
}

// ---------------------------------------------------------------------------
// Variance of the quenched mean over clock fields.

struct VarianceDecayResult {
  double v_hat = 0.0;
  double se = 0.0;
  double bound = 0.0;
  bool pass = false;
  double s_between = 0.0;
  double s_within = 0.0;
  std::size_t outer = 0, inner = 0;
  std::vector<double> group_means;
  std::string seed_descriptor;
};

// ANOVA estimate of Var(E[f | clocks]) from per-group hit counts, with a
// jackknife-over-groups standard error.
inline VarianceDecayResult anova_variance(const std::vector<std::size_t>& hits, std::size_t inner) {
  require(hits.size() >= 2, "outer must be >= 2");
  require(inner >= 2, "inner must be >= 2");
  const double m = static_cast<double>(inner);
  auto estimate = [&](std::size_t skip) {
    double sum = 0, count = 0;
    for (std::size_t g = 0; g < hits.size(); ++g)
      if (g != skip) {
        sum += static_cast<double>(hits[g]) / m;
        count += 1;
      }
    const double grand = sum / count;
    double sb = 0, sw = 0;
    for (std::size_t g = 0; g < hits.size(); ++g) {
      if (g == skip) continue;
      const double mu = static_cast<double>(hits[g]) / m;
      sb += (mu - grand) * (mu - grand);
      sw += mu * (1.0 - mu) * m / (m - 1.0);
    }
    sb /= count - 1.0;
    sw /= count;
    return std::array<double, 3>{sb - sw / m, sb, sw};
  };
  VarianceDecayResult res;
  const auto full = estimate(hits.size());
  res.v_hat = full[0];
  res.s_between = full[1];
  res.s_within = full[2];
  res.outer = hits.size();
  res.inner = inner;
  const double g = static_cast<double>(hits.size());
  std::vector<double> loo(hits.size());
  for (std::size_t i = 0; i < hits.size(); ++i) loo[i] = estimate(i)[0];
  const double mean_loo = std::accumulate(loo.begin(), loo.end(), 0.0) / g;
  double ss = 0;
  for (double v : loo) ss += (v - mean_loo) * (v - mean_loo);
  res.se = std::sqrt((g - 1.0) / g * ss);
  for (auto h : hits) res.group_means.push_back(static_cast<double>(h) / m);
  return res;
}

inline VarianceDecayResult variance_of_quenched_mean(const SimParams& sp, std::int64_t n, std::size_t outer,
                                                     std::size_t inner, const StreamFamily& fam,
                                                     unsigned threads = 1) {
  validate(sp);
  require(sp.k >= 1, "k must be >= 1");
  require(outer >= 2, "outer must be >= 2");
  require(inner >= 2, "inner must be >= 2");
  const Event ev = crossing_event(CrossingSpec::open_horizontal(n));
  const auto hits = run_replicas(outer, threads, [&](std::size_t o) -> std::size_t {
    const auto w = replica_window(ev.support, sp, fam, o);
    const StreamFamily in = fam.child("outer" + std::to_string(o));
    QuenchedScratch scratch;
    std::size_t h = 0;
    for (std::size_t i = 0; i < inner; ++i)
      h += ev.holds(quenched_final(w.clocks, w.schedule, sp.p, sp.rule, in.key(i, Purpose::selection),
                                   in.key(i, Purpose::initial), scratch));
    return h;
  });
  auto res = anova_variance(hits, inner);
  res.bound = 1.0 / static_cast<double>(sp.k);
  res.pass = res.v_hat <= res.bound + 3.0 * res.se;
  res.seed_descriptor = fam.descriptor();
  return res;
}

// ---------------------------------------------------------------------------
// Quenched influences by paired evaluation.

inline MCEstimate site_influence(const ClockField& clocks, const Event& event, Site x, double p, std::size_t inner,
                                 const StreamFamily& fam, unsigned threads = 1,
                                 UpdateRule rule = UpdateRule::majority) {
  require(clocks.region().contains(x), "site_influence: site outside clock region");
  require(clocks.certified_core() && clocks.certified_core()->contains(event.support),
          "site_influence: clock field does not certify the event support");
  const auto rs = restrict_schedule(clocks, event.support);
  const auto xi = static_cast<std::uint32_t>(clocks.region().index(x));
  const bool read = std::binary_search(rs.sites.begin(), rs.sites.end(), xi);
  const auto hits = run_replicas(inner, threads, [&](std::size_t i) -> std::uint8_t {
    if (!read) return 0;
    QuenchedScratch scratch;
    fill_selection_sites(clocks, rule, fam.key(i, Purpose::selection), rs.sites, scratch.sel);
    std::vector<std::uint8_t> base(clocks.region().area(), 0);
    fill_initial_sites(clocks.region(), p, fam.key(i, Purpose::initial), rs.sites, base);
    bool f[2];
    for (int flip = 0; flip < 2; ++flip) {
      std::vector<std::uint8_t> v = base;
      if (flip) v[xi] = 1 - v[xi];
      const std::vector<std::uint8_t> init = v;
      evolve_restricted(rs, scratch.sel, rule, v, &init);
      f[flip] = event.holds(SpinConfig(clocks.region(), std::move(v)));
    }
    return f[0] != f[1] ? 1 : 0;
  });
  return indicator_estimate(hits, fam.descriptor());
}

// Influence of the accept bit of ring `ring_index` of site x.
inline MCEstimate clock_influence(const ClockField& clocks, const Event& event, Site x, std::size_t ring_index,
                                  double p, std::size_t inner, const StreamFamily& fam, unsigned threads = 1,
                                  UpdateRule rule = UpdateRule::majority) {
  const std::uint32_t id = clocks.ring_id(x, ring_index);
  require(clocks.certified_core() && clocks.certified_core()->contains(event.support),
          "clock_influence: clock field does not certify the event support");
  const auto rs = restrict_schedule(clocks, event.support);
  const auto hits = run_replicas(inner, threads, [&](std::size_t i) -> std::uint8_t {
    QuenchedScratch scratch;
    fill_selection_sites(clocks, rule, fam.key(i, Purpose::selection), rs.sites, scratch.sel);
    std::vector<std::uint8_t> base(clocks.region().area(), 0);
    fill_initial_sites(clocks.region(), p, fam.key(i, Purpose::initial), rs.sites, base);
    bool f[2];
    for (int flip = 0; flip < 2; ++flip) {
      if (flip) scratch.sel.accept[id] = 1 - scratch.sel.accept[id];
      std::vector<std::uint8_t> v = base;
      evolve_restricted(rs, scratch.sel, rule, v, &base);
      f[flip] = event.holds(SpinConfig(clocks.region(), std::move(v)));
    }
    return f[0] != f[1] ? 1 : 0;
  });
  return indicator_estimate(hits, fam.descriptor());
}

// ---------------------------------------------------------------------------
// Revealment of the exploration algorithm on a fixed clock field.

struct RevealmentResult {
  std::int64_t n = 0;
  Region window;
  std::vector<double> per_site;  // over `window`
  double sup = 0.0;              // over R_n
  Site argsup;
  double sup_ci_lo = 0.0, sup_ci_hi = 0.0;
  double guard_fraction = 0.0;
  double mean_queried = 0.0;
  std::size_t inner = 0;
  std::string seed_descriptor;
};

inline RevealmentResult revealment(const ClockField& clocks, std::int64_t n, double p, std::size_t inner,
                                   const StreamFamily& fam, Orientation variant = Orientation::horizontal,
                                   unsigned threads = 1, ExplorationOptions opt = {},
                                   UpdateRule rule = UpdateRule::majority) {
  require(p >= 0.0 && p <= 1.0, "p must lie in [0, 1]");
  require(inner >= 1, "inner must be >= 1");
  opt.orientation = variant;
  const ConeTable cones(clocks, n);
  const Region rn = Region::rectangle(n, n);
  const auto rs = restrict_schedule(clocks, rn);
  struct Run {
    std::vector<std::uint32_t> revealed;
    std::uint8_t guard = 0;
    std::size_t queried = 0;
  };
  const auto runs = run_replicas(inner, threads, [&](std::size_t i) -> Run {
    QuenchedScratch scratch;
    const SpinConfig& fin = quenched_final(clocks, rs, p, rule, fam.key(i, Purpose::selection),
                                           fam.key(i, Purpose::initial), scratch);
    RngStream col = fam.stream(i, Purpose::column);
    const std::int64_t x0 = uniform_int(col, column_lo(n), column_hi(n));
    const auto tr = explore_with_final(cones, fin, x0, opt);
    Run out;
    out.guard = tr.guard_triggered;
    out.queried = tr.queried_count;
    for (std::size_t j = 0; j < tr.revealed.size(); ++j)
      if (tr.revealed[j]) out.revealed.push_back(static_cast<std::uint32_t>(j));
    return out;
  });
  RevealmentResult res;
  res.n = n;
  res.window = clocks.region();
  res.inner = inner;
  res.seed_descriptor = fam.descriptor();
  std::vector<double> counts(clocks.region().area(), 0.0);
  double guards = 0, queried = 0;
  for (const auto& r : runs) {
    for (auto j : r.revealed) counts[j] += 1;
    guards += r.guard;
    queried += static_cast<double>(r.queried);
  }
  const double m = static_cast<double>(inner);
  res.per_site.resize(counts.size());
  for (std::size_t j = 0; j < counts.size(); ++j) res.per_site[j] = counts[j] / m;
  double best = -1;
  for (std::size_t i = 0; i < rn.area(); ++i) {
    const Site s = rn.site(i);
    const double v = res.per_site[clocks.region().index(s)];
    if (v > best) {
      best = v;
      res.argsup = s;
    }
  }
  res.sup = best;
  std::tie(res.sup_ci_lo, res.sup_ci_hi) = wilson_interval(best * m, m);
  res.guard_fraction = guards / m;
  res.mean_queried = queried / m;
  return res;
}

// ---------------------------------------------------------------------------
// Coupled thresholds.  Initial opinions are open iff U(x) < p; with clocks
// and selection fixed, the time-t configuration is nondecreasing in p, so an
// increasing event has a threshold theta per replica and holds iff p > theta.

inline constexpr double kAlwaysHolds = -1.0;
inline constexpr double kNeverHolds = 2.0;

inline double replica_threshold(const Event& event, const SimParams& sp, const StreamFamily& fam, std::uint64_t r) {
  const auto w = replica_window(event.support, sp, fam, r);
  const auto& rs = w.schedule;
  const std::uint64_t ikey = fam.key(r, Purpose::initial);
  std::vector<std::pair<double, std::uint32_t>> order;
  order.reserve(rs.sites.size());
  for (auto i : rs.sites) {
    const Site s = w.clocks.region().site(i);
    order.emplace_back(site_uniform(ikey, s.x, s.y), i);
  }
  std::sort(order.begin(), order.end());
  UpdateSelection sel;
  fill_selection_sites(w.clocks, sp.rule, fam.key(r, Purpose::selection), rs.sites, sel);
  SpinConfig cfg(w.clocks.region());
  std::vector<std::uint8_t> init;
  auto holds_with = [&](std::size_t j) {
    auto& v = cfg.mutable_values();
    std::fill(v.begin(), v.end(), 0);
    for (std::size_t q = 0; q < j; ++q) v[order[q].second] = 1;
    if (MDPERC_TIE_KEEPS_INITIAL) {
      init = v;
      evolve_restricted(rs, sel, sp.rule, v, &init);
    } else {
      evolve_restricted(rs, sel, sp.rule, v);
    }
    return event.holds(cfg);
  };
  const std::size_t total = order.size();
  if (holds_with(0)) return kAlwaysHolds;
  if (!holds_with(total)) return kNeverHolds;
  std::size_t lo = 0, hi = total;  // holds(lo) false, holds(hi) true
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (holds_with(mid))
      hi = mid;
    else
      lo = mid;
  }
  return order[hi - 1].first;
}

struct CoupledSample {
  std::vector<double> thresholds;  // sorted
  std::string seed_descriptor;

  std::size_t size() const { return thresholds.size(); }
  // Fraction of replicas for which the event holds at p.
  double cdf(double p) const {
    const auto it = std::lower_bound(thresholds.begin(), thresholds.end(), p);
    return static_cast<double>(it - thresholds.begin()) / static_cast<double>(thresholds.size());
  }
};

inline CoupledSample coupled_thresholds(const Event& event, const SimParams& sp, std::size_t replicas,
                                        const StreamFamily& fam, unsigned threads = 1) {
  validate(sp);
  require(replicas >= 1, "replicas must be >= 1");
  CoupledSample cs;
  cs.thresholds = run_replicas(replicas, threads, [&](std::size_t r) { return replica_threshold(event, sp, fam, r); });
  std::sort(cs.thresholds.begin(), cs.thresholds.end());
  cs.seed_descriptor = fam.descriptor();
  return cs;
}

struct QuantileEstimate {
  double level = 0.5;
  double value = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  bool flagged = false;  // interval clipped at the sample range, or solution outside [0, 1]
};

// Solves cdf(p) = level by bisection on [0, 1] to resolution `tol`, with a
// distribution-free 95% interval from binomial order statistics.
inline QuantileEstimate bisect_level(const CoupledSample& cs, double level, double tol = 1e-3) {
  require(level > 0.0 && level < 1.0, "bisect_level: level must lie in (0, 1)");
  require(!cs.thresholds.empty(), "bisect_level: empty sample");
  QuantileEstimate q;
  q.level = level;
  double a = 0.0, b = 1.0;
  if (cs.cdf(0.0) >= level) {
    b = 0.0;
    q.flagged = true;
  } else if (cs.cdf(1.0 + 1e-12) < level) {
    a = 1.0;
    q.flagged = true;
  }
  while (b - a > tol) {
    const double mid = 0.5 * (a + b);
    if (cs.cdf(mid) >= level)
      b = mid;
    else
      a = mid;
  }
  // Refine to the order statistic that the bisection bracket contains.
  const auto& th = cs.thresholds;
  const double n = static_cast<double>(th.size());
  const auto idx = [&](double i) {
    return static_cast<std::ptrdiff_t>(std::clamp(i, 0.0, n - 1.0));
  };
  const double centre = n * level;
  const double half = kZ95 * std::sqrt(n * level * (1.0 - level));
  const double lo_i = std::floor(centre - half) - 1.0, hi_i = std::ceil(centre + half);
  if (lo_i < 0.0 || hi_i > n - 1.0) q.flagged = true;
  q.value = 0.5 * (a + b);
  q.ci_lo = std::clamp(th[static_cast<std::size_t>(idx(lo_i))], 0.0, 1.0);
  q.ci_hi = std::clamp(th[static_cast<std::size_t>(idx(hi_i))], 0.0, 1.0);
  q.ci_lo = std::min(q.ci_lo, q.value);
  q.ci_hi = std::max(q.ci_hi, q.value);
  return q;
}

struct ThresholdWindow {
  std::int64_t n = 0;
  double t = 0.0;
  double alpha = 0.1;
  QuantileEstimate p_lo, p_hi;
  double length = 0.0;
  double length_ci_lo = 0.0, length_ci_hi = 0.0;  // conservative: from the endpoint intervals
  bool flagged = false;
  std::size_t replicas = 0;
  std::string seed_descriptor;
};

// I_alpha(n) = {p : P[H(n, n)] in [alpha, 1 - alpha]}.
inline ThresholdWindow threshold_window(std::int64_t n, double t, double alpha, int k, std::size_t replicas,
                                        const StreamFamily& fam, unsigned threads = 1,
                                        UpdateRule rule = UpdateRule::majority) {
  require(alpha > 0.0 && alpha < 0.5, "alpha must lie in (0, 1/2)");
  require(n >= 1, "n must be >= 1");
  SimParams sp;
  sp.t = t;
  sp.k = k;
  sp.rule = rule;
  const auto cs = coupled_thresholds(crossing_event(CrossingSpec::open_horizontal(n)), sp, replicas, fam, threads);
  ThresholdWindow w;
  w.n = n;
  w.t = t;
  w.alpha = alpha;
  w.replicas = replicas;
  w.seed_descriptor = cs.seed_descriptor;
  w.p_lo = bisect_level(cs, alpha);
  w.p_hi = bisect_level(cs, 1.0 - alpha);
  w.length = w.p_hi.value - w.p_lo.value;
  w.length_ci_lo = std::max(0.0, w.p_hi.ci_lo - w.p_lo.ci_hi);
  w.length_ci_hi = w.p_hi.ci_hi - w.p_lo.ci_lo;
  w.flagged = w.p_lo.flagged || w.p_hi.flagged;
  return w;
}

struct PcEstimate {
  std::int64_t n = 0;
  QuantileEstimate pc;
  double std_error = 0.0;  // interval half-width / 1.96
};

struct PcResult {
  double t = 0.0;
  std::vector<PcEstimate> per_n;
  std::string trend;  // "nonincreasing", "nondecreasing" or "mixed" over n
  std::string seed_descriptor;
};

// Finite-size critical point: P[H(n, n)] = 1/2.
inline PcResult estimate_pc(double t, const std::vector<std::int64_t>& n_list, int k, std::size_t replicas,
                            const StreamFamily& fam, unsigned threads = 1, UpdateRule rule = UpdateRule::majority) {
  require(!n_list.empty(), "n_list must not be empty");
  PcResult res;
  res.t = t;
  res.seed_descriptor = fam.descriptor();
  SimParams sp;
  sp.t = t;
  sp.k = k;
  sp.rule = rule;
  for (auto n : n_list) {
    require(n >= 1, "n must be >= 1");
    const auto cs = coupled_thresholds(crossing_event(CrossingSpec::open_horizontal(n)), sp, replicas,
                                       fam.child("n" + std::to_string(n)), threads);
    PcEstimate e;
    e.n = n;
    e.pc = bisect_level(cs, 0.5);
    e.std_error = (e.pc.ci_hi - e.pc.ci_lo) / (2.0 * kZ95);
    res.per_n.push_back(e);
  }
  bool up = true, down = true;
  for (std::size_t i = 1; i < res.per_n.size(); ++i) {
    up = up && res.per_n[i].pc.value >= res.per_n[i - 1].pc.value;
    down = down && res.per_n[i].pc.value <= res.per_n[i - 1].pc.value;
  }
  res.trend = res.per_n.size() < 2 ? "single" : up && down ? "flat" : up ? "nondecreasing" : down ? "nonincreasing" : "mixed";
  return res;
}

// ---------------------------------------------------------------------------
// One-arm probabilities, averaged over all centres of a W x W block.

struct LinearFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
  std::size_t points = 0;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  LinearFit f;
  f.points = x.size();
  if (x.size() < 2) return f;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0 ? 1.0 : sxy * sxy / (sxx * syy);
  return f;
}

struct OneArmRow {
  std::int64_t n = 0;
  MCEstimate estimate;
  double successes = 0.0;
  bool censored = false;
};

struct OneArmResult {
  std::vector<OneArmRow> rows;
  LinearFit fit;  // log P against n / ln n over uncensored rows
  std::int64_t block = 0;
};

// Labels the open nearest-neighbour clusters of `cfg` and returns, for each
// site, its cluster's bounding box (x_min, x_max, y_min, y_max); closed sites
// get an empty box.
inline std::vector<std::array<std::int64_t, 4>> cluster_boxes(const SpinConfig& cfg) {
  const Region& r = cfg.region();
  const auto w = r.width(), h = r.height();
  std::vector<std::int32_t> label(static_cast<std::size_t>(r.area()), -1);
  std::vector<std::array<std::int64_t, 4>> boxes;
  std::vector<std::uint32_t> queue;
  for (std::size_t i = 0; i < r.area(); ++i) {
    if (!cfg[i] || label[i] >= 0) continue;
    const auto id = static_cast<std::int32_t>(boxes.size());
    std::array<std::int64_t, 4> box{std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::min(),
                                    std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::min()};
    queue.assign(1, static_cast<std::uint32_t>(i));
    label[i] = id;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::int64_t x = queue[head] % w, y = queue[head] / w;
      box[0] = std::min(box[0], x);
      box[1] = std::max(box[1], x);
      box[2] = std::min(box[2], y);
      box[3] = std::max(box[3], y);
      const std::int64_t nx[4] = {x, x + 1, x, x - 1}, ny[4] = {y + 1, y, y - 1, y};
      for (int d = 0; d < 4; ++d) {
        if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
        const auto j = static_cast<std::size_t>(ny[d] * w + nx[d]);
        if (!cfg[j] || label[j] >= 0) continue;
        label[j] = id;
        queue.push_back(static_cast<std::uint32_t>(j));
      }
    }
    boxes.push_back(box);
  }
  std::vector<std::array<std::int64_t, 4>> out(static_cast<std::size_t>(r.area()), {0, -1, 0, -1});
  for (std::size_t i = 0; i < r.area(); ++i)
    if (label[i] >= 0) {
      auto b = boxes[static_cast<std::size_t>(label[i])];
      b[0] += r.x_min();
      b[1] += r.x_min();
      b[2] += r.y_min();
      b[3] += r.y_min();
      out[i] = b;
    }
  return out;
}

inline OneArmResult one_arm_curve(const SimParams& sp, const std::vector<std::int64_t>& n_list, std::size_t replicas,
                                  std::int64_t block, const StreamFamily& fam, unsigned threads = 1) {
  validate(sp);
  require(!n_list.empty(), "n_list must not be empty");
  require(block >= 1, "block must be >= 1");
  require(replicas >= 2, "replicas must be >= 2");
  const std::int64_t nmax = *std::max_element(n_list.begin(), n_list.end());
  for (auto n : n_list) require(n >= 1, "n must be >= 1");
  const Region centres(0, block - 1, 0, block - 1);
  const Region support = centres.padded(nmax);
  const auto per_rep = run_replicas(replicas, threads, [&](std::size_t r) {
    const auto fin = replica_final(support, sp, fam, r);
    const auto sub = restrict_to(fin, support);
    const auto boxes = cluster_boxes(sub);
    std::vector<double> frac(n_list.size(), 0.0);
    for (std::int64_t cy = 0; cy < block; ++cy)
      for (std::int64_t cx = 0; cx < block; ++cx) {
        const auto& b = boxes[support.index({cx, cy})];
        if (b[1] < b[0]) continue;
        const std::int64_t reach = std::max({cx - b[0], b[1] - cx, cy - b[2], b[3] - cy});
        for (std::size_t q = 0; q < n_list.size(); ++q)
          if (reach >= n_list[q]) frac[q] += 1.0;
      }
    for (auto& f : frac) f /= static_cast<double>(block * block);
    return frac;
  });
  OneArmResult res;
  res.block = block;
  std::vector<double> xs, ys;
  for (std::size_t q = 0; q < n_list.size(); ++q) {
    std::vector<double> col;
    col.reserve(replicas);
    for (const auto& v : per_rep) col.push_back(v[q]);
    OneArmRow row;
    row.n = n_list[q];
    row.estimate = real_estimate(col, fam.descriptor());
    row.successes = row.estimate.mean * static_cast<double>(replicas * static_cast<std::size_t>(block * block));
    row.censored = row.estimate.mean <= 0.0;
    if (!row.censored) {
      const double n = static_cast<double>(row.n);
      xs.push_back(n / std::log(n));
      ys.push_back(std::log(row.estimate.mean));
    }
    res.rows.push_back(row);
  }
  res.fit = least_squares(xs, ys);
  return res;
}

// ---------------------------------------------------------------------------

struct CorrelationGap {
  MCEstimate a, b, ab;
  double gap = 0.0;  // P[A and B] - P[A] P[B]
  double std_error = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
};

inline CorrelationGap correlation_gap(const Event& A, const Event& B, const SimParams& sp, std::size_t replicas,
                                      const StreamFamily& fam, unsigned threads = 1) {
  validate(sp);
  require(replicas >= 2, "replicas must be >= 2");
  const Region support = bounding(A.support, B.support);
  const auto pairs = run_replicas(replicas, threads, [&](std::size_t r) {
    const auto fin = replica_final(support, sp, fam, r);
    return std::array<std::uint8_t, 2>{static_cast<std::uint8_t>(A.holds(fin)), static_cast<std::uint8_t>(B.holds(fin))};
  });
  std::vector<std::uint8_t> a, b, ab;
  for (const auto& pr : pairs) {
    a.push_back(pr[0]);
    b.push_back(pr[1]);
    ab.push_back(pr[0] & pr[1]);
  }
  CorrelationGap g;
  g.a = indicator_estimate(a, fam.descriptor());
  g.b = indicator_estimate(b, fam.descriptor());
  g.ab = indicator_estimate(ab, fam.descriptor());
  g.gap = g.ab.mean - g.a.mean * g.b.mean;
  // Delta method: influence function of (mean(ab) - mean(a) mean(b)).
  std::vector<double> psi(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    psi[i] = ab[i] - g.a.mean * b[i] - g.b.mean * a[i];
  const auto e = real_estimate(psi, "");
  g.std_error = e.std_error;
  g.ci_lo = g.gap - kZ95 * g.std_error;
  g.ci_hi = g.gap + kZ95 * g.std_error;
  return g;
}

}  // namespace mdperc
