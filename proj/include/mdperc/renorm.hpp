#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "mdperc/errors.hpp"
#include "mdperc/estimators.hpp"
#include "mdperc/events.hpp"
#include "mdperc/lattice.hpp"
#include "mdperc/replicas.hpp"
#include "mdperc/rng.hpp"

namespace mdperc {

// zeta(s) for s > 1: partial sum up to N - 1 plus the Euler-Maclaurin tail.
inline double zeta_euler_maclaurin(double s, long N = 1000) {
  require(s > 1.0, "zeta: s must be > 1");
  double sum = 0.0;
  for (long n = N - 1; n >= 1; --n) sum += std::pow(static_cast<double>(n), -s);
  const double x = static_cast<double>(N);
  const double t0 = std::pow(x, 1.0 - s) / (s - 1.0);
  const double t1 = 0.5 * std::pow(x, -s);
  const double t2 = s / 12.0 * std::pow(x, -s - 1.0);
  const double t3 = -s * (s + 1.0) * (s + 2.0) / 720.0 * std::pow(x, -s - 3.0);
  return sum + t0 + t1 + t2 + t3;
}

inline double zeta_three_halves() {
  static const double z = zeta_euler_maclaurin(1.5);
  return z;
}

inline double scale_growth(int k) { return 2.0 * (1.0 + std::pow(static_cast<double>(k + 5), -1.5)); }

struct ScaleSequence {
  double L1 = 1.0;
  std::vector<double> scales;  // scales[k - 1] = L_k

  int kmax() const noexcept { return static_cast<int>(scales.size()); }
  double L(int k) const {
    require(k >= 1 && k <= kmax(), "ScaleSequence: level out of range");
    return scales[static_cast<std::size_t>(k - 1)];
  }
};

// Largest relative violation of L1 2^(k-1) <= L_k <= e^zeta(3/2) L1 2^(k-1).
inline double scale_bound_violation(const ScaleSequence& seq) {
  const double ez = std::exp(zeta_three_halves());
  double worst = 0.0;
  for (int k = 1; k <= seq.kmax(); ++k) {
    const double base = seq.L1 * std::ldexp(1.0, k - 1);
    const double lk = seq.L(k);
    worst = std::max(worst, (base - lk) / base);
    worst = std::max(worst, (lk - ez * base) / (ez * base));
  }
  return worst;
}

inline ScaleSequence scale_sequence(double L1, int kmax) {
  require(std::isfinite(L1) && L1 >= 1.0, "scale_sequence: L1 must be >= 1");
  require(kmax >= 1, "scale_sequence: kmax must be >= 1");
  ScaleSequence seq;
  seq.L1 = L1;
  seq.scales.reserve(static_cast<std::size_t>(kmax));
  seq.scales.push_back(L1);
  for (int k = 1; k < kmax; ++k) {
    const double next = scale_growth(k) * seq.scales.back();
    if (!std::isfinite(next) || next > 1e300) throw ResourceError("scale_sequence: L_kmax overflows");
    seq.scales.push_back(next);
  }
  require(scale_bound_violation(seq) <= 1e-9, "scale_sequence: scale bounds violated");
  return seq;
}

// ---------------------------------------------------------------------------
// Coverings.  C_x(L) = x + [0, a)^2 and D_x(L) = x + [-a, 2a)^2, a = ceil(L).

struct Covering {
  int k = 1;
  double Lk = 0.0, Lk1 = 0.0;
  std::int64_t a = 0, b = 0, spacing = 0;
  std::vector<Site> core_points;
  std::vector<Site> shell_points;
  bool exhaustive = false;  // property checks were exhaustive rather than sampled
  bool covers_core = false;        // (i)
  bool shell_outside = false;      // (ii)
  bool covers_boundary = false;    // (iii)
  bool core_inside = false;        // D_{x_i}(L_k) within D_0(L_{k+1})
  bool shell_avoids_core = false;  // D_{y_j}(L_k) disjoint from C_0(L_{k+1})
  std::int64_t min_separation = 0;
  double required_separation = 0.0;
  std::size_t pair_count() const noexcept { return core_points.size() * shell_points.size(); }
  bool verified() const noexcept {
    return covers_core && shell_outside && covers_boundary && core_inside && shell_avoids_core &&
           static_cast<double>(min_separation) >= required_separation;
  }
};

namespace detail {

// Half-open integer boxes [x0, x0 + w) x [y0, y0 + w).
struct HBox {
  std::int64_t x0, y0, w;
  bool contains(Site s) const noexcept { return s.x >= x0 && s.x < x0 + w && s.y >= y0 && s.y < y0 + w; }
};

inline HBox c_box(Site x, std::int64_t a) { return {x.x, x.y, a}; }
inline HBox d_box(Site x, std::int64_t a) { return {x.x - a, x.y - a, 3 * a}; }

inline std::int64_t axis_gap(std::int64_t u1, std::int64_t w1, std::int64_t u2, std::int64_t w2) {
  if (u1 + w1 <= u2) return u2 - (u1 + w1 - 1);
  if (u2 + w2 <= u1) return u1 - (u2 + w2 - 1);
  return 0;
}

// l-infinity distance between the site sets of two boxes.
inline std::int64_t box_distance(const HBox& p, const HBox& q) {
  return std::max(axis_gap(p.x0, p.w, q.x0, q.w), axis_gap(p.y0, p.w, q.y0, q.w));
}

inline std::vector<std::int64_t> covering_positions(std::int64_t from, std::int64_t to, std::int64_t step) {
  std::vector<std::int64_t> out;
  for (std::int64_t v = from;; v += step) {
    out.push_back(std::min(v, to));
    if (v >= to) break;
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

inline Covering build_covering(const ScaleSequence& seq, int k, std::uint64_t check_seed = 1,
                               std::size_t samples = 20000) {
  require(k >= 1 && k + 1 <= seq.kmax(), "build_covering: need 1 <= k and k + 1 <= kmax");
  Covering cov;
  cov.k = k;
  cov.Lk = seq.L(k);
  cov.Lk1 = seq.L(k + 1);
  cov.spacing = static_cast<std::int64_t>(std::floor(cov.Lk));
  require(cov.spacing >= 1, "build_covering: spacing floor(L_k) is zero");
  const std::int64_t a = box_side(cov.Lk), b = box_side(cov.Lk1), s = cov.spacing;
  cov.a = a;
  cov.b = b;
  for (auto y : detail::covering_positions(0, b - a, s))
    for (auto x : detail::covering_positions(0, b - a, s)) cov.core_points.push_back({x, y});
  // Shell: a ring of boxes just outside D_0 = [-b, 2b)^2 on each side.
  const auto along = detail::covering_positions(-b, 2 * b - a, s);
  for (auto v : along) cov.shell_points.push_back({v, 2 * b});
  for (auto v : along) cov.shell_points.push_back({2 * b, v});
  for (auto v : along) cov.shell_points.push_back({v, -b - a});
  for (auto v : along) cov.shell_points.push_back({-b - a, v});

  const detail::HBox c0{0, 0, b}, d0{-b, -b, 3 * b};
  auto in_core_boxes = [&](Site z) {
    return std::any_of(cov.core_points.begin(), cov.core_points.end(),
                       [&](Site x) { return detail::c_box(x, a).contains(z); });
  };
  auto in_shell_boxes = [&](Site z) {
    return std::any_of(cov.shell_points.begin(), cov.shell_points.end(),
                       [&](Site y) { return detail::c_box(y, a).contains(z); });
  };
  // Outer vertex boundary of Z^2 \ D_0: sites outside D_0 with a neighbour in it.
  auto boundary_site = [&](std::int64_t i) -> Site {
    const std::int64_t side = i / (3 * b), off = -b + i % (3 * b);
    switch (side) {
      case 0: return {off, 2 * b};
      case 1: return {2 * b, off};
      case 2: return {off, -b - 1};
      default: return {-b - 1, off};
    }
  };
  cov.exhaustive = static_cast<std::int64_t>(std::floor(cov.Lk1)) <= 512;
  cov.covers_core = cov.shell_outside = cov.covers_boundary = true;
  if (cov.exhaustive) {
    for (std::int64_t y = 0; y < b && cov.covers_core; ++y)
      for (std::int64_t x = 0; x < b; ++x)
        if (!in_core_boxes({x, y})) {
          cov.covers_core = false;
          break;
        }
    for (Site y : cov.shell_points) {
      for (std::int64_t v = 0; v < a && cov.shell_outside; ++v)
        for (std::int64_t u = 0; u < a; ++u)
          if (d0.contains({y.x + u, y.y + v})) {
            cov.shell_outside = false;
            break;
          }
    }
    for (std::int64_t i = 0; i < 12 * b; ++i)
      if (!in_shell_boxes(boundary_site(i))) {
        cov.covers_boundary = false;
        break;
      }
  } else {
    RngStream g(derive_key(check_seed, static_cast<std::uint64_t>(k)));
    for (std::size_t q = 0; q < samples; ++q) {
      const Site z{uniform_int(g, 0, b - 1), uniform_int(g, 0, b - 1)};
      cov.covers_core = cov.covers_core && in_core_boxes(z);
      const Site y = cov.shell_points[static_cast<std::size_t>(
          uniform_int(g, 0, static_cast<std::int64_t>(cov.shell_points.size()) - 1))];
      cov.shell_outside = cov.shell_outside && !d0.contains({y.x + uniform_int(g, 0, a - 1), y.y + uniform_int(g, 0, a - 1)});
      cov.covers_boundary = cov.covers_boundary && in_shell_boxes(boundary_site(uniform_int(g, 0, 12 * b - 1)));
    }
  }
  cov.core_inside = std::all_of(cov.core_points.begin(), cov.core_points.end(), [&](Site x) {
    const auto d = detail::d_box(x, a);
    return d.x0 >= d0.x0 && d.y0 >= d0.y0 && d.x0 + d.w <= d0.x0 + d0.w && d.y0 + d.w <= d0.y0 + d0.w;
  });
  cov.shell_avoids_core = std::all_of(cov.shell_points.begin(), cov.shell_points.end(),
                                      [&](Site y) { return detail::box_distance(detail::d_box(y, a), c0) > 0; });
  cov.min_separation = std::numeric_limits<std::int64_t>::max();
  for (Site x : cov.core_points)
    for (Site y : cov.shell_points)
      cov.min_separation = std::min(cov.min_separation, detail::box_distance(detail::d_box(x, a), detail::d_box(y, a)));
  cov.required_separation = 2.0 * std::pow(static_cast<double>(k + 5), -1.5) * cov.Lk - 2.0;
  return cov;
}

// Region every event of the cascade at level k reads: D_0(L_{k+1}) and all
// D_{y_j}(L_k), padded by one.
inline Region cascade_region(const Covering& cov) {
  const std::int64_t lo = -cov.b - 2 * cov.a - 1, hi = 2 * cov.b + 3 * cov.a;
  return Region(lo, hi, lo, hi);
}

struct CascadeOutcome {
  bool a0 = false;
  bool some_core = false;
  bool some_shell = false;
  bool holds() const noexcept { return !a0 || (some_core && some_shell); }
};

// A_0(L_{k+1}) implies some A_{x_i}(L_k) and some A_{y_j}(L_k).
template <SiteView V>
CascadeOutcome cascade_outcome(const V& view, const Covering& cov, StampSet& visited, std::vector<Site>& stack) {
  require(view.window().contains(cascade_region(cov)), "cascade_check: region too small for the covering");
  if (visited.window() != cascade_region(cov)) visited.reset(cascade_region(cov));
  CascadeOutcome out;
  out.a0 = annulus_crossing(view, {0, 0}, cov.Lk1, visited, stack);
  if (!out.a0) return out;
  for (Site x : cov.core_points)
    if (annulus_crossing(view, x, cov.Lk, visited, stack)) {
      out.some_core = true;
      break;
    }
  for (Site y : cov.shell_points)
    if (annulus_crossing(view, y, cov.Lk, visited, stack)) {
      out.some_shell = true;
      break;
    }
  return out;
}

inline bool cascade_check(const SpinConfig& cfg, const ScaleSequence& seq, int k) {
  const auto cov = build_covering(seq, k);
  StampSet visited(cascade_region(cov));
  std::vector<Site> stack;
  return cascade_outcome(ConfigView{&cfg}, cov, visited, stack).holds();
}

struct CascadeSweep {
  std::size_t configs = 0;
  std::size_t a0_count = 0;
  std::size_t violations = 0;
};

// Independent Bernoulli(p) fields (t = 0), evaluated lazily.
inline CascadeSweep cascade_sweep(const Covering& cov, double p, std::size_t configs, const StreamFamily& fam,
                                  unsigned threads = 1) {
  require(p >= 0.0 && p <= 1.0, "p must lie in [0, 1]");
  const Region reg = cascade_region(cov);
  const auto outs = run_replicas(configs, threads, [&](std::size_t r) {
    thread_local StampSet visited;
    thread_local std::vector<Site> stack;
    const HashedBernoulliView view{fam.key(r, Purpose::initial), p, reg};
    return cascade_outcome(view, cov, visited, stack);
  });
  CascadeSweep s;
  s.configs = configs;
  for (const auto& o : outs) {
    s.a0_count += o.a0;
    s.violations += !o.holds();
  }
  return s;
}

// ---------------------------------------------------------------------------

struct AuditRow {
  int level = 1;
  double Lk = 0.0;
  MCEstimate pk;
  std::size_t n_pairs = 0;
  double corr_hat = 0.0;
  double corr_stderr = 0.0;
  double rhs = 0.0;
  std::string satisfied = "NA";  // "true" / "false" / "NA" (no next level)
};

struct RecursionAudit {
  double p = 0.0, t = 0.0;
  std::vector<AuditRow> rows;
  bool all_satisfied() const {
    return std::all_of(rows.begin(), rows.end(), [](const AuditRow& r) { return r.satisfied != "false"; });
  }
};

// Rows for levels 1..levels + 1; row k compares p_hat_{k+1} with
// N_pairs (p_hat_k^2 + corr_hat_k), corr_hat_k measured at the covering's
// closest (x_i, y_j) pair.
inline RecursionAudit recursion_audit(const SimParams& sp, double L1, int levels, std::size_t replicas,
                                      const StreamFamily& fam, unsigned threads = 1) {
  validate(sp);
  require(levels >= 1, "levels must be >= 1");
  require(replicas >= 2, "replicas must be >= 2");
  const auto seq = scale_sequence(L1, levels + 2);
  RecursionAudit audit;
  audit.p = sp.p;
  audit.t = sp.t;
  for (int k = 1; k <= levels + 1; ++k) {
    AuditRow row;
    row.level = k;
    row.Lk = seq.L(k);
    row.pk = mc_event_probability(annulus_event_of({0, 0}, row.Lk), sp, replicas, fam.child("p" + std::to_string(k)),
                                  threads);
    audit.rows.push_back(row);
  }
  for (int k = 1; k <= levels; ++k) {
    auto& row = audit.rows[static_cast<std::size_t>(k - 1)];
    const auto cov = build_covering(seq, k);
    row.n_pairs = cov.pair_count();
    Site bx{}, by{};
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (Site x : cov.core_points)
      for (Site y : cov.shell_points) {
        const auto d = detail::box_distance(detail::d_box(x, cov.a), detail::d_box(y, cov.a));
        if (d < best) {
          best = d;
          bx = x;
          by = y;
        }
      }
    const auto g = correlation_gap(annulus_event_of(bx, row.Lk), annulus_event_of(by, row.Lk), sp, replicas,
                                   fam.child("corr" + std::to_string(k)), threads);
    row.corr_hat = g.gap;
    row.corr_stderr = g.std_error;
    row.rhs = static_cast<double>(row.n_pairs) * (row.pk.mean * row.pk.mean + row.corr_hat);
    const auto& next = audit.rows[static_cast<std::size_t>(k)].pk;
    row.satisfied = next.mean - kZ95 * next.std_error <= row.rhs ? "true" : "false";
  }
  return audit;
}

}  // namespace mdperc
