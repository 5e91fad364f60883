#pragma once

// Harris construction of majority dynamics (and the voter rule) on a finite
// window, with the two-stage thinning of dense rate-k clocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/random/poisson_distribution.hpp>

#include "mdperc/errors.hpp"
#include "mdperc/lattice.hpp"
#include "mdperc/rng.hpp"

// A 2-2 tie keeps the site's current value.  Define as 1 to keep the time-0
// value instead.
#ifndef MDPERC_TIE_KEEPS_INITIAL
#define MDPERC_TIE_KEEPS_INITIAL 0
#endif

namespace mdperc {

enum class UpdateRule { majority, voter };

inline constexpr std::uint64_t kRingBudget = std::uint64_t{1} << 30;

// A ring of the schedule: time, position in the per-site ring storage, site index.
struct ScheduledRing {
  double time;
  std::uint32_t ring;
  std::uint32_t site;
};

// Per-site sorted ring times of the dense process on [0, t] at rate k.
// Rings are stored site-major; ring ids are positions in that storage.
class ClockField {
 public:
  ClockField() = default;

  ClockField(Region region, int rate, double horizon, std::vector<std::uint32_t> offsets, std::vector<double> times)
      : region_(region), rate_(rate), horizon_(horizon), offsets_(std::move(offsets)), times_(std::move(times)) {
    require(rate >= 1, "ClockField: rate must be >= 1");
    require(horizon >= 0.0 && std::isfinite(horizon), "ClockField: horizon must be finite and >= 0");
    require(offsets_.size() == region.area() + 1, "ClockField: offsets size mismatch");
    require(offsets_.front() == 0 && offsets_.back() == times_.size(), "ClockField: offsets do not span times");
    for (std::size_t i = 0; i + 1 < offsets_.size(); ++i) {
      require(offsets_[i] <= offsets_[i + 1], "ClockField: offsets decreasing");
      for (std::uint32_t j = offsets_[i]; j < offsets_[i + 1]; ++j) {
        require(times_[j] > 0.0 && times_[j] <= horizon, "ClockField: ring time outside (0, t]");
        if (j > offsets_[i]) require(times_[j - 1] < times_[j], "ClockField: ring times not strictly increasing");
      }
    }
    build_schedule();
  }

  // Empty clocks on a region.
  static ClockField empty(Region region, int rate, double horizon) {
    return ClockField(region, rate, horizon, std::vector<std::uint32_t>(region.area() + 1, 0), {});
  }

  // From per-site time lists (each sorted, strictly increasing).
  static ClockField from_lists(Region region, int rate, double horizon, const std::vector<std::vector<double>>& lists) {
    require(lists.size() == region.area(), "ClockField::from_lists: one list per site required");
    std::vector<std::uint32_t> offsets(lists.size() + 1, 0);
    std::vector<double> times;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      times.insert(times.end(), lists[i].begin(), lists[i].end());
      offsets[i + 1] = static_cast<std::uint32_t>(times.size());
    }
    return ClockField(region, rate, horizon, std::move(offsets), std::move(times));
  }

  const Region& region() const noexcept { return region_; }
  int rate() const noexcept { return rate_; }
  double horizon() const noexcept { return horizon_; }
  std::size_t ring_count() const noexcept { return times_.size(); }

  std::span<const double> rings_at(std::size_t site_index) const noexcept {
    return {times_.data() + offsets_[site_index], times_.data() + offsets_[site_index + 1]};
  }
  std::span<const double> rings(Site s) const {
    require(region_.contains(s), "ClockField::rings: site outside region");
    return rings_at(region_.index(s));
  }
  std::uint32_t first_ring(std::size_t site_index) const noexcept { return offsets_[site_index]; }
  std::uint32_t ring_id(Site s, std::size_t k) const {
    require(k < rings(s).size(), "ClockField::ring_id: ring index out of range");
    return offsets_[region_.index(s)] + static_cast<std::uint32_t>(k);
  }
  const std::vector<ScheduledRing>& schedule() const noexcept { return schedule_; }
  const std::vector<std::uint32_t>& offsets() const noexcept { return offsets_; }
  const std::vector<double>& times() const noexcept { return times_; }

  // Region on which evolution is certified exact (set by padded_exact_window
  // or certify()).
  const std::optional<Region>& certified_core() const noexcept { return certified_; }
  void set_certified_core(std::optional<Region> core) {
    if (core) require(region_.contains(*core), "ClockField: certified core outside region");
    certified_ = core;
  }

  friend bool operator==(const ClockField& a, const ClockField& b) {
    return a.region_ == b.region_ && a.rate_ == b.rate_ && a.horizon_ == b.horizon_ && a.offsets_ == b.offsets_ &&
           a.times_ == b.times_;
  }

 private:
  void build_schedule() {
    schedule_.clear();
    schedule_.reserve(times_.size());
    for (std::size_t i = 0; i + 1 < offsets_.size(); ++i)
      for (std::uint32_t j = offsets_[i]; j < offsets_[i + 1]; ++j)
        schedule_.push_back({times_[j], j, static_cast<std::uint32_t>(i)});
    // Ties in time are broken by lexicographic (x, y) site order.
    const auto w = static_cast<std::uint32_t>(region_.width());
    std::sort(schedule_.begin(), schedule_.end(), [w](const ScheduledRing& a, const ScheduledRing& b) {
      if (a.time != b.time) return a.time < b.time;
      const std::uint32_t ax = a.site % w, bx = b.site % w;
      if (ax != bx) return ax < bx;
      return a.site < b.site;
    });
  }

  Region region_{};
  int rate_ = 1;
  double horizon_ = 0.0;
  std::vector<std::uint32_t> offsets_{0};
  std::vector<double> times_;
  std::vector<ScheduledRing> schedule_;
  std::optional<Region> certified_;
};

namespace detail {

inline void site_ring_times(std::uint64_t key, Site s, double rate_times_t, double t,
                            boost::random::poisson_distribution<int, double>& poisson, std::vector<double>& out) {
  out.clear();
  if (rate_times_t <= 0.0) return;
  RngStream g = site_stream(key, s.x, s.y);
  const int count = poisson(g);
  for (int i = 0; i < count; ++i) out.push_back(t * (1.0 - uniform01(g)));  // (0, t]
  std::sort(out.begin(), out.end());
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i] <= out[i - 1]) out[i] = std::nextafter(out[i - 1], std::numeric_limits<double>::infinity());
  while (!out.empty() && out.back() > t) out.pop_back();
}

}  // namespace detail

// Clocks of every site drawn from a per-site stream keyed by (key, x, y), so
// the field restricted to any sub-region does not depend on the region.
inline ClockField sample_clock_field_keyed(const Region& region, int k, double t, std::uint64_t key) {
  require(k >= 1, "sample_clock_field: k must be >= 1");
  require(t >= 0.0 && std::isfinite(t), "sample_clock_field: t must be finite and >= 0");
  const double mean = static_cast<double>(k) * t;
  if (mean * static_cast<double>(region.area()) > static_cast<double>(kRingBudget))
    throw ResourceError("sample_clock_field: expected ring count exceeds budget");
  std::vector<std::uint32_t> offsets(region.area() + 1, 0);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(mean * static_cast<double>(region.area()) * 1.1) + 16);
  boost::random::poisson_distribution<int, double> poisson(mean > 0.0 ? mean : 1.0);
  std::vector<double> buf;
  for (std::size_t i = 0; i < region.area(); ++i) {
    detail::site_ring_times(key, region.site(i), mean, t, poisson, buf);
    times.insert(times.end(), buf.begin(), buf.end());
    if (times.size() >= kRingBudget) throw ResourceError("sample_clock_field: ring budget exceeded");
    offsets[i + 1] = static_cast<std::uint32_t>(times.size());
  }
  return ClockField(region, k, t, std::move(offsets), std::move(times));
}

inline ClockField sample_clock_field(const Region& region, int k, double t, RngStream& rng) {
  return sample_clock_field_keyed(region, k, t, rng());
}

// Per-ring accept bits and voter neighbour choices (0..3 = N, E, S, W),
// positionally aligned with the clock field's ring ids.
struct UpdateSelection {
  std::vector<std::uint8_t> accept;
  std::vector<std::uint8_t> voter_choice;  // empty unless the rule is voter

  friend bool operator==(const UpdateSelection&, const UpdateSelection&) = default;
};

inline UpdateSelection sample_update_selection_keyed(const ClockField& clocks, UpdateRule rule, std::uint64_t key) {
  UpdateSelection sel;
  sel.accept.assign(clocks.ring_count(), 1);
  if (rule == UpdateRule::voter) sel.voter_choice.assign(clocks.ring_count(), 0);
  const int k = clocks.rate();
  const double keep = 1.0 / static_cast<double>(k);
  const Region& r = clocks.region();
  for (std::size_t i = 0; i < r.area(); ++i) {
    const auto rings = clocks.rings_at(i);
    if (rings.empty()) continue;
    const Site s = r.site(i);
    RngStream g = site_stream(key, s.x, s.y);
    const std::uint32_t base = clocks.first_ring(i);
    for (std::size_t j = 0; j < rings.size(); ++j) {
      if (k > 1) sel.accept[base + j] = uniform01(g) < keep ? 1 : 0;
      if (rule == UpdateRule::voter) sel.voter_choice[base + j] = static_cast<std::uint8_t>(g() >> 62);
    }
  }
  return sel;
}

inline UpdateSelection sample_update_selection(const ClockField& clocks, UpdateRule rule, RngStream& rng) {
  return sample_update_selection_keyed(clocks, rule, rng());
}

// Initial opinions from per-site uniforms: open iff U(x, y) < p.  The same key
// yields a configuration that is pointwise nondecreasing in p.
inline SpinConfig coupled_initial(const Region& region, double p, std::uint64_t key) {
  SpinConfig cfg(region);
  auto& v = cfg.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Site s = region.site(i);
    v[i] = site_uniform(key, s.x, s.y) < p ? 1 : 0;
  }
  return cfg;
}

struct EvolutionOutcome {
  SpinConfig final;
  std::uint64_t applied_updates = 0;
  std::optional<Region> certified_core;
};

namespace detail {

inline void check_selection(const ClockField& clocks, const UpdateSelection& sel, UpdateRule rule) {
  require(sel.accept.size() == clocks.ring_count(), "evolve: selection does not match clock field");
  if (rule == UpdateRule::voter)
    require(sel.voter_choice.size() == clocks.ring_count(), "evolve: voter choices missing");
}

// Runs the schedule in place on `values`.  Sites on the rim of the region never
// update (frozen boundary).  `on_update(ring, site, new_value)` is called after
// every applied update.
template <class OnUpdate>
std::uint64_t run_schedule(const Region& r, std::span<const ScheduledRing> schedule, const UpdateSelection& sel,
                           UpdateRule rule, std::vector<std::uint8_t>& values,
                           const std::vector<std::uint8_t>* initial, OnUpdate&& on_update) {
  const auto w = static_cast<std::int64_t>(r.width());
  const auto h = static_cast<std::int64_t>(r.height());
  const std::int64_t step[4] = {w, 1, -w, -1};
  std::uint64_t applied = 0;
  for (const ScheduledRing& ev : schedule) {
    if (!sel.accept[ev.ring]) continue;
    const auto cx = static_cast<std::int64_t>(ev.site) % w;
    const auto cy = static_cast<std::int64_t>(ev.site) / w;
    if (cx == 0 || cy == 0 || cx == w - 1 || cy == h - 1) continue;
    const auto si = static_cast<std::int64_t>(ev.site);
    std::uint8_t next;
    if (rule == UpdateRule::majority) {
      const int sum = values[static_cast<std::size_t>(si + step[0])] + values[static_cast<std::size_t>(si + step[1])] +
                      values[static_cast<std::size_t>(si + step[2])] + values[static_cast<std::size_t>(si + step[3])];
      if (sum > 2)
        next = 1;
      else if (sum < 2)
        next = 0;
      else
        next = (MDPERC_TIE_KEEPS_INITIAL && initial) ? (*initial)[ev.site] : values[ev.site];
    } else {
      next = values[static_cast<std::size_t>(si + step[sel.voter_choice[ev.ring]])];
    }
    values[ev.site] = next;
    ++applied;
    on_update(ev, next);
  }
  return applied;
}

struct NoObserver {
  void operator()(const ScheduledRing&, std::uint8_t) const noexcept {}
};

}  // namespace detail

// Deterministic evolution over [0, t].  Accepted rings are applied in global
// time order; rim sites keep their initial values.
inline EvolutionOutcome evolve(const SpinConfig& init, const ClockField& clocks, const UpdateSelection& sel,
                               UpdateRule rule) {
  require(init.region() == clocks.region(), "evolve: initial configuration and clocks on different regions");
  detail::check_selection(clocks, sel, rule);
  EvolutionOutcome out{init, 0, clocks.certified_core()};
  out.applied_updates =
      detail::run_schedule(clocks.region(), clocks.schedule(), sel, rule, out.final.mutable_values(),
                                             &init.values(), detail::NoObserver{});
  return out;
}

// Same as evolve, reusing `out` as the result buffer.
inline std::uint64_t evolve_into(const SpinConfig& init, const ClockField& clocks, const UpdateSelection& sel,
                                 UpdateRule rule, SpinConfig& out) {
  require(init.region() == clocks.region(), "evolve: initial configuration and clocks on different regions");
  detail::check_selection(clocks, sel, rule);
  if (out.region() != init.region()) out = SpinConfig(init.region());
  out.mutable_values() = init.values();
  return detail::run_schedule(clocks.region(), clocks.schedule(), sel, rule, out.mutable_values(), &init.values(),
                              detail::NoObserver{});
}

// Evolution reporting every applied update to `observer(ScheduledRing, value)`.
template <class Observer>
EvolutionOutcome evolve_observed(const SpinConfig& init, const ClockField& clocks, const UpdateSelection& sel,
                                 UpdateRule rule, Observer&& observer) {
  require(init.region() == clocks.region(), "evolve: initial configuration and clocks on different regions");
  detail::check_selection(clocks, sel, rule);
  EvolutionOutcome out{init, 0, clocks.certified_core()};
  out.applied_updates = detail::run_schedule(clocks.region(), clocks.schedule(), sel, rule, out.final.mutable_values(),
                                             &init.values(), std::forward<Observer>(observer));
  return out;
}

// Value changes of one site over [0, t]: (time, value) pairs starting with
// (0, initial value).
inline std::vector<std::pair<double, std::uint8_t>> site_trajectory(const SpinConfig& init, const ClockField& clocks,
                                                                    const UpdateSelection& sel, UpdateRule rule,
                                                                    Site x) {
  const std::size_t target = clocks.region().index(x);
  std::vector<std::pair<double, std::uint8_t>> traj{{0.0, init.at(x)}};
  evolve_observed(init, clocks, sel, rule, [&](const ScheduledRing& ev, std::uint8_t v) {
    if (ev.site == target && v != traj.back().second) traj.emplace_back(ev.time, v);
  });
  return traj;
}

// ---------------------------------------------------------------------------
// Cones of light

struct ConeOfLight {
  Site apex;
  std::vector<Site> members;  // sorted by region index
  std::int64_t radius = 0;    // max l-inf distance from apex
  bool escapes = false;       // recursion would leave the region
};

// Scratch buffers for repeated cone computations on one clock field.
class ConeWorkspace {
 public:
  void prepare(std::size_t area) {
    if (label_.size() != area) {
      label_.assign(area, 0.0);
      stamp_.assign(area, 0);
      done_.assign(area, 0);
      epoch_ = 0;
    }
    if (++epoch_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      std::fill(done_.begin(), done_.end(), 0);
      epoch_ = 1;
    }
  }
  bool seen(std::size_t i) const noexcept { return stamp_[i] == epoch_; }
  double label(std::size_t i) const noexcept { return label_[i]; }
  void set(std::size_t i, double v) noexcept {
    stamp_[i] = epoch_;
    label_[i] = v;
  }
  bool done(std::size_t i) const noexcept { return done_[i] == epoch_; }
  void finish(std::size_t i) noexcept { done_[i] = epoch_; }

 private:
  std::vector<double> label_;
  std::vector<std::uint32_t> stamp_;
  std::vector<std::uint32_t> done_;
  std::uint32_t epoch_ = 0;
};

struct PastConeResult {
  std::vector<std::uint32_t> members;  // region indices, in discovery order
  std::vector<double> need;            // latest time up to which each member's trajectory matters
  bool escapes = false;
};

// Union of the past cones of `sources` (region indices).  Each member carries
// the latest time up to which its trajectory is needed; only the latest ring
// at or below that time propagates, to all four neighbours.
inline PastConeResult past_cone_union(const ClockField& clocks, std::span<const std::uint32_t> sources,
                                      ConeWorkspace& ws) {
  const Region& r = clocks.region();
  ws.prepare(r.area());
  PastConeResult out;
  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item> heap;
  const double t = clocks.horizon();
  for (auto s : sources) {
    if (!ws.seen(s) || ws.label(s) < t) {
      ws.set(s, t);
      heap.emplace(t, s);
    }
  }
  const auto w = static_cast<std::int64_t>(r.width());
  const auto h = static_cast<std::int64_t>(r.height());
  while (!heap.empty()) {
    const auto [need, z] = heap.top();
    heap.pop();
    if (ws.done(z)) continue;
    ws.finish(z);
    out.members.push_back(z);
    out.need.push_back(need);
    const auto rings = clocks.rings_at(z);
    auto it = std::upper_bound(rings.begin(), rings.end(), need);
    if (it == rings.begin()) continue;
    const double s = *(it - 1);
    const auto zx = static_cast<std::int64_t>(z) % w;
    const auto zy = static_cast<std::int64_t>(z) / w;
    if (zx == 0 || zy == 0 || zx == w - 1 || zy == h - 1) out.escapes = true;
    const std::int64_t nx[4] = {zx, zx + 1, zx, zx - 1};
    const std::int64_t ny[4] = {zy + 1, zy, zy - 1, zy};
    for (int d = 0; d < 4; ++d) {
      if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
      const auto y = static_cast<std::uint32_t>(ny[d] * w + nx[d]);
      if (ws.done(y)) continue;
      if (!ws.seen(y) || ws.label(y) < s) {
        ws.set(y, s);
        heap.emplace(s, y);
      }
    }
  }
  return out;
}

inline ConeOfLight make_cone(const Region& r, Site apex, std::vector<std::uint32_t> idx, bool escapes) {
  std::sort(idx.begin(), idx.end());
  ConeOfLight cone{apex, {}, 0, escapes};
  cone.members.reserve(idx.size());
  for (auto i : idx) {
    const Site s = r.site(i);
    cone.members.push_back(s);
    cone.radius = std::max(cone.radius, norm_inf(s - apex));
  }
  return cone;
}

// Sites whose data can affect the trajectory of x on [0, t], over all
// selections and initial configurations.
inline ConeOfLight cone_of_light_past(const ClockField& clocks, Site x) {
  require(clocks.region().contains(x), "cone_of_light_past: site outside region");
  ConeWorkspace ws;
  const std::uint32_t src = static_cast<std::uint32_t>(clocks.region().index(x));
  auto res = past_cone_union(clocks, std::span<const std::uint32_t>(&src, 1), ws);
  return make_cone(clocks.region(), x, std::move(res.members), res.escapes);
}

// Sites whose trajectory x can affect: forward closure along increasing ring
// times.  A member's label is the earliest time from which it may depend on x.
inline ConeOfLight cone_of_light_future(const ClockField& clocks, Site x) {
  const Region& r = clocks.region();
  require(r.contains(x), "cone_of_light_future: site outside region");
  ConeWorkspace ws;
  ws.prepare(r.area());
  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  const auto src = static_cast<std::uint32_t>(r.index(x));
  ws.set(src, 0.0);
  heap.emplace(0.0, src);
  std::vector<std::uint32_t> members;
  bool escapes = false;
  const auto w = static_cast<std::int64_t>(r.width());
  const auto h = static_cast<std::int64_t>(r.height());
  while (!heap.empty()) {
    const auto [reach, z] = heap.top();
    heap.pop();
    if (ws.done(z)) continue;
    ws.finish(z);
    members.push_back(z);
    const auto zx = static_cast<std::int64_t>(z) % w;
    const auto zy = static_cast<std::int64_t>(z) / w;
    if (zx == 0 || zy == 0 || zx == w - 1 || zy == h - 1) escapes = true;
    const std::int64_t nx[4] = {zx, zx + 1, zx, zx - 1};
    const std::int64_t ny[4] = {zy + 1, zy, zy - 1, zy};
    for (int d = 0; d < 4; ++d) {
      if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
      const auto y = static_cast<std::uint32_t>(ny[d] * w + nx[d]);
      if (ws.done(y)) continue;
      const auto rings = clocks.rings_at(y);
      auto it = std::lower_bound(rings.begin(), rings.end(), reach);
      if (it == rings.end()) continue;
      if (!ws.seen(y) || *it < ws.label(y)) {
        ws.set(y, *it);
        heap.emplace(*it, y);
      }
    }
  }
  return make_cone(r, x, std::move(members), escapes);
}

inline std::vector<std::uint32_t> region_indices(const Region& outer, const Region& inner) {
  require(outer.contains(inner), "region_indices: inner region not contained");
  std::vector<std::uint32_t> idx;
  idx.reserve(inner.area());
  for (std::int64_t y = inner.y_min(); y <= inner.y_max(); ++y)
    for (std::int64_t x = inner.x_min(); x <= inner.x_max(); ++x)
      idx.push_back(static_cast<std::uint32_t>(outer.index({x, y})));
  return idx;
}

// True iff every past cone of a site of `core` stays inside the clock region
// without needing a rim site to update.
inline bool core_is_certified(const ClockField& clocks, const Region& core) {
  if (!clocks.region().contains(core)) return false;
  ConeWorkspace ws;
  const auto src = region_indices(clocks.region(), core);
  return !past_cone_union(clocks, src, ws).escapes;
}

// The rings that can influence the time-t values on `support`: rings of
// union-cone members at or before the member's need time, in schedule order.
// Replaying only these reproduces evolve exactly on `support`.
struct RestrictedSchedule {
  Region region;
  Region support;
  std::vector<ScheduledRing> rings;
  std::vector<std::uint32_t> sites;  // union-cone members, sorted
  bool escapes = false;
};

inline RestrictedSchedule restrict_schedule(const ClockField& clocks, const Region& support) {
  require(clocks.region().contains(support), "restrict_schedule: support outside clock region");
  ConeWorkspace ws;
  const auto src = region_indices(clocks.region(), support);
  auto cone = past_cone_union(clocks, src, ws);
  RestrictedSchedule out{clocks.region(), support, {}, {}, cone.escapes};
  std::vector<double> need(clocks.region().area(), -1.0);
  for (std::size_t i = 0; i < cone.members.size(); ++i) need[cone.members[i]] = cone.need[i];
  for (const ScheduledRing& ev : clocks.schedule())
    if (ev.time <= need[ev.site]) out.rings.push_back(ev);
  out.sites = std::move(cone.members);
  std::sort(out.sites.begin(), out.sites.end());
  return out;
}

// Evolution of `values` (laid out on the clock region) along a restricted
// schedule; values off the support are not meaningful afterwards.
inline std::uint64_t evolve_restricted(const RestrictedSchedule& rs, const UpdateSelection& sel, UpdateRule rule,
                                       std::vector<std::uint8_t>& values,
                                       const std::vector<std::uint8_t>* initial = nullptr) {
  require(values.size() == rs.region.area(), "evolve_restricted: value count does not match region");
  return detail::run_schedule(rs.region, rs.rings, sel, rule, values, initial, detail::NoObserver{});
}

// Largest centred shrink of the region whose cones are certified.
inline std::optional<Region> certify(const ClockField& clocks) {
  const Region& r = clocks.region();
  const std::int64_t max_shrink = (std::min(r.width(), r.height()) - 1) / 2;
  std::int64_t lo = 0, hi = max_shrink + 1;  // find smallest shrink that works
  auto shrunk = [&](std::int64_t m) { return Region(r.x_min() + m, r.x_max() - m, r.y_min() + m, r.y_max() - m); };
  if (!core_is_certified(clocks, shrunk(max_shrink))) return std::nullopt;
  hi = max_shrink;
  while (lo < hi) {
    const std::int64_t mid = (lo + hi) / 2;
    if (core_is_certified(clocks, shrunk(mid)))
      hi = mid;
    else
      lo = mid + 1;
  }
  return shrunk(lo);
}

struct PaddedWindow {
  ClockField clocks;
  std::int64_t margin = 0;
};

inline std::int64_t default_margin_cap(const Region& core, int k, double t) {
  const auto kt = static_cast<std::int64_t>(std::ceil(t * static_cast<double>(k)));
  const auto log_area = static_cast<std::int64_t>(std::ceil(std::log2(static_cast<double>(core.area()))));
  return 64 * std::max<std::int64_t>(1, kt) + log_area;
}

// Clocks on core padded by a margin grown until every past cone of a core
// site stays strictly inside.  Site clocks are keyed by coordinates, so
// growing the window adds new sites and leaves existing rings untouched.
inline PaddedWindow padded_exact_window_keyed(const Region& core, int k, double t, std::uint64_t key,
                                             std::int64_t margin_init, std::optional<std::int64_t> margin_cap = {}) {
  require(margin_init >= 1, "padded_exact_window: margin_init must be >= 1");
  const std::int64_t cap = margin_cap.value_or(default_margin_cap(core, k, t));
  std::int64_t m = margin_init;
  ConeWorkspace ws;
  for (;;) {
    const Region window = core.padded(m);
    ClockField clocks = sample_clock_field_keyed(window, k, t, key);
    if (t == 0.0 || clocks.ring_count() == 0) {
      clocks.set_certified_core(core);
      return {std::move(clocks), m};
    }
    const auto src = region_indices(window, core);
    if (!past_cone_union(clocks, src, ws).escapes) {
      clocks.set_certified_core(core);
      return {std::move(clocks), m};
    }
    if (m >= cap) throw ResourceError("padded_exact_window: margin cap exceeded");
    m = std::min(cap, m + std::max<std::int64_t>(2, m / 2));
  }
}

inline PaddedWindow padded_exact_window(const Region& core, int k, double t, RngStream& rng, std::int64_t margin_init,
                                        std::optional<std::int64_t> margin_cap = {}) {
  return padded_exact_window_keyed(core, k, t, rng(), margin_init, margin_cap);
}

// ---------------------------------------------------------------------------
// Fixture format: `clocks k t x_min x_max y_min y_max`, then `x y t1 t2 ...`
// for every site with at least one ring; times with 17 significant digits.

inline void write_clock_field(std::ostream& os, const ClockField& c) {
  const Region& r = c.region();
  const auto old_prec = os.precision(17);
  os << "clocks " << c.rate() << ' ' << c.horizon() << ' ' << r.x_min() << ' ' << r.x_max() << ' ' << r.y_min()
     << ' ' << r.y_max() << '\n';
  for (std::size_t i = 0; i < r.area(); ++i) {
    const auto rings = c.rings_at(i);
    if (rings.empty()) continue;
    const Site s = r.site(i);
    os << s.x << ' ' << s.y;
    for (double v : rings) os << ' ' << v;
    os << '\n';
  }
  os.precision(old_prec);
}

inline ClockField read_clock_field(std::istream& is) {
  std::string tag;
  int k = 0;
  double t = 0;
  std::int64_t x0, x1, y0, y1;
  if (!(is >> tag >> k >> t >> x0 >> x1 >> y0 >> y1) || tag != "clocks")
    throw ContractViolation("read_clock_field: bad header");
  Region r(x0, x1, y0, y1);
  std::vector<std::vector<double>> lists(r.area());
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::int64_t x, y;
    if (!(ls >> x >> y) || !r.contains({x, y})) throw ContractViolation("read_clock_field: bad site line");
    auto& list = lists[r.index({x, y})];
    double v;
    while (ls >> v) list.push_back(v);
  }
  return ClockField::from_lists(r, k, t, lists);
}

}  // namespace mdperc
