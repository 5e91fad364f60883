#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mdperc/errors.hpp"
#include "mdperc/graphical.hpp"
#include "mdperc/lattice.hpp"
#include "mdperc/rng.hpp"

namespace mdperc {

enum class Orientation { horizontal, vertical };

struct CrossingSpec {
  std::int64_t n = 1;
  double lambda = 1.0;
  Orientation orientation = Orientation::horizontal;
  std::uint8_t state = 1;
  Connectivity connectivity = Connectivity::nearest;

  std::int64_t long_side() const { return static_cast<std::int64_t>(std::floor(lambda * static_cast<double>(n))); }

  // [1, floor(lambda n)] x [1, n] for horizontal, its transpose for vertical.
  Region rectangle() const {
    require(n >= 1, "CrossingSpec: n must be >= 1");
    require(lambda > 0.0 && long_side() >= 1, "CrossingSpec: floor(lambda n) must be >= 1");
    return orientation == Orientation::horizontal ? Region::rectangle(long_side(), n) : Region::rectangle(n, long_side());
  }

  static CrossingSpec open_horizontal(std::int64_t n, double lambda = 1.0) {
    return {n, lambda, Orientation::horizontal, 1, Connectivity::nearest};
  }
  static CrossingSpec closed_star_vertical(std::int64_t n, double lambda = 1.0) {
    return {n, lambda, Orientation::vertical, 0, Connectivity::star};
  }
};

namespace detail {

// BFS over the rectangle `rect` of a dense field laid out on `reg`, from the
// low side to the high side along the crossing direction.
inline bool rect_crossing(const std::vector<std::uint8_t>& values, const Region& reg, const Region& rect,
                          bool horizontal, std::uint8_t state, Connectivity c, std::vector<std::uint32_t>& queue,
                          std::vector<std::uint8_t>& seen) {
  const auto w = rect.width(), h = rect.height();
  seen.assign(static_cast<std::size_t>(rect.area()), 0);
  queue.clear();
  const auto rw = reg.width();
  const std::int64_t base = (rect.y_min() - reg.y_min()) * rw + (rect.x_min() - reg.x_min());
  auto value = [&](std::int64_t lx, std::int64_t ly) { return values[static_cast<std::size_t>(base + ly * rw + lx)]; };
  const std::int64_t starts = horizontal ? h : w;
  for (std::int64_t i = 0; i < starts; ++i) {
    const std::int64_t lx = horizontal ? 0 : i, ly = horizontal ? i : 0;
    if (value(lx, ly) != state) continue;
    const auto li = static_cast<std::uint32_t>(ly * w + lx);
    seen[li] = 1;
    queue.push_back(li);
  }
  const int deg = degree(c);
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::int64_t lx = queue[head] % w, ly = queue[head] / w;
    if (horizontal ? lx == w - 1 : ly == h - 1) return true;
    for (int d = 0; d < deg; ++d) {
      const std::int64_t nx = lx + kNeighborOffsets[static_cast<std::size_t>(d)].x;
      const std::int64_t ny = ly + kNeighborOffsets[static_cast<std::size_t>(d)].y;
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const auto li = static_cast<std::uint32_t>(ny * w + nx);
      if (seen[li] || value(nx, ny) != state) continue;
      seen[li] = 1;
      queue.push_back(li);
    }
  }
  return false;
}

}  // namespace detail

// Reusable buffers for repeated crossing queries.
struct CrossingWorkspace {
  std::vector<std::uint32_t> queue;
  std::vector<std::uint8_t> seen;
};

inline bool crossing(const SpinConfig& cfg, const CrossingSpec& spec, CrossingWorkspace& ws) {
  const Region rect = spec.rectangle();
  require(cfg.region().contains(rect), "crossing: configuration region does not contain the rectangle");
  return detail::rect_crossing(cfg.values(), cfg.region(), rect, spec.orientation == Orientation::horizontal,
                               spec.state, spec.connectivity, ws.queue, ws.seen);
}

inline bool crossing(const SpinConfig& cfg, const CrossingSpec& spec) {
  CrossingWorkspace ws;
  return crossing(cfg, spec, ws);
}

// (open horizontal crossing of R_n, closed vertical star crossing of R_n).
inline std::pair<bool, bool> dual_indicator(const SpinConfig& cfg, std::int64_t n) {
  CrossingWorkspace ws;
  return {crossing(cfg, CrossingSpec::open_horizontal(n), ws), crossing(cfg, CrossingSpec::closed_star_vertical(n), ws)};
}

namespace detail {

// Path of `state` sites under `c` through layers lo..hi (l-inf norm about
// the origin), from a site c-adjacent to B(0, lo - 1) to the layer |z| = hi.
// Under nearest-neighbour adjacency the corners of layer lo do not touch the
// inner ball and are not starting points.
inline bool layer_path(const SpinConfig& cfg, std::int64_t lo, std::int64_t hi, std::uint8_t state, Connectivity c) {
  const Region box = Region::ball({0, 0}, hi);
  require(cfg.region().contains(box), "annulus event: configuration region too small");
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(box.area()), 0);
  std::vector<Site> queue;
  for (Site s : ball_boundary({0, 0}, lo)) {
    const bool corner = (s.x == lo || s.x == -lo) && (s.y == lo || s.y == -lo);
    if (cfg.at(s) != state || (corner && c == Connectivity::nearest)) continue;
    seen[box.index(s)] = 1;
    queue.push_back(s);
  }
  const int deg = degree(c);
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const Site s = queue[head];
    if (norm_inf(s) == hi) return true;
    for (int d = 0; d < deg; ++d) {
      const Site nb = s + kNeighborOffsets[static_cast<std::size_t>(d)];
      const auto r = norm_inf(nb);
      if (r < lo || r > hi) continue;
      const auto li = box.index(nb);
      if (seen[li] || cfg.at(nb) != state) continue;
      seen[li] = 1;
      queue.push_back(nb);
    }
  }
  return false;
}

}  // namespace detail

// Circuit of `state` sites under `c` in the annulus m < |z| <= 3m around the
// origin, separating the hole from infinity.  Decided by the absence of a
// dual crossing of the annulus.
inline bool circuit_exists(const SpinConfig& cfg, std::int64_t m, std::uint8_t state, Connectivity c) {
  require(m >= 1, "circuit_exists: m must be >= 1");
  require(cfg.region().contains(Region::ball({0, 0}, 3 * m)), "circuit_exists: region must contain B(0, 3m)");
  return !detail::layer_path(cfg, m + 1, 3 * m, static_cast<std::uint8_t>(1 - state), dual(c));
}

// Path of `state` sites crossing the annulus r_in <= |z| <= r_out, from the
// inner ball B(0, r_in - 1) to the layer |z| = r_out.
inline bool arm_event(const SpinConfig& cfg, std::int64_t r_in, std::int64_t r_out, std::uint8_t state,
                      Connectivity c) {
  require(r_in >= 1 && r_in < r_out, "arm_event: need 1 <= r_in < r_out");
  require(cfg.region().contains(Region::ball({0, 0}, r_out)), "arm_event: region must contain B(0, r_out)");
  return detail::layer_path(cfg, r_in, r_out, state, c);
}

// ---------------------------------------------------------------------------
// Annulus crossings A_x(L): C_x = x + [0, a)^2, D_x = x + [-a, 2a)^2, a = ceil(L).

struct Box {
  std::int64_t x_min, x_max, y_min, y_max;  // closed
  bool contains(Site s) const noexcept { return s.x >= x_min && s.x <= x_max && s.y >= y_min && s.y <= y_max; }
  Region region() const { return Region(x_min, x_max, y_min, y_max); }
};

inline std::int64_t box_side(double L) {
  require(L > 0.0 && std::isfinite(L), "annulus: L must be positive and finite");
  return static_cast<std::int64_t>(std::ceil(L));
}
inline Box core_box(Site x, double L) {
  const auto a = box_side(L);
  return {x.x, x.x + a - 1, x.y, x.y + a - 1};
}
inline Box outer_box(Site x, double L) {
  const auto a = box_side(L);
  return {x.x - a, x.x + 2 * a - 1, x.y - a, x.y + 2 * a - 1};
}

// Visited marks over a fixed window, cleared in O(1) by bumping an epoch.
class StampSet {
 public:
  explicit StampSet(Region window = Region(0, 0, 0, 0)) { reset(window); }
  void reset(Region window) {
    window_ = window;
    stamp_.assign(static_cast<std::size_t>(window.area()), 0);
    epoch_ = 0;
  }
  const Region& window() const noexcept { return window_; }
  void clear() {
    if (++epoch_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      epoch_ = 1;
    }
  }
  bool insert(Site s) {
    auto& v = stamp_[window_.index(s)];
    if (v == epoch_) return false;
    v = epoch_;
    return true;
  }

 private:
  Region window_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
};

// A read-only binary field on a window; `open(s)` for s in `window()`.
template <class V>
concept SiteView = requires(const V& v, Site s) {
  { v.open(s) } -> std::convertible_to<bool>;
  { v.window() } -> std::convertible_to<Region>;
};

struct ConfigView {
  const SpinConfig* cfg;
  bool open(Site s) const { return cfg->values()[cfg->region().index(s)] != 0; }
  Region window() const { return cfg->region(); }
};

// I.i.d. Bernoulli(p) field evaluated lazily from a key.
struct HashedBernoulliView {
  std::uint64_t key;
  double p;
  Region area;
  bool open(Site s) const { return site_uniform(key, s.x, s.y) < p; }
  Region window() const { return area; }
};

// Depth-first search from the open sites of C_x for an open site outside D_x.
template <SiteView V>
bool annulus_crossing(const V& view, Site x, double L, StampSet& visited, std::vector<Site>& stack) {
  const Box c = core_box(x, L), d = outer_box(x, L);
  const Region needed(d.x_min - 1, d.x_max + 1, d.y_min - 1, d.y_max + 1);
  require(view.window().contains(needed), "annulus_crossing: D_x(L) padded by one is not inside the region");
  require(visited.window().contains(needed), "annulus_crossing: workspace window too small");
  visited.clear();
  stack.clear();
  for (std::int64_t y = c.y_min; y <= c.y_max; ++y)
    for (std::int64_t xx = c.x_min; xx <= c.x_max; ++xx) {
      const Site s0{xx, y};
      if (!view.open(s0) || !visited.insert(s0)) continue;
      stack.push_back(s0);
      while (!stack.empty()) {
        const Site s = stack.back();
        stack.pop_back();
        for (int k = 0; k < 4; ++k) {
          const Site nb = s + kNeighborOffsets[static_cast<std::size_t>(k)];
          if (!view.open(nb)) continue;
          if (!d.contains(nb)) return true;
          if (visited.insert(nb)) stack.push_back(nb);
        }
      }
    }
  return false;
}

inline bool annulus_crossing(const SpinConfig& cfg, Site x, double L) {
  const Box d = outer_box(x, L);
  StampSet visited(Region(d.x_min - 1, d.x_max + 1, d.y_min - 1, d.y_max + 1));
  std::vector<Site> stack;
  return annulus_crossing(ConfigView{&cfg}, x, L, visited, stack);
}

// ---------------------------------------------------------------------------
// Exploration of the crossing event by cluster search from a random column.

enum class GuardNorm { l1, linf };

struct ExplorationOptions {
  Orientation orientation = Orientation::horizontal;  // vertical: closed star crossing, rows instead of columns
  std::optional<std::int64_t> guard_radius;           // default ceil(ln n)
  GuardNorm guard_norm = GuardNorm::l1;

  std::int64_t radius_for(std::int64_t n) const {
    return guard_radius.value_or(static_cast<std::int64_t>(std::ceil(std::log(static_cast<double>(n)))));
  }
};

// Past cones of the sites of R_n on one clock field.
class ConeTable {
 public:
  ConeTable(const ClockField& clocks, std::int64_t n) : region_(clocks.region()), n_(n) {
    const Region rn = Region::rectangle(n, n);
    require(region_.contains(rn), "ConeTable: clock region does not contain R_n");
    require(clocks.certified_core() && clocks.certified_core()->contains(rn),
            "ConeTable: clock field does not certify R_n");
    offsets_.reserve(static_cast<std::size_t>(rn.area()) + 1);
    offsets_.push_back(0);
    l1_.reserve(static_cast<std::size_t>(rn.area()));
    linf_.reserve(static_cast<std::size_t>(rn.area()));
    ConeWorkspace ws;
    for (std::size_t i = 0; i < rn.area(); ++i) {
      const Site x = rn.site(i);
      const auto src = static_cast<std::uint32_t>(region_.index(x));
      auto res = past_cone_union(clocks, std::span<const std::uint32_t>(&src, 1), ws);
      std::int64_t l1 = 0, li = 0;
      for (auto m : res.members) {
        const Site d = region_.site(m) - x;
        l1 = std::max(l1, norm_1(d));
        li = std::max(li, norm_inf(d));
      }
      l1_.push_back(l1);
      linf_.push_back(li);
      members_.insert(members_.end(), res.members.begin(), res.members.end());
      offsets_.push_back(members_.size());
    }
    all_.assign(static_cast<std::size_t>(region_.area()), 0);
    for (auto m : members_) all_[m] = 1;
  }

  std::int64_t n() const noexcept { return n_; }
  const Region& region() const noexcept { return region_; }
  // Cone of the R_n site with R_n-local index i, as clock-region indices.
  std::span<const std::uint32_t> cone(std::size_t i) const {
    return {members_.data() + offsets_[i], members_.data() + offsets_[i + 1]};
  }
  std::int64_t l1_radius(std::size_t i) const { return l1_[i]; }
  std::int64_t linf_radius(std::size_t i) const { return linf_[i]; }
  std::int64_t max_radius(GuardNorm norm) const {
    const auto& v = norm == GuardNorm::l1 ? l1_ : linf_;
    return v.empty() ? 0 : *std::max_element(v.begin(), v.end());
  }
  // Indicator over the clock region of the union of all cones.
  const std::vector<std::uint8_t>& union_all() const noexcept { return all_; }

 private:
  Region region_;
  std::int64_t n_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> members_;
  std::vector<std::int64_t> l1_, linf_;
  std::vector<std::uint8_t> all_;
};

struct ExplorationTrace {
  bool crossing = false;
  std::int64_t x0 = 0;  // chosen column (row for the vertical variant); 0 when the guard fired
  bool guard_triggered = false;
  std::int64_t n = 0;
  Region window;                         // clock region
  std::vector<std::uint8_t> queried;     // over R_n, local row-major: time-t state requested
  std::vector<std::uint8_t> revealed;    // over `window`: union of the cones of queried sites
  std::size_t queried_count = 0;
  std::size_t revealed_count = 0;
};

inline std::int64_t column_lo(std::int64_t n) { return (n + 2) / 3; }
inline std::int64_t column_hi(std::int64_t n) { return std::max(column_lo(n), 2 * n / 3); }

namespace detail {

// Cluster search on the time-t configuration `fin` (clock-region layout)
// from the line u = x0, where u is the crossing coordinate.
inline void explore_clusters(const std::vector<std::uint8_t>& fin, const Region& reg, std::int64_t n,
                             std::int64_t x0, const ExplorationOptions& opt, ExplorationTrace& tr) {
  const bool horizontal = opt.orientation == Orientation::horizontal;
  const std::uint8_t state = horizontal ? 1 : 0;
  const Connectivity c = horizontal ? Connectivity::nearest : Connectivity::star;
  auto local = [&](std::int64_t u, std::int64_t v) -> Site { return horizontal ? Site{u, v} : Site{v, u}; };
  auto value = [&](Site s) { return fin[reg.index(s)]; };
  auto rn_index = [&](Site s) { return static_cast<std::size_t>((s.y - 1) * n + (s.x - 1)); };
  std::vector<std::uint8_t> in_cluster(static_cast<std::size_t>(n * n), 0);
  auto query = [&](Site s) {
    auto& q = tr.queried[rn_index(s)];
    if (!q) {
      q = 1;
      ++tr.queried_count;
    }
  };
  for (std::int64_t v = 1; v <= n; ++v) query(local(x0, v));
  // Every crossing meets the line u = x0, so it lies in one of the clusters
  // grown from there; each cluster is searched to exhaustion.
  const int deg = degree(c);
  bool found = false;
  std::vector<Site> queue;
  for (std::int64_t v = 1; v <= n; ++v) {
    const Site s0 = local(x0, v);
    if (value(s0) != state || in_cluster[rn_index(s0)]) continue;
    in_cluster[rn_index(s0)] = 1;
    queue.assign(1, s0);
    bool lo = false, hi = false;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Site s = queue[head];
      const std::int64_t u = horizontal ? s.x : s.y;
      lo = lo || u == 1;
      hi = hi || u == n;
      for (int d = 0; d < deg; ++d) {
        const Site nb = s + kNeighborOffsets[static_cast<std::size_t>(d)];
        if (nb.x < 1 || nb.y < 1 || nb.x > n || nb.y > n) continue;
        const auto li = rn_index(nb);
        if (in_cluster[li]) continue;
        query(nb);
        if (value(nb) == state) {
          in_cluster[li] = 1;
          queue.push_back(nb);
        }
      }
    }
    found = found || (lo && hi);
  }
  tr.crossing = found;
}

}  // namespace detail

// Runs the exploration with a given column x0 on the time-t configuration
// `fin` of the clock region; marks revealed sites from the cone table.
inline ExplorationTrace explore_with_final(const ConeTable& cones, const SpinConfig& fin, std::int64_t x0,
                                          const ExplorationOptions& opt = {}) {
  const std::int64_t n = cones.n();
  require(fin.region() == cones.region(), "explore: configuration and cone table on different regions");
  ExplorationTrace tr;
  tr.n = n;
  tr.window = cones.region();
  tr.queried.assign(static_cast<std::size_t>(n * n), 0);
  tr.revealed.assign(static_cast<std::size_t>(cones.region().area()), 0);
  if (cones.max_radius(opt.guard_norm) >= opt.radius_for(n)) {
    tr.guard_triggered = true;
    std::fill(tr.queried.begin(), tr.queried.end(), 1);
    tr.queried_count = tr.queried.size();
    tr.crossing = crossing(fin, opt.orientation == Orientation::horizontal ? CrossingSpec::open_horizontal(n)
                                                                           : CrossingSpec::closed_star_vertical(n));
  } else {
    require(x0 >= column_lo(n) && x0 <= column_hi(n), "explore: column outside [ceil(n/3), floor(2n/3)]");
    tr.x0 = x0;
    detail::explore_clusters(fin.values(), fin.region(), n, x0, opt, tr);
  }
  if (tr.guard_triggered) {
    tr.revealed = cones.union_all();
    tr.revealed_count = static_cast<std::size_t>(std::count(tr.revealed.begin(), tr.revealed.end(), 1));
    return tr;
  }
  for (std::size_t i = 0; i < tr.queried.size(); ++i) {
    if (!tr.queried[i]) continue;
    for (auto m : cones.cone(i)) {
      if (!tr.revealed[m]) {
        tr.revealed[m] = 1;
        ++tr.revealed_count;
      }
    }
  }
  return tr;
}

inline ExplorationTrace explore_crossing(const ClockField& clocks, const SpinConfig& init, const UpdateSelection& sel,
                                         std::int64_t n, RngStream& rng, const ExplorationOptions& opt = {},
                                         UpdateRule rule = UpdateRule::majority) {
  require(n >= 1, "explore_crossing: n must be >= 1");
  const ConeTable cones(clocks, n);
  const auto fin = evolve(init, clocks, sel, rule).final;
  const std::int64_t x0 = uniform_int(rng, column_lo(n), column_hi(n));
  return explore_with_final(cones, fin, x0, opt);
}

// Diagnostics dump: a header row with the trace summary, then one row per
// site of the clock window.
inline void write_trace_csv(std::ostream& os, const ExplorationTrace& tr) {
  os << "n,x0,guard_triggered,crossing\n"
     << tr.n << ',' << tr.x0 << ',' << (tr.guard_triggered ? 1 : 0) << ',' << (tr.crossing ? 1 : 0) << '\n';
  os << "site_x,site_y,queried,revealed\n";
  for (std::size_t i = 0; i < tr.revealed.size(); ++i) {
    const Site s = tr.window.site(i);
    const bool in_rn = s.x >= 1 && s.y >= 1 && s.x <= tr.n && s.y <= tr.n;
    const int q = in_rn ? tr.queried[static_cast<std::size_t>((s.y - 1) * tr.n + (s.x - 1))] : 0;
    if (!q && !tr.revealed[i]) continue;
    os << s.x << ',' << s.y << ',' << q << ',' << static_cast<int>(tr.revealed[i]) << '\n';
  }
}

}  // namespace mdperc
