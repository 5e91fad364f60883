#pragma once

// Test-side reference implementations.  They share only the data types with
// the library and are written for clarity, not speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "mdperc/graphical.hpp"
#include "mdperc/lattice.hpp"

namespace oracle {

using namespace mdperc;

struct Event {
  double time;
  Site site;
  std::size_t ring;
};

// All accepted rings in time order, rim rings dropped.
inline std::vector<Event> accepted_events(const ClockField& clocks, const UpdateSelection& sel) {
  std::vector<Event> ev;
  const Region& r = clocks.region();
  for (std::int64_t y = r.y_min(); y <= r.y_max(); ++y)
    for (std::int64_t x = r.x_min(); x <= r.x_max(); ++x) {
      const auto rings = clocks.rings({x, y});
      for (std::size_t j = 0; j < rings.size(); ++j) {
        const std::size_t id = clocks.ring_id({x, y}, j);
        if (sel.accept[id] && !r.on_rim({x, y})) ev.push_back({rings[j], {x, y}, id});
      }
    }
  std::stable_sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.site < b.site;
  });
  return ev;
}

// Straightforward replay over a coordinate map.
inline SpinConfig naive_evolve(const SpinConfig& init, const ClockField& clocks, const UpdateSelection& sel,
                               UpdateRule rule) {
  SpinConfig cur = init;
  for (const Event& e : accepted_events(clocks, sel)) {
    const Site n[4] = {e.site + Site{0, 1}, e.site + Site{1, 0}, e.site + Site{0, -1}, e.site + Site{-1, 0}};
    if (rule == UpdateRule::majority) {
      int ones = 0;
      for (Site s : n) ones += cur.at(s);
      if (ones >= 3) cur.set(e.site, 1);
      if (ones <= 1) cur.set(e.site, 0);
    } else {
      cur.set(e.site, cur.at(n[sel.voter_choice[e.ring]]));
    }
  }
  return cur;
}

// Trajectory of one site as the list of its values after each accepted event.
inline std::vector<std::uint8_t> naive_trajectory(const SpinConfig& init, const ClockField& clocks,
                                                  const UpdateSelection& sel, UpdateRule rule, Site x) {
  SpinConfig cur = init;
  std::vector<std::uint8_t> out{cur.at(x)};
  for (const Event& e : accepted_events(clocks, sel)) {
    const Site n[4] = {e.site + Site{0, 1}, e.site + Site{1, 0}, e.site + Site{0, -1}, e.site + Site{-1, 0}};
    if (rule == UpdateRule::majority) {
      int ones = 0;
      for (Site s : n) ones += cur.at(s);
      if (ones >= 3) cur.set(e.site, 1);
      if (ones <= 1) cur.set(e.site, 0);
    } else {
      cur.set(e.site, cur.at(n[sel.voter_choice[e.ring]]));
    }
    out.push_back(cur.at(x));
  }
  return out;
}

// Past cone by the literal recursion C(x, T) = {x} U ... over memoized (site, T).
inline std::set<Site> recursive_past_cone(const ClockField& clocks, Site x) {
  std::set<Site> out;
  std::set<std::pair<Site, double>> visited;
  std::vector<std::pair<Site, double>> stack{{x, clocks.horizon()}};
  while (!stack.empty()) {
    auto [z, T] = stack.back();
    stack.pop_back();
    if (!visited.insert({z, T}).second) continue;
    out.insert(z);
    if (!clocks.region().contains(z)) continue;
    for (double s : clocks.rings(z)) {
      if (s > T) break;
      for (int d = 0; d < 4; ++d) {
        const Site y = z + kNeighborOffsets[static_cast<std::size_t>(d)];
        if (clocks.region().contains(y)) stack.push_back({y, s});
      }
    }
  }
  return out;
}

// Union-find on a grid (path halving, union by size).
struct DisjointSets {
  std::vector<std::uint32_t> parent, size;
  explicit DisjointSets(std::size_t n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size[a] < size[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
  }
};

// Newman-Ziff: occupy sites of an n x n square in random order, returning the
// fraction occupied when a left-right open crossing first appears.
inline double newman_ziff_threshold(std::int64_t n, std::mt19937_64& gen) {
  const std::size_t area = static_cast<std::size_t>(n * n);
  std::vector<std::uint32_t> order(area);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), gen);
  DisjointSets ds(area + 2);
  const std::uint32_t left = static_cast<std::uint32_t>(area), right = left + 1;
  std::vector<std::uint8_t> open(area, 0);
  for (std::size_t k = 0; k < area; ++k) {
    const std::uint32_t i = order[k];
    open[i] = 1;
    const std::int64_t x = i % n, y = i / n;
    if (x == 0) ds.unite(i, left);
    if (x == n - 1) ds.unite(i, right);
    const std::int64_t nx[4] = {x + 1, x - 1, x, x};
    const std::int64_t ny[4] = {y, y, y + 1, y - 1};
    for (int d = 0; d < 4; ++d) {
      if (nx[d] < 0 || ny[d] < 0 || nx[d] >= n || ny[d] >= n) continue;
      const auto j = static_cast<std::uint32_t>(ny[d] * n + nx[d]);
      if (open[j]) ds.unite(i, j);
    }
    if (ds.find(left) == ds.find(right)) return static_cast<double>(k + 1) / static_cast<double>(area);
  }
  return 1.0;
}

// Median p at which an n x n square first crosses, over `samples` orderings.
inline double iid_median_threshold(std::int64_t n, int samples, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> th;
  th.reserve(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) th.push_back(newman_ziff_threshold(n, gen));
  std::sort(th.begin(), th.end());
  return 0.5 * (th[th.size() / 2] + th[(th.size() - 1) / 2]);
}

// True iff the `state` sites of the annulus lo < |z|_inf <= hi (about the
// origin) contain a circuit separating the origin from infinity, detected by
// lifting the annulus to its universal cover along the cut x > 0, y = 0.
inline bool winding_circuit(const SpinConfig& cfg, std::int64_t lo, std::int64_t hi, std::uint8_t state,
                            Connectivity c) {
  auto inside = [&](Site s) { return norm_inf(s) > lo && norm_inf(s) <= hi && cfg.at(s) == state; };
  auto crossing = [](Site a, Site b) {
    // +1 when the step crosses the ray y = 1/2, x > 0 upwards.
    const bool ua = a.y >= 1, ub = b.y >= 1;
    if (ua == ub) return 0;
    if (a.x + b.x <= 0) return 0;
    return ub ? 1 : -1;
  };
  std::map<Site, std::int64_t> sheet;
  for (std::int64_t y = -hi; y <= hi; ++y)
    for (std::int64_t x = -hi; x <= hi; ++x) {
      const Site start{x, y};
      if (!inside(start) || sheet.count(start)) continue;
      std::vector<Site> stack{start};
      sheet[start] = 0;
      while (!stack.empty()) {
        const Site z = stack.back();
        stack.pop_back();
        for (int d = 0; d < degree(c); ++d) {
          const Site w = z + kNeighborOffsets[static_cast<std::size_t>(d)];
          if (!inside(w)) continue;
          const std::int64_t lvl = sheet[z] + crossing(z, w);
          auto it = sheet.find(w);
          if (it == sheet.end()) {
            sheet[w] = lvl;
            stack.push_back(w);
          } else if (it->second != lvl) {
            return true;
          }
        }
      }
    }
  return false;
}

}  // namespace oracle
