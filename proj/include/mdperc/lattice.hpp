#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mdperc/errors.hpp"

namespace mdperc {

struct Site {
  std::int64_t x = 0;
  std::int64_t y = 0;

  friend constexpr Site operator+(Site a, Site b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Site operator-(Site a, Site b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend constexpr bool operator==(Site, Site) = default;
  friend constexpr auto operator<=>(Site, Site) = default;
};

constexpr std::int64_t norm_inf(Site s) noexcept {
  return std::max(s.x < 0 ? -s.x : s.x, s.y < 0 ? -s.y : s.y);
}
constexpr std::int64_t norm_1(Site s) noexcept { return (s.x < 0 ? -s.x : s.x) + (s.y < 0 ? -s.y : s.y); }

inline std::ostream& operator<<(std::ostream& os, Site s) { return os << '(' << s.x << ',' << s.y << ')'; }

// Closed axis-aligned rectangle [x_min, x_max] x [y_min, y_max].  Sites are
// indexed row-major starting from (x_min, y_min).
class Region {
 public:
  Region() = default;
  Region(std::int64_t x_min, std::int64_t x_max, std::int64_t y_min, std::int64_t y_max)
      : x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max) {
    require(x_min <= x_max && y_min <= y_max, "Region: empty extent");
    const auto w = static_cast<unsigned __int128>(x_max - x_min) + 1;
    const auto h = static_cast<unsigned __int128>(y_max - y_min) + 1;
    if (w * h > std::numeric_limits<std::uint64_t>::max()) throw ResourceError("Region: area overflows 64 bits");
  }

  // [1, w] x [1, h], the convention of the crossing rectangles.
  static Region rectangle(std::int64_t w, std::int64_t h) { return Region(1, w, 1, h); }
  // B(c, r) = c + [-r, r]^2.
  static Region ball(Site c, std::int64_t r) { return Region(c.x - r, c.x + r, c.y - r, c.y + r); }

  std::int64_t x_min() const noexcept { return x_min_; }
  std::int64_t x_max() const noexcept { return x_max_; }
  std::int64_t y_min() const noexcept { return y_min_; }
  std::int64_t y_max() const noexcept { return y_max_; }
  std::int64_t width() const noexcept { return x_max_ - x_min_ + 1; }
  std::int64_t height() const noexcept { return y_max_ - y_min_ + 1; }
  std::uint64_t area() const noexcept {
    return static_cast<std::uint64_t>(width()) * static_cast<std::uint64_t>(height());
  }

  bool contains(Site s) const noexcept {
    return s.x >= x_min_ && s.x <= x_max_ && s.y >= y_min_ && s.y <= y_max_;
  }
  bool contains(const Region& r) const noexcept {
    return r.x_min_ >= x_min_ && r.x_max_ <= x_max_ && r.y_min_ >= y_min_ && r.y_max_ <= y_max_;
  }
  // A site whose 4-neighbourhood leaves the region.
  bool on_rim(Site s) const noexcept {
    return s.x == x_min_ || s.x == x_max_ || s.y == y_min_ || s.y == y_max_;
  }

  std::size_t index(Site s) const noexcept {
    return static_cast<std::size_t>((s.y - y_min_) * width() + (s.x - x_min_));
  }
  Site site(std::size_t i) const noexcept {
    const auto w = static_cast<std::size_t>(width());
    return {x_min_ + static_cast<std::int64_t>(i % w), y_min_ + static_cast<std::int64_t>(i / w)};
  }

  Region padded(std::int64_t m) const { return Region(x_min_ - m, x_max_ + m, y_min_ - m, y_max_ + m); }

  friend bool operator==(const Region&, const Region&) = default;

 private:
  std::int64_t x_min_ = 0, x_max_ = 0, y_min_ = 0, y_max_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const Region& r) {
  return os << '[' << r.x_min() << ',' << r.x_max() << "]x[" << r.y_min() << ',' << r.y_max() << ']';
}

// Smallest region containing both.
inline Region bounding(const Region& a, const Region& b) {
  return Region(std::min(a.x_min(), b.x_min()), std::max(a.x_max(), b.x_max()), std::min(a.y_min(), b.y_min()),
                std::max(a.y_max(), b.y_max()));
}

enum class Connectivity { nearest, star };

inline Connectivity dual(Connectivity c) noexcept {
  return c == Connectivity::nearest ? Connectivity::star : Connectivity::nearest;
}

// N, E, S, W, then NE, SE, SW, NW.
inline constexpr std::array<Site, 8> kNeighborOffsets{
    Site{0, 1}, Site{1, 0}, Site{0, -1}, Site{-1, 0}, Site{1, 1}, Site{1, -1}, Site{-1, -1}, Site{-1, 1}};

constexpr int degree(Connectivity c) noexcept { return c == Connectivity::nearest ? 4 : 8; }

inline std::vector<Site> neighbors(Site s, Connectivity c) {
  std::vector<Site> out;
  out.reserve(8);
  for (int i = 0; i < degree(c); ++i) out.push_back(s + kNeighborOffsets[static_cast<std::size_t>(i)]);
  return out;
}

// Sites at l-infinity distance exactly n: top row left to right, right column
// downwards, bottom row right to left, left column upwards.
inline std::vector<Site> ball_boundary(Site center, std::int64_t n) {
  require(n >= 0, "ball_boundary: negative radius");
  if (n == 0) return {center};
  std::vector<Site> out;
  out.reserve(static_cast<std::size_t>(8 * n));
  for (std::int64_t x = -n; x < n; ++x) out.push_back(center + Site{x, n});
  for (std::int64_t y = n; y > -n; --y) out.push_back(center + Site{n, y});
  for (std::int64_t x = n; x > -n; --x) out.push_back(center + Site{x, -n});
  for (std::int64_t y = -n; y < n; ++y) out.push_back(center + Site{-n, y});
  return out;
}

// Binary opinion field, one byte per site (0 closed, 1 open).
class SpinConfig {
 public:
  SpinConfig() = default;
  explicit SpinConfig(Region region, std::uint8_t fill = 0)
      : region_(region), values_(static_cast<std::size_t>(region.area()), fill) {
    require(fill <= 1, "SpinConfig: values must be 0 or 1");
  }
  SpinConfig(Region region, std::vector<std::uint8_t> values) : region_(region), values_(std::move(values)) {
    require(values_.size() == region.area(), "SpinConfig: value count does not match region");
    for (auto v : values_) require(v <= 1, "SpinConfig: values must be 0 or 1");
  }

  const Region& region() const noexcept { return region_; }
  std::uint8_t at(Site s) const {
    require(region_.contains(s), "SpinConfig::at: site outside region");
    return values_[region_.index(s)];
  }
  void set(Site s, std::uint8_t v) {
    require(region_.contains(s), "SpinConfig::set: site outside region");
    values_[region_.index(s)] = v ? 1 : 0;
  }
  std::uint8_t operator[](std::size_t i) const noexcept { return values_[i]; }
  const std::vector<std::uint8_t>& values() const noexcept { return values_; }
  std::vector<std::uint8_t>& mutable_values() noexcept { return values_; }

  friend bool operator==(const SpinConfig&, const SpinConfig&) = default;

 private:
  Region region_{};
  std::vector<std::uint8_t> values_;
};

// Pointwise order on a common region.
inline bool pointwise_leq(const SpinConfig& a, const SpinConfig& b) {
  require(a.region() == b.region(), "pointwise_leq: region mismatch");
  for (std::size_t i = 0; i < a.values().size(); ++i)
    if (a[i] > b[i]) return false;
  return true;
}

// Restriction to a sub-region.
inline SpinConfig restrict_to(const SpinConfig& cfg, const Region& sub) {
  require(cfg.region().contains(sub), "restrict_to: sub-region not contained");
  SpinConfig out(sub);
  for (std::int64_t y = sub.y_min(); y <= sub.y_max(); ++y)
    for (std::int64_t x = sub.x_min(); x <= sub.x_max(); ++x)
      out.mutable_values()[sub.index({x, y})] = cfg.values()[cfg.region().index({x, y})];
  return out;
}

namespace detail {

// Breadth-first reachability over `within`, restricted to sites with the
// given state.  `is_target` is a predicate on window-local indices.
template <class TargetPred>
bool bfs_reach(const SpinConfig& cfg, std::span<const Site> sources, std::uint8_t state, Connectivity c,
               const Region& within, TargetPred&& is_target) {
  const Region& r = cfg.region();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(within.area()), 0);
  std::vector<Site> queue;
  queue.reserve(sources.size());
  for (Site s : sources) {
    if (cfg.values()[r.index(s)] != state) continue;
    const auto li = within.index(s);
    if (seen[li]) continue;
    seen[li] = 1;
    queue.push_back(s);
  }
  const int deg = degree(c);
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const Site s = queue[head];
    if (is_target(within.index(s))) return true;
    for (int d = 0; d < deg; ++d) {
      const Site nb = s + kNeighborOffsets[static_cast<std::size_t>(d)];
      if (!within.contains(nb)) continue;
      const auto li = within.index(nb);
      if (seen[li] || cfg.values()[r.index(nb)] != state) continue;
      seen[li] = 1;
      queue.push_back(nb);
    }
  }
  return false;
}

}  // namespace detail

// True iff a path of `state` sites under adjacency `c`, inside `within`,
// joins some source to some target.
inline bool has_path(const SpinConfig& cfg, std::span<const Site> sources, std::span<const Site> targets,
                     std::uint8_t state, Connectivity c, const Region& within) {
  require(cfg.region().contains(within), "has_path: window not inside configuration region");
  for (Site s : sources) require(within.contains(s), "has_path: source outside window");
  for (Site s : targets) require(within.contains(s), "has_path: target outside window");
  if (sources.empty() || targets.empty()) return false;
  std::vector<std::uint8_t> target_mask(static_cast<std::size_t>(within.area()), 0);
  for (Site s : targets) target_mask[within.index(s)] = 1;
  return detail::bfs_reach(cfg, sources, state, c, within, [&](std::size_t li) { return target_mask[li] != 0; });
}

// Text grid: header `region x_min x_max y_min y_max`, then one row per line
// from y_max down to y_min, characters '1'/'0'.
inline void write_grid(std::ostream& os, const SpinConfig& cfg) {
  const Region& r = cfg.region();
  os << "region " << r.x_min() << ' ' << r.x_max() << ' ' << r.y_min() << ' ' << r.y_max() << '\n';
  for (std::int64_t y = r.y_max(); y >= r.y_min(); --y) {
    for (std::int64_t x = r.x_min(); x <= r.x_max(); ++x) os << (cfg.values()[r.index({x, y})] ? '1' : '0');
    os << '\n';
  }
}

inline SpinConfig read_grid(std::istream& is) {
  std::string tag;
  std::int64_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  if (!(is >> tag >> x0 >> x1 >> y0 >> y1) || tag != "region") throw ContractViolation("read_grid: bad header");
  Region r(x0, x1, y0, y1);
  SpinConfig cfg(r);
  for (std::int64_t y = y1; y >= y0; --y) {
    std::string row;
    if (!(is >> row) || static_cast<std::int64_t>(row.size()) != r.width())
      throw ContractViolation("read_grid: bad row at y=" + std::to_string(y));
    for (std::int64_t x = x0; x <= x1; ++x) {
      const char ch = row[static_cast<std::size_t>(x - x0)];
      if (ch != '0' && ch != '1') throw ContractViolation("read_grid: invalid character");
      cfg.mutable_values()[r.index({x, y})] = ch == '1';
    }
  }
  return cfg;
}

inline std::string to_grid_string(const SpinConfig& cfg) {
  std::ostringstream os;
  write_grid(os, cfg);
  return os.str();
}

inline SpinConfig from_grid_string(const std::string& text) {
  std::istringstream is(text);
  return read_grid(is);
}

}  // namespace mdperc
