#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdperc/mdperc.hpp"

namespace mdperc::app {

using json = nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kValidation = 2, kResource = 3, kFlagged = 4 };

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { real, integer, count, int_list, text };

struct ParamSpec {
  std::string key;
  Kind kind;
  json fallback;
  std::string help;
};

inline const std::map<std::string, std::vector<ParamSpec>>& command_table() {
  static const std::map<std::string, std::vector<ParamSpec>> table = [] {
    const ParamSpec p{"p", Kind::real, 0.5, "initial density"};
    const ParamSpec t{"t", Kind::real, 1.0, "time horizon"};
    const ParamSpec k{"k", Kind::integer, 1, "clock rate"};
    const ParamSpec n{"n", Kind::integer, 16, "box size"};
    const ParamSpec rule{"rule", Kind::text, "majority", "majority or voter"};
    const ParamSpec replicas{"replicas", Kind::count, 1000, "replica count"};
    const ParamSpec inner{"inner", Kind::count, 200, "inner replicas"};
    const ParamSpec ns{"ns", Kind::int_list, json::array({8, 16, 32, 64}), "comma-separated sizes"};
    std::map<std::string, std::vector<ParamSpec>> m;
    m["simulate"] = {p, t, k, n, rule};
    m["crossing-prob"] = {p, t, k, n, {"lambda", Kind::real, 1.0, "aspect ratio"}, replicas, rule};
    m["quenched"] = {p, t, k, n, inner, {"event", Kind::text, "crossing", "crossing or site"}, rule};
    m["variance-decay"] = {p, t, {"k", Kind::integer, 4, "clock rate"}, n, {"outer", Kind::count, 200, "clock fields"},
                           inner, rule};
    m["influence"] = {p, t, k, n, inner, {"x", Kind::integer, 0, "site x (0: centre)"},
                      {"y", Kind::integer, 0, "site y (0: centre)"},
                      {"ring", Kind::integer, -1, "ring index at the site (-1: opinion bit)"}, rule};
    m["revealment"] = {p, t, {"k", Kind::integer, 8, "clock rate"}, n, inner,
                       {"fields", Kind::count, 1, "clock fields"},
                       {"variant", Kind::text, "horizontal", "horizontal or vertical"},
                       {"guard_radius", Kind::integer, -1, "guard radius (-1: ceil(ln n))"}, rule};
    m["exact-oracle"] = {{"p", Kind::real, 0.4, "initial density"},
                         {"t", Kind::real, 0.2, "time horizon"},
                         {"k", Kind::integer, 4, "clock rate"},
                         {"n", Kind::integer, 3, "box size"},
                         {"max_bits", Kind::integer, 20, "bit budget"},
                         {"instances", Kind::count, 1, "sampled instances"},
                         {"fd_step", Kind::real, 1e-3, "finite-difference step"},
                         {"guard_radius", Kind::integer, -1, "guard radius (-1: ceil(ln n))"}};
    m["window"] = {{"n", Kind::integer, 16, "box size"}, t, {"alpha", Kind::real, 0.1, "level"}, k, replicas, rule};
    m["pc"] = {t, ns, k, replicas, rule};
    m["one-arm"] = {p, t, k, ns, {"replicas", Kind::count, 100, "replica count"},
                    {"block", Kind::integer, 32, "centres per side"}, rule};
    m["corr-gap"] = {p, t, k, {"separation", Kind::integer, 32, "distance between the sites"}, replicas, rule};
    m["renorm"] = {p, t, k, {"L1", Kind::real, 8.0, "first scale"}, {"levels", Kind::integer, 3, "audited levels"},
                   replicas, rule};
    m["cascade"] = {{"p", Kind::real, 0.5927, "density (t = 0)"},
                    {"L1", Kind::real, 8.0, "first scale"},
                    {"levels", Kind::integer, 3, "levels"},
                    {"configs", Kind::count, 1000, "configurations per level"}};
    return m;
  }();
  return table;
}

inline json coerce(const ParamSpec& spec, const json& v) {
  auto bad = [&](const std::string& what) {
    return ValidationError("invalid value for '" + spec.key + "': " + what);
  };
  auto parse_number = [&](const json& x) -> double {
    if (x.is_number()) return x.get<double>();
    if (x.is_string()) {
      const std::string s = x.get<std::string>();
      std::size_t pos = 0;
      double d = 0;
      try {
        d = std::stod(s, &pos);
      } catch (...) {
        throw bad("'" + s + "' is not a number");
      }
      if (pos != s.size()) throw bad("'" + s + "' is not a number");
      return d;
    }
    throw bad("expected a number");
  };
  auto parse_int = [&](const json& x) -> long long {
    if (x.is_number_integer()) return x.get<long long>();
    const double d = parse_number(x);
    if (d != std::floor(d) || std::abs(d) > 9.0e15) throw bad("expected an integer");
    return static_cast<long long>(d);
  };
  switch (spec.kind) {
    case Kind::real: {
      const double d = parse_number(v);
      if (!std::isfinite(d)) throw bad("must be finite");
      return d;
    }
    case Kind::integer:
      return parse_int(v);
    case Kind::count: {
      const auto c = parse_int(v);
      if (c < 1) throw bad("must be >= 1");
      return c;
    }
    case Kind::int_list: {
      json out = json::array();
      if (v.is_array()) {
        for (const auto& e : v) out.push_back(parse_int(e));
      } else if (v.is_string()) {
        std::stringstream ss(v.get<std::string>());
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(parse_int(json(item)));
      } else {
        throw bad("expected a list of integers");
      }
      if (out.empty()) throw bad("list is empty");
      return out;
    }
    case Kind::text:
      if (!v.is_string()) throw bad("expected a string");
      return v;
  }
  return v;
}

struct Settings {
  std::string command;
  json params = json::object();
  std::uint64_t seed = 1;
  std::string threads = "auto";
  std::string out = "out";
};

inline std::uint64_t parse_seed(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(s, &pos, 0);
    } catch (...) {
      pos = 0;
    }
    if (pos == s.size() && !s.empty() && s[0] != '-') return x;
  }
  throw ValidationError("invalid value for 'seed': expected a 64-bit unsigned integer");
}

inline unsigned parse_threads(const std::string& s) {
  if (s == "auto") return 0;
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != s.size() || v < 1 || v > 4096) throw ValidationError("invalid value for 'threads': expected N >= 1 or auto");
  return static_cast<unsigned>(v);
}

// Builds settings from a JSON document (a flat config or a run manifest) and
// command-line overrides; every value is typed and checked.
inline Settings resolve(const std::string& command, const json& file, const std::map<std::string, std::string>& flags) {
  const auto& table = command_table();
  const auto it = table.find(command);
  if (it == table.end()) throw ValidationError("unknown command '" + command + "'");
  json doc = file.is_null() ? json::object() : file;
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  if (doc.contains("artifact") && doc.contains("config")) doc = doc["config"];
  Settings s;
  s.command = command;
  for (const auto& spec : it->second) s.params[spec.key] = spec.fallback;
  auto find_spec = [&](const std::string& key) -> const ParamSpec* {
    for (const auto& spec : it->second)
      if (spec.key == key) return &spec;
    return nullptr;
  };
  auto apply = [&](const std::string& key, const json& value) {
    if (key == "command") {
      if (!value.is_string() || value.get<std::string>() != command)
        throw ValidationError("invalid value for 'command': config is for another command");
    } else if (key == "seed") {
      s.seed = parse_seed(value);
    } else if (key == "threads") {
      s.threads = value.is_string() ? value.get<std::string>() : value.dump();
      parse_threads(s.threads);
    } else if (key == "out") {
      if (!value.is_string()) throw ValidationError("invalid value for 'out': expected a path");
      s.out = value.get<std::string>();
    } else if (const ParamSpec* spec = find_spec(key)) {
      s.params[key] = coerce(*spec, value);
    } else {
      throw ValidationError("unknown key '" + key + "' for command " + command);
    }
  };
  for (auto& [key, value] : doc.items()) apply(key, value);
  for (const auto& [key, value] : flags) apply(key, json(value));
  return s;
}

// ---------------------------------------------------------------------------

inline void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ValidationError("invalid value for '" + key + "': " + what);
}

inline double real_param(const Settings& s, const std::string& key) { return s.params.at(key).get<double>(); }
inline std::int64_t int_param(const Settings& s, const std::string& key) { return s.params.at(key).get<std::int64_t>(); }
inline std::string text_param(const Settings& s, const std::string& key) { return s.params.at(key).get<std::string>(); }

inline UpdateRule rule_param(const Settings& s) {
  const auto r = text_param(s, "rule");
  check(r == "majority" || r == "voter", "rule", "expected majority or voter");
  return r == "voter" ? UpdateRule::voter : UpdateRule::majority;
}

// Range checks, run before any sampling.
inline void validate_settings(const Settings& s) {
  const json& P = s.params;
  if (P.contains("p")) check(real_param(s, "p") >= 0 && real_param(s, "p") <= 1, "p", "must lie in [0, 1]");
  if (P.contains("t")) check(real_param(s, "t") >= 0 && real_param(s, "t") <= 1e6, "t", "must lie in [0, 1e6]");
  if (P.contains("k")) check(int_param(s, "k") >= 1 && int_param(s, "k") <= 1024, "k", "must lie in [1, 1024]");
  if (P.contains("n")) check(int_param(s, "n") >= 1 && int_param(s, "n") <= 4096, "n", "must lie in [1, 4096]");
  if (P.contains("rule")) rule_param(s);
  if (P.contains("ns"))
    for (const auto& v : P["ns"]) check(v.get<std::int64_t>() >= 1 && v.get<std::int64_t>() <= 4096, "ns", "sizes must lie in [1, 4096]");
  if (P.contains("lambda"))
    check(real_param(s, "lambda") > 0 && std::floor(real_param(s, "lambda") * static_cast<double>(int_param(s, "n"))) >= 1,
          "lambda", "floor(lambda n) must be >= 1");
  if (P.contains("alpha")) check(real_param(s, "alpha") > 0 && real_param(s, "alpha") < 0.5, "alpha", "must lie in (0, 1/2)");
  if (P.contains("inner") && s.command == "variance-decay") check(int_param(s, "inner") >= 2, "inner", "must be >= 2");
  if (P.contains("outer")) check(int_param(s, "outer") >= 2, "outer", "must be >= 2");
  if (s.command == "variance-decay") check(int_param(s, "k") >= 2, "k", "must be >= 2");
  if (P.contains("event")) check(text_param(s, "event") == "crossing" || text_param(s, "event") == "site", "event", "expected crossing or site");
  if (P.contains("variant"))
    check(text_param(s, "variant") == "horizontal" || text_param(s, "variant") == "vertical", "variant",
          "expected horizontal or vertical");
  if (P.contains("guard_radius")) check(int_param(s, "guard_radius") >= -1, "guard_radius", "must be >= -1");
  if (P.contains("max_bits")) check(int_param(s, "max_bits") >= 1 && int_param(s, "max_bits") <= 24, "max_bits", "must lie in [1, 24]");
  if (P.contains("fd_step")) {
    const double h = real_param(s, "fd_step"), p = real_param(s, "p");
    check(h > 0 && h < std::min(p, 1 - p), "fd_step", "need 0 < h < min(p, 1 - p)");
  }
  if (P.contains("block")) check(int_param(s, "block") >= 1 && int_param(s, "block") <= 1024, "block", "must lie in [1, 1024]");
  if (P.contains("separation")) check(int_param(s, "separation") >= 1, "separation", "must be >= 1");
  if (P.contains("L1")) check(real_param(s, "L1") >= 1 && real_param(s, "L1") <= 1e6, "L1", "must lie in [1, 1e6]");
  if (P.contains("levels")) check(int_param(s, "levels") >= 1 && int_param(s, "levels") <= 40, "levels", "must lie in [1, 40]");
  if (s.command == "one-arm" || s.command == "renorm") check(int_param(s, "replicas") >= 2, "replicas", "must be >= 2");
  if (s.command == "corr-gap") check(int_param(s, "replicas") >= 2, "replicas", "must be >= 2");
  if (s.command == "influence") {
    const auto n = int_param(s, "n"), x = int_param(s, "x"), y = int_param(s, "y");
    check(x == 0 || (x >= 1 && x <= n), "x", "must be 0 or lie in [1, n]");
    check(y == 0 || (y >= 1 && y <= n), "y", "must be 0 or lie in [1, n]");
    check(int_param(s, "ring") >= -1, "ring", "must be >= -1");
  }
}

// ---------------------------------------------------------------------------

struct Row {
  std::string quantity;
  std::optional<double> p, t;
  std::optional<std::int64_t> k, n;
  std::optional<double> alpha;
  double estimate = 0.0;
  std::optional<double> std_error;
  std::optional<std::size_t> replicas;
  std::string seed;
};

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_results_csv(std::ostream& os, const std::string& experiment, const std::vector<Row>& rows) {
  os << "experiment,quantity,p,t,k,n,alpha,estimate,stderr,replicas,seed\n";
  for (const auto& r : rows) {
    os << experiment << ',' << r.quantity << ',' << (r.p ? fmt_real(*r.p) : "") << ',' << (r.t ? fmt_real(*r.t) : "")
       << ',' << (r.k ? std::to_string(*r.k) : "") << ',' << (r.n ? std::to_string(*r.n) : "") << ','
       << (r.alpha ? fmt_real(*r.alpha) : "") << ',' << fmt_real(r.estimate) << ','
       << (r.std_error ? fmt_real(*r.std_error) : "") << ',' << (r.replicas ? std::to_string(*r.replicas) : "") << ','
       << r.seed << '\n';
  }
}

struct RunOutput {
  std::vector<Row> rows;
  std::map<std::string, std::string> traces;  // file name -> CSV content
  bool flagged = false;
  std::vector<std::string> notes;
};

struct Context {
  const Settings& s;
  unsigned threads;
  StreamFamily fam;

  Row row(const std::string& quantity) const {
    Row r;
    r.quantity = quantity;
    r.seed = fam.descriptor();
    const json& P = s.params;
    if (P.contains("p") && s.command != "cascade") r.p = P["p"].get<double>();
    if (P.contains("t")) r.t = P["t"].get<double>();
    if (P.contains("k")) r.k = P["k"].get<std::int64_t>();
    if (P.contains("n")) r.n = P["n"].get<std::int64_t>();
    if (P.contains("alpha")) r.alpha = P["alpha"].get<double>();
    return r;
  }
  Row estimate_row(const std::string& quantity, const MCEstimate& e) const {
    Row r = row(quantity);
    r.estimate = e.mean;
    r.std_error = e.std_error;
    r.replicas = e.replicas;
    r.seed = e.seed_descriptor;
    return r;
  }
  Row value_row(const std::string& quantity, double v) const {
    Row r = row(quantity);
    r.estimate = v;
    return r;
  }
  SimParams sim() const {
    SimParams sp;
    sp.p = s.params.contains("p") ? real_param(s, "p") : 0.5;
    sp.t = s.params.contains("t") ? real_param(s, "t") : 0.0;
    sp.k = s.params.contains("k") ? static_cast<int>(int_param(s, "k")) : 1;
    if (s.params.contains("rule")) sp.rule = rule_param(s);
    return sp;
  }
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(int_param(s, key)); }
};

inline std::string grid_csv(const SpinConfig& cfg) {
  std::ostringstream os;
  os << "x,y,value\n";
  const Region& r = cfg.region();
  for (std::size_t i = 0; i < r.area(); ++i) {
    const Site z = r.site(i);
    os << z.x << ',' << z.y << ',' << int(cfg[i]) << '\n';
  }
  return os.str();
}

inline RunOutput run_simulate(const Context& c) {
  RunOutput out;
  const auto sp = c.sim();
  const auto n = int_param(c.s, "n");
  const Region rn = Region::rectangle(n, n);
  const auto w = padded_exact_window_keyed(rn, sp.k, sp.t, c.fam.key(0, Purpose::clocks), 4);
  const auto sel = sample_update_selection_keyed(w.clocks, sp.rule, c.fam.key(0, Purpose::selection));
  const auto init = coupled_initial(w.clocks.region(), sp.p, c.fam.key(0, Purpose::initial));
  const auto res = evolve(init, w.clocks, sel, sp.rule);
  const auto i0 = restrict_to(init, rn), f0 = restrict_to(res.final, rn);
  auto density = [](const SpinConfig& x) {
    double s = 0;
    for (auto v : x.values()) s += v;
    return s / static_cast<double>(x.values().size());
  };
  out.rows.push_back(c.value_row("open_fraction_initial", density(i0)));
  out.rows.push_back(c.value_row("open_fraction_final", density(f0)));
  out.rows.push_back(c.value_row("crossing_initial", crossing(i0, CrossingSpec::open_horizontal(n))));
  out.rows.push_back(c.value_row("crossing_final", crossing(f0, CrossingSpec::open_horizontal(n))));
  out.rows.push_back(c.value_row("rings", static_cast<double>(w.clocks.ring_count())));
  out.rows.push_back(c.value_row("window_margin", static_cast<double>(w.margin)));
  out.traces["initial.csv"] = grid_csv(i0);
  out.traces["final.csv"] = grid_csv(f0);
  return out;
}

inline RunOutput run_crossing(const Context& c) {
  RunOutput out;
  const auto n = int_param(c.s, "n");
  const auto spec = CrossingSpec::open_horizontal(n, real_param(c.s, "lambda"));
  const auto e = mc_event_probability(crossing_event(spec), c.sim(), c.count("replicas"), c.fam, c.threads);
  out.rows.push_back(c.estimate_row("crossing_probability", e));
  out.rows.push_back(c.value_row("ci_lo", e.ci_lo));
  out.rows.push_back(c.value_row("ci_hi", e.ci_hi));
  return out;
}

inline PaddedWindow shared_clocks(const Context& c, const Region& core) {
  const auto sp = c.sim();
  return padded_exact_window_keyed(core, sp.k, sp.t, c.fam.key(0, Purpose::clocks), 4);
}

inline RunOutput run_quenched(const Context& c) {
  RunOutput out;
  const auto n = int_param(c.s, "n");
  const Event ev = text_param(c.s, "event") == "site" ? site_open_event({1, 1})
                                                       : crossing_event(CrossingSpec::open_horizontal(n));
  const auto w = shared_clocks(c, Region::rectangle(n, n));
  const auto e = quenched_probability(w.clocks, ev, c.sim().p, c.count("inner"), c.fam.child("inner"), c.threads,
                                      c.sim().rule);
  out.rows.push_back(c.estimate_row(text_param(c.s, "event") == "site" ? "quenched_site_open" : "quenched_crossing", e));
  out.rows.push_back(c.value_row("rings", static_cast<double>(w.clocks.ring_count())));
  return out;
}

inline RunOutput run_variance(const Context& c) {
  RunOutput out;
  const auto v = variance_of_quenched_mean(c.sim(), int_param(c.s, "n"), c.count("outer"), c.count("inner"), c.fam,
                                           c.threads);
  Row r = c.value_row("v_hat", v.v_hat);
  r.std_error = v.se;
  r.replicas = v.outer * v.inner;
  out.rows.push_back(r);
  out.rows.push_back(c.value_row("s_between", v.s_between));
  out.rows.push_back(c.value_row("s_within", v.s_within));
  out.rows.push_back(c.value_row("bound", v.bound));
  out.rows.push_back(c.value_row("pass", v.pass ? 1.0 : 0.0));
  std::ostringstream tr;
  tr << "outer,quenched_mean\n";
  for (std::size_t i = 0; i < v.group_means.size(); ++i) tr << i << ',' << fmt_real(v.group_means[i]) << '\n';
  out.traces["group_means.csv"] = tr.str();
  out.flagged = !v.pass;
  return out;
}

inline RunOutput run_influence(const Context& c) {
  RunOutput out;
  const auto n = int_param(c.s, "n");
  const Site x{int_param(c.s, "x") == 0 ? (n + 1) / 2 : int_param(c.s, "x"),
               int_param(c.s, "y") == 0 ? (n + 1) / 2 : int_param(c.s, "y")};
  const auto w = shared_clocks(c, Region::rectangle(n, n));
  const auto ev = crossing_event(CrossingSpec::open_horizontal(n));
  const auto ring = int_param(c.s, "ring");
  if (ring < 0) {
    out.rows.push_back(c.estimate_row(
        "site_influence", site_influence(w.clocks, ev, x, c.sim().p, c.count("inner"), c.fam.child("inner"), c.threads,
                                         c.sim().rule)));
  } else {
    if (static_cast<std::size_t>(ring) >= w.clocks.rings(x).size())
      throw ValidationError("invalid value for 'ring': the site has " + std::to_string(w.clocks.rings(x).size()) +
                            " rings");
    out.rows.push_back(c.estimate_row(
        "clock_influence", clock_influence(w.clocks, ev, x, static_cast<std::size_t>(ring), c.sim().p,
                                           c.count("inner"), c.fam.child("inner"), c.threads, c.sim().rule)));
  }
  return out;
}

inline RunOutput run_revealment(const Context& c) {
  RunOutput out;
  const auto n = int_param(c.s, "n");
  const auto sp = c.sim();
  ExplorationOptions opt;
  if (int_param(c.s, "guard_radius") >= 0) opt.guard_radius = int_param(c.s, "guard_radius");
  const Orientation variant = text_param(c.s, "variant") == "vertical" ? Orientation::vertical : Orientation::horizontal;
  opt.orientation = variant;
  std::vector<double> sups;
  for (std::size_t f = 0; f < c.count("fields"); ++f) {
    const auto w = padded_exact_window_keyed(Region::rectangle(n, n), sp.k, sp.t, c.fam.key(f, Purpose::clocks), 4);
    const auto res = revealment(w.clocks, n, sp.p, c.count("inner"), c.fam.child("field" + std::to_string(f)), variant,
                                c.threads, opt, sp.rule);
    Row r = c.value_row("sup_revealment", res.sup);
    r.std_error = std::sqrt(res.sup * (1 - res.sup) / static_cast<double>(res.inner));
    r.replicas = res.inner;
    r.seed = res.seed_descriptor;
    out.rows.push_back(r);
    out.rows.push_back(c.value_row("guard_fraction", res.guard_fraction));
    out.rows.push_back(c.value_row("mean_queried", res.mean_queried));
    sups.push_back(res.sup);
    std::ostringstream ps;
    ps << "x,y,revealment\n";
    for (std::size_t i = 0; i < res.per_site.size(); ++i) {
      if (res.per_site[i] == 0.0) continue;
      const Site z = res.window.site(i);
      ps << z.x << ',' << z.y << ',' << fmt_real(res.per_site[i]) << '\n';
    }
    out.traces["revealment_field" + std::to_string(f) + ".csv"] = ps.str();
    // One exploration trace per field.
    const ConeTable cones(w.clocks, n);
    const auto rs = restrict_schedule(w.clocks, Region::rectangle(n, n));
    QuenchedScratch scratch;
    const StreamFamily tf = c.fam.child("trace" + std::to_string(f));
    const auto& fin = quenched_final(w.clocks, rs, sp.p, sp.rule, tf.key(0, Purpose::selection),
                                     tf.key(0, Purpose::initial), scratch);
    RngStream col = tf.stream(0, Purpose::column);
    const auto tr = explore_with_final(cones, fin, uniform_int(col, column_lo(n), column_hi(n)), opt);
    std::ostringstream ts;
    write_trace_csv(ts, tr);
    out.traces["trace_field" + std::to_string(f) + ".csv"] = ts.str();
  }
  std::sort(sups.begin(), sups.end());
  out.rows.push_back(c.value_row("median_sup_revealment", 0.5 * (sups[sups.size() / 2] + sups[(sups.size() - 1) / 2])));
  return out;
}

inline RunOutput run_exact(const Context& c) {
  RunOutput out;
  const auto n = int_param(c.s, "n");
  const auto maxb = static_cast<std::size_t>(int_param(c.s, "max_bits"));
  const double p = real_param(c.s, "p"), h = real_param(c.s, "fd_step");
  std::ostringstream tr;
  tr << "instance,bits,mean,variance,osss_rhs,influence_sum,derivative,russo_gap_h,russo_gap_half,russo_order\n";
  for (std::size_t i = 0; i < c.count("instances"); ++i) {
    auto inst = sample_exact_instance(n, p, static_cast<int>(int_param(c.s, "k")), real_param(c.s, "t"), maxb,
                                      c.fam.key(i, Purpose::instance));
    if (int_param(c.s, "guard_radius") >= 0) inst.explore.guard_radius = int_param(c.s, "guard_radius");
    const auto rep = exact_enumerate(inst, maxb, c.threads);
    const auto rc = russo_from_report(rep, p, h);
    const std::string sfx = c.count("instances") > 1 ? "_" + std::to_string(i) : "";
    out.rows.push_back(c.value_row("bits" + sfx, static_cast<double>(rep.domain.size())));
    out.rows.push_back(c.value_row("mean" + sfx, rep.mean));
    out.rows.push_back(c.value_row("variance" + sfx, rep.variance));
    out.rows.push_back(c.value_row("osss_rhs" + sfx, rep.osss_rhs));
    out.rows.push_back(c.value_row("influence_sum" + sfx, rep.influence_sum_sites));
    out.rows.push_back(c.value_row("derivative" + sfx, rep.derivative));
    out.rows.push_back(c.value_row("russo_gap_h" + sfx, rc.gap_h));
    out.rows.push_back(c.value_row("russo_gap_half" + sfx, rc.gap_half));
    out.rows.push_back(c.value_row("russo_order" + sfx, rc.order));
    tr << i << ',' << rep.domain.size() << ',' << fmt_real(rep.mean) << ',' << fmt_real(rep.variance) << ','
       << fmt_real(rep.osss_rhs) << ',' << fmt_real(rep.influence_sum_sites) << ',' << fmt_real(rep.derivative) << ','
       << fmt_real(rc.gap_h) << ',' << fmt_real(rc.gap_half) << ',' << fmt_real(rc.order) << '\n';
    std::ostringstream bits;
    bits << "bit,kind,x,y,time,influence,revealment\n";
    for (std::size_t b = 0; b < rep.domain.size(); ++b) {
      const auto& d = rep.domain[b];
      bits << b << ',' << (d.kind == ExactBit::Kind::site ? "site" : "ring") << ',' << d.site.x << ',' << d.site.y
           << ',' << fmt_real(d.time) << ',' << fmt_real(rep.influence[b]) << ',' << fmt_real(rep.revealment[b])
           << '\n';
    }
    out.traces["exact_bits_" + std::to_string(i) + ".csv"] = bits.str();
    const bool osss_ok = rep.osss_rhs - rep.variance >= -1e-12;
    const bool russo_ok = rc.gap_h <= 1e-4 && (rc.exact || rc.order >= 1.9);
    if (!osss_ok || !russo_ok) {
      out.flagged = true;
      out.notes.push_back("instance " + std::to_string(i) + (osss_ok ? "" : ": OSSS violated") +
                          (russo_ok ? "" : ": Russo check failed"));
    }
  }
  out.traces["exact_summary.csv"] = tr.str();
  return out;
}

inline void quantile_rows(const Context& c, RunOutput& out, const std::string& name, const QuantileEstimate& q,
                          std::size_t replicas, const std::string& seed, std::optional<std::int64_t> n = {}) {
  Row r = c.value_row(name, q.value);
  r.std_error = (q.ci_hi - q.ci_lo) / (2 * kZ95);
  r.replicas = replicas;
  r.seed = seed;
  if (n) r.n = n;
  out.rows.push_back(r);
  Row lo = c.value_row(name + "_ci_lo", q.ci_lo), hi = c.value_row(name + "_ci_hi", q.ci_hi);
  if (n) lo.n = hi.n = n;
  out.rows.push_back(lo);
  out.rows.push_back(hi);
  out.flagged = out.flagged || q.flagged;
}

inline RunOutput run_window(const Context& c) {
  RunOutput out;
  const auto sp = c.sim();
  const auto w = threshold_window(int_param(c.s, "n"), sp.t, real_param(c.s, "alpha"), sp.k, c.count("replicas"), c.fam,
                                  c.threads, sp.rule);
  quantile_rows(c, out, "p_lo", w.p_lo, w.replicas, w.seed_descriptor);
  quantile_rows(c, out, "p_hi", w.p_hi, w.replicas, w.seed_descriptor);
  Row len = c.value_row("length", w.length);
  len.std_error = (w.length_ci_hi - w.length_ci_lo) / (2 * kZ95);
  len.replicas = w.replicas;
  out.rows.push_back(len);
  out.rows.push_back(c.value_row("length_ci_lo", w.length_ci_lo));
  out.rows.push_back(c.value_row("length_ci_hi", w.length_ci_hi));
  out.flagged = w.flagged;
  return out;
}

inline std::vector<std::int64_t> list_param(const Settings& s, const std::string& key) {
  std::vector<std::int64_t> v;
  for (const auto& e : s.params.at(key)) v.push_back(e.get<std::int64_t>());
  return v;
}

inline RunOutput run_pc(const Context& c) {
  RunOutput out;
  const auto sp = c.sim();
  const auto res = estimate_pc(sp.t, list_param(c.s, "ns"), sp.k, c.count("replicas"), c.fam, c.threads, sp.rule);
  for (const auto& e : res.per_n)
    quantile_rows(c, out, "pc", e.pc, c.count("replicas"), res.seed_descriptor + ";n=" + std::to_string(e.n), e.n);
  out.notes.push_back("trend over n: " + res.trend);
  return out;
}

inline RunOutput run_one_arm(const Context& c) {
  RunOutput out;
  const auto res = one_arm_curve(c.sim(), list_param(c.s, "ns"), c.count("replicas"), int_param(c.s, "block"), c.fam,
                                 c.threads);
  for (const auto& r : res.rows) {
    Row row = c.estimate_row(r.censored ? "one_arm_censored" : "one_arm", r.estimate);
    row.n = r.n;
    out.rows.push_back(row);
    out.flagged = out.flagged || r.censored;
  }
  out.rows.push_back(c.value_row("fit_slope", res.fit.slope));
  out.rows.push_back(c.value_row("fit_intercept", res.fit.intercept));
  out.rows.push_back(c.value_row("fit_r2", res.fit.r2));
  out.rows.push_back(c.value_row("fit_points", static_cast<double>(res.fit.points)));
  return out;
}

inline RunOutput run_corr(const Context& c) {
  RunOutput out;
  const auto g = correlation_gap(site_open_event({0, 0}), site_open_event({int_param(c.s, "separation"), 0}), c.sim(),
                                 c.count("replicas"), c.fam, c.threads);
  out.rows.push_back(c.estimate_row("p_a", g.a));
  out.rows.push_back(c.estimate_row("p_b", g.b));
  out.rows.push_back(c.estimate_row("p_ab", g.ab));
  Row r = c.value_row("gap", g.gap);
  r.std_error = g.std_error;
  r.replicas = g.ab.replicas;
  out.rows.push_back(r);
  return out;
}

inline std::string audit_csv(const RecursionAudit& a) {
  std::ostringstream os;
  os << "level,L_k,p_k_hat,p_k_stderr,N_pairs,corr_hat,rhs,satisfied\n";
  for (const auto& r : a.rows) {
    const bool last = r.satisfied == "NA";
    os << r.level << ',' << fmt_real(r.Lk) << ',' << fmt_real(r.pk.mean) << ',' << fmt_real(r.pk.std_error) << ','
       << (last ? "" : std::to_string(r.n_pairs)) << ',' << (last ? "" : fmt_real(r.corr_hat)) << ','
       << (last ? "" : fmt_real(r.rhs)) << ',' << r.satisfied << '\n';
  }
  return os.str();
}

inline RunOutput run_renorm(const Context& c) {
  RunOutput out;
  const auto a = recursion_audit(c.sim(), real_param(c.s, "L1"), static_cast<int>(int_param(c.s, "levels")),
                                 c.count("replicas"), c.fam, c.threads);
  for (const auto& r : a.rows) {
    Row row = c.estimate_row("p_k_level" + std::to_string(r.level), r.pk);
    out.rows.push_back(row);
    if (r.satisfied != "NA") {
      out.rows.push_back(c.value_row("rhs_level" + std::to_string(r.level), r.rhs));
      out.rows.push_back(c.value_row("satisfied_level" + std::to_string(r.level), r.satisfied == "true"));
    }
    out.flagged = out.flagged || r.pk.mean == 0.0 || r.satisfied == "false";
  }
  out.traces["audit.csv"] = audit_csv(a);
  return out;
}

inline RunOutput run_cascade(const Context& c) {
  RunOutput out;
  const int levels = static_cast<int>(int_param(c.s, "levels"));
  const auto seq = scale_sequence(real_param(c.s, "L1"), levels + 1);
  std::ostringstream tr;
  tr << "level,L_k,core_points,shell_points,N_pairs,verified,exhaustive,min_separation,required_separation,configs,a0,"
        "violations\n";
  for (int k = 1; k <= levels; ++k) {
    const auto cov = build_covering(seq, k);
    const auto sw = cascade_sweep(cov, real_param(c.s, "p"), c.count("configs"), c.fam.child("level" + std::to_string(k)),
                                  c.threads);
    Row r = c.value_row("violations_level" + std::to_string(k), static_cast<double>(sw.violations));
    r.replicas = sw.configs;
    out.rows.push_back(r);
    out.rows.push_back(c.value_row("covering_verified_level" + std::to_string(k), cov.verified()));
    out.rows.push_back(c.value_row("n_pairs_level" + std::to_string(k), static_cast<double>(cov.pair_count())));
    tr << k << ',' << fmt_real(cov.Lk) << ',' << cov.core_points.size() << ',' << cov.shell_points.size() << ','
       << cov.pair_count() << ',' << cov.verified() << ',' << cov.exhaustive << ',' << cov.min_separation << ','
       << fmt_real(cov.required_separation) << ',' << sw.configs << ',' << sw.a0_count << ',' << sw.violations << '\n';
    out.flagged = out.flagged || sw.violations > 0 || !cov.verified();
  }
  out.traces["cascade.csv"] = tr.str();
  return out;
}

inline RunOutput dispatch(const Context& c) {
  const std::string& cmd = c.s.command;
  if (cmd == "simulate") return run_simulate(c);
  if (cmd == "crossing-prob") return run_crossing(c);
  if (cmd == "quenched") return run_quenched(c);
  if (cmd == "variance-decay") return run_variance(c);
  if (cmd == "influence") return run_influence(c);
  if (cmd == "revealment") return run_revealment(c);
  if (cmd == "exact-oracle") return run_exact(c);
  if (cmd == "window") return run_window(c);
  if (cmd == "pc") return run_pc(c);
  if (cmd == "one-arm") return run_one_arm(c);
  if (cmd == "corr-gap") return run_corr(c);
  if (cmd == "renorm") return run_renorm(c);
  return run_cascade(c);
}

inline std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline unsigned effective_threads(const Settings& s) {
  if (const char* env = std::getenv("MPL_THREADS"); env && *env) {
    try {
      return parse_threads(env);
    } catch (const ValidationError&) {
      throw ValidationError("invalid value for 'MPL_THREADS': expected N >= 1 or auto");
    }
  }
  return parse_threads(s.threads);
}

// Runs a resolved command and writes results.csv, manifest.json and traces/.
inline int execute(const Settings& s, std::ostream& log) {
  validate_settings(s);
  const unsigned threads = effective_threads(s);
  namespace fs = std::filesystem;
  const auto start_wall = std::chrono::steady_clock::now();
  const std::string start = iso_now();
  int code = kOk;
  RunOutput out;
  const Context ctx{s, threads, StreamFamily{s.seed, s.command}};
  try {
    out = dispatch(ctx);
  } catch (const ResourceError& e) {
    log << "resource error: " << e.what() << '\n';
    return kResource;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_wall).count();
  fs::create_directories(s.out);
  {
    std::ofstream f(fs::path(s.out) / "results.csv", std::ios::binary);
    write_results_csv(f, s.command, out.rows);
  }
  if (!out.traces.empty()) {
    fs::create_directories(fs::path(s.out) / "traces");
    for (const auto& [name, text] : out.traces) {
      std::ofstream f(fs::path(s.out) / "traces" / name, std::ios::binary);
      f << text;
    }
  }
  json config = s.params;
  config["command"] = s.command;
  config["seed"] = s.seed;
  config["threads"] = s.threads;
  json seeds = json::array();
  for (const auto& r : out.rows) seeds.push_back({{"quantity", r.quantity}, {"seed", r.seed}});
  json manifest = {{"artifact", "mdperc"},
                   {"version", kVersion},
                   {"command", s.command},
                   {"config", config},
                   {"start", start},
                   {"end", iso_now()},
                   {"wall_time_s", wall},
                   {"threads_used", resolve_threads(threads)},
                   {"flagged", out.flagged},
                   {"notes", out.notes},
                   {"results", seeds}};
  {
    std::ofstream f(fs::path(s.out) / "manifest.json", std::ios::binary);
    f << manifest.dump(2) << '\n';
  }
  for (const auto& note : out.notes) log << note << '\n';
  if (out.flagged) code = kFlagged;
  return code;
}

}  // namespace mdperc::app
