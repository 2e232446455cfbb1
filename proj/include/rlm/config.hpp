#pragma once
// Flat experiment configuration with section-prefixed keys, round-tripping
// bit-exactly through its text form.

#include <cstdint>
#include <set>
#include <sstream>
#include <string>

#include "rlm/escape.hpp"
#include "rlm/io.hpp"
#include "rlm/map_family.hpp"
#include "rlm/partition.hpp"
#include "rlm/returns.hpp"

namespace rlm {

struct RunConfig {
  // family
  double lambda_lo = 0.55;
  double lambda_hi = 0.95;
  double alpha = 0.0;  // 0 -> max(0.45, 1 - lambda_lo)
  // partition
  int r0 = 3;
  int r_star = 5;
  // escape runs
  int escape_n_cap = 200;
  int escape_seed_depth = 25;
  double escape_prune_rel = 1e-9;
  std::string escape_j0 = "delta0";  // or "lo,hi"
  // return runs
  double bar_delta = 0.0;  // 0 -> midpoint of (delta_star, delta/5)
  int t_star = 40;
  int returns_n_cap = 70;
  int returns_seed_depth = 14;
  double returns_prune_rel = 1e-6;
  double returns_prune_width = 1e-9;
  double returns_min_element_width = 0.0;
  int returns_generation_budget = 20000;
  double returns_residual_fail_frac = 0.0;  // 0 disables the loud failure
  // statistics
  int bins = 4096;
  int burn_in = 50;
  int n_push = 50;
  int corr_n_max = 25;
  int height_cap = 8;
  std::string phi = "x";
  std::string psi = "x";
  // run
  std::uint64_t seed = 20210794ULL;
  int ensemble = 1;

  FamilyRange family() const { return FamilyRange::make(lambda_lo, lambda_hi, alpha); }
  PartitionConfig partition() const { return PartitionConfig::make(r0, r_star, family().alpha); }
  EscapeOptions escape_options() const {
    EscapeOptions o;
    o.n_cap = escape_n_cap;
    o.seed_depth = escape_seed_depth;
    o.prune_rel = escape_prune_rel;
    o.record_itinerary = false;
    return o;
  }
  ReturnOptions return_options() const {
    ReturnOptions o;
    o.bar_delta = bar_delta;
    o.t_star = t_star;
    o.n_cap = returns_n_cap;
    o.seed_depth = returns_seed_depth;
    o.prune_rel = returns_prune_rel;
    o.prune_width = returns_prune_width;
    o.min_element_width = returns_min_element_width;
    o.generation_budget = returns_generation_budget;
    return o;
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "family.lambda_lo=" << fmt_g17(lambda_lo) << "\n"
       << "family.lambda_hi=" << fmt_g17(lambda_hi) << "\n"
       << "family.alpha=" << fmt_g17(alpha) << "\n"
       << "partition.r0=" << r0 << "\n"
       << "partition.r_star=" << r_star << "\n"
       << "escape.n_cap=" << escape_n_cap << "\n"
       << "escape.seed_depth=" << escape_seed_depth << "\n"
       << "escape.prune_rel=" << fmt_g17(escape_prune_rel) << "\n"
       << "escape.j0=" << escape_j0 << "\n"
       << "returns.bar_delta=" << fmt_g17(bar_delta) << "\n"
       << "returns.t_star=" << t_star << "\n"
       << "returns.n_cap=" << returns_n_cap << "\n"
       << "returns.seed_depth=" << returns_seed_depth << "\n"
       << "returns.prune_rel=" << fmt_g17(returns_prune_rel) << "\n"
       << "returns.prune_width=" << fmt_g17(returns_prune_width) << "\n"
       << "returns.min_element_width=" << fmt_g17(returns_min_element_width) << "\n"
       << "returns.generation_budget=" << returns_generation_budget << "\n"
       << "returns.residual_fail_frac=" << fmt_g17(returns_residual_fail_frac) << "\n"
       << "stats.bins=" << bins << "\n"
       << "stats.burn_in=" << burn_in << "\n"
       << "stats.n_push=" << n_push << "\n"
       << "stats.corr_n_max=" << corr_n_max << "\n"
       << "stats.height_cap=" << height_cap << "\n"
       << "stats.phi=" << phi << "\n"
       << "stats.psi=" << psi << "\n"
       << "run.seed=" << seed << "\n"
       << "run.ensemble=" << ensemble << "\n";
    return os.str();
  }

  static RunConfig from_kv(const std::string& text) {
    auto kv = parse_kv(text);
    RunConfig c;
    std::set<std::string> known;
    auto getd = [&](const std::string& k, double& v) {
      known.insert(k);
      if (kv.count(k)) v = std::stod(kv.at(k));
    };
    auto geti = [&](const std::string& k, int& v) {
      known.insert(k);
      if (kv.count(k)) v = std::stoi(kv.at(k));
    };
    auto gets = [&](const std::string& k, std::string& v) {
      known.insert(k);
      if (kv.count(k)) v = kv.at(k);
    };
    getd("family.lambda_lo", c.lambda_lo);
    getd("family.lambda_hi", c.lambda_hi);
    getd("family.alpha", c.alpha);
    geti("partition.r0", c.r0);
    geti("partition.r_star", c.r_star);
    geti("escape.n_cap", c.escape_n_cap);
    geti("escape.seed_depth", c.escape_seed_depth);
    getd("escape.prune_rel", c.escape_prune_rel);
    gets("escape.j0", c.escape_j0);
    getd("returns.bar_delta", c.bar_delta);
    geti("returns.t_star", c.t_star);
    geti("returns.n_cap", c.returns_n_cap);
    geti("returns.seed_depth", c.returns_seed_depth);
    getd("returns.prune_rel", c.returns_prune_rel);
    getd("returns.prune_width", c.returns_prune_width);
    getd("returns.min_element_width", c.returns_min_element_width);
    geti("returns.generation_budget", c.returns_generation_budget);
    getd("returns.residual_fail_frac", c.returns_residual_fail_frac);
    geti("stats.bins", c.bins);
    geti("stats.burn_in", c.burn_in);
    geti("stats.n_push", c.n_push);
    geti("stats.corr_n_max", c.corr_n_max);
    geti("stats.height_cap", c.height_cap);
    gets("stats.phi", c.phi);
    gets("stats.psi", c.psi);
    known.insert("run.seed");
    if (kv.count("run.seed")) c.seed = std::stoull(kv.at("run.seed"));
    geti("run.ensemble", c.ensemble);
    for (auto& [k, v] : kv)
      if (!known.count(k)) throw std::invalid_argument("unknown config key: " + k);
    return c;
  }
};

}  // namespace rlm
