#pragma once
// The random tower over Delta*: level ell at fiber w holds the points of the
// fiber sigma^-ell(w) whose return time exceeds ell.  The tower map climbs
// one level per step and drops to level 0 through the induced map at the top.
// The projection pi(x, ell) = T^ell_{sigma^-ell w}(x) intertwines the tower
// map with the underlying dynamics.

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rlm/returns.hpp"

namespace rlm {

struct TowerPoint {
  double x;
  int level;
};

struct Tower {
  // fibers[l] is the return partition of sigma^-l(w)
  std::vector<std::shared_ptr<const ReturnPartition>> fibers;
  int height_cap = 0;
  std::vector<double> level_mass;  // m({tau_{sigma^-l w} > l}) for l < height_cap
  double total_mass = 0.0;
  double truncation_mass = 0.0;  // return_tail at the cap on the top fiber
};

inline Tower build_tower(std::vector<std::shared_ptr<const ReturnPartition>> fibers,
                         int height_cap) {
  if (height_cap < 1) throw std::invalid_argument("height_cap < 1");
  if (static_cast<int>(fibers.size()) < height_cap)
    throw std::invalid_argument("need a fiber partition per level");
  Tower t;
  t.fibers = std::move(fibers);
  t.height_cap = height_cap;
  t.level_mass.resize(height_cap);
  for (int l = 0; l < height_cap; ++l) {
    t.level_mass[l] = return_tail(*t.fibers[l], l);
    t.total_mass += t.level_mass[l];
  }
  t.truncation_mass = return_tail(*t.fibers[height_cap - 1], height_cap - 1);
  return t;
}

/// Convenience: builds the needed fiber partitions of sigma^-l(w) itself.
inline Tower build_tower(const OmegaSequence& w, const PartitionConfig& part,
                         const ReturnOptions& opts, int height_cap) {
  std::vector<std::shared_ptr<const ReturnPartition>> fibers;
  fibers.reserve(height_cap);
  for (int l = 0; l < height_cap; ++l)
    fibers.push_back(
        std::make_shared<ReturnPartition>(build_return_partition(w.shifted(-l), part, opts)));
  return build_tower(std::move(fibers), height_cap);
}

/// One step of the tower map at fiber w.
inline TowerPoint tower_step(const Tower& t, const OmegaSequence& w, TowerPoint pt) {
  if (pt.level < 0 || pt.level >= t.height_cap)
    throw std::invalid_argument("tower level out of range");
  const ReturnPartition& q = *t.fibers[pt.level];
  auto idx = locate_element(q, pt.x);
  if (!idx) throw std::invalid_argument("tower point does not lie in a return element");
  int tau = q.elements[*idx].tau;
  if (pt.level > tau - 1) throw std::invalid_argument("tower point above its column");
  if (pt.level + 1 < tau) return {pt.x, pt.level + 1};
  double y = compose(w.shifted(-pt.level), pt.x, tau).back();
  return {y, 0};
}

/// pi(x, ell) = T^ell applied from the fiber ell steps in the past.
inline double project(const OmegaSequence& w, TowerPoint pt) {
  if (pt.level < 0) throw std::invalid_argument("negative tower level");
  return compose(w.shifted(-pt.level), pt.x, pt.level).back();
}

struct TowerConditionItem {
  std::string name;
  bool pass;
  double value;
  std::string note;
};

struct TowerConditionsReport {
  std::vector<TowerConditionItem> items;
  bool all_pass = true;
  void add(std::string name, bool pass, double value, std::string note = "") {
    all_pass = all_pass && pass;
    items.push_back({std::move(name), pass, value, std::move(note)});
  }
};

/// Maximum element width of the n-fold refinement of the induced partition
/// (cylinders of the induced map), computed by pulling refinement endpoints
/// back with bisection along the monotone branch T^tau restricted to each
/// cylinder.
inline std::vector<double> joined_partition_diameters(ReturnPartitionCache& cache, int depth,
                                                      int max_cylinders = 4000) {
  struct Cyl {
    double lo, hi;
    int shift;
  };
  const ReturnPartition& q0 = cache.at_shift(0);
  std::vector<Cyl> cur;
  for (const auto& e : q0.elements) {
    cur.push_back({e.interval.lo, e.interval.hi, e.tau});
    if (static_cast<int>(cur.size()) >= max_cylinders) break;
  }
  std::vector<double> diam;
  auto width_max = [](const std::vector<Cyl>& v) {
    double m = 0.0;
    for (const auto& c : v) m = std::max(m, c.hi - c.lo);
    return m;
  };
  diam.push_back(width_max(cur));
  for (int n = 1; n < depth; ++n) {
    std::vector<Cyl> next;
    for (const auto& c : cur) {
      // forward map of the cylinder endpoints under the accumulated tau
      const OmegaSequence& w = cache.omega();
      double flo, fhi;
      try {
        flo = compose(w, c.lo, c.shift).back();
        fhi = compose(w, c.hi, c.shift).back();
      } catch (const SingularOrbitError&) {
        continue;
      }
      const ReturnPartition& q = cache.at_shift(c.shift);
      auto invert = [&](double target) {
        double lo = c.lo, hi = c.hi;
        for (int it = 0; it < 200; ++it) {
          double mid = 0.5 * (lo + hi);
          double v;
          try {
            v = compose(w, mid, c.shift).back();
          } catch (const SingularOrbitError&) {
            v = target;  // give up on this probe, stop refining
            return mid;
          }
          (v < target ? lo : hi) = mid;
          if (hi - lo < 1e-300 || hi <= std::nextafter(lo, hi)) break;
        }
        return 0.5 * (lo + hi);
      };
      for (const auto& e : q.elements) {
        double a = std::max(e.interval.lo, flo), b = std::min(e.interval.hi, fhi);
        if (!(b > a)) continue;
        double xa = a <= flo ? c.lo : invert(a);
        double xb = b >= fhi ? c.hi : invert(b);
        if (xb > xa) next.push_back({xa, xb, c.shift + e.tau});
        if (static_cast<int>(next.size()) >= max_cylinders) break;
      }
      if (static_cast<int>(next.size()) >= max_cylinders) break;
    }
    if (next.empty()) break;
    diam.push_back(width_max(next));
    cur = std::move(next);
  }
  return diam;
}

/// Aggregated checks of the tower axioms on the computed partitions:
/// return-time floor and separation recursion, Markov property, distortion
/// envelope, refinement diameters, tail fit, aperiodicity.
inline TowerConditionsReport check_tower_conditions(
    const Tower& tower, ReturnPartitionCache& cache,
    const std::vector<const ReturnPartition*>& aperiodicity_samples, int tail_fit_lo,
    int tail_fit_hi) {
  TowerConditionsReport rep;
  const ReturnPartition& q = *tower.fibers[0];

  // C1: tau >= 1 on every element, and the separation recursion
  // s(x,y) = tau + s(F x, F y) on sampled same-element pairs.
  int min_tau = q.elements.empty() ? 0 : q.elements.front().tau;
  for (const auto& e : q.elements) min_tau = std::min(min_tau, e.tau);
  bool c1 = !q.elements.empty() && min_tau >= 1;
  int rec_checked = 0;
  bool rec_ok = true;
  size_t stride = std::max<size_t>(1, q.elements.size() / 16);
  for (size_t i = 0; i < q.elements.size() && rec_checked < 12; i += stride) {
    const auto& e = q.elements[i];
    double x = e.interval.lo + 0.25 * e.interval.width();
    double y = e.interval.lo + 0.75 * e.interval.width();
    SeparationResult whole = separation_time(cache, 0, x, y, 8);
    if (whole.censored) continue;
    double fx, fy;
    try {
      fx = compose(cache.omega(), x, e.tau).back();
      fy = compose(cache.omega(), y, e.tau).back();
    } catch (const SingularOrbitError&) {
      continue;
    }
    SeparationResult rest = separation_time(cache, e.tau, fx, fy, 8);
    if (rest.censored) continue;
    ++rec_checked;
    if (whole.s != rest.s + 1 || whole.tower_steps != rest.tower_steps + e.tau) rec_ok = false;
  }
  rep.add("C1 return/separation", c1 && rec_ok, static_cast<double>(min_tau),
          rec_checked ? "recursion spot-checked" : "recursion unchecked (censored)");

  // C2: Markov property.
  MarkovReport mk = verify_markov(cache.omega(), q);
  rep.add("C2 markov", mk.monotone_ok && mk.max_endpoint_err <= 1e-9, mk.max_endpoint_err);

  // C3: bounded distortion in separation time.
  InducedDistortionReport dist = check_induced_distortion(cache);
  rep.add("C3 distortion", dist.pass, dist.all_zero ? 0.0 : dist.beta_hat,
          dist.all_zero ? "zero log-ratios" : "geometric envelope");

  // C4: refinement diameters decrease.
  std::vector<double> diam = joined_partition_diameters(cache, 4);
  bool c4 = diam.size() >= 2;
  for (size_t i = 1; i < diam.size(); ++i) c4 = c4 && diam[i] < diam[i - 1];
  rep.add("C4 refinement", c4, diam.empty() ? 0.0 : diam.back());

  // C5: exponential return tails (censoring reported, not failed).
  TailFit tf = fit_return_tail(q, tail_fit_lo, tail_fit_hi);
  double censored_frac = q.residual_total() / q.domain_width;
  rep.add("C5 return tails", tf.ok && tf.rate > 0.0, tf.rate,
          censored_frac > 1e-4 ? "censored at n_cap: residual fraction " +
                                     std::to_string(censored_frac)
                               : "");

  // C6: aperiodicity.
  AperiodicityReport ap = check_aperiodicity(aperiodicity_samples);
  rep.add("C6 aperiodicity", ap.pass, static_cast<double>(ap.gcd));
  return rep;
}

}  // namespace rlm
