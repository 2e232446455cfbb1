#pragma once
// Full-return partition of Delta* = (-delta_star, delta_star) and the induced
// map F_w = T^tau_w.
//
// Construction: Delta* is tiled by the exponential cells with |r| >= r_star;
// every piece is developed with the escape machinery; at each escape the
// escape interval receives a full-return attempt (a preimage of 0 of minimal
// depth inside the middle core, then leftmost, so the choice depends only on
// the omega entries already consumed); the returning subinterval becomes a
// partition element with tau = escape time + t, and the two flanking
// components re-enter the escape machinery.  Mass that never resolves within
// the caps is reported as residual, broken down by cause.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlm/escape.hpp"

namespace rlm {

struct ReturnOptions {
  double bar_delta = 0.0;  // middle-core length; 0 -> midpoint of (delta_star, delta/5)
  int t_star = 40;
  int n_cap = 70;
  int seed_depth = 14;             // deepest seeded band below r_star
  double prune_rel = 1e-6;         // chop remainder shedding (image fraction)
  double prune_width = 1e-9;       // x-width floor for continuing pieces
  double min_element_width = 0.0;  // thinner returned elements go to residual
  int generation_budget = 0;       // >0: keep only the widest pieces per escape generation
  std::int64_t search_node_budget = 200000;
  std::int64_t max_pieces = 20'000'000;

  double core_length(const PartitionConfig& part) const {
    double bd = bar_delta > 0.0 ? bar_delta : 0.5 * (part.delta_star() + part.delta() / 5.0);
    if (!(bd > part.delta_star() && bd < part.delta() / 5.0))
      throw std::invalid_argument("bar_delta must lie in (delta_star, delta/5)");
    return bd;
  }
};

struct ReturnElement {
  Interval interval;
  int tau;
  int t_post;                        // tau = escapes.back() + t_post
  std::vector<std::int32_t> escapes; // absolute escape times, increasing
  std::int64_t id = -1, ancestor = -1;
};

struct ResidualRecord {
  double mass;
  ResidualKind kind;
  std::vector<std::int32_t> escapes;
};

struct ReturnPartition {
  std::vector<ReturnElement> elements;  // sorted by interval.lo
  double delta_star = 0.0;
  double domain_width = 0.0;  // |Delta*|
  double residual_alive = 0.0, residual_sliver = 0.0, residual_pruned = 0.0;
  double residual_unreturned = 0.0, residual_thin = 0.0;
  std::vector<ResidualRecord> residual_records;
  double beta_min = std::numeric_limits<double>::infinity();
  double min_candidate_abs = std::numeric_limits<double>::infinity();
  int n_cap = 0;
  int unreturned_count = 0;

  double residual_total() const {
    return residual_alive + residual_sliver + residual_pruned + residual_unreturned +
           residual_thin;
  }
  double returned_mass() const {
    double s = 0.0;
    for (const auto& e : elements) s += e.interval.width();
    return s;
  }
};

// ---- preimages of the singularity -----------------------------------------

namespace detail {

inline void collect_preimages(const OmegaSequence& w, int depth, std::vector<double>& out) {
  out.push_back(0.0);
  if (depth == 0) return;
  std::vector<double> inner;
  collect_preimages(w.shifted(1), depth - 1, inner);
  const MapParams& m = w.map_at(0);
  for (double y : inner)
    for (int side : {-1, +1}) {
      try {
        out.push_back(branch_inverse(m, side, y, 1e-12));
      } catch (const NoPreimageError&) {
      }
    }
}

/// Exact-depth preimages of 0 inside the window (lo, hi), found by forward
/// window propagation so the cost scales with the window, not 2^t.
inline bool window_preimages(const OmegaSequence& w, int t, double lo, double hi,
                             std::vector<double>& out, std::int64_t& budget) {
  if (--budget < 0) return false;
  if (t == 0) {
    if (lo <= 0.0 && 0.0 <= hi) out.push_back(0.0);
    return true;
  }
  const MapParams& m = w.map_at(0);
  for (int side : {-1, +1}) {
    double plo = side > 0 ? std::max(lo, 0.0) : lo;
    double phi = side > 0 ? hi : std::min(hi, 0.0);
    if (!(phi > plo)) continue;
    double ilo = std::max(eval_branch(m, side, plo), -kHalf);
    double ihi = std::min(eval_branch(m, side, phi), kHalf);
    if (!(ihi > ilo)) continue;
    std::vector<double> ys;
    if (!window_preimages(w.shifted(1), t - 1, ilo, ihi, ys, budget)) return false;
    for (double y : ys) {
      try {
        double x = branch_inverse(m, side, y, 1e-12);
        if (x >= plo && x <= phi) out.push_back(x);
      } catch (const NoPreimageError&) {
      }
    }
  }
  return true;
}

}  // namespace detail

struct PreimageSet {
  std::vector<double> points;  // sorted, deduplicated
  double max_gap;              // against the endpoints of I
};

/// All x with T^n_w(x) = 0 for some n <= depth.
inline PreimageSet preimages_of_zero(const OmegaSequence& w, int depth) {
  if (depth < 0) throw std::invalid_argument("depth < 0");
  if (depth > 22) throw std::invalid_argument("preimage enumeration capped at depth 22");
  if (depth > w.hi_index() + 1) throw std::out_of_range("omega window shorter than depth");
  std::vector<double> pts;
  detail::collect_preimages(w, depth, pts);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-14; }),
            pts.end());
  double gap = 0.0, prev = -kHalf;
  for (double p : pts) {
    gap = std::max(gap, p - prev);
    prev = p;
  }
  gap = std::max(gap, kHalf - prev);
  return {std::move(pts), gap};
}

// ---- full-return search ----------------------------------------------------

struct FullReturnResult {
  bool ok = false;
  Interval sub{0.0, 0.0};
  int t = 0;
  double beta = 0.0;
  double candidate = 0.0;
  double endpoint_err = 0.0;
  std::string why;
};

/// Search the escape interval J (|J| >= delta, disjoint from Delta0) for a
/// subinterval mapping diffeomorphically onto Delta* within t_star iterates.
/// Candidates are preimages of 0 in the middle core of J, scanned by
/// increasing depth and then from the left; each accepted candidate is
/// verified forward (endpoints within 1e-9 of -/+ delta_star) and must leave
/// flanks longer than delta/5 on both sides.
inline FullReturnResult find_full_return(const OmegaSequence& w, Interval j,
                                         const PartitionConfig& part,
                                         const ReturnOptions& opts) {
  FullReturnResult res;
  double d = part.delta(), ds = part.delta_star();
  if (j.width() < d * (1.0 - 1e-12)) throw std::invalid_argument("escape interval shorter than delta");
  if (j.lo < d && j.hi > -d) throw std::invalid_argument("escape interval meets Delta0");
  if (opts.t_star > w.hi_index() + 1) throw std::out_of_range("omega window shorter than t_star");
  double bar = opts.core_length(part);
  double c_lo = j.mid() - 0.5 * bar, c_hi = j.mid() + 0.5 * bar;
  std::int64_t budget = opts.search_node_budget;
  for (int t = 1; t <= opts.t_star; ++t) {
    std::vector<double> cands;
    if (!detail::window_preimages(w, t, c_lo, c_hi, cands, budget)) {
      res.why = "search budget exhausted";
      return res;
    }
    std::sort(cands.begin(), cands.end());
    for (double xstar : cands) {
      double x = xstar;
      std::vector<int> signs(t);
      bool bad = false;
      for (int k = 0; k < t; ++k) {
        if (std::abs(x) < kSingularGuard) {
          bad = true;
          break;
        }
        signs[k] = x > 0.0 ? +1 : -1;
        x = eval_branch(w.map_at(k), signs[k], x);
      }
      if (bad || std::abs(x) > 0.5 * ds) continue;
      double u_lo = -ds, u_hi = ds;
      bool fail = false;
      for (int k = t - 1; k >= 0 && !fail; --k) {
        try {
          u_lo = branch_inverse(w.map_at(k), signs[k], u_lo);
          u_hi = branch_inverse(w.map_at(k), signs[k], u_hi);
        } catch (const NoPreimageError&) {
          fail = true;
        }
      }
      if (fail || !(u_hi > u_lo)) continue;
      if (!(u_lo > j.lo && u_hi < j.hi)) continue;
      if (!(u_lo - j.lo > d / 5.0 && j.hi - u_hi > d / 5.0)) continue;
      double flo = u_lo, fhi = u_hi;
      for (int k = 0; k < t; ++k) {
        flo = eval_branch(w.map_at(k), signs[k], flo);
        fhi = eval_branch(w.map_at(k), signs[k], fhi);
      }
      double err = std::max(std::abs(flo + ds), std::abs(fhi - ds));
      if (err > 1e-9) continue;
      res.ok = true;
      res.sub = {u_lo, u_hi};
      res.t = t;
      res.beta = (u_hi - u_lo) / j.width();
      res.candidate = xstar;
      res.endpoint_err = err;
      return res;
    }
  }
  res.why = "no admissible preimage within t_star";
  return res;
}

// ---- partition construction ------------------------------------------------

inline ReturnPartition build_return_partition(const OmegaSequence& w,
                                              const PartitionConfig& part,
                                              const ReturnOptions& opts) {
  if (opts.n_cap + opts.t_star > w.hi_index() + 1)
    throw std::out_of_range("omega window shorter than n_cap + t_star");
  opts.core_length(part);  // validates bar_delta

  ReturnPartition out;
  out.delta_star = part.delta_star();
  out.domain_width = 2.0 * part.delta_star();
  out.n_cap = opts.n_cap;

  EscapeOptions mopts;
  mopts.n_cap = opts.n_cap;
  mopts.seed_depth = 25;
  mopts.chop_depth_margin = 30;
  mopts.prune_rel = opts.prune_rel;
  mopts.record_itinerary = false;
  mopts.max_pieces = opts.max_pieces;

  detail::ChopMachine mach(w, part, mopts, part.r0());
  std::vector<detail::Piece> pen;  // next escape generation

  mach.set_sinks(
      [&](detail::Piece&& p) {
        int esc = p.k;
        FullReturnResult fr = find_full_return(w.shifted(esc), {p.y_lo, p.y_hi}, part, opts);
        if (!fr.ok) {
          out.residual_unreturned += p.width();
          ++out.unreturned_count;
          auto h = p.escape_history;
          h.push_back(esc);
          out.residual_records.push_back({p.width(), ResidualKind::Unreturned, std::move(h)});
          return;
        }
        double xa = mach.pullback(p, fr.sub.lo);
        double xb = mach.pullback(p, fr.sub.hi);
        if (xb < xa) std::swap(xa, xb);
        out.beta_min = std::min(out.beta_min, fr.beta);
        out.min_candidate_abs = std::min(out.min_candidate_abs, std::abs(fr.candidate));

        ReturnElement e;
        e.interval = {xa, xb};
        e.tau = esc + fr.t;
        e.t_post = fr.t;
        e.escapes = p.escape_history;
        e.escapes.push_back(esc);
        e.id = p.id;
        e.ancestor = p.ancestor;
        if (e.interval.width() < opts.min_element_width) {
          out.residual_thin += e.interval.width();
          out.residual_records.push_back({e.interval.width(), ResidualKind::Pruned, e.escapes});
        } else {
          out.elements.push_back(std::move(e));
        }

        auto spawn = [&](double xlo, double xhi, double ylo, double yhi) {
          if (!(xhi > xlo) || !(yhi > ylo)) return;
          detail::Piece c{};
          c.id = mach.fresh_id();
          c.ancestor = p.id;
          c.x_lo = xlo;
          c.x_hi = xhi;
          c.y_lo = ylo;
          c.y_hi = yhi;
          c.k = esc;
          c.clock0 = esc;
          c.escape_history = p.escape_history;
          c.escape_history.push_back(esc);
          if (c.width() < opts.prune_width) {
            out.residual_pruned += c.width();
            out.residual_records.push_back({c.width(), ResidualKind::Pruned, c.escape_history});
            return;
          }
          pen.push_back(std::move(c));
        };
        spawn(p.x_lo, detail::up(xa), p.y_lo, fr.sub.lo);
        spawn(detail::dn(xb), p.x_hi, fr.sub.hi, p.y_hi);
      },
      [&](ResidualKind kind, double mass, const detail::Piece& p) {
        switch (kind) {
          case ResidualKind::Alive: out.residual_alive += mass; break;
          case ResidualKind::Sliver: out.residual_sliver += mass; break;
          default: out.residual_pruned += mass; break;
        }
        out.residual_records.push_back({mass, kind, p.escape_history});
      });

  // Seed Delta* with its exponential cells.
  std::vector<detail::Piece> seeds;
  int seed_cap = std::min(part.r_star() + opts.seed_depth, PartitionConfig::kMaxBand - 2);
  double ds = part.delta_star();
  out.residual_sliver +=
      detail::seed_side(mach, seeds, part, +1, 0.0, ds, part.r_star(), seed_cap, false);
  out.residual_sliver +=
      detail::seed_side(mach, seeds, part, -1, 0.0, ds, part.r_star(), seed_cap, false);
  for (auto& s : seeds) mach.push(std::move(s));
  mach.run();

  while (!pen.empty()) {
    std::vector<detail::Piece> gen = std::move(pen);
    pen.clear();
    if (opts.generation_budget > 0 &&
        gen.size() > static_cast<size_t>(opts.generation_budget)) {
      std::sort(gen.begin(), gen.end(), [](const detail::Piece& a, const detail::Piece& b) {
        return a.width() > b.width() || (a.width() == b.width() && a.x_lo < b.x_lo);
      });
      for (size_t i = opts.generation_budget; i < gen.size(); ++i) {
        out.residual_pruned += gen[i].width();
        out.residual_records.push_back(
            {gen[i].width(), ResidualKind::Pruned, gen[i].escape_history});
      }
      gen.resize(opts.generation_budget);
    }
    for (auto& g : gen) mach.push(std::move(g));
    mach.run();
  }

  std::sort(out.elements.begin(), out.elements.end(),
            [](const ReturnElement& a, const ReturnElement& b) {
              return a.interval.lo < b.interval.lo ||
                     (a.interval.lo == b.interval.lo && a.interval.hi < b.interval.hi);
            });
  return out;
}

// ---- tails ------------------------------------------------------------------

/// Mass of {tau > n} including everything unresolved.
inline double return_tail(const ReturnPartition& q, int n) {
  double s = q.residual_total();
  for (const auto& e : q.elements)
    if (e.tau > n) s += e.interval.width();
  return s;
}

inline TailFit fit_return_tail(const ReturnPartition& q, int n_lo, int n_hi) {
  int max_tau = q.n_cap;
  for (const auto& e : q.elements) max_tau = std::max(max_tau, e.tau);
  std::vector<double> mass_at(max_tau + 2, 0.0);
  for (const auto& e : q.elements) mass_at[e.tau] += e.interval.width();
  // tail[n] = residual + sum over tau > n
  std::vector<double> tail(max_tau + 2, q.residual_total());
  for (int n = max_tau; n >= 0; --n) tail[n] = tail[n + 1] + mass_at[n + 1];
  std::vector<std::pair<int, double>> pts;
  for (int n = std::max(0, n_lo); n <= std::min(n_hi, max_tau); ++n) pts.emplace_back(n, tail[n]);
  return fit_exponential_tail(pts);
}

/// Mass of returned elements with exactly i escapes whose return is after n.
inline double escape_history_tail(const ReturnPartition& q, int i, int n) {
  double s = 0.0;
  for (const auto& e : q.elements)
    if (static_cast<int>(e.escapes.size()) == i && e.tau > n) s += e.interval.width();
  return s;
}

// ---- the induced map --------------------------------------------------------

/// Index of the element containing x, or nullopt (residual gap).
inline std::optional<size_t> locate_element(const ReturnPartition& q, double x) {
  auto it = std::upper_bound(q.elements.begin(), q.elements.end(), x,
                             [](double v, const ReturnElement& e) { return v < e.interval.lo; });
  if (it == q.elements.begin()) return std::nullopt;
  --it;
  if (x >= it->interval.lo && x <= it->interval.hi)
    return static_cast<size_t>(it - q.elements.begin());
  return std::nullopt;
}

struct InducedImage {
  double y;
  int tau;
  size_t element;
};

/// F_w(x) = T^{tau(x)}_w(x); throws for points in the residual set.
inline InducedImage induced_apply(const OmegaSequence& w, double x, const ReturnPartition& q) {
  auto idx = locate_element(q, x);
  if (!idx) throw std::domain_error("point does not lie in a return element");
  const ReturnElement& e = q.elements[*idx];
  double y = compose(w, x, e.tau).back();
  return {y, e.tau, *idx};
}

/// Builds and memoizes return partitions for shifted fibers.
class ReturnPartitionCache {
 public:
  ReturnPartitionCache(OmegaSequence w, PartitionConfig part, ReturnOptions opts)
      : w_(std::move(w)), part_(std::move(part)), opts_(std::move(opts)) {}

  const ReturnPartition& at_shift(int s) {
    auto it = cache_.find(s);
    if (it != cache_.end()) return *it->second;
    auto q = std::make_shared<ReturnPartition>(
        build_return_partition(w_.shifted(s), part_, opts_));
    return *cache_.emplace(s, std::move(q)).first->second;
  }
  const OmegaSequence& omega() const { return w_; }
  const PartitionConfig& part() const { return part_; }

 private:
  OmegaSequence w_;
  PartitionConfig part_;
  ReturnOptions opts_;
  std::map<int, std::shared_ptr<const ReturnPartition>> cache_;
};

struct SeparationResult {
  int s = 0;
  bool censored = false;
  long tower_steps = 0;  // sum of tau along the way (tower separation time)
};

/// First induced iterate at which x and y lie in different elements,
/// starting from the fiber shifted by `shift`.
inline SeparationResult separation_time(ReturnPartitionCache& cache, int shift, double x, double y,
                                        int cap) {
  SeparationResult r;
  for (int n = 0; n < cap; ++n) {
    const ReturnPartition& q = cache.at_shift(shift);
    auto ix = locate_element(q, x), iy = locate_element(q, y);
    if (!ix || !iy) {
      r.s = n;
      r.censored = true;
      return r;
    }
    if (*ix != *iy) {
      r.s = n;
      return r;
    }
    int tau = q.elements[*ix].tau;
    x = compose(cache.omega().shifted(shift), x, tau).back();
    y = compose(cache.omega().shifted(shift), y, tau).back();
    shift += tau;
    r.tower_steps += tau;
  }
  r.s = cap;
  r.censored = true;
  return r;
}

struct InducedDistortionReport {
  bool pass = false;
  double d_tilde = 0.0;
  double beta_hat = 0.0;
  double r2 = 0.0;
  std::vector<double> envelope;  // s -> max |log DF(x)/DF(y)|
  int pairs = 0;
  int censored = 0;
  bool all_zero = false;
};

/// Envelope of |log DF(x)/DF(y)| against the separation time of the images,
/// fitted geometrically.
inline InducedDistortionReport check_induced_distortion(ReturnPartitionCache& cache,
                                                        int element_samples = 64,
                                                        int pairs_per_element = 3,
                                                        int sep_cap = 8) {
  const ReturnPartition& q = cache.at_shift(0);
  InducedDistortionReport rep;
  rep.envelope.assign(sep_cap + 1, 0.0);
  if (q.elements.empty()) return rep;
  size_t stride = std::max<size_t>(1, q.elements.size() / element_samples);
  std::uint64_t rng = 0x9e3779b9;
  for (size_t i = 0; i < q.elements.size(); i += stride) {
    const ReturnElement& e = q.elements[i];
    for (int p = 0; p < pairs_per_element; ++p) {
      rng = splitmix64(rng);
      double u1 = 0.1 + 0.8 * unit_from_bits(rng);
      rng = splitmix64(rng);
      double u2 = 0.1 + 0.8 * unit_from_bits(rng);
      if (p == 0) {
        u1 = 0.02;
        u2 = 0.98;
      }
      double x = e.interval.lo + u1 * e.interval.width();
      double y = e.interval.lo + u2 * e.interval.width();
      if (x == y) continue;
      double lx, ly, fx, fy;
      try {
        lx = orbit_log_derivative(cache.omega(), x, e.tau);
        ly = orbit_log_derivative(cache.omega(), y, e.tau);
        fx = compose(cache.omega(), x, e.tau).back();
        fy = compose(cache.omega(), y, e.tau).back();
      } catch (const SingularOrbitError&) {
        continue;
      }
      SeparationResult sr = separation_time(cache, e.tau, fx, fy, sep_cap);
      ++rep.pairs;
      if (sr.censored) {
        ++rep.censored;
        continue;
      }
      rep.envelope[sr.s] = std::max(rep.envelope[sr.s], std::abs(lx - ly));
    }
  }
  std::vector<std::pair<int, double>> pts;
  for (int s = 0; s <= sep_cap; ++s)
    if (rep.envelope[s] > 0.0) pts.emplace_back(s, rep.envelope[s]);
  if (pts.empty()) {
    rep.all_zero = true;
    rep.pass = true;  // flat maps: zero distortion, any geometric envelope works
    return rep;
  }
  TailFit fit = fit_exponential_tail(pts, 2);
  if (fit.ok) {
    rep.d_tilde = fit.c;
    rep.beta_hat = std::exp(-fit.rate);
    rep.r2 = fit.r2;
    rep.pass = rep.beta_hat > 0.0 && rep.beta_hat < 1.0;
  }
  return rep;
}

struct MarkovReport {
  double max_endpoint_err = 0.0;
  bool monotone_ok = true;
  int checked = 0;
  int unverifiable = 0;
};

/// Endpoint images of every element under T^tau against -/+ delta_star.
inline MarkovReport verify_markov(const OmegaSequence& w, const ReturnPartition& q) {
  MarkovReport rep;
  for (const auto& e : q.elements) {
    double ylo, yhi;
    try {
      ylo = compose(w, e.interval.lo, e.tau).back();
      yhi = compose(w, e.interval.hi, e.tau).back();
    } catch (const SingularOrbitError&) {
      ++rep.unverifiable;
      continue;
    }
    ++rep.checked;
    if (!(yhi > ylo)) rep.monotone_ok = false;
    rep.max_endpoint_err = std::max(
        rep.max_endpoint_err,
        std::max(std::abs(ylo + q.delta_star), std::abs(yhi - q.delta_star)));
  }
  return rep;
}

/// True when the elements with tau <= n coincide bit-exactly between the
/// partition for w and the partition rebuilt under w_prime.
inline bool check_stopping_time(const ReturnPartition& base, const OmegaSequence& w_prime,
                                const PartitionConfig& part, const ReturnOptions& opts, int n) {
  ReturnPartition other = build_return_partition(w_prime, part, opts);
  auto pick = [n](const ReturnPartition& q) {
    std::vector<std::tuple<double, double, int>> v;
    for (const auto& e : q.elements)
      if (e.tau <= n) v.emplace_back(e.interval.lo, e.interval.hi, e.tau);
    std::sort(v.begin(), v.end());
    return v;
  };
  return pick(base) == pick(other);
}

struct AperiodicityReport {
  std::vector<int> taus;    // realized return times with mass on every sample
  std::vector<double> eps;  // minimal realized mass per tau across samples
  long long gcd = 0;
  bool pass = false;
};

inline AperiodicityReport check_aperiodicity(const std::vector<const ReturnPartition*>& parts) {
  if (parts.empty()) throw std::invalid_argument("no partitions supplied");
  std::map<int, double> common;
  bool first = true;
  for (const ReturnPartition* q : parts) {
    std::map<int, double> mass;
    for (const auto& e : q->elements) mass[e.tau] += e.interval.width();
    if (first) {
      common = std::move(mass);
      first = false;
    } else {
      for (auto it = common.begin(); it != common.end();) {
        auto jt = mass.find(it->first);
        if (jt == mass.end()) {
          it = common.erase(it);
        } else {
          it->second = std::min(it->second, jt->second);
          ++it;
        }
      }
    }
  }
  AperiodicityReport rep;
  for (auto& [tau, eps] : common)
    if (eps > 0.0) {
      rep.taus.push_back(tau);
      rep.eps.push_back(eps);
    }
  long long g = 0;
  for (int t : rep.taus) g = std::gcd(g, static_cast<long long>(t));
  rep.gcd = g;
  rep.pass = g == 1;
  return rep;
}

}  // namespace rlm
