#pragma once
// Escape partitions via interval chopping.
//
// A piece carries its subinterval of the starting frame in original
// coordinates together with the current image (the composition is increasing
// on every piece, so images are tracked by their endpoints) and the branch
// taken at every past step.  At each time the image is classified:
//
//   * disjoint from Delta0 and >= delta long  -> the piece escapes;
//   * disjoint and short                      -> free iterate;
//   * meets Delta0, short, within <= 3 cells  -> return recorded, no cut;
//   * otherwise                               -> cut along cell boundaries,
//     partial extreme fragments merged into their neighbouring full cell, so
//     each child's image is sandwiched between one cell and the cell plus
//     its neighbours.  Portions sticking out of Delta0 become free children.
//
// Images straddling the singularity are cut at the preimage of 0 first.
// Cuts are pulled back through the branch history, with endpoints rounded
// outward by one ulp so no orbit is lost between siblings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlm/map_family.hpp"
#include "rlm/omega.hpp"
#include "rlm/partition.hpp"
#include "rlm/tail_fit.hpp"

namespace rlm {

enum class EventKind { Free, InessentialReturn, EssentialReturn, Escape };

struct ItineraryEvent {
  int time;
  EventKind kind;
  int depth;  // signed band index at returns, 0 otherwise
  Interval image;
};

struct EscapeElement {
  Interval interval;       // subinterval of the starting frame
  int escape_time;         // E
  long total_depth;        // R, sum of |r| over recorded returns
  int num_returns;
  int seed_band;           // |r| of the seeding cell, 0 for a free start
  Interval escape_image;   // T^E of the interval
  std::int64_t id = -1, ancestor = -1;
  std::vector<ItineraryEvent> itinerary;  // empty unless recording was on
};

enum class ResidualKind { Alive, Sliver, Pruned, Unreturned };

struct EscapeOptions {
  int n_cap = 200;
  int seed_depth = 25;        // deepest seeded band below the partition base
  int chop_depth_margin = 30; // chop cuts descend this far below the seeds
  double prune_rel = 1e-9;    // shed chop remainders below this image fraction
  bool record_itinerary = true;
  std::int64_t max_pieces = 50'000'000;
};

namespace detail {

struct Piece {
  double x_lo, x_hi;  // original coordinates
  double y_lo, y_hi;  // current image
  int k = 0;          // current time
  int clock0 = 0;     // escapes are eligible for k > clock0
  long depth_sum = 0;
  int returns = 0;
  int seed_band = 0;
  std::int64_t id = 0, ancestor = -1;
  std::vector<std::int8_t> signs;             // branch per past step
  std::vector<ItineraryEvent> events;         // only when recording
  std::vector<std::int32_t> escape_history;   // completed escape times
  double width() const { return x_hi - x_lo; }
};

inline double up(double v) { return std::nextafter(v, std::numeric_limits<double>::infinity()); }
inline double dn(double v) { return std::nextafter(v, -std::numeric_limits<double>::infinity()); }

/// Driver for the chopping algorithm.  Escaped pieces and shed mass are
/// handed to callbacks so the same machinery serves both the escape and the
/// full-return constructions.
class ChopMachine {
 public:
  using EscapeFn = std::function<void(Piece&&)>;
  using ResidualFn = std::function<void(ResidualKind, double, const Piece&)>;

  ChopMachine(const OmegaSequence& w, const PartitionConfig& part, const EscapeOptions& opts,
              int base_band)
      : w_(w), part_(part), opts_(opts) {
    depth_cap_ = std::min(base_band + opts.seed_depth + opts.chop_depth_margin,
                          PartitionConfig::kMaxBand - 2);
    seed_cap_ = std::min(base_band + opts.seed_depth, PartitionConfig::kMaxBand - 2);
  }

  void set_sinks(EscapeFn esc, ResidualFn res) {
    on_escape_ = std::move(esc);
    on_residual_ = std::move(res);
  }

  std::int64_t fresh_id() { return next_id_++; }
  int seed_cap() const { return seed_cap_; }
  std::int64_t pieces_created() const { return next_id_; }

  void push(Piece&& p) {
    if (next_id_ > opts_.max_pieces) throw std::runtime_error("piece budget exceeded");
    stack_.push_back(std::move(p));
  }

  /// Route a piece whose image was just (re)formed at its current time.
  /// May emit, shed, cut, or keep it active.
  void route(Piece&& p) {
    if (p.y_lo < 0.0 && p.y_hi > 0.0) {
      split_at_singularity(std::move(p));
      return;
    }
    double d = part_.delta();
    bool meets = p.y_lo < d && p.y_hi > -d;
    double width = p.y_hi - p.y_lo;
    if (!meets) {
      if (p.k > p.clock0 && width >= d) {
        emit(std::move(p));
      } else {
        push(std::move(p));  // free iterate
      }
      return;
    }
    if (width < d && spanned_cell_count({p.y_lo, p.y_hi}, part_, 3) <= 3) {
      record_return(p, EventKind::InessentialReturn, inessential_depth(p));
      push(std::move(p));
      return;
    }
    chop(std::move(p));
  }

  void run() {
    while (!stack_.empty()) {
      Piece p = std::move(stack_.back());
      stack_.pop_back();
      if (p.k >= opts_.n_cap) {
        on_residual_(ResidualKind::Alive, p.width(), p);
        continue;
      }
      step(p);   // advances one iterate, then routes
    }
  }

  double pullback(const Piece& p, double y) const {
    for (int j = p.k - 1; j >= 0; --j)
      y = branch_inverse(w_.map_at(j), static_cast<int>(p.signs[j]), y);
    return y;
  }

 private:
  void step(Piece& p) {
    int side = (p.y_lo + p.y_hi >= 0.0) ? +1 : -1;
    if (p.y_lo < 0.0 && p.y_hi > 0.0)
      throw std::logic_error("piece image straddles the singularity at step time");
    const MapParams& m = w_.map_at(p.k);
    double ylo = eval_branch(m, side, p.y_lo);
    double yhi = eval_branch(m, side, p.y_hi);
    p.signs.push_back(static_cast<std::int8_t>(side));
    p.k += 1;
    p.y_lo = ylo;
    p.y_hi = yhi;
    route(std::move(p));
  }

  void emit(Piece&& p) { on_escape_(std::move(p)); }

  int inessential_depth(const Piece& p) const {
    double top = p.y_hi > 0.0 ? std::min(p.y_hi, part_.delta()) : std::min(-p.y_lo, part_.delta());
    int band = part_.band_of_upper(top);
    return p.y_hi > 0.0 ? band : -band;
  }

  void record_return(Piece& p, EventKind kind, int depth) {
    p.depth_sum += std::abs(depth);
    p.returns += 1;
    if (opts_.record_itinerary)
      p.events.push_back({p.k, kind, depth, {p.y_lo, p.y_hi}});
  }

  Piece child_of(const Piece& p) {
    Piece c = p;
    c.ancestor = p.id;
    c.id = fresh_id();
    return c;
  }

  void split_at_singularity(Piece&& p) {
    double xc = pullback(p, 0.0);
    xc = std::clamp(xc, p.x_lo, p.x_hi);
    Piece neg = child_of(p);
    neg.x_hi = std::min(up(xc), p.x_hi);
    neg.y_hi = 0.0;
    Piece pos = child_of(p);
    pos.x_lo = std::max(dn(xc), p.x_lo);
    pos.y_lo = 0.0;
    route(std::move(neg));
    route(std::move(pos));
  }

  // Cut a one-sided image meeting Delta0 along cell boundaries.
  void chop(Piece&& p) {
    int side = p.y_hi > 0.0 ? +1 : -1;
    double g_lo = side > 0 ? std::max(p.y_lo, 0.0) : std::max(-p.y_hi, 0.0);
    double g_hi = side > 0 ? p.y_hi : -p.y_lo;
    double d = part_.delta();
    double v_width = p.y_hi - p.y_lo;
    double in_hi = std::min(g_hi, d);

    // Magnitude cuts, ascending; optionally a shed floor below which the
    // remainder is handed to the residual sinks.
    std::vector<double> cuts;
    double floor_mag = g_lo;
    ResidualKind shed_kind = ResidualKind::Sliver;
    bool shed = false;

    bool few_cells = spanned_cell_count({p.y_lo, p.y_hi}, part_, 3) <= 3;
    if (!few_cells) {
      std::vector<double> desc;  // collected top-down
      int r = part_.band_of_upper(in_hi);
      for (;;) {
        double top = std::min(in_hi, part_.band_top(r));
        double rem = top - g_lo;
        if (rem <= 0.0) break;
        if (r > depth_cap_) {
          floor_mag = top;
          shed = true;
          shed_kind = ResidualKind::Sliver;
          break;
        }
        if (rem < opts_.prune_rel * v_width) {
          floor_mag = top;
          shed = true;
          shed_kind = ResidualKind::Pruned;
          break;
        }
        double blo = part_.band_top(r + 1);
        double seg_lo = std::max(g_lo, blo);
        std::int64_t M = part_.cells_in_band(r);
        double w = (part_.band_top(r) - blo) / M;
        auto j_hi = static_cast<std::int64_t>(std::ceil((top - blo) / w)) - 1;
        j_hi = std::min(std::max<std::int64_t>(j_hi, 0), M - 1);
        while (j_hi < M - 1 && part_.cell_boundary(r, j_hi + 1) < top) ++j_hi;
        while (j_hi > 0 && part_.cell_boundary(r, j_hi) >= top) --j_hi;
        for (std::int64_t j = j_hi; j >= 1; --j) {
          double cb = part_.cell_boundary(r, j);
          if (cb <= seg_lo) break;
          if (cb < top) desc.push_back(cb);
        }
        if (g_lo >= blo) break;
        if (g_lo < blo && blo > 0.0 && blo < top) desc.push_back(blo);  // band boundary
        ++r;
      }
      cuts.assign(desc.rbegin(), desc.rend());
      // Merge partial extreme fragments into their neighbouring full cell.
      const double tol = 1e-9;
      if (!cuts.empty() && !shed) {
        double c0 = cuts.front();
        int rb = part_.band_of_upper(c0);
        std::int64_t Mb = part_.cells_in_band(rb);
        double blo = part_.band_top(rb + 1);
        double wb = (part_.band_top(rb) - blo) / Mb;
        auto j = static_cast<std::int64_t>(std::llround((c0 - blo) / wb));
        double below = part_.cell_boundary(rb, std::max<std::int64_t>(j - 1, 0));
        if (j >= 1 && floor_mag - below > tol * wb) cuts.erase(cuts.begin());
      }
      if (!cuts.empty()) {
        double cn = cuts.back();
        int rb = part_.band_of(cn);
        std::int64_t Mb = part_.cells_in_band(rb);
        double blo = part_.band_top(rb + 1);
        double wb = (part_.band_top(rb) - blo) / Mb;
        auto j = static_cast<std::int64_t>(std::llround((cn - blo) / wb));
        double above = part_.cell_boundary(rb, std::min(j + 1, Mb));
        if (above - in_hi > tol * wb) cuts.pop_back();
      }
    }

    // Assemble the magnitude segments, ascending: [shedded] [children...] [overhang].
    struct Seg {
      double lo, hi;
      enum { Shed, Child, Over } kind;
    };
    std::vector<Seg> segs;
    if (shed && floor_mag > g_lo) segs.push_back({g_lo, floor_mag, Seg::Shed});
    double prev = shed ? floor_mag : g_lo;
    for (double c : cuts) {
      segs.push_back({prev, c, Seg::Child});
      prev = c;
    }
    segs.push_back({prev, in_hi, Seg::Child});
    if (g_hi > in_hi) segs.push_back({in_hi, g_hi, Seg::Over});

    // Signed y-cuts ascending in y; extreme endpoints reuse the parent's.
    std::vector<double> ycuts;
    for (size_t i = 0; i + 1 < segs.size(); ++i)
      ycuts.push_back(side > 0 ? segs[i].hi : -segs[i].hi);
    if (side < 0) std::reverse(ycuts.begin(), ycuts.end());
    std::vector<double> xcuts(ycuts.size());
    for (size_t i = 0; i < ycuts.size(); ++i) xcuts[i] = pullback(p, ycuts[i]);
    for (size_t i = 1; i < xcuts.size(); ++i) xcuts[i] = std::max(xcuts[i], xcuts[i - 1]);

    auto segment_x = [&](size_t idx, double& xa, double& xb) {
      // idx-th segment in ascending y order
      size_t n = segs.size();
      size_t yi = side > 0 ? idx : n - 1 - idx;
      (void)yi;
      double a = idx == 0 ? p.x_lo : std::max(dn(xcuts[idx - 1]), p.x_lo);
      double b = idx + 1 == n ? p.x_hi : std::min(up(xcuts[idx]), p.x_hi);
      xa = a;
      xb = b;
    };

    size_t n = segs.size();
    for (size_t idx = 0; idx < n; ++idx) {
      const Seg& s = side > 0 ? segs[idx] : segs[n - 1 - idx];
      double xa, xb;
      segment_x(idx, xa, xb);
      if (!(xb > xa)) continue;
      double ya = side > 0 ? s.lo : -s.hi;
      double yb = side > 0 ? s.hi : -s.lo;
      if (s.kind == Seg::Shed) {
        Piece ghost = p;
        ghost.x_lo = xa;
        ghost.x_hi = xb;
        on_residual_(shed_kind, xb - xa, ghost);
        continue;
      }
      Piece c = child_of(p);
      c.x_lo = xa;
      c.x_hi = xb;
      c.y_lo = ya;
      c.y_hi = yb;
      if (s.kind == Seg::Child) {
        int band = part_.band_of_upper(s.hi);
        record_return(c, EventKind::EssentialReturn, side > 0 ? band : -band);
        push(std::move(c));
      } else {
        route(std::move(c));  // free overhang: may escape immediately
      }
    }
  }

  const OmegaSequence& w_;
  PartitionConfig part_;
  EscapeOptions opts_;
  int depth_cap_, seed_cap_;
  std::int64_t next_id_ = 0;
  std::vector<Piece> stack_;
  EscapeFn on_escape_;
  ResidualFn on_residual_;
};

/// Tile the magnitudes (g_lo, g_hi) of one side with cells of bands
/// base_band..seed_cap; each clipped cell becomes a seed piece carrying a
/// time-0 return event of its band. Returns the leftover deep sliver mass.
inline double seed_side(ChopMachine& mach, std::vector<Piece>& out, const PartitionConfig& part,
                        int side, double g_lo, double g_hi, int base_band, int seed_cap,
                        bool record) {
  double sliver = 0.0;
  double floor_mag = part.band_top(seed_cap + 1);
  if (g_lo < floor_mag) {
    sliver = std::min(floor_mag, g_hi) - g_lo;
    if (sliver < 0.0) sliver = 0.0;
    g_lo = floor_mag;
  }
  if (!(g_hi > g_lo)) return sliver;
  for (int r = base_band; r <= seed_cap; ++r) {
    double blo = part.band_top(r + 1), bhi = part.band_top(r);
    double seg_lo = std::max(g_lo, blo), seg_hi = std::min(g_hi, bhi);
    if (!(seg_hi > seg_lo)) continue;
    std::int64_t M = part.cells_in_band(r);
    for (std::int64_t m = 1; m <= M; ++m) {
      double clo = part.cell_boundary(r, m - 1), chi = part.cell_boundary(r, m);
      double lo = std::max(clo, seg_lo), hi = std::min(chi, seg_hi);
      if (!(hi > lo)) continue;
      Piece p{};
      p.id = mach.fresh_id();
      p.x_lo = side > 0 ? lo : -hi;
      p.x_hi = side > 0 ? hi : -lo;
      p.y_lo = p.x_lo;
      p.y_hi = p.x_hi;
      p.k = 0;
      p.clock0 = 0;
      p.seed_band = r;
      p.depth_sum = r;
      p.returns = 1;
      if (record)
        p.events.push_back({0, EventKind::EssentialReturn, side > 0 ? r : -r, {p.x_lo, p.x_hi}});
      out.push_back(std::move(p));
    }
  }
  return sliver;
}

}  // namespace detail

struct EscapeResult {
  std::vector<EscapeElement> elements;
  double residual_alive = 0.0;
  double residual_sliver = 0.0;
  double residual_pruned = 0.0;
  double j0_width = 0.0;
  int n_cap = 0;
  double residual_total() const { return residual_alive + residual_sliver + residual_pruned; }
};

/// Escape partition of J0.  J0 is either disjoint from Delta0 (a free
/// interval, expected to be at least delta/5 long) or contained in the
/// closure of Delta0 (in particular J0 = Delta0 itself), in which case it is
/// tiled by the exponential cells first.
inline EscapeResult build_escape_partition(const OmegaSequence& w, Interval j0,
                                           const PartitionConfig& cfg,
                                           const EscapeOptions& opts = {}) {
  if (!(j0.hi > j0.lo)) throw std::invalid_argument("empty starting interval");
  if (opts.n_cap > w.hi_index() + 1)
    throw std::out_of_range("omega window shorter than the time cap");
  double d = cfg.delta();
  bool meets = j0.lo < d && j0.hi > -d;
  bool inside = j0.lo >= -d - 1e-15 && j0.hi <= d + 1e-15;
  if (meets && !inside)
    throw std::invalid_argument("starting interval partially overlaps Delta0");

  EscapeResult res;
  res.j0_width = j0.width();
  res.n_cap = opts.n_cap;

  detail::ChopMachine mach(w, cfg, opts, cfg.r0());
  mach.set_sinks(
      [&](detail::Piece&& p) {
        EscapeElement e;
        e.interval = {p.x_lo, p.x_hi};
        e.escape_time = p.k;
        e.total_depth = p.depth_sum;
        e.num_returns = p.returns;
        e.seed_band = p.seed_band;
        e.escape_image = {p.y_lo, p.y_hi};
        e.id = p.id;
        e.ancestor = p.ancestor;
        if (opts.record_itinerary) {
          e.itinerary = std::move(p.events);
          e.itinerary.push_back({p.k, EventKind::Escape, 0, e.escape_image});
        }
        res.elements.push_back(std::move(e));
      },
      [&](ResidualKind kind, double mass, const detail::Piece&) {
        switch (kind) {
          case ResidualKind::Alive: res.residual_alive += mass; break;
          case ResidualKind::Sliver: res.residual_sliver += mass; break;
          default: res.residual_pruned += mass; break;
        }
      });

  std::vector<detail::Piece> seeds;
  if (!meets) {
    detail::Piece p{};
    p.id = mach.fresh_id();
    p.x_lo = j0.lo;
    p.x_hi = j0.hi;
    p.y_lo = j0.lo;
    p.y_hi = j0.hi;
    seeds.push_back(std::move(p));
  } else {
    if (j0.hi > 0.0)
      res.residual_sliver += detail::seed_side(mach, seeds, cfg, +1, std::max(j0.lo, 0.0), j0.hi,
                                               cfg.r0(), mach.seed_cap(), opts.record_itinerary);
    if (j0.lo < 0.0)
      res.residual_sliver += detail::seed_side(mach, seeds, cfg, -1, std::max(-j0.hi, 0.0), -j0.lo,
                                               cfg.r0(), mach.seed_cap(), opts.record_itinerary);
  }
  for (auto& s : seeds) mach.push(std::move(s));
  mach.run();
  std::sort(res.elements.begin(), res.elements.end(),
            [](const EscapeElement& a, const EscapeElement& b) {
              return a.interval.lo < b.interval.lo ||
                     (a.interval.lo == b.interval.lo && a.interval.hi < b.interval.hi);
            });
  return res;
}

/// Mass still un-escaped at time n: elements with E >= n plus all residual.
inline double escape_tail(const EscapeResult& res, int n) {
  double s = res.residual_total();
  for (const auto& e : res.elements)
    if (e.escape_time >= n) s += e.interval.width();
  return s;
}

inline TailFit fit_escape_tail(const EscapeResult& res, int n_lo, int n_hi) {
  std::vector<double> mass_at(res.n_cap + 2, 0.0);
  for (const auto& e : res.elements) mass_at[e.escape_time] += e.interval.width();
  std::vector<double> tail(res.n_cap + 2, res.residual_total());
  for (int n = res.n_cap; n >= 0; --n) tail[n] = tail[n + 1] + mass_at[n];
  std::vector<std::pair<int, double>> pts;
  for (int n = std::max(n_lo, 0); n <= std::min(n_hi, res.n_cap); ++n)
    pts.emplace_back(n, tail[n]);
  return fit_exponential_tail(pts);
}

struct BoundReport {
  bool pass = true;
  double max_slack = -std::numeric_limits<double>::infinity();
  std::int64_t violations = 0;
  std::int64_t checked = 0;
};

/// log|J| + R/2 <= 0 for every element with at least one recorded return.
inline BoundReport verify_depth_size_bound(const std::vector<EscapeElement>& elements) {
  BoundReport rep;
  for (const auto& e : elements) {
    if (e.total_depth <= 0) continue;
    ++rep.checked;
    double slack = std::log(e.interval.width()) + 0.5 * static_cast<double>(e.total_depth);
    rep.max_slack = std::max(rep.max_slack, slack);
    if (slack > 1e-12) ++rep.violations;
  }
  rep.pass = rep.violations == 0;
  return rep;
}

/// E <= ((2 + ell)/ell) R + 1 for every element with at least one return.
inline BoundReport verify_escape_depth_relation(const std::vector<EscapeElement>& elements,
                                                double ell) {
  if (!(ell > 0.0)) throw std::invalid_argument("ell must be positive");
  BoundReport rep;
  double factor = (2.0 + ell) / ell;
  for (const auto& e : elements) {
    if (e.num_returns < 1) continue;
    ++rep.checked;
    double slack = e.escape_time - (factor * static_cast<double>(e.total_depth) + 1.0);
    rep.max_slack = std::max(rep.max_slack, slack);
    if (slack > 1e-9) ++rep.violations;
  }
  rep.pass = rep.violations == 0;
  return rep;
}

/// max over sampled pairs of |log DT^k(x) / DT^k(y)|; samples whose orbit
/// meets the singular guard are nudged deterministically.
inline double distortion(const OmegaSequence& w, Interval j, int k, int n_samples = 17) {
  if (n_samples < 2) throw std::invalid_argument("need at least 2 samples");
  double lo = j.lo, hi = j.hi;
  double mx = -std::numeric_limits<double>::infinity();
  double mn = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_samples; ++i) {
    double x = lo + (hi - lo) * static_cast<double>(i) / (n_samples - 1);
    for (int attempt = 0; attempt < 12; ++attempt) {
      try {
        double v = orbit_log_derivative(w, x, k);
        mx = std::max(mx, v);
        mn = std::min(mn, v);
        break;
      } catch (const SingularOrbitError&) {
        double nudge = (hi - lo) * 1e-9 * (attempt + 1);
        x = std::min(hi, std::max(lo, x + (x < j.mid() ? nudge : -nudge)));
      }
    }
  }
  if (!(mx >= mn)) return 0.0;
  return mx - mn;
}

}  // namespace rlm
