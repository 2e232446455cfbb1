#pragma once
// Exponential partition of the singular neighborhood Delta0 = (-delta, delta):
// bands I_r = [e^-(r+1), e^-r) for r >= r0 on the positive side, mirrored as
// I_-r = (-e^-r, -e^-(r+1)] on the negative side, each band divided into
// |r|^theta equal cells I_{r,m}.  Cell indices m increase away from 0 on both
// sides.  All interval/cell intersection tests use the positive-measure
// convention: touching at a single endpoint does not count.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rlm/map_family.hpp"

namespace rlm {

struct Interval {
  double lo, hi;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
};

struct CellId {
  int r;           // signed band index, |r| >= r0
  std::int64_t m;  // 1-based cell index within the band, counted away from 0
  bool operator==(const CellId&) const = default;
};

enum class IterateClass { Free, Inessential, Essential, Escape };

class PartitionConfig {
 public:
  static PartitionConfig make(int r0, int r_star, double alpha) {
    if (r0 < 2) throw std::invalid_argument("r0 must be >= 2");
    if (r_star <= r0) throw std::invalid_argument("r_star must exceed r0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha out of (0,1)");
    PartitionConfig c;
    c.r0_ = r0;
    c.r_star_ = r_star;
    c.alpha_ = alpha;
    c.theta_ = static_cast<int>(std::floor(1.0 / alpha)) + 1;
    c.bounds_.resize(kMaxBand + 2);
    for (int r = 0; r <= kMaxBand + 1; ++r) c.bounds_[r] = std::exp(-static_cast<double>(r));
    return c;
  }

  int r0() const { return r0_; }
  int r_star() const { return r_star_; }
  double alpha() const { return alpha_; }
  int theta() const { return theta_; }
  double delta() const { return bounds_[r0_]; }
  double delta_star() const { return bounds_[r_star_]; }

  /// e^-r, tabulated so every caller sees identical boundary values.
  double band_top(int r) const {
    if (r < 0 || r > kMaxBand + 1) throw std::out_of_range("band index out of table");
    return bounds_[r];
  }

  std::int64_t cells_in_band(int r) const {
    std::int64_t m = 1;
    for (int i = 0; i < theta_; ++i) m *= std::abs(r);
    return m;
  }

  /// m-th internal boundary of band r (magnitudes), j in 0..M; endpoints are
  /// the exact band bounds so cells tile the band.
  double cell_boundary(int r, std::int64_t j) const {
    std::int64_t M = cells_in_band(r);
    if (j <= 0) return band_top(r + 1);
    if (j >= M) return band_top(r);
    double lo = band_top(r + 1), hi = band_top(r);
    return lo + (hi - lo) * (static_cast<double>(j) / static_cast<double>(M));
  }

  /// Band r with e^-(r+1) <= mag < e^-r; requires 0 < mag < 1.
  int band_of(double mag) const {
    if (!(mag > 0.0) || mag >= 1.0) throw std::domain_error("band_of: magnitude out of (0,1)");
    int r = static_cast<int>(std::floor(-std::log(mag)));
    while (r > 0 && mag >= band_top(r)) --r;
    while (r < kMaxBand && mag < band_top(r + 1)) ++r;
    return r;
  }

  /// Band containing magnitudes just below `mag` (the half-open convention
  /// resolved from above): e^-(r+1) < mag <= e^-r.
  int band_of_upper(double mag) const {
    int r = band_of(mag);  // band_top(r+1) <= mag < band_top(r)
    if (mag == band_top(r + 1)) return r + 1;
    return r;
  }

  static constexpr int kMaxBand = 400;

 private:
  int r0_ = 3, r_star_ = 5, theta_ = 3;
  double alpha_ = 0.45;
  std::vector<double> bounds_;
};

/// Cell containing x; requires 0 < |x| < delta.
inline CellId cell_of(double x, const PartitionConfig& cfg) {
  if (x == 0.0) throw SingularPointError("cell_of at x = 0");
  double mag = std::abs(x);
  if (mag >= cfg.delta()) throw std::domain_error("cell_of outside Delta0");
  int r = cfg.band_of(mag);
  std::int64_t M = cfg.cells_in_band(r);
  double lo = cfg.band_top(r + 1), hi = cfg.band_top(r);
  auto m = static_cast<std::int64_t>(std::floor((mag - lo) / ((hi - lo) / M))) + 1;
  if (m < 1) m = 1;
  if (m > M) m = M;
  while (m > 1 && mag < cfg.cell_boundary(r, m - 1)) --m;
  while (m < M && mag >= cfg.cell_boundary(r, m)) ++m;
  return {x > 0.0 ? r : -r, m};
}

/// Interval of a cell.  Positive side: [lo, hi); negative side: (-hi, -lo].
inline Interval interval_of(const CellId& id, const PartitionConfig& cfg) {
  int r = std::abs(id.r);
  if (r < cfg.r0())
    throw std::domain_error("bands shallower than r0 are empty");
  std::int64_t M = cfg.cells_in_band(r);
  if (id.m < 1 || id.m > M) throw std::domain_error("cell index out of band");
  double lo = cfg.cell_boundary(r, id.m - 1);
  double hi = cfg.cell_boundary(r, id.m);
  if (id.r > 0) return {lo, hi};
  return {-hi, -lo};
}

namespace detail {

/// Number of cells meeting (lo, hi) (positive-measure) for magnitudes within
/// one side of Delta0; stops counting above `cap`.  A magnitude interval
/// reaching 0 meets unboundedly many cells, reported as cap + 1.
inline std::int64_t count_cells_in_magnitudes(double lo, double hi, const PartitionConfig& cfg,
                                              std::int64_t cap) {
  hi = std::min(hi, cfg.delta());
  if (!(hi > lo)) return 0;
  if (lo <= 0.0) return cap + 1;
  std::int64_t count = 0;
  int r = cfg.band_of_upper(hi);
  while (count <= cap) {
    double blo = cfg.band_top(r + 1), bhi = cfg.band_top(r);
    double seg_hi = std::min(hi, bhi);
    double seg_lo = std::max(lo, blo);
    if (seg_hi > seg_lo) {
      std::int64_t M = cfg.cells_in_band(r);
      double w = (bhi - blo) / M;
      // smallest j with cell_boundary(j) > seg_lo
      auto j_min = static_cast<std::int64_t>(std::floor((seg_lo - blo) / w)) + 1;
      j_min = std::min(std::max<std::int64_t>(j_min, 1), M);
      while (j_min < M && cfg.cell_boundary(r, j_min) <= seg_lo) ++j_min;
      while (j_min > 1 && cfg.cell_boundary(r, j_min - 1) > seg_lo) --j_min;
      // largest j with cell_boundary(j-1) < seg_hi
      auto j_max = static_cast<std::int64_t>(std::ceil((seg_hi - blo) / w));
      j_max = std::min(std::max<std::int64_t>(j_max, 1), M);
      while (j_max > 1 && cfg.cell_boundary(r, j_max - 1) >= seg_hi) --j_max;
      while (j_max < M && cfg.cell_boundary(r, j_max) < seg_hi) ++j_max;
      if (j_max >= j_min) count += j_max - j_min + 1;
    }
    if (lo >= blo) break;
    ++r;
    if (r >= PartitionConfig::kMaxBand) return cap + 1;
  }
  return count;
}

}  // namespace detail

/// Number of cells the open interval meets, capped.  One-sided or straddling
/// (both sides counted).
inline std::int64_t spanned_cell_count(const Interval& J, const PartitionConfig& cfg,
                                       std::int64_t cap = 8) {
  std::int64_t n = 0;
  if (J.hi > 0.0) n += detail::count_cells_in_magnitudes(std::max(J.lo, 0.0), J.hi, cfg, cap);
  if (n > cap) return n;
  if (J.lo < 0.0) n += detail::count_cells_in_magnitudes(std::max(-J.hi, 0.0), -J.lo, cfg, cap - n);
  return n;
}

/// Ordered (by position) list of cells the open interval meets.  Requires a
/// one-sided interval; a straddling interval is reported as an error, the
/// caller is expected to cut at the singularity first.
inline std::vector<CellId> spanned_cells(const Interval& J, const PartitionConfig& cfg,
                                         std::int64_t hard_cap = 100000) {
  if (J.lo < 0.0 && J.hi > 0.0) throw std::domain_error("interval straddles the singularity");
  if (!(J.hi > J.lo)) throw std::invalid_argument("empty interval");
  bool positive = J.hi > 0.0;
  double lo = positive ? std::max(J.lo, 0.0) : std::max(-J.hi, 0.0);
  double hi = std::min(positive ? J.hi : -J.lo, cfg.delta());
  std::vector<CellId> cells;
  if (!(hi > lo)) return cells;
  if (lo <= 0.0) throw std::length_error("interval reaches the singularity: unbounded cell list");
  // collect by descending magnitude? build ascending magnitude first
  std::vector<CellId> asc;
  int r = cfg.band_of_upper(hi);
  int r_bottom = cfg.band_of(lo);
  for (int band = r_bottom; band >= r; --band) {
    double blo = cfg.band_top(band + 1), bhi = cfg.band_top(band);
    double seg_lo = std::max(lo, blo), seg_hi = std::min(hi, bhi);
    if (!(seg_hi > seg_lo)) continue;
    std::int64_t M = cfg.cells_in_band(band);
    for (std::int64_t m = 1; m <= M; ++m) {
      if (cfg.cell_boundary(band, m) <= seg_lo) continue;
      if (cfg.cell_boundary(band, m - 1) >= seg_hi) break;
      asc.push_back({band, m});
      if (static_cast<std::int64_t>(asc.size()) > hard_cap)
        throw std::length_error("cell list exceeds the hard cap");
    }
  }
  // ascending magnitude == ascending position on the positive side,
  // descending position on the negative side.
  if (positive) return asc;
  cells.reserve(asc.size());
  for (auto it = asc.rbegin(); it != asc.rend(); ++it) cells.push_back({-it->r, it->m});
  return cells;
}

/// Classification of the time-k image of a partition element.
inline IterateClass classify(const Interval& J, const PartitionConfig& cfg) {
  if (!(J.hi > J.lo)) throw std::invalid_argument("empty interval");
  double d = cfg.delta();
  bool meets = J.lo < d && J.hi > -d;
  if (!meets) return J.width() >= d ? IterateClass::Escape : IterateClass::Free;
  if (J.width() >= d) return IterateClass::Essential;  // long image overlapping Delta0 is cut
  return spanned_cell_count(J, cfg, 3) <= 3 ? IterateClass::Inessential : IterateClass::Essential;
}

}  // namespace rlm
