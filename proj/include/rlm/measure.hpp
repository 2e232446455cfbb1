#pragma once
// Equivariant densities and quenched correlations.
//
// Densities are estimated by per-map transfer matrices on a uniform bin grid
// of I (bin-to-bin transition weights computed from exact branch-preimage
// overlaps) composed along the parameter sequence, seeded with Lebesgue far
// in the past.  An independent orbit-sampling histogram serves as an oracle.
// Correlations are evaluated two ways: evolving the signed measure psi*mu
// through the same matrices (any horizon), or by exact piecewise quadrature
// with the orbit composition, splitting integration pieces at the preimages
// of the singularity (small horizons, used for the calibration case).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlm/omega.hpp"
#include "rlm/returns.hpp"
#include "rlm/tail_fit.hpp"

namespace rlm {

struct Observable {
  std::string id;
  std::function<double(double)> f;
  double eta = 1.0;  // declared Holder exponent
};

inline Observable make_observable(const std::string& id) {
  if (id == "x") return {"x", [](double x) { return x; }, 1.0};
  if (id == "const") return {"const", [](double) { return 1.0; }, 1.0};
  if (id == "sqrtabs") return {"sqrtabs", [](double x) { return std::sqrt(std::abs(x)); }, 0.5};
  throw std::invalid_argument("unknown observable: " + id);
}

inline double holder_seminorm(const Observable& obs, double eta, int grid) {
  if (grid < 2) throw std::invalid_argument("grid < 2");
  std::vector<double> xs;
  xs.reserve(2 * grid);
  for (int i = 0; i < grid; ++i) {
    double t = static_cast<double>(i) / (grid - 1);
    double mag = std::pow(10.0, -12.0 + 11.7 * t) * kHalf;
    xs.push_back(mag);
    xs.push_back(-mag);
  }
  std::vector<double> fv(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) fv[i] = obs.f(xs[i]);
  double best = 0.0;
  for (size_t i = 0; i < xs.size(); ++i)
    for (size_t j = i + 1; j < xs.size(); ++j) {
      double d = std::abs(xs[i] - xs[j]);
      if (d == 0.0) continue;
      best = std::max(best, std::abs(fv[i] - fv[j]) / std::pow(d, eta));
    }
  return best;
}

// ---- transfer matrices -------------------------------------------------------

namespace detail {

inline double bin_edge(int bins, int j) { return -kHalf + static_cast<double>(j) / bins; }

inline int bin_of(int bins, double x) {
  int i = static_cast<int>(std::floor((x + kHalf) * bins));
  return std::min(std::max(i, 0), bins - 1);
}

}  // namespace detail

/// Row-stochastic bin-to-bin transition weights of one map: row i lists the
/// fractions of bin i sent into each target bin.
struct UlamMatrix {
  int bins = 0;
  std::vector<int> offsets;  // size bins+1
  std::vector<int> cols;
  std::vector<double> vals;

  /// Density pushforward (uniform bins): out[j] = sum_i h[i] P[i][j].
  void apply(const std::vector<double>& h, std::vector<double>& out) const {
    out.assign(bins, 0.0);
    for (int i = 0; i < bins; ++i) {
      double hi = h[i];
      if (hi == 0.0) continue;
      for (int k = offsets[i]; k < offsets[i + 1]; ++k) out[cols[k]] += hi * vals[k];
    }
  }
};

inline UlamMatrix build_ulam_matrix(const MapParams& p, int bins) {
  if (bins < 2 || bins % 2 != 0) throw std::invalid_argument("bins must be even and >= 2");
  UlamMatrix m;
  m.bins = bins;
  double w = 1.0 / bins;
  std::vector<std::vector<std::pair<int, double>>> rows(bins);
  for (Branch b : {Branch::Left, Branch::Right}) {
    BranchImage im = branch_image(p, b);
    double ylo = std::max(im.lo, -kHalf), yhi = std::min(im.hi, kHalf);
    int j0 = detail::bin_of(bins, ylo), j1 = detail::bin_of(bins, yhi - 1e-300);
    for (int j = j0; j <= j1; ++j) {
      double y0 = std::max(detail::bin_edge(bins, j), ylo);
      double y1 = std::min(detail::bin_edge(bins, j + 1), yhi);
      if (!(y1 > y0)) continue;
      double x0 = branch_inverse(p, b, y0);
      double x1 = branch_inverse(p, b, y1);
      if (x1 < x0) std::swap(x0, x1);
      int i0 = detail::bin_of(bins, x0), i1 = detail::bin_of(bins, x1 - 1e-300);
      for (int i = i0; i <= i1; ++i) {
        double o0 = std::max(detail::bin_edge(bins, i), x0);
        double o1 = std::min(detail::bin_edge(bins, i + 1), x1);
        if (o1 > o0) rows[i].emplace_back(j, (o1 - o0) / w);
      }
    }
  }
  m.offsets.assign(bins + 1, 0);
  for (int i = 0; i < bins; ++i) {
    auto& r = rows[i];
    std::sort(r.begin(), r.end());
    // merge duplicate columns and normalize the row to total mass 1
    double sum = 0.0;
    for (auto& [j, v] : r) sum += v;
    double scale = sum > 0.0 ? 1.0 / sum : 0.0;
    int last = -1;
    for (auto& [j, v] : r) {
      if (j == last) {
        m.vals.back() += v * scale;
      } else {
        m.cols.push_back(j);
        m.vals.push_back(v * scale);
        last = j;
      }
    }
    m.offsets[i + 1] = static_cast<int>(m.cols.size());
  }
  return m;
}

struct FiberMeasure {
  int bins = 0;
  std::vector<double> density;
  int fiber = 0;
  bool degenerate = false;
  double mass() const {
    double s = 0.0;
    for (double d : density) s += d;
    return s / bins;
  }
};

inline double l1_distance(const FiberMeasure& a, const FiberMeasure& b) {
  if (a.bins != b.bins) throw std::invalid_argument("bin mismatch");
  double s = 0.0;
  for (int i = 0; i < a.bins; ++i) s += std::abs(a.density[i] - b.density[i]);
  return s / a.bins;
}

struct UlamOptions {
  int bins = 4096;
  int burn_in = 50;
  int fiber_lo = 0;  // densities kept for fibers in [fiber_lo, fiber_hi]
  int fiber_hi = 0;
  bool keep_matrices = true;
};

struct UlamResult {
  int bins = 0;
  int fiber_lo = 0, fiber_hi = 0;
  bool degenerate = false;
  double init_sensitivity = 0.0;  // L1 gap at fiber_lo between two burn-in seeds
  std::vector<FiberMeasure> fibers;
  std::vector<std::shared_ptr<const UlamMatrix>> mats;  // map index f, f in [fiber_lo, fiber_hi)

  const FiberMeasure& density(int fiber) const {
    if (fiber < fiber_lo || fiber > fiber_hi) throw std::out_of_range("fiber not retained");
    return fibers[fiber - fiber_lo];
  }
  const UlamMatrix& matrix(int fiber) const {
    if (fiber < fiber_lo || fiber >= fiber_hi || !mats[fiber - fiber_lo])
      throw std::out_of_range("matrix not retained");
    return *mats[fiber - fiber_lo];
  }
};

/// Push Lebesgue from fiber_lo - burn_in and keep the densities on
/// [fiber_lo, fiber_hi].  A second run from a tent seed measures how much of
/// the initial condition survives the burn-in.
inline UlamResult estimate_measure_ulam(const OmegaSequence& w, const UlamOptions& o) {
  if (o.fiber_hi < o.fiber_lo) throw std::invalid_argument("empty fiber range");
  UlamResult res;
  res.bins = o.bins;
  res.fiber_lo = o.fiber_lo;
  res.fiber_hi = o.fiber_hi;
  if (o.bins == 1) {
    res.degenerate = true;
    for (int f = o.fiber_lo; f <= o.fiber_hi; ++f)
      res.fibers.push_back({1, {1.0}, f, true});
    return res;
  }
  if (o.bins < 2 || o.bins % 2 != 0) throw std::invalid_argument("bins must be even");
  if (o.burn_in < 0) throw std::invalid_argument("burn_in < 0");
  int start = o.fiber_lo - o.burn_in;
  if (start < w.lo_index() || o.fiber_hi > w.hi_index() + 1)
    throw std::out_of_range("omega window does not cover the requested fibers");

  std::vector<double> h(o.bins, 1.0), h2(o.bins), tent(o.bins);
  for (int i = 0; i < o.bins; ++i) {
    double x = (detail::bin_edge(o.bins, i) + detail::bin_edge(o.bins, i + 1)) / 2.0;
    tent[i] = 2.0 * (1.0 - 2.0 * std::abs(x));  // normalized tent seed
  }
  res.mats.assign(std::max(0, o.fiber_hi - o.fiber_lo), nullptr);
  auto record = [&](int fiber, const std::vector<double>& d) {
    if (fiber >= o.fiber_lo && fiber <= o.fiber_hi)
      res.fibers.push_back({o.bins, d, fiber, false});
  };
  record(start, h);
  for (int f = start; f < o.fiber_hi; ++f) {
    auto mat = std::make_shared<UlamMatrix>(build_ulam_matrix(w.map_at(f), o.bins));
    mat->apply(h, h2);
    h.swap(h2);
    mat->apply(tent, h2);
    tent.swap(h2);
    if (o.keep_matrices && f >= o.fiber_lo) res.mats[f - o.fiber_lo] = mat;
    record(f + 1, h);
  }
  // sensitivity at fiber_lo (recompute distance there if it was recorded)
  double s = 0.0;
  for (int i = 0; i < o.bins; ++i) s += std::abs(h[i] - tent[i]);
  res.init_sensitivity = s / o.bins;
  return res;
}

/// Exact pushforward mass of (u0, u1) under T when the source density is
/// piecewise constant on the bin grid.
inline double pushed_mass(const MapParams& p, const std::vector<double>& h, int bins, double u0,
                          double u1) {
  double s = 0.0;
  for (Branch b : {Branch::Left, Branch::Right}) {
    BranchImage im = branch_image(p, b);
    double y0 = std::max(u0, std::max(im.lo, -kHalf));
    double y1 = std::min(u1, std::min(im.hi, kHalf));
    if (!(y1 > y0)) continue;
    double x0 = branch_inverse(p, b, y0);
    double x1 = branch_inverse(p, b, y1);
    if (x1 < x0) std::swap(x0, x1);
    int i0 = detail::bin_of(bins, x0), i1 = detail::bin_of(bins, x1 - 1e-300);
    for (int i = i0; i <= i1; ++i) {
      double o0 = std::max(detail::bin_edge(bins, i), x0);
      double o1 = std::min(detail::bin_edge(bins, i + 1), x1);
      if (o1 > o0) s += h[i] * (o1 - o0);
    }
  }
  return s;
}

/// || T_* mu_src - mu_dst ||_1 with the pushforward evaluated exactly on a
/// refined grid (refine subcells per bin); a slight underestimate on the
/// subcells where the difference changes sign.
inline double pushforward_projection_l1_error(const MapParams& p, const FiberMeasure& src,
                                              const FiberMeasure& dst, int refine = 32) {
  if (src.bins != dst.bins) throw std::invalid_argument("bin mismatch");
  int bins = src.bins;
  double err = 0.0;
  for (int j = 0; j < bins; ++j) {
    double e0 = detail::bin_edge(bins, j), e1 = detail::bin_edge(bins, j + 1);
    double ws = (e1 - e0) / refine;
    for (int s = 0; s < refine; ++s) {
      double u0 = e0 + ws * s, u1 = s + 1 == refine ? e1 : e0 + ws * (s + 1);
      err += std::abs(pushed_mass(p, src.density, bins, u0, u1) - dst.density[j] * (u1 - u0));
    }
  }
  return err;
}

struct BirkhoffOptions {
  int bins = 64;
  long n_samples = 1000000;
  int burn_in = 16;
  std::uint64_t seed = 1;
};

/// Histogram of uniform samples pushed from burn_in steps in the past;
/// orbits meeting the singular guard are discarded and counted.
inline FiberMeasure estimate_measure_birkhoff(const OmegaSequence& w, int fiber,
                                              const BirkhoffOptions& o, long* discarded = nullptr) {
  if (o.n_samples <= 0) throw std::invalid_argument("n_samples must be positive");
  if (fiber - o.burn_in < w.lo_index()) throw std::out_of_range("window too short for burn-in");
  std::vector<double> counts(o.bins, 0.0);
  OmegaSequence past = w.shifted(fiber - o.burn_in);
  long dropped = 0, kept = 0;
  for (long s = 0; s < o.n_samples; ++s) {
    std::uint64_t z = splitmix64(o.seed ^ splitmix64(static_cast<std::uint64_t>(s)));
    double x = -kHalf + unit_from_bits(z);
    bool ok = true;
    for (int k = 0; k < o.burn_in; ++k) {
      if (std::abs(x) < kSingularGuard) {
        ok = false;
        break;
      }
      x = eval(past.map_at(k), x);
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    ++kept;
    counts[detail::bin_of(o.bins, x)] += 1.0;
  }
  if (discarded) *discarded = dropped;
  FiberMeasure fm{o.bins, std::vector<double>(o.bins, 0.0), fiber, false};
  if (kept > 0)
    for (int i = 0; i < o.bins; ++i) fm.density[i] = counts[i] * o.bins / static_cast<double>(kept);
  return fm;
}

// ---- quenched correlations ---------------------------------------------------

enum class CorrelationMode { Forward, Pullback };
enum class CorrelationQuadrature { Operator, Orbit };

struct CorrelationSeries {
  std::vector<double> values;  // C_n for n = 1..n_max
  CorrelationMode mode = CorrelationMode::Forward;
  CorrelationQuadrature quadrature = CorrelationQuadrature::Operator;
  std::string phi, psi;
  double noise_floor = 0.0;
  TailFit fit;
  int fit_n_lo = 0, fit_n_hi = 0;

  double at(int n) const { return values.at(n - 1); }
};

namespace detail {

inline constexpr double kGaussX[5] = {0.0, 0.5384693101056831, -0.5384693101056831,
                                      0.9061798459386640, -0.9061798459386640};
inline constexpr double kGaussW[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                      0.2369268850561891, 0.2369268850561891};

inline double gauss5(const std::function<double(double)>& f, double a, double b) {
  double c = 0.5 * (a + b), h = 0.5 * (b - a), s = 0.0;
  for (int i = 0; i < 5; ++i) s += kGaussW[i] * f(c + h * kGaussX[i]);
  return s * h;
}

inline std::vector<double> bin_averages(const Observable& obs, int bins) {
  std::vector<double> out(bins);
  for (int i = 0; i < bins; ++i) {
    double a = bin_edge(bins, i), b = bin_edge(bins, i + 1);
    out[i] = gauss5(obs.f, a, b) / (b - a);
  }
  return out;
}

inline double integrate_against(const std::vector<double>& avg, const std::vector<double>& dens,
                                int bins) {
  double s = 0.0;
  for (int i = 0; i < bins; ++i) s += avg[i] * dens[i];
  return s / bins;
}

/// Exact piecewise quadrature of f(T^n x) g(x) h(x) dx: integration pieces
/// are cut at the bin edges and at all preimages of the singularity up to
/// depth n-1, where T^n folds.
inline double orbit_integral(const OmegaSequence& w, int n, const std::function<double(double)>& f,
                             const std::function<double(double)>& g,
                             const std::vector<double>& h, int bins) {
  PreimageSet folds = preimages_of_zero(w, std::max(n - 1, 0));
  std::vector<double> cuts;
  cuts.reserve(bins + folds.points.size() + 2);
  for (int j = 0; j <= bins; ++j) cuts.push_back(bin_edge(bins, j));
  for (double p : folds.points)
    if (p > -kHalf && p < kHalf) cuts.push_back(p);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  auto integrand = [&](double x) {
    double y = x;
    for (int k = 0; k < n; ++k) {
      if (y == 0.0) y = std::copysign(5e-324, 1.0);
      y = eval(w.map_at(k), y);
    }
    return f(y) * g(x);
  };
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    double a = cuts[i], b = cuts[i + 1];
    if (!(b > a)) continue;
    int bin = bin_of(bins, 0.5 * (a + b));
    total += gauss5(integrand, a, b) * h[bin];
  }
  return total;
}

}  // namespace detail

/// |∫ (phi o T^n) psi dmu - ∫ phi dmu' ∫ psi dmu| for n = 1..n_max, with the
/// fibers supplied by a Ulam run.  Forward mode pairs mu = mu_0 with
/// mu' = mu_n; pullback mode starts n fibers in the past and pairs mu_{-n}
/// with mu_0.
inline CorrelationSeries quenched_correlation(const OmegaSequence& w, const Observable& phi,
                                              const Observable& psi, int n_max,
                                              const UlamResult& ulam, CorrelationMode mode,
                                              CorrelationQuadrature quad) {
  if (n_max < 1) throw std::invalid_argument("n_max < 1");
  bool fwd = mode == CorrelationMode::Forward;
  if (fwd && (ulam.fiber_lo > 0 || ulam.fiber_hi < n_max))
    throw std::out_of_range("ulam fibers do not cover [0, n_max]");
  if (!fwd && (ulam.fiber_lo > -n_max || ulam.fiber_hi < 0))
    throw std::out_of_range("ulam fibers do not cover [-n_max, 0]");
  int bins = ulam.bins;
  CorrelationSeries cs;
  cs.mode = mode;
  cs.quadrature = quad;
  cs.phi = phi.id;
  cs.psi = psi.id;
  cs.noise_floor = 2.0 / bins;
  cs.values.resize(n_max);

  std::vector<double> phib = detail::bin_averages(phi, bins);
  std::vector<double> psib = detail::bin_averages(psi, bins);

  if (quad == CorrelationQuadrature::Operator) {
    if (fwd) {
      const auto& h0 = ulam.density(0).density;
      double ipsi = detail::integrate_against(psib, h0, bins);
      std::vector<double> s(bins), tmp(bins);
      for (int i = 0; i < bins; ++i) s[i] = psib[i] * h0[i];
      for (int n = 1; n <= n_max; ++n) {
        ulam.matrix(n - 1).apply(s, tmp);
        s.swap(tmp);
        double q1 = detail::integrate_against(phib, s, bins);
        double iphi = detail::integrate_against(phib, ulam.density(n).density, bins);
        cs.values[n - 1] = std::abs(q1 - iphi * ipsi);
      }
    } else {
      const auto& h0 = ulam.density(0).density;
      double iphi0 = detail::integrate_against(phib, h0, bins);
      for (int n = 1; n <= n_max; ++n) {
        const auto& hmn = ulam.density(-n).density;
        double ipsi = detail::integrate_against(psib, hmn, bins);
        std::vector<double> s(bins), tmp(bins);
        for (int i = 0; i < bins; ++i) s[i] = psib[i] * hmn[i];
        for (int k = -n; k < 0; ++k) {
          ulam.matrix(k).apply(s, tmp);
          s.swap(tmp);
        }
        double q1 = detail::integrate_against(phib, s, bins);
        cs.values[n - 1] = std::abs(q1 - iphi0 * ipsi);
      }
    }
  } else {
    if (n_max > 14) throw std::invalid_argument("orbit quadrature capped at n_max = 14");
    for (int n = 1; n <= n_max; ++n) {
      if (fwd) {
        const auto& h0 = ulam.density(0).density;
        double q1 = detail::orbit_integral(w, n, phi.f, psi.f, h0, bins);
        double iphi = detail::integrate_against(phib, ulam.density(n).density, bins);
        double ipsi = detail::integrate_against(psib, h0, bins);
        cs.values[n - 1] = std::abs(q1 - iphi * ipsi);
      } else {
        const auto& hmn = ulam.density(-n).density;
        double q1 = detail::orbit_integral(w.shifted(-n), n, phi.f, psi.f, hmn, bins);
        double iphi = detail::integrate_against(phib, ulam.density(0).density, bins);
        double ipsi = detail::integrate_against(psib, hmn, bins);
        cs.values[n - 1] = std::abs(q1 - iphi * ipsi);
      }
    }
  }

  // fit over the prefix above the noise floor
  std::vector<std::pair<int, double>> pts;
  for (int n = 1; n <= n_max; ++n) {
    if (cs.values[n - 1] <= cs.noise_floor) break;
    pts.emplace_back(n, cs.values[n - 1]);
  }
  cs.fit = fit_exponential_tail(pts, 4);
  if (!pts.empty()) {
    cs.fit_n_lo = pts.front().first;
    cs.fit_n_hi = pts.back().first;
  }
  return cs;
}

}  // namespace rlm
