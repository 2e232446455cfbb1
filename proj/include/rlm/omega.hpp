#pragma once
// Finite windows of the random parameter sequence and orbit compositions
// T^n_w = T_{w_{n-1}} o ... o T_{w_0} driven by them.
//
// A window stands in for one point of the bi-infinite product space: values
// are attached to absolute indices, drawn i.i.d. uniform from the family
// range by a per-index hash of the seed, so shifted views and enlarged
// windows agree bit-exactly wherever they overlap.

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlm/map_family.hpp"

namespace rlm {

inline constexpr double kSingularGuard = 1e-15;

/// Orbit hit the singularity (exactly, or within the numerical guard).
class SingularOrbitError : public std::runtime_error {
 public:
  SingularOrbitError(const std::string& what, int hit_time)
      : std::runtime_error(what), hit_time(hit_time) {}
  int hit_time;
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double unit_from_bits(std::uint64_t z) {
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

/// Window omega_{-L..R} of parameter values with seed provenance.
class OmegaSequence {
 public:
  OmegaSequence() = default;

  static OmegaSequence sample(std::uint64_t seed, int left, int right, const FamilyRange& range) {
    if (left < 0 || right < 0) throw std::invalid_argument("window extents must be >= 0");
    range.validate();
    if (!(range.lambda_lo <= range.lambda_hi)) throw std::invalid_argument("empty range");
    auto vals = std::make_shared<std::vector<double>>();
    auto maps = std::make_shared<std::vector<MapParams>>();
    vals->reserve(left + right + 1);
    for (int i = -left; i <= right; ++i) {
      std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(static_cast<std::int64_t>(i))));
      double lam = range.lambda_lo + unit_from_bits(h) * range.width();
      vals->push_back(lam);
      maps->push_back(MapParams::standard(lam, range.alpha));
    }
    OmegaSequence w;
    w.values_ = std::move(vals);
    w.maps_ = std::move(maps);
    w.abs_lo_ = -left;
    w.offset_ = 0;
    w.range_ = range;
    w.seed_ = seed;
    return w;
  }

  /// Constant sequence (degenerate range), handy for calibration runs.
  static OmegaSequence constant(double lambda, int left, int right, double alpha = 0.0) {
    return sample(0, left, right, FamilyRange::make(lambda, lambda, alpha));
  }

  double lambda_at(int i) const { return (*values_)[checked_slot(i)]; }
  const MapParams& map_at(int i) const { return (*maps_)[checked_slot(i)]; }

  int lo_index() const { return abs_lo_ - offset_; }
  int hi_index() const { return abs_lo_ + static_cast<int>(values_->size()) - 1 - offset_; }
  std::uint64_t seed() const { return seed_; }
  const FamilyRange& range() const { return range_; }

  /// View with indices relabeled: shifted(m).lambda_at(i) == lambda_at(i + m).
  OmegaSequence shifted(int m) const {
    OmegaSequence w = *this;
    w.offset_ += m;
    return w;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "# seed=" << seed_ << "\n"
       << "# lambda_lo=" << range_.lambda_lo << "\n"
       << "# lambda_hi=" << range_.lambda_hi << "\n"
       << "# alpha=" << range_.alpha << "\n"
       << "# left=" << -lo_index() << "\n"
       << "# right=" << hi_index() << "\n"
       << "index,lambda\n";
    for (int i = lo_index(); i <= hi_index(); ++i) os << i << "," << lambda_at(i) << "\n";
    return os.str();
  }

  /// Regenerates from the CSV header (seed + range + extents) and verifies
  /// the listed values bit-exactly.
  static OmegaSequence from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::uint64_t seed = 0;
    double lo = 0, hi = 0, alpha = 0;
    int left = -1, right = -1;
    std::vector<std::pair<int, double>> rows;
    while (std::getline(is, line)) {
      if (line.rfind("# seed=", 0) == 0) seed = std::stoull(line.substr(7));
      else if (line.rfind("# lambda_lo=", 0) == 0) lo = std::stod(line.substr(12));
      else if (line.rfind("# lambda_hi=", 0) == 0) hi = std::stod(line.substr(12));
      else if (line.rfind("# alpha=", 0) == 0) alpha = std::stod(line.substr(8));
      else if (line.rfind("# left=", 0) == 0) left = std::stoi(line.substr(7));
      else if (line.rfind("# right=", 0) == 0) right = std::stoi(line.substr(8));
      else if (!line.empty() && line != "index,lambda" && line[0] != '#') {
        auto c = line.find(',');
        rows.emplace_back(std::stoi(line.substr(0, c)), std::stod(line.substr(c + 1)));
      }
    }
    if (left < 0 || right < 0) throw std::invalid_argument("omega csv missing extents");
    OmegaSequence w = sample(seed, left, right, FamilyRange::make(lo, hi, alpha));
    for (auto& [i, v] : rows)
      if (w.lambda_at(i) != v) throw std::invalid_argument("omega csv does not regenerate");
    return w;
  }

 private:
  int checked_slot(int i) const {
    int abs = i + offset_;
    int slot = abs - abs_lo_;
    if (!values_ || slot < 0 || slot >= static_cast<int>(values_->size()))
      throw std::out_of_range("omega window does not cover index " + std::to_string(i));
    return slot;
  }

  std::shared_ptr<const std::vector<double>> values_;
  std::shared_ptr<const std::vector<MapParams>> maps_;
  int abs_lo_ = 0;
  int offset_ = 0;
  FamilyRange range_{1.0, 1.0, 0.45};
  std::uint64_t seed_ = 0;
};

/// Orbit x, T_w(x), ..., T^n_w(x); throws SingularOrbitError if any orbit
/// point lands on the singularity (within the guard).
inline std::vector<double> compose(const OmegaSequence& w, double x, int n) {
  if (n < 0) throw std::invalid_argument("n < 0");
  if (n > w.hi_index() + 1) throw std::out_of_range("composition exceeds the omega window");
  std::vector<double> orbit;
  orbit.reserve(n + 1);
  orbit.push_back(x);
  for (int k = 0; k < n; ++k) {
    if (std::abs(x) < kSingularGuard)
      throw SingularOrbitError("orbit hit the singularity", k);
    x = eval(w.map_at(k), x);
    orbit.push_back(x);
    if (std::abs(x) < kSingularGuard && k + 1 < n)
      throw SingularOrbitError("orbit hit the singularity", k + 1);
  }
  return orbit;
}

inline double orbit_log_derivative(const OmegaSequence& w, double x, int n) {
  if (n < 0) throw std::invalid_argument("n < 0");
  if (n > w.hi_index() + 1) throw std::out_of_range("composition exceeds the omega window");
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    if (std::abs(x) < kSingularGuard)
      throw SingularOrbitError("orbit hit the singularity", k);
    s += log_derivative(w.map_at(k), x);
    x = eval(w.map_at(k), x);
  }
  return s;
}

inline double orbit_derivative(const OmegaSequence& w, double x, int n) {
  return std::exp(orbit_log_derivative(w, x, n));
}

struct ExpansionEstimate {
  double c_tilde;
  double ell;
  int n_max;
  bool pass;
  int samples_used;
};

/// Sample grid for the expansion check: log-spaced points on both sides
/// plus points hugging the endpoints (where the one-step slope is weakest).
inline std::vector<double> default_expansion_samples(int count = 48) {
  std::vector<double> xs;
  for (int i = 0; i < count; ++i) {
    double t = static_cast<double>(i) / (count - 1);
    double mag = std::pow(10.0, -6.0 + 5.69 * t) * kHalf;
    xs.push_back(mag);
    xs.push_back(-mag);
  }
  for (double e : {1e-9, 1e-6, 1e-3}) {
    xs.push_back(kHalf - e);
    xs.push_back(-kHalf + e);
  }
  return xs;
}

/// Largest (c_tilde, ell) on a fixed grid with
/// |DT^n_w(x)| > c_tilde * e^(n*ell) over all retained samples and n <= n_max.
/// Samples whose orbit enters the exclusion neighborhood of the singular set
/// are dropped.  pass = false when no positive ell fits.
inline ExpansionEstimate check_uniform_expansion(const OmegaSequence& w,
                                                 std::span<const double> x_samples, int n_max,
                                                 double exclusion = 1e-9) {
  if (n_max < 1) throw std::invalid_argument("n_max < 1");
  std::vector<double> min_log(n_max + 1, std::numeric_limits<double>::infinity());
  int used = 0;
  for (double x0 : x_samples) {
    double x = x0, s = 0.0;
    std::vector<double> logs(n_max + 1, std::numeric_limits<double>::quiet_NaN());
    bool ok = true;
    for (int k = 0; k < n_max; ++k) {
      if (std::abs(x) < exclusion) {
        ok = false;
        break;
      }
      s += log_derivative(w.map_at(k), x);
      x = eval(w.map_at(k), x);
      logs[k + 1] = s;
    }
    if (!ok) continue;
    ++used;
    for (int n = 1; n <= n_max; ++n) min_log[n] = std::min(min_log[n], logs[n]);
  }
  const double c_grid[] = {1.0, 0.75, 0.5, 0.25, 0.1, 0.05};
  const double ell_step = 0.0025;
  double best_ell = -1.0, best_c = c_grid[0];
  for (double c : c_grid) {
    double ell = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= n_max; ++n) ell = std::min(ell, (min_log[n] - std::log(c)) / n);
    ell = std::floor(ell / ell_step) * ell_step;  // snap down to the grid
    if (ell > best_ell + 1e-15) {
      best_ell = ell;
      best_c = c;
    }
  }
  bool pass = used > 0 && best_ell > 0.0;
  return {best_c, best_ell, n_max, pass, used};
}

}  // namespace rlm
