#pragma once
// One-parameter family of interval maps on I = [-1/2, 1/2] with a
// power-law singularity at the origin:
//
//     T(x) = sign(x) * (a * |x|^lambda - 1/2),   a in (1, 2^lambda].
//
// Both branches are increasing, the one-sided limits are T(0+) = -1/2 and
// T(0-) = +1/2, and |DT(x)| * |x|^(1-lambda) = a*lambda exactly.  At
// lambda = 1, a = 2 the map degenerates to the piecewise-linear map
// 2x -/+ 1/2, which preserves Lebesgue measure (the calibration case).

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlm {

inline constexpr double kHalf = 0.5;

/// x = 0 (or an orbit point numerically indistinguishable from 0).
class SingularPointError : public std::runtime_error {
 public:
  explicit SingularPointError(const std::string& what) : std::runtime_error(what) {}
};

class NoPreimageError : public std::runtime_error {
 public:
  explicit NoPreimageError(const std::string& what) : std::runtime_error(what) {}
};

enum class Branch { Left, Right };

inline int branch_sign(Branch b) { return b == Branch::Right ? +1 : -1; }
inline Branch branch_from_sign(int s) { return s > 0 ? Branch::Right : Branch::Left; }

/// One map of the family together with its regularity constants.
struct MapParams {
  double lambda;    // singularity exponent, in (0, 1]
  double a;         // scale, in (1, 2^lambda]
  double alpha;     // Holder exponent used for 1/DT, in (0, 1)
  double c_order;   // order-of-singularity constant C >= 1
  double k_holder;  // Holder constant K of 1/DT

  void validate() const {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda out of (0,1]");
    if (!(a > 1.0 && a <= std::exp2(lambda) * (1.0 + 1e-12)))
      throw std::invalid_argument("a out of (1, 2^lambda]");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha out of (0,1)");
    if (alpha + 1e-12 < 1.0 - lambda) throw std::invalid_argument("alpha < 1 - lambda");
    if (!(c_order >= 1.0)) throw std::invalid_argument("c_order < 1");
    if (c_order + 1e-12 < std::max(a * lambda, 1.0 / (a * lambda)))
      throw std::invalid_argument("c_order below the family's sharp constant");
    if (!(k_holder > 0.0)) throw std::invalid_argument("k_holder <= 0");
  }

  /// Full-branch member with constants derived from the closed form.
  static MapParams standard(double lambda, double alpha = 0.0) {
    MapParams p{};
    p.lambda = lambda;
    p.a = std::exp2(lambda);
    p.alpha = alpha > 0.0 ? alpha : std::max(0.45, 1.0 - lambda);
    double al = p.a * lambda;
    p.c_order = std::max(al, 1.0 / al);
    p.k_holder = 4.0 * al;  // comfortably above the measured sharp value
    p.validate();
    return p;
  }
};

/// Evaluate T at x != 0.
inline double eval(const MapParams& p, double x) {
  if (x == 0.0) throw SingularPointError("eval at the singularity x = 0");
  if (std::abs(x) > kHalf + 1e-12) throw std::domain_error("eval outside I");
  double m = p.a * std::pow(std::abs(x), p.lambda) - kHalf;
  return x > 0.0 ? m : -m;
}

/// Branch evaluation; admits x on the closed branch domain including 0,
/// where the one-sided limit -/+ 1/2 is returned.
inline double eval_branch(const MapParams& p, int side, double x) {
  double mag = side > 0 ? x : -x;
  double m = p.a * std::pow(mag, p.lambda) - kHalf;
  return side > 0 ? m : -m;
}

inline double derivative(const MapParams& p, double x) {
  if (x == 0.0) throw SingularPointError("derivative at the singularity x = 0");
  return p.a * p.lambda * std::pow(std::abs(x), p.lambda - 1.0);
}

inline double log_derivative(const MapParams& p, double x) {
  if (x == 0.0) throw SingularPointError("log_derivative at the singularity x = 0");
  return std::log(p.a * p.lambda) + (p.lambda - 1.0) * std::log(std::abs(x));
}

struct BranchImage {
  double lo, hi;
};

/// Image of one branch (closed hull; the singular-limit end is attained
/// only as a limit).
inline BranchImage branch_image(const MapParams& p, Branch b) {
  double top = p.a * std::pow(kHalf, p.lambda) - kHalf;
  if (b == Branch::Right) return {-kHalf, top};
  return {-top, kHalf};
}

/// Inverse of one (increasing) branch.  Tolerates y within `slack` of the
/// branch image and clamps; beyond that throws NoPreimageError.
inline double branch_inverse(const MapParams& p, Branch b, double y, double slack = 1e-9) {
  BranchImage im = branch_image(p, b);
  if (y < im.lo - slack || y > im.hi + slack)
    throw NoPreimageError("y outside the branch image");
  double t = b == Branch::Right ? (y + kHalf) / p.a : (kHalf - y) / p.a;
  if (t < 0.0) t = 0.0;
  double mag = std::pow(t, 1.0 / p.lambda);
  if (mag > kHalf) mag = kHalf;
  return b == Branch::Right ? mag : -mag;
}

inline double branch_inverse(const MapParams& p, int side, double y, double slack = 1e-9) {
  return branch_inverse(p, side > 0 ? Branch::Right : Branch::Left, y, slack);
}

struct SingularityOrderReport {
  double c_est;
  bool pass;
};

/// Estimate the sharp constant in C^-1 |x|^(lambda-1) <= |DT| <= C |x|^(lambda-1)
/// over log-spaced samples of one side.  For the closed-form family the
/// ratio is constant, so c_est = max(a*lambda, 1/(a*lambda)).
inline SingularityOrderReport validate_singularity_order(const MapParams& p, int n_samples) {
  if (n_samples < 2) throw std::invalid_argument("n_samples < 2");
  double c_est = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    double t = static_cast<double>(i) / (n_samples - 1);
    double x = std::pow(10.0, -9.0 + 8.5 * t) * kHalf;  // log-spaced in (0, 1/2)
    double ratio = derivative(p, x) * std::pow(x, 1.0 - p.lambda);
    c_est = std::max(c_est, std::max(ratio, 1.0 / ratio));
  }
  return {c_est, c_est <= p.c_order * (1.0 + 1e-12)};
}

struct HolderReport {
  double k_est;
  bool pass;
  int pairs_used;
};

/// Estimate the local Holder constant of DT on one side of 0:
/// sup |DT(x)-DT(y)| |x|^alpha |y|^alpha / |x-y|^alpha over sampled pairs.
/// Degenerate pairs (x == y) are skipped.
inline HolderReport validate_local_holder(const MapParams& p, int n_pairs) {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs < 1");
  int m = 2;
  while (m * (m - 1) / 2 < n_pairs) ++m;
  std::vector<double> xs(m);
  for (int i = 0; i < m; ++i) {
    double t = static_cast<double>(i) / (m - 1);
    xs[i] = std::pow(10.0, -6.0 + 5.7 * t) * kHalf;
  }
  double k_est = 0.0;
  int used = 0;
  for (int i = 0; i < m && used < n_pairs; ++i) {
    for (int j = i + 1; j < m && used < n_pairs; ++j) {
      double x = xs[i], y = xs[j];
      if (x == y) continue;
      double num = std::abs(derivative(p, x) - derivative(p, y)) *
                   std::pow(x, p.alpha) * std::pow(y, p.alpha);
      double den = std::pow(std::abs(x - y), p.alpha);
      k_est = std::max(k_est, num / den);
      ++used;
    }
  }
  bool pass = k_est <= p.c_order * p.c_order * p.k_holder * (1.0 + 1e-12);
  return {k_est, pass, used};
}

struct FamilyDistance {
  double sup_diff;     // sup over the grid of |T1 - T2|
  double holder_diff;  // Holder-alpha seminorm estimate of 1/DT1 - 1/DT2
};

/// Distance between two family members, sampled away from the singularity.
inline FamilyDistance family_distance(const MapParams& p1, const MapParams& p2, int grid) {
  if (grid < 2) throw std::invalid_argument("grid < 2");
  std::vector<double> xs;
  xs.reserve(2 * grid);
  for (int i = 0; i < grid; ++i) {
    double t = static_cast<double>(i) / (grid - 1);
    double mag = std::pow(10.0, -8.0 + 7.7 * t) * kHalf;
    xs.push_back(mag);
    xs.push_back(-mag);
  }
  double sup = 0.0;
  for (double x : xs) sup = std::max(sup, std::abs(eval(p1, x) - eval(p2, x)));

  double alpha = std::min(p1.alpha, p2.alpha);
  auto g = [&](double x) { return 1.0 / derivative(p1, x) - 1.0 / derivative(p2, x); };
  double hol = 0.0;
  std::vector<double> mags;
  for (int i = 0; i < grid; ++i) {
    double t = static_cast<double>(i) / (grid - 1);
    mags.push_back(std::pow(10.0, -6.0 + 5.7 * t) * kHalf);
  }
  std::vector<double> gv(mags.size());
  for (size_t i = 0; i < mags.size(); ++i) gv[i] = g(mags[i]);
  for (size_t i = 0; i < mags.size(); ++i)
    for (size_t j = i + 1; j < mags.size(); ++j) {
      double d = std::abs(mags[i] - mags[j]);
      if (d == 0.0) continue;
      hol = std::max(hol, std::abs(gv[i] - gv[j]) / std::pow(d, alpha));
    }
  return {sup, hol};
}

/// Admissible parameter interval with the scale rule a = 2^lambda and a
/// shared Holder exponent for the whole family.
struct FamilyRange {
  double lambda_lo;
  double lambda_hi;
  double alpha;  // shared exponent, >= 1 - lambda_lo

  static FamilyRange make(double lo, double hi, double alpha = 0.0) {
    FamilyRange r{lo, hi, alpha > 0.0 ? alpha : std::max(0.45, 1.0 - lo)};
    r.validate();
    return r;
  }
  void validate() const {
    if (!(lambda_lo > 0.0 && lambda_lo <= lambda_hi && lambda_hi <= 1.0))
      throw std::invalid_argument("need 0 < lambda_lo <= lambda_hi <= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha out of (0,1)");
    if (alpha + 1e-12 < 1.0 - lambda_lo)
      throw std::invalid_argument("alpha < 1 - lambda_lo");
    MapParams::standard(lambda_lo, alpha).validate();
    MapParams::standard(lambda_hi, alpha).validate();
  }
  double width() const { return lambda_hi - lambda_lo; }
};

// ---- flat key=value serialization ----------------------------------------

inline std::string map_params_to_kv(const MapParams& p) {
  std::ostringstream os;
  os.precision(17);
  os << "lambda=" << p.lambda << "\n"
     << "a=" << p.a << "\n"
     << "alpha=" << p.alpha << "\n"
     << "c_order=" << p.c_order << "\n"
     << "k_holder=" << p.k_holder << "\n";
  return os.str();
}

inline MapParams map_params_from_kv(const std::string& text) {
  std::map<std::string, double> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad key=value line: " + line);
    kv[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
  }
  for (const char* key : {"lambda", "a", "alpha", "c_order", "k_holder"})
    if (!kv.count(key)) throw std::invalid_argument(std::string("missing key ") + key);
  MapParams p{kv["lambda"], kv["a"], kv["alpha"], kv["c_order"], kv["k_holder"]};
  p.validate();
  return p;
}

}  // namespace rlm
