#pragma once
// Log-linear least squares for exponential tails: fits log y = log c - rate*n
// over the supplied (n, y) points with y > 0 and reports the goodness of fit
// on the log scale.

#include <cmath>
#include <utility>
#include <vector>

namespace rlm {

struct TailFit {
  double c = 0.0;
  double rate = 0.0;
  double r2 = 0.0;
  int n_lo = 0, n_hi = 0;
  int points = 0;
  bool ok = false;
};

inline TailFit fit_exponential_tail(const std::vector<std::pair<int, double>>& samples,
                                    int min_points = 5) {
  std::vector<std::pair<double, double>> pts;
  for (auto& [n, y] : samples)
    if (y > 0.0 && std::isfinite(y)) pts.emplace_back(static_cast<double>(n), std::log(y));
  TailFit fit;
  fit.points = static_cast<int>(pts.size());
  if (fit.points < std::max(min_points, 2)) return fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double n = static_cast<double>(pts.size());
  double denom = n * sxx - sx * sx;
  if (denom <= 0.0) return fit;
  double slope = (n * sxy - sx * sy) / denom;
  double intercept = (sy - slope * sx) / n;
  double ss_res = 0, ss_tot = 0, ybar = sy / n;
  for (auto& [x, y] : pts) {
    double e = y - (intercept + slope * x);
    ss_res += e * e;
    ss_tot += (y - ybar) * (y - ybar);
  }
  fit.c = std::exp(intercept);
  fit.rate = -slope;
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.n_lo = static_cast<int>(pts.front().first);
  fit.n_hi = static_cast<int>(pts.back().first);
  fit.ok = true;
  return fit;
}

}  // namespace rlm
