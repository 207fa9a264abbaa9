#include "confopt/mathutil.hpp"

#include <cmath>
#include <stdexcept>

namespace confopt {

namespace {

constexpr int kMaxIter = 500;
constexpr double kEps = 3e-14;

// Series expansion, converges fast for x < a + 1.
double gser(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < kMaxIter; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction (Lentz), for x >= a + 1; returns Q(a, x).
double gcf(double a, double x) {
  double b = x + 1.0 - a;
  double c = 1.0 / 1e-300;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::fabs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gammp(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gammp: a>0, x>=0 required");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gser(a, x);
  return 1.0 - gcf(a, x);
}

double gammp_da(double a, double x) {
  double h = 1e-5 * std::max(1.0, a);
  if (a - h <= 0.0) h = a * 0.5;
  return (gammp(a + h, x) - gammp(a - h, x)) / (2.0 * h);
}

double gamma_pdf(double a, double x) {
  if (x <= 0.0) return 0.0;
  return std::exp((a - 1.0) * std::log(x) - x - std::lgamma(a));
}

double inv_gammp(double a, double p) {
  if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("inv_gammp: p in (0,1) required");
  double lo = 0.0, hi = std::max(a, 1.0);
  while (gammp(a, hi) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (gammp(a, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double gamma_implicit_grad(double a, double z) {
  double f = gamma_pdf(a, z);
  if (f <= 0.0) return 0.0;
  return -gammp_da(a, z) / f;
}

}  // namespace confopt
