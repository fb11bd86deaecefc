#include "vrtm/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vrtm {

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("digamma: requires x > 0");
  double r = 0.0;
  while (x < 10.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  // asymptotic series in 1/x^2
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double s = std::log(x) - 0.5 * inv;
  s -= inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return r + s;
}

double trigamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("trigamma: requires x > 0");
  double r = 0.0;
  while (x < 10.0) {
    r += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double s = inv + 0.5 * inv2;
  s += inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))));
  return r + s;
}

namespace {

// value + derivative with respect to the shape parameter a
struct Dual {
  double v;
  double d;
};

inline Dual dual_const(double v) { return {v, 0.0}; }
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}
inline Dual dual_exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}

// exp(a*ln(x) - x - lgamma(a)) as a dual in a
Dual prefactor(double a, double x) {
  const Dual lg{std::lgamma(a), digamma(a)};
  const Dual expo = Dual{a, 1.0} * dual_const(std::log(x)) - dual_const(x) - lg;
  return dual_exp(expo);
}

// lower series, valid for x < a+1
Dual p_series(double a, double x) {
  Dual ap{a, 1.0};
  Dual del = dual_const(1.0) / ap;
  Dual sum = del;
  for (int n = 0; n < 500; ++n) {
    ap = ap + dual_const(1.0);
    del = del * (dual_const(x) / ap);
    sum = sum + del;
    if (std::fabs(del.v) < std::fabs(sum.v) * 1e-16 && std::fabs(del.d) <= (std::fabs(sum.d) + 1e-300) * 1e-14)
      break;
  }
  return prefactor(a, x) * sum;
}

// Lentz continued fraction for Q, valid for x >= a+1
Dual q_cf(double a, double x) {
  constexpr double kTiny = 1e-290;
  Dual b{x + 1.0 - a, -1.0};
  Dual c = dual_const(1.0 / kTiny);
  Dual d = dual_const(1.0) / b;
  Dual h = d;
  for (int i = 1; i <= 500; ++i) {
    const Dual an{-static_cast<double>(i) * (static_cast<double>(i) - a), static_cast<double>(i)};
    b = b + dual_const(2.0);
    d = an * d + b;
    if (std::fabs(d.v) < kTiny) d.v = d.v < 0 ? -kTiny : kTiny;
    c = b + an / c;
    if (std::fabs(c.v) < kTiny) c.v = c.v < 0 ? -kTiny : kTiny;
    d = dual_const(1.0) / d;
    const Dual delta = d * c;
    h = h * delta;
    if (std::fabs(delta.v - 1.0) < 1e-16 && std::fabs(delta.d) < 1e-14) break;
  }
  return prefactor(a, x) * h;
}

}  // namespace

void igamma_p_grad(double a, double x, double* p, double* dp_da) {
  if (!(a > 0.0) || !std::isfinite(a)) throw std::domain_error("igamma_p: requires a > 0");
  if (!(x >= 0.0) || !std::isfinite(x)) throw std::domain_error("igamma_p: requires x >= 0");
  if (x == 0.0) {
    *p = 0.0;
    *dp_da = 0.0;
    return;
  }
  Dual r;
  if (x < a + 1.0) {
    r = p_series(a, x);
  } else {
    const Dual q = q_cf(a, x);
    r = dual_const(1.0) - q;
  }
  *p = r.v;
  *dp_da = r.d;
}

double igamma_p(double a, double x) {
  double p, dp;
  igamma_p_grad(a, x, &p, &dp);
  return p;
}

double gamma_pdf(double a, double x) {
  if (x <= 0.0) return 0.0;
  return std::exp((a - 1.0) * std::log(x) - x - std::lgamma(a));
}

}  // namespace vrtm
