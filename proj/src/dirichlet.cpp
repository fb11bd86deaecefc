#include "vrtm/dirichlet.hpp"

#include <cmath>
#include <stdexcept>

namespace vrtm {

double kl_dirichlet(const std::vector<double>& gamma, double alpha) {
  if (gamma.empty()) throw std::invalid_argument("kl_dirichlet: empty gamma");
  if (alpha <= 0) throw std::invalid_argument("kl_dirichlet: alpha must be positive");
  const double k = static_cast<double>(gamma.size());
  double gsum = 0, lg_sum = 0, corr = 0;
  for (double g : gamma) {
    if (g <= 0) throw std::invalid_argument("kl_dirichlet: gamma must be positive");
    gsum += g;
  }
  const double psi_gsum = digamma(gsum);
  for (double g : gamma) {
    lg_sum += std::lgamma(g);
    corr += (g - alpha) * (digamma(g) - psi_gsum);
  }
  return std::lgamma(gsum) - lg_sum - std::lgamma(k * alpha) + k * std::lgamma(alpha) + corr;
}

double gamma_draw(double a, Prng& rng) {
  if (!(a > 0)) throw std::invalid_argument("gamma_draw: shape must be positive");
  if (a < 1.0) {
    // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
    const double u = rng.uniform();
    return gamma_draw(a + 1.0, rng) * std::pow(u, 1.0 / a);
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> sample_dirichlet(const std::vector<double>& gamma, Prng& rng) {
  std::vector<double> y(gamma.size());
  double s = 0;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    y[i] = gamma_draw(gamma[i], rng);
    if (y[i] < 1e-290) y[i] = 1e-290;
    s += y[i];
  }
  for (double& v : y) v /= s;
  return y;
}

double gamma_sample_grad(double a, double y) {
  double p, dp_da;
  igamma_p_grad(a, y, &p, &dp_da);
  const double pdf = gamma_pdf(a, y);
  if (!(pdf > 0) || !std::isfinite(pdf)) return 0.0;
  const double g = -dp_da / pdf;
  return std::isfinite(g) ? g : 0.0;
}

}  // namespace vrtm
