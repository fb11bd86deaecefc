// KL reference values and the inverse-CDF sensitivities come from
// tests/support/oracles.py (scipy/mpmath).
#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/reference.hpp"
#include "vrtm/dirichlet.hpp"
#include "vrtm/rng.hpp"
#include "vrtm/tape.hpp"

using namespace vrtm;
using Var = TapeD::Var;

TEST_CASE("kl_dirichlet closed form matches oracle") {
  CHECK(kl_dirichlet({2, 2}, 1.0) == doctest::Approx(0.12509280256138866).epsilon(1e-10));
  // quadrature value for the same case: 0.12509280256138833
  CHECK(std::fabs(kl_dirichlet({2, 2}, 1.0) - 0.12509280256138833) < 1e-6);
  CHECK(std::fabs(kl_dirichlet({2, 2}, 1.0) - 0.1250926) < 1e-6);
  CHECK(kl_dirichlet({0.7, 2.3, 1.1}, 0.5) == doctest::Approx(0.6346056765296062).epsilon(1e-10));
  CHECK(kl_dirichlet({1, 1, 1, 1, 1}, 0.5) == doctest::Approx(0.5468623411651943).epsilon(1e-10));
  CHECK(kl_dirichlet({3.5, 0.2}, 2.0) == doctest::Approx(8.436428269301732).epsilon(1e-10));
}

TEST_CASE("kl_dirichlet is zero at the prior and nonnegative elsewhere") {
  CHECK(std::fabs(kl_dirichlet({0.5, 0.5, 0.5}, 0.5)) < 1e-12);
  Prng rng(derive_stream(77, "kl-nonneg", 0, 0));
  for (int i = 0; i < 50; ++i) {
    std::vector<double> g(4);
    for (auto& x : g) x = 0.05 + 5.0 * rng.uniform();
    CHECK(kl_dirichlet(g, 0.5) >= -1e-12);
  }
}

TEST_CASE("kl_dirichlet_rows matches the scalar form and passes grad check") {
  TapeD t;
  TensorD g({2, 3}, {0.7, 2.3, 1.1, 1.0, 1.0, 1.0});
  auto kl = kl_dirichlet_rows(t, t.leaf(g), 0.5);
  CHECK(t.value(kl)[0] == doctest::Approx(kl_dirichlet({0.7, 2.3, 1.1}, 0.5)).epsilon(1e-12));
  CHECK(t.value(kl)[1] == doctest::Approx(kl_dirichlet({1, 1, 1}, 0.5)).epsilon(1e-12));

  auto build = [](TapeD& tp, const std::vector<Var>& v) {
    return tp.sum(kl_dirichlet_rows(tp, v[0], 0.5));
  };
  CHECK(grad_check<double>(build, {g}, 1e-6) < 1e-4);
}

TEST_CASE("gamma sampler moments") {
  for (double a : {0.5, 2.5}) {
    Prng rng(derive_stream(101, "gamma-moments", static_cast<std::uint64_t>(a * 10), 0));
    const int n = 50000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double y = gamma_draw(a, rng);
      CHECK(y > 0);
      s += y;
      s2 += y * y;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::fabs(mean - a) < 0.05);
    CHECK(std::fabs(var - a) < 0.12);
  }
}

TEST_CASE("probability integral transform of draws is uniform") {
  Prng rng(derive_stream(101, "gamma-pit", 0, 0));
  const int n = 20000;
  const double a = 1.3;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = igamma_p(a, gamma_draw(a, rng));
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    s += u;
    s2 += u * u;
  }
  const double mean = s / n;
  CHECK(std::fabs(mean - 0.5) < 0.012);
  CHECK(std::fabs((s2 / n - mean * mean) - 1.0 / 12.0) < 0.005);
}

TEST_CASE("implicit gradient matches inverse-CDF oracle points") {
  struct Row {
    double a, y, dyda;
  };
  const Row rows[] = {
      {0.5, 0.074235930916272719, 0.416621957012868},
      {1.7, 1.76334233302241828, 1.1221035293199},
      {3.2, 1.2777173011383121, 0.641397769454163},
      {0.9, 2.62170805139872087, 1.94820565116386},
      {5.0, 4.67090888279598372, 0.999093034942611},
  };
  for (const auto& r : rows) {
    const double got = gamma_sample_grad(r.a, r.y);
    CHECK(std::fabs(got - r.dyda) / std::fabs(r.dyda) < 1e-8);
  }
}


TEST_CASE("implicit gradient vs same-uniform finite differences") {
  Prng rng(derive_stream(101, "gamma-fd", 0, 0));
  int tested = 0;
  double worst = 0;
  while (tested < 150) {
    const double a = 0.3 + 5.7 * rng.uniform();
    const double y = gamma_draw(a, rng);
    const double u = igamma_p(a, y);
    if (u < 1e-3 || u > 1.0 - 1e-3) continue;  // keep FD well-conditioned
    const double eps = 1e-5 * std::max(1.0, a);
    const double yp = ref::invert_p(a + eps, u, y);
    const double ym = ref::invert_p(a - eps, u, y);
    const double fd = (yp - ym) / (2 * eps);
    const double an = gamma_sample_grad(a, y);
    const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-12});
    worst = std::max(worst, rel);
    ++tested;
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("gamma_sample_rows: plumbing, determinism, theta simplex") {
  TapeD t;
  TensorD g({2, 2}, {0.8, 1.7, 2.4, 0.6});
  auto gv = t.leaf(g);
  auto mk_streams = [] {
    std::vector<Prng> s;
    s.emplace_back(derive_stream(9, "theta", 0, 0));
    s.emplace_back(derive_stream(9, "theta", 1, 0));
    return s;
  };
  auto streams = mk_streams();
  auto y = gamma_sample_rows(t, gv, streams, true);
  const TensorD w({2, 2}, {0.3, -1.2, 0.7, 2.0});
  t.backward(t.sum(t.cmul(y, w)));
  auto gg = t.grad(gv);
  for (int i = 0; i < 4; ++i) {
    const double expect = w[i] * gamma_sample_grad(g[i], t.value(y)[i]);
    CHECK(gg[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  // identical streams reproduce identical draws
  TapeD t2;
  auto streams2 = mk_streams();
  auto y2 = gamma_sample_rows(t2, t2.leaf(g), streams2, false);
  CHECK(t2.value(y2).data == t.value(y).data);

  // normalized rows live on the simplex
  TapeD t3;
  auto streams3 = mk_streams();
  auto th = theta_sample_rows(t3, t3.leaf(g), streams3, true);
  const auto& tv = t3.value(th);
  for (int r = 0; r < 2; ++r) {
    CHECK(tv.at(r, 0) > 0);
    CHECK(tv.at(r, 1) > 0);
    CHECK(tv.at(r, 0) + tv.at(r, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("theta_mean_rows is the normalized concentration and differentiable") {
  TensorD g({1, 3}, {1.0, 2.0, 5.0});
  TapeD t;
  auto th = theta_mean_rows(t, t.leaf(g));
  CHECK(t.value(th).data == std::vector<double>{0.125, 0.25, 0.625});
  auto build = [](TapeD& tp, const std::vector<Var>& v) {
    auto th2 = theta_mean_rows(tp, v[0]);
    return tp.sum(tp.xlogx(th2));
  };
  CHECK(grad_check<double>(build, {g}, 1e-6) < 1e-4);
}
