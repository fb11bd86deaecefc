#pragma once

namespace vrtm {

// psi(x), x > 0. Recurrence below 10 plus the asymptotic Bernoulli series;
// absolute error under 1e-12 across (0, inf). Throws std::domain_error for
// x <= 0 or non-finite input.
double digamma(double x);

// psi'(x), x > 0. Same scheme and error behaviour as digamma.
double trigamma(double x);

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double igamma_p(double a, double x);

// P(a, x) together with dP/da. The series (x < a+1) and the continued
// fraction (x >= a+1) are evaluated in forward-mode dual arithmetic so the
// a-derivative tracks the same stable recurrences as the value.
void igamma_p_grad(double a, double x, double* p, double* dp_da);

// Gamma(a, 1) density at x.
double gamma_pdf(double a, double x);

}  // namespace vrtm
