#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "vrtm/rng.hpp"
#include "vrtm/special.hpp"
#include "vrtm/tape.hpp"
#include "vrtm/tensor.hpp"

namespace vrtm {

// KL( Dir(gamma) || Dir(alpha * 1) ), closed form.
double kl_dirichlet(const std::vector<double>& gamma, double alpha);

// One draw from Gamma(shape a, rate 1). Marsaglia-Tsang squeeze with the
// u^(1/a) boost for a < 1. Consumes a deterministic number of variates only
// in distribution -- callers wanting reproducibility pass a dedicated stream.
double gamma_draw(double a, Prng& rng);

// Normalized Dirichlet draw from concentration gamma.
std::vector<double> sample_dirichlet(const std::vector<double>& gamma, Prng& rng);

// d y / d a for y ~ Gamma(a,1) under implicit reparameterization:
// dy/da = - (dP(a,y)/da) / gamma_pdf(a,y).
double gamma_sample_grad(double a, double y);

// Per-row KL( Dir(gamma_b) || Dir(alpha 1) ) on the tape; gamma (B,K) -> (B,).
template <typename T>
typename Tape<T>::Var kl_dirichlet_rows(Tape<T>& t, typename Tape<T>::Var gamma, double alpha) {
  // copy the dims: Var values can move when later ops grow the tape
  const Shape gshape = t.value(gamma).shape;
  if (gshape.size() != 2) throw std::invalid_argument("kl_dirichlet_rows: gamma must be 2-d");
  const std::int64_t b = gshape[0], k = gshape[1];
  auto s = t.row_sum(gamma);                       // (B,)
  auto term1 = t.lgamma_(s);                       // lgamma(sum gamma)
  auto term2 = t.row_sum(t.lgamma_(gamma));        // sum lgamma(gamma_k)
  auto diff = t.sub_per_row(t.digamma_(gamma), t.digamma_(s));
  auto alpha_t = t.constant(Tensor<T>::full(gshape, static_cast<T>(alpha)));
  auto inner = t.row_sum(t.mul(t.sub(gamma, alpha_t), diff));
  const double c0 = std::lgamma(static_cast<double>(k) * alpha) -
                    static_cast<double>(k) * std::lgamma(alpha);
  auto kl = t.add(t.sub(term1, term2), inner);
  auto c = t.constant(Tensor<T>::full({b}, static_cast<T>(-c0)));
  return t.add(kl, c);
}

// Gamma(gamma_bk, 1) draws as a tape node. One stream per row, consumed in
// column order. With pathwise=true the node backpropagates the implicit
// reparameterization gradient; otherwise the draw is treated as a constant.
template <typename T>
typename Tape<T>::Var gamma_sample_rows(Tape<T>& t, typename Tape<T>::Var gamma,
                                        std::vector<Prng>& streams, bool pathwise) {
  const auto& gv = t.value(gamma);
  if (gv.ndim() != 2 || static_cast<std::int64_t>(streams.size()) != gv.rows())
    throw std::invalid_argument("gamma_sample_rows: need one stream per row");
  Tensor<T> y(gv.shape);
  Tensor<T> dyda(gv.shape);
  for (std::int64_t b = 0; b < gv.rows(); ++b) {
    for (std::int64_t k = 0; k < gv.cols(); ++k) {
      const double a = static_cast<double>(gv.at(b, k));
      double draw = gamma_draw(a, streams[static_cast<std::size_t>(b)]);
      if (draw < 1e-290) draw = 1e-290;
      y.at(b, k) = static_cast<T>(draw);
      dyda.at(b, k) = pathwise ? static_cast<T>(gamma_sample_grad(a, draw)) : T(0);
    }
  }
  if (!pathwise) return t.constant(std::move(y));
  auto dy = std::make_shared<Tensor<T>>(std::move(dyda));
  const std::int32_t pid = gamma.id;
  return t.custom(std::move(y), {gamma},
                  [dy, pid](Tape<T>& tp, typename Tape<T>::Var, const Tensor<T>& g) {
                    Tensor<T> ga(dy->shape);
                    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * (*dy)[i];
                    tp.accum(pid, ga);
                  });
}

// theta rows: either Monte-Carlo (normalize a Gamma draw) or the Dirichlet
// mean gamma / sum(gamma) -- the deterministic path used by smoothness tests.
template <typename T>
typename Tape<T>::Var theta_mean_rows(Tape<T>& t, typename Tape<T>::Var gamma) {
  return t.div_per_row(gamma, t.row_sum(gamma));
}

template <typename T>
typename Tape<T>::Var theta_sample_rows(Tape<T>& t, typename Tape<T>::Var gamma,
                                        std::vector<Prng>& streams, bool pathwise) {
  auto y = gamma_sample_rows(t, gamma, streams, pathwise);
  return t.div_per_row(y, t.row_sum(y));
}

}  // namespace vrtm
