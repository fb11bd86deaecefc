#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vrtm/corpus.hpp"
#include "vrtm/rng.hpp"
#include "vrtm/tape.hpp"
#include "vrtm/tensor.hpp"

namespace vrtm {

// Variational heads. gamma comes from a (T,E,K) contraction of the masked
// embeddings; phi from a one-hidden-layer net on each masked row. Batch
// normalization sits on both pre-activations and can be bypassed for tests.
template <typename T>
struct EncoderParams {
  std::int64_t tlen = 0, e = 0, k = 0, hphi = 0;
  Tensor<T> w_gamma;                 // (T,E,K)
  Tensor<T> phi_w1, phi_b1;          // (E,Hphi), (Hphi)
  Tensor<T> phi_w2, phi_b2;          // (Hphi,K), (K)
  Tensor<T> bn_g_scale, bn_g_shift;  // (K)
  Tensor<T> bn_p_scale, bn_p_shift;  // (K)
  typename Tape<T>::BnStats bn_g, bn_p;
  bool use_bn = true;
};

template <typename T>
EncoderParams<T> init_encoder_params(std::int64_t tlen, std::int64_t e, std::int64_t k,
                                     Prng& rng, bool use_bn = true) {
  auto uni = [&rng](Shape s, double bound) {
    Tensor<T> t(s);
    for (auto& x : t.data) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    return t;
  };
  EncoderParams<T> p;
  p.tlen = tlen;
  p.e = e;
  p.k = k;
  p.hphi = 2 * k;
  p.w_gamma = uni({tlen, e, k}, 1.0 / std::sqrt(static_cast<double>(tlen * e)));
  p.phi_w1 = uni({e, p.hphi}, 1.0 / std::sqrt(static_cast<double>(e)));
  p.phi_b1 = Tensor<T>({p.hphi});
  p.phi_w2 = uni({p.hphi, k}, 1.0 / std::sqrt(static_cast<double>(p.hphi)));
  p.phi_b2 = Tensor<T>({k});
  p.bn_g_scale = Tensor<T>::full({k}, T(1));
  p.bn_g_shift = Tensor<T>({k});
  p.bn_p_scale = Tensor<T>::full({k}, T(1));
  p.bn_p_shift = Tensor<T>({k});
  p.bn_g = {Tensor<T>({k}), Tensor<T>::full({k}, T(1)), 0.9, 1e-5};
  p.bn_p = {Tensor<T>({k}), Tensor<T>::full({k}, T(1)), 0.9, 1e-5};
  p.use_bn = use_bn;
  return p;
}

template <typename T>
struct EncoderVars {
  typename Tape<T>::Var w_gamma, phi_w1, phi_b1, phi_w2, phi_b2;
  typename Tape<T>::Var bn_g_scale, bn_g_shift, bn_p_scale, bn_p_shift;
};

template <typename T>
EncoderVars<T> bind_encoder(Tape<T>& t, const EncoderParams<T>& p, bool requires_grad) {
  EncoderVars<T> v;
  v.w_gamma = t.leaf(p.w_gamma, requires_grad);
  v.phi_w1 = t.leaf(p.phi_w1, requires_grad);
  v.phi_b1 = t.leaf(p.phi_b1, requires_grad);
  v.phi_w2 = t.leaf(p.phi_w2, requires_grad);
  v.phi_b2 = t.leaf(p.phi_b2, requires_grad);
  v.bn_g_scale = t.leaf(p.bn_g_scale, requires_grad);
  v.bn_g_shift = t.leaf(p.bn_g_shift, requires_grad);
  v.bn_p_scale = t.leaf(p.bn_p_scale, requires_grad);
  v.bn_p_shift = t.leaf(p.bn_p_shift, requires_grad);
  return v;
}

// Count-scale factors per token row: the in-window thematic count of the
// token, zero for stopwords and padding.
template <typename T>
Tensor<T> count_scales(const Batch& batch) {
  Tensor<T> s({batch.b * batch.t});
  for (std::int64_t r = 0; r < batch.b; ++r)
    for (std::int64_t t = 0; t < batch.t; ++t) {
      const auto idx = r * batch.t + t;
      if (batch.flags[idx] && batch.mask[idx])
        s[idx] = static_cast<T>(batch.bow[r * batch.v + batch.tokens[idx]]);
    }
  return s;
}

// (B*T, E) rows: e_{w_t} scaled by the token's thematic count (zero rows for
// stopwords / padding).
template <typename T>
typename Tape<T>::Var masked_embeddings(Tape<T>& t, typename Tape<T>::Var emb,
                                        const Batch& batch) {
  auto rows = t.gather_rows(emb, batch.tokens);
  return t.mul_per_row(rows, t.constant(count_scales<T>(batch)));
}

// gamma (B,K): softplus of the batch-normalized (T,E)x(T,E,K) contraction,
// clamped strictly positive.
template <typename T>
typename Tape<T>::Var infer_gamma(Tape<T>& t, const EncoderVars<T>& v,
                                  const EncoderParams<T>& p, typename Tape<T>::Var masked,
                                  std::int64_t batch_rows, bool training, bool update_stats,
                                  typename Tape<T>::BnStats* stats) {
  auto cube = t.reshape(masked, {batch_rows, p.tlen, p.e});
  auto pre = t.tensordot(cube, v.w_gamma, 2);
  if (p.use_bn)
    pre = t.batch_norm(pre, v.bn_g_scale, v.bn_g_shift, stats, training, update_stats);
  return t.clamp_min(t.softplus_(pre), 1e-6);
}

// phi (B*T,K): softmax of the net output for thematic rows, exactly uniform
// 1/K elsewhere.
template <typename T>
typename Tape<T>::Var infer_phi(Tape<T>& t, const EncoderVars<T>& v, const EncoderParams<T>& p,
                                typename Tape<T>::Var masked, const Batch& batch, bool training,
                                bool update_stats, typename Tape<T>::BnStats* stats) {
  auto h = t.softplus_(t.add_rowvec(t.matmul(masked, v.phi_w1), v.phi_b1));
  auto pre = t.add_rowvec(t.matmul(h, v.phi_w2), v.phi_b2);
  if (p.use_bn)
    pre = t.batch_norm(pre, v.bn_p_scale, v.bn_p_shift, stats, training, update_stats);
  auto sm = t.softmax_rows(pre);

  const std::int64_t rows = batch.b * batch.t;
  Tensor<T> them({rows, p.k});
  Tensor<T> unif({rows, p.k});
  const T u = static_cast<T>(1.0 / static_cast<double>(p.k));
  for (std::int64_t r = 0; r < rows; ++r) {
    const bool on = batch.flags[r] && batch.mask[r];
    for (std::int64_t j = 0; j < p.k; ++j) {
      them.at(r, j) = on ? T(1) : T(0);
      unif.at(r, j) = on ? T(0) : u;
    }
  }
  return t.add(t.cmul(sm, them), t.constant(std::move(unif)));
}

}  // namespace vrtm
