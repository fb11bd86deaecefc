#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vrtm/corpus.hpp"
#include "vrtm/dirichlet.hpp"
#include "vrtm/encoder.hpp"
#include "vrtm/rnn.hpp"

namespace vrtm {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>*>>;

// Everything trainable plus the prior: embeddings, the recurrent cell and
// projection, topic logit offsets beta, the thematic gate, and the
// variational encoder.
template <typename T>
struct VrtmModel {
  std::int64_t k = 0, v = 0, e = 0, h = 0, tlen = 0;
  double alpha = 0.5;
  Tensor<T> emb;     // (V,E)
  RnnParams<T> rnn;
  Tensor<T> beta;    // (K,V)
  Tensor<T> gate_w;  // (H,1)
  Tensor<T> gate_b;  // (1)
  EncoderParams<T> enc;

  NamedParams<T> named_params() {
    NamedParams<T> out;
    out.emplace_back("emb", &emb);
    for (std::size_t g = 0; g < rnn.w_x.size(); ++g) {
      const std::string i = std::to_string(g);
      out.emplace_back("rnn.wx" + i, &rnn.w_x[g]);
      out.emplace_back("rnn.wh" + i, &rnn.w_h[g]);
      out.emplace_back("rnn.b" + i, &rnn.b[g]);
    }
    out.emplace_back("rnn.proj_w", &rnn.proj_w);
    out.emplace_back("rnn.proj_b", &rnn.proj_b);
    out.emplace_back("beta", &beta);
    out.emplace_back("gate_w", &gate_w);
    out.emplace_back("gate_b", &gate_b);
    out.emplace_back("enc.w_gamma", &enc.w_gamma);
    out.emplace_back("enc.phi_w1", &enc.phi_w1);
    out.emplace_back("enc.phi_b1", &enc.phi_b1);
    out.emplace_back("enc.phi_w2", &enc.phi_w2);
    out.emplace_back("enc.phi_b2", &enc.phi_b2);
    out.emplace_back("enc.bn_g_scale", &enc.bn_g_scale);
    out.emplace_back("enc.bn_g_shift", &enc.bn_g_shift);
    out.emplace_back("enc.bn_p_scale", &enc.bn_p_scale);
    out.emplace_back("enc.bn_p_shift", &enc.bn_p_shift);
    return out;
  }

  // non-trainable state that still belongs in checkpoints
  NamedParams<T> named_state() {
    return {{"enc.bn_g.mean", &enc.bn_g.running_mean},
            {"enc.bn_g.var", &enc.bn_g.running_var},
            {"enc.bn_p.mean", &enc.bn_p.running_mean},
            {"enc.bn_p.var", &enc.bn_p.running_var}};
  }
};

template <typename T>
VrtmModel<T> init_model(std::int64_t k, std::int64_t v, std::int64_t e, std::int64_t h,
                        std::int64_t tlen, CellKind cell, double alpha, std::uint64_t seed,
                        bool use_bn = true) {
  VrtmModel<T> m;
  m.k = k;
  m.v = v;
  m.e = e;
  m.h = h;
  m.tlen = tlen;
  m.alpha = alpha;
  auto uni = [](Shape s, double bound, Prng& rng) {
    Tensor<T> t(s);
    for (auto& x : t.data) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    return t;
  };
  Prng erng(derive_stream(seed, "init-emb", 0, 0));
  m.emb = uni({v, e}, 1.0 / std::sqrt(static_cast<double>(e)), erng);
  Prng rrng(derive_stream(seed, "init-rnn", 0, 0));
  m.rnn = init_rnn_params<T>(cell, e, h, v, rrng);
  // Topic offsets start with deliberately large spread: like the classical
  // VB baseline's random topic-word init, symmetric topics are a saddle the
  // optimizer cannot leave, so the initial asymmetry is what seeds topic
  // identity.
  Prng brng(derive_stream(seed, "init-beta", 0, 0));
  m.beta = uni({k, v}, 1.0, brng);
  Prng grng(derive_stream(seed, "init-gate", 0, 0));
  m.gate_w = uni({h, 1}, 1.0 / std::sqrt(static_cast<double>(h)), grng);
  m.gate_b = Tensor<T>({1});
  Prng encrng(derive_stream(seed, "init-enc", 0, 0));
  m.enc = init_encoder_params<T>(tlen, e, k, encrng, use_bn);
  return m;
}

template <typename T>
struct ModelVars {
  typename Tape<T>::Var emb, beta, gate_w, gate_b;
  RnnVars<T> rnn;
  EncoderVars<T> enc;
};

template <typename T>
struct BoundModel {
  ModelVars<T> vars;
  // (name, leaf) in the exact order of named_params()
  std::vector<std::pair<std::string, typename Tape<T>::Var>> named;
};

template <typename T>
BoundModel<T> bind_model(Tape<T>& t, const VrtmModel<T>& m, bool requires_grad) {
  BoundModel<T> b;
  b.vars.emb = t.leaf(m.emb, requires_grad);
  b.named.emplace_back("emb", b.vars.emb);
  b.vars.rnn.kind = m.rnn.kind;
  b.vars.rnn.h = m.h;
  for (std::size_t g = 0; g < m.rnn.w_x.size(); ++g) {
    const std::string i = std::to_string(g);
    b.vars.rnn.w_x.push_back(t.leaf(m.rnn.w_x[g], requires_grad));
    b.named.emplace_back("rnn.wx" + i, b.vars.rnn.w_x.back());
    b.vars.rnn.w_h.push_back(t.leaf(m.rnn.w_h[g], requires_grad));
    b.named.emplace_back("rnn.wh" + i, b.vars.rnn.w_h.back());
    b.vars.rnn.b.push_back(t.leaf(m.rnn.b[g], requires_grad));
    b.named.emplace_back("rnn.b" + i, b.vars.rnn.b.back());
  }
  b.vars.rnn.proj_w = t.leaf(m.rnn.proj_w, requires_grad);
  b.named.emplace_back("rnn.proj_w", b.vars.rnn.proj_w);
  b.vars.rnn.proj_b = t.leaf(m.rnn.proj_b, requires_grad);
  b.named.emplace_back("rnn.proj_b", b.vars.rnn.proj_b);
  b.vars.beta = t.leaf(m.beta, requires_grad);
  b.named.emplace_back("beta", b.vars.beta);
  b.vars.gate_w = t.leaf(m.gate_w, requires_grad);
  b.named.emplace_back("gate_w", b.vars.gate_w);
  b.vars.gate_b = t.leaf(m.gate_b, requires_grad);
  b.named.emplace_back("gate_b", b.vars.gate_b);
  b.vars.enc.w_gamma = t.leaf(m.enc.w_gamma, requires_grad);
  b.named.emplace_back("enc.w_gamma", b.vars.enc.w_gamma);
  b.vars.enc.phi_w1 = t.leaf(m.enc.phi_w1, requires_grad);
  b.named.emplace_back("enc.phi_w1", b.vars.enc.phi_w1);
  b.vars.enc.phi_b1 = t.leaf(m.enc.phi_b1, requires_grad);
  b.named.emplace_back("enc.phi_b1", b.vars.enc.phi_b1);
  b.vars.enc.phi_w2 = t.leaf(m.enc.phi_w2, requires_grad);
  b.named.emplace_back("enc.phi_w2", b.vars.enc.phi_w2);
  b.vars.enc.phi_b2 = t.leaf(m.enc.phi_b2, requires_grad);
  b.named.emplace_back("enc.phi_b2", b.vars.enc.phi_b2);
  b.vars.enc.bn_g_scale = t.leaf(m.enc.bn_g_scale, requires_grad);
  b.named.emplace_back("enc.bn_g_scale", b.vars.enc.bn_g_scale);
  b.vars.enc.bn_g_shift = t.leaf(m.enc.bn_g_shift, requires_grad);
  b.named.emplace_back("enc.bn_g_shift", b.vars.enc.bn_g_shift);
  b.vars.enc.bn_p_scale = t.leaf(m.enc.bn_p_scale, requires_grad);
  b.named.emplace_back("enc.bn_p_scale", b.vars.enc.bn_p_scale);
  b.vars.enc.bn_p_shift = t.leaf(m.enc.bn_p_shift, requires_grad);
  b.named.emplace_back("enc.bn_p_shift", b.vars.enc.bn_p_shift);
  return b;
}

struct ElboTerms {
  double l_w = 0, l_z = 0, l_phi = 0, l_l = 0, l_theta = 0, total = 0;
};

enum class ThetaMode { Mc, Analytic };

template <typename T>
struct ForwardOpts {
  bool training = false;      // batch-stat BN + dropout active
  bool update_bn = false;
  int samples = 1;            // S
  ThetaMode theta_mode = ThetaMode::Mc;
  bool theta_pathwise = true;
  bool rnn_only = false;      // force l = 0: no encoder, no L_l, no L_theta
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;     // global step, used for dropout streams
  bool collect_eval = false;  // keep per-step rho / token log-probs
};

template <typename T>
struct ForwardResult {
  using Var = typename Tape<T>::Var;
  Var l_w, l_z, l_phi, l_l, l_theta, total;  // batch sums
  Var gamma;                  // (B,K); invalid when rnn_only
  Var phi;                    // (B*T,K); invalid when rnn_only
  std::vector<Var> log_theta; // per sample, (B,K)
  // populated when collect_eval: per step
  std::vector<Var> rho;          // (B,)
  std::vector<Var> lp_rnn_obs;   // (B,)
  std::vector<Var> lp_topic_obs; // (B,K)
  double c_logk = 0;             // the shared C log K constant
  std::int64_t c_count = 0;      // C = # real non-thematic tokens
};

// Build the full differentiable ELBO for one batch. All five terms are
// batch sums; masking guarantees padded positions contribute exactly zero.
template <typename T>
ForwardResult<T> vrtm_forward(Tape<T>& t, VrtmModel<T>& m, const ModelVars<T>& mv,
                              const Batch& batch, const ForwardOpts<T>& o) {
  using Var = typename Tape<T>::Var;
  const std::int64_t B = batch.b, L = batch.t;
  if (batch.v != m.v) throw std::invalid_argument("batch/model vocabulary size mismatch");
  if (L != m.tlen) throw std::invalid_argument("batch window length != model seq_len");

  ForwardResult<T> r;

  std::vector<std::uint8_t> flag(batch.flags);
  if (o.rnn_only) std::fill(flag.begin(), flag.end(), 0);

  std::int64_t c_count = 0, n_them = 0;
  for (std::int64_t i = 0; i < B * L; ++i) {
    if (!batch.mask[i]) continue;
    if (flag[i]) ++n_them; else ++c_count;
  }
  r.c_count = c_count;
  r.c_logk = static_cast<double>(c_count) * std::log(static_cast<double>(m.k));

  // ---- encoder ----
  const bool want_topics = !o.rnn_only;
  if (want_topics) {
    auto masked = masked_embeddings(t, mv.emb, batch);
    r.gamma = infer_gamma(t, mv.enc, m.enc, masked, B, o.training, o.update_bn, &m.enc.bn_g);
    r.phi = infer_phi(t, mv.enc, m.enc, masked, batch, o.training, o.update_bn, &m.enc.bn_p);
    if (o.theta_mode == ThetaMode::Analytic) {
      r.log_theta.push_back(
          t.sub_per_row(t.digamma_(r.gamma), t.digamma_(t.row_sum(r.gamma))));
    } else {
      for (int s = 0; s < o.samples; ++s) {
        std::vector<Prng> streams;
        streams.reserve(static_cast<std::size_t>(B));
        for (std::int64_t b = 0; b < B; ++b)
          streams.emplace_back(derive_stream(
              o.seed, "theta", static_cast<std::uint64_t>(batch.win_ids[b]),
              o.epoch * static_cast<std::uint64_t>(o.samples) + static_cast<std::uint64_t>(s)));
        auto theta = theta_sample_rows(t, r.gamma, streams, o.theta_pathwise);
        r.log_theta.push_back(t.log_(theta));
      }
    }
  }

  // ---- recurrent trunk on shifted inputs ----
  std::vector<std::int64_t> in_ids(static_cast<std::size_t>(B * L));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t s = 0; s < L; ++s)
      in_ids[b * L + s] = s == 0 ? std::int64_t(1) /*<sep>*/ : batch.tokens[b * L + s - 1];
  auto x = t.gather_rows(mv.emb, in_ids);
  Prng drop_rng(derive_stream(o.seed, "dropout", o.step, 0));
  if (o.training && o.dropout > 0)
    x = t.cmul(x, dropout_mask<T>({B * L, m.e}, o.dropout, drop_rng));
  auto states = sequence_states(t, mv.rnn, x, B, L);

  Var l_w, l_phi_v, l_l_v, l_z_mc;
  bool have_lw = false, have_lphi = false, have_ll = false, have_lz = false;

  for (std::int64_t step = 0; step < L; ++step) {
    Tensor<T> them_mask({B}), nonthem_mask({B});
    std::vector<std::int64_t> obs(static_cast<std::size_t>(B));
    bool any_them = false, any_nonthem = false;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto idx = b * L + step;
      obs[static_cast<std::size_t>(b)] = batch.tokens[idx];
      if (batch.mask[idx]) {
        if (flag[idx]) {
          them_mask[b] = T(1);
          any_them = true;
        } else {
          nonthem_mask[b] = T(1);
          any_nonthem = true;
        }
      }
    }
    if (!any_them && !any_nonthem) continue;  // fully padded step

    auto h = states[static_cast<std::size_t>(step)];
    auto hd = h;
    if (o.training && o.dropout > 0)
      hd = t.cmul(hd, dropout_mask<T>({B, m.h}, o.dropout, drop_rng));
    auto rnn_logits = project_logits(t, mv.rnn, hd);
    auto lp_rnn = t.log_softmax_rows(rnn_logits);
    auto lp_rnn_picked = t.pick_cols(lp_rnn, obs);

    Var them_m = t.constant(them_mask);
    Var nonthem_m = t.constant(nonthem_mask);

    // words: thematic tokens mix the K topic-offset decoders by phi
    Var lw_step;
    bool have_step = false;
    Var lp_topic;
    if (want_topics && (any_them || o.collect_eval)) {
      std::vector<Var> cols;
      cols.reserve(static_cast<std::size_t>(m.k));
      for (std::int64_t kk = 0; kk < m.k; ++kk) {
        auto logits_k = t.add_rowvec(rnn_logits, t.slice_row(mv.beta, kk));
        cols.push_back(t.pick_cols(t.log_softmax_rows(logits_k), obs));
      }
      lp_topic = t.stack_cols(cols);
    }
    if (want_topics && any_them) {
      std::vector<std::int64_t> rows(static_cast<std::size_t>(B));
      for (std::int64_t b = 0; b < B; ++b) rows[static_cast<std::size_t>(b)] = b * L + step;
      auto phi_t = t.gather_rows(r.phi, rows);
      lw_step = t.sum(t.mul(t.row_sum(t.mul(phi_t, lp_topic)), them_m));
      have_step = true;

      // z: the MC (or analytic) expectation of log theta, phi-weighted
      for (std::size_t s = 0; s < r.log_theta.size(); ++s) {
        auto piece =
            t.sum(t.mul(t.row_sum(t.mul(phi_t, r.log_theta[s])), them_m));
        l_z_mc = have_lz ? t.add(l_z_mc, piece) : piece;
        have_lz = true;
      }

      // phi entropy
      auto ent = t.smul(t.sum(t.mul(t.row_sum(t.xlogx(phi_t)), them_m)), -1.0);
      l_phi_v = have_lphi ? t.add(l_phi_v, ent) : ent;
      have_lphi = true;
    }
    if (any_nonthem) {
      auto piece = t.sum(t.mul(lp_rnn_picked, nonthem_m));
      lw_step = have_step ? t.add(lw_step, piece) : piece;
      have_step = true;
    }
    if (have_step) {
      l_w = have_lw ? t.add(l_w, lw_step) : lw_step;
      have_lw = true;
    }

    // thematic gate: supervised Bernoulli log-likelihood, stable softplus form
    if (!o.rnn_only) {
      auto rcol = t.add_rowvec(t.matmul(h, mv.gate_w), mv.gate_b);
      auto rflat = t.reshape(rcol, {B});
      auto ll_them = t.mul(t.softplus_(t.neg(rflat)), them_m);   // -log sigma(r)
      auto ll_non = t.mul(t.softplus_(rflat), nonthem_m);        // -log(1-sigma(r))
      auto piece = t.smul(t.add(t.sum(ll_them), t.sum(ll_non)), -1.0);
      l_l_v = have_ll ? t.add(l_l_v, piece) : piece;
      have_ll = true;
    }

    if (o.collect_eval) {
      auto rcol = t.add_rowvec(t.matmul(h, mv.gate_w), mv.gate_b);
      r.rho.push_back(t.sigmoid(t.reshape(rcol, {B})));
      r.lp_rnn_obs.push_back(lp_rnn_picked);
      if (want_topics) r.lp_topic_obs.push_back(lp_topic);
    }
  }

  auto zero = [&t]() { return t.constant(Tensor<T>::scalar(T(0))); };
  r.l_w = have_lw ? l_w : zero();

  // L_z = (1/S) sum_s sum_{t:l=1} phi . log theta  -  C log K
  Var lz = have_lz ? t.smul(l_z_mc, 1.0 / static_cast<double>(r.log_theta.empty()
                                                                  ? 1
                                                                  : r.log_theta.size()))
                   : zero();
  r.l_z = t.add(lz, t.constant(Tensor<T>::scalar(static_cast<T>(-r.c_logk))));

  // L_phi = entropy + C log K (the same constant, cancelling exactly)
  Var lp = have_lphi ? l_phi_v : zero();
  r.l_phi = t.add(lp, t.constant(Tensor<T>::scalar(static_cast<T>(r.c_logk))));

  r.l_l = have_ll ? l_l_v : zero();
  r.l_theta = want_topics
                  ? t.smul(t.sum(kl_dirichlet_rows(t, r.gamma, m.alpha)), -1.0)
                  : zero();
  r.total = t.add(t.add(t.add(t.add(r.l_w, r.l_z), r.l_phi), r.l_l), r.l_theta);
  return r;
}

// Value-level convenience: the five terms for one batch.
template <typename T>
ElboTerms elbo(VrtmModel<T>& m, const Batch& batch, const ForwardOpts<T>& o) {
  Tape<T> t;
  auto bound = bind_model(t, m, false);
  auto r = vrtm_forward(t, m, bound.vars, batch, o);
  ElboTerms e;
  e.l_w = static_cast<double>(t.value(r.l_w)[0]);
  e.l_z = static_cast<double>(t.value(r.l_z)[0]);
  e.l_phi = static_cast<double>(t.value(r.l_phi)[0]);
  e.l_l = static_cast<double>(t.value(r.l_l)[0]);
  e.l_theta = static_cast<double>(t.value(r.l_theta)[0]);
  e.total = static_cast<double>(t.value(r.total)[0]);
  return e;
}

// Force l = 0 everywhere, drop L_l and L_theta: the bound must equal the
// plain recurrent log-likelihood.
template <typename T>
std::pair<double, double> theorem1_check(VrtmModel<T>& m, const Batch& batch) {
  Tape<T> t;
  auto bound = bind_model(t, m, false);
  ForwardOpts<T> o;
  o.rnn_only = true;
  o.collect_eval = true;
  auto r = vrtm_forward(t, m, bound.vars, batch, o);
  double rnn_ll = 0;
  std::int64_t step = 0;
  for (std::int64_t s = 0; s < batch.t; ++s) {
    bool any = false;
    for (std::int64_t b = 0; b < batch.b; ++b) any = any || batch.mask[b * batch.t + s];
    if (!any) continue;
    const auto& lp = t.value(r.lp_rnn_obs[static_cast<std::size_t>(step)]);
    for (std::int64_t b = 0; b < batch.b; ++b)
      if (batch.mask[b * batch.t + s]) rnn_ll += static_cast<double>(lp[b]);
    ++step;
  }
  return {static_cast<double>(t.value(r.total)[0]), rnn_ll};
}

}  // namespace vrtm
