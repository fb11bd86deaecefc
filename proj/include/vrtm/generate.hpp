#pragma once

#include <string>
#include <vector>

#include "vrtm/model.hpp"

namespace vrtm {

struct GenerationConfig {
  std::int64_t length = 100;   // tokens to emit
  std::int64_t window = 30;    // recent words that condition theta
  std::int64_t block = 10;     // sentences between theta refreshes
  double temperature = 1.0;    // applied to the final mixture logits
  std::uint64_t seed = 1;
};

struct GenerationResult {
  std::vector<std::int64_t> tokens;
  // populated only when generate_tokens is called with trace=true
  std::vector<std::vector<double>> step_probs;  // final categorical per step
  std::vector<double> step_rho;                 // gate value per step
  std::vector<std::vector<double>> step_theta;  // theta in force per step
};

// Sampling-time recurrence: the same cell updates as the tape graph, run as
// plain loops on one row so a step costs O(H^2) instead of a graph rebuild.
template <typename T>
struct SamplerState {
  std::vector<double> h, c;
};

namespace gen_detail {

template <typename T>
std::vector<double> affine_row(const VrtmModel<T>& m, int g, const std::vector<double>& x,
                               const std::vector<double>& h) {
  const std::int64_t H = m.h, E = m.e;
  std::vector<double> out(static_cast<std::size_t>(H));
  for (std::int64_t j = 0; j < H; ++j) {
    double s = static_cast<double>(m.rnn.b[static_cast<std::size_t>(g)][j]);
    for (std::int64_t i = 0; i < E; ++i)
      s += x[static_cast<std::size_t>(i)] *
           static_cast<double>(m.rnn.w_x[static_cast<std::size_t>(g)].at(i, j));
    for (std::int64_t i = 0; i < H; ++i)
      s += h[static_cast<std::size_t>(i)] *
           static_cast<double>(m.rnn.w_h[static_cast<std::size_t>(g)].at(i, j));
    out[static_cast<std::size_t>(j)] = s;
  }
  return out;
}

inline std::vector<double> log_softmax_row(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double se = 0;
  for (double v : z) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

}  // namespace gen_detail

template <typename T>
void sampler_step(const VrtmModel<T>& m, std::int64_t token, SamplerState<T>& s) {
  const std::int64_t H = m.h, E = m.e;
  if (s.h.empty()) {
    s.h.assign(static_cast<std::size_t>(H), 0.0);
    s.c.assign(static_cast<std::size_t>(H), 0.0);
  }
  std::vector<double> x(static_cast<std::size_t>(E));
  for (std::int64_t i = 0; i < E; ++i)
    x[static_cast<std::size_t>(i)] = static_cast<double>(m.emb.at(token, i));
  using gen_detail::affine_row;
  switch (m.rnn.kind) {
    case CellKind::Rnn: {
      auto a = affine_row(m, 0, x, s.h);
      for (std::int64_t j = 0; j < H; ++j)
        s.h[static_cast<std::size_t>(j)] = std::tanh(a[static_cast<std::size_t>(j)]);
      break;
    }
    case CellKind::Gru: {
      auto ra = affine_row(m, 0, x, s.h);
      auto za = affine_row(m, 1, x, s.h);
      std::vector<double> hn(static_cast<std::size_t>(H));
      for (std::int64_t j = 0; j < H; ++j) {
        const auto js = static_cast<std::size_t>(j);
        double xn = static_cast<double>(m.rnn.b[2][j]);
        for (std::int64_t i = 0; i < E; ++i)
          xn += x[static_cast<std::size_t>(i)] * static_cast<double>(m.rnn.w_x[2].at(i, j));
        double hh = 0;
        for (std::int64_t i = 0; i < H; ++i)
          hh += s.h[static_cast<std::size_t>(i)] * static_cast<double>(m.rnn.w_h[2].at(i, j));
        const double r = detail::stable_sigmoid(ra[js]);
        const double z = detail::stable_sigmoid(za[js]);
        const double n = std::tanh(xn + r * hh);
        hn[js] = (n - z * n) + z * s.h[js];
      }
      s.h = std::move(hn);
      break;
    }
    case CellKind::Lstm: {
      auto ia = affine_row(m, 0, x, s.h);
      auto fa = affine_row(m, 1, x, s.h);
      auto ga = affine_row(m, 2, x, s.h);
      auto oa = affine_row(m, 3, x, s.h);
      for (std::int64_t j = 0; j < H; ++j) {
        const auto js = static_cast<std::size_t>(j);
        const double i = detail::stable_sigmoid(ia[js]);
        const double f = detail::stable_sigmoid(fa[js]);
        const double g = std::tanh(ga[js]);
        const double o = detail::stable_sigmoid(oa[js]);
        s.c[js] = f * s.c[js] + i * g;
        s.h[js] = o * std::tanh(s.c[js]);
      }
      break;
    }
  }
}

template <typename T>
std::vector<double> sampler_logits(const VrtmModel<T>& m, const SamplerState<T>& s) {
  std::vector<double> z(static_cast<std::size_t>(m.v));
  for (std::int64_t v = 0; v < m.v; ++v) {
    double acc = static_cast<double>(m.rnn.proj_b[v]);
    for (std::int64_t j = 0; j < m.h; ++j)
      acc += s.h[static_cast<std::size_t>(j)] * static_cast<double>(m.rnn.proj_w.at(j, v));
    z[static_cast<std::size_t>(v)] = acc;
  }
  return z;
}

template <typename T>
double sampler_gate(const VrtmModel<T>& m, const SamplerState<T>& s) {
  double r = static_cast<double>(m.gate_b[0]);
  for (std::int64_t j = 0; j < m.h; ++j)
    r += s.h[static_cast<std::size_t>(j)] * static_cast<double>(m.gate_w.at(j, 0));
  return detail::stable_sigmoid(r);
}

// gamma for a one-row context window, through the same encoder graph that
// training and evaluation use (running batch-norm statistics).
template <typename T>
std::vector<double> window_gamma(VrtmModel<T>& m, const Vocabulary& vocab,
                                 const std::vector<std::int64_t>& context,
                                 std::int64_t window) {
  const std::int64_t n =
      std::min<std::int64_t>({window, m.tlen, static_cast<std::int64_t>(context.size())});
  Batch b;
  b.b = 1;
  b.t = m.tlen;
  b.v = m.v;
  b.tokens.assign(static_cast<std::size_t>(m.tlen), vocab.pad_id);
  b.flags.assign(static_cast<std::size_t>(m.tlen), 0);
  b.mask.assign(static_cast<std::size_t>(m.tlen), 0);
  b.lengths = {n};
  b.bow.assign(static_cast<std::size_t>(m.v), 0);
  b.doc_ids = {0};
  b.win_ids = {0};
  b.starts = {0};
  for (std::int64_t i = 0; i < n; ++i) {
    const auto tok = context[context.size() - static_cast<std::size_t>(n - i)];
    b.tokens[static_cast<std::size_t>(i)] = tok;
    b.mask[static_cast<std::size_t>(i)] = 1;
    if (vocab.thematic[static_cast<std::size_t>(tok)]) {
      b.flags[static_cast<std::size_t>(i)] = 1;
      ++b.bow[static_cast<std::size_t>(tok)];
    }
  }
  Tape<T> t;
  auto bm = bind_model(t, m, false);
  auto masked = masked_embeddings(t, bm.vars.emb, b);
  auto g = infer_gamma(t, bm.vars.enc, m.enc, masked, 1, false, false, &m.enc.bn_g);
  const auto& gv = t.value(g);
  std::vector<double> out(static_cast<std::size_t>(m.k));
  for (std::int64_t k = 0; k < m.k; ++k)
    out[static_cast<std::size_t>(k)] = static_cast<double>(gv.at(0, k));
  return out;
}

// Ancestral sampling: feed <sep>, then at each step mix the K topic decoders
// (weighted by the block's theta draw and the gate) with the plain RNN
// decoder, apply temperature to the mixture logits, and draw the next word.
// Theta is inferred from the trailing window and held fixed for `block`
// sentences; a generated period or separator ends a sentence.
template <typename T>
GenerationResult generate_tokens(VrtmModel<T>& m, const Vocabulary& vocab,
                                 const GenerationConfig& cfg, bool rnn_only = false,
                                 bool trace = false) {
  if (cfg.length < 1) throw std::invalid_argument("generate: length must be >= 1");
  if (cfg.window < 1) throw std::invalid_argument("generate: window must be >= 1");
  if (cfg.block < 1) throw std::invalid_argument("generate: block must be >= 1");
  if (!(cfg.temperature > 0)) throw std::invalid_argument("generate: temperature must be > 0");
  if (vocab.size() != m.v)
    throw std::invalid_argument("generate: vocabulary size does not match the model");

  const auto period_it = vocab.ids.find(".");
  const std::int64_t period_id = period_it == vocab.ids.end() ? -1 : period_it->second;

  GenerationResult r;
  r.tokens.reserve(static_cast<std::size_t>(cfg.length));
  SamplerState<T> st;
  Prng tok_rng = derive_stream(cfg.seed, "gen-token");
  std::vector<double> theta;
  std::int64_t sentences = 0, cur_block = -1;
  std::int64_t prev = vocab.sep_id;

  for (std::int64_t step = 0; step < cfg.length; ++step) {
    if (!rnn_only) {
      const std::int64_t blk = sentences / cfg.block;
      if (blk != cur_block) {
        cur_block = blk;
        auto g = window_gamma(m, vocab, r.tokens, cfg.window);
        Prng th_rng = derive_stream(cfg.seed, "gen-theta", static_cast<std::uint64_t>(blk));
        theta = sample_dirichlet(g, th_rng);
      }
    }

    sampler_step(m, prev, st);
    const auto logits = sampler_logits(m, st);
    const auto lp_rnn = gen_detail::log_softmax_row(logits);
    const std::size_t V = static_cast<std::size_t>(m.v);
    std::vector<double> p(V);
    double rho = 0;
    if (rnn_only) {
      for (std::size_t v = 0; v < V; ++v) p[v] = std::exp(lp_rnn[v]);
    } else {
      rho = sampler_gate(m, st);
      std::vector<double> mix(V, 0.0);
      std::vector<double> zk(V);
      for (std::int64_t k = 0; k < m.k; ++k) {
        for (std::size_t v = 0; v < V; ++v)
          zk[v] = logits[v] + static_cast<double>(m.beta.at(k, static_cast<std::int64_t>(v)));
        const auto lpk = gen_detail::log_softmax_row(zk);
        const double tk = theta[static_cast<std::size_t>(k)];
        for (std::size_t v = 0; v < V; ++v) mix[v] += tk * std::exp(lpk[v]);
      }
      for (std::size_t v = 0; v < V; ++v) p[v] = rho * mix[v] + (1.0 - rho) * std::exp(lp_rnn[v]);
    }

    if (cfg.temperature != 1.0) {
      std::vector<double> z(V);
      for (std::size_t v = 0; v < V; ++v) z[v] = std::log(p[v]) / cfg.temperature;
      const auto lp = gen_detail::log_softmax_row(z);
      for (std::size_t v = 0; v < V; ++v) p[v] = std::exp(lp[v]);
    }

    const double u = tok_rng.uniform();
    double cum = 0;
    std::int64_t w = m.v - 1;
    for (std::size_t v = 0; v < V; ++v) {
      cum += p[v];
      if (u < cum) {
        w = static_cast<std::int64_t>(v);
        break;
      }
    }

    if (trace) {
      r.step_probs.push_back(p);
      r.step_rho.push_back(rho);
      r.step_theta.push_back(theta);
    }
    r.tokens.push_back(w);
    prev = w;
    if (w == vocab.sep_id || w == period_id) ++sentences;
  }
  return r;
}

// One sentence per line: a generated period stays on its line, a separator
// only breaks the line. A trailing unfinished sentence is kept.
inline std::vector<std::string> render_sentences(const std::vector<std::int64_t>& tokens,
                                                 const Vocabulary& vocab) {
  std::vector<std::string> lines;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      lines.push_back(cur);
      cur.clear();
    }
  };
  for (const auto w : tokens) {
    if (w == vocab.sep_id) {
      flush();
      continue;
    }
    if (!cur.empty()) cur += ' ';
    cur += vocab.tokens[static_cast<std::size_t>(w)];
    if (vocab.tokens[static_cast<std::size_t>(w)] == ".") flush();
  }
  flush();
  return lines;
}

}  // namespace vrtm
