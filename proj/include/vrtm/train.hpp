#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vrtm/checkpoint.hpp"
#include "vrtm/eval.hpp"

namespace vrtm {

// Raised when a loss term, gradient, or validation metric leaves the finite
// range; the CLI maps it to its numeric-failure exit code.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::int64_t topics = 50;
  double alpha = 0.5;
  CellKind cell = CellKind::Lstm;
  std::int64_t hidden = 600;
  std::int64_t embed = 400;
  std::int64_t seq_len = 45;
  std::int64_t batch_size = 200;
  double lr = 1e-3;
  int epochs = 50;
  int patience = 3;
  int samples = 1;
  std::uint64_t seed = 1;
  ThetaMode theta_mode = ThetaMode::Mc;
  bool theta_pathwise = true;
  std::int64_t group_pseudo = 1;  // docs per pseudo-document; 1 = no grouping
  double dropout = 0.4;
  bool rnn_only = false;
  bool use_bn = true;
  bool timing = false;  // off keeps `seconds` at 0 so logs are byte-stable

  void validate() const {
    if (topics < 2) throw std::invalid_argument("topics must be >= 2");
    if (!(alpha > 0)) throw std::invalid_argument("alpha must be > 0");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (samples < 1) throw std::invalid_argument("samples must be >= 1");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("dropout must be in [0,1)");
    if (group_pseudo < 1) throw std::invalid_argument("group-pseudo must be >= 1");
  }
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::int64_t t = 0;
};

// Standard Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.emplace_back(p->shape);
      st.v.emplace_back(p->shape);
    }
  }
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: mismatched parameter/gradient lists");
  ++st.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = grads[i];
    for (std::int64_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(st.m[i][j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(st.v[i][j]) + (1.0 - b2) * gj * gj;
      st.m[i][j] = static_cast<T>(mj);
      st.v[i][j] = static_cast<T>(vj);
      p[j] = static_cast<T>(static_cast<double>(p[j]) -
                            lr * (mj / c1) / (std::sqrt(vj / c2) + eps));
    }
  }
}

// Scale all gradients so their joint L2 norm is at most max_norm. Returns the
// pre-clip norm; a non-finite norm is a hard error.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (std::int64_t j = 0; j < g.size(); ++j) {
      const double x = static_cast<double>(g[j]);
      sq += x * x;
    }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("numeric failure: gradient norm is non-finite");
  if (norm > max_norm && norm > 0) {
    const double scale = max_norm / norm;
    for (auto& g : grads)
      for (std::int64_t j = 0; j < g.size(); ++j)
        g[j] = static_cast<T>(static_cast<double>(g[j]) * scale);
  }
  return norm;
}

struct EpochMetrics {
  int epoch = 0;
  double elbo = 0, l_w = 0, l_z = 0, l_phi = 0, l_l = 0, l_theta = 0;
  double val_ppl = 0, seconds = 0;
};

inline std::string metrics_jsonl(const EpochMetrics& m) {
  return "{\"epoch\":" + std::to_string(m.epoch) + ",\"elbo\":" + format_double(m.elbo) +
         ",\"l_w\":" + format_double(m.l_w) + ",\"l_z\":" + format_double(m.l_z) +
         ",\"l_phi\":" + format_double(m.l_phi) + ",\"l_l\":" + format_double(m.l_l) +
         ",\"l_theta\":" + format_double(m.l_theta) + ",\"val_ppl\":" + format_double(m.val_ppl) +
         ",\"seconds\":" + format_double(m.seconds) + "}";
}

struct TrainResult {
  Checkpoint best;
  std::vector<EpochMetrics> metrics;
  int best_epoch = 0;
  double best_val = 0;
};

namespace detail {

inline void put_train_config(Checkpoint& c, const TrainConfig& cfg) {
  c.set("lr", format_double(cfg.lr));
  c.set("batch_size", std::to_string(cfg.batch_size));
  c.set("epochs", std::to_string(cfg.epochs));
  c.set("patience", std::to_string(cfg.patience));
  c.set("samples", std::to_string(cfg.samples));
  c.set("seed", std::to_string(cfg.seed));
  c.set("theta_mode", cfg.theta_mode == ThetaMode::Mc ? "mc" : "analytic");
  c.set("theta_grad", cfg.theta_pathwise ? "pathwise" : "stop");
  c.set("group_pseudo", std::to_string(cfg.group_pseudo));
  c.set("dropout", format_double(cfg.dropout));
  c.set("rnn_only", cfg.rnn_only ? "1" : "0");
}

}  // namespace detail

// Adam ascent on the batch-mean bound with early stopping on validation
// perplexity. Returns the checkpoint from the best validation epoch.
template <typename T>
TrainResult train_model(const TrainConfig& cfg, const std::vector<Document>& train_docs,
                        const std::vector<Document>& val_docs, const Vocabulary& vocab,
                        std::ostream* progress = nullptr) {
  cfg.validate();
  if (train_docs.empty()) throw std::runtime_error("empty training corpus");
  if (val_docs.empty()) throw std::runtime_error("empty validation corpus");

  const std::int64_t V = vocab.size();
  auto model = init_model<T>(cfg.topics, V, cfg.embed, cfg.hidden, cfg.seq_len, cfg.cell,
                             cfg.alpha, cfg.seed, cfg.use_bn);
  auto named = model.named_params();
  std::vector<Tensor<T>*> params;
  for (auto& [n, p] : named) params.push_back(p);
  AdamState<T> adam;

  const auto val_batches =
      make_batches(val_docs, V, cfg.seq_len, cfg.batch_size, 1, cfg.seed, 0, false);

  TrainResult out;
  out.best_val = std::numeric_limits<double>::infinity();
  int since_improve = 0;
  std::uint64_t step = 0;
  static const char* term_names[5] = {"l_w", "l_z", "l_phi", "l_l", "l_theta"};

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(train_docs, V, cfg.seq_len, cfg.batch_size, cfg.group_pseudo,
                                cfg.seed, static_cast<std::uint64_t>(epoch - 1), true);
    double sums[5] = {0, 0, 0, 0, 0};
    std::int64_t windows = 0;
    std::size_t batch_index = 0;
    for (const auto& b : batches) {
      Tape<T> t;
      auto bound = bind_model(t, model, true);
      ForwardOpts<T> o;
      o.training = true;
      o.update_bn = true;
      o.samples = cfg.samples;
      o.theta_mode = cfg.theta_mode;
      o.theta_pathwise = cfg.theta_pathwise;
      o.rnn_only = cfg.rnn_only;
      o.dropout = cfg.dropout;
      o.seed = cfg.seed;
      o.epoch = static_cast<std::uint64_t>(epoch - 1);
      o.step = step;
      auto fr = vrtm_forward(t, model, bound.vars, b, o);

      const typename Tape<T>::Var terms[5] = {fr.l_w, fr.l_z, fr.l_phi, fr.l_l, fr.l_theta};
      for (int i = 0; i < 5; ++i) {
        const double v = static_cast<double>(t.value(terms[i])[0]);
        if (!std::isfinite(v))
          throw NumericError("numeric failure: " + std::string(term_names[i]) +
                             " is non-finite at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
        sums[i] += v;
      }
      windows += b.b;

      auto loss = t.smul(fr.total, -1.0 / static_cast<double>(b.b));
      t.backward(loss);
      std::vector<Tensor<T>> grads;
      grads.reserve(bound.named.size());
      for (auto& [n, var] : bound.named) grads.push_back(t.grad(var));
      clip_global_norm(grads, 5.0);
      adam_step(params, grads, adam, cfg.lr);
      ++step;
      ++batch_index;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.l_w = sums[0] / static_cast<double>(windows);
    em.l_z = sums[1] / static_cast<double>(windows);
    em.l_phi = sums[2] / static_cast<double>(windows);
    em.l_l = sums[3] / static_cast<double>(windows);
    em.l_theta = sums[4] / static_cast<double>(windows);
    em.elbo = em.l_w + em.l_z + em.l_phi + em.l_l + em.l_theta;
    em.val_ppl = perplexity(model, val_batches, cfg.samples, cfg.seed, cfg.rnn_only);
    if (!std::isfinite(em.val_ppl))
      throw NumericError("numeric failure: validation perplexity is non-finite at epoch " +
                         std::to_string(epoch));
    if (cfg.timing)
      em.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.metrics.push_back(em);
    if (progress) (*progress) << metrics_jsonl(em) << '\n';

    if (em.val_ppl < out.best_val) {
      out.best_val = em.val_ppl;
      out.best_epoch = epoch;
      since_improve = 0;
      Checkpoint c;
      c.vocab_hash = vocab.hash();
      pack_model(c, model);
      detail::put_train_config(c, cfg);
      c.set("best_epoch", std::to_string(epoch));
      c.set("best_val_ppl", format_double(em.val_ppl));
      c.set("adam_t", std::to_string(adam.t));
      for (std::size_t i = 0; i < named.size(); ++i) {
        TensorD md(adam.m[i].shape), vd(adam.v[i].shape);
        for (std::int64_t j = 0; j < md.size(); ++j) {
          md[j] = static_cast<double>(adam.m[i][j]);
          vd[j] = static_cast<double>(adam.v[i][j]);
        }
        c.arrays.emplace_back("adam.m." + named[i].first, std::move(md));
        c.arrays.emplace_back("adam.v." + named[i].first, std::move(vd));
      }
      out.best = std::move(c);
    } else {
      ++since_improve;
      if (since_improve >= cfg.patience) break;
    }
  }
  return out;
}

}  // namespace vrtm
