#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "vrtm/corpus.hpp"
#include "vrtm/dirichlet.hpp"
#include "vrtm/model.hpp"

namespace vrtm {

// One thematic token's hard topic assignment: argmax_k phi, ties to the
// lowest index. pos is the token's absolute position in its document.
struct Assignment {
  std::int64_t doc = 0, pos = 0, token = 0;
  int topic = 0;
};

double switchp_sequences(const std::vector<std::vector<int>>& z_per_doc);
double switchp(const std::vector<Assignment>& as);
void save_assignments_tsv(const std::string& path, const std::vector<Assignment>& as,
                          const Vocabulary& vocab);
std::vector<Assignment> load_assignments_tsv(const std::string& path, const Vocabulary& vocab);

struct EvalReport {
  double perplexity = 0, switchp = 0, h_phi = 0, h_theta = 0;
  std::vector<std::vector<std::string>> top_words;
  std::string to_json() const;
};

// Appendix-style held-out perplexity: each real token contributes the
// rho-gated mixture of the S-sample topic decoder and the plain recurrent
// softmax; N counts every real token.
template <typename T>
double perplexity(VrtmModel<T>& m, const std::vector<Batch>& batches, int S, std::uint64_t seed,
                  bool force_rnn_only) {
  double total_lp = 0;
  std::int64_t n = 0;
  for (const auto& b : batches) {
    Tape<T> t;
    auto bm = bind_model(t, m, false);
    ForwardOpts<T> o;
    o.collect_eval = true;
    o.theta_mode = ThetaMode::Analytic;  // eval draws its own theta below
    o.rnn_only = force_rnn_only;
    auto fr = vrtm_forward(t, m, bm.vars, b, o);

    // S Dirichlet draws per window, on dedicated eval streams
    std::vector<std::vector<double>> theta;  // (S*B) x K
    if (!force_rnn_only) {
      const auto& g = t.value(fr.gamma);
      theta.resize(static_cast<std::size_t>(S) * static_cast<std::size_t>(b.b));
      for (int s = 0; s < S; ++s)
        for (std::int64_t row = 0; row < b.b; ++row) {
          std::vector<double> alphas(static_cast<std::size_t>(m.k));
          for (std::int64_t k = 0; k < m.k; ++k)
            alphas[static_cast<std::size_t>(k)] = static_cast<double>(g.at(row, k));
          Prng st(derive_stream(seed, "eval-theta",
                                static_cast<std::uint64_t>(b.win_ids[static_cast<std::size_t>(row)]),
                                static_cast<std::uint64_t>(s)));
          theta[static_cast<std::size_t>(s) * static_cast<std::size_t>(b.b) +
                static_cast<std::size_t>(row)] = sample_dirichlet(alphas, st);
        }
    }

    std::size_t si = 0;
    for (std::int64_t step = 0; step < b.t; ++step) {
      bool any = false;
      for (std::int64_t row = 0; row < b.b; ++row) any = any || b.mask[row * b.t + step];
      if (!any) continue;
      const auto& rho = t.value(fr.rho[si]);
      const auto& lp_rnn = t.value(fr.lp_rnn_obs[si]);
      for (std::int64_t row = 0; row < b.b; ++row) {
        if (!b.mask[row * b.t + step]) continue;
        const double prnn = std::exp(static_cast<double>(lp_rnn[row]));
        double p;
        if (force_rnn_only) {
          p = prnn;
        } else {
          const auto& lpt = t.value(fr.lp_topic_obs[si]);
          double mix = 0;
          for (int s = 0; s < S; ++s) {
            const auto& th = theta[static_cast<std::size_t>(s) * static_cast<std::size_t>(b.b) +
                                   static_cast<std::size_t>(row)];
            for (std::int64_t k = 0; k < m.k; ++k)
              mix += th[static_cast<std::size_t>(k)] *
                     std::exp(static_cast<double>(lpt.at(row, k)));
          }
          mix /= S;
          const double r = static_cast<double>(rho[row]);
          p = r * mix + (1.0 - r) * prnn;
        }
        total_lp += std::log(p);
        ++n;
      }
      ++si;
    }
  }
  if (n == 0) throw std::runtime_error("perplexity: no tokens to evaluate");
  return std::exp(-total_lp / static_cast<double>(n));
}

template <typename T>
std::vector<Assignment> topic_assignments(VrtmModel<T>& m, const std::vector<Batch>& batches) {
  std::vector<Assignment> out;
  for (const auto& b : batches) {
    Tape<T> t;
    auto bm = bind_model(t, m, false);
    ForwardOpts<T> o;
    o.theta_mode = ThetaMode::Analytic;
    auto fr = vrtm_forward(t, m, bm.vars, b, o);
    const auto& phi = t.value(fr.phi);
    for (std::int64_t row = 0; row < b.b; ++row)
      for (std::int64_t step = 0; step < b.t; ++step) {
        const auto idx = row * b.t + step;
        if (!b.mask[idx] || !b.flags[idx]) continue;
        int best = 0;
        for (std::int64_t k = 1; k < m.k; ++k)
          if (static_cast<double>(phi.at(idx, k)) > static_cast<double>(phi.at(idx, best)))
            best = static_cast<int>(k);
        out.push_back({b.doc_ids[static_cast<std::size_t>(row)],
                       b.starts[static_cast<std::size_t>(row)] + step, b.tokens[idx], best});
      }
  }
  return out;
}

// mean per-token phi entropy over thematic tokens
template <typename T>
double entropy_phi(VrtmModel<T>& m, const std::vector<Batch>& batches) {
  double h = 0;
  std::int64_t tn = 0;
  for (const auto& b : batches) {
    Tape<T> t;
    auto bm = bind_model(t, m, false);
    ForwardOpts<T> o;
    o.theta_mode = ThetaMode::Analytic;
    auto fr = vrtm_forward(t, m, bm.vars, b, o);
    const auto& phi = t.value(fr.phi);
    for (std::int64_t idx = 0; idx < b.b * b.t; ++idx) {
      if (!b.mask[idx] || !b.flags[idx]) continue;
      ++tn;
      for (std::int64_t k = 0; k < m.k; ++k) {
        const double q = static_cast<double>(phi.at(idx, k));
        if (q > 0) h -= q * std::log(q);
      }
    }
  }
  if (tn == 0) throw std::runtime_error("entropy_phi: no thematic tokens in the corpus");
  return h / static_cast<double>(tn);
}

// entropy of the posterior-mean proportions gamma/sum(gamma)
inline double mean_theta_entropy(const std::vector<double>& gamma) {
  double g0 = 0;
  for (double g : gamma) g0 += g;
  double h = 0;
  for (double g : gamma) {
    const double th = g / g0;
    if (th > 0) h -= th * std::log(th);
  }
  return h;
}

// mean over windows of the entropy of the posterior-mean theta
template <typename T>
double entropy_theta(VrtmModel<T>& m, const std::vector<Batch>& batches) {
  double h = 0;
  std::int64_t nd = 0;
  for (const auto& b : batches) {
    Tape<T> t;
    auto bm = bind_model(t, m, false);
    ForwardOpts<T> o;
    o.theta_mode = ThetaMode::Analytic;
    auto fr = vrtm_forward(t, m, bm.vars, b, o);
    const auto& g = t.value(fr.gamma);
    std::vector<double> row(static_cast<std::size_t>(m.k));
    for (std::int64_t r = 0; r < b.b; ++r) {
      for (std::int64_t k = 0; k < m.k; ++k)
        row[static_cast<std::size_t>(k)] = static_cast<double>(g.at(r, k));
      h += mean_theta_entropy(row);
      ++nd;
    }
  }
  if (nd == 0) throw std::runtime_error("entropy_theta: no documents");
  return h / static_cast<double>(nd);
}

// n most probable thematic tokens of softmax(beta_k); ties resolve to the
// lower token id.
template <typename T>
std::vector<std::vector<std::string>> top_words(const VrtmModel<T>& m, const Vocabulary& vocab,
                                                std::int64_t n) {
  std::vector<std::int64_t> thematic_ids;
  for (std::int64_t v = 0; v < static_cast<std::int64_t>(vocab.size()); ++v)
    if (vocab.thematic[static_cast<std::size_t>(v)]) thematic_ids.push_back(v);
  if (n > static_cast<std::int64_t>(thematic_ids.size()))
    throw std::runtime_error("top_words: requested " + std::to_string(n) + " words but only " +
                             std::to_string(thematic_ids.size()) + " thematic tokens exist");
  std::vector<std::vector<std::string>> out;
  for (std::int64_t k = 0; k < m.k; ++k) {
    std::vector<std::pair<double, std::int64_t>> scored;
    scored.reserve(thematic_ids.size());
    for (auto v : thematic_ids) scored.emplace_back(static_cast<double>(m.beta.at(k, v)), v);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::vector<std::string> row;
    for (std::int64_t i = 0; i < n; ++i)
      row.push_back(vocab.tokens[static_cast<std::size_t>(scored[static_cast<std::size_t>(i)].second)]);
    out.push_back(std::move(row));
  }
  return out;
}

template <typename T>
EvalReport eval_report(VrtmModel<T>& m, const std::vector<Batch>& batches,
                       const Vocabulary& vocab, int S, std::uint64_t seed, std::int64_t top_n,
                       bool force_rnn_only = false) {
  EvalReport r;
  r.perplexity = perplexity(m, batches, S, seed, force_rnn_only);
  if (!force_rnn_only) {
    r.switchp = switchp(topic_assignments(m, batches));
    r.h_phi = entropy_phi(m, batches);
    r.h_theta = entropy_theta(m, batches);
    r.top_words = top_words(m, vocab, top_n);
  }
  return r;
}

}  // namespace vrtm
