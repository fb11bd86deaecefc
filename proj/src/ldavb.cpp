#include "vrtm/ldavb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vrtm/rng.hpp"
#include "vrtm/special.hpp"

namespace vrtm {

namespace {

// one document's coordinate ascent against fixed beta; returns its bound term
double doc_estep(const TensorD& beta, std::int64_t K, double alpha,
                 const std::vector<std::int64_t>& counts, int inner_iters,
                 std::vector<double>& gamma, TensorD& phi) {
  const std::int64_t V = static_cast<std::int64_t>(counts.size());
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);

  gamma.assign(static_cast<std::size_t>(K), alpha + total / static_cast<double>(K));
  phi = TensorD({V, K});
  for (std::int64_t w = 0; w < V; ++w)
    if (counts[static_cast<std::size_t>(w)] > 0)
      for (std::int64_t k = 0; k < K; ++k) phi.at(w, k) = 1.0 / static_cast<double>(K);

  std::vector<double> elt(static_cast<std::size_t>(K));
  for (int it = 0; it < inner_iters; ++it) {
    double gsum = 0;
    for (double g : gamma) gsum += g;
    const double dg = digamma(gsum);
    for (std::int64_t k = 0; k < K; ++k)
      elt[static_cast<std::size_t>(k)] = digamma(gamma[static_cast<std::size_t>(k)]) - dg;

    std::vector<double> ng(static_cast<std::size_t>(K), alpha);
    for (std::int64_t w = 0; w < V; ++w) {
      const auto n = counts[static_cast<std::size_t>(w)];
      if (n == 0) continue;
      // log phi proportional to E[log theta_k] + log beta_kw
      double mx = -HUGE_VAL;
      std::vector<double> lp(static_cast<std::size_t>(K), -HUGE_VAL);
      for (std::int64_t k = 0; k < K; ++k) {
        const double b = beta.at(k, w);
        if (b > 0) {
          lp[static_cast<std::size_t>(k)] = elt[static_cast<std::size_t>(k)] + std::log(b);
          mx = std::max(mx, lp[static_cast<std::size_t>(k)]);
        }
      }
      double z = 0;
      for (std::int64_t k = 0; k < K; ++k)
        if (lp[static_cast<std::size_t>(k)] > -HUGE_VAL)
          z += std::exp(lp[static_cast<std::size_t>(k)] - mx);
      for (std::int64_t k = 0; k < K; ++k) {
        const double p = lp[static_cast<std::size_t>(k)] > -HUGE_VAL
                             ? std::exp(lp[static_cast<std::size_t>(k)] - mx) / z
                             : 0.0;
        phi.at(w, k) = p;
        ng[static_cast<std::size_t>(k)] += static_cast<double>(n) * p;
      }
    }
    double delta = 0;
    for (std::int64_t k = 0; k < K; ++k)
      delta = std::max(delta, std::fabs(ng[static_cast<std::size_t>(k)] -
                                        gamma[static_cast<std::size_t>(k)]));
    gamma = ng;
    if (delta < 1e-8 * (1.0 + total)) break;
  }

  // bound contribution with the current beta
  double gsum = 0;
  for (double g : gamma) gsum += g;
  const double dg = digamma(gsum);
  double l = std::lgamma(static_cast<double>(K) * alpha) -
             static_cast<double>(K) * std::lgamma(alpha);
  l -= std::lgamma(gsum);
  for (std::int64_t k = 0; k < K; ++k) {
    const double g = gamma[static_cast<std::size_t>(k)];
    const double el = digamma(g) - dg;
    l += (alpha - 1.0) * el + std::lgamma(g) - (g - 1.0) * el;
  }
  for (std::int64_t w = 0; w < V; ++w) {
    const auto n = counts[static_cast<std::size_t>(w)];
    if (n == 0) continue;
    for (std::int64_t k = 0; k < K; ++k) {
      const double p = phi.at(w, k);
      if (p <= 0) continue;
      const double el = digamma(gamma[static_cast<std::size_t>(k)]) - dg;
      l += static_cast<double>(n) * p * (el + std::log(beta.at(k, w)) - std::log(p));
    }
  }
  return l;
}

}  // namespace

LdaModel lda_fit(const std::vector<Document>& docs, std::int64_t k, double alpha, int iters,
                 std::uint64_t seed, double tol) {
  if (k < 1) throw std::invalid_argument("lda: k must be >= 1");
  if (!(alpha > 0)) throw std::invalid_argument("lda: alpha must be > 0");
  if (iters < 1) throw std::invalid_argument("lda: iters must be >= 1");
  if (docs.empty()) throw std::runtime_error("lda: empty corpus");

  const std::int64_t V = static_cast<std::int64_t>(docs[0].bow_counts.size());
  std::vector<std::int64_t> corpus_counts(static_cast<std::size_t>(V), 0);
  for (const auto& d : docs) {
    if (static_cast<std::int64_t>(d.bow_counts.size()) != V)
      throw std::invalid_argument("lda: inconsistent vocabulary sizes across documents");
    for (std::int64_t w = 0; w < V; ++w) corpus_counts[static_cast<std::size_t>(w)] += d.bow_counts[static_cast<std::size_t>(w)];
  }
  std::int64_t seen = 0, total = 0;
  for (auto c : corpus_counts) {
    if (c > 0) ++seen;
    total += c;
  }
  if (total == 0) throw std::runtime_error("lda: no thematic tokens in the corpus");
  if (seen < k)
    throw std::runtime_error("lda: " + std::to_string(k) + " topics need at least " +
                             std::to_string(k) + " distinct thematic words, corpus has " +
                             std::to_string(seen));

  LdaModel m;
  m.k = k;
  m.v = V;
  m.alpha = alpha;
  m.beta = TensorD({k, V});
  Prng rng = derive_stream(seed, "lda-beta");
  for (std::int64_t kk = 0; kk < k; ++kk) {
    double sum = 0;
    for (std::int64_t w = 0; w < V; ++w)
      if (corpus_counts[static_cast<std::size_t>(w)] > 0) {
        const double x = 0.5 + rng.uniform();
        m.beta.at(kk, w) = x;
        sum += x;
      }
    for (std::int64_t w = 0; w < V; ++w) m.beta.at(kk, w) /= sum;
  }

  std::vector<double> gamma;
  TensorD phi;
  for (int it = 0; it < iters; ++it) {
    TensorD ec({k, V});
    double bound = 0;
    for (const auto& d : docs) {
      bound += doc_estep(m.beta, k, alpha, d.bow_counts, 100, gamma, phi);
      for (std::int64_t w = 0; w < V; ++w) {
        const auto n = d.bow_counts[static_cast<std::size_t>(w)];
        if (n == 0) continue;
        for (std::int64_t kk = 0; kk < k; ++kk)
          ec.at(kk, w) += static_cast<double>(n) * phi.at(w, kk);
      }
    }
    m.elbo_trace.push_back(bound);

    for (std::int64_t kk = 0; kk < k; ++kk) {
      double sum = 0;
      for (std::int64_t w = 0; w < V; ++w) sum += ec.at(kk, w);
      if (sum > 0) {
        for (std::int64_t w = 0; w < V; ++w) m.beta.at(kk, w) = ec.at(kk, w) / sum;
      } else {
        // a starved topic falls back to uniform over the seen words
        for (std::int64_t w = 0; w < V; ++w)
          m.beta.at(kk, w) =
              corpus_counts[static_cast<std::size_t>(w)] > 0 ? 1.0 / static_cast<double>(seen) : 0.0;
      }
    }

    const auto n = m.elbo_trace.size();
    if (n >= 2 && std::fabs(m.elbo_trace[n - 1] - m.elbo_trace[n - 2]) <
                      tol * std::fabs(m.elbo_trace[n - 2]))
      break;
  }
  return m;
}

LdaPosterior lda_infer(const LdaModel& m, const std::vector<std::int64_t>& bow_counts,
                       int iters) {
  if (static_cast<std::int64_t>(bow_counts.size()) != m.v)
    throw std::invalid_argument("lda: document vocabulary does not match the model");
  LdaPosterior p;
  doc_estep(m.beta, m.k, m.alpha, bow_counts, iters, p.gamma, p.phi);
  return p;
}

std::vector<Assignment> lda_assignments(const LdaModel& m, const std::vector<Document>& docs,
                                        int iters) {
  std::vector<Assignment> out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto post = lda_infer(m, docs[d].bow_counts, iters);
    for (std::size_t p = 0; p < docs[d].token_ids.size(); ++p) {
      if (!docs[d].thematic_flags[p]) continue;
      const auto w = docs[d].token_ids[p];
      int best = 0;
      for (std::int64_t k = 1; k < m.k; ++k)
        if (post.phi.at(w, k) > post.phi.at(w, best)) best = static_cast<int>(k);
      out.push_back({static_cast<std::int64_t>(d), static_cast<std::int64_t>(p), w, best});
    }
  }
  return out;
}

double lda_mean_theta_entropy(const LdaModel& m, const std::vector<Document>& docs, int iters) {
  if (docs.empty()) throw std::runtime_error("lda: empty corpus");
  double h = 0;
  for (const auto& d : docs) h += mean_theta_entropy(lda_infer(m, d.bow_counts, iters).gamma);
  return h / static_cast<double>(docs.size());
}

}  // namespace vrtm
