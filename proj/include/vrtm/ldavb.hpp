#pragma once

#include <string>
#include <vector>

#include "vrtm/corpus.hpp"
#include "vrtm/eval.hpp"
#include "vrtm/tensor.hpp"

namespace vrtm {

// Plain mean-field variational Bayes for LDA over the thematic bag-of-words.
// Serves as the reference point for switch percentage and theta entropy.
struct LdaModel {
  std::int64_t k = 0, v = 0;
  double alpha = 0.1;
  TensorD beta;                    // (K,V), rows sum to 1 over seen words
  std::vector<double> elbo_trace;  // one entry per full sweep
};

struct LdaPosterior {
  std::vector<double> gamma;  // (K)
  TensorD phi;                // (V,K); rows defined only for words in the doc
};

// Coordinate ascent: per-document phi/gamma updates against digamma(gamma),
// then a beta step from expected counts. Stops early once the relative
// bound change drops below tol.
LdaModel lda_fit(const std::vector<Document>& docs, std::int64_t k, double alpha, int iters,
                 std::uint64_t seed, double tol = 1e-4);

// Posterior for one document under a frozen model.
LdaPosterior lda_infer(const LdaModel& m, const std::vector<std::int64_t>& bow_counts,
                       int iters = 100);

// Per-token hard assignments (argmax phi of the word type) for the shared
// switch-percentage metric, and the matching mean theta entropy.
std::vector<Assignment> lda_assignments(const LdaModel& m, const std::vector<Document>& docs,
                                        int iters = 100);
double lda_mean_theta_entropy(const LdaModel& m, const std::vector<Document>& docs,
                              int iters = 100);

}  // namespace vrtm
