#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "vrtm/corpus.hpp"
#include "vrtm/dirichlet.hpp"
#include "vrtm/rng.hpp"

namespace vrtm::fixture {

// Synthetic corpus drawn from a known mixture: K topics with disjoint word
// sets, interleaved function words, per-document proportions from a
// symmetric Dirichlet. Ground truth is kept for recovery checks.
struct SyntheticCorpus {
  std::vector<std::vector<std::string>> raw_docs;
  std::vector<std::vector<std::string>> topic_words;  // K x words_per_topic
  std::unordered_set<std::string> stopwords;
  std::vector<std::vector<int>> true_z;  // per doc, topic of each thematic token
};

inline SyntheticCorpus make_synthetic(int n_docs, int k, int words_per_topic, int n_stop,
                                      double stop_rate, double alpha, int len_lo, int len_hi,
                                      std::uint64_t seed) {
  SyntheticCorpus c;
  for (int t = 0; t < k; ++t) {
    std::vector<std::string> ws;
    for (int w = 0; w < words_per_topic; ++w)
      ws.push_back("t" + std::to_string(t) + "w" + std::to_string(w));
    c.topic_words.push_back(std::move(ws));
  }
  std::vector<std::string> stops;
  for (int s = 0; s < n_stop; ++s) {
    stops.push_back("s" + std::to_string(s));
    c.stopwords.insert(stops.back());
  }

  for (int d = 0; d < n_docs; ++d) {
    Prng rng(derive_stream(seed, "fixture-doc", static_cast<std::uint64_t>(d), 0));
    std::vector<double> theta =
        sample_dirichlet(std::vector<double>(static_cast<std::size_t>(k), alpha), rng);
    const int len = len_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(len_hi - len_lo + 1)));
    std::vector<std::string> doc;
    std::vector<int> z;
    for (int i = 0; i < len; ++i) {
      if (rng.uniform() < stop_rate) {
        doc.push_back(stops[rng.below(stops.size())]);
      } else {
        double u = rng.uniform();
        int topic = 0;
        double acc = 0;
        for (int t = 0; t < k; ++t) {
          acc += theta[static_cast<std::size_t>(t)];
          if (u <= acc) {
            topic = t;
            break;
          }
          topic = t;
        }
        doc.push_back(c.topic_words[static_cast<std::size_t>(topic)]
                                   [rng.below(static_cast<std::uint64_t>(words_per_topic))]);
        z.push_back(topic);
      }
    }
    if (doc.empty()) doc.push_back(c.topic_words[0][0]);
    c.raw_docs.push_back(std::move(doc));
    c.true_z.push_back(std::move(z));
  }
  return c;
}

inline std::vector<Document> encode_all(const std::vector<std::vector<std::string>>& raw,
                                        const Vocabulary& vocab) {
  std::vector<Document> docs;
  docs.reserve(raw.size());
  for (const auto& d : raw) docs.push_back(encode_document(d, vocab));
  return docs;
}

}  // namespace vrtm::fixture
