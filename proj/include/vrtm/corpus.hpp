#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vrtm/rng.hpp"

namespace vrtm {

// Token <-> id map with frequencies and thematic (non-stopword) flags.
// Specials occupy ids 0..2; the rest are ordered by descending corpus
// frequency, ties broken by token string.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::int64_t> ids;
  std::vector<std::int64_t> freqs;
  std::vector<std::uint8_t> thematic;
  std::int64_t unk_id = 0, sep_id = 1, pad_id = 2;

  std::int64_t size() const { return static_cast<std::int64_t>(tokens.size()); }
  std::int64_t thematic_size() const;
  std::int64_t lookup(const std::string& lower_token) const;  // -> id or unk_id
  std::uint64_t hash() const;

  static Vocabulary build(const std::vector<std::vector<std::string>>& raw_docs,
                          const std::unordered_set<std::string>& stopwords,
                          double unk_fraction);
  void save_tsv(const std::string& path) const;
  static Vocabulary load_tsv(const std::string& path);
};

// One document: token ids, per-token thematic flags, thematic bag-of-words.
// The sequence separator is consumed as the first RNN input (shift-by-one)
// rather than stored here.
struct Document {
  std::vector<std::int64_t> token_ids;
  std::vector<std::uint8_t> thematic_flags;
  std::vector<std::int64_t> bow_counts;  // length V, thematic positions only
};

Document encode_document(const std::vector<std::string>& text, const Vocabulary& vocab);

std::string lowercase(std::string s);
std::vector<std::string> split_ws(const std::string& line);

// One training batch of fixed-length windows. Rows are the variational
// units: bow counts are per window, and doc/window ids let evaluation
// stitch per-document sequences back together.
struct Batch {
  std::int64_t b = 0, t = 0, v = 0;
  std::vector<std::int64_t> tokens;   // b*t, pad-filled
  std::vector<std::uint8_t> flags;    // b*t (l_t; 0 on padding)
  std::vector<std::uint8_t> mask;     // b*t (1 = real token)
  std::vector<std::int64_t> lengths;  // b
  std::vector<std::int64_t> bow;      // b*v, thematic counts within the window
  std::vector<std::int64_t> doc_ids;  // b (pseudo-document id when grouping)
  std::vector<std::int64_t> win_ids;  // b, global window index
  std::vector<std::int64_t> starts;   // b, window start within its document
};

// Split (optionally pseudo-grouped) documents into seq_len windows and pack
// them into batches. Window order is shuffled deterministically from
// (seed, epoch) when shuffle is set; otherwise corpus order.
std::vector<Batch> make_batches(const std::vector<Document>& docs, std::int64_t vocab_size,
                                std::int64_t seq_len, std::int64_t batch_size,
                                std::int64_t group_pseudo, std::uint64_t seed,
                                std::uint64_t epoch, bool shuffle);

// Bundled fallback list of common English function words + punctuation.
const std::unordered_set<std::string>& default_stopwords();
std::unordered_set<std::string> load_stopwords(const std::string& path);

// Corpus file: UTF-8, one document per line, whitespace-separated tokens.
std::vector<std::vector<std::string>> read_corpus(const std::string& path);

}  // namespace vrtm
