#include "vrtm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vrtm {

namespace {
const char* kUnk = "<unk>";
const char* kSep = "<sep>";
const char* kPad = "<pad>";
}  // namespace

std::string lowercase(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<std::vector<std::string>> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<std::vector<std::string>> docs;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    if (!toks.empty()) docs.push_back(std::move(toks));
  }
  return docs;
}

std::int64_t Vocabulary::thematic_size() const {
  std::int64_t n = 0;
  for (auto f : thematic) n += f ? 1 : 0;
  return n;
}

std::int64_t Vocabulary::lookup(const std::string& lower_token) const {
  auto it = ids.find(lower_token);
  return it == ids.end() ? unk_id : it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(p[i]);
      h *= 1099511628211ull;
    }
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    mix(tokens[i].data(), tokens[i].size());
    const char t = thematic[i] ? '1' : '0';
    mix(&t, 1);
  }
  return h;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& raw_docs,
                             const std::unordered_set<std::string>& stopwords,
                             double unk_fraction) {
  if (unk_fraction < 0.0 || unk_fraction >= 1.0)
    throw std::invalid_argument("unk_fraction must be in [0,1)");
  if (stopwords.empty()) throw std::invalid_argument("stopword list is empty");

  std::unordered_map<std::string, std::int64_t> counts;
  std::int64_t total = 0;
  for (const auto& doc : raw_docs)
    for (const auto& raw : doc) {
      ++counts[lowercase(raw)];
      ++total;
    }
  if (total == 0) throw std::runtime_error("empty corpus");

  // drop the rarest tokens whose cumulative mass stays within unk_fraction
  std::vector<std::pair<std::string, std::int64_t>> by_rare(counts.begin(), counts.end());
  std::sort(by_rare.begin(), by_rare.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::unordered_set<std::string> dropped;
  std::int64_t cum = 0;
  for (const auto& [tok, c] : by_rare) {
    if (tok == kUnk || tok == kSep || tok == kPad) continue;
    if (static_cast<double>(cum + c) <= unk_fraction * static_cast<double>(total)) {
      cum += c;
      dropped.insert(tok);
    } else {
      break;
    }
  }

  Vocabulary v;
  auto add = [&v](const std::string& tok, std::int64_t freq, bool them) {
    v.ids.emplace(tok, static_cast<std::int64_t>(v.tokens.size()));
    v.tokens.push_back(tok);
    v.freqs.push_back(freq);
    v.thematic.push_back(them ? 1 : 0);
  };
  std::int64_t unk_freq = cum;
  for (const char* s : {kUnk, kSep, kPad}) {
    auto it = counts.find(s);
    std::int64_t f = it == counts.end() ? 0 : it->second;
    add(s, std::string(s) == kUnk ? unk_freq + f : f, false);
  }

  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [tok, c] : counts) {
    if (dropped.count(tok) || tok == kUnk || tok == kSep || tok == kPad) continue;
    kept.emplace_back(tok, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [tok, c] : kept) add(tok, c, !stopwords.count(tok));
  return v;
}

void Vocabulary::save_tsv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out << tokens[i] << '\t' << i << '\t' << freqs[i] << '\t' << int(thematic[i]) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

Vocabulary Vocabulary::load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  Vocabulary v;
  v.unk_id = v.sep_id = v.pad_id = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok, id_s, freq_s, them_s;
    if (!std::getline(ls, tok, '\t') || !std::getline(ls, id_s, '\t') ||
        !std::getline(ls, freq_s, '\t') || !std::getline(ls, them_s))
      throw std::runtime_error("malformed vocabulary line: " + line);
    const auto id = static_cast<std::int64_t>(std::stoll(id_s));
    if (id != static_cast<std::int64_t>(v.tokens.size()))
      throw std::runtime_error("vocabulary ids must be dense and ordered");
    v.ids.emplace(tok, id);
    v.tokens.push_back(tok);
    v.freqs.push_back(std::stoll(freq_s));
    v.thematic.push_back(them_s == "1" ? 1 : 0);
    if (tok == kUnk) v.unk_id = id;
    if (tok == kSep) v.sep_id = id;
    if (tok == kPad) v.pad_id = id;
  }
  if (v.unk_id < 0 || v.sep_id < 0 || v.pad_id < 0)
    throw std::runtime_error("vocabulary file is missing special tokens");
  return v;
}

Document encode_document(const std::vector<std::string>& text, const Vocabulary& vocab) {
  if (text.empty()) throw std::invalid_argument("cannot encode an empty document");
  Document d;
  d.token_ids.reserve(text.size());
  d.thematic_flags.reserve(text.size());
  d.bow_counts.assign(vocab.size(), 0);
  for (const auto& raw : text) {
    const std::int64_t id = vocab.lookup(lowercase(raw));
    d.token_ids.push_back(id);
    const bool them = vocab.thematic[id] != 0;
    d.thematic_flags.push_back(them ? 1 : 0);
    if (them) ++d.bow_counts[id];
  }
  return d;
}

std::vector<Batch> make_batches(const std::vector<Document>& docs, std::int64_t vocab_size,
                                std::int64_t seq_len, std::int64_t batch_size,
                                std::int64_t group_pseudo, std::uint64_t seed,
                                std::uint64_t epoch, bool shuffle) {
  if (seq_len < 2) throw std::invalid_argument("seq_len must be >= 2");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (group_pseudo < 1) throw std::invalid_argument("group_pseudo must be >= 1");

  // concatenate documents into pseudo-documents, then carve windows
  struct Win {
    std::int64_t doc, start, len;
    std::vector<std::int64_t> toks;
    std::vector<std::uint8_t> flags;
  };
  std::vector<Win> wins;
  const std::int64_t n_groups =
      (static_cast<std::int64_t>(docs.size()) + group_pseudo - 1) / group_pseudo;
  for (std::int64_t g = 0; g < n_groups; ++g) {
    std::vector<std::int64_t> toks;
    std::vector<std::uint8_t> flags;
    for (std::int64_t d = g * group_pseudo;
         d < std::min<std::int64_t>((g + 1) * group_pseudo,
                                    static_cast<std::int64_t>(docs.size()));
         ++d) {
      toks.insert(toks.end(), docs[d].token_ids.begin(), docs[d].token_ids.end());
      flags.insert(flags.end(), docs[d].thematic_flags.begin(),
                   docs[d].thematic_flags.end());
    }
    for (std::int64_t s = 0; s < static_cast<std::int64_t>(toks.size()); s += seq_len) {
      Win w;
      w.doc = g;
      w.start = s;
      w.len = std::min<std::int64_t>(seq_len, static_cast<std::int64_t>(toks.size()) - s);
      w.toks.assign(toks.begin() + s, toks.begin() + s + w.len);
      w.flags.assign(flags.begin() + s, flags.begin() + s + w.len);
      wins.push_back(std::move(w));
    }
  }

  std::vector<std::int64_t> order(wins.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  if (shuffle) {
    Prng rng(derive_stream(seed, "shuffle", epoch, 0));
    // Fisher-Yates with our own stream so the order is stable across builds
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
  }

  const std::int64_t pad_id = 2;  // Vocabulary contract: specials are 0,1,2
  std::vector<Batch> out;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const auto rows = std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                            order.size() - at);
    Batch b;
    b.b = static_cast<std::int64_t>(rows);
    b.t = seq_len;
    b.v = vocab_size;
    b.tokens.assign(rows * seq_len, pad_id);
    b.flags.assign(rows * seq_len, 0);
    b.mask.assign(rows * seq_len, 0);
    b.bow.assign(rows * vocab_size, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const Win& w = wins[static_cast<std::size_t>(order[at + r])];
      b.lengths.push_back(w.len);
      b.doc_ids.push_back(w.doc);
      b.win_ids.push_back(order[at + r]);
      b.starts.push_back(w.start);
      for (std::int64_t t = 0; t < w.len; ++t) {
        const auto idx = static_cast<std::int64_t>(r) * seq_len + t;
        b.tokens[idx] = w.toks[t];
        b.flags[idx] = w.flags[t];
        b.mask[idx] = 1;
        if (w.flags[t]) ++b.bow[static_cast<std::int64_t>(r) * vocab_size + w.toks[t]];
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::unordered_set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stopword file: " + path);
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    for (auto& t : toks) out.insert(lowercase(t));
  }
  if (out.empty()) throw std::runtime_error("stopword file is empty: " + path);
  return out;
}

const std::unordered_set<std::string>& default_stopwords() {
  static const std::unordered_set<std::string> kList = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
      "any", "are", "aren't", "as", "at", "be", "because", "been", "before", "being",
      "below", "between", "both", "but", "by", "can", "can't", "cannot", "could",
      "couldn't", "did", "didn't", "do", "does", "doesn't", "doing", "don't", "down",
      "during", "each", "few", "for", "from", "further", "had", "hadn't", "has",
      "hasn't", "have", "haven't", "having", "he", "he'd", "he'll", "he's", "her",
      "here", "here's", "hers", "herself", "him", "himself", "his", "how", "how's",
      "i", "i'd", "i'll", "i'm", "i've", "if", "in", "into", "is", "isn't", "it",
      "it's", "its", "itself", "let's", "me", "more", "most", "mustn't", "my",
      "myself", "no", "nor", "not", "of", "off", "on", "once", "only", "or",
      "other", "ought", "our", "ours", "ourselves", "out", "over", "own", "same",
      "shan't", "she", "she'd", "she'll", "she's", "should", "shouldn't", "so",
      "some", "such", "than", "that", "that's", "the", "their", "theirs", "them",
      "themselves", "then", "there", "there's", "these", "they", "they'd",
      "they'll", "they're", "they've", "this", "those", "through", "to", "too",
      "under", "until", "up", "very", "was", "wasn't", "we", "we'd", "we'll",
      "we're", "we've", "were", "weren't", "what", "what's", "when", "when's",
      "where", "where's", "which", "while", "who", "who's", "whom", "why", "why's",
      "with", "won't", "would", "wouldn't", "you", "you'd", "you'll", "you're",
      "you've", "your", "yours", "yourself", "yourselves",
      // punctuation emitted by common tokenizers
      ".", ",", "!", "?", ";", ":", "'", "\"", "``", "''", "-", "--", "(", ")",
      "[", "]", "{", "}", "...", "'s", "'t", "'re", "'ve", "'ll", "'d", "'m",
  };
  return kList;
}

}  // namespace vrtm
