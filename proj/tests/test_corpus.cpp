#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "vrtm/corpus.hpp"

using namespace vrtm;

namespace {
std::vector<std::vector<std::string>> docs_from(std::initializer_list<const char*> lines) {
  std::vector<std::vector<std::string>> out;
  for (const char* l : lines) out.push_back(split_ws(l));
  return out;
}
const std::unordered_set<std::string> kStops{"the", "of", "and"};
}  // namespace

TEST_CASE("build_vocab: ordering, specials, stopword flags") {
  auto v = Vocabulary::build(docs_from({"the cat sat", "cat naps and The dog"}), kStops, 0.0);
  CHECK(v.tokens[0] == "<unk>");
  CHECK(v.tokens[1] == "<sep>");
  CHECK(v.tokens[2] == "<pad>");
  CHECK(v.unk_id == 0);
  CHECK(v.thematic[v.unk_id] == 0);
  CHECK(v.thematic[v.sep_id] == 0);
  CHECK(v.thematic[v.pad_id] == 0);
  // "the" x2 and "cat" x2 tie on frequency; token string breaks the tie
  CHECK(v.tokens[3] == "cat");
  CHECK(v.tokens[4] == "the");
  CHECK(v.freqs[3] == 2);
  CHECK(v.thematic[v.ids.at("the")] == 0);
  CHECK(v.thematic[v.ids.at("and")] == 0);
  CHECK(v.thematic[v.ids.at("cat")] == 1);
  CHECK(v.thematic_size() == 4);  // cat sat naps dog
  CHECK(v.lookup("zebra") == v.unk_id);
}

TEST_CASE("build_vocab: cumulative rare mass maps to <unk>") {
  // a:5 b:5 c:1, fraction 0.1 -> c (mass 1/11 <= 0.1) dropped, b survives
  auto v = Vocabulary::build(docs_from({"a a a a a b b b b b c"}), kStops, 0.1);
  CHECK(v.ids.count("c") == 0);
  CHECK(v.ids.count("a") == 1);
  CHECK(v.ids.count("b") == 1);
  CHECK(v.freqs[v.unk_id] == 1);
  CHECK(v.lookup("c") == v.unk_id);
}

TEST_CASE("build_vocab: degenerate and error cases") {
  auto v = Vocabulary::build(docs_from({"the of and the"}), kStops, 0.0);
  CHECK(v.thematic_size() == 0);  // everything is a stopword
  CHECK(v.size() == 6);           // 3 specials + the/of/and
  CHECK_THROWS_WITH_AS(Vocabulary::build({}, kStops, 0.0), "empty corpus", std::runtime_error);
  CHECK_THROWS_AS(Vocabulary::build(docs_from({"x"}), {}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary::build(docs_from({"x"}), kStops, 1.0), std::invalid_argument);
}

TEST_CASE("vocabulary TSV round trip") {
  auto v = Vocabulary::build(docs_from({"the cat sat on a mat"}), kStops, 0.0);
  const std::string path = "vocab_roundtrip_test.tsv";
  v.save_tsv(path);
  auto w = Vocabulary::load_tsv(path);
  std::remove(path.c_str());
  CHECK(w.tokens == v.tokens);
  CHECK(w.freqs == v.freqs);
  CHECK(w.thematic == v.thematic);
  CHECK(w.unk_id == v.unk_id);
  CHECK(w.sep_id == v.sep_id);
  CHECK(w.pad_id == v.pad_id);
  CHECK(w.hash() == v.hash());
}

TEST_CASE("encode_document: flags, counts, round trip") {
  auto v = Vocabulary::build(docs_from({"the cat sat and cat"}), kStops, 0.0);

  auto all_stop = encode_document(split_ws("the of and"), v);
  for (auto f : all_stop.thematic_flags) CHECK(f == 0);
  CHECK(std::accumulate(all_stop.bow_counts.begin(), all_stop.bow_counts.end(), 0L) == 0);

  auto d = encode_document(split_ws("The cat sat"), v);
  CHECK(d.thematic_flags == std::vector<std::uint8_t>{0, 1, 1});
  CHECK(d.bow_counts[v.ids.at("cat")] == 1);
  CHECK(d.bow_counts[v.ids.at("sat")] == 1);

  auto dd = encode_document(split_ws("cat cat"), v);
  CHECK(dd.bow_counts[v.ids.at("cat")] == 2);

  // sum of counts = number of thematic positions
  std::int64_t them = 0;
  for (auto f : d.thematic_flags) them += f;
  CHECK(std::accumulate(d.bow_counts.begin(), d.bow_counts.end(), 0L) == them);

  // id -> token round trip for in-vocabulary tokens
  for (std::size_t i = 0; i < d.token_ids.size(); ++i)
    CHECK(v.lookup(v.tokens[d.token_ids[i]]) == d.token_ids[i]);

  CHECK_THROWS_AS(encode_document({}, v), std::invalid_argument);
}

TEST_CASE("make_batches: windowing, padding, masks") {
  auto v = Vocabulary::build(docs_from({"w w w w w"}), kStops, 0.0);
  std::vector<Document> docs{encode_document(split_ws("w w w w w"), v)};
  auto batches = make_batches(docs, v.size(), 45, 8, 1, 0, 0, false);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.b == 1);
  CHECK(b.t == 45);
  std::int64_t masked = 0;
  for (auto m : b.mask) masked += (m == 0);
  CHECK(masked == 40);
  CHECK(b.lengths[0] == 5);
  std::int64_t mask_on = 0;
  for (auto m : b.mask) mask_on += m;
  CHECK(mask_on == std::accumulate(b.lengths.begin(), b.lengths.end(), 0L));
  for (std::int64_t t = 5; t < 45; ++t) {
    CHECK(b.tokens[t] == v.pad_id);
    CHECK(b.flags[t] == 0);
  }

  // 90-token document splits into exactly two windows
  std::vector<std::string> long_doc(90, "w");
  std::vector<Document> docs2{encode_document(long_doc, v)};
  auto b2 = make_batches(docs2, v.size(), 45, 8, 1, 0, 0, false);
  REQUIRE(b2.size() == 1);
  CHECK(b2[0].b == 2);
  CHECK(b2[0].starts == std::vector<std::int64_t>{0, 45});

  CHECK_THROWS_AS(make_batches(docs, v.size(), 1, 8, 1, 0, 0, false), std::invalid_argument);
  CHECK_THROWS_AS(make_batches(docs, v.size(), 45, 0, 1, 0, 0, false), std::invalid_argument);
}

TEST_CASE("make_batches: pseudo-document grouping and per-window bow") {
  auto v = Vocabulary::build(docs_from({"cat dog the"}), kStops, 0.0);
  std::vector<Document> docs;
  for (int i = 0; i < 25; ++i) docs.push_back(encode_document(split_ws("cat dog the"), v));
  auto b = make_batches(docs, v.size(), 45, 100, 10, 0, 0, false);
  REQUIRE(b.size() == 1);
  // 25 docs grouped by 10 -> 3 pseudo-documents; each is <= 45 tokens here
  CHECK(b[0].b == 3);
  CHECK(b[0].doc_ids == std::vector<std::int64_t>{0, 1, 2});
  // first pseudo-doc: 10 docs x "cat dog the" -> bow counts 10/10, stopword 0
  CHECK(b[0].bow[0 * v.size() + v.ids.at("cat")] == 10);
  CHECK(b[0].bow[0 * v.size() + v.ids.at("dog")] == 10);
  CHECK(b[0].bow[0 * v.size() + v.ids.at("the")] == 0);
  CHECK(b[0].bow[2 * v.size() + v.ids.at("cat")] == 5);
}

TEST_CASE("make_batches: seeded shuffle is deterministic and epoch-dependent") {
  auto v = Vocabulary::build(docs_from({"w"}), kStops, 0.0);
  std::vector<Document> docs;
  for (int i = 0; i < 37; ++i)
    docs.push_back(encode_document(std::vector<std::string>(1 + i % 5, "w"), v));
  auto a1 = make_batches(docs, v.size(), 8, 4, 1, 42, 0, true);
  auto a2 = make_batches(docs, v.size(), 8, 4, 1, 42, 0, true);
  auto b1 = make_batches(docs, v.size(), 8, 4, 1, 42, 1, true);
  REQUIRE(a1.size() == a2.size());
  bool same = true, diff = false;
  for (std::size_t i = 0; i < a1.size(); ++i) {
    same = same && a1[i].win_ids == a2[i].win_ids;
    if (i < b1.size()) diff = diff || a1[i].win_ids != b1[i].win_ids;
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("stopword defaults and file loading") {
  CHECK(default_stopwords().count("the") == 1);
  CHECK(default_stopwords().count(".") == 1);
  CHECK(default_stopwords().count("police") == 0);
  const std::string path = "stopwords_test.txt";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("Alpha\nbeta\n", f);
    std::fclose(f);
  }
  auto s = load_stopwords(path);
  std::remove(path.c_str());
  CHECK(s.count("alpha") == 1);
  CHECK(s.count("beta") == 1);
}
