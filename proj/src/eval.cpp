#include "vrtm/eval.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace vrtm {

double switchp_sequences(const std::vector<std::vector<int>>& z_per_doc) {
  double total = 0;
  std::int64_t used = 0;
  for (const auto& z : z_per_doc) {
    if (z.size() < 2) continue;
    std::int64_t same = 0;
    for (std::size_t i = 0; i + 1 < z.size(); ++i)
      if (z[i] == z[i + 1]) ++same;
    total += static_cast<double>(same) / static_cast<double>(z.size() - 1);
    ++used;
  }
  if (used == 0) throw std::runtime_error("switchp: no documents with >=2 thematic tokens");
  return total / static_cast<double>(used);
}

double switchp(const std::vector<Assignment>& as) {
  // group by document, ordered by position within each
  std::map<std::int64_t, std::vector<std::pair<std::int64_t, int>>> docs;
  for (const auto& a : as) docs[a.doc].emplace_back(a.pos, a.topic);
  std::vector<std::vector<int>> seqs;
  for (auto& [doc, toks] : docs) {
    std::stable_sort(toks.begin(), toks.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    std::vector<int> z;
    z.reserve(toks.size());
    for (const auto& [pos, topic] : toks) z.push_back(topic);
    seqs.push_back(std::move(z));
  }
  return switchp_sequences(seqs);
}

void save_assignments_tsv(const std::string& path, const std::vector<Assignment>& as,
                          const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "doc\tpos\ttoken\ttopic\n";
  for (const auto& a : as)
    f << a.doc << '\t' << a.pos << '\t' << vocab.tokens[static_cast<std::size_t>(a.token)]
      << '\t' << a.topic << '\n';
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Assignment> load_assignments_tsv(const std::string& path, const Vocabulary& vocab) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open assignments '" + path + "'");
  std::vector<Assignment> out;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("doc\t", 0) == 0) continue;  // header
    }
    std::istringstream is(line);
    std::string doc, pos, token, topic;
    if (!std::getline(is, doc, '\t') || !std::getline(is, pos, '\t') ||
        !std::getline(is, token, '\t') || !std::getline(is, topic))
      throw std::runtime_error("malformed assignment line " + std::to_string(lineno) + " in '" +
                               path + "'");
    Assignment a;
    a.doc = std::stoll(doc);
    a.pos = std::stoll(pos);
    a.token = vocab.lookup(token);
    a.topic = std::stoi(topic);
    out.push_back(a);
  }
  return out;
}

std::string EvalReport::to_json() const {
  std::string s = "{\"perplexity\":" + format_double(perplexity) +
                  ",\"switchp\":" + format_double(switchp) +
                  ",\"h_phi\":" + format_double(h_phi) +
                  ",\"h_theta\":" + format_double(h_theta) + ",\"top_words\":[";
  for (std::size_t k = 0; k < top_words.size(); ++k) {
    if (k) s += ',';
    s += '[';
    for (std::size_t i = 0; i < top_words[k].size(); ++i) {
      if (i) s += ',';
      s += '"';
      for (char c : top_words[k][i]) {
        if (c == '"' || c == '\\') s += '\\';
        s += c;
      }
      s += '"';
    }
    s += ']';
  }
  s += "]}";
  return s;
}

}  // namespace vrtm
