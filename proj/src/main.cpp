#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vrtm/checkpoint.hpp"
#include "vrtm/eval.hpp"
#include "vrtm/generate.hpp"
#include "vrtm/ldavb.hpp"
#include "vrtm/train.hpp"

namespace {

using namespace vrtm;

std::vector<Document> load_encoded(const std::string& path, const Vocabulary& vocab) {
  const auto raw = read_corpus(path);
  if (raw.empty()) throw std::runtime_error("empty corpus in '" + path + "'");
  std::vector<Document> docs;
  docs.reserve(raw.size());
  for (const auto& d : raw) docs.push_back(encode_document(d, vocab));
  return docs;
}

std::string hex64(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_vocab_hash(const Checkpoint& c, const Vocabulary& vocab, const std::string& path) {
  if (c.vocab_hash != vocab.hash())
    throw std::runtime_error("vocabulary mismatch: checkpoint was trained with vocabulary " +
                             hex64(c.vocab_hash) + " but '" + path + "' hashes to " +
                             hex64(vocab.hash()));
}

std::vector<Batch> eval_batches(const Checkpoint& c, const std::vector<Document>& docs,
                                const Vocabulary& vocab) {
  return checkpoint_batches(c, docs, vocab.size());
}

// ---- subcommand payloads --------------------------------------------------

struct Paths {
  std::string corpus, train, val, test, vocab, checkpoint, metrics, out, assignments, dump,
      stopwords;
};

int run_vocab(const Paths& p, double unk_fraction) {
  const auto raw = read_corpus(p.corpus);
  if (raw.empty()) throw std::runtime_error("empty corpus in '" + p.corpus + "'");
  const auto stop = p.stopwords.empty() ? default_stopwords() : load_stopwords(p.stopwords);
  const auto vocab = Vocabulary::build(raw, stop, unk_fraction);
  vocab.save_tsv(p.out);
  std::cerr << "vocab: " << vocab.size() << " tokens (" << vocab.thematic_size()
            << " thematic) from " << raw.size() << " documents -> " << p.out << "\n";
  std::cout << "{\"tokens\":" << vocab.size() << ",\"thematic\":" << vocab.thematic_size()
            << ",\"hash\":\"" << hex64(vocab.hash()) << "\"}\n";
  return 0;
}

template <typename T>
int run_train(const TrainConfig& cfg, const Paths& p) {
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  const auto train_docs = load_encoded(p.train, vocab);
  const auto val_docs = load_encoded(p.val, vocab);
  auto res = train_model<T>(cfg, train_docs, val_docs, vocab, &std::cerr);
  save_checkpoint(res.best, p.checkpoint);
  if (!p.metrics.empty()) {
    std::ofstream f(p.metrics, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + p.metrics + "' for writing");
    for (const auto& m : res.metrics) f << metrics_jsonl(m) << '\n';
  }
  std::cout << "{\"best_epoch\":" << res.best_epoch
            << ",\"best_val_ppl\":" << format_double(res.best_val)
            << ",\"epochs_run\":" << res.metrics.size() << "}\n";
  return 0;
}

template <typename T>
int run_eval(const Paths& p, int samples, std::uint64_t seed, std::int64_t top_n,
             bool rnn_only) {
  const auto c = load_checkpoint(p.checkpoint);
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  check_vocab_hash(c, vocab, p.vocab);
  auto m = model_from_checkpoint<T>(c);
  const auto docs = load_encoded(p.test, vocab);
  const auto batches = eval_batches(c, docs, vocab);
  const auto r = eval_report(m, batches, vocab, samples, seed, top_n, rnn_only);
  std::cout << r.to_json() << "\n";
  return 0;
}

template <typename T>
int run_generate(const Paths& p, const GenerationConfig& gc, bool rnn_only) {
  const auto c = load_checkpoint(p.checkpoint);
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  check_vocab_hash(c, vocab, p.vocab);
  auto m = model_from_checkpoint<T>(c);
  const auto r = generate_tokens(m, vocab, gc, rnn_only);
  for (const auto& line : render_sentences(r.tokens, vocab)) std::cout << line << "\n";
  return 0;
}

int run_topics(const Paths& p, std::int64_t top_n) {
  const auto c = load_checkpoint(p.checkpoint);
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  check_vocab_hash(c, vocab, p.vocab);
  auto m = model_from_checkpoint<double>(c);
  const auto tw = top_words(m, vocab, top_n);
  for (std::size_t k = 0; k < tw.size(); ++k) {
    std::cout << "topic " << k << ":";
    for (const auto& w : tw[k]) std::cout << ' ' << w;
    std::cout << "\n";
  }
  return 0;
}

int run_switchp(const Paths& p) {
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  std::vector<Assignment> as;
  if (!p.assignments.empty()) {
    as = load_assignments_tsv(p.assignments, vocab);
  } else {
    const auto c = load_checkpoint(p.checkpoint);
    check_vocab_hash(c, vocab, p.vocab);
    auto m = model_from_checkpoint<double>(c);
    const auto docs = load_encoded(p.test, vocab);
    as = topic_assignments(m, eval_batches(c, docs, vocab));
  }
  if (!p.dump.empty()) save_assignments_tsv(p.dump, as, vocab);
  std::cout << "{\"switchp\":" << format_double(switchp(as)) << "}\n";
  return 0;
}

int run_lda(const Paths& p, std::int64_t topics, double alpha, int iters, std::uint64_t seed) {
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  const auto train_docs = load_encoded(p.train, vocab);
  const auto test_docs = p.test.empty() ? train_docs : load_encoded(p.test, vocab);
  auto m = lda_fit(train_docs, topics, alpha, iters, seed);
  std::cerr << "lda: " << m.elbo_trace.size() << " sweeps, final bound "
            << format_double(m.elbo_trace.back()) << "\n";
  const auto as = lda_assignments(m, test_docs);
  if (!p.dump.empty()) save_assignments_tsv(p.dump, as, vocab);
  std::cout << "{\"topics\":" << topics << ",\"alpha\":" << format_double(alpha)
            << ",\"sweeps\":" << m.elbo_trace.size()
            << ",\"final_elbo\":" << format_double(m.elbo_trace.back())
            << ",\"switchp\":" << format_double(switchp(as))
            << ",\"h_theta\":" << format_double(lda_mean_theta_entropy(m, test_docs)) << "}\n";
  return 0;
}

template <typename T>
int run_sweep(TrainConfig cfg, const Paths& p, const std::string& grid, int samples,
              std::int64_t top_n) {
  const auto vocab = Vocabulary::load_tsv(p.vocab);
  const auto train_docs = load_encoded(p.train, vocab);
  const auto val_docs = load_encoded(p.val, vocab);
  const auto eval_docs = p.test.empty() ? val_docs : load_encoded(p.test, vocab);

  std::vector<double> alphas;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    alphas.push_back(std::stod(item));
  }
  if (alphas.empty()) throw std::invalid_argument("sweep-alpha: empty --grid");

  for (const double a : alphas) {
    cfg.alpha = a;
    std::cerr << "sweep: alpha=" << format_double(a) << "\n";
    auto res = train_model<T>(cfg, train_docs, val_docs, vocab, &std::cerr);
    auto m = model_from_checkpoint<T>(res.best);
    const auto batches = eval_batches(res.best, eval_docs, vocab);
    const auto r = eval_report(m, batches, vocab, samples, cfg.seed, top_n, cfg.rnn_only);
    std::cout << "{\"alpha\":" << format_double(a) << "," << r.to_json().substr(1) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent neural topic model: train, evaluate, generate"};
  app.require_subcommand(1);

  Paths p;
  TrainConfig cfg;
  std::string precision = "f64";
  std::string grid;
  double unk_fraction = 0.0;
  int samples = 1, lda_iters = 100, threads = 1;
  std::uint64_t eval_seed = 1;
  std::int64_t top_n = 10, lda_topics = 50;
  double lda_alpha = 0.5;
  bool rnn_only = false, no_bn = false;
  GenerationConfig gc;

  const std::map<std::string, CellKind> cell_names{
      {"rnn", CellKind::Rnn}, {"gru", CellKind::Gru}, {"lstm", CellKind::Lstm}};
  const std::map<std::string, ThetaMode> theta_modes{{"mc", ThetaMode::Mc},
                                                     {"analytic", ThetaMode::Analytic}};
  const std::map<std::string, bool> grad_modes{{"pathwise", true}, {"stop", false}};
  const std::map<std::string, bool> timing_modes{{"wall", true}, {"off", false}};

  auto add_precision = [&](CLI::App* sc) {
    sc->add_option("--precision", precision, "floating point width")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
  };
  auto add_train_flags = [&](CLI::App* sc) {
    sc->add_option("--train", p.train, "training corpus, one document per line")->required();
    sc->add_option("--val", p.val, "validation corpus")->required();
    sc->add_option("--vocab", p.vocab, "vocabulary tsv from the vocab subcommand")->required();
    sc->add_option("--topics", cfg.topics, "number of topics")->capture_default_str();
    sc->add_option("--alpha", cfg.alpha, "symmetric Dirichlet prior")->capture_default_str();
    sc->add_option("--cell", cfg.cell, "recurrent cell")
        ->transform(CLI::CheckedTransformer(cell_names, CLI::ignore_case))
        ->default_str("lstm");
    sc->add_option("--hidden", cfg.hidden, "hidden state width")->capture_default_str();
    sc->add_option("--embed", cfg.embed, "embedding width")->capture_default_str();
    sc->add_option("--seq-len", cfg.seq_len, "window length in tokens")->capture_default_str();
    sc->add_option("--batch", cfg.batch_size, "windows per batch")->capture_default_str();
    sc->add_option("--lr", cfg.lr, "adam learning rate")->capture_default_str();
    sc->add_option("--epochs", cfg.epochs, "maximum epochs")->capture_default_str();
    sc->add_option("--patience", cfg.patience, "epochs without improvement before stopping")
        ->capture_default_str();
    sc->add_option("--seed", cfg.seed, "master seed for all stochastic behavior")
        ->capture_default_str();
    sc->add_option("--samples", cfg.samples, "theta samples per window")->capture_default_str();
    sc->add_option("--theta-mode", cfg.theta_mode, "theta treatment in l_z")
        ->transform(CLI::CheckedTransformer(theta_modes, CLI::ignore_case))
        ->default_str("mc");
    sc->add_option("--theta-grad", cfg.theta_pathwise, "gradient through theta draws")
        ->transform(CLI::CheckedTransformer(grad_modes, CLI::ignore_case))
        ->default_str("pathwise");
    sc->add_option("--group-pseudo", cfg.group_pseudo,
                   "documents per pseudo-document (1 disables grouping)")
        ->capture_default_str();
    sc->add_option("--dropout", cfg.dropout, "dropout rate on decoder inputs")
        ->capture_default_str();
    sc->add_flag("--rnn-only", cfg.rnn_only, "ablate topics: pure language model");
    sc->add_flag("--no-batch-norm", no_bn, "disable batch norm in the encoder");
    sc->add_option("--timing", cfg.timing, "per-epoch seconds in the metrics log")
        ->transform(CLI::CheckedTransformer(timing_modes, CLI::ignore_case))
        ->default_str("off");
    sc->add_option("--threads", threads,
                   "compute threads (reserved; execution is deterministic single-thread)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    add_precision(sc);
  };

  auto* sc_vocab = app.add_subcommand("vocab", "build a vocabulary tsv from a corpus");
  sc_vocab->add_option("--corpus", p.corpus, "corpus, one document per line")->required();
  sc_vocab->add_option("--out", p.out, "output vocabulary tsv")->required();
  sc_vocab->add_option("--stopwords", p.stopwords, "stopword list, one token per line");
  sc_vocab->add_option("--unk-fraction", unk_fraction,
                       "fraction of rarest types folded into <unk>")
      ->capture_default_str();

  auto* sc_train = app.add_subcommand("train", "fit the model and write a checkpoint");
  add_train_flags(sc_train);
  sc_train->add_option("--checkpoint", p.checkpoint, "output checkpoint path")->required();
  sc_train->add_option("--metrics", p.metrics, "output metrics jsonl path");

  auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  sc_eval->add_option("--checkpoint", p.checkpoint, "model checkpoint")->required();
  sc_eval->add_option("--test", p.test, "evaluation corpus")->required();
  sc_eval->add_option("--vocab", p.vocab, "vocabulary tsv")->required();
  sc_eval->add_option("--samples", samples, "theta samples per window")->capture_default_str();
  sc_eval->add_option("--seed", eval_seed, "seed for evaluation draws")->capture_default_str();
  sc_eval->add_option("--top-n", top_n, "words listed per topic")->capture_default_str();
  sc_eval->add_flag("--rnn-only", rnn_only, "score with the plain language model only");
  add_precision(sc_eval);

  auto* sc_gen = app.add_subcommand("generate", "sample text from a checkpoint");
  sc_gen->add_option("--checkpoint", p.checkpoint, "model checkpoint")->required();
  sc_gen->add_option("--vocab", p.vocab, "vocabulary tsv")->required();
  sc_gen->add_option("--length", gc.length, "tokens to generate")->capture_default_str();
  sc_gen->add_option("--window", gc.window, "trailing words conditioning theta")
      ->capture_default_str();
  sc_gen->add_option("--block", gc.block, "sentences between theta refreshes")
      ->capture_default_str();
  sc_gen->add_option("--temperature", gc.temperature, "softening of the mixture logits")
      ->capture_default_str();
  sc_gen->add_option("--seed", gc.seed, "sampling seed")->capture_default_str();
  sc_gen->add_flag("--rnn-only", rnn_only, "sample from the plain language model only");
  add_precision(sc_gen);

  auto* sc_topics = app.add_subcommand("topics", "print the top words of each topic");
  sc_topics->add_option("--checkpoint", p.checkpoint, "model checkpoint")->required();
  sc_topics->add_option("--vocab", p.vocab, "vocabulary tsv")->required();
  sc_topics->add_option("--top-n", top_n, "words per topic")->capture_default_str();

  auto* sc_switchp = app.add_subcommand("switchp", "switch percentage from a dump or checkpoint");
  sc_switchp->add_option("--vocab", p.vocab, "vocabulary tsv")->required();
  sc_switchp->add_option("--assignments", p.assignments, "assignment tsv dump");
  sc_switchp->add_option("--checkpoint", p.checkpoint, "model checkpoint");
  sc_switchp->add_option("--test", p.test, "corpus to assign");
  sc_switchp->add_option("--dump", p.dump, "write the assignment tsv here");

  auto* sc_lda = app.add_subcommand("lda-baseline", "variational-bayes lda reference");
  sc_lda->add_option("--train", p.train, "training corpus")->required();
  sc_lda->add_option("--test", p.test, "evaluation corpus (defaults to the training corpus)");
  sc_lda->add_option("--vocab", p.vocab, "vocabulary tsv")->required();
  sc_lda->add_option("--topics", lda_topics, "number of topics")->capture_default_str();
  sc_lda->add_option("--alpha", lda_alpha, "symmetric Dirichlet prior")->capture_default_str();
  sc_lda->add_option("--iters", lda_iters, "maximum sweeps")->capture_default_str();
  sc_lda->add_option("--seed", eval_seed, "initialization seed")->capture_default_str();
  sc_lda->add_option("--dump", p.dump, "write the assignment tsv here");

  auto* sc_sweep = app.add_subcommand("sweep-alpha", "train and evaluate across an alpha grid");
  add_train_flags(sc_sweep);
  sc_sweep->add_option("--grid", grid, "comma-separated alphas")->required();
  sc_sweep->add_option("--test", p.test, "evaluation corpus (defaults to --val)");
  sc_sweep->add_option("--eval-samples", samples, "theta samples per window at evaluation")
      ->capture_default_str();
  sc_sweep->add_option("--top-n", top_n, "words listed per topic")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    cfg.use_bn = !no_bn;
    (void)threads;  // accepted for interface stability; reductions stay serial
    const bool f32 = precision == "f32";
    if (sc_vocab->parsed()) return run_vocab(p, unk_fraction);
    if (sc_train->parsed())
      return f32 ? run_train<float>(cfg, p) : run_train<double>(cfg, p);
    if (sc_eval->parsed())
      return f32 ? run_eval<float>(p, samples, eval_seed, top_n, rnn_only)
                 : run_eval<double>(p, samples, eval_seed, top_n, rnn_only);
    if (sc_gen->parsed())
      return f32 ? run_generate<float>(p, gc, rnn_only) : run_generate<double>(p, gc, rnn_only);
    if (sc_topics->parsed()) return run_topics(p, top_n);
    if (sc_switchp->parsed()) {
      if (p.assignments.empty() && (p.checkpoint.empty() || p.test.empty()))
        throw std::invalid_argument(
            "switchp needs either --assignments or both --checkpoint and --test");
      return run_switchp(p);
    }
    if (sc_lda->parsed()) return run_lda(p, lda_topics, lda_alpha, lda_iters, eval_seed);
    if (sc_sweep->parsed())
      return f32 ? run_sweep<float>(cfg, p, grid, samples, top_n)
                 : run_sweep<double>(cfg, p, grid, samples, top_n);
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
