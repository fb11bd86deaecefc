// Python bindings for the core operations: corpus handling, training,
// evaluation, generation, the LDA baseline, and the Dirichlet numerics.
// Everything runs in double precision; the f32 path stays C++-only.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <sstream>
#include <stdexcept>

#include "vrtm/checkpoint.hpp"
#include "vrtm/corpus.hpp"
#include "vrtm/dirichlet.hpp"
#include "vrtm/eval.hpp"
#include "vrtm/generate.hpp"
#include "vrtm/ldavb.hpp"
#include "vrtm/rng.hpp"
#include "vrtm/special.hpp"
#include "vrtm/train.hpp"

namespace py = pybind11;
using namespace vrtm;

namespace {

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << "0x" << std::hex << h;
  return os.str();
}

ThetaMode parse_theta_mode(const std::string& s) {
  if (s == "mc") return ThetaMode::Mc;
  if (s == "analytic") return ThetaMode::Analytic;
  throw std::invalid_argument("theta_mode must be 'mc' or 'analytic', got '" + s + "'");
}

const char* theta_mode_name(ThetaMode m) { return m == ThetaMode::Mc ? "mc" : "analytic"; }

// A loaded model plus the checkpoint it came from, so saving and batching
// keep the exact training-time configuration.
struct PyModel {
  Checkpoint ckpt;
  VrtmModel<double> model;

  static PyModel load(const std::string& path) {
    auto c = load_checkpoint(path);
    auto m = model_from_checkpoint<double>(c);
    return PyModel{std::move(c), std::move(m)};
  }

  void save(const std::string& path) const { save_checkpoint(ckpt, path); }

  void check_vocab(const Vocabulary& vocab) const {
    if (vocab.hash() != ckpt.vocab_hash)
      throw std::invalid_argument("vocabulary mismatch: model was trained with vocabulary " +
                                  hex64(ckpt.vocab_hash) + " but got " + hex64(vocab.hash()));
  }

  std::vector<Batch> batches(const std::vector<Document>& docs, const Vocabulary& vocab) const {
    check_vocab(vocab);
    return checkpoint_batches(ckpt, docs, vocab.size());
  }
};

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["perplexity"] = r.perplexity;
  d["switchp"] = r.switchp;
  d["h_phi"] = r.h_phi;
  d["h_theta"] = r.h_theta;
  d["top_words"] = r.top_words;
  return d;
}

py::dict metrics_dict(const EpochMetrics& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["elbo"] = e.elbo;
  d["l_w"] = e.l_w;
  d["l_z"] = e.l_z;
  d["l_phi"] = e.l_phi;
  d["l_l"] = e.l_l;
  d["l_theta"] = e.l_theta;
  d["val_ppl"] = e.val_ppl;
  d["seconds"] = e.seconds;
  return d;
}

std::vector<std::vector<double>> tensor_rows(const TensorD& t) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(t.rows()));
  for (std::int64_t r = 0; r < t.rows(); ++r)
    out[static_cast<std::size_t>(r)].assign(t.data.begin() + r * t.cols(),
                                            t.data.begin() + (r + 1) * t.cols());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recurrent topic model: corpus tools, training, evaluation, generation, LDA baseline";

  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("build", &Vocabulary::build, py::arg("raw_docs"), py::arg("stopwords"),
                  py::arg("unk_fraction"),
                  "Build a vocabulary from tokenized documents; stopwords and the rarest "
                  "unk_fraction of the frequency mass become non-thematic")
      .def_static("load_tsv", &Vocabulary::load_tsv, py::arg("path"))
      .def("save_tsv", &Vocabulary::save_tsv, py::arg("path"))
      .def_readonly("tokens", &Vocabulary::tokens)
      .def_readonly("freqs", &Vocabulary::freqs)
      .def_readonly("thematic", &Vocabulary::thematic)
      .def_readonly("unk_id", &Vocabulary::unk_id)
      .def_readonly("sep_id", &Vocabulary::sep_id)
      .def_readonly("pad_id", &Vocabulary::pad_id)
      .def("size", &Vocabulary::size)
      .def("thematic_size", &Vocabulary::thematic_size)
      .def("lookup", &Vocabulary::lookup, py::arg("token"),
           "Id of a lowercased token, or unk_id when absent")
      .def("hash", &Vocabulary::hash)
      .def("__len__", &Vocabulary::size)
      .def("__repr__", [](const Vocabulary& v) {
        return "Vocabulary(size=" + std::to_string(v.size()) +
               ", thematic=" + std::to_string(v.thematic_size()) + ")";
      });

  py::class_<Document>(m, "Document")
      .def(py::init<>())
      .def_readwrite("token_ids", &Document::token_ids)
      .def_readwrite("thematic_flags", &Document::thematic_flags)
      .def_readwrite("bow_counts", &Document::bow_counts)
      .def("__len__", [](const Document& d) { return d.token_ids.size(); });

  m.def("read_corpus", &read_corpus, py::arg("path"),
        "Read one whitespace-tokenized document per non-empty line");
  m.def("default_stopwords", [] { return default_stopwords(); });
  m.def("load_stopwords", &load_stopwords, py::arg("path"));
  m.def("encode_document", &encode_document, py::arg("tokens"), py::arg("vocab"));
  m.def("lowercase", &lowercase, py::arg("s"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("topics", &TrainConfig::topics)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_property(
          "cell", [](const TrainConfig& c) { return std::string(cell_name(c.cell)); },
          [](TrainConfig& c, const std::string& s) { c.cell = parse_cell(s); })
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("embed", &TrainConfig::embed)
      .def_readwrite("seq_len", &TrainConfig::seq_len)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("samples", &TrainConfig::samples)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_property(
          "theta_mode",
          [](const TrainConfig& c) { return std::string(theta_mode_name(c.theta_mode)); },
          [](TrainConfig& c, const std::string& s) { c.theta_mode = parse_theta_mode(s); })
      .def_readwrite("theta_pathwise", &TrainConfig::theta_pathwise)
      .def_readwrite("group_pseudo", &TrainConfig::group_pseudo)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("rnn_only", &TrainConfig::rnn_only)
      .def_readwrite("use_bn", &TrainConfig::use_bn)
      .def_readwrite("timing", &TrainConfig::timing);

  py::class_<Assignment>(m, "Assignment")
      .def_readonly("doc", &Assignment::doc)
      .def_readonly("pos", &Assignment::pos)
      .def_readonly("token", &Assignment::token)
      .def_readonly("topic", &Assignment::topic)
      .def("__repr__", [](const Assignment& a) {
        return "Assignment(doc=" + std::to_string(a.doc) + ", pos=" + std::to_string(a.pos) +
               ", token=" + std::to_string(a.token) + ", topic=" + std::to_string(a.topic) + ")";
      });

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("topics", [](const PyModel& p) { return p.model.k; })
      .def_property_readonly("vocab_size", [](const PyModel& p) { return p.model.v; })
      .def_property_readonly("cell",
                             [](const PyModel& p) { return std::string(cell_name(p.model.rnn.kind)); })
      .def_property_readonly("vocab_hash", [](const PyModel& p) { return p.ckpt.vocab_hash; })
      .def_property_readonly("config",
                             [](const PyModel& p) {
                               py::dict d;
                               for (const auto& [k, v] : p.ckpt.config) d[py::str(k)] = v;
                               return d;
                             })
      .def(
          "eval_report",
          [](PyModel& p, const std::vector<Document>& docs, const Vocabulary& vocab, int samples,
             std::uint64_t seed, std::int64_t top_n, bool rnn_only) {
            const auto batches = p.batches(docs, vocab);
            return report_dict(eval_report(p.model, batches, vocab, samples, seed, top_n, rnn_only));
          },
          py::arg("docs"), py::arg("vocab"), py::arg("samples") = 1, py::arg("seed") = 1,
          py::arg("top_n") = 10, py::arg("rnn_only") = false)
      .def(
          "perplexity",
          [](PyModel& p, const std::vector<Document>& docs, const Vocabulary& vocab, int samples,
             std::uint64_t seed, bool rnn_only) {
            return perplexity(p.model, p.batches(docs, vocab), samples, seed, rnn_only);
          },
          py::arg("docs"), py::arg("vocab"), py::arg("samples") = 1, py::arg("seed") = 1,
          py::arg("rnn_only") = false)
      .def(
          "assignments",
          [](PyModel& p, const std::vector<Document>& docs, const Vocabulary& vocab) {
            return topic_assignments(p.model, p.batches(docs, vocab));
          },
          py::arg("docs"), py::arg("vocab"))
      .def(
          "top_words",
          [](const PyModel& p, const Vocabulary& vocab, std::int64_t n) {
            return top_words(p.model, vocab, n);
          },
          py::arg("vocab"), py::arg("n") = 10)
      .def(
          "generate",
          [](PyModel& p, const Vocabulary& vocab, std::int64_t length, std::int64_t window,
             std::int64_t block, double temperature, std::uint64_t seed, bool rnn_only) {
            p.check_vocab(vocab);
            GenerationConfig gc;
            gc.length = length;
            gc.window = window;
            gc.block = block;
            gc.temperature = temperature;
            gc.seed = seed;
            const auto r = generate_tokens(p.model, vocab, gc, rnn_only);
            return render_sentences(r.tokens, vocab);
          },
          py::arg("vocab"), py::arg("length") = 100, py::arg("window") = 30, py::arg("block") = 10,
          py::arg("temperature") = 1.0, py::arg("seed") = 1, py::arg("rnn_only") = false)
      .def("__repr__", [](const PyModel& p) {
        return "Model(topics=" + std::to_string(p.model.k) + ", vocab=" + std::to_string(p.model.v) +
               ", cell=" + cell_name(p.model.rnn.kind) + ")";
      });

  m.def(
      "train",
      [](const TrainConfig& cfg, const std::vector<Document>& train_docs,
         const std::vector<Document>& val_docs, const Vocabulary& vocab, bool verbose) {
        auto res = train_model<double>(cfg, train_docs, val_docs, vocab,
                                       verbose ? &std::cerr : nullptr);
        py::dict info;
        info["best_epoch"] = res.best_epoch;
        info["best_val_ppl"] = res.best_val;
        info["epochs_run"] = res.metrics.size();
        py::list ms;
        for (const auto& e : res.metrics) ms.append(metrics_dict(e));
        info["metrics"] = ms;
        auto model = model_from_checkpoint<double>(res.best);
        return py::make_tuple(PyModel{std::move(res.best), std::move(model)}, info);
      },
      py::arg("config"), py::arg("train_docs"), py::arg("val_docs"), py::arg("vocab"),
      py::arg("verbose") = false,
      "Fit a model; returns (model, info) where info carries the per-epoch metrics");

  m.def("switchp_sequences", &switchp_sequences, py::arg("z_per_doc"),
        "Mean over documents of the adjacent same-topic fraction");
  m.def("switchp", &switchp, py::arg("assignments"));

  py::class_<LdaModel>(m, "LdaModel")
      .def_readonly("k", &LdaModel::k)
      .def_readonly("v", &LdaModel::v)
      .def_readonly("alpha", &LdaModel::alpha)
      .def_readonly("elbo_trace", &LdaModel::elbo_trace)
      .def_property_readonly("beta", [](const LdaModel& m_) { return tensor_rows(m_.beta); })
      .def("__repr__", [](const LdaModel& m_) {
        return "LdaModel(k=" + std::to_string(m_.k) + ", v=" + std::to_string(m_.v) + ")";
      });

  m.def("lda_fit", &lda_fit, py::arg("docs"), py::arg("k"), py::arg("alpha"), py::arg("iters"),
        py::arg("seed"), py::arg("tol") = 1e-4,
        "Variational-Bayes LDA on the thematic bag-of-words of each document");
  m.def("lda_assignments", &lda_assignments, py::arg("model"), py::arg("docs"),
        py::arg("iters") = 100);
  m.def("lda_mean_theta_entropy", &lda_mean_theta_entropy, py::arg("model"), py::arg("docs"),
        py::arg("iters") = 100);

  m.def("digamma", &digamma, py::arg("x"));
  m.def("kl_dirichlet", &kl_dirichlet, py::arg("gamma"), py::arg("alpha"),
        "KL from Dir(gamma) to the symmetric Dir(alpha)");
  m.def(
      "sample_dirichlet",
      [](const std::vector<double>& alpha, std::uint64_t seed) {
        auto rng = derive_stream(seed, "py-dirichlet");
        return sample_dirichlet(alpha, rng);
      },
      py::arg("alpha"), py::arg("seed"), "Deterministic Dirichlet draw keyed by seed");
}
