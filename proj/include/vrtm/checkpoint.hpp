#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vrtm/model.hpp"
#include "vrtm/tensor.hpp"

namespace vrtm {

// Versioned binary container: magic "VRTM1", explicit little-endian layout,
// a key-value config block, then named f64 arrays. Order is preserved so
// identical runs produce identical files.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t vocab_hash = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, TensorD>> arrays;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return &v;
    return nullptr;
  }
  const TensorD* find_array(const std::string& name) const {
    for (const auto& [k, v] : arrays)
      if (k == name) return &v;
    return nullptr;
  }
  const std::string& need(const std::string& key) const {
    const auto* p = find(key);
    if (!p) throw std::runtime_error("checkpoint config missing key '" + key + "'");
    return *p;
  }
  void set(const std::string& key, const std::string& val) {
    for (auto& [k, v] : config)
      if (k == key) {
        v = val;
        return;
      }
    config.emplace_back(key, val);
  }
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Pack every trainable and stateful tensor. Values are widened to f64, which
// is exact for both precisions.
template <typename T>
void pack_model(Checkpoint& c, VrtmModel<T>& m) {
  auto put = [&c](const std::string& name, const Tensor<T>& t) {
    TensorD d(t.shape);
    for (std::int64_t i = 0; i < t.size(); ++i) d[i] = static_cast<double>(t[i]);
    c.arrays.emplace_back(name, std::move(d));
  };
  for (auto& [name, p] : m.named_params()) put(name, *p);
  for (auto& [name, p] : m.named_state()) put(name, *p);
  c.set("k", std::to_string(m.k));
  c.set("v", std::to_string(m.v));
  c.set("e", std::to_string(m.e));
  c.set("h", std::to_string(m.h));
  c.set("seq_len", std::to_string(m.tlen));
  c.set("cell", cell_name(m.rnn.kind));
  c.set("alpha", format_double(m.alpha));
  c.set("use_bn", m.enc.use_bn ? "1" : "0");
}

template <typename T>
void unpack_model(const Checkpoint& c, VrtmModel<T>& m) {
  auto take = [&c](const std::string& name, Tensor<T>* dst) {
    const TensorD* src = c.find_array(name);
    if (!src) throw std::runtime_error("checkpoint missing array '" + name + "'");
    if (src->shape != dst->shape)
      throw std::runtime_error("checkpoint array '" + name + "' has shape " +
                               shape_str(src->shape) + ", expected " + shape_str(dst->shape));
    for (std::int64_t i = 0; i < src->size(); ++i) (*dst)[i] = static_cast<T>((*src)[i]);
  };
  for (auto& [name, p] : m.named_params()) take(name, p);
  for (auto& [name, p] : m.named_state()) take(name, p);
}

template <typename T>
VrtmModel<T> model_from_checkpoint(const Checkpoint& c) {
  auto m = init_model<T>(std::stoll(c.need("k")), std::stoll(c.need("v")),
                         std::stoll(c.need("e")), std::stoll(c.need("h")),
                         std::stoll(c.need("seq_len")), parse_cell(c.need("cell")),
                         std::stod(c.need("alpha")), 0, c.need("use_bn") == "1");
  unpack_model(c, m);
  return m;
}

// Deterministic evaluation batches using the windowing the checkpoint was
// trained with (sequence length, batch size, pseudo-document grouping).
inline std::vector<Batch> checkpoint_batches(const Checkpoint& c,
                                             const std::vector<Document>& docs,
                                             std::int64_t vocab_size) {
  auto i64 = [&c](const std::string& key, std::int64_t fallback) {
    const auto* v = c.find(key);
    return v ? std::stoll(*v) : fallback;
  };
  return make_batches(docs, vocab_size, std::stoll(c.need("seq_len")), i64("batch_size", 64),
                      i64("group_pseudo", 1), 0, 0, false);
}

}  // namespace vrtm
