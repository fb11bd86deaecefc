#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vrtm/rng.hpp"
#include "vrtm/tape.hpp"
#include "vrtm/tensor.hpp"

namespace vrtm {

enum class CellKind { Rnn, Gru, Lstm };

inline CellKind parse_cell(const std::string& s) {
  if (s == "rnn") return CellKind::Rnn;
  if (s == "gru") return CellKind::Gru;
  if (s == "lstm") return CellKind::Lstm;
  throw std::invalid_argument("unknown cell kind: " + s);
}

inline const char* cell_name(CellKind k) {
  switch (k) {
    case CellKind::Rnn: return "rnn";
    case CellKind::Gru: return "gru";
    default: return "lstm";
  }
}

inline int gate_count(CellKind k) {
  switch (k) {
    case CellKind::Rnn: return 1;
    case CellKind::Gru: return 3;  // r, z, n
    default: return 4;             // i, f, g, o
  }
}

// Per-gate weights keep the graph free of column-slicing: gate g uses
// x*w_x[g] + h*w_h[g] + b[g].
template <typename T>
struct RnnParams {
  CellKind kind = CellKind::Lstm;
  std::int64_t e = 0, h = 0, v = 0;
  std::vector<Tensor<T>> w_x, w_h, b;  // each (E,H), (H,H), (H)
  Tensor<T> proj_w;                    // (H,V)
  Tensor<T> proj_b;                    // (V)
};

template <typename T>
RnnParams<T> init_rnn_params(CellKind kind, std::int64_t e, std::int64_t h, std::int64_t v,
                             Prng& rng) {
  auto uni = [&rng](Shape s, double bound) {
    Tensor<T> t(s);
    for (auto& x : t.data) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    return t;
  };
  RnnParams<T> p;
  p.kind = kind;
  p.e = e;
  p.h = h;
  p.v = v;
  const double sx = 1.0 / std::sqrt(static_cast<double>(e));
  const double sh = 1.0 / std::sqrt(static_cast<double>(h));
  for (int g = 0; g < gate_count(kind); ++g) {
    p.w_x.push_back(uni({e, h}, sx));
    p.w_h.push_back(uni({h, h}, sh));
    Tensor<T> bias({h});
    if (kind == CellKind::Lstm && g == 1) bias = Tensor<T>::full({h}, T(1));  // forget gate
    p.b.push_back(std::move(bias));
  }
  p.proj_w = uni({h, v}, sh);
  p.proj_b = Tensor<T>({v});
  return p;
}

// Tape handles for one training step.
template <typename T>
struct RnnVars {
  CellKind kind;
  std::int64_t h = 0;
  std::vector<typename Tape<T>::Var> w_x, w_h, b;
  typename Tape<T>::Var proj_w, proj_b;
};

template <typename T>
RnnVars<T> bind_rnn(Tape<T>& t, const RnnParams<T>& p, bool requires_grad) {
  RnnVars<T> v;
  v.kind = p.kind;
  v.h = p.h;
  for (int g = 0; g < gate_count(p.kind); ++g) {
    v.w_x.push_back(t.leaf(p.w_x[g], requires_grad));
    v.w_h.push_back(t.leaf(p.w_h[g], requires_grad));
    v.b.push_back(t.leaf(p.b[g], requires_grad));
  }
  v.proj_w = t.leaf(p.proj_w, requires_grad);
  v.proj_b = t.leaf(p.proj_b, requires_grad);
  return v;
}

template <typename T>
struct RnnState {
  typename Tape<T>::Var h;  // (B,H)
  typename Tape<T>::Var c;  // (B,H), LSTM only
};

template <typename T>
RnnState<T> zero_state(Tape<T>& t, const RnnVars<T>& v, std::int64_t batch) {
  RnnState<T> s;
  s.h = t.constant(Tensor<T>({batch, v.h}));
  if (v.kind == CellKind::Lstm) s.c = t.constant(Tensor<T>({batch, v.h}));
  return s;
}

template <typename T>
RnnState<T> cell_step(Tape<T>& t, const RnnVars<T>& v, typename Tape<T>::Var x,
                      const RnnState<T>& s) {
  auto affine = [&](int g, typename Tape<T>::Var hin) {
    return t.add_rowvec(t.add(t.matmul(x, v.w_x[g]), t.matmul(hin, v.w_h[g])), v.b[g]);
  };
  RnnState<T> out;
  switch (v.kind) {
    case CellKind::Rnn: {
      out.h = t.tanh_(affine(0, s.h));
      break;
    }
    case CellKind::Gru: {
      auto r = t.sigmoid(affine(0, s.h));
      auto z = t.sigmoid(affine(1, s.h));
      auto n = t.tanh_(t.add_rowvec(
          t.add(t.matmul(x, v.w_x[2]), t.mul(r, t.matmul(s.h, v.w_h[2]))), v.b[2]));
      // h' = (1-z) n + z h
      out.h = t.add(t.sub(n, t.mul(z, n)), t.mul(z, s.h));
      break;
    }
    case CellKind::Lstm: {
      auto i = t.sigmoid(affine(0, s.h));
      auto f = t.sigmoid(affine(1, s.h));
      auto g = t.tanh_(affine(2, s.h));
      auto o = t.sigmoid(affine(3, s.h));
      out.c = t.add(t.mul(f, s.c), t.mul(i, g));
      out.h = t.mul(o, t.tanh_(out.c));
      break;
    }
  }
  return out;
}

// x_rows is the (B*T, E) matrix of input embeddings, already shifted so that
// row b*T+t is the embedding consumed at step t. Returns the T hidden states,
// each (B,H); state t depends only on inputs <= t.
template <typename T>
std::vector<typename Tape<T>::Var> sequence_states(Tape<T>& t, const RnnVars<T>& v,
                                                   typename Tape<T>::Var x_rows,
                                                   std::int64_t batch, std::int64_t steps) {
  std::vector<typename Tape<T>::Var> states;
  states.reserve(static_cast<std::size_t>(steps));
  RnnState<T> s = zero_state(t, v, batch);
  for (std::int64_t step = 0; step < steps; ++step) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * steps + step;
    auto x = t.gather_rows(x_rows, rows);
    s = cell_step(t, v, x, s);
    states.push_back(s.h);
  }
  return states;
}

template <typename T>
typename Tape<T>::Var project_logits(Tape<T>& t, const RnnVars<T>& v,
                                     typename Tape<T>::Var h) {
  return t.add_rowvec(t.matmul(h, v.proj_w), v.proj_b);
}

// Inverted dropout mask: entries are 0 with probability rate, else 1/(1-rate).
template <typename T>
Tensor<T> dropout_mask(const Shape& s, double rate, Prng& rng) {
  Tensor<T> m(s);
  if (rate <= 0.0) {
    for (auto& x : m.data) x = T(1);
    return m;
  }
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& x : m.data) x = rng.uniform() < rate ? T(0) : keep;
  return m;
}

}  // namespace vrtm
