#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vrtm/special.hpp"
#include "vrtm/tensor.hpp"

namespace vrtm {

// Worker count for the dense kernels. Partitioning is by disjoint output
// rows with a fixed inner order, so results are bit-identical for any value.
inline int& tensor_threads() {
  static int n = 1;
  return n;
}

namespace detail {

template <typename Fn>
void parallel_rows(std::int64_t m, Fn&& fn) {
  const int want = tensor_threads();
  if (want <= 1 || m < 64) {
    fn(0, m);
    return;
  }
  const int n = static_cast<int>(std::min<std::int64_t>(want, m));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n));
  const std::int64_t chunk = (m + n - 1) / n;
  for (int i = 0; i < n; ++i) {
    const std::int64_t lo = i * chunk;
    const std::int64_t hi = std::min<std::int64_t>(m, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

// C (m x n) = op(A) * op(B), row-major, optionally accumulating into C.
template <typename T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  parallel_rows(m, [=](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      T* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, T(0));
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = ta ? a[p * m + i] : a[i * k + p];
        if (av == T(0)) continue;
        const T* brow = tb ? nullptr : b + p * n;
        if (tb) {
          for (std::int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
        } else {
          for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  });
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

template <typename T>
class Tape;

// Reverse-mode tape over dense tensors. Ops record a backward closure; the
// backward pass walks nodes in strict reverse creation order, so gradient
// accumulation order is deterministic.
template <typename T>
class Tape {
 public:
  using Tens = Tensor<T>;

  struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  Var leaf(Tens v, bool requires_grad = true) {
    return push(std::move(v), requires_grad, nullptr);
  }
  Var constant(Tens v) { return push(std::move(v), false, nullptr); }

  const Tens& value(Var v) const { return nodes_[check(v)].value; }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    require_same("add", a, b);
    Tens out = value(a);
    const Tens& vb = value(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return binary(a, b, std::move(out), [](Tape& t, std::int32_t pa, std::int32_t pb, const Tens& g) {
      t.accum(pa, g);
      t.accum(pb, g);
    });
  }

  Var sub(Var a, Var b) {
    require_same("sub", a, b);
    Tens out = value(a);
    const Tens& vb = value(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return binary(a, b, std::move(out), [](Tape& t, std::int32_t pa, std::int32_t pb, const Tens& g) {
      t.accum(pa, g);
      t.accum_neg(pb, g);
    });
  }

  Var neg(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = -x;
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var, const Tens& g) {
      t.accum_neg(pa, g);
    });
  }

  Var mul(Var a, Var b) {
    require_same("mul", a, b);
    Tens out = value(a);
    const Tens& vb = value(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return binary(a, b, std::move(out), [](Tape& t, std::int32_t pa, std::int32_t pb, const Tens& g) {
      t.accum_scaled(pa, g, t.nodes_[pb].value);
      t.accum_scaled(pb, g, t.nodes_[pa].value);
    });
  }

  Var div(Var a, Var b) {
    require_same("div", a, b);
    Tens out = value(a);
    const Tens& vb = value(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
    return binary(a, b, std::move(out), [](Tape& t, std::int32_t pa, std::int32_t pb, const Tens& g) {
      const Tens& av = t.nodes_[pa].value;
      const Tens& bv = t.nodes_[pb].value;
      Tens ga(bv.shape), gb(bv.shape);
      for (std::int64_t i = 0; i < bv.size(); ++i) {
        ga[i] = g[i] / bv[i];
        gb[i] = -g[i] * av[i] / (bv[i] * bv[i]);
      }
      t.accum(pa, ga);
      t.accum(pb, gb);
    });
  }

  Var smul(Var a, double c) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(x * c);
    return unary(a, std::move(out), [c](Tape& t, std::int32_t pa, Var, const Tens& g) {
      Tens ga = g;
      for (auto& x : ga.data) x = static_cast<T>(x * c);
      t.accum(pa, ga);
    });
  }

  // elementwise product with a non-differentiated tensor (masks, dropout)
  Var cmul(Var a, Tens mask) {
    require_shape("cmul", value(a).shape, mask.shape);
    Tens out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    auto m = std::make_shared<Tens>(std::move(mask));
    return unary(a, std::move(out), [m](Tape& t, std::int32_t pa, Var, const Tens& g) {
      t.accum_scaled(pa, g, *m);
    });
  }

  Var sigmoid(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(detail::stable_sigmoid(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& o = t.value(self);
      Tens ga(o.shape);
      for (std::int64_t i = 0; i < o.size(); ++i) ga[i] = g[i] * o[i] * (T(1) - o[i]);
      t.accum(pa, ga);
    });
  }

  Var tanh_(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(std::tanh(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& o = t.value(self);
      Tens ga(o.shape);
      for (std::int64_t i = 0; i < o.size(); ++i) ga[i] = g[i] * (T(1) - o[i] * o[i]);
      t.accum(pa, ga);
    });
  }

  Var softplus_(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(detail::stable_softplus(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[t.nodes_[self.id].parents[0]].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.size(); ++i)
        ga[i] = g[i] * static_cast<T>(detail::stable_sigmoid(static_cast<double>(in[i])));
      t.accum(pa, ga);
    });
  }

  Var exp_(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(std::exp(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      t.accum_scaled(pa, g, t.value(self));
    });
  }

  Var log_(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(std::log(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[t.nodes_[self.id].parents[0]].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.size(); ++i) ga[i] = g[i] / in[i];
      t.accum(pa, ga);
    });
  }

  // x log x with 0 log 0 := 0
  Var xlogx(Var a) {
    Tens out = value(a);
    for (auto& x : out.data)
      x = x == T(0) ? T(0) : static_cast<T>(x * std::log(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[t.nodes_[self.id].parents[0]].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.size(); ++i)
        ga[i] = in[i] == T(0) ? T(0)
                              : g[i] * static_cast<T>(std::log(static_cast<double>(in[i])) + 1.0);
      t.accum(pa, ga);
    });
  }

  Var lgamma_(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(std::lgamma(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[t.nodes_[self.id].parents[0]].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.size(); ++i)
        ga[i] = g[i] * static_cast<T>(digamma(static_cast<double>(in[i])));
      t.accum(pa, ga);
    });
  }

  Var digamma_(Var a) {
    Tens out = value(a);
    for (auto& x : out.data) x = static_cast<T>(digamma(static_cast<double>(x)));
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[t.nodes_[self.id].parents[0]].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.size(); ++i)
        ga[i] = g[i] * static_cast<T>(trigamma(static_cast<double>(in[i])));
      t.accum(pa, ga);
    });
  }

  Var clamp_min(Var a, double lo) {
    Tens out = value(a);
    for (auto& x : out.data)
      if (static_cast<double>(x) < lo) x = static_cast<T>(lo);
    return unary(a, std::move(out), [lo](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[t.nodes_[self.id].parents[0]].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.size(); ++i)
        ga[i] = static_cast<double>(in[i]) > lo ? g[i] : T(0);
      t.accum(pa, ga);
    });
  }

  // ---- broadcasting ----

  // (R,C) + (C,) against each row
  Var add_rowvec(Var a, Var v) {
    const Tens& va = value(a);
    const Tens& vv = value(v);
    if (va.ndim() != 2 || vv.size() != va.cols())
      throw std::invalid_argument("add_rowvec: shapes " + shape_str(va.shape) + " vs " +
                                  shape_str(vv.shape));
    Tens out = va;
    const std::int64_t r = va.rows(), c = va.cols();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.at(i, j) += vv[j];
    return binary(a, v, std::move(out), [](Tape& t, std::int32_t pa, std::int32_t pv, const Tens& g) {
      t.accum(pa, g);
      Tens gv({g.cols()});
      for (std::int64_t i = 0; i < g.rows(); ++i)
        for (std::int64_t j = 0; j < g.cols(); ++j) gv[j] += g.at(i, j);
      t.accum(pv, gv);
    });
  }

  // (R,C) op (R,): per-row scalar
  Var sub_per_row(Var a, Var v) { return per_row(a, v, '-'); }
  Var div_per_row(Var a, Var v) { return per_row(a, v, '/'); }
  Var mul_per_row(Var a, Var v) { return per_row(a, v, '*'); }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) { return tensordot(a, b, 1); }

  // a (m,n) * b (p,n)^T -> (m,p)
  Var matmul_nt(Var a, Var b) {
    const Tens& va = value(a);
    const Tens& vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.cols())
      throw std::invalid_argument("matmul_nt: shapes " + shape_str(va.shape) + " vs " +
                                  shape_str(vb.shape));
    const std::int64_t m = va.rows(), n = vb.rows(), k = va.cols();
    Tens out({m, n});
    detail::gemm<T>(false, true, m, n, k, va.data.data(), vb.data.data(), out.data.data(), false);
    return binary(a, b, std::move(out), [m, n, k](Tape& t, std::int32_t pa, std::int32_t pb, const Tens& g) {
      Tens ga({m, k});
      detail::gemm<T>(false, false, m, k, n, g.data.data(), t.nodes_[pb].value.data.data(),
                      ga.data.data(), false);
      t.accum(pa, ga);
      Tens gb({n, k});
      detail::gemm<T>(true, false, n, k, m, g.data.data(), t.nodes_[pa].value.data.data(),
                      gb.data.data(), false);
      t.accum(pb, gb);
    });
  }

  // contract the trailing `nc` axes of a with the leading `nc` axes of b
  Var tensordot(Var a, Var b, int nc) {
    const Tens& va = value(a);
    const Tens& vb = value(b);
    if (nc < 1 || va.ndim() < nc || vb.ndim() < nc)
      throw std::invalid_argument("tensordot: rank too small for " + std::to_string(nc) +
                                  " contracted axes");
    Shape ash(va.shape.end() - nc, va.shape.end());
    Shape bsh(vb.shape.begin(), vb.shape.begin() + nc);
    if (ash != bsh)
      throw std::invalid_argument("tensordot: contracted axes " + shape_str(ash) + " vs " +
                                  shape_str(bsh));
    Shape outer(va.shape.begin(), va.shape.end() - nc);
    Shape inner(vb.shape.begin() + nc, vb.shape.end());
    const std::int64_t m = numel(outer), k = numel(ash), n = numel(inner);
    Shape oshape = outer;
    oshape.insert(oshape.end(), inner.begin(), inner.end());
    if (oshape.empty()) oshape = {1};
    Tens out(oshape);
    detail::gemm<T>(false, false, m, n, k, va.data.data(), vb.data.data(), out.data.data(), false);
    return binary(a, b, std::move(out), [m, n, k](Tape& t, std::int32_t pa, std::int32_t pb, const Tens& g) {
      const Tens& av = t.nodes_[pa].value;
      const Tens& bv = t.nodes_[pb].value;
      Tens ga(av.shape);
      detail::gemm<T>(false, true, m, k, n, g.data.data(), bv.data.data(), ga.data.data(), false);
      t.accum(pa, ga);
      Tens gb(bv.shape);
      detail::gemm<T>(true, false, k, n, m, av.data.data(), g.data.data(), gb.data.data(), false);
      t.accum(pb, gb);
    });
  }

  // ---- gather / select / assemble ----

  Var gather_rows(Var table, std::vector<std::int64_t> ids) {
    const Tens& tv = value(table);
    if (tv.ndim() != 2) throw std::invalid_argument("gather_rows: table must be 2-d");
    const std::int64_t c = tv.cols();
    Tens out({static_cast<std::int64_t>(ids.size()), c});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || ids[r] >= tv.rows())
        throw std::invalid_argument("gather_rows: index out of range");
      std::copy_n(&tv.at(ids[r], 0), c, &out.at(static_cast<std::int64_t>(r), 0));
    }
    auto sid = std::make_shared<std::vector<std::int64_t>>(std::move(ids));
    return unary(table, std::move(out), [sid, c](Tape& t, std::int32_t pa, Var, const Tens& g) {
      Tens gt(t.nodes_[pa].value.shape);
      for (std::size_t r = 0; r < sid->size(); ++r)
        for (std::int64_t j = 0; j < c; ++j)
          gt.at((*sid)[r], j) += g.at(static_cast<std::int64_t>(r), j);
      t.accum(pa, gt);
    });
  }

  Var pick_cols(Var a, std::vector<std::int64_t> idx) {
    const Tens& va = value(a);
    if (va.ndim() != 2 || static_cast<std::int64_t>(idx.size()) != va.rows())
      throw std::invalid_argument("pick_cols: need one index per row of " + shape_str(va.shape));
    Tens out({va.rows()});
    for (std::int64_t r = 0; r < va.rows(); ++r) {
      if (idx[static_cast<std::size_t>(r)] < 0 || idx[static_cast<std::size_t>(r)] >= va.cols())
        throw std::invalid_argument("pick_cols: index out of range");
      out[r] = va.at(r, idx[static_cast<std::size_t>(r)]);
    }
    auto sid = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
    return unary(a, std::move(out), [sid](Tape& t, std::int32_t pa, Var, const Tens& g) {
      Tens ga(t.nodes_[pa].value.shape);
      for (std::int64_t r = 0; r < g.size(); ++r) ga.at(r, (*sid)[static_cast<std::size_t>(r)]) += g[r];
      t.accum(pa, ga);
    });
  }

  Var slice_row(Var a, std::int64_t row) {
    const Tens& va = value(a);
    if (va.ndim() != 2 || row < 0 || row >= va.rows())
      throw std::invalid_argument("slice_row: bad row for " + shape_str(va.shape));
    Tens out({va.cols()});
    std::copy_n(&va.at(row, 0), va.cols(), out.data.data());
    return unary(a, std::move(out), [row](Tape& t, std::int32_t pa, Var, const Tens& g) {
      Tens ga(t.nodes_[pa].value.shape);
      std::copy_n(g.data.data(), g.size(), &ga.at(row, 0));
      t.accum(pa, ga);
    });
  }

  // columns (R,) ... stacked into (R,K)
  Var stack_cols(const std::vector<Var>& cols) {
    if (cols.empty()) throw std::invalid_argument("stack_cols: empty");
    const std::int64_t r = value(cols[0]).size();
    const std::int64_t k = static_cast<std::int64_t>(cols.size());
    Tens out({r, k});
    std::vector<std::int32_t> ids;
    bool needs = false;
    for (std::int64_t j = 0; j < k; ++j) {
      const Tens& c = value(cols[static_cast<std::size_t>(j)]);
      if (c.size() != r) throw std::invalid_argument("stack_cols: ragged columns");
      for (std::int64_t i = 0; i < r; ++i) out.at(i, j) = c[i];
      ids.push_back(cols[static_cast<std::size_t>(j)].id);
      needs = needs || nodes_[ids.back()].needs_grad;
    }
    auto sid = std::make_shared<std::vector<std::int32_t>>(std::move(ids));
    return push(std::move(out), needs, [sid, r, k](Tape& t, Var, const Tens& g) {
      for (std::int64_t j = 0; j < k; ++j) {
        Tens gc({r});
        for (std::int64_t i = 0; i < r; ++i) gc[i] = g.at(i, j);
        t.accum((*sid)[static_cast<std::size_t>(j)], gc);
      }
    });
  }

  // ---- reductions / shape ----

  Var row_sum(Var a) {
    const Tens& va = value(a);
    if (va.ndim() != 2) throw std::invalid_argument("row_sum: need 2-d, got " + shape_str(va.shape));
    Tens out({va.rows()});
    for (std::int64_t i = 0; i < va.rows(); ++i) {
      T s = 0;
      for (std::int64_t j = 0; j < va.cols(); ++j) s += va.at(i, j);
      out[i] = s;
    }
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var, const Tens& g) {
      const Tens& in = t.nodes_[pa].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.rows(); ++i)
        for (std::int64_t j = 0; j < in.cols(); ++j) ga.at(i, j) = g[i];
      t.accum(pa, ga);
    });
  }

  Var col_sum(Var a) {
    const Tens& va = value(a);
    if (va.ndim() != 2) throw std::invalid_argument("col_sum: need 2-d, got " + shape_str(va.shape));
    Tens out({va.cols()});
    for (std::int64_t i = 0; i < va.rows(); ++i)
      for (std::int64_t j = 0; j < va.cols(); ++j) out[j] += va.at(i, j);
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var, const Tens& g) {
      const Tens& in = t.nodes_[pa].value;
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.rows(); ++i)
        for (std::int64_t j = 0; j < in.cols(); ++j) ga.at(i, j) = g[j];
      t.accum(pa, ga);
    });
  }

  Var sum(Var a) {
    const Tens& va = value(a);
    T s = 0;
    for (T x : va.data) s += x;
    return unary(a, Tens::scalar(s), [](Tape& t, std::int32_t pa, Var, const Tens& g) {
      const Tens& in = t.nodes_[pa].value;
      Tens ga(in.shape);
      std::fill(ga.data.begin(), ga.data.end(), g[0]);
      t.accum(pa, ga);
    });
  }

  Var reshape(Var a, Shape s) {
    const Tens& va = value(a);
    if (numel(s) != va.size())
      throw std::invalid_argument("reshape: " + shape_str(va.shape) + " to " + shape_str(s));
    Tens out(s, va.data);
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var, const Tens& g) {
      const Tens& in = t.nodes_[pa].value;
      Tens ga(in.shape, g.data);
      t.accum(pa, ga);
    });
  }

  // ---- row-normalized nonlinearities ----

  Var lse_rows(Var a) {
    const Tens& va = value(a);
    if (va.ndim() != 2) throw std::invalid_argument("lse_rows: need 2-d, got " + shape_str(va.shape));
    Tens out({va.rows()});
    for (std::int64_t i = 0; i < va.rows(); ++i) out[i] = row_lse(va, i);
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& in = t.nodes_[pa].value;
      const Tens& o = t.value(self);
      Tens ga(in.shape);
      for (std::int64_t i = 0; i < in.rows(); ++i)
        for (std::int64_t j = 0; j < in.cols(); ++j)
          ga.at(i, j) = g[i] * static_cast<T>(std::exp(static_cast<double>(in.at(i, j) - o[i])));
      t.accum(pa, ga);
    });
  }

  Var log_softmax_rows(Var a) {
    const Tens& va = value(a);
    if (va.ndim() != 2)
      throw std::invalid_argument("log_softmax_rows: need 2-d, got " + shape_str(va.shape));
    Tens out = va;
    for (std::int64_t i = 0; i < va.rows(); ++i) {
      const T l = row_lse(va, i);
      for (std::int64_t j = 0; j < va.cols(); ++j) out.at(i, j) -= l;
    }
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& o = t.value(self);
      Tens ga(o.shape);
      for (std::int64_t i = 0; i < o.rows(); ++i) {
        T gs = 0;
        for (std::int64_t j = 0; j < o.cols(); ++j) gs += g.at(i, j);
        for (std::int64_t j = 0; j < o.cols(); ++j)
          ga.at(i, j) = g.at(i, j) - gs * static_cast<T>(std::exp(static_cast<double>(o.at(i, j))));
      }
      t.accum(pa, ga);
    });
  }

  Var softmax_rows(Var a) {
    const Tens& va = value(a);
    if (va.ndim() != 2)
      throw std::invalid_argument("softmax_rows: need 2-d, got " + shape_str(va.shape));
    Tens out = va;
    for (std::int64_t i = 0; i < va.rows(); ++i) {
      const T l = row_lse(va, i);
      for (std::int64_t j = 0; j < va.cols(); ++j)
        out.at(i, j) = static_cast<T>(std::exp(static_cast<double>(va.at(i, j) - l)));
    }
    return unary(a, std::move(out), [](Tape& t, std::int32_t pa, Var self, const Tens& g) {
      const Tens& o = t.value(self);
      Tens ga(o.shape);
      for (std::int64_t i = 0; i < o.rows(); ++i) {
        T dot = 0;
        for (std::int64_t j = 0; j < o.cols(); ++j) dot += g.at(i, j) * o.at(i, j);
        for (std::int64_t j = 0; j < o.cols(); ++j) ga.at(i, j) = o.at(i, j) * (g.at(i, j) - dot);
      }
      t.accum(pa, ga);
    });
  }

  // ---- custom nodes (samplers) ----

  Var custom(Tens value, std::vector<Var> parents,
             std::function<void(Tape&, Var, const Tens&)> back) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_[check(p)].needs_grad;
    if (!needs) return push(std::move(value), false, nullptr);
    return push(std::move(value), true, std::move(back));
  }

  // ---- batch normalization over the row axis ----
  // x (B,F), scale/shift (F,). Training mode uses batch statistics (biased
  // variance) and optionally folds them into the running estimates; eval mode
  // normalizes with the frozen running statistics.
  struct BnStats {
    Tens running_mean, running_var;  // (F,)
    double momentum = 0.9, eps = 1e-5;
  };

  Var batch_norm(Var x, Var scale, Var shift, BnStats* stats, bool training,
                 bool update_stats) {
    const Tens& xv = value(x);
    if (xv.ndim() != 2) throw std::invalid_argument("batch_norm: need 2-d input");
    const std::int64_t bsz = xv.rows(), f = xv.cols();
    if (value(scale).size() != f || value(shift).size() != f ||
        stats->running_mean.size() != f || stats->running_var.size() != f)
      throw std::invalid_argument("batch_norm: feature size mismatch");
    Tens mean({f}), var({f});
    if (training) {
      for (std::int64_t j = 0; j < f; ++j) {
        double m = 0;
        for (std::int64_t i = 0; i < bsz; ++i) m += static_cast<double>(xv.at(i, j));
        m /= static_cast<double>(bsz);
        double v = 0;
        for (std::int64_t i = 0; i < bsz; ++i) {
          const double d = static_cast<double>(xv.at(i, j)) - m;
          v += d * d;
        }
        v /= static_cast<double>(bsz);
        mean[j] = static_cast<T>(m);
        var[j] = static_cast<T>(v);
      }
      if (update_stats) {
        const double mom = stats->momentum;
        for (std::int64_t j = 0; j < f; ++j) {
          stats->running_mean[j] =
              static_cast<T>(mom * static_cast<double>(stats->running_mean[j]) +
                             (1.0 - mom) * static_cast<double>(mean[j]));
          stats->running_var[j] =
              static_cast<T>(mom * static_cast<double>(stats->running_var[j]) +
                             (1.0 - mom) * static_cast<double>(var[j]));
        }
      }
    } else {
      mean = stats->running_mean;
      var = stats->running_var;
    }
    auto invstd = std::make_shared<Tens>(Shape{f});
    for (std::int64_t j = 0; j < f; ++j)
      (*invstd)[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[j]) + stats->eps));
    auto xhat = std::make_shared<Tens>(Shape{bsz, f});
    const Tens& sv = value(scale);
    const Tens& hv = value(shift);
    Tens out({bsz, f});
    for (std::int64_t i = 0; i < bsz; ++i)
      for (std::int64_t j = 0; j < f; ++j) {
        xhat->at(i, j) = (xv.at(i, j) - mean[j]) * (*invstd)[j];
        out.at(i, j) = xhat->at(i, j) * sv[j] + hv[j];
      }
    const std::int32_t px = check(x), ps = check(scale), ph = check(shift);
    const bool needs =
        nodes_[px].needs_grad || nodes_[ps].needs_grad || nodes_[ph].needs_grad;
    if (!needs) return push(std::move(out), false, nullptr);
    return push(std::move(out), true,
                [px, ps, ph, xhat, invstd, bsz, f, training](Tape& t, Var, const Tens& g) {
                  const Tens& sv2 = t.nodes_[ps].value;
                  Tens dscale({f}), dshift({f});
                  for (std::int64_t i = 0; i < bsz; ++i)
                    for (std::int64_t j = 0; j < f; ++j) {
                      dscale[j] += g.at(i, j) * xhat->at(i, j);
                      dshift[j] += g.at(i, j);
                    }
                  t.accum(ps, dscale);
                  t.accum(ph, dshift);
                  Tens dx({bsz, f});
                  if (training) {
                    // d/dx of the batch-statistics normalization
                    Tens sum_dxhat({f}), sum_dxhat_xhat({f});
                    for (std::int64_t i = 0; i < bsz; ++i)
                      for (std::int64_t j = 0; j < f; ++j) {
                        const T dxh = g.at(i, j) * sv2[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xhat->at(i, j);
                      }
                    const T bn = static_cast<T>(bsz);
                    for (std::int64_t i = 0; i < bsz; ++i)
                      for (std::int64_t j = 0; j < f; ++j) {
                        const T dxh = g.at(i, j) * sv2[j];
                        dx.at(i, j) = (*invstd)[j] / bn *
                                      (bn * dxh - sum_dxhat[j] -
                                       xhat->at(i, j) * sum_dxhat_xhat[j]);
                      }
                  } else {
                    for (std::int64_t i = 0; i < bsz; ++i)
                      for (std::int64_t j = 0; j < f; ++j)
                        dx.at(i, j) = g.at(i, j) * sv2[j] * (*invstd)[j];
                  }
                  t.accum(px, dx);
                });
  }

  // ---- backward ----

  void backward(Var v) {
    const Tens& val = value(v);
    if (val.size() != 1)
      throw std::invalid_argument("backward: loss is not scalar; pass an explicit seed");
    backward(v, Tens::scalar(T(1)));
  }

  void backward(Var v, Tens seed) {
    require_shape("backward seed", value(v).shape, seed.shape);
    grads_.assign(nodes_.size(), std::nullopt);
    accum(check(v), seed);
    for (std::int32_t id = v.id; id >= 0; --id) {
      if (!grads_[static_cast<std::size_t>(id)].has_value()) continue;
      if (!nodes_[static_cast<std::size_t>(id)].back) continue;
      nodes_[static_cast<std::size_t>(id)].back(*this, Var{id}, *grads_[static_cast<std::size_t>(id)]);
    }
  }

  Tens grad(Var v) const {
    const std::int32_t id = check(v);
    if (static_cast<std::size_t>(id) < grads_.size() && grads_[static_cast<std::size_t>(id)])
      return *grads_[static_cast<std::size_t>(id)];
    return Tens(nodes_[static_cast<std::size_t>(id)].value.shape);
  }

  void accum(std::int32_t id, const Tens& g) {
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot) slot = Tens(nodes_[static_cast<std::size_t>(id)].value.shape);
    for (std::int64_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
  }

 private:
  struct Node {
    Tens value;
    bool needs_grad = false;
    std::array<std::int32_t, 2> parents{-1, -1};
    std::function<void(Tape&, Var, const Tens&)> back;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Tens>> grads_;

  std::int32_t check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::invalid_argument("tape: invalid var");
    return v.id;
  }

  Var push(Tens v, bool needs, std::function<void(Tape&, Var, const Tens&)> back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  template <typename Back>
  Var unary(Var a, Tens out, Back&& bk) {
    const std::int32_t pa = check(a);
    const bool needs = nodes_[pa].needs_grad;
    Var r = push(std::move(out), needs,
                 needs ? std::function<void(Tape&, Var, const Tens&)>(
                             [pa, bk](Tape& t, Var self, const Tens& g) { bk(t, pa, self, g); })
                       : nullptr);
    nodes_[r.id].parents[0] = pa;
    return r;
  }

  template <typename Back>
  Var binary(Var a, Var b, Tens out, Back&& bk) {
    const std::int32_t pa = check(a), pb = check(b);
    const bool needs = nodes_[pa].needs_grad || nodes_[pb].needs_grad;
    Var r = push(std::move(out), needs,
                 needs ? std::function<void(Tape&, Var, const Tens&)>(
                             [pa, pb, bk](Tape& t, Var, const Tens& g) { bk(t, pa, pb, g); })
                       : nullptr);
    nodes_[r.id].parents = {pa, pb};
    return r;
  }

  void accum_neg(std::int32_t id, const Tens& g) {
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot) slot = Tens(nodes_[static_cast<std::size_t>(id)].value.shape);
    for (std::int64_t i = 0; i < g.size(); ++i) (*slot)[i] -= g[i];
  }

  void accum_scaled(std::int32_t id, const Tens& g, const Tens& scale) {
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot) slot = Tens(nodes_[static_cast<std::size_t>(id)].value.shape);
    for (std::int64_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i] * scale[i];
  }

  static T row_lse(const Tens& a, std::int64_t i) {
    T m = a.at(i, 0);
    for (std::int64_t j = 1; j < a.cols(); ++j) m = std::max(m, a.at(i, j));
    double s = 0;
    for (std::int64_t j = 0; j < a.cols(); ++j)
      s += std::exp(static_cast<double>(a.at(i, j) - m));
    return m + static_cast<T>(std::log(s));
  }

  Var per_row(Var a, Var v, char op) {
    const Tens& va = value(a);
    const Tens& vv = value(v);
    if (va.ndim() != 2 || vv.size() != va.rows())
      throw std::invalid_argument(std::string("per_row ") + op + ": shapes " +
                                  shape_str(va.shape) + " vs " + shape_str(vv.shape));
    Tens out = va;
    for (std::int64_t i = 0; i < va.rows(); ++i)
      for (std::int64_t j = 0; j < va.cols(); ++j) {
        if (op == '-') out.at(i, j) -= vv[i];
        else if (op == '/') out.at(i, j) /= vv[i];
        else out.at(i, j) *= vv[i];
      }
    return binary(a, v, std::move(out), [op](Tape& t, std::int32_t pa, std::int32_t pv, const Tens& g) {
      const Tens& av = t.nodes_[pa].value;
      const Tens& vv2 = t.nodes_[pv].value;
      Tens ga(av.shape);
      Tens gv(vv2.shape);
      for (std::int64_t i = 0; i < av.rows(); ++i) {
        for (std::int64_t j = 0; j < av.cols(); ++j) {
          const T gij = g.at(i, j);
          if (op == '-') {
            ga.at(i, j) = gij;
            gv[i] -= gij;
          } else if (op == '/') {
            ga.at(i, j) = gij / vv2[i];
            gv[i] -= gij * av.at(i, j) / (vv2[i] * vv2[i]);
          } else {
            ga.at(i, j) = gij * vv2[i];
            gv[i] += gij * av.at(i, j);
          }
        }
      }
      t.accum(pa, ga);
      t.accum(pv, gv);
    });
  }

  void require_same(const char* op, Var a, Var b) const {
    require_shape(op, value(a).shape, value(b).shape);
  }

  static void require_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b)
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                  shape_str(b));
  }
};

using TapeD = Tape<double>;
using TapeF = Tape<float>;

// Central finite differences against the recorded backward pass. `build`
// must construct the same expression for any input binding; returns the max
// relative error over all input elements. Meaningful in 64-bit mode.
template <typename T>
double grad_check(
    const std::function<typename Tape<T>::Var(Tape<T>&, const std::vector<typename Tape<T>::Var>&)>& build,
    const std::vector<Tensor<T>>& inputs, double eps) {
  Tape<T> tape;
  std::vector<typename Tape<T>::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  auto loss = build(tape, vars);
  if (tape.value(loss).size() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
  tape.backward(loss);
  std::vector<Tensor<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto v : vars) analytic.push_back(tape.grad(v));

  auto eval = [&](const std::vector<Tensor<T>>& ins) {
    Tape<T> t2;
    std::vector<typename Tape<T>::Var> vs;
    for (const auto& in : ins) vs.push_back(t2.leaf(in, false));
    return static_cast<double>(t2.value(build(t2, vs))[0]);
  };

  double max_rel = 0.0;
  std::vector<Tensor<T>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t j = 0; j < inputs[i].size(); ++j) {
      const T keep = work[i][j];
      work[i][j] = keep + static_cast<T>(eps);
      const double up = eval(work);
      work[i][j] = keep - static_cast<T>(eps);
      const double dn = eval(work);
      work[i][j] = keep;
      const double fd = (up - dn) / (2.0 * eps);
      const double an = static_cast<double>(analytic[i][j]);
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1.0});
      max_rel = std::max(max_rel, std::fabs(fd - an) / denom);
    }
  }
  return max_rel;
}

}  // namespace vrtm
