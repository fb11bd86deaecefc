#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "vrtm/rng.hpp"
#include "vrtm/tape.hpp"

using namespace vrtm;
using Var = TapeD::Var;

namespace {

TensorD rand_t(Shape s, Prng& rng, double lo = 0.5, double hi = 1.5) {
  TensorD t(s);
  for (auto& x : t.data) x = lo + (hi - lo) * rng.uniform();
  return t;
}

// weights for collapsing a non-scalar output into a nondegenerate scalar loss
TensorD loss_weights(const Shape& s, Prng& rng) { return rand_t(s, rng, -1.0, 1.0); }

using Build = std::function<Var(TapeD&, const std::vector<Var>&)>;

double gc(const Build& b, const std::vector<TensorD>& inputs) {
  return grad_check<double>(b, inputs, 1e-6);
}

}  // namespace

TEST_CASE("forward values: basic ops") {
  TapeD t;
  auto x = t.leaf(TensorD({2, 2}, {1, 2, 3, 4}));
  auto y = t.leaf(TensorD({2, 2}, {5, 6, 7, 8}));
  CHECK(t.value(t.add(x, y)).data == std::vector<double>{6, 8, 10, 12});
  CHECK(t.value(t.sub(x, y)).data == std::vector<double>{-4, -4, -4, -4});
  CHECK(t.value(t.mul(x, y)).data == std::vector<double>{5, 12, 21, 32});
  CHECK(t.value(t.matmul(x, y)).data == std::vector<double>{19, 22, 43, 50});
  CHECK(t.value(t.matmul_nt(x, y)).data == std::vector<double>{17, 23, 39, 53});
  CHECK(t.value(t.row_sum(x)).data == std::vector<double>{3, 7});
  CHECK(t.value(t.col_sum(x)).data == std::vector<double>{4, 6});
  CHECK(t.value(t.sum(x))[0] == 10);
  CHECK(t.value(t.slice_row(x, 1)).data == std::vector<double>{3, 4});
  CHECK(t.value(t.pick_cols(x, {1, 0})).data == std::vector<double>{2, 3});
}

TEST_CASE("forward values: nonlinearities") {
  TapeD t;
  auto x = t.leaf(TensorD({1, 3}, {1, 2, 3}));
  auto z = t.leaf(TensorD::scalar(0.0));
  CHECK(t.value(t.softplus_(z))[0] == doctest::Approx(0.69314718055994530942).epsilon(1e-14));
  CHECK(t.value(t.sigmoid(z))[0] == 0.5);
  CHECK(t.value(t.lse_rows(x))[0] == doctest::Approx(3.4076059644443803045).epsilon(1e-14));
  auto sm = t.value(t.softmax_rows(x));
  CHECK(sm[0] + sm[1] + sm[2] == doctest::Approx(1.0).epsilon(1e-14));
  auto lsm = t.value(t.log_softmax_rows(x));
  for (int i = 0; i < 3; ++i)
    CHECK(std::exp(lsm[i]) == doctest::Approx(sm[i]).epsilon(1e-13));
  auto xx = t.leaf(TensorD({3}, {0.0, 1.0, 2.0}));
  auto xl = t.value(t.xlogx(xx));
  CHECK(xl[0] == 0.0);
  CHECK(xl[1] == 0.0);
  CHECK(xl[2] == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("backward basics") {
  TapeD t;
  auto x = t.leaf(TensorD::scalar(0.0));
  auto y = t.sigmoid(x);
  t.backward(y);
  CHECK(t.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-14));

  TapeD t2;
  auto a = t2.leaf(TensorD::scalar(3.0));
  auto s = t2.add(a, a);  // fan-out accumulates
  t2.backward(s);
  CHECK(t2.grad(a)[0] == 2.0);

  TapeD t3;
  auto m = t3.leaf(TensorD({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS(t3.backward(m));  // non-scalar needs a seed
  t3.backward(m, TensorD({2, 2}, {1, 0, 0, 1}));
  CHECK(t3.grad(m).data == std::vector<double>{1, 0, 0, 1});
}

TEST_CASE("softplus scalar grad check is tight") {
  Build b = [](TapeD& t, const std::vector<Var>& v) { return t.sum(t.softplus_(v[0])); };
  CHECK(gc(b, {TensorD::scalar(0.3)}) < 1e-7);
}

TEST_CASE("grad check: every op on randomized shapes") {
  Prng rng(derive_stream(20240711, "tape-gc", 0, 0));
  const TensorD w23 = loss_weights({2, 3}, rng);
  const TensorD w32 = loss_weights({3, 2}, rng);
  const TensorD w22 = loss_weights({2, 2}, rng);
  const TensorD w3 = loss_weights({3}, rng);
  const TensorD w2 = loss_weights({2}, rng);

  auto collapse = [](TapeD& t, Var v, const TensorD& w) { return t.sum(t.cmul(v, w)); };

  struct Case {
    const char* name;
    Build build;
    std::vector<TensorD> inputs;
    double tol = 1e-4;
  };
  std::vector<Case> cases;

  cases.push_back({"add", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.add(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2, 3}, rng)}});
  cases.push_back({"sub", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.sub(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2, 3}, rng)}});
  cases.push_back({"neg", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.neg(v[0]), w23);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"mul", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.mul(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2, 3}, rng)}});
  cases.push_back({"div", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.div(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2, 3}, rng)}});
  cases.push_back({"smul", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.smul(v[0], -2.5), w23);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"cmul", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.cmul(v[0], w23), w23);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"add_rowvec", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.add_rowvec(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({3}, rng)}});
  cases.push_back({"sub_per_row", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.sub_per_row(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2}, rng)}});
  cases.push_back({"div_per_row", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.div_per_row(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2}, rng)}});
  cases.push_back({"mul_per_row", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.mul_per_row(v[0], v[1]), w23);
  }, {rand_t({2, 3}, rng), rand_t({2}, rng)}});
  cases.push_back({"matmul", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.matmul(v[0], v[1]), w22);
  }, {rand_t({2, 3}, rng), rand_t({3, 2}, rng)}});
  cases.push_back({"matmul_nt", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.matmul_nt(v[0], v[1]), w22);
  }, {rand_t({2, 3}, rng), rand_t({2, 3}, rng)}});
  cases.push_back({"tensordot2", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.tensordot(v[0], v[1], 2), w22);
  }, {rand_t({2, 2, 3}, rng), rand_t({2, 3, 2}, rng)}});
  cases.push_back({"gather_rows", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.gather_rows(v[0], {2, 0, 2}), w32);
  }, {rand_t({3, 2}, rng)}});
  cases.push_back({"pick_cols", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.pick_cols(v[0], {2, 0}), w2);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"slice_row", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.slice_row(v[0], 1), w3);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"stack_cols", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.stack_cols({v[0], v[1]}), w22);
  }, {rand_t({2}, rng), rand_t({2}, rng)}});
  cases.push_back({"row_sum", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.row_sum(v[0]), w2);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"col_sum", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.col_sum(v[0]), w3);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"sum", [&](TapeD& t, const std::vector<Var>& v) {
    return t.sum(v[0]);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"reshape", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.reshape(v[0], {3, 2}), w32);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"sigmoid", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.sigmoid(v[0]), w23);
  }, {rand_t({2, 3}, rng, -2.0, 2.0)}});
  cases.push_back({"tanh", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.tanh_(v[0]), w23);
  }, {rand_t({2, 3}, rng, -2.0, 2.0)}});
  cases.push_back({"softplus", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.softplus_(v[0]), w23);
  }, {rand_t({2, 3}, rng, -2.0, 2.0)}});
  cases.push_back({"exp", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.exp_(v[0]), w23);
  }, {rand_t({2, 3}, rng, -1.0, 1.0)}});
  cases.push_back({"log", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.log_(v[0]), w23);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"xlogx", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.xlogx(v[0]), w23);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"lgamma", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.lgamma_(v[0]), w23);
  }, {rand_t({2, 3}, rng, 0.5, 2.5)}});
  cases.push_back({"digamma", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.digamma_(v[0]), w23);
  }, {rand_t({2, 3}, rng, 0.5, 2.5)}});
  cases.push_back({"clamp_min", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.clamp_min(v[0], 0.2), w23);
  }, {rand_t({2, 3}, rng)}});
  cases.push_back({"lse_rows", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.lse_rows(v[0]), w2);
  }, {rand_t({2, 3}, rng, -1.0, 2.0)}});
  cases.push_back({"log_softmax_rows", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.log_softmax_rows(v[0]), w23);
  }, {rand_t({2, 3}, rng, -1.0, 2.0)}});
  cases.push_back({"softmax_rows", [&](TapeD& t, const std::vector<Var>& v) {
    return collapse(t, t.softmax_rows(v[0]), w23);
  }, {rand_t({2, 3}, rng, -1.0, 2.0)}});

  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(gc(c.build, c.inputs) < c.tol);
  }
}

TEST_CASE("grad check: composite expression (two-layer net)") {
  Prng rng(derive_stream(20240711, "tape-gc", 1, 0));
  TensorD x = rand_t({4, 3}, rng, -1.0, 1.0);
  TensorD w1 = rand_t({3, 5}, rng, -0.7, 0.7);
  TensorD b1 = rand_t({5}, rng, -0.1, 0.1);
  TensorD w2 = rand_t({5, 2}, rng, -0.7, 0.7);
  Build b = [&](TapeD& t, const std::vector<Var>& v) {
    auto h = t.tanh_(t.add_rowvec(t.matmul(v[0], v[1]), v[2]));
    auto logits = t.matmul(h, v[3]);
    auto lp = t.log_softmax_rows(logits);
    return t.smul(t.sum(t.pick_cols(lp, {0, 1, 0, 1})), -1.0);
  };
  CHECK(gc(b, {x, w1, b1, w2}) < 1e-4);
}

TEST_CASE("xlogx gradient is zero at zero") {
  TapeD t;
  auto x = t.leaf(TensorD({2}, {0.0, 0.5}));
  t.backward(t.sum(t.xlogx(x)));
  auto g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(std::log(0.5) + 1.0).epsilon(1e-12));
}

TEST_CASE("batch_norm: train-mode statistics, grad check, frozen eval") {
  Prng rng(derive_stream(20240711, "tape-gc", 3, 0));
  TensorD x = rand_t({6, 3}, rng, -2.0, 2.0);
  TensorD scale = rand_t({3}, rng, 0.5, 1.5);
  TensorD shift = rand_t({3}, rng, -0.5, 0.5);

  // training mode output has zero mean / unit variance per feature pre affine
  {
    TapeD t;
    TapeD::BnStats st{TensorD({3}), TensorD::full({3}, 1.0), 0.9, 1e-5};
    auto out = t.batch_norm(t.leaf(x, false), t.leaf(TensorD::full({3}, 1.0), false),
                            t.leaf(TensorD({3}), false), &st, true, true);
    const auto& o = t.value(out);
    for (int j = 0; j < 3; ++j) {
      double m = 0;
      for (int i = 0; i < 6; ++i) m += o.at(i, j);
      CHECK(std::fabs(m / 6) < 1e-12);
    }
    // running stats folded with momentum 0.9
    double m0 = 0;
    for (int i = 0; i < 6; ++i) m0 += x.at(i, 0);
    m0 /= 6;
    CHECK(st.running_mean[0] == doctest::Approx(0.1 * m0).epsilon(1e-12));
  }

  Build btrain = [](TapeD& t, const std::vector<Var>& v) {
    TapeD::BnStats st{TensorD({3}), TensorD::full({3}, 1.0), 0.9, 1e-5};
    auto out = t.batch_norm(v[0], v[1], v[2], &st, true, false);
    return t.sum(t.mul(out, out));
  };
  CHECK(gc(btrain, {x, scale, shift}) < 1e-4);

  Build beval = [](TapeD& t, const std::vector<Var>& v) {
    TapeD::BnStats st{TensorD({3}, {0.1, -0.2, 0.3}), TensorD({3}, {1.1, 0.9, 1.3}), 0.9, 1e-5};
    auto out = t.batch_norm(v[0], v[1], v[2], &st, false, false);
    return t.sum(t.mul(out, out));
  };
  CHECK(gc(beval, {x, scale, shift}) < 1e-4);
}

TEST_CASE("threaded gemm is bitwise identical to sequential") {
  Prng rng(derive_stream(20240711, "tape-gc", 2, 0));
  TensorD a = rand_t({96, 40}, rng, -1.0, 1.0);
  TensorD b = rand_t({40, 32}, rng, -1.0, 1.0);
  auto run = [&]() {
    TapeD t;
    return t.value(t.matmul(t.leaf(a, false), t.leaf(b, false)));
  };
  tensor_threads() = 1;
  TensorD r1 = run();
  tensor_threads() = 4;
  TensorD r4 = run();
  tensor_threads() = 1;
  CHECK(r1.data == r4.data);
}
