#include <cmath>
#include <vector>

#include "doctest.h"
#include "vrtm/encoder.hpp"

using namespace vrtm;
using Var = TapeD::Var;

namespace {

// tiny hand-rolled batch: tokens/flags/bow set directly
Batch toy_batch(std::int64_t b, std::int64_t t, std::int64_t v) {
  Batch x;
  x.b = b;
  x.t = t;
  x.v = v;
  x.tokens.assign(b * t, 0);
  x.flags.assign(b * t, 0);
  x.mask.assign(b * t, 0);
  x.bow.assign(b * v, 0);
  x.lengths.assign(b, t);
  return x;
}

}  // namespace

TEST_CASE("masked_embeddings: count scaling and stopword zeroing") {
  TapeD t;
  TensorD emb({3, 2}, {10, 20, 1, 2, 3, 4});
  Batch b = toy_batch(1, 3, 3);
  b.tokens = {1, 2, 1};
  b.flags = {1, 0, 1};  // token 2 is a stopword here
  b.mask = {1, 1, 1};
  b.bow[1] = 2;
  auto rows = t.value(masked_embeddings(t, t.constant(emb), b));
  CHECK(rows.at(0, 0) == 2.0);  // e_1 * count 2
  CHECK(rows.at(0, 1) == 4.0);
  CHECK(rows.at(1, 0) == 0.0);  // stopword -> zero row
  CHECK(rows.at(1, 1) == 0.0);
  CHECK(rows.at(2, 0) == 2.0);
  CHECK(rows.at(2, 1) == 4.0);
}

TEST_CASE("infer_gamma: scalar toy, bn bypassed") {
  EncoderParams<double> p;
  p.tlen = 1;
  p.e = 1;
  p.k = 2;
  p.hphi = 4;
  p.w_gamma = TensorD({1, 1, 2}, {3.0, -1.0});
  p.phi_w1 = TensorD({1, 4});
  p.phi_b1 = TensorD({4});
  p.phi_w2 = TensorD({4, 2});
  p.phi_b2 = TensorD({2});
  p.bn_g_scale = TensorD::full({2}, 1.0);
  p.bn_g_shift = TensorD({2});
  p.bn_p_scale = TensorD::full({2}, 1.0);
  p.bn_p_shift = TensorD({2});
  p.bn_g = {TensorD({2}), TensorD::full({2}, 1.0), 0.9, 1e-5};
  p.bn_p = {TensorD({2}), TensorD::full({2}, 1.0), 0.9, 1e-5};
  p.use_bn = false;

  TapeD t;
  auto v = bind_encoder(t, p, false);
  auto masked = t.constant(TensorD({1, 1}, {2.0}));
  auto g = t.value(infer_gamma(t, v, p, masked, 1, false, false, &p.bn_g));
  CHECK(g[0] == doctest::Approx(std::log1p(std::exp(6.0))).epsilon(1e-12));   // 6.00248
  CHECK(g[1] == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));  // 0.12693
  CHECK(g[0] == doctest::Approx(6.00248).epsilon(1e-5));
  CHECK(g[1] == doctest::Approx(0.12693).epsilon(1e-4));
}

TEST_CASE("all-stopword batch: default gamma ln 2, phi uniform") {
  Prng rng(derive_stream(11, "enc", 0, 0));
  auto p = init_encoder_params<double>(4, 3, 2, rng, true);
  Batch b = toy_batch(2, 4, 5);
  for (auto& m : b.mask) m = 1;  // real tokens, all non-thematic

  TapeD t;
  auto v = bind_encoder(t, p, false);
  auto masked = masked_embeddings(t, t.constant(TensorD::full({5, 3}, 0.7)), b);
  auto g = t.value(infer_gamma(t, v, p, masked, 2, true, false, &p.bn_g));
  for (double x : g.data) CHECK(x == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto phi = t.value(infer_phi(t, v, p, masked, b, true, false, &p.bn_p));
  for (double x : phi.data) CHECK(x == 0.5);
}

TEST_CASE("infer_phi: uniform rows for l=0, simplex rows, determinism") {
  Prng rng(derive_stream(11, "enc", 1, 0));
  auto p = init_encoder_params<double>(3, 2, 4, rng, false);
  Batch b = toy_batch(1, 3, 6);
  b.tokens = {3, 4, 3};
  b.flags = {1, 0, 1};
  b.mask = {1, 1, 1};
  b.bow[3] = 2;
  b.bow[4] = 0;

  TapeD t;
  auto v = bind_encoder(t, p, false);
  TensorD emb({6, 2});
  Prng erng(derive_stream(11, "enc-emb", 0, 0));
  for (auto& x : emb.data) x = erng.uniform() - 0.5;
  auto masked = masked_embeddings(t, t.constant(emb), b);
  auto phi = t.value(infer_phi(t, v, p, masked, b, false, false, &p.bn_p));

  for (int j = 0; j < 4; ++j) CHECK(phi.at(1, j) == 0.25);  // l=0 row exactly uniform
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 4; ++j) {
      s += phi.at(r, j);
      CHECK(phi.at(r, j) > 0);
    }
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
  // identical masked rows (same token, same count) get identical phi
  for (int j = 0; j < 4; ++j) CHECK(phi.at(0, j) == phi.at(2, j));

  // zero network weights -> uniform even for thematic rows
  EncoderParams<double> pz = p;
  pz.phi_w1 = TensorD({2, 8});
  pz.phi_b1 = TensorD({8});
  pz.phi_w2 = TensorD({8, 4});
  pz.phi_b2 = TensorD({4});
  pz.hphi = 8;
  TapeD t2;
  auto v2 = bind_encoder(t2, pz, false);
  auto masked2 = masked_embeddings(t2, t2.constant(emb), b);
  auto phi2 = t2.value(infer_phi(t2, v2, pz, masked2, b, false, false, &pz.bn_p));
  for (int j = 0; j < 4; ++j) CHECK(phi2.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gamma strictly positive for any input") {
  Prng rng(derive_stream(11, "enc", 2, 0));
  auto p = init_encoder_params<double>(2, 2, 3, rng, false);
  Batch b = toy_batch(1, 2, 4);
  b.tokens = {3, 3};
  b.flags = {1, 1};
  b.mask = {1, 1};
  b.bow[3] = 2;
  TapeD t;
  auto v = bind_encoder(t, p, false);
  // enormous negative embeddings drive softplus toward underflow
  auto masked = masked_embeddings(t, t.constant(TensorD::full({4, 2}, -4000.0)), b);
  auto g = t.value(infer_gamma(t, v, p, masked, 1, false, false, &p.bn_g));
  for (double x : g.data) CHECK(x >= 1e-6);
}

TEST_CASE("gradients of gamma and phi w.r.t. embeddings and params") {
  Prng rng(derive_stream(11, "enc", 3, 0));
  const std::int64_t tl = 3, E = 2, K = 2, V = 5, B = 2;
  auto p = init_encoder_params<double>(tl, E, K, rng, true);
  Batch b = toy_batch(B, tl, V);
  b.tokens = {3, 4, 3, 4, 4, 2};
  b.flags = {1, 1, 1, 1, 1, 0};
  b.mask = {1, 1, 1, 1, 1, 1};
  b.bow[0 * V + 3] = 2;
  b.bow[0 * V + 4] = 1;
  b.bow[1 * V + 4] = 2;

  TensorD emb({V, E});
  for (auto& x : emb.data) x = rng.uniform() - 0.5;
  TensorD wg({B, K}), wp({B * tl, K});
  for (auto& x : wg.data) x = rng.uniform() - 0.5;
  for (auto& x : wp.data) x = rng.uniform() - 0.5;

  auto build = [&](TapeD& t, const std::vector<Var>& v) {
    EncoderVars<double> ev;
    ev.w_gamma = v[1];
    ev.phi_w1 = v[2];
    ev.phi_b1 = v[3];
    ev.phi_w2 = v[4];
    ev.phi_b2 = v[5];
    ev.bn_g_scale = v[6];
    ev.bn_g_shift = v[7];
    ev.bn_p_scale = v[8];
    ev.bn_p_shift = v[9];
    typename TapeD::BnStats sg{TensorD({K}), TensorD::full({K}, 1.0), 0.9, 1e-5};
    typename TapeD::BnStats sp{TensorD({K}), TensorD::full({K}, 1.0), 0.9, 1e-5};
    auto masked = masked_embeddings(t, v[0], b);
    auto g = infer_gamma(t, ev, p, masked, B, true, false, &sg);
    auto phi = infer_phi(t, ev, p, masked, b, true, false, &sp);
    return t.add(t.sum(t.cmul(t.log_(g), wg)), t.sum(t.cmul(phi, wp)));
  };
  const std::vector<TensorD> inputs{emb,       p.w_gamma,    p.phi_w1,     p.phi_b1,
                                    p.phi_w2,  p.phi_b2,     p.bn_g_scale, p.bn_g_shift,
                                    p.bn_p_scale, p.bn_p_shift};
  CHECK(grad_check<double>(build, inputs, 1e-6) < 1e-4);
}
