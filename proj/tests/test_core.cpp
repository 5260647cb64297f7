#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "srl/core/adam.hpp"
#include "srl/core/checkpoint.hpp"
#include "srl/core/conv.hpp"
#include "srl/core/gradcheck.hpp"
#include "srl/core/graph.hpp"

using namespace srl;
using core::Adam;
using core::Graph;
using core::Tensor;
using core::Variable;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Pcg32& rng, double lo = -1,
                             double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.at2(1, 2) == 0.f);
}

TEST_CASE("conv2d constant window sum") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::full({1, 1, 3, 3}, 1.0));
  Variable<double> k("k", Tensor<double>::full({1, 1, 2, 2}, 1.0));
  Variable<double> b("b", Tensor<double>::zeros({1}));
  auto out = core::conv2d(g, x, g.param(k), g.param(b), 1);
  CHECK(out->value.shape == std::vector<int>{1, 1, 2, 2});
  for (double v : out->value.data) CHECK(v == doctest::Approx(4.0));
}

TEST_CASE("conv2d identity kernel") {
  Graph<double> g;
  Pcg32 rng(3);
  auto xT = random_tensor({2, 1, 4, 5}, rng);
  auto x = g.constant(xT);
  Variable<double> k("k", Tensor<double>::full({1, 1, 1, 1}, 1.0));
  Variable<double> b("b", Tensor<double>::zeros({1}));
  auto out = core::conv2d(g, x, g.param(k), g.param(b), 1);
  REQUIRE(out->value.shape == xT.shape);
  for (std::size_t i = 0; i < xT.data.size(); ++i)
    CHECK(out->value.data[i] == doctest::Approx(xT.data[i]));
}

TEST_CASE("conv2d strided example from nested-loop oracle") {
  // input 0..15 row-major, 2x2 ones kernel, stride 2 -> [[10,18],[42,50]]
  Graph<double> g;
  Tensor<double> xT({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) xT.data[static_cast<std::size_t>(i)] = i;
  auto x = g.constant(xT);
  Variable<double> k("k", Tensor<double>::full({1, 1, 2, 2}, 1.0));
  Variable<double> b("b", Tensor<double>::zeros({1}));
  auto out = core::conv2d(g, x, g.param(k), g.param(b), 2);
  CHECK(out->value.data[0] == doctest::Approx(10));
  CHECK(out->value.data[1] == doctest::Approx(18));
  CHECK(out->value.data[2] == doctest::Approx(42));
  CHECK(out->value.data[3] == doctest::Approx(50));
}

TEST_CASE("conv2d matches naive oracle on random shapes") {
  Pcg32 rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    int B = 1 + static_cast<int>(rng.bounded(3));
    int C = 1 + static_cast<int>(rng.bounded(3));
    int H = 4 + static_cast<int>(rng.bounded(6));
    int W = 4 + static_cast<int>(rng.bounded(6));
    int O = 1 + static_cast<int>(rng.bounded(4));
    int kh = 1 + static_cast<int>(rng.bounded(static_cast<std::uint32_t>(std::min(H, 4))));
    int kw = 1 + static_cast<int>(rng.bounded(static_cast<std::uint32_t>(std::min(W, 4))));
    int s = 1 + static_cast<int>(rng.bounded(3));

    Graph<double> g;
    auto xT = random_tensor({B, C, H, W}, rng);
    auto kT = random_tensor({O, C, kh, kw}, rng);
    Tensor<double> bT({O});
    for (auto& v : bT.data) v = rng.uniform(-1, 1);

    oracles::Arr4 ox(B, C, H, W), ok(O, C, kh, kw);
    ox.v = xT.data;
    ok.v = kT.data;
    auto expect = oracles::naive_conv2d(ox, ok, bT.data, s);

    Variable<double> k("k", kT), b("b", bT);
    auto out = core::conv2d(g, g.constant(xT), g.param(k), g.param(b), s);
    // shape algebra: output shape is a pure function of input shapes
    CHECK(out->value.shape ==
          std::vector<int>{B, O, (H - kh) / s + 1, (W - kw) / s + 1});
    for (std::size_t i = 0; i < out->value.data.size(); ++i)
      CHECK(out->value.data[i] == doctest::Approx(expect.v[i]).epsilon(1e-9));
  }
}

TEST_CASE("conv2d rejects mismatched channel axis") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::zeros({1, 3, 4, 4}));
  Variable<double> k("k", Tensor<double>::zeros({2, 4, 2, 2}));
  Variable<double> b("b", Tensor<double>::zeros({2}));
  CHECK_THROWS_WITH_AS(core::conv2d(g, x, g.param(k), g.param(b), 1),
                       doctest::Contains("channel axis"), ShapeError);
}

TEST_CASE("conv2d is linear in its input (zero bias)") {
  Pcg32 rng(5);
  Graph<double> g;
  auto x1 = random_tensor({2, 2, 6, 6}, rng);
  auto x2 = random_tensor({2, 2, 6, 6}, rng);
  double a = 1.7, c = -0.6;
  Tensor<double> mix = x1;
  for (std::size_t i = 0; i < mix.data.size(); ++i)
    mix.data[i] = a * x1.data[i] + c * x2.data[i];
  Variable<double> k("k", random_tensor({3, 2, 3, 3}, rng));
  Variable<double> b("b", Tensor<double>::zeros({3}));
  auto f1 = core::conv2d(g, g.constant(x1), g.param(k), g.param(b), 2);
  auto f2 = core::conv2d(g, g.constant(x2), g.param(k), g.param(b), 2);
  auto fm = core::conv2d(g, g.constant(mix), g.param(k), g.param(b), 2);
  for (std::size_t i = 0; i < fm->value.data.size(); ++i) {
    double want = a * f1->value.data[i] + c * f2->value.data[i];
    CHECK(fm->value.data[i] == doctest::Approx(want).epsilon(1e-5));
  }
}

TEST_CASE("affine examples") {
  SUBCASE("identity weight zero bias") {
    Graph<double> g;
    Tensor<double> w({2, 2});
    w.at2(0, 0) = 1;
    w.at2(1, 1) = 1;
    Variable<double> wv("w", w), bv("b", Tensor<double>::zeros({2}));
    Tensor<double> x({3, 2}, {1, 2, 3, 4, 5, 6});
    auto out = g.affine(g.constant(x), g.param(wv), g.param(bv));
    for (std::size_t i = 0; i < x.data.size(); ++i)
      CHECK(out->value.data[i] == doctest::Approx(x.data[i]));
  }
  SUBCASE("zero input returns bias per row") {
    Graph<double> g;
    Variable<double> wv("w", Tensor<double>::full({2, 3}, 0.7));
    Variable<double> bv("b", Tensor<double>({2}, {4, -2}));
    auto out = g.affine(g.constant(Tensor<double>::zeros({2, 3})), g.param(wv), g.param(bv));
    CHECK(out->value.at2(0, 0) == doctest::Approx(4));
    CHECK(out->value.at2(0, 1) == doctest::Approx(-2));
    CHECK(out->value.at2(1, 0) == doctest::Approx(4));
    CHECK(out->value.at2(1, 1) == doctest::Approx(-2));
  }
  SUBCASE("worked example") {
    Graph<double> g;
    Variable<double> wv("w", Tensor<double>({2, 2}, {3, 4, 5, 6}));
    Variable<double> bv("b", Tensor<double>({2}, {1, -1}));
    auto out = g.affine(g.constant(Tensor<double>({1, 2}, {1, 2})), g.param(wv), g.param(bv));
    CHECK(out->value.at2(0, 0) == doctest::Approx(12));
    CHECK(out->value.at2(0, 1) == doctest::Approx(16));
  }
  SUBCASE("shape mismatch") {
    Graph<double> g;
    Variable<double> wv("w", Tensor<double>::zeros({2, 3}));
    Variable<double> bv("b", Tensor<double>::zeros({2}));
    CHECK_THROWS_AS(g.affine(g.constant(Tensor<double>::zeros({1, 4})), g.param(wv), g.param(bv)),
                    ShapeError);
  }
}

TEST_CASE("bilinear_score examples") {
  SUBCASE("identity W with orthonormal rows") {
    Graph<double> g;
    Tensor<double> u({2, 2}, {1, 0, 0, 1});
    Tensor<double> w({2, 2}, {1, 0, 0, 1});
    Variable<double> wv("w", w);
    auto out = g.bilinear_score(g.constant(u), g.param(wv), g.constant(u));
    CHECK(out->value.at2(0, 0) == doctest::Approx(1));
    CHECK(out->value.at2(0, 1) == doctest::Approx(0));
    CHECK(out->value.at2(1, 0) == doctest::Approx(0));
    CHECK(out->value.at2(1, 1) == doctest::Approx(1));
  }
  SUBCASE("zero row gives zero scores") {
    Graph<double> g;
    Tensor<double> u({2, 2}, {0, 0, 3, -1});
    Variable<double> wv("w", Tensor<double>::full({2, 2}, 0.9));
    auto out = g.bilinear_score(g.constant(u), g.param(wv), g.constant(u));
    CHECK(out->value.at2(0, 0) == doctest::Approx(0));
    CHECK(out->value.at2(0, 1) == doctest::Approx(0));
    CHECK(out->value.at2(1, 0) == doctest::Approx(0));
  }
  SUBCASE("worked example") {
    Graph<double> g;
    Tensor<double> u({1, 2}, {1, 2});
    Tensor<double> w({2, 2}, {1, 0, 0, 1});
    Tensor<double> v({2, 2}, {3, 4, -1, 1});
    Variable<double> wv("w", w);
    auto out = g.bilinear_score(g.constant(u), g.param(wv), g.constant(v));
    CHECK(out->value.at2(0, 0) == doctest::Approx(11));
    CHECK(out->value.at2(0, 1) == doctest::Approx(1));
  }
  SUBCASE("matches scalar oracle on random inputs") {
    Pcg32 rng(23);
    Graph<double> g;
    auto u = random_tensor({3, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto v = random_tensor({2, 5}, rng);
    Variable<double> wv("w", w);
    auto out = g.bilinear_score(g.constant(u), g.param(wv), g.constant(v));
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 2; ++k) {
        std::vector<double> ur(4), vr(5);
        std::vector<std::vector<double>> wm(4, std::vector<double>(5));
        for (int i = 0; i < 4; ++i) ur[static_cast<std::size_t>(i)] = u.at2(b, i);
        for (int j = 0; j < 5; ++j) vr[static_cast<std::size_t>(j)] = v.at2(k, j);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 5; ++j) wm[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = w.at2(i, j);
        CHECK(out->value.at2(b, k) ==
              doctest::Approx(oracles::flat_bilinear(ur, wm, vr)).epsilon(1e-10));
      }
  }
}

TEST_CASE("relu definition") {
  Graph<double> g;
  auto out = g.relu(g.constant(Tensor<double>({3}, {-1, 0, 2})));
  CHECK(out->value.data[0] == 0);
  CHECK(out->value.data[1] == 0);
  CHECK(out->value.data[2] == 2);
}

TEST_CASE("softmax cross entropy examples") {
  SUBCASE("uniform logits give ln K") {
    Graph<double> g;
    auto loss = g.softmax_cross_entropy_rows(g.constant(Tensor<double>::full({2, 4}, 0.3)),
                                             {1, 3});
    CHECK(loss->value.data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }
  SUBCASE("saturated positive") {
    Graph<double> g;
    Tensor<double> l({1, 3});
    l.at2(0, 1) = 100;
    auto loss = g.softmax_cross_entropy_rows(g.constant(l), {1});
    CHECK(loss->value.data[0] < 1e-6);
  }
  SUBCASE("worked example") {
    Graph<double> g;
    auto loss = g.softmax_cross_entropy_rows(g.constant(Tensor<double>({1, 3}, {1, 2, 3})), {2});
    CHECK(loss->value.data[0] == doctest::Approx(0.407606).epsilon(1e-5));
  }
  SUBCASE("row shift invariance") {
    Pcg32 rng(7);
    Graph<double> g;
    auto l = random_tensor({4, 6}, rng, -3, 3);
    Tensor<double> shifted = l;
    for (int r = 0; r < 4; ++r) {
      double c = rng.uniform(-50, 50);
      for (int k = 0; k < 6; ++k) shifted.at2(r, k) += c;
    }
    std::vector<int> t = {0, 5, 2, 3};
    auto a = g.softmax_cross_entropy_rows(g.constant(l), t);
    auto b = g.softmax_cross_entropy_rows(g.constant(shifted), t);
    CHECK(std::abs(a->value.data[0] - b->value.data[0]) <= 1e-6);
  }
  SUBCASE("target out of range") {
    Graph<double> g;
    CHECK_THROWS_AS(g.softmax_cross_entropy_rows(g.constant(Tensor<double>::zeros({1, 3})), {3}),
                    IndexError);
  }
}

TEST_CASE("backward on sum of squares") {
  Graph<double> g;
  Variable<double> x("x", Tensor<double>({2}, {1, 2}));
  auto loss = g.sum(g.square(g.param(x)));
  g.backward(loss);
  CHECK(x.grad.data[0] == doctest::Approx(2));
  CHECK(x.grad.data[1] == doctest::Approx(4));
}

TEST_CASE("backward leaves unused parameters at zero grad") {
  Graph<double> g;
  Variable<double> x("x", Tensor<double>({2}, {1, 2}));
  Variable<double> y("y", Tensor<double>({2}, {5, 6}));
  x.zero_grad();
  y.zero_grad();
  auto loss = g.sum(g.square(g.param(x)));
  g.param(y);  // on tape but not part of the loss
  g.backward(loss);
  CHECK(y.grad.data[0] == 0.0);
  CHECK(y.grad.data[1] == 0.0);
}

TEST_CASE("backward requires scalar loss") {
  Graph<double> g;
  Variable<double> x("x", Tensor<double>({2}, {1, 2}));
  auto y = g.square(g.param(x));
  CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("finite differences validate composite op gradients") {
  Pcg32 rng(31);
  Variable<double> w("w", random_tensor({3, 4}, rng));
  Variable<double> b("b", random_tensor({3}, rng));
  Variable<double> u("u", random_tensor({2, 3}, rng));
  Tensor<double> x = random_tensor({2, 4}, rng);

  auto forward = [&]() {
    Graph<double> g;
    auto h = g.affine(g.constant(x), g.param(w), g.param(b));
    auto s = g.matmul_nt(g.param(u), h);
    return g.mean(g.square(g.tanh_op(s)))->value.data[0];
  };
  auto grads = [&]() {
    for (auto* p : {&w, &b, &u}) p->zero_grad();
    Graph<double> g;
    auto h = g.affine(g.constant(x), g.param(w), g.param(b));
    auto s = g.matmul_nt(g.param(u), h);
    auto loss = g.mean(g.square(g.tanh_op(s)));
    g.backward(loss);
    return loss->value.data[0];
  };
  auto rep = core::finite_diff_check<double>(forward, grads, {&w, &b, &u});
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("finite differences validate conv ops") {
  Pcg32 rng(37);
  Variable<double> k("k", random_tensor({2, 1, 3, 3}, rng));
  Variable<double> b("b", random_tensor({2}, rng));
  Variable<double> kt("kt", random_tensor({2, 1, 3, 3}, rng));
  Variable<double> bt("bt", random_tensor({1}, rng));
  Tensor<double> x = random_tensor({2, 1, 8, 8}, rng, 0.05, 0.95);

  // kink-free composite: keep this check at tight tolerance
  auto build = [&](Graph<double>& g) {
    auto h = core::conv2d(g, g.constant(x), g.param(k), g.param(b), 2);
    auto r = core::conv2d_transpose(g, h, g.param(kt), g.param(bt), 2);
    return g.mean(g.square(r));
  };
  auto forward = [&]() {
    Graph<double> g;
    return build(g)->value.data[0];
  };
  auto grads = [&]() {
    for (auto* p : {&k, &b, &kt, &bt}) p->zero_grad();
    Graph<double> g;
    auto loss = build(g);
    g.backward(loss);
    return loss->value.data[0];
  };
  auto rep = core::finite_diff_check<double>(forward, grads, {&k, &b, &kt, &bt});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("finite_diff_check flags corrupted backward") {
  Pcg32 rng(41);
  Variable<double> x("x", random_tensor({8}, rng, 0.2, 1.0));
  auto forward = [&]() {
    Graph<double> g;
    return g.sum(g.square(g.relu(g.param(x))))->value.data[0];
  };
  auto grads = [&]() {
    x.zero_grad();
    Graph<double> g;
    auto loss = g.sum(g.square(g.relu(g.param(x))));
    g.backward(loss);
    return loss->value.data[0];
  };
  auto clean = core::finite_diff_check<double>(forward, grads, {&x});
  CHECK(clean.max_rel_err < 1e-8);
  core::debug::corrupt_backward_op = "relu";
  auto bad = core::finite_diff_check<double>(forward, grads, {&x});
  core::debug::corrupt_backward_op.clear();
  CHECK(bad.max_rel_err > 1e-4);
}

TEST_CASE("finite_diff_check of constant function reports zero error") {
  Variable<double> x("x", Tensor<double>({3}, {1, 2, 3}));
  auto forward = [&]() { return 5.0; };
  auto grads = [&]() {
    x.zero_grad();
    return 5.0;
  };
  auto rep = core::finite_diff_check<double>(forward, grads, {&x});
  CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
  Variable<float> p("p", Tensor<float>({3}, {1, 2, 3}));
  Adam<float> opt({&p});
  p.zero_grad();
  opt.step();
  CHECK(p.value.data[0] == 1.f);
  CHECK(p.value.data[1] == 2.f);
  CHECK(p.value.data[2] == 3.f);
}

TEST_CASE("adam first step magnitude is the learning rate") {
  Variable<double> p("p", Tensor<double>({2}, {0.5, -0.5}));
  Adam<double>::Config cfg;
  cfg.lr = 3e-4;
  Adam<double> opt({&p}, cfg);
  p.zero_grad();
  p.grad.data[0] = 0.37;
  p.grad.data[1] = -4.2;
  opt.step();
  CHECK(std::abs(p.value.data[0] - (0.5 - 3e-4)) < 1e-7);
  CHECK(std::abs(p.value.data[1] - (-0.5 + 3e-4)) < 1e-7);
}

TEST_CASE("adam matches scalar reference trace over two steps") {
  Variable<double> p("p", Tensor<double>({1}, {1.25}));
  Adam<double>::Config cfg;
  Adam<double> opt({&p}, cfg);
  oracles::ScalarAdam ref{static_cast<double>(cfg.lr), static_cast<double>(cfg.beta1),
                          static_cast<double>(cfg.beta2), static_cast<double>(cfg.eps)};
  double expected = 1.25;
  for (int step = 0; step < 2; ++step) {
    p.zero_grad();
    p.grad.data[0] = 0.8;
    opt.step();
    expected = ref.step(expected, 0.8);
    CHECK(std::abs(p.value.data[0] - expected) < 1e-10);
  }
}

TEST_CASE("adam requires gradients") {
  Variable<float> p("p", Tensor<float>({2}, {1, 2}));
  Adam<float> opt({&p});
  CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("checkpoint round trip") {
  Variable<float> a("layer.weight", Tensor<float>({2, 2}, {1.5f, -2.25f, 0.125f, 9.f}));
  Variable<float> b("layer.bias", Tensor<float>({2}, {0.5f, -0.5f}));
  std::string path = "ckpt_test.bin";
  core::save_checkpoint<float>(path, {&a, &b}, "key = value\n");

  Variable<float> a2("layer.weight", Tensor<float>::zeros({2, 2}));
  Variable<float> b2("layer.bias", Tensor<float>::zeros({2}));
  std::string text = core::load_checkpoint<float>(path, {&a2, &b2});
  CHECK(text == "key = value\n");
  CHECK(a2.value.data == a.value.data);
  CHECK(b2.value.data == b.value.data);

  SUBCASE("missing parameter") {
    Variable<float> c("other", Tensor<float>::zeros({2}));
    CHECK_THROWS_AS(core::load_checkpoint<float>(path, {&c}), IoError);
  }
  SUBCASE("shape mismatch") {
    Variable<float> c("layer.bias", Tensor<float>::zeros({3}));
    CHECK_THROWS_AS(core::load_checkpoint<float>(path, {&c}), ShapeError);
  }
}

TEST_CASE("graph forward is deterministic given identical inputs") {
  auto run = [](std::uint64_t seed) {
    Pcg32 rng(seed);
    Graph<float> g;
    Tensor<float> x({4, 8});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
    Variable<float> w("w", Tensor<float>({3, 8}));
    for (auto& v : w.value.data) v = static_cast<float>(rng.uniform(-1, 1));
    Variable<float> b("b", Tensor<float>::zeros({3}));
    w.zero_grad();
    b.zero_grad();
    auto loss = g.mean(g.square(g.affine(g.constant(x), g.param(w), g.param(b))));
    g.backward(loss);
    return std::make_tuple(loss->value.data[0], w.grad.data, b.grad.data);
  };
  auto r1 = run(99), r2 = run(99);
  CHECK(std::get<0>(r1) == std::get<0>(r2));
  CHECK(std::get<1>(r1) == std::get<1>(r2));
  CHECK(std::get<2>(r1) == std::get<2>(r2));
}
