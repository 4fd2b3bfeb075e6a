#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xmodal/optim.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

#include "test_util.hpp"

using namespace xmodal;
using testutil::fd_check;
using testutil::randn_vec;

TEST_CASE("matmul forward: identity and hand case") {
  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor A = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(I, A).data() == A.data());

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(a, b).data() == std::vector<double>{11});

  CHECK_THROWS(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({3, 1}, {1, 2, 3})));
}

TEST_CASE("grad of sum(A*B) w.r.t. A equals ones * B^T") {
  Rng rng(1);
  Tensor A = Tensor::from({2, 3}, randn_vec(6, rng), true);
  Tensor B = Tensor::from({3, 4}, randn_vec(12, rng), true);
  backward(sum_all(matmul(A, B)));
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j) {
      double expected = 0.0;
      for (int64_t c = 0; c < 4; ++c) expected += B.data()[j * 4 + c];
      CHECK(A.grad()[i * 3 + j] == doctest::Approx(expected).epsilon(1e-12));
    }
  auto rep = fd_check([&] { return sum_all(matmul(A, B)); }, {A, B}, 1e-6);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("conv forward hand cases via tensor op") {
  Tensor in = Tensor::from({1, 1, 4}, {1, 2, 3, 4});
  Tensor w1 = Tensor::from({1, 1, 1}, {1});
  Tensor b0 = Tensor::from({1}, {0});
  CHECK(conv(in, w1, b0, 1).data() == std::vector<double>{1, 2, 3, 4});

  Tensor w2 = Tensor::from({1, 1, 2}, {1, 1});
  CHECK(conv(in, w2, b0, 2).data() == std::vector<double>{3, 7});

  Tensor in2 = Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor k2 = Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1});
  CHECK(conv(in2, k2, b0, 2).data() == std::vector<double>{4});

  // kernel larger than padded input
  CHECK_THROWS(conv(Tensor::from({1, 1, 2}, {1, 2}),
                    Tensor::from({1, 1, 5}, {1, 1, 1, 1, 1}), b0, 1));
}

TEST_CASE("conv gradients match finite differences (1D and 2D)") {
  Rng rng(2);
  {
    Tensor in = Tensor::from({2, 2, 7}, randn_vec(28, rng), true);
    Tensor w = Tensor::from({3, 2, 3}, randn_vec(18, rng), true);
    Tensor b = Tensor::from({3}, randn_vec(3, rng), true);
    auto rep = fd_check(
        [&] { return sum_all(mul(conv(in, w, b, 2, 1, 2), conv(in, w, b, 2, 1, 2))); },
        {in, w, b});
    CHECK(rep.max_rel < 1e-4);
  }
  {
    Tensor in = Tensor::from({1, 2, 4, 4}, randn_vec(32, rng), true);
    Tensor w = Tensor::from({2, 2, 2, 2}, randn_vec(16, rng), true);
    Tensor b = Tensor::from({2}, randn_vec(2, rng), true);
    auto rep =
        fd_check([&] { return mean_all(gelu(conv(in, w, b, 2))); }, {in, w, b});
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_CASE("layer_norm forward") {
  Tensor gain = Tensor::from({3}, {1, 1, 1});
  Tensor shift = Tensor::from({3}, {0, 0, 0});
  Tensor c = Tensor::from({1, 3}, {5, 5, 5});
  for (double v : layer_norm(c, gain, shift, 1e-5).data())
    CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

  Tensor x = Tensor::from({1, 2}, {1, 3});
  Tensor g2 = Tensor::from({2}, {1, 1});
  Tensor s2 = Tensor::from({2}, {0, 0});
  // eps must be positive by contract; 1e-30 is exact to double precision here
  auto out = layer_norm(x, g2, s2, 1e-30).data();
  CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(3);
  Tensor x = Tensor::from({2, 4}, randn_vec(8, rng), true);
  Tensor g = Tensor::from({4}, randn_vec(4, rng), true);
  Tensor s = Tensor::from({4}, randn_vec(4, rng), true);
  auto rep = fd_check(
      [&] {
        Tensor y = layer_norm(x, g, s, 1e-5);
        return sum_all(mul(y, y));
      },
      {x, g, s});
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("softmax_ce: uniform, saturated, naive oracle") {
  Tensor uniform = Tensor::zeros({3, 4});
  CHECK(softmax_ce(uniform, {0, 1, 2}).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  std::vector<double> sat(8, 0.0);
  sat[1] = 1000.0;
  sat[4 + 2] = 1000.0;
  CHECK(softmax_ce(Tensor::from({2, 4}, sat), {1, 2}).item() ==
        doctest::Approx(0.0).epsilon(1e-9));

  Rng rng(4);
  Tensor logits = Tensor::from({3, 5}, randn_vec(15, rng));
  std::vector<int64_t> y = {4, 0, 2};
  double naive = 0.0;
  for (int64_t i = 0; i < 3; ++i) {
    double z = 0.0;
    for (int64_t k = 0; k < 5; ++k) z += std::exp(logits.data()[i * 5 + k]);
    naive += -std::log(std::exp(logits.data()[i * 5 + y[i]]) / z);
  }
  naive /= 3.0;
  CHECK(softmax_ce(logits, y).item() == doctest::Approx(naive).epsilon(1e-9));

  CHECK_THROWS(softmax_ce(logits, {0, 5, 1})); // class index >= K
}

TEST_CASE("softmax_ce ignores label -1 and its gradient checks out") {
  Rng rng(5);
  Tensor logits = Tensor::from({4, 3}, randn_vec(12, rng), true);
  std::vector<int64_t> y = {1, -1, 0, -1};
  auto rep = fd_check([&] { return softmax_ce(logits, y); }, {logits});
  CHECK(rep.max_rel < 1e-4);
  backward(softmax_ce(logits, y));
  for (int64_t k = 0; k < 3; ++k) {
    CHECK(logits.grad()[1 * 3 + k] == 0.0);
    CHECK(logits.grad()[3 * 3 + k] == 0.0);
  }
  CHECK_THROWS(softmax_ce(logits, {-1, -1, -1, -1}));
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor y = Tensor::from({2}, {1, 2}, true);
  backward(sum_all(mul(y, y)));
  CHECK(y.grad() == std::vector<double>{2, 4});

  CHECK_THROWS(backward(Tensor::from({2}, {1, 2}, true))); // non-scalar
}

TEST_CASE("gradient accumulation across two backward calls") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  backward(sum_all(x));
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<double>{2, 2});
  x.zero_grad();
  CHECK(x.grad().empty());
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = sum_all(mul(x, x));
  CHECK(y.impl()->parents.empty());
}

TEST_CASE("finite-difference checks across remaining op set") {
  Rng rng(6);
  Tensor a = Tensor::from({2, 3}, randn_vec(6, rng), true);
  Tensor b = Tensor::from({2, 3}, randn_vec(6, rng), true);

  CHECK(fd_check([&] { return mean_all(gelu(add(a, b))); }, {a, b}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(mul(sub(a, b), sub(a, b))); }, {a, b}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(scale(a, -2.5)); }, {a}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(mul(softmax_last(a), b)); }, {a, b}).max_rel < 1e-4);

  Tensor t = Tensor::from({3}, randn_vec(3, rng), true);
  CHECK(fd_check([&] { return sum_all(mul(add_broadcast0(a, t), b)); }, {a, t}).max_rel < 1e-4);

  Tensor s = Tensor::from({2, 2, 3}, randn_vec(12, rng), true);
  Tensor u = Tensor::from({2, 3, 2}, randn_vec(12, rng), true);
  CHECK(fd_check([&] { return mean_all(mul(bmm(s, u), bmm(s, u))); }, {s, u}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(mul(permute(s, {2, 0, 1}), permute(s, {2, 0, 1}))); }, {s}).max_rel < 1e-4);
  Tensor r43 = Tensor::from({4, 3}, randn_vec(12, rng));
  CHECK(fd_check([&] { return sum_all(mul(reshape(s, {4, 3}), r43)); }, {s}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(mul(mean_axis1(s), mean_axis1(s))); }, {s}).max_rel < 1e-4);

  Tensor tab = Tensor::from({4, 3}, randn_vec(12, rng), true);
  CHECK(fd_check([&] { return sum_all(mul(embedding(tab, {1, 3, 1}), embedding(tab, {1, 3, 1}))); }, {tab}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(mul(gather_rows(tab, {0, 2}), a)); }, {tab}).max_rel < 1e-4);

  Tensor m = Tensor::from({5, 3}, randn_vec(15, rng), true);
  CHECK(fd_check([&] { return sum_all(mul(col_mean(m), col_mean(m))); }, {m}).max_rel < 1e-4);
  CHECK(fd_check([&] { return sum_all(mul(col_sigma(m, 1e-6), col_sigma(m, 1e-6))); }, {m}).max_rel < 1e-4);

  std::vector<double> cst = randn_vec(9, rng);
  CHECK(fd_check([&] { return mean_all(pairwise_sqdist_const(m, cst, 3)); }, {m}).max_rel < 1e-4);
  Tensor q = Tensor::from({4, 3}, randn_vec(12, rng), true);
  CHECK(fd_check([&] { return mean_all(mul(pairwise_sqdist(m, q), pairwise_sqdist(m, q))); }, {m, q}).max_rel < 1e-4);

  std::vector<double> targets = {1, 0, 1, 0, 0, 1};
  CHECK(fd_check([&] { return bce_multilabel(a, targets); }, {a}).max_rel < 1e-4);
  Tensor tgt = Tensor::from({2, 3}, randn_vec(6, rng));
  CHECK(fd_check([&] { return mse_loss(a, tgt); }, {a}).max_rel < 1e-4);
}

TEST_CASE("col_sigma clamps at the variance floor") {
  Tensor m = Tensor::from({3, 2}, {1, 5, 1, 5, 1, 5}); // zero-variance columns
  auto s = col_sigma(m, 1e-6).data();
  CHECK(s[0] == doctest::Approx(std::sqrt(1e-6)).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(std::sqrt(1e-6)).epsilon(1e-12));
}

TEST_CASE("check_finite flags NaN") {
  Tensor x = Tensor::from({2}, {1.0, std::nan("")});
  CHECK_THROWS(x.check_finite("x"));
  Tensor ok = Tensor::from({2}, {1.0, 2.0});
  CHECK_NOTHROW(ok.check_finite("ok"));
}

TEST_CASE("adamw: frozen parameter untouched, single-step magnitude") {
  Parameter p{"w", Tensor::from({1}, {1.0}, true), false};
  Parameter frozen{"f", Tensor::from({1}, {2.0}, true), true};
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamW opt({&p, &frozen}, cfg);
  p.tensor.grad().assign(1, 1.0);
  frozen.tensor.grad().assign(1, 1.0);
  opt.step();
  CHECK(frozen.tensor.data()[0] == 2.0); // bit-identical
  CHECK(p.tensor.data()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("adamw: weight_decay=0 reduces to plain Adam trajectory") {
  Rng rng(7);
  auto init = randn_vec(4, rng);
  Parameter p{"w", Tensor::from({4}, init, true), false};
  AdamWConfig cfg; // weight_decay = 0
  AdamW opt({&p}, cfg);
  // independent plain-Adam reimplementation
  std::vector<double> ref = init, m(4, 0.0), v(4, 0.0);
  for (int t = 1; t <= 5; ++t) {
    auto g = randn_vec(4, rng);
    p.tensor.grad() = g;
    opt.step();
    for (int i = 0; i < 4; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    opt.zero_grad();
  }
  for (int i = 0; i < 4; ++i)
    CHECK(p.tensor.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("checksum detects any bit change") {
  Parameter a{"a", Tensor::from({2}, {1.0, 2.0}, true), false};
  Parameter b{"b", Tensor::from({1}, {3.0}, true), false};
  uint64_t c0 = checksum({&a, &b});
  CHECK(c0 == checksum({&a, &b}));
  a.tensor.data()[1] = std::nextafter(2.0, 3.0);
  CHECK(c0 != checksum({&a, &b}));
}
