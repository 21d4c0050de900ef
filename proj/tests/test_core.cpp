#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "afford/adam.hpp"
#include "afford/rng.hpp"
#include "afford/tape.hpp"
#include "afford/tensor.hpp"
#include "test_util.hpp"

using namespace afford;
using afford::testutil::fd_grad;
using afford::testutil::max_rel_err;
using afford::testutil::random_tensor;
using afford::testutil::rel_err;

TEST_CASE("tensor shape checks") {
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0f}), std::invalid_argument);
  REQUIRE(Tensor::zeros({3, 4}).size() == 12);
}

TEST_CASE("dense identity and scalar affine") {
  Tape t;
  const Tensor x = Tensor::vec({1.0f, 0.0f});
  const Tensor w({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  const Tensor b = Tensor::vec({0.0f, 0.0f});
  const int y = t.dense(t.leaf(x), t.leaf(w), t.leaf(b));
  REQUIRE(t.value(y).data == std::vector<float>{1.0f, 0.0f});

  Tape t2;
  const Tensor x2 = Tensor::vec({2.0f});
  const Tensor w2({1, 1}, {3.0f});
  const Tensor b2 = Tensor::vec({1.0f});
  const int y2 = t2.dense(t2.leaf(x2), t2.leaf(w2), t2.leaf(b2));
  REQUIRE(t2.value(y2).data[0] == 7.0f);
}

TEST_CASE("dense rejects shape mismatch with a dimension report") {
  Tape t;
  const Tensor x = Tensor::vec({1.0f, 2.0f, 3.0f});
  const Tensor w({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::vec({0.0f, 0.0f});
  try {
    t.dense(t.leaf(x), t.leaf(w), t.leaf(b));
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find("[3]") != std::string::npos);
    REQUIRE(std::string(e.what()).find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("dense gradients match finite differences") {
  Rng rng(7);
  const Tensor x0 = random_tensor(rng, {3});
  const Tensor w0 = random_tensor(rng, {3, 5});
  const Tensor b0 = random_tensor(rng, {5});
  const Tensor target = random_tensor(rng, {5});

  Tape t;
  const int xi = t.leaf(x0);
  const int wi = t.leaf(w0);
  const int bi = t.leaf(b0);
  const int l = t.mse(t.dense(xi, wi, bi), target);
  t.backward(l);

  auto f_x = [&](const std::vector<float>& v) {
    Tensor x = x0;
    x.data = v;
    Tape tt;
    return static_cast<double>(
        tt.value(tt.mse(tt.dense(tt.leaf(x), tt.leaf(w0), tt.leaf(b0)), target)).data[0]);
  };
  REQUIRE(max_rel_err(f_x, x0.data, t.grad(xi).data) <= 1e-4);

  auto f_w = [&](const std::vector<float>& v) {
    Tensor w = w0;
    w.data = v;
    Tape tt;
    return static_cast<double>(
        tt.value(tt.mse(tt.dense(tt.leaf(x0), tt.leaf(w), tt.leaf(b0)), target)).data[0]);
  };
  REQUIRE(max_rel_err(f_w, w0.data, t.grad(wi).data) <= 1e-4);

  auto f_b = [&](const std::vector<float>& v) {
    Tensor b = b0;
    b.data = v;
    Tape tt;
    return static_cast<double>(
        tt.value(tt.mse(tt.dense(tt.leaf(x0), tt.leaf(w0), tt.leaf(b)), target)).data[0]);
  };
  REQUIRE(max_rel_err(f_b, b0.data, t.grad(bi).data) <= 1e-4);
}

namespace {

// Independent nested-loop conv + LeakyReLU + 2x2 max-pool oracle.
Tensor conv_pool_oracle(const Tensor& x, const Tensor& k, const Tensor& b, float alpha) {
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = k.dim(3);
  Tensor act = Tensor::zeros({h, w, cout});
  for (int y = 0; y < h; ++y)
    for (int xo = 0; xo < w; ++xo)
      for (int co = 0; co < cout; ++co) {
        double acc = b.data[co];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int sy = y + ky - 1, sx = xo + kx - 1;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            for (int ci = 0; ci < cin; ++ci)
              acc += static_cast<double>(x.at3(sy, sx, ci)) *
                     k.data[((ky * 3 + kx) * cin + ci) * cout + co];
          }
        const float v = static_cast<float>(acc);
        act.at3(y, xo, co) = v < 0.0f ? alpha * v : v;
      }
  Tensor out = Tensor::zeros({h / 2, w / 2, cout});
  for (int oy = 0; oy < h / 2; ++oy)
    for (int ox = 0; ox < w / 2; ++ox)
      for (int co = 0; co < cout; ++co) {
        float best = act.at3(2 * oy, 2 * ox, co);
        best = std::max(best, act.at3(2 * oy, 2 * ox + 1, co));
        best = std::max(best, act.at3(2 * oy + 1, 2 * ox, co));
        best = std::max(best, act.at3(2 * oy + 1, 2 * ox + 1, co));
        out.at3(oy, ox, co) = best;
      }
  return out;
}

}  // namespace

TEST_CASE("conv3x3_pool zero input passes the bias through the pool") {
  Tape t;
  const Tensor x = Tensor::zeros({6, 6, 2});
  Rng rng(3);
  const Tensor k = random_tensor(rng, {3, 3, 2, 2});
  const Tensor b = Tensor::vec({0.3f, -0.2f});
  const int y = t.conv3x3_pool(t.leaf(x), t.leaf(k), t.leaf(b), 0.01f);
  REQUIRE(t.value(y).shape == std::vector<int>{3, 3, 2});
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 3; ++ox) {
      REQUIRE(t.value(y).at3(oy, ox, 0) == 0.3f);
      REQUIRE(t.value(y).at3(oy, ox, 1) == -0.2f * 0.01f);
    }
}

TEST_CASE("conv3x3_pool reproduces the reference channel ladder shapes") {
  Rng rng(11);
  Tape t;
  int x = t.constant(random_tensor(rng, {48, 48, 2}, 0.0, 1.0));
  const int channels[5] = {32, 64, 64, 128, 128};
  const int expected_spatial[5] = {24, 12, 6, 3, 1};
  int cin = 2;
  std::vector<Tensor> keep;
  keep.reserve(10);
  for (int i = 0; i < 5; ++i) {
    keep.push_back(random_tensor(rng, {3, 3, cin, channels[i]}, -0.1, 0.1));
    keep.push_back(random_tensor(rng, {channels[i]}, -0.1, 0.1));
    x = t.conv3x3_pool(x, t.leaf(keep[2 * i]), t.leaf(keep[2 * i + 1]), 0.01f);
    REQUIRE(t.value(x).shape ==
            std::vector<int>{expected_spatial[i], expected_spatial[i], channels[i]});
    cin = channels[i];
  }
  REQUIRE(t.value(x).shape == std::vector<int>{1, 1, 128});
}

TEST_CASE("conv3x3_pool matches the nested-loop oracle") {
  Rng rng(19);
  const Tensor x = random_tensor(rng, {4, 4, 1});
  const Tensor k = random_tensor(rng, {3, 3, 1, 1});
  const Tensor b = random_tensor(rng, {1});
  Tape t;
  const int y = t.conv3x3_pool(t.leaf(x), t.leaf(k), t.leaf(b), 0.01f);
  const Tensor ref = conv_pool_oracle(x, k, b, 0.01f);
  REQUIRE(t.value(y).shape == ref.shape);
  for (int i = 0; i < ref.size(); ++i)
    REQUIRE(t.value(y).data[i] == Catch::Approx(ref.data[i]).margin(1e-6));
}

TEST_CASE("conv3x3_pool rejects channel mismatch") {
  Tape t;
  const Tensor x = Tensor::zeros({4, 4, 2});
  const Tensor k = Tensor::zeros({3, 3, 3, 1});
  const Tensor b = Tensor::zeros({1});
  REQUIRE_THROWS_AS(t.conv3x3_pool(t.leaf(x), t.leaf(k), t.leaf(b), 0.01f), std::invalid_argument);
}

TEST_CASE("conv3x3_pool gradients match finite differences") {
  Rng rng(23);
  const Tensor x0 = random_tensor(rng, {4, 4, 2});
  const Tensor k0 = random_tensor(rng, {3, 3, 2, 3});
  const Tensor b0 = random_tensor(rng, {3});
  const Tensor target = random_tensor(rng, {2 * 2 * 3});

  Tape t;
  const int xi = t.leaf(x0);
  const int ki = t.leaf(k0);
  const int bi = t.leaf(b0);
  const int l = t.mse(t.conv3x3_pool(xi, ki, bi, 0.01f), target);
  t.backward(l);

  auto run = [&](const Tensor& x, const Tensor& k, const Tensor& b) {
    Tape tt;
    return static_cast<double>(
        tt.value(tt.mse(tt.conv3x3_pool(tt.leaf(x), tt.leaf(k), tt.leaf(b), 0.01f), target))
            .data[0]);
  };
  auto f_x = [&](const std::vector<float>& v) {
    Tensor x = x0;
    x.data = v;
    return run(x, k0, b0);
  };
  auto f_k = [&](const std::vector<float>& v) {
    Tensor k = k0;
    k.data = v;
    return run(x0, k, b0);
  };
  // Pool argmax switches introduce kinks; keep h small relative to the gaps.
  REQUIRE(max_rel_err(f_x, x0.data, t.grad(xi).data, 1e-3) <= 1e-3);
  REQUIRE(max_rel_err(f_k, k0.data, t.grad(ki).data, 1e-3) <= 1e-3);
}

TEST_CASE("leaky_relu values and gradient") {
  Tape t;
  const Tensor x = Tensor::vec({1.0f, -1.0f, -2.0f});
  const int y = t.leaky_relu(t.leaf(x), 0.01f);
  REQUIRE(t.value(y).data[0] == 1.0f);
  REQUIRE(t.value(y).data[1] == -0.01f);

  Tape t2;
  const Tensor x2 = Tensor::vec({-2.0f});
  const int leaf = t2.leaf(x2);
  const int l = t2.mse(t2.leaky_relu(leaf, 0.01f), Tensor::vec({0.0f}));
  t2.backward(l);
  // d/dx (alpha x)^2 = 2 alpha^2 x; fd against the same composite
  auto f = [&](const std::vector<float>& v) {
    Tape tt;
    Tensor x = Tensor::vec({v[0]});
    return static_cast<double>(
        tt.value(tt.mse(tt.leaky_relu(tt.leaf(x), 0.01f), Tensor::vec({0.0f}))).data[0]);
  };
  REQUIRE(max_rel_err(f, x2.data, t2.grad(leaf).data) <= 1e-4);
  REQUIRE(t2.grad(leaf).data[0] == Catch::Approx(2.0 * 0.01 * 0.01 * -2.0).epsilon(1e-4));
}

TEST_CASE("positive_std is softplus") {
  Tape t;
  const Tensor x = Tensor::vec({0.0f, -30.0f, 5.0f});
  const int y = t.positive_std(t.leaf(x));
  REQUIRE(t.value(y).data[0] == Catch::Approx(std::log(2.0)).epsilon(1e-6));
  REQUIRE(t.value(y).data[1] > 0.0f);
  REQUIRE(t.value(y).data[2] > 5.0f);

  Tape t2;
  const Tensor x2 = Tensor::vec({0.0f});
  const int leaf = t2.leaf(x2);
  const int sp = t2.positive_std(leaf);
  const int l = t2.mse(sp, Tensor::vec({0.0f}));
  t2.backward(l);
  // chain: d/dx sp(x)^2 at 0 = 2 * ln2 * 0.5 = ln2
  REQUIRE(t2.grad(leaf).data[0] == Catch::Approx(std::log(2.0)).epsilon(1e-5));
  auto f = [&](const std::vector<float>& v) {
    Tape tt;
    Tensor x = Tensor::vec({v[0]});
    return static_cast<double>(
        tt.value(tt.mse(tt.positive_std(tt.leaf(x)), Tensor::vec({0.0f}))).data[0]);
  };
  REQUIRE(max_rel_err(f, x2.data, t2.grad(leaf).data) <= 1e-4);
}

TEST_CASE("gaussian_nll closed-form values") {
  Tape t;
  const Tensor mean = Tensor::vec({0.5f});
  const Tensor stddev = Tensor::vec({1.0f});
  const int l = t.gaussian_nll(t.leaf(mean), t.leaf(stddev), Tensor::vec({0.5f}));
  REQUIRE(t.value(l).data[0] == Catch::Approx(0.918938533).epsilon(1e-7));

  Tape t2;
  const Tensor mean2 = Tensor::vec({0.5f, -0.25f});
  const Tensor std2 = Tensor::vec({1.0f, 1.0f});
  const int l2 = t2.gaussian_nll(t2.leaf(mean2), t2.leaf(std2), Tensor::vec({0.5f, -0.25f}));
  REQUIRE(t2.value(l2).data[0] == Catch::Approx(1.837877066).epsilon(1e-7));

  // target 0, mean 1, std 0.5: 0.5*log(2*pi*0.25) + 1/(2*0.25)
  const double indep = 0.5 * std::log(2.0 * M_PI * 0.25) + 1.0 / 0.5;
  const float tgt = 0.0f, mu = 1.0f, sg = 0.5f;
  REQUIRE(std::abs(gaussian_nll_value(&tgt, &mu, &sg, 1) - indep) <= 1e-10);
  Tape t3;
  const int l3 =
      t3.gaussian_nll(t3.leaf(Tensor::vec({1.0f})), t3.leaf(Tensor::vec({0.5f})), Tensor::vec({0.0f}));
  REQUIRE(t3.value(l3).data[0] == Catch::Approx(indep).epsilon(1e-6));
}

TEST_CASE("gaussian_nll rejects non-positive std") {
  Tape t;
  const Tensor mean = Tensor::vec({0.0f});
  const Tensor stdv = Tensor::vec({0.0f});
  REQUIRE_THROWS_AS(t.gaussian_nll(t.leaf(mean), t.leaf(stdv), Tensor::vec({0.0f})),
                    std::invalid_argument);
}

TEST_CASE("gaussian_nll gradients match finite differences") {
  Rng rng(31);
  const Tensor mean0 = random_tensor(rng, {4});
  Tensor std0 = random_tensor(rng, {4}, 0.4, 1.5);
  const Tensor target = random_tensor(rng, {4});

  Tape t;
  const int mi = t.leaf(mean0);
  const int si = t.leaf(std0);
  const int l = t.gaussian_nll(mi, si, target);
  t.backward(l);

  auto f_m = [&](const std::vector<float>& v) {
    Tensor m = mean0;
    m.data = v;
    Tape tt;
    return static_cast<double>(tt.value(tt.gaussian_nll(tt.leaf(m), tt.leaf(std0), target)).data[0]);
  };
  auto f_s = [&](const std::vector<float>& v) {
    Tensor s = std0;
    s.data = v;
    Tape tt;
    return static_cast<double>(tt.value(tt.gaussian_nll(tt.leaf(mean0), tt.leaf(s), target)).data[0]);
  };
  REQUIRE(max_rel_err(f_m, mean0.data, t.grad(mi).data) <= 1e-4);
  REQUIRE(max_rel_err(f_s, std0.data, t.grad(si).data) <= 1e-4);
}

TEST_CASE("backward computes d(x^2)/dx = 2x and input-leaf gradients") {
  Tape t;
  const Tensor x = Tensor::vec({3.0f});
  const int leaf = t.leaf(x);
  const int l = t.mse(leaf, Tensor::vec({0.0f}));
  REQUIRE(t.value(l).data[0] == 9.0f);
  t.backward(l);
  REQUIRE(t.grad(leaf).data[0] == 6.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape t;
  const Tensor x = Tensor::vec({1.0f, 2.0f});
  const int leaf = t.leaf(x);
  REQUIRE_THROWS_AS(t.backward(leaf), std::invalid_argument);
}

TEST_CASE("composite dense -> leaky -> nll gradient vs finite differences") {
  Rng rng(41);
  const Tensor x0 = random_tensor(rng, {3});
  const Tensor w0 = random_tensor(rng, {3, 4});
  const Tensor b0 = random_tensor(rng, {4});
  const Tensor ws = random_tensor(rng, {4, 2});
  const Tensor bs = random_tensor(rng, {2});
  const Tensor target = random_tensor(rng, {1});

  auto value = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
    Tape t;
    const int h = t.leaky_relu(t.dense(t.leaf(x), t.leaf(w), t.leaf(b)), 0.01f);
    const int head = t.dense(h, t.leaf(ws), t.leaf(bs));
    const int mean = t.slice(head, 0, 1);
    const int stddev = t.positive_std(t.slice(head, 1, 1));
    return t.value(t.gaussian_nll(mean, stddev, target)).data[0];
  };

  Tape t;
  const int xi = t.leaf(x0);
  const int wi = t.leaf(w0);
  const int bi = t.leaf(b0);
  const int h = t.leaky_relu(t.dense(xi, wi, bi), 0.01f);
  const int head = t.dense(h, t.leaf(ws), t.leaf(bs));
  const int l = t.gaussian_nll(t.slice(head, 0, 1), t.positive_std(t.slice(head, 1, 1)), target);
  t.backward(l);

  auto f_x = [&](const std::vector<float>& v) {
    Tensor x = x0;
    x.data = v;
    return static_cast<double>(value(x, w0, b0));
  };
  auto f_w = [&](const std::vector<float>& v) {
    Tensor w = w0;
    w.data = v;
    return static_cast<double>(value(x0, w, b0));
  };
  REQUIRE(max_rel_err(f_x, x0.data, t.grad(xi).data) <= 1e-4);
  REQUIRE(max_rel_err(f_w, w0.data, t.grad(wi).data) <= 1e-4);
}

TEST_CASE("mean_of is exact and permutation invariant") {
  Rng rng(53);
  const Tensor a = random_tensor(rng, {16});
  const Tensor b = random_tensor(rng, {16});
  const Tensor c = random_tensor(rng, {16});

  Tape t;
  const int ids1[3] = {t.leaf(a), t.leaf(b), t.leaf(c)};
  const int m1 = t.mean_of(ids1);
  Tape t2;
  const int ids2[3] = {t2.leaf(c), t2.leaf(a), t2.leaf(b)};
  const int m2 = t2.mean_of(ids2);
  REQUIRE(t.value(m1).data == t2.value(m2).data);

  Tape t3;
  const int ids3[3] = {t3.leaf(a), t3.leaf(a), t3.leaf(a)};
  REQUIRE(t3.value(t3.mean_of(ids3)).data == a.data);
}

TEST_CASE("lincomb blends and routes gradients by weight") {
  const Tensor a = Tensor::vec({2.0f, -4.0f});
  const Tensor b = Tensor::vec({1.0f, 1.0f});
  Tape t;
  const int ai = t.leaf(a);
  const int bi = t.leaf(b);
  const int y = t.lincomb(0.25f, ai, 0.75f, bi);
  REQUIRE(t.value(y).data[0] == 0.25f * 2.0f + 0.75f);
  const int l = t.mse(y, Tensor::vec({0.0f, 0.0f}));
  t.backward(l);
  REQUIRE(t.grad(ai).data[0] == Catch::Approx(2.0 / 2 * t.value(y).data[0] * 0.25 * 2).epsilon(1e-5));
}

TEST_CASE("adam first step moves by about the learning rate") {
  Tensor p = Tensor::vec({0.5f});
  AdamState st = AdamState::for_shape(p);
  AdamConfig cfg;
  cfg.learning_rate = 1e-4;
  adam_step(st, p, Tensor::vec({0.3f}), cfg);
  REQUIRE(std::abs(0.5 - p.data[0]) == Catch::Approx(1e-4).epsilon(1e-3));
  REQUIRE(st.step == 1);
}

TEST_CASE("adam with zero gradients is a fixed point") {
  Tensor p = Tensor::vec({0.25f, -0.75f});
  const std::vector<float> before = p.data;
  AdamState st = AdamState::for_shape(p);
  AdamConfig cfg;
  for (int i = 0; i < 5; ++i) adam_step(st, p, Tensor::vec({0.0f, 0.0f}), cfg);
  REQUIRE(p.data == before);
  REQUIRE(st.step == 5);
}

TEST_CASE("adam three-step scalar sequence matches the reference recurrence") {
  const double lr = 1e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[3] = {0.3, -0.2, 0.05};

  // Reference: textbook recurrence in double, parameter stored as float.
  float ref_param = 1.0f;
  double m = 0.0, v = 0.0;
  for (int step = 1; step <= 3; ++step) {
    const double g = grads[step - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, step));
    const double vhat = v / (1 - std::pow(b2, step));
    ref_param = static_cast<float>(static_cast<double>(ref_param) - lr * mhat / (std::sqrt(vhat) + eps));
  }

  Tensor p = Tensor::vec({1.0f});
  AdamState st = AdamState::for_shape(p);
  AdamConfig cfg;
  cfg.learning_rate = lr;
  for (int step = 0; step < 3; ++step)
    adam_step(st, p, Tensor::vec({static_cast<float>(grads[step])}), cfg);
  REQUIRE(std::abs(static_cast<double>(p.data[0]) - ref_param) <= 1e-12);
}

TEST_CASE("primitive gradient property over seeded trials") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(1000 + static_cast<std::uint64_t>(trial));
    const Tensor x0 = random_tensor(rng, {4});
    const Tensor w0 = random_tensor(rng, {4, 3});
    const Tensor b0 = random_tensor(rng, {3});
    const Tensor target = random_tensor(rng, {3});
    Tape t;
    const int xi = t.leaf(x0);
    const int l = t.mse(t.leaky_relu(t.dense(xi, t.leaf(w0), t.leaf(b0)), 0.01f), target);
    t.backward(l);
    auto f = [&](const std::vector<float>& v) {
      Tensor x = x0;
      x.data = v;
      Tape tt;
      return static_cast<double>(
          tt.value(tt.mse(tt.leaky_relu(tt.dense(tt.leaf(x), tt.leaf(w0), tt.leaf(b0)), 0.01f), target))
              .data[0]);
    };
    REQUIRE(max_rel_err(f, x0.data, t.grad(xi).data) <= 1e-4);
  }
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(61);
  const Tensor x = random_tensor(rng, {6, 6, 3});
  const Tensor k = random_tensor(rng, {3, 3, 3, 4});
  const Tensor b = random_tensor(rng, {4});
  Tape t1, t2;
  const int y1 = t1.conv3x3_pool(t1.leaf(x), t1.leaf(k), t1.leaf(b), 0.01f);
  const int y2 = t2.conv3x3_pool(t2.leaf(x), t2.leaf(k), t2.leaf(b), 0.01f);
  REQUIRE(t1.value(y1).data == t2.value(y2).data);
}
