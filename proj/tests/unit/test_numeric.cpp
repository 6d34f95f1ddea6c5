#include <cmath>
#include <functional>
#include <vector>

#include "catdiff/adam.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/gradcheck.hpp"
#include "catdiff/nn.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/tape.hpp"
#include "doctest.h"
#include "grad_cases.hpp"
#include "helpers.hpp"

using namespace catdiff;
using testutil::random_tensor;
using testutil::weighted;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<float> v) { return Tensor({r, c}, std::move(v)); }

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor eye = mat(2, 2, {1, 0, 0, 1});
  const Tensor b = mat(2, 2, {1, 2, 3, 4});
  CHECK(bit_equal(matmul(eye, b), b));
  const Tensor z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 2}, 1));
  for (float v : z.data()) CHECK(v == 0.0f);

  // Triple-loop oracle.
  const Tensor a = mat(2, 2, {1, 2, 3, 4});
  const Tensor c = mat(2, 1, {5, 6});
  const Tensor p = matmul(a, c);
  CHECK(p.shape() == Shape{2, 1});
  CHECK(p[0] == 17.0f);
  CHECK(p[1] == 39.0f);

  const Tensor x = random_tensor({3, 5}, 2), y = random_tensor({5, 4}, 3);
  const Tensor xy = matmul(x, y);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += static_cast<double>(x[i * 5 + k]) * y[k * 4 + j];
      CHECK(xy[i * 4 + j] == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected an error");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches dA = dC·Bᵀ, dB = Aᵀ·dC") {
  Tensor a = random_tensor({3, 4}, 5), b = random_tensor({4, 2}, 6);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope s(tape);
    loss = sum(matmul(a, b));  // dC = ones
  }
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.grad()[i * 4 + k] == doctest::Approx(b[k * 2] + b[k * 2 + 1]));
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(b.grad()[k * 2 + j] == doctest::Approx(a[k] + a[4 + k] + a[8 + k]));
}

TEST_CASE("softmax examples and invariants") {
  const Tensor u = softmax(Tensor({1, 3}, 0.0f));
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

  const Tensor s = softmax(mat(1, 2, {0.0f, std::log(3.0f)}));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-6));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({4, 7}, seed, 3.0f);
    const Tensor y = softmax(x);
    Tensor shifted = x.clone();
    for (auto& v : shifted.data()) v += 2.5f;
    const Tensor ys = softmax(shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(y[r * 7 + j] > 0.0f);
        total += y[r * 7 + j];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    CHECK(max_abs_diff(y, ys) < 1e-6f);
  }
  // Max subtraction keeps large logits finite.
  CHECK(softmax(mat(1, 2, {1000.0f, 0.0f})).all_finite());
}

TEST_CASE("layer_norm examples") {
  const Tensor one = Tensor::ones({2}), zero = Tensor::zeros({2});
  const Tensor c = layer_norm(Tensor({1, 2}, 5.0f), one, zero);
  CHECK(c[0] == 0.0f);
  CHECK(c[1] == 0.0f);

  const Tensor r = layer_norm(mat(1, 2, {1.0f, 3.0f}), one, zero, 1e-12f);
  CHECK(r[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(r[1] == doctest::Approx(1.0).epsilon(1e-6));

  const Tensor b = Tensor({3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  const Tensor y = layer_norm(random_tensor({4, 3}, 9), Tensor::zeros({3}), b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(y[i * 3 + j] == b[j]);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor z = layer_norm(random_tensor({5, 8}, seed, 4.0f), Tensor::ones({8}), Tensor::zeros({8}));
    for (std::size_t i = 0; i < 5; ++i) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 8; ++j) mean += z[i * 8 + j];
      mean /= 8.0;
      for (std::size_t j = 0; j < 8; ++j) var += (z[i * 8 + j] - mean) * (z[i * 8 + j] - mean);
      CHECK(std::abs(mean) < 1e-5);
      CHECK(var / 8.0 == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(11);
  SUBCASE("indivisible head count is a configuration error") {
    CHECK_THROWS_AS(MultiHeadAttention(6, 6, 4, rng), ConfigError);
  }
  SUBCASE("a single key returns the projected value for every query") {
    MultiHeadAttention attn(8, 8, 2, rng);
    const Tensor q = random_tensor({5, 8}, 1), kv = random_tensor({1, 8}, 2);
    const Tensor out = attn(q, kv, kv);
    const Tensor expect = attn.out_proj(attn.v_proj(kv));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(out[i * 8 + j] == doctest::Approx(expect[j]).epsilon(1e-5));
  }
  SUBCASE("zero query projection gives uniform weights") {
    MultiHeadAttention attn(8, 8, 2, rng);
    for (auto& v : attn.q_proj.weight.data()) v = 0.0f;
    for (auto& v : attn.q_proj.bias.data()) v = 0.0f;
    const Tensor q = random_tensor({3, 8}, 3), kv = random_tensor({6, 8}, 4);
    const Tensor out = attn(q, kv, kv);
    const Tensor expect = attn.out_proj(mean_rows(attn.v_proj(kv)));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(out[i * 8 + j] == doctest::Approx(expect[j]).epsilon(1e-5));
  }
  SUBCASE("two keys with scaled logits [0, ln 3] weight values 1:3") {
    // One head of width 1: logits are q·k / 1, so set q·k directly.
    MultiHeadAttention attn(1, 1, 1, rng);
    attn.q_proj.weight[0] = 1.0f;
    attn.k_proj.weight[0] = 1.0f;
    attn.v_proj.weight[0] = 1.0f;
    attn.out_proj.weight[0] = 1.0f;
    for (Linear* l : {&attn.q_proj, &attn.k_proj, &attn.v_proj, &attn.out_proj}) l->bias[0] = 0.0f;
    const Tensor q = mat(1, 1, {1.0f});
    const Tensor k = mat(2, 1, {0.0f, std::log(3.0f)});
    const Tensor v = mat(2, 1, {4.0f, 8.0f});
    CHECK(attn(q, k, v)[0] == doctest::Approx(0.25 * 4.0 + 0.75 * 8.0).epsilon(1e-6));
  }
  SUBCASE("matches a loop-based oracle") {
    MultiHeadAttention attn(8, 6, 2, rng);
    const Tensor q = random_tensor({4, 8}, 5), kv = random_tensor({3, 6}, 6);
    const Tensor out = attn(q, kv, kv);
    const Tensor Q = attn.q_proj(q), K = attn.k_proj(kv), V = attn.v_proj(kv);
    std::vector<double> ctx(4 * 8, 0.0);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> logit(3);
        double mx = -1e300;
        for (std::size_t j = 0; j < 3; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < 4; ++c) dot += static_cast<double>(Q[i * 8 + h * 4 + c]) * K[j * 8 + h * 4 + c];
          logit[j] = dot / 2.0;
          mx = std::max(mx, logit[j]);
        }
        double z = 0.0;
        for (auto& l : logit) z += (l = std::exp(l - mx));
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t c = 0; c < 4; ++c) ctx[i * 8 + h * 4 + c] += logit[j] / z * V[j * 8 + h * 4 + c];
      }
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double acc = attn.out_proj.bias[j];
        for (std::size_t c = 0; c < 8; ++c) acc += ctx[i * 8 + c] * attn.out_proj.weight[c * 8 + j];
        CHECK(out[i * 8 + j] == doctest::Approx(acc).epsilon(1e-5));
      }
  }
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives ones") {
    Tensor x = random_tensor({2, 3}, 1);
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
      TapeScope s(tape);
      loss = sum(x);
    }
    backward(loss, tape);
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("mse gives 2(x−y)/n") {
    Tensor x = random_tensor({3, 4}, 2);
    const Tensor y = random_tensor({3, 4}, 3);
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
      TapeScope s(tape);
      loss = mean(mul(sub(x, y), sub(x, y)));
    }
    tape.backward(loss);
    for (std::size_t i = 0; i < 12; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * (x[i] - y[i]) / 12.0).epsilon(1e-6));
  }
  SUBCASE("a parameter off the tape keeps a zero gradient") {
    Tensor x = random_tensor({4}, 4), unused = random_tensor({4}, 5);
    x.set_requires_grad(true);
    unused.set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
      TapeScope s(tape);
      loss = sum(mul(x, x));
    }
    tape.backward(loss);
    for (float g : unused.grad()) CHECK(g == 0.0f);
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tensor x = random_tensor({4}, 6);
    x.set_requires_grad(true);
    Tape tape;
    Tensor y;
    {
      TapeScope s(tape);
      y = scale(x, 2.0f);
    }
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  SUBCASE("no active tape records nothing") {
    Tensor x = random_tensor({4}, 7);
    x.set_requires_grad(true);
    const Tensor y = sum(x);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("finite_diff_check examples") {
  const Tensor x = Tensor({3}, std::vector<float>{1, 2, 3});
  CHECK(finite_diff_check([](const Tensor& v) { return sum(mul(v, v)); }, x, 1e-3f) < 1e-3f);
  CHECK(finite_diff_check([](const Tensor&) { return Tensor::scalar(4.0f); }, x, 1e-3f) == 0.0f);
  // A wrong analytic rule is detected: compare against a deliberately broken function of x.
  const auto broken = [](const Tensor& v) {
    Tensor detached = v.clone();  // value enters the loss without a backward path
    return add(sum(v), sum(mul(detached, detached)));
  };
  CHECK(finite_diff_check(broken, x, 1e-3f) > 0.5f);
}

// Gradient audit: every differentiable primitive, 20 seeds, small shapes.
TEST_CASE("gradient audit of primitives") {
  for (const auto& c : testutil::primitive_grad_cases()) {
    float worst = 0.0f;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor x = random_tensor(c.shape, seed);
      worst = std::max(worst, finite_diff_check([&](const Tensor& v) { return c.f(v, seed); }, x, 1e-2f));
    }
    INFO(c.name);
    CHECK(worst < 1e-3f);
  }
}

TEST_CASE("gradient audit of composite modules") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    MultiHeadAttention attn(4, 3, 2, rng);
    const Tensor kv = random_tensor({3, 3}, seed + 7);
    CHECK(finite_diff_check([&](const Tensor& q) { return weighted(attn(q, kv, kv), seed); },
                            random_tensor({2, 4}, seed), 1e-2f) < 1e-3f);
    const Tensor q = random_tensor({2, 4}, seed + 3);
    CHECK(finite_diff_check([&](const Tensor& k) { return weighted(attn(q, k, k), seed); },
                            random_tensor({3, 3}, seed + 1), 1e-2f) < 1e-3f);
    // Composite stacks follow the end-to-end tolerance.
    TransformerLayer layer(4, 2, rng);
    CHECK(finite_diff_check([&](const Tensor& x) { return weighted(layer(x), seed); }, random_tensor({3, 4}, seed + 2),
                            1e-2f) < 1e-2f);
  }
}

// Per-path chain-rule oracle on random scalar graphs of at most 10 nodes.
TEST_CASE("tape backward equals the sum over paths of local derivatives") {
  enum Op { kAdd, kSub, kMul, kScale, kGelu };
  struct Node {
    Op op;
    int a, b;  // b unused for unary ops
    double value = 0.0;
  };
  auto gelu_d = [](double v) {
    const double c = 0.7978845608028654, k = 0.044715;
    const double t = std::tanh(c * (v + k * v * v * v));
    return 0.5 * (1 + t) + 0.5 * v * (1 - t * t) * c * (1 + 3 * k * v * v);
  };
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const int leaves = 3;
    const int total = 4 + static_cast<int>(rng.index(7));  // 4..10 nodes
    std::vector<Node> nodes(total);
    std::vector<Tensor> t(total);
    for (int i = 0; i < leaves; ++i) {
      nodes[i].value = rng.uniform(-1.5, 1.5);
      t[i] = Tensor::scalar(static_cast<float>(nodes[i].value));
      t[i].set_requires_grad(true);
      nodes[i].value = t[i][0];
    }
    Tape tape;
    {
      TapeScope scope(tape);
      for (int i = leaves; i < total; ++i) {
        Node& n = nodes[i];
        n.op = static_cast<Op>(rng.index(5));
        n.a = static_cast<int>(rng.index(static_cast<std::size_t>(i)));
        n.b = static_cast<int>(rng.index(static_cast<std::size_t>(i)));
        switch (n.op) {
          case kAdd: t[i] = add(t[n.a], t[n.b]); break;
          case kSub: t[i] = sub(t[n.a], t[n.b]); break;
          case kMul: t[i] = mul(t[n.a], t[n.b]); break;
          case kScale: t[i] = scale(t[n.a], 0.5f); break;
          case kGelu: t[i] = gelu(t[n.a]); break;
        }
        n.value = t[i][0];
      }
    }
    const int out = total - 1;
    if (!t[out].requires_grad()) continue;
    tape.backward(t[out]);

    // Enumerate every path from each leaf to the output; multiply edge partials.
    std::function<double(int)> paths_to_out = [&](int from) -> double {
      if (from == out) return 1.0;
      double acc = 0.0;
      for (int j = from + 1; j < total; ++j) {
        if (j < leaves) continue;
        const Node& n = nodes[j];
        const bool unary = n.op == kScale || n.op == kGelu;
        auto local = [&](bool is_a) -> double {
          switch (n.op) {
            case kAdd: return 1.0;
            case kSub: return is_a ? 1.0 : -1.0;
            case kMul: return is_a ? nodes[n.b].value : nodes[n.a].value;
            case kScale: return 0.5;
            case kGelu: return gelu_d(nodes[n.a].value);
          }
          return 0.0;
        };
        if (n.a == from) acc += local(true) * paths_to_out(j);
        if (!unary && n.b == from) acc += local(false) * paths_to_out(j);
      }
      return acc;
    };
    for (int i = 0; i < leaves; ++i) {
      INFO("seed " << seed << " leaf " << i);
      CHECK(t[i].grad()[0] == doctest::Approx(paths_to_out(i)).epsilon(1e-4));
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = make_param(random_tensor({5}, 1));
    const Tensor before = p.clone();
    Adam adam({{"p", p}});
    adam.step();
    CHECK(bit_equal(p, before));
    CHECK(adam.state().step == 1);
  }
  SUBCASE("first step moves each coordinate by about lr") {
    Tensor p = make_param(Tensor({3}, std::vector<float>{0.0f, 1.0f, -2.0f}));
    const Tensor before = p.clone();
    const std::vector<float> g = {0.3f, -5.0f, 1e-3f};
    std::copy(g.begin(), g.end(), p.grad().begin());
    Adam adam({{"p", p}}, AdamConfig{0.01f});
    adam.step();
    for (std::size_t i = 0; i < 3; ++i) {
      const float delta = p[i] - before[i];
      CHECK(std::abs(delta) == doctest::Approx(0.01).epsilon(0.01));
      CHECK((delta < 0) == (g[i] > 0));
    }
  }
  SUBCASE("moment buffers match parameter shapes and the counter increments") {
    Tensor a = make_param(random_tensor({2, 3}, 2)), b = make_param(random_tensor({4}, 3));
    Adam adam({{"a", a}, {"b", b}});
    for (int i = 0; i < 3; ++i) adam.step();
    CHECK(adam.state().step == 3);
    CHECK(adam.state().first_moment[0].size() == 6);
    CHECK(adam.state().second_moment[1].size() == 4);
  }
  SUBCASE("identical runs are bit-identical") {
    auto run = [] {
      Tensor p = make_param(random_tensor({6}, 4));
      Adam adam({{"p", p}});
      for (int step = 0; step < 2; ++step) {
        Tape tape;
        Tensor loss;
        {
          TapeScope s(tape);
          loss = sum(mul(p, p));
        }
        tape.backward(loss);
        adam.step();
      }
      return p.clone();
    };
    CHECK(bit_equal(run(), run()));
  }
  SUBCASE("NaN gradient aborts naming the parameter") {
    Tensor p = make_param(random_tensor({2}, 5));
    p.grad()[1] = std::nanf("");
    Adam adam({{"encoder.weight", p}});
    try {
      adam.step();
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("encoder.weight") != std::string::npos);
    }
  }
  SUBCASE("frozen parameters and non-positive lr are rejected") {
    Tensor frozen = random_tensor({2}, 6);
    CHECK_THROWS_AS(Adam({{"f", frozen}}), ContractError);
    CHECK_THROWS_AS(Adam({{"p", make_param(random_tensor({2}, 7))}}, AdamConfig{0.0f}), ConfigError);
  }
}

TEST_CASE("tensor invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == shape_numel(t.shape()));
  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.numel());
  CHECK_THROWS_AS(Tensor(Shape{}), ContractError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ContractError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ContractError);
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    Rng rng(3);
    TransformerLayer layer(8, 2, rng);
    Tensor x = random_tensor({5, 8}, 4);
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
      TapeScope s(tape);
      loss = weighted(layer(x), 9);
    }
    tape.backward(loss);
    return std::pair{loss.clone(), Tensor({40}, std::vector<float>(x.grad().begin(), x.grad().end()))};
  };
  const auto a = run(), b = run();
  CHECK(bit_equal(a.first, b.first));
  CHECK(bit_equal(a.second, b.second));
}
