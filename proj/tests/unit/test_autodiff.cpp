#include <doctest.h>

#include <cmath>
#include <random>

#include "ppnet/autodiff/gradcheck.hpp"
#include "ppnet/autodiff/ops.hpp"
#include "ppnet/error.hpp"
#include "ppnet/gradcheck_suite.hpp"

using namespace ppnet;
using namespace ppnet::ad;
using V = Var<double>;

TEST_CASE("linear examples") {
  Tape<double> t;
  const auto x = t.constant({1, 2}, {3, 4});
  const auto w = t.constant({1, 2}, {1, 2});
  CHECK(linear(x, w, std::optional<V>(t.constant({1}, {0}))).value()[0] == 11.0);
  const auto eye = t.constant({2, 2}, {1, 0, 0, 1});
  const auto same = linear(x, eye, std::optional<V>());
  CHECK(same.value()[0] == 3.0);
  CHECK(same.value()[1] == 4.0);
  const auto zero = t.constant({2, 2}, {0, 0, 0, 0});
  const auto b = linear(zero, w, std::optional<V>(t.constant({1}, {2.5})));
  CHECK(b.value()[0] == 2.5);
  CHECK(b.value()[1] == 2.5);
}

TEST_CASE("conv2d_same examples") {
  Tape<double> t;
  const auto one = t.constant({1, 1}, {5});
  const auto ones = t.constant({1, 3, 3, 1}, std::vector<double>(9, 1.0));
  CHECK(conv2d_same(one, 1, 1, 1, ones, std::optional<V>()).value()[0] == 5.0);

  std::vector<double> img(12);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.5 * static_cast<double>(i) - 2.0;
  const auto x = t.constant({12, 1}, img);
  std::vector<double> delta(9, 0.0);
  delta[4] = 1.0;
  const auto id = conv2d_same(x, 1, 3, 4, t.constant({1, 3, 3, 1}, delta), std::optional<V>());
  for (std::size_t i = 0; i < 12; ++i) CHECK(id.value()[i] == img[i]);

  const auto zero_k = t.constant({2, 3, 3, 1}, std::vector<double>(18, 0.0));
  const auto c = conv2d_same(x, 1, 3, 4, zero_k, std::optional<V>(t.constant({2}, {1.5, -1})));
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(c.value()[i * 2] == 1.5);
    CHECK(c.value()[i * 2 + 1] == -1.0);
  }
}

TEST_CASE("depthwise examples") {
  Tape<double> t;
  const auto x = t.constant({1, 2}, {1, 1});
  const auto y = depthwise(x, t.constant({2}, {2, 3}), t.constant({2}, {0, 0}));
  CHECK(y.value()[0] == 2.0);
  CHECK(y.value()[1] == 3.0);
  const auto z = depthwise(x, t.constant({2}, {0, 0}), t.constant({2}, {4, 5}));
  CHECK(z.value()[0] == 4.0);
  CHECK(z.value()[1] == 5.0);
}

TEST_CASE("batch_norm examples and statistics") {
  Tape<double> t;
  BatchNormStats<double> s(1);
  const auto g = t.constant({1}, {1}), b = t.constant({1}, {0});
  const auto y = batch_norm(t.constant({2, 1}, {1, 3}), g, b, s, Mode::Train);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(s.running_mean[0] == doctest::Approx(0.2));
  CHECK(s.running_var[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased batch variance 2

  BatchNormStats<double> s2(1);
  const auto cst = batch_norm(t.constant({4, 1}, {3, 3, 3, 3}), g, t.constant({1}, {0.7}), s2, Mode::Train);
  for (double v : cst.value()) CHECK(std::abs(v - 0.7) < 1e-3);

  BatchNormStats<double> s3(1);
  const auto ev = batch_norm(t.constant({3, 1}, {1, -2, 5}), g, b, s3, Mode::Eval);
  CHECK(ev.value()[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(ev.value()[2] == doctest::Approx(5.0).epsilon(1e-5));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(3.0, 2.0);
  std::vector<double> xs(200 * 3);
  for (auto& v : xs) v = n(rng);
  BatchNormStats<double> s4(3);
  const auto out = batch_norm(t.constant({200, 3}, xs), t.constant({3}, {1, 1, 1}), t.constant({3}, {0, 0, 0}), s4,
                              Mode::Train);
  for (int k = 0; k < 3; ++k) {
    double m = 0, v = 0;
    for (int i = 0; i < 200; ++i) m += out.value()[i * 3 + k];
    m /= 200;
    for (int i = 0; i < 200; ++i) v += std::pow(out.value()[i * 3 + k] - m, 2);
    v /= 200;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-3);  // eps shrinks it slightly
  }
}

TEST_CASE("activation values") {
  Tape<double> t;
  CHECK(sigmoid(t.constant({1}, {0})).value()[0] == 0.5);
  const auto r = relu(t.constant({2}, {-2, 3}));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 3.0);
  const auto s = softmax_rows(t.constant({1, 4}, {7, 7, 7, 7}));
  for (double v : s.value()) CHECK(v == 0.25);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-30, 30);
  std::vector<double> xs(6 * 5);
  for (auto& v : xs) v = u(rng);
  auto shifted = xs;
  for (std::size_t i = 0; i < 5; ++i) shifted[5 + i] += 123.0;
  const auto a = softmax_rows(t.constant({6, 5}, xs)), b = softmax_rows(t.constant({6, 5}, shifted));
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 5; ++c) sum += a.value()[r * 5 + c];
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(a.value()[i] - b.value()[i]) < 1e-9);
}

TEST_CASE("max_over_neighbors values and tie gradient") {
  Tape<double> t;
  // K=2, N=1, C=2: rows (1,5) and (3,2)
  const auto m = max_over_neighbors(t.constant({2, 2}, {1, 5, 3, 2}), 2);
  CHECK(m.value()[0] == 3.0);
  CHECK(m.value()[1] == 5.0);
  const auto x1 = t.constant({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto same = max_over_neighbors(x1, 1);
  for (std::size_t i = 0; i < 6; ++i) CHECK(same.value()[i] == x1.value()[i]);

  Tape<double> t2;
  const auto x = t2.parameter({3, 1}, {4, 4, 4});
  t2.backward(sum(max_over_neighbors(x, 3)));
  CHECK(t2.grad(x)[0] == 1.0);
  CHECK(t2.grad(x)[1] == 0.0);
  CHECK(t2.grad(x)[2] == 0.0);
}

TEST_CASE("fan-out gradients accumulate") {
  Tape<double> t;
  const auto x = t.parameter({2}, {1.5, -2});
  // y = sum(x*x + 3x) -> dy/dx = 2x + 3
  const auto y = sum(add(mul(x, x), scale(x, 3.0)));
  t.backward(y);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0));
  CHECK(t.grad(x)[1] == doctest::Approx(-1.0));
}

TEST_CASE("finite-difference checker on simple functions") {
  const TapeFn sq = [](Tape<double>&, const std::vector<V>& x) { return square(x[0]); };
  const std::vector<GradCheckInput> at3{{{1}, {3.0}}};
  const std::vector<double> dir{1.0};
  const auto p = probe_direction(sq, at3, 0, dir, {});
  CHECK(p.analytic == 6.0);
  CHECK(std::abs(p.central - 6.0) < 1e-6);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  auto rnd = [&](Shape s) {
    GradCheckInput in{s, std::vector<double>(numel(s))};
    for (auto& v : in.values) v = u(rng);
    return in;
  };
  CHECK(grad_check([](Tape<double>&, const std::vector<V>& x) { return conv2d_same(x[0], 1, 4, 4, x[1], std::optional<V>()); },
                   {rnd({16, 2}), rnd({3, 3, 3, 2})}, 9) < 1e-4);
  CHECK(grad_check([](Tape<double>&, const std::vector<V>& x) { return sigmoid(linear(x[0], x[1], std::optional<V>(x[2]))); },
                   {rnd({4, 3}), rnd({2, 3}), rnd({2})}, 10) < 1e-4);

  // relu at the kink: the one-sided slopes disagree
  const TapeFn r = [](Tape<double>&, const std::vector<V>& x) { return relu(x[0]); };
  CHECK(probe_direction(r, {{{1}, {0.0}}}, 0, dir, {}).straddles_kink());
  CHECK_FALSE(probe_direction(r, {{{1}, {0.5}}}, 0, dir, {}).straddles_kink());
}

TEST_CASE("every op passes the finite-difference suite") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& c : op_gradcheck_suite(seed)) {
      INFO(c.name, " seed ", seed, " error ", c.error);
      CHECK(c.passed());
    }
  }
}

TEST_CASE("tape errors") {
  Tape<double> t;
  CHECK_THROWS_AS(t.constant({2, 2}, {1, 2, 3}), Error);
  const auto x = t.parameter({2}, {1, 2});
  CHECK_THROWS_AS(t.backward(x), Error);
  CHECK_THROWS_AS(add(x, t.constant({3}, {1, 2, 3})), Error);
}

TEST_CASE("lovasz_grad hand values") {
  // sorted foreground (1, 0, 1): gts = 2
  // J1 = 1 - 1/2 = 0.5, J2 = 1 - 1/3 = 2/3, J3 = 1 - 0/3 = 1
  const std::vector<std::uint8_t> fg{1, 0, 1};
  const auto g = lovasz_grad(fg);
  CHECK(g[0] == doctest::Approx(0.5));
  CHECK(g[1] == doctest::Approx(1.0 / 6.0));
  CHECK(g[2] == doctest::Approx(1.0 / 3.0));
}
