#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "dosepred/rng.hpp"
#include "dosepred/tensor.hpp"

using namespace dosepred;

namespace {

Tensor random_tensor(Shape shape, RandomStream& rng, double lo = -1.0,
                     double hi = 1.0, bool requires_grad = true) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// central finite differences of a scalar function of one tensor's entries
double max_rel_err_fd(Tensor& x, const std::function<Tensor(Tape&)>& f,
                      double step = 1e-4) {
  x.zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + step;
    double fp;
    {
      Tape t;
      fp = f(t).value();
    }
    x.data()[i] = saved - step;
    double fm;
    {
      Tape t;
      fm = f(t).value();
    }
    x.data()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double analytic = x.grad()[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul hand examples") {
  Tape tape;
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {1, 1});
  Tensor c = matmul(tape, a, b);
  CHECK(c.data() == std::vector<double>{3, 7});

  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor x({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(tape, eye, x).data() == x.data());

  CHECK_THROWS(matmul(tape, a, Tensor({3, 1}, {1, 1, 1})));
}

TEST_CASE("matmul gradient vs finite differences") {
  RandomStream rng(1);
  for (int it = 0; it < 20; ++it) {
    Tensor a = random_tensor({5, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    auto f = [&](Tape& t) { return sum(t, matmul(t, a, b)); };
    CHECK(max_rel_err_fd(a, f, 1e-5) < 1e-8);
    CHECK(max_rel_err_fd(b, f, 1e-5) < 1e-8);
  }
}

TEST_CASE("softmax rows sum to one, stays finite at large logits") {
  Tape tape;
  Tensor flat({1, 3}, {0, 0, 0});
  auto s = softmax_rows(tape, flat);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big({1, 2}, {1000, 0});
  auto sb = softmax_rows(tape, big);
  CHECK(sb.data()[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sb.data()[1] < 1e-9);

  RandomStream rng(2);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({4, 6}, rng, -1000.0, 1000.0);
    auto y = softmax_rows(tape, x);
    for (int r = 0; r < 4; ++r) {
      double row = 0.0;
      for (int c = 0; c < 6; ++c) row += y.data()[static_cast<std::size_t>(r) * 6 + c];
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax gradient") {
  RandomStream rng(3);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({4, 6}, rng);
    Tensor w = random_tensor({4, 6}, rng, -1, 1, false);
    auto f = [&](Tape& t) { return sum(t, mul(t, softmax_rows(t, x), w)); };
    CHECK(max_rel_err_fd(x, f) < 1e-6);
  }
}

TEST_CASE("elementwise op gradients") {
  RandomStream rng(4);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({3, 5}, rng, -2.0, 2.0);
    Tensor w = random_tensor({3, 5}, rng, -1, 1, false);
    auto weighted = [&](Tensor (*op)(Tape&, const Tensor&)) {
      return [&, op](Tape& t) { return sum(t, mul(t, op(t, x), w)); };
    };
    CHECK(max_rel_err_fd(x, weighted(&sigmoid)) < 1e-6);
    CHECK(max_rel_err_fd(x, weighted(&softplus)) < 1e-6);
    CHECK(max_rel_err_fd(x, weighted(&tanh_op)) < 1e-6);
    auto f2 = [&](Tape& t) { return sum(t, mul(t, mul(t, x, x), w)); };
    CHECK(max_rel_err_fd(x, f2) < 1e-6);
  }
}

TEST_CASE("softplus does not overflow") {
  Tape tape;
  Tensor x({2}, {800.0, -800.0});
  auto y = softplus(tape, x);
  CHECK(y.data()[0] == doctest::Approx(800.0));
  CHECK(y.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("avg_pool3d") {
  Tape tape;
  Tensor c = Tensor::full({2, 4, 4, 4}, 3.25);
  auto p = avg_pool3d(tape, c, 2);
  for (double v : p.data()) CHECK(v == 3.25);

  std::vector<double> vals(8);
  for (int i = 0; i < 8; ++i) vals[static_cast<std::size_t>(i)] = i + 1;
  Tensor small({1, 2, 2, 2}, vals);
  CHECK(avg_pool3d(tape, small, 2).data()[0] == 4.5);

  // forward against a naive block-mean oracle
  RandomStream rng(5);
  Tensor x = random_tensor({2, 8, 8, 8}, rng);
  auto y = avg_pool3d(tape, x, 2);
  for (int c0 = 0; c0 < 2; ++c0)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) {
          double s = 0.0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int d = 0; d < 2; ++d)
                s += x.data()[((static_cast<std::size_t>(c0) * 8 + 2 * i + a) * 8 +
                               2 * j + b) * 8 + 2 * k + d];
          const double want = s / 8.0;
          const double got =
              y.data()[((static_cast<std::size_t>(c0) * 4 + i) * 4 + j) * 4 + k];
          CHECK(got == want);
        }

  CHECK_THROWS(avg_pool3d(tape, Tensor({1, 3, 4, 4}), 2));
}

TEST_CASE("pool then upsample of a constant is the identity") {
  Tape tape;
  Tensor c = Tensor::full({3, 8, 8, 8}, -1.5);
  auto back = upsample_nearest3d(tape, avg_pool3d(tape, c, 4), 4);
  CHECK(back.data() == c.data());
}

TEST_CASE("pool and upsample gradients") {
  RandomStream rng(6);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({2, 4, 4, 4}, rng);
    Tensor w = random_tensor({2, 2, 2, 2}, rng, -1, 1, false);
    auto f = [&](Tape& t) { return sum(t, mul(t, avg_pool3d(t, x, 2), w)); };
    CHECK(max_rel_err_fd(x, f) < 1e-6);
    Tensor w2 = random_tensor({2, 8, 8, 8}, rng, -1, 1, false);
    auto g = [&](Tape& t) {
      return sum(t, mul(t, upsample_nearest3d(t, x, 2), w2));
    };
    CHECK(max_rel_err_fd(x, g) < 1e-6);
  }
}

TEST_CASE("per_channel_affine") {
  Tape tape;
  Tensor x({1, 1}, std::vector<double>{3.0});
  Tensor s({1}, std::vector<double>{2.0});
  Tensor b({1}, std::vector<double>{-1.0});
  CHECK(per_channel_affine(tape, x, s, b).data()[0] == 5.0);

  RandomStream rng(7);
  for (int it = 0; it < 20; ++it) {
    Tensor xi = random_tensor({7, 5}, rng);
    Tensor si = random_tensor({5}, rng, 0.5, 1.5);
    Tensor bi = random_tensor({5}, rng, -0.5, 0.5);
    Tensor w = random_tensor({7, 5}, rng, -1, 1, false);
    auto f = [&](Tape& t) {
      return sum(t, mul(t, per_channel_affine(t, xi, si, bi), w));
    };
    CHECK(max_rel_err_fd(si, f) < 1e-7);
    CHECK(max_rel_err_fd(bi, f) < 1e-7);
    CHECK(max_rel_err_fd(xi, f) < 1e-7);
  }
}

TEST_CASE("layer_norm normalizes per token") {
  Tape tape;
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::full({4}, 0.0);

  Tensor flat({1, 4}, {5, 5, 5, 5});
  for (double v : layer_norm(tape, flat, gamma, beta).data())
    CHECK(std::abs(v) < 1e-9);

  Tensor two({1, 2}, {1, -1});
  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2 = Tensor::full({2}, 0.0);
  auto y2 = layer_norm(tape, two, g2, b2);
  CHECK(y2.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y2.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));

  RandomStream rng(8);
  Tensor x = random_tensor({6, 8}, rng, -3, 3);
  Tensor g8 = Tensor::full({8}, 1.0);
  Tensor b8 = Tensor::full({8}, 0.0);
  auto y = layer_norm(tape, x, g8, b8);
  for (int r = 0; r < 6; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 8; ++c) mean += y.data()[static_cast<std::size_t>(r) * 8 + c];
    mean /= 8.0;
    for (int c = 0; c < 8; ++c) {
      const double d = y.data()[static_cast<std::size_t>(r) * 8 + c] - mean;
      var += d * d;
    }
    var /= 8.0;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var > 1.0 - 1e-4);
    CHECK(var < 1.0 + 1e-6);
  }
}

TEST_CASE("layer_norm gradients") {
  RandomStream rng(9);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({5, 6}, rng);
    Tensor g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor b = random_tensor({6}, rng, -0.5, 0.5);
    Tensor w = random_tensor({5, 6}, rng, -1, 1, false);
    auto f = [&](Tape& t) {
      return sum(t, mul(t, layer_norm(t, x, g, b), w));
    };
    CHECK(max_rel_err_fd(x, f) < 1e-6);
    CHECK(max_rel_err_fd(g, f) < 1e-6);
    CHECK(max_rel_err_fd(b, f) < 1e-6);
  }
}

TEST_CASE("token round trip and transpose") {
  RandomStream rng(10);
  Tape tape;
  Tensor x = random_tensor({3, 2, 2, 2}, rng);
  Tensor tok = tokens_from_volume(tape, x);
  CHECK(tok.shape() == Shape{8, 3});
  Tensor back = volume_from_tokens(tape, tok, 2, 2, 2);
  CHECK(back.data() == x.data());

  Tensor m = random_tensor({3, 4}, rng);
  Tensor tt = transpose(tape, transpose(tape, m));
  CHECK(tt.data() == m.data());
}

TEST_CASE("concat and slice columns invert each other") {
  RandomStream rng(11);
  Tape tape;
  Tensor a = random_tensor({4, 2}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  Tensor cat = concat_cols(tape, {a, b});
  CHECK(cat.shape() == Shape{4, 5});
  CHECK(slice_cols(tape, cat, 0, 2).data() == a.data());
  CHECK(slice_cols(tape, cat, 2, 5).data() == b.data());

  Tensor w = random_tensor({4, 5}, rng, -1, 1, false);
  auto f = [&](Tape& t) { return sum(t, mul(t, concat_cols(t, {a, b}), w)); };
  CHECK(max_rel_err_fd(a, f) < 1e-6);
  CHECK(max_rel_err_fd(b, f) < 1e-6);
}

TEST_CASE("conv3d matches direct correlation oracle") {
  RandomStream rng(12);
  Tensor x = random_tensor({2, 4, 4, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tape tape;
  auto y = conv3d(tape, x, w, b, 1);
  CHECK(y.shape() == Shape{3, 4, 4, 4});

  auto xat = [&](int c, int i, int j, int k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= 4 || j >= 4 || k >= 4) return 0.0;
    return x.data()[((static_cast<std::size_t>(c) * 4 + i) * 4 + j) * 4 + k];
  };
  for (int co = 0; co < 3; ++co)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) {
          double s = b.data()[static_cast<std::size_t>(co)];
          for (int ci = 0; ci < 2; ++ci)
            for (int a = 0; a < 3; ++a)
              for (int p = 0; p < 3; ++p)
                for (int q = 0; q < 3; ++q)
                  s += w.data()[((((static_cast<std::size_t>(co) * 2 + ci) * 3 + a) * 3 + p) * 3 + q)] *
                       xat(ci, i + a - 1, j + p - 1, k + q - 1);
          const double got =
              y.data()[((static_cast<std::size_t>(co) * 4 + i) * 4 + j) * 4 + k];
          CHECK(got == doctest::Approx(s).epsilon(1e-12));
        }

  auto y2 = conv3d(tape, x, w, b, 2);
  CHECK(y2.shape() == Shape{3, 2, 2, 2});
  for (int co = 0; co < 3; ++co)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          const double got =
              y2.data()[((static_cast<std::size_t>(co) * 2 + i) * 2 + j) * 2 + k];
          const double want =
              y.data()[((static_cast<std::size_t>(co) * 4 + 2 * i) * 4 + 2 * j) * 4 + 2 * k];
          CHECK(got == want);
        }
}

TEST_CASE("conv3d gradients") {
  RandomStream rng(13);
  for (int stride : {1, 2}) {
    Tensor x = random_tensor({2, 4, 4, 4}, rng);
    Tensor w = random_tensor({2, 2, 3, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    const int o = stride == 1 ? 4 : 2;
    Tensor wt = random_tensor({2, o, o, o}, rng, -1, 1, false);
    auto f = [&](Tape& t) {
      return sum(t, mul(t, conv3d(t, x, w, b, stride), wt));
    };
    CHECK(max_rel_err_fd(x, f) < 1e-6);
    CHECK(max_rel_err_fd(w, f) < 1e-6);
    CHECK(max_rel_err_fd(b, f) < 1e-6);
  }
}

TEST_CASE("soft_dvh_op gradient") {
  RandomStream rng(14);
  std::vector<double> edges{10.0, 30.0, 50.0};
  for (int it = 0; it < 20; ++it) {
    Tensor d = random_tensor({4, 4, 4}, rng, 0.0, 70.0);
    Tensor mask({4, 4, 4});
    for (double& v : mask.data()) v = rng.bernoulli(0.6) ? 1.0 : 0.0;
    mask.data()[0] = 1.0;
    Tensor w = random_tensor({3}, rng, -1, 1, false);
    auto f = [&](Tape& t) {
      return sum(t, mul(t, soft_dvh_op(t, d, mask, edges, 4.0), w));
    };
    CHECK(max_rel_err_fd(d, f, 5e-4) < 1e-6);
  }
}

TEST_CASE("backward basics and accumulation semantics") {
  Tensor x({3}, {1.0, -2.0, 0.5}, true);
  {
    Tape tape;
    Tensor loss = sum(tape, x);
    x.zero_grad();
    tape.backward(loss);
  }
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  {
    Tape tape;
    Tensor loss = sum(tape, mul(tape, x, x));
    x.zero_grad();
    tape.backward(loss);
  }
  CHECK(x.grad() == std::vector<double>{2, -4, 1});

  // backward rejects non-scalars
  Tape tape;
  Tensor v = add(tape, x, x);
  CHECK_THROWS(tape.backward(v));
}

TEST_CASE("backward is linear over losses") {
  RandomStream rng(15);
  Tensor x = random_tensor({4, 4}, rng);
  auto grad_of = [&](const std::function<Tensor(Tape&)>& f) {
    x.zero_grad();
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
    return x.grad();
  };
  auto f = [&](Tape& t) { return sum(t, mul(t, x, x)); };
  auto g = [&](Tape& t) { return sum(t, sigmoid(t, x)); };
  auto combo = [&](Tape& t) {
    return add(t, scale(t, f(t), 2.0), scale(t, g(t), -3.0));
  };
  const auto gf = grad_of(f);
  const auto gg = grad_of(g);
  const auto gc = grad_of(combo);
  for (std::size_t i = 0; i < gc.size(); ++i)
    CHECK(std::abs(gc[i] - (2.0 * gf[i] - 3.0 * gg[i])) < 1e-12);
}

TEST_CASE("non-finite values are rejected at the producing op") {
  Tape tape;
  Tensor a({1}, std::vector<double>{1e308});
  CHECK_THROWS_AS(add(tape, a, a), std::runtime_error);
  Tensor z({1}, std::vector<double>{0.0});
  CHECK_NOTHROW(add(tape, z, z));
}

TEST_CASE("reshape shares data and requires matching element count") {
  Tape tape;
  RandomStream rng(16);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor r = reshape(tape, x, {6});
  CHECK(r.data() == x.data());
  CHECK_THROWS(reshape(tape, x, {5}));
}
