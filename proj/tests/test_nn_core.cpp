#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedfusion/layers.hpp"
#include "fedfusion/ops.hpp"
#include "support.hpp"

using namespace fedfusion;
using testing::random_tensor;

namespace {

// Six nested loops, no padding arithmetic shared with the implementation.
Tensor direct_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, bool same) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const long K = static_cast<long>(k.dim(0));
  const long cin = static_cast<long>(k.dim(2)), cout = static_cast<long>(k.dim(3));
  const long pad = same ? (K - 1) / 2 : 0;
  const long s = static_cast<long>(stride);
  const long Ho = (H - K + 2 * pad) / s + 1, Wo = (W - K + 2 * pad) / s + 1;
  Tensor out({static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo), static_cast<std::size_t>(cout)});
  for (long i = 0; i < Ho; ++i)
    for (long j = 0; j < Wo; ++j)
      for (long o = 0; o < cout; ++o) {
        double acc = b[o];
        for (long di = 0; di < K; ++di)
          for (long dj = 0; dj < K; ++dj)
            for (long c = 0; c < cin; ++c) {
              const long y = i * s + di - pad, xx = j * s + dj - pad;
              if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
              acc += x[(y * W + xx) * cin + c] * k[((di * K + dj) * cin + c) * cout + o];
            }
        out[(i * Wo + j) * cout + o] = acc;
      }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("numel matches data length and zero dims are rejected") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  }

  TEST_CASE("stack adds a leading axis") {
    std::vector<Tensor> parts{Tensor({2}, 1.0), Tensor({2}, 2.0)};
    Tensor s = stack(parts);
    CHECK(s.shape() == Shape{2, 2});
    CHECK(s.slice(1)[0] == 2.0);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("identity 1x1 kernel reproduces the input") {
    Rng rng(1);
    Tensor x = random_tensor({3, 3, 1}, rng);
    Tensor k({1, 1, 1, 1}, 1.0);
    CHECK(conv2d_forward(x, k, Tensor({1}), 1, Padding::Same) == x);
  }

  TEST_CASE("all-ones 3x3 over all-ones 4x4, valid padding, gives 2x2 of nines") {
    Tensor y = conv2d_forward(Tensor({4, 4, 1}, 1.0), Tensor({3, 3, 1, 1}, 1.0), Tensor({1}), 1, Padding::Valid);
    CHECK(y.shape() == Shape{2, 2, 1});
    for (double v : y.data()) CHECK(v == 9.0);
  }

  TEST_CASE("matches the direct summation oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      Tensor x = random_tensor({5, 5, 2}, rng);
      Tensor k = random_tensor({3, 3, 2, 3}, rng);
      Tensor b = random_tensor({3}, rng);
      for (std::size_t stride : {1, 2}) {
        for (bool same : {true, false}) {
          Tensor got = conv2d_forward(x, k, b, stride, same ? Padding::Same : Padding::Valid);
          Tensor want = direct_conv(x, k, b, stride, same);
          REQUIRE(got.shape() == want.shape());
          CHECK(testing::max_abs_diff(got, want) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("output size formula") {
    CHECK(conv_output_size(32, 3, 1, Padding::Same) == 32);
    CHECK(conv_output_size(32, 3, 1, Padding::Valid) == 30);
    CHECK(conv_output_size(7, 3, 2, Padding::Valid) == 3);
  }

  TEST_CASE("channel mismatch names both shapes") {
    try {
      conv2d_forward(Tensor({4, 4, 2}), Tensor({3, 3, 3, 1}), Tensor({1}), 1, Padding::Same);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[4,4,2]") != std::string::npos);
      CHECK(msg.find("3") != std::string::npos);
    }
  }

  TEST_CASE("valid padding with a kernel larger than the input is rejected") {
    CHECK_THROWS(conv2d_forward(Tensor({2, 2, 1}), Tensor({3, 3, 1, 1}), Tensor({1}), 1, Padding::Valid));
  }

  TEST_CASE("zero upstream gradient gives zero gradients") {
    Rng rng(3);
    Tensor x = random_tensor({4, 4, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 2}, rng);
    Conv2dGrads g = conv2d_backward(Tensor({4, 4, 2}), x, k, 1, Padding::Same);
    for (double v : g.input.data()) CHECK(v == 0.0);
    for (double v : g.kernel.data()) CHECK(v == 0.0);
    for (double v : g.bias.data()) CHECK(v == 0.0);
  }

  TEST_CASE("backward without a forward cache is an error") {
    Rng init(1);
    Conv2D conv("c", 3, 1, 1, init);
    CHECK_THROWS_AS(conv.backward(Tensor({1, 3, 3, 1})), std::logic_error);
    CHECK_THROWS(conv2d_backward(Tensor({3, 3, 1}), Tensor(), Tensor({3, 3, 1, 1}), 1, Padding::Same));
  }

  TEST_CASE("1x1 kernel gradient on a 3x3 input is within 1e-6") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng init(seed);
      Conv2D conv("c", 1, 1, 1, init);
      Rng rng(seed + 100);
      auto rep = testing::layer_gradcheck(conv, random_tensor({1, 3, 3, 1}, rng), seed);
      CHECK_MESSAGE(rep.max_rel < 1e-6, rep.worst);
    }
  }
}

TEST_SUITE("dense") {
  TEST_CASE("identity weights and zero bias reproduce the input") {
    Tensor w({3, 3});
    for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
    Tensor x({3}, std::vector<double>{1.5, -2.0, 0.25});
    CHECK(dense_forward(x, w, Tensor({3})) == x);
  }

  TEST_CASE("zero weights give the bias") {
    Tensor b({2}, std::vector<double>{0.5, -1.0});
    CHECK(dense_forward(Tensor({4}, 3.0), Tensor({4, 2}), b) == b);
  }

  TEST_CASE("dimension mismatch is a structured error") {
    CHECK_THROWS_AS(dense_forward(Tensor({3}), Tensor({4, 2}), Tensor({2})), ShapeError);
  }

  TEST_CASE("8 to 4 gradient within 1e-6") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng init(seed);
      Dense d("d", 8, 4, init);
      Rng rng(seed + 7);
      auto rep = testing::layer_gradcheck(d, random_tensor({3, 8}, rng), seed);
      CHECK_MESSAGE(rep.max_rel < 1e-6, rep.worst);
    }
  }
}

TEST_SUITE("batch_norm") {
  TEST_CASE("already standardized batch passes through") {
    Tensor x({4, 1}, std::vector<double>{-1.0, 1.0, -1.0, 1.0});
    BatchNormStats st{Tensor({1}), Tensor({1}, 1.0), 0.9};
    Tensor y = batch_norm(x, Tensor({1}, 1.0), Tensor({1}, 0.0), st, Mode::Train);
    CHECK(testing::max_abs_diff(x, y) < 1e-5);
  }

  TEST_CASE("train output has zero mean and unit variance per feature") {
    Rng rng(5);
    Tensor x = random_tensor({16, 3}, rng, -4, 9);
    BatchNormStats st{Tensor({3}), Tensor({3}, 1.0), 0.9};
    Tensor y = batch_norm(x, Tensor({3}, 1.0), Tensor({3}, 0.0), st, Mode::Train);
    for (std::size_t f = 0; f < 3; ++f) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 16; ++i) m += y.at(i, f) / 16;
      for (std::size_t i = 0; i < 16; ++i) v += (y.at(i, f) - m) * (y.at(i, f) - m) / 16;
      CHECK(std::abs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  TEST_CASE("constant batch gives beta") {
    BatchNormStats st{Tensor({2}), Tensor({2}, 1.0), 0.9};
    Tensor beta({2}, std::vector<double>{0.3, -0.7});
    Tensor y = batch_norm(Tensor({5, 2}, 4.0), Tensor({2}, 1.0), beta, st, Mode::Train);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(y.at(i, 0) == doctest::Approx(0.3));
      CHECK(y.at(i, 1) == doctest::Approx(-0.7));
    }
  }

  TEST_CASE("batch of one in train mode is rejected, inference uses running stats") {
    BatchNormStats st{Tensor({1}, 2.0), Tensor({1}, 4.0), 0.9};
    CHECK_THROWS(batch_norm(Tensor({1, 1}, 3.0), Tensor({1}, 1.0), Tensor({1}), st, Mode::Train));
    Tensor y = batch_norm(Tensor({1, 1}, 4.0), Tensor({1}, 1.0), Tensor({1}), st, Mode::Infer);
    CHECK(y[0] == doctest::Approx(2.0 / std::sqrt(4.0 + kNormEpsilon)));
  }

  TEST_CASE("gradient within 1e-4") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      BatchNorm bn("bn", 3);
      Rng rng(seed);
      auto rep = testing::layer_gradcheck(bn, random_tensor({6, 3}, rng, -2, 3), seed);
      CHECK_MESSAGE(rep.max_rel < 1e-4, rep.worst);
    }
  }
}

TEST_SUITE("pointwise") {
  TEST_CASE("dropout is the identity in inference and inverted in training") {
    Rng rng(1);
    Tensor x = random_tensor({200}, rng);
    CHECK(dropout(x, 0.5, Mode::Infer, rng).output == x);
    DropoutResult d = dropout(x, 0.5, Mode::Train, rng);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (d.output[i] != 0.0) {
        ++kept;
        CHECK(d.output[i] == doctest::Approx(2.0 * x[i]));
      }
    }
    CHECK(kept > 60);
    CHECK(kept < 140);
    CHECK_THROWS(dropout(x, 1.0, Mode::Train, rng));
    CHECK_THROWS(dropout(x, -0.1, Mode::Train, rng));
  }

  TEST_CASE("global average pool of a constant plane") {
    Tensor x({4, 4, 2});
    for (std::size_t i = 0; i < 16; ++i) {
      x[2 * i] = 3.5;
      x[2 * i + 1] = -1.0;
    }
    Tensor y = global_avg_pool(x);
    CHECK(y[0] == 3.5);
    CHECK(y[1] == -1.0);
  }

  TEST_CASE("relu(-x) * relu(x) vanishes") {
    Rng rng(2);
    Tensor x = random_tensor({64}, rng);
    Tensor neg = x;
    for (double& v : neg.data()) v = -v;
    Tensor a = relu(x), b = relu(neg);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(a[i] * b[i] == 0.0);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("uniform logits give uniform probabilities") {
    Tensor p = softmax(Tensor({3}, 0.0));
    for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("large logits do not overflow") {
    Tensor p = softmax(Tensor({3}, std::vector<double>{1000.0, 0.0, 0.0}));
    CHECK(p.all_finite());
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(p[1] < 1e-300);
  }

  TEST_CASE("NaN input is an error") {
    CHECK_THROWS(softmax(Tensor({2}, std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN()})));
  }

  TEST_CASE("sums to one and is shift invariant") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      Tensor z = random_tensor({7}, rng, -30, 30);
      Tensor p = softmax(z);
      double s = 0;
      for (double v : p.data()) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-12);
      Tensor shifted = z;
      const double c = rng.uniform(-100, 100);
      for (double& v : shifted.data()) v += c;
      CHECK(testing::max_abs_diff(softmax(shifted), p) <= 1e-12);
    }
  }

  TEST_CASE("cross-entropy gradient is probs minus one-hot") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      Tensor z = random_tensor({1, 4}, rng, -3, 3);
      const std::size_t label = rng.below(4);
      const std::vector<std::size_t> labels{label};
      LossAndGrad lg = softmax_cross_entropy(z, labels);
      Tensor p = softmax(z.slice(0));
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(lg.grad_logits[i] == doctest::Approx(p[i] - (i == label ? 1.0 : 0.0)).epsilon(1e-14));
        Tensor up = z, down = z;
        up[i] += testing::kFdStep;
        down[i] -= testing::kFdStep;
        const double fd = (softmax_cross_entropy(up, labels).loss - softmax_cross_entropy(down, labels).loss) /
                          (2 * testing::kFdStep);
        CHECK(testing::rel_error(lg.grad_logits[i], fd) < 1e-6);
      }
      CHECK(lg.loss == doctest::Approx(cross_entropy(p, label)));
    }
  }
}

TEST_SUITE("sgd") {
  TEST_CASE("zero learning rate leaves values, gradients get zeroed") {
    Parameter p("w", Tensor({2}, 1.0));
    p.grad.fill(3.0);
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.0);
    CHECK(p.value[0] == 1.0);
    CHECK(p.grad[0] == 0.0);
  }

  TEST_CASE("scalar rule") {
    Parameter p("w", Tensor({1}, 1.0));
    p.grad[0] = 2.0;
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.1);
    CHECK(p.value[0] == doctest::Approx(0.8));
  }

  TEST_CASE("non-finite gradient names the parameter") {
    Parameter p("layer.kernel", Tensor({1}, 1.0));
    p.grad[0] = std::numeric_limits<double>::infinity();
    std::vector<Parameter*> ps{&p};
    try {
      sgd_step(ps, 0.1);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("layer.kernel") != std::string::npos);
    }
    CHECK(p.value[0] == 1.0);
  }

  TEST_CASE("frozen parameters stay put") {
    Parameter p("w", Tensor({1}, 1.0));
    p.trainable = false;
    p.grad[0] = 5.0;
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.1);
    CHECK(p.value[0] == 1.0);
  }

  TEST_CASE("a step on a convex quadratic lowers the loss") {
    Rng rng(4);
    Parameter p("w", random_tensor({5}, rng, -3, 3));
    Tensor target = random_tensor({5}, rng);
    auto loss = [&] {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i) s += (p.value[i] - target[i]) * (p.value[i] - target[i]);
      return s;
    };
    const double before = loss();
    for (std::size_t i = 0; i < 5; ++i) p.grad[i] = 2 * (p.value[i] - target[i]);
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.1);
    CHECK(loss() < before);
  }

  TEST_CASE("momentum accumulates velocity") {
    Parameter p("w", Tensor({1}, 0.0));
    std::vector<Parameter*> ps{&p};
    SgdOptimizer opt(1.0, 0.9);
    p.grad[0] = 1.0;
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(-1.0));
    p.grad[0] = 1.0;
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(-2.9));
  }
}
