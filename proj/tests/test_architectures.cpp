#include <doctest.h>

#include <cmath>

#include "fedfusion/architectures.hpp"
#include "fedfusion/swin.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace fedfusion;
using testing::random_tensor;

namespace {

std::size_t conv_params(std::size_t k, std::size_t cin, std::size_t cout) { return k * k * cin * cout + cout; }
std::size_t dense_params(std::size_t in, std::size_t out) { return in * out + out; }

// Support (bounding box) of the non-zero entries of a [1,H,W,1] map.
struct Box {
  std::size_t r0 = ~0u, r1 = 0, c0 = ~0u, c1 = 0;
};
Box support(const Tensor& t) {
  Box b;
  for (std::size_t i = 0; i < t.dim(1); ++i) {
    for (std::size_t j = 0; j < t.dim(2); ++j) {
      if (t[i * t.dim(2) + j] != 0.0) {
        b.r0 = std::min(b.r0, i), b.r1 = std::max(b.r1, i);
        b.c0 = std::min(b.c0, j), b.c1 = std::max(b.c1, j);
      }
    }
  }
  return b;
}

}  // namespace

TEST_SUITE("swin") {
  TEST_CASE("14x14 grid with window 7 gives four windows") {
    Rng rng(1);
    const Tensor x = random_tensor({14, 14, 3}, rng);
    const Tensor w = window_partition(x, 7);
    CHECK(w.shape() == Shape{4, 49, 3});
    CHECK(window_reverse(w, 7, 14, 14) == x);
  }

  TEST_CASE("partition index map and shift round trips hold on random grids") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto v = testing::swin_partition_roundtrip(seed);
      CHECK_MESSAGE(v.ok, v.detail);
    }
  }

  TEST_CASE("indivisible grids are rejected") {
    CHECK_THROWS_AS(window_partition(Tensor({6, 6, 2}), 4), std::invalid_argument);
    CHECK_THROWS(window_reverse(Tensor({3, 4, 2}), 2, 4, 4));
  }

  TEST_CASE("shift of one on a 3x3 grid moves (0,0) to (2,2)") {
    Tensor x({3, 3, 1});
    for (std::size_t i = 0; i < 9; ++i) x[i] = static_cast<double>(i);
    const Tensor y = cyclic_shift(x, 1);
    // output(i,j) = input(i+1, j+1): the original (0,0) value reappears at (2,2).
    CHECK(y.at(2, 2, 0) == x.at(0, 0, 0));
    CHECK(y.at(0, 0, 0) == x.at(1, 1, 0));
    CHECK(cyclic_shift(x, 0) == x);
    CHECK(cyclic_shift(y, -1) == x);
    CHECK(cyclic_shift(x, 4) == y);
  }

  TEST_CASE("attention rows sum to one") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto v = testing::attention_rows_sum_to_one(seed);
      CHECK_MESSAGE(v.ok, v.detail);
    }
  }

  TEST_CASE("a single-token window returns the projected value of that token") {
    Rng rng(7);
    const std::size_t D = 4;
    const Tensor x = random_tensor({1, D}, rng);
    const Tensor qkv_w = random_tensor({D, 3 * D}, rng), qkv_b = random_tensor({3 * D}, rng);
    const Tensor proj_w = random_tensor({D, D}, rng), proj_b = random_tensor({D}, rng);
    const Tensor out = window_attention(x, 2, qkv_w, qkv_b, proj_w, proj_b);
    std::vector<double> v(D);
    for (std::size_t d = 0; d < D; ++d) {
      v[d] = qkv_b[2 * D + d];
      for (std::size_t i = 0; i < D; ++i) v[d] += x[i] * qkv_w.at(i, 2 * D + d);
    }
    for (std::size_t d = 0; d < D; ++d) {
      double want = proj_b[d];
      for (std::size_t i = 0; i < D; ++i) want += v[i] * proj_w.at(i, d);
      CHECK(out[d] == doctest::Approx(want).epsilon(1e-12));
    }
  }

  TEST_CASE("heads must divide the embedding width") {
    Rng rng(1);
    CHECK_THROWS_AS(window_attention(Tensor({2, 5}), 2, Tensor({5, 15}), Tensor({15}), Tensor({5, 5}), Tensor({5})),
                    std::invalid_argument);
    CHECK_THROWS_AS(SwinBlock("b", 6, 4, 2, 0, 8, rng), std::invalid_argument);
    CHECK_THROWS_AS(SwinBlock("b", 8, 2, 2, 2, 8, rng), std::invalid_argument);
  }

  TEST_CASE("patch embedding counts tokens and an identity projection recovers pixels") {
    Tensor img({4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i) / 16.0;
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    const Tensor tokens = patch_embed(img, 2, eye, Tensor({4}));
    REQUIRE(tokens.shape() == Shape{2, 2, 4});
    // Token (1,0) covers rows 2-3, columns 0-1, flattened as (dy, dx).
    CHECK(tokens.at(1, 0, 0) == img.at(2, 0, 0));
    CHECK(tokens.at(1, 0, 1) == img.at(2, 1, 0));
    CHECK(tokens.at(1, 0, 2) == img.at(3, 0, 0));
    CHECK(tokens.at(1, 0, 3) == img.at(3, 1, 0));
    CHECK_THROWS(patch_embed(Tensor({5, 4, 1}), 2, eye, Tensor({4})));
  }

  TEST_CASE("shift 0 keeps windows isolated, a shifted second block mixes them") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto loc = testing::swin_locality(seed);
      CHECK(loc.own_window_change_shift0 > 1e-6);
      CHECK(loc.other_window_change_shift0 == 0.0);
      CHECK(loc.other_window_change_shifted > 1e-6);
    }
  }

  TEST_CASE("config validation") {
    SwinConfig c;
    CHECK_NOTHROW(validate_swin_config(c, 32, 32));
    c.window_size = 5;
    CHECK_THROWS_AS(validate_swin_config(c, 32, 32), std::invalid_argument);
    c = SwinConfig{};
    c.shift_size = c.window_size;
    CHECK_THROWS_AS(validate_swin_config(c, 32, 32), std::invalid_argument);
    c = SwinConfig{};
    c.num_heads = 3;
    CHECK_THROWS_AS(validate_swin_config(c, 32, 32), std::invalid_argument);
  }
}

TEST_SUITE("architectures") {
  TEST_CASE("every builder maps a batch to probability rows over three classes") {
    Rng rng(3);
    const Tensor batch = random_tensor({3, 32, 32, 1}, rng, 0.0, 1.0);
    for (ArchitectureId arch : kAllArchitectures) {
      ArchitectureOptions o;
      Model m = build_model(arch, o);
      const Tensor p = m.predict_proba(batch);
      REQUIRE(p.shape() == Shape{3, 3});
      for (std::size_t r = 0; r < 3; ++r) {
        const double s = p.at(r, 0) + p.at(r, 1) + p.at(r, 2);
        CHECK_MESSAGE(std::abs(s - 1.0) <= 1e-12, architecture_cli_name(arch));
      }
    }
  }

  TEST_CASE("parameter counts match a closed-form tally") {
    ArchitectureOptions o;
    const std::size_t w = o.conv_width;
    const std::size_t flat = (32 / 8) * (32 / 8) * 2 * w;
    const std::size_t vgg = conv_params(3, 1, w) + conv_params(3, w, 2 * w) + conv_params(3, 2 * w, 2 * w) + 2 * 2 * w +
                            dense_params(flat, 128) + 2 * 128 + dense_params(128, 64) + 2 * 64 + dense_params(64, 3);
    const std::size_t inception = conv_params(3, 1, w) + conv_params(1, w, w) + conv_params(1, w, w) +
                                  2 * conv_params(3, w, w) + conv_params(3, w, w) + dense_params(3 * w, 64) +
                                  dense_params(64, 3);
    const DenseBlockSpec s = o.dense_block;
    std::size_t dense = conv_params(3, 1, s.input_channels) + dense_params(s.output_channels(), 64) + dense_params(64, 3);
    for (std::size_t l = 0; l < s.num_layers; ++l) dense += conv_params(3, s.input_channels + l * s.growth_rate, s.growth_rate);
    const std::size_t D = o.swin.embed_dim, hid = o.swin.mlp_ratio * D;
    const std::size_t block = 2 * D + dense_params(D, 3 * D) + dense_params(D, D) + 2 * D + dense_params(D, hid) +
                              dense_params(hid, D);
    const std::size_t swin = dense_params(4, D) + 2 * block + 2 * D + dense_params(D, 3);

    CHECK(build_tiny_vgg(o).parameter_count() == vgg);
    CHECK(build_tiny_inception(o).parameter_count() == inception);
    CHECK(build_tiny_dense(o).parameter_count() == dense);
    CHECK(build_tiny_swin(o).parameter_count() == swin);
  }

  TEST_CASE("two stacked 3x3 kernels cost 18 weights per channel pair against 25 for one 5x5") {
    ArchitectureOptions o;
    Model m = build_tiny_inception(o);
    auto& mixed = dynamic_cast<ParallelConcat&>(m.body().at(3));
    Sequential& b5 = mixed.branch(1);
    auto& conv_a = dynamic_cast<Conv2D&>(b5.at(2));
    auto& conv_b = dynamic_cast<Conv2D&>(b5.at(4));
    const std::size_t pairs = o.conv_width * o.conv_width;
    CHECK((conv_a.kernel().value.size() + conv_b.kernel().value.size()) / pairs == 18);
    Rng rng(1);
    Conv2D five("five", 5, o.conv_width, o.conv_width, rng);
    CHECK(five.kernel().value.size() / pairs == 25);
  }

  TEST_CASE("two stacked 3x3 convolutions see a 5x5 neighbourhood") {
    Rng rng(5);
    Conv2D a("a", 3, 1, 1, rng), b("b", 3, 1, 1, rng);
    for (double& v : a.kernel().value.data()) v = std::abs(v) + 0.1;
    for (double& v : b.kernel().value.data()) v = std::abs(v) + 0.1;
    Tensor impulse({1, 11, 11, 1});
    impulse[5 * 11 + 5] = 1.0;
    const Tensor one = a.forward(impulse, Mode::Infer, rng);
    const Tensor two = b.forward(one, Mode::Infer, rng);
    const Box s1 = support(one), s2 = support(two);
    CHECK(s1.r1 - s1.r0 + 1 == 3);
    CHECK(s2.r0 == 3);
    CHECK(s2.r1 == 7);
    CHECK(s2.c0 == 3);
    CHECK(s2.c1 == 7);
  }

  TEST_CASE("inception concatenates its branches") {
    ArchitectureOptions o;
    Model m = build_tiny_inception(o);
    auto& mixed = dynamic_cast<ParallelConcat&>(m.body().at(3));
    CHECK(mixed.branch_count() == 3);
    CHECK(mixed.output_shape({16, 16, o.conv_width}) == Shape{16, 16, 3 * o.conv_width});
  }

  TEST_CASE("architecture names") {
    CHECK(parse_architecture("vgg") == ArchitectureId::TinyVGG);
    CHECK(parse_architecture("swin") == ArchitectureId::TinySwin);
    CHECK_THROWS_AS(parse_architecture("resnet"), std::invalid_argument);
    CHECK(architecture_from_code(3) == ArchitectureId::TinyDense);
    CHECK_FALSE(architecture_from_code(9).has_value());
    CHECK(architecture_display_name(ArchitectureId::TinyInception) == "Inception V3");
  }
}

TEST_SUITE("dense_block") {
  TEST_CASE("c0=4, g=2, L=3 gives ten output channels") {
    Rng init(1);
    DenseBlock block("block", {3, 2, 4}, init);
    Rng rng(2);
    CHECK(dense_block_forward(random_tensor({5, 5, 4}, rng), block).shape() == Shape{5, 5, 10});
  }

  TEST_CASE("an empty block is the identity") {
    Rng init(1);
    DenseBlock block("block", {0, 2, 4}, init);
    Rng rng(2);
    const Tensor x = random_tensor({1, 3, 3, 4}, rng);
    CHECK(dense_block_forward(x, block) == x);
  }

  TEST_CASE("channel arithmetic and ablation hold for random shapes") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto v = testing::dense_block_property(seed);
      CHECK_MESSAGE(v.ok, v.detail);
    }
  }

  TEST_CASE("wrong input width is rejected") {
    Rng init(1);
    DenseBlock block("block", {2, 2, 4}, init);
    CHECK_THROWS(dense_block_forward(Tensor({3, 3, 5}), block));
  }
}
