#pragma once

// Shifted-window attention: patch embedding, window partitioning, cyclic
// shifts and multi-head attention restricted to each window.
//
// Relative position bias and the shifted-window attention mask are not
// modelled; a shifted grid is treated as a torus.

#include <cstdint>
#include <vector>

#include "fedfusion/layers.hpp"

namespace fedfusion {

struct SwinConfig {
  std::size_t patch_size = 2;
  std::size_t num_heads = 4;
  std::size_t window_size = 4;
  std::size_t shift_size = 1;
  std::size_t embed_dim = 32;
  std::size_t mlp_ratio = 2;
  std::size_t depth = 1;  // number of (shift 0, shift s) block pairs
};

// Throws std::invalid_argument naming the first violated constraint.
void validate_swin_config(const SwinConfig& cfg, std::size_t height, std::size_t width);

// image[H,W,C] -> tokens[H/p, W/p, D]. Each token projects its patch pixels
// flattened in (dy, dx, c) order; weights are [p*p*C, D].
Tensor patch_embed(const Tensor& image, std::size_t patch, const Tensor& weights, const Tensor& bias);

struct PatchEmbedGrads {
  Tensor weights;
  Tensor bias;
};

PatchEmbedGrads patch_embed_backward(const Tensor& grad_tokens, const Tensor& image, std::size_t patch,
                                     const Tensor& weights);

// tokens[Ht,Wt,D] -> [num_windows, M*M, D]; windows in row-major grid order.
Tensor window_partition(const Tensor& tokens, std::size_t window);
Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t grid_h, std::size_t grid_w);

// Toroidal roll by (-shift, -shift): output(i, j) = input(i + shift, j + shift).
Tensor cyclic_shift(const Tensor& tokens, std::int64_t shift);

struct WindowAttentionCache {
  Tensor input;    // [T, D]
  Tensor qkv;      // [T, 3D]
  Tensor attn;     // [heads, T, T], rows sum to 1
  Tensor context;  // [T, D]
};

// Scaled dot-product multi-head self-attention over one window.
// qkv_w [D,3D] packs query, key and value columns; proj_w [D,D].
Tensor window_attention(const Tensor& tokens, std::size_t heads, const Tensor& qkv_w, const Tensor& qkv_b,
                        const Tensor& proj_w, const Tensor& proj_b, WindowAttentionCache* cache = nullptr);

struct WindowAttentionGrads {
  Tensor input;
  Tensor qkv_w;
  Tensor qkv_b;
  Tensor proj_w;
  Tensor proj_b;
};

WindowAttentionGrads window_attention_backward(const Tensor& grad_out, const WindowAttentionCache& cache,
                                               std::size_t heads, const Tensor& qkv_w, const Tensor& proj_w);

class PatchEmbed : public Layer {
 public:
  PatchEmbed(std::string name, std::size_t patch, std::size_t in_channels, std::size_t embed_dim, Rng& init);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

 private:
  std::size_t patch_;
  Parameter weights_;
  Parameter bias_;
  Tensor cached_input_;
};

// Pre-norm transformer block on a token grid:
//   x1 = x + unshift(W-MSA(shift(LN(x))));  out = x1 + MLP(LN(x1))
class SwinBlock : public Layer {
 public:
  SwinBlock(std::string name, std::size_t dim, std::size_t heads, std::size_t window, std::size_t shift,
            std::size_t mlp_hidden, Rng& init);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return input; }
  void collect_parameters(std::vector<Parameter*>& out) override;

  std::size_t shift() const { return shift_; }

 private:
  struct SampleCache {
    LayerNormCache norm1;
    std::vector<WindowAttentionCache> windows;
    LayerNormCache norm2;
    Tensor norm2_out;
    Tensor hidden_pre;
    Tensor hidden;
  };

  Tensor forward_sample(const Tensor& x, SampleCache& cache);
  Tensor backward_sample(const Tensor& grad_out, const SampleCache& cache);

  std::size_t dim_;
  std::size_t heads_;
  std::size_t window_;
  std::size_t shift_;
  std::size_t mlp_hidden_;
  Parameter norm1_gamma_, norm1_beta_;
  Parameter qkv_w_, qkv_b_, proj_w_, proj_b_;
  Parameter norm2_gamma_, norm2_beta_;
  Parameter fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  std::vector<SampleCache> caches_;
  Shape grid_;
};

}  // namespace fedfusion
