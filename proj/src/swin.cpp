#include "fedfusion/swin.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fedfusion {

void validate_swin_config(const SwinConfig& cfg, std::size_t height, std::size_t width) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid swin config: " + msg); };
  if (cfg.patch_size == 0 || cfg.num_heads == 0 || cfg.window_size == 0 || cfg.embed_dim == 0 || cfg.mlp_ratio == 0 ||
      cfg.depth == 0) {
    fail("all sizes must be positive");
  }
  if (height % cfg.patch_size != 0 || width % cfg.patch_size != 0) fail("image size not divisible by patch size");
  const std::size_t gh = height / cfg.patch_size, gw = width / cfg.patch_size;
  if (gh % cfg.window_size != 0 || gw % cfg.window_size != 0) {
    fail("token grid " + std::to_string(gh) + "x" + std::to_string(gw) + " not divisible by window size " +
         std::to_string(cfg.window_size));
  }
  if (cfg.shift_size >= cfg.window_size) fail("shift size must be smaller than window size");
  if (cfg.embed_dim % cfg.num_heads != 0) fail("embed_dim not divisible by num_heads");
}

// ---------------------------------------------------------------- patch embed

Tensor patch_embed(const Tensor& image, std::size_t patch, const Tensor& weights, const Tensor& bias) {
  if (image.rank() != 3) throw std::invalid_argument("patch_embed expects [H,W,C]");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("image " + shape_to_string(image.shape()) + " not divisible into " +
                                std::to_string(patch) + "x" + std::to_string(patch) + " patches");
  }
  const std::size_t plen = patch * patch * c;
  if (weights.rank() != 2 || weights.dim(0) != plen) {
    throw ShapeError("patch_embed weights", {plen, weights.rank() == 2 ? weights.dim(1) : 0}, weights.shape());
  }
  const std::size_t d = weights.dim(1);
  if (bias.shape() != Shape{d}) throw ShapeError("patch_embed bias", {d}, bias.shape());
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor out({gh, gw, d});
  std::vector<double> pv(plen);
  for (std::size_t ty = 0; ty < gh; ++ty) {
    for (std::size_t tx = 0; tx < gw; ++tx) {
      std::size_t p = 0;
      for (std::size_t dy = 0; dy < patch; ++dy) {
        for (std::size_t dx = 0; dx < patch; ++dx) {
          for (std::size_t ch = 0; ch < c; ++ch) pv[p++] = image.at(ty * patch + dy, tx * patch + dx, ch);
        }
      }
      double* o = out.data().data() + (ty * gw + tx) * d;
      std::copy(bias.data().begin(), bias.data().end(), o);
      matmul_acc(pv.data(), weights.data().data(), o, 1, plen, d);
    }
  }
  return out;
}

namespace {

Tensor patch_embed_backward_acc(const Tensor& grad_tokens, const Tensor& image, std::size_t patch,
                                const Tensor& weights, Tensor& grad_w, Tensor& grad_b) {
  const std::size_t w = image.dim(1), c = image.dim(2);
  const std::size_t gh = grad_tokens.dim(0), gw = grad_tokens.dim(1), d = grad_tokens.dim(2);
  const std::size_t plen = patch * patch * c;
  Tensor grad_img(image.shape());
  std::vector<double> pv(plen), gp(plen);
  for (std::size_t ty = 0; ty < gh; ++ty) {
    for (std::size_t tx = 0; tx < gw; ++tx) {
      std::size_t p = 0;
      for (std::size_t dy = 0; dy < patch; ++dy) {
        for (std::size_t dx = 0; dx < patch; ++dx) {
          for (std::size_t ch = 0; ch < c; ++ch) pv[p++] = image.at(ty * patch + dy, tx * patch + dx, ch);
        }
      }
      const double* g = grad_tokens.data().data() + (ty * gw + tx) * d;
      for (std::size_t j = 0; j < d; ++j) grad_b[j] += g[j];
      matmul_tn_acc(pv.data(), g, grad_w.data().data(), plen, 1, d);
      std::fill(gp.begin(), gp.end(), 0.0);
      matmul_nt_acc(g, weights.data().data(), gp.data(), 1, d, plen);
      p = 0;
      for (std::size_t dy = 0; dy < patch; ++dy) {
        for (std::size_t dx = 0; dx < patch; ++dx) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            grad_img[((ty * patch + dy) * w + tx * patch + dx) * c + ch] += gp[p++];
          }
        }
      }
    }
  }
  return grad_img;
}

}  // namespace

PatchEmbedGrads patch_embed_backward(const Tensor& grad_tokens, const Tensor& image, std::size_t patch,
                                     const Tensor& weights) {
  PatchEmbedGrads g{Tensor(weights.shape()), Tensor({weights.dim(1)})};
  patch_embed_backward_acc(grad_tokens, image, patch, weights, g.weights, g.bias);
  return g;
}

// ------------------------------------------------------------ window machinery

Tensor window_partition(const Tensor& tokens, std::size_t window) {
  if (tokens.rank() != 3) throw std::invalid_argument("window_partition expects [Ht,Wt,D]");
  const std::size_t gh = tokens.dim(0), gw = tokens.dim(1), d = tokens.dim(2);
  if (window == 0 || gh % window != 0 || gw % window != 0) {
    throw std::invalid_argument("token grid " + shape_to_string(tokens.shape()) + " not divisible by window " +
                                std::to_string(window));
  }
  const std::size_t nwx = gw / window;
  const std::size_t num = (gh / window) * nwx;
  Tensor out({num, window * window, d});
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      const std::size_t win = (i / window) * nwx + j / window;
      const std::size_t pos = (i % window) * window + j % window;
      const double* src = tokens.data().data() + (i * gw + j) * d;
      std::copy(src, src + d, out.data().data() + (win * window * window + pos) * d);
    }
  }
  return out;
}

Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t grid_h, std::size_t grid_w) {
  if (window == 0 || grid_h % window != 0 || grid_w % window != 0) {
    throw std::invalid_argument("grid not divisible by window " + std::to_string(window));
  }
  const std::size_t nwx = grid_w / window;
  const std::size_t num = (grid_h / window) * nwx;
  if (windows.rank() != 3 || windows.dim(0) != num || windows.dim(1) != window * window) {
    throw ShapeError("window_reverse input", {num, window * window, windows.shape().back()}, windows.shape());
  }
  const std::size_t d = windows.dim(2);
  Tensor out({grid_h, grid_w, d});
  for (std::size_t i = 0; i < grid_h; ++i) {
    for (std::size_t j = 0; j < grid_w; ++j) {
      const std::size_t win = (i / window) * nwx + j / window;
      const std::size_t pos = (i % window) * window + j % window;
      const double* src = windows.data().data() + (win * window * window + pos) * d;
      std::copy(src, src + d, out.data().data() + (i * grid_w + j) * d);
    }
  }
  return out;
}

Tensor cyclic_shift(const Tensor& tokens, std::int64_t shift) {
  if (tokens.rank() != 3) throw std::invalid_argument("cyclic_shift expects [Ht,Wt,D]");
  const auto gh = static_cast<std::int64_t>(tokens.dim(0));
  const auto gw = static_cast<std::int64_t>(tokens.dim(1));
  const std::size_t d = tokens.dim(2);
  const std::int64_t sy = ((shift % gh) + gh) % gh;
  const std::int64_t sx = ((shift % gw) + gw) % gw;
  Tensor out(tokens.shape());
  for (std::int64_t i = 0; i < gh; ++i) {
    const std::int64_t si = (i + sy) % gh;
    for (std::int64_t j = 0; j < gw; ++j) {
      const std::int64_t sj = (j + sx) % gw;
      const double* src = tokens.data().data() + static_cast<std::size_t>(si * gw + sj) * d;
      std::copy(src, src + d, out.data().data() + static_cast<std::size_t>(i * gw + j) * d);
    }
  }
  return out;
}

// ------------------------------------------------------------ window attention

Tensor window_attention(const Tensor& tokens, std::size_t heads, const Tensor& qkv_w, const Tensor& qkv_b,
                        const Tensor& proj_w, const Tensor& proj_b, WindowAttentionCache* cache) {
  if (tokens.rank() != 2) throw std::invalid_argument("window_attention expects [T,D]");
  const std::size_t t = tokens.dim(0), d = tokens.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("embedding dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                                " heads");
  }
  if (qkv_w.shape() != Shape{d, 3 * d}) throw ShapeError("qkv weights", {d, 3 * d}, qkv_w.shape());
  if (proj_w.shape() != Shape{d, d}) throw ShapeError("projection weights", {d, d}, proj_w.shape());
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor qkv = dense_forward(tokens, qkv_w, qkv_b);
  Tensor attn({heads, t, t});
  Tensor ctx({t, d});
  std::vector<double> row(t);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      const double* q = qkv.data().data() + i * 3 * d + h * hd;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        const double* k = qkv.data().data() + j * 3 * d + d + h * hd;
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
        row[j] = s * scale;
        mx = std::max(mx, row[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      double* c = ctx.data().data() + i * d + h * hd;
      for (std::size_t j = 0; j < t; ++j) {
        const double p = row[j] / sum;
        attn[(h * t + i) * t + j] = p;
        const double* v = qkv.data().data() + j * 3 * d + 2 * d + h * hd;
        for (std::size_t e = 0; e < hd; ++e) c[e] += p * v[e];
      }
    }
  }
  Tensor out = dense_forward(ctx, proj_w, proj_b);
  if (cache) {
    cache->input = tokens;
    cache->qkv = std::move(qkv);
    cache->attn = std::move(attn);
    cache->context = std::move(ctx);
  }
  return out;
}

namespace {

Tensor window_attention_backward_acc(const Tensor& grad_out, const WindowAttentionCache& cache, std::size_t heads,
                                     const Tensor& qkv_w, const Tensor& proj_w, Tensor& g_qkv_w, Tensor& g_qkv_b,
                                     Tensor& g_proj_w, Tensor& g_proj_b) {
  if (cache.input.empty()) throw std::logic_error("window_attention backward called without a cached forward");
  const std::size_t t = cache.input.dim(0), d = cache.input.dim(1);
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  matmul_tn_acc(cache.context.data().data(), grad_out.data().data(), g_proj_w.data().data(), d, t, d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) g_proj_b[j] += grad_out[i * d + j];
  }
  Tensor g_ctx({t, d});
  matmul_nt_acc(grad_out.data().data(), proj_w.data().data(), g_ctx.data().data(), t, d, d);

  Tensor g_qkv({t, 3 * d});
  const double* qkv = cache.qkv.data().data();
  std::vector<double> dp(t), ds(t);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      const double* gc = g_ctx.data().data() + i * d + h * hd;
      const double* p = cache.attn.data().data() + (h * t + i) * t;
      double dot = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        const double* v = qkv + j * 3 * d + 2 * d + h * hd;
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += gc[e] * v[e];
        dp[j] = s;
        dot += p[j] * s;
        double* gv = g_qkv.data().data() + j * 3 * d + 2 * d + h * hd;
        for (std::size_t e = 0; e < hd; ++e) gv[e] += p[j] * gc[e];
      }
      const double* q = qkv + i * 3 * d + h * hd;
      double* gq = g_qkv.data().data() + i * 3 * d + h * hd;
      for (std::size_t j = 0; j < t; ++j) {
        const double g = p[j] * (dp[j] - dot) * scale;
        const double* k = qkv + j * 3 * d + d + h * hd;
        double* gk = g_qkv.data().data() + j * 3 * d + d + h * hd;
        for (std::size_t e = 0; e < hd; ++e) {
          gq[e] += g * k[e];
          gk[e] += g * q[e];
        }
      }
    }
  }

  matmul_tn_acc(cache.input.data().data(), g_qkv.data().data(), g_qkv_w.data().data(), d, t, 3 * d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < 3 * d; ++j) g_qkv_b[j] += g_qkv[i * 3 * d + j];
  }
  Tensor g_in({t, d});
  matmul_nt_acc(g_qkv.data().data(), qkv_w.data().data(), g_in.data().data(), t, 3 * d, d);
  return g_in;
}

}  // namespace

WindowAttentionGrads window_attention_backward(const Tensor& grad_out, const WindowAttentionCache& cache,
                                               std::size_t heads, const Tensor& qkv_w, const Tensor& proj_w) {
  WindowAttentionGrads g{Tensor(), Tensor(qkv_w.shape()), Tensor({qkv_w.dim(1)}), Tensor(proj_w.shape()),
                         Tensor({proj_w.dim(1)})};
  g.input = window_attention_backward_acc(grad_out, cache, heads, qkv_w, proj_w, g.qkv_w, g.qkv_b, g.proj_w, g.proj_b);
  return g;
}

// ------------------------------------------------------------------ PatchEmbed

PatchEmbed::PatchEmbed(std::string name, std::size_t patch, std::size_t in_channels, std::size_t embed_dim, Rng& init)
    : Layer(std::move(name)),
      patch_(patch),
      weights_(this->name() + ".weights",
               he_uniform({patch * patch * in_channels, embed_dim}, patch * patch * in_channels, init)),
      bias_(this->name() + ".bias", Tensor({embed_dim})) {}

Tensor PatchEmbed::forward(const Tensor& x, Mode, Rng&) {
  if (x.rank() != 4) throw std::invalid_argument(name() + " expects [N,H,W,C]");
  cached_input_ = x;
  std::vector<Tensor> outs;
  for (std::size_t n = 0; n < x.dim(0); ++n) outs.push_back(patch_embed(x.slice(n), patch_, weights_.value, bias_.value));
  return stack(outs);
}

Tensor PatchEmbed::backward(const Tensor& grad_out) {
  if (cached_input_.empty()) throw std::logic_error(name() + ": backward called before forward");
  Tensor grad_in(cached_input_.shape());
  for (std::size_t n = 0; n < cached_input_.dim(0); ++n) {
    grad_in.set_slice(n, patch_embed_backward_acc(grad_out.slice(n), cached_input_.slice(n), patch_, weights_.value,
                                                  weights_.grad, bias_.grad));
  }
  return grad_in;
}

Shape PatchEmbed::output_shape(const Shape& input) const {
  return {input.at(0) / patch_, input.at(1) / patch_, weights_.value.dim(1)};
}

void PatchEmbed::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weights_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------------- SwinBlock

SwinBlock::SwinBlock(std::string name, std::size_t dim, std::size_t heads, std::size_t window, std::size_t shift,
                     std::size_t mlp_hidden, Rng& init)
    : Layer(std::move(name)),
      dim_(dim),
      heads_(heads),
      window_(window),
      shift_(shift),
      mlp_hidden_(mlp_hidden),
      norm1_gamma_(this->name() + ".norm1.gamma", Tensor({dim}, 1.0)),
      norm1_beta_(this->name() + ".norm1.beta", Tensor({dim})),
      qkv_w_(this->name() + ".attn.qkv.weights", he_uniform({dim, 3 * dim}, dim, init)),
      qkv_b_(this->name() + ".attn.qkv.bias", Tensor({3 * dim})),
      proj_w_(this->name() + ".attn.proj.weights", he_uniform({dim, dim}, dim, init)),
      proj_b_(this->name() + ".attn.proj.bias", Tensor({dim})),
      norm2_gamma_(this->name() + ".norm2.gamma", Tensor({dim}, 1.0)),
      norm2_beta_(this->name() + ".norm2.beta", Tensor({dim})),
      fc1_w_(this->name() + ".mlp.fc1.weights", he_uniform({dim, mlp_hidden}, dim, init)),
      fc1_b_(this->name() + ".mlp.fc1.bias", Tensor({mlp_hidden})),
      fc2_w_(this->name() + ".mlp.fc2.weights", he_uniform({mlp_hidden, dim}, mlp_hidden, init)),
      fc2_b_(this->name() + ".mlp.fc2.bias", Tensor({dim})) {
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument(this->name() + ": dim not divisible by heads");
  if (shift >= window) throw std::invalid_argument(this->name() + ": shift must be smaller than window");
}

Tensor SwinBlock::forward_sample(const Tensor& x, SampleCache& cache) {
  const std::size_t gh = x.dim(0), gw = x.dim(1);
  const auto s = static_cast<std::int64_t>(shift_);
  Tensor n1 = layer_norm(x, norm1_gamma_.value, norm1_beta_.value, &cache.norm1);
  if (s != 0) n1 = cyclic_shift(n1, s);
  Tensor windows = window_partition(n1, window_);
  const std::size_t nw = windows.dim(0);
  cache.windows.assign(nw, {});
  std::vector<Tensor> outs;
  outs.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    outs.push_back(window_attention(windows.slice(w), heads_, qkv_w_.value, qkv_b_.value, proj_w_.value, proj_b_.value,
                                    &cache.windows[w]));
  }
  Tensor attn = window_reverse(stack(outs), window_, gh, gw);
  if (s != 0) attn = cyclic_shift(attn, -s);
  Tensor x1 = x;
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += attn[i];

  const std::size_t tokens = gh * gw;
  cache.norm2_out = layer_norm(x1, norm2_gamma_.value, norm2_beta_.value, &cache.norm2).reshaped({tokens, dim_});
  cache.hidden_pre = dense_forward(cache.norm2_out, fc1_w_.value, fc1_b_.value);
  cache.hidden = relu(cache.hidden_pre);
  Tensor mlp = dense_forward(cache.hidden, fc2_w_.value, fc2_b_.value);
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += mlp[i];
  return x1;
}

Tensor SwinBlock::backward_sample(const Tensor& grad_out, const SampleCache& cache) {
  const std::size_t gh = grad_out.dim(0), gw = grad_out.dim(1);
  const std::size_t tokens = gh * gw;
  const auto s = static_cast<std::int64_t>(shift_);

  // MLP branch.
  Tensor g_mlp = grad_out.reshaped({tokens, dim_});
  DenseGrads fc2 = dense_backward(g_mlp, cache.hidden, fc2_w_.value);
  for (std::size_t i = 0; i < fc2.weights.size(); ++i) fc2_w_.grad[i] += fc2.weights[i];
  for (std::size_t i = 0; i < fc2.bias.size(); ++i) fc2_b_.grad[i] += fc2.bias[i];
  Tensor g_pre = relu_backward(fc2.input, cache.hidden_pre);
  DenseGrads fc1 = dense_backward(g_pre, cache.norm2_out, fc1_w_.value);
  for (std::size_t i = 0; i < fc1.weights.size(); ++i) fc1_w_.grad[i] += fc1.weights[i];
  for (std::size_t i = 0; i < fc1.bias.size(); ++i) fc1_b_.grad[i] += fc1.bias[i];
  Tensor g_n2 = layer_norm_backward_acc(fc1.input.reshaped(grad_out.shape()), cache.norm2, norm2_gamma_.value,
                                        norm2_gamma_.grad, norm2_beta_.grad);
  Tensor g_x1 = grad_out;
  for (std::size_t i = 0; i < g_x1.size(); ++i) g_x1[i] += g_n2[i];

  // Attention branch; the adjoint of a roll is the opposite roll.
  Tensor g_attn = s != 0 ? cyclic_shift(g_x1, s) : g_x1;
  Tensor g_windows = window_partition(g_attn, window_);
  std::vector<Tensor> g_in;
  g_in.reserve(g_windows.dim(0));
  for (std::size_t w = 0; w < g_windows.dim(0); ++w) {
    g_in.push_back(window_attention_backward_acc(g_windows.slice(w), cache.windows[w], heads_, qkv_w_.value,
                                                 proj_w_.value, qkv_w_.grad, qkv_b_.grad, proj_w_.grad, proj_b_.grad));
  }
  Tensor g_n1 = window_reverse(stack(g_in), window_, gh, gw);
  if (s != 0) g_n1 = cyclic_shift(g_n1, -s);
  Tensor g_x = layer_norm_backward_acc(g_n1, cache.norm1, norm1_gamma_.value, norm1_gamma_.grad, norm1_beta_.grad);
  for (std::size_t i = 0; i < g_x.size(); ++i) g_x[i] += g_x1[i];
  return g_x;
}

Tensor SwinBlock::forward(const Tensor& x, Mode, Rng&) {
  if (x.rank() != 4 || x.dim(3) != dim_) throw ShapeError(name() + " input", {0, 0, 0, dim_}, x.shape());
  grid_ = {x.dim(1), x.dim(2), x.dim(3)};
  caches_.assign(x.dim(0), {});
  std::vector<Tensor> outs;
  outs.reserve(x.dim(0));
  for (std::size_t n = 0; n < x.dim(0); ++n) outs.push_back(forward_sample(x.slice(n), caches_[n]));
  return stack(outs);
}

Tensor SwinBlock::backward(const Tensor& grad_out) {
  if (caches_.empty()) throw std::logic_error(name() + ": backward called before forward");
  std::vector<Tensor> grads;
  grads.reserve(caches_.size());
  for (std::size_t n = 0; n < caches_.size(); ++n) grads.push_back(backward_sample(grad_out.slice(n), caches_[n]));
  return stack(grads);
}

void SwinBlock::collect_parameters(std::vector<Parameter*>& out) {
  for (Parameter* p : {&norm1_gamma_, &norm1_beta_, &qkv_w_, &qkv_b_, &proj_w_, &proj_b_, &norm2_gamma_, &norm2_beta_,
                       &fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_}) {
    out.push_back(p);
  }
}

}  // namespace fedfusion
