#include "fedfusion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fedfusion {

void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// ---------------------------------------------------------------- convolution

std::size_t conv_padding(std::size_t kernel, Padding padding) {
  return padding == Padding::Same ? (kernel - 1) / 2 : 0;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  const std::size_t p = conv_padding(kernel, padding);
  if (in + 2 * p < kernel) {
    throw std::invalid_argument("convolution input extent " + std::to_string(in) + " smaller than kernel " +
                                std::to_string(kernel));
  }
  return (in + 2 * p - kernel) / stride + 1;
}

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
  if (input.rank() != 3) throw std::invalid_argument("conv2d input must be [H,W,C], got " + shape_to_string(input.shape()));
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1)) {
    throw std::invalid_argument("conv2d kernel must be [k,k,Cin,Cout], got " + shape_to_string(kernel.shape()));
  }
  if (input.dim(2) != kernel.dim(2)) {
    throw ShapeError("conv2d input channels do not match kernel Cin", {input.dim(0), input.dim(1), kernel.dim(2)},
                     input.shape());
  }
  if (bias.shape() != Shape{kernel.dim(3)}) throw ShapeError("conv2d bias", {kernel.dim(3)}, bias.shape());
  if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                      Padding padding) {
  check_conv_shapes(input, kernel, bias, stride);
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  const std::size_t pad = conv_padding(k, padding);
  const std::size_t ho = conv_output_size(h, k, stride, padding);
  const std::size_t wo = conv_output_size(w, k, stride, padding);

  Tensor out({ho, wo, cout});
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  double* o = out.data().data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* orow = o + (oy * wo + ox) * cout;
      std::copy(bias.data().begin(), bias.data().end(), orow);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* irow = in + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const double* kbase = ker + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = irow[ci];
            const double* krow = kbase + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) orow[co] += v * krow[co];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward_acc(const Tensor& grad_out, const Tensor& cached_input, const Tensor& kernel,
                           std::size_t stride, Padding padding, Tensor& grad_kernel, Tensor& grad_bias) {
  if (cached_input.empty()) throw std::logic_error("conv2d backward called without a cached forward input");
  const std::size_t h = cached_input.dim(0), w = cached_input.dim(1), cin = cached_input.dim(2);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  const std::size_t pad = conv_padding(k, padding);
  const std::size_t ho = conv_output_size(h, k, stride, padding);
  const std::size_t wo = conv_output_size(w, k, stride, padding);
  if (grad_out.shape() != Shape{ho, wo, cout}) throw ShapeError("conv2d grad_out", {ho, wo, cout}, grad_out.shape());

  Tensor grad_in(cached_input.shape());
  const double* in = cached_input.data().data();
  const double* ker = kernel.data().data();
  const double* g = grad_out.data().data();
  double* gin = grad_in.data().data();
  double* gk = grad_kernel.data().data();
  double* gb = grad_bias.data().data();

  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      const double* grow = g + (oy * wo + ox) * cout;
      for (std::size_t co = 0; co < cout; ++co) gb[co] += grow[co];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t ioff = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const std::size_t koff = (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = in[ioff + ci];
            const double* krow = ker + koff + ci * cout;
            double* gkrow = gk + koff + ci * cout;
            double s = 0.0;
            for (std::size_t co = 0; co < cout; ++co) {
              gkrow[co] += v * grow[co];
              s += krow[co] * grow[co];
            }
            gin[ioff + ci] += s;
          }
        }
      }
    }
  }
  return grad_in;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& kernel,
                            std::size_t stride, Padding padding) {
  if (cached_input.empty()) throw std::logic_error("conv2d backward called without a cached forward input");
  Conv2dGrads grads{Tensor(), Tensor(kernel.shape()), Tensor({kernel.dim(3)})};
  grads.input = conv2d_backward_acc(grad_out, cached_input, kernel, stride, padding, grads.kernel, grads.bias);
  return grads;
}

// --------------------------------------------------------------------- affine

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2) throw std::invalid_argument("dense weights must be [n,m]");
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  if (bias.shape() != Shape{m}) throw ShapeError("dense bias", {m}, bias.shape());
  const bool batched = input.rank() == 2;
  if (!(input.rank() == 1 || batched) || input.shape().back() != n) {
    throw ShapeError("dense input does not match weights", {n}, input.shape());
  }
  const std::size_t rows = batched ? input.dim(0) : 1;
  Tensor out(batched ? Shape{rows, m} : Shape{m});
  double* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), o + r * m);
  matmul_acc(input.data().data(), weights.data().data(), o, rows, n, m);
  return out;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& weights) {
  if (cached_input.empty()) throw std::logic_error("dense backward called without a cached forward input");
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  const std::size_t rows = cached_input.size() / n;
  if (grad_out.size() != rows * m) throw ShapeError("dense grad_out", {rows, m}, grad_out.shape());
  DenseGrads g{Tensor(cached_input.shape()), Tensor(weights.shape()), Tensor({m})};
  matmul_tn_acc(cached_input.data().data(), grad_out.data().data(), g.weights.data().data(), n, rows, m);
  matmul_nt_acc(grad_out.data().data(), weights.data().data(), g.input.data().data(), rows, m, n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) g.bias[j] += grad_out[r * m + j];
  }
  return g;
}

// ----------------------------------------------------------------- batch norm

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                  BatchNormCache* cache) {
  if (input.rank() < 2) throw std::invalid_argument("batch_norm input needs a batch axis");
  const std::size_t f = input.shape().back();
  if (gamma.shape() != Shape{f}) throw ShapeError("batch_norm gamma", {f}, gamma.shape());
  if (beta.shape() != Shape{f}) throw ShapeError("batch_norm beta", {f}, beta.shape());
  if (stats.running_mean.empty()) {
    stats.running_mean = Tensor({f}, 0.0);
    stats.running_var = Tensor({f}, 1.0);
  }
  const std::size_t rows = input.size() / f;
  Tensor out(input.shape());

  if (mode == Mode::Infer) {
    for (std::size_t j = 0; j < f; ++j) {
      const double inv = 1.0 / std::sqrt(stats.running_var[j] + kNormEpsilon);
      for (std::size_t r = 0; r < rows; ++r) {
        out[r * f + j] = gamma[j] * (input[r * f + j] - stats.running_mean[j]) * inv + beta[j];
      }
    }
    return out;
  }

  if (input.dim(0) < 2) throw std::invalid_argument("batch_norm in train mode requires a batch of at least 2");
  std::vector<double> mean(f, 0.0), var(f, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) mean[j] += input[r * f + j];
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const double d = input[r * f + j] - mean[j];
      var[j] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(rows);

  Tensor xhat(input.shape());
  Tensor inv_std({f});
  for (std::size_t j = 0; j < f; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kNormEpsilon);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const double xh = (input[r * f + j] - mean[j]) * inv_std[j];
      xhat[r * f + j] = xh;
      out[r * f + j] = gamma[j] * xh + beta[j];
    }
  }
  const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
  for (std::size_t j = 0; j < f; ++j) {
    stats.running_mean[j] = stats.momentum * stats.running_mean[j] + (1.0 - stats.momentum) * mean[j];
    stats.running_var[j] = stats.momentum * stats.running_var[j] + (1.0 - stats.momentum) * var[j] * unbias;
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

BatchNormGrads batch_norm_backward(const Tensor& grad_out, const BatchNormCache& cache, const Tensor& gamma) {
  if (cache.normalized.empty()) throw std::logic_error("batch_norm backward called without a train-mode forward");
  if (grad_out.shape() != cache.normalized.shape()) {
    throw ShapeError("batch_norm grad_out", cache.normalized.shape(), grad_out.shape());
  }
  const std::size_t f = gamma.size();
  const std::size_t rows = grad_out.size() / f;
  BatchNormGrads g{Tensor(grad_out.shape()), Tensor({f}), Tensor({f})};
  std::vector<double> sum_dxhat(f, 0.0), sum_dxhat_xhat(f, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const double go = grad_out[r * f + j];
      const double xh = cache.normalized[r * f + j];
      g.gamma[j] += go * xh;
      g.beta[j] += go;
      const double dxh = go * gamma[j];
      sum_dxhat[j] += dxh;
      sum_dxhat_xhat[j] += dxh * xh;
    }
  }
  const double n = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const double dxh = grad_out[r * f + j] * gamma[j];
      const double xh = cache.normalized[r * f + j];
      g.input[r * f + j] = cache.inv_std[j] / n * (n * dxh - sum_dxhat[j] - xh * sum_dxhat_xhat[j]);
    }
  }
  return g;
}

// ----------------------------------------------------------------- layer norm

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache) {
  const std::size_t d = input.shape().back();
  if (gamma.shape() != Shape{d}) throw ShapeError("layer_norm gamma", {d}, gamma.shape());
  if (beta.shape() != Shape{d}) throw ShapeError("layer_norm beta", {d}, beta.shape());
  const std::size_t rows = input.size() / d;
  Tensor out(input.shape());
  Tensor xhat(input.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = input.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x[j] - mean) * inv;
      xhat[r * d + j] = xh;
      out[r * d + j] = gamma[j] * xh + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor layer_norm_backward_acc(const Tensor& grad_out, const LayerNormCache& cache, const Tensor& gamma,
                               Tensor& grad_gamma, Tensor& grad_beta) {
  if (cache.normalized.empty()) throw std::logic_error("layer_norm backward called without a cached forward");
  const std::size_t d = gamma.size();
  const std::size_t rows = grad_out.size() / d;
  Tensor grad_in(grad_out.shape());
  const double n = static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double go = grad_out[r * d + j];
      const double xh = cache.normalized[r * d + j];
      grad_gamma[j] += go * xh;
      grad_beta[j] += go;
      const double dxh = go * gamma[j];
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xh;
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = grad_out[r * d + j] * gamma[j];
      const double xh = cache.normalized[r * d + j];
      grad_in[r * d + j] = cache.inv_std[r] / n * (n * dxh - sum_dxh - xh * sum_dxh_xh);
    }
  }
  return grad_in;
}

// ------------------------------------------------------- pointwise / pooling

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& cached_input) {
  if (cached_input.empty()) throw std::logic_error("relu backward called without a cached forward input");
  if (grad_out.shape() != cached_input.shape()) throw ShapeError("relu grad_out", cached_input.shape(), grad_out.shape());
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = cached_input[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("global_avg_pool expects [H,W,C], got " + shape_to_string(x.shape()));
  const std::size_t c = x.dim(2), cells = x.dim(0) * x.dim(1);
  Tensor out({c});
  for (std::size_t p = 0; p < cells; ++p) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x[p * c + j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(cells);
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape) {
  const std::size_t c = input_shape.at(2), cells = input_shape[0] * input_shape[1];
  if (grad_out.shape() != Shape{c}) throw ShapeError("global_avg_pool grad_out", {c}, grad_out.shape());
  Tensor g(input_shape);
  const double scale = 1.0 / static_cast<double>(cells);
  for (std::size_t p = 0; p < cells; ++p) {
    for (std::size_t j = 0; j < c; ++j) g[p * c + j] = grad_out[j] * scale;
  }
  return g;
}

MaxPoolResult max_pool2d(const Tensor& x, std::size_t size) {
  if (x.rank() != 3) throw std::invalid_argument("max_pool2d expects [H,W,C]");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (size == 0 || h < size || w < size) throw std::invalid_argument("max_pool2d window larger than input");
  const std::size_t ho = h / size, wo = w / size;
  MaxPoolResult r{Tensor({ho, wo, c}), std::vector<std::size_t>(ho * wo * c)};
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t j = 0; j < c; ++j) {
        std::size_t best = ((oy * size) * w + ox * size) * c + j;
        for (std::size_t dy = 0; dy < size; ++dy) {
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = ((oy * size + dy) * w + ox * size + dx) * c + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (oy * wo + ox) * c + j;
        r.output[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

Tensor max_pool2d_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax, const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw std::logic_error("max_pool2d backward without a matching forward");
  Tensor g(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g[argmax[o]] += grad_out[o];
  return g;
}

DropoutResult dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::Infer || rate == 0.0) return {x, Tensor()};
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return {std::move(out), std::move(mask)};
}

// ------------------------------------------------------------ classification

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty tensor");
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data().data() + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (std::isnan(z[j])) throw std::invalid_argument("softmax input contains NaN");
      mx = std::max(mx, z[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(z[j] - mx);
      sum += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= sum;
  }
  return out;
}

double cross_entropy(const Tensor& probs, std::size_t label) {
  if (label >= probs.size()) throw std::out_of_range("cross_entropy label out of range");
  return -std::log(std::max(probs[label], std::numeric_limits<double>::min()));
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy logits", {labels.size(), logits.shape().back()}, logits.shape());
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  LossAndGrad r{0.0, Tensor(logits.shape()), softmax(logits)};
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= k) throw std::out_of_range("label out of range");
    const double* z = logits.data().data() + i * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    r.loss += (std::log(sum) + mx - z[labels[i]]);
    for (std::size_t j = 0; j < k; ++j) {
      r.grad_logits[i * k + j] = (r.probs[i * k + j] - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(rows);
    }
  }
  r.loss /= static_cast<double>(rows);
  return r;
}

// -------------------------------------------------------------- optimisation

namespace {

void check_finite_grads(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->trainable && !p->grad.all_finite()) throw std::domain_error("non-finite gradient in parameter " + p->name);
  }
}

}  // namespace

void sgd_step(std::span<Parameter* const> params, double learning_rate) {
  check_finite_grads(params);
  for (Parameter* p : params) {
    if (p->trainable) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= learning_rate * p->grad[i];
    }
    p->zero_grad();
  }
}

void SgdOptimizer::step(std::span<Parameter* const> params) {
  if (momentum_ == 0.0) {
    sgd_step(params, learning_rate_);
    return;
  }
  check_finite_grads(params);
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const Parameter* p : params) velocity_.emplace_back(p->value.shape());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    if (p->trainable) {
      Tensor& v = velocity_[k];
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        v[i] = momentum_ * v[i] + p->grad[i];
        p->value[i] -= learning_rate_ * v[i];
      }
    }
    p->zero_grad();
  }
}

}  // namespace fedfusion
