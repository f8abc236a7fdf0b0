#pragma once

// Stateless forward/backward kernels. Image tensors are [H, W, C] per sample;
// the layer classes in layers.hpp loop these over a leading batch axis.

#include <cstddef>
#include <span>
#include <vector>

#include "fedfusion/rng.hpp"
#include "fedfusion/tensor.hpp"

namespace fedfusion {

enum class Mode { Train, Infer };
enum class Padding { Same, Valid };

// ---- small dense linear algebra on row-major buffers ----
// c[m,n] += a[m,k] * b[k,n]
void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// c[m,n] += a[k,m]^T * b[k,n]
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// c[m,n] += a[m,k] * b[n,k]^T
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

// ---- convolution ----
std::size_t conv_padding(std::size_t kernel, Padding padding);
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

// Cross-correlation of input[H,W,Cin] with kernel[k,k,Cin,Cout] plus bias[Cout].
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                      Padding padding);

struct Conv2dGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& kernel,
                            std::size_t stride, Padding padding);

// Accumulating variant used by layers: adds into kernel/bias grads, returns the input grad.
Tensor conv2d_backward_acc(const Tensor& grad_out, const Tensor& cached_input, const Tensor& kernel,
                           std::size_t stride, Padding padding, Tensor& grad_kernel, Tensor& grad_bias);

// ---- affine ----
// input[n] or input[B,n]; weights[n,m]; bias[m].
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& weights);

// ---- batch normalisation over the last axis; statistics over all other axes ----
inline constexpr double kNormEpsilon = 1e-5;

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
};

struct BatchNormCache {
  Tensor normalized;  // x-hat
  Tensor inv_std;     // per feature
};

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                  BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

BatchNormGrads batch_norm_backward(const Tensor& grad_out, const BatchNormCache& cache, const Tensor& gamma);

// ---- layer norm over the last axis (per token) ----
struct LayerNormCache {
  Tensor normalized;
  std::vector<double> inv_std;  // per row
};

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache = nullptr);
// Accumulates into grad_gamma/grad_beta, returns the input grad.
Tensor layer_norm_backward_acc(const Tensor& grad_out, const LayerNormCache& cache, const Tensor& gamma,
                               Tensor& grad_gamma, Tensor& grad_beta);

// ---- pointwise and pooling ----
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& cached_input);

Tensor global_avg_pool(const Tensor& x);  // [H,W,C] -> [C]
Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape);

struct MaxPoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

MaxPoolResult max_pool2d(const Tensor& x, std::size_t size);  // [H,W,C], window = stride = size
Tensor max_pool2d_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax, const Shape& input_shape);

struct DropoutResult {
  Tensor output;
  Tensor mask;  // already scaled by 1/(1-rate); empty in inference
};

// Inverted dropout. Identity in inference mode.
DropoutResult dropout(const Tensor& x, double rate, Mode mode, Rng& rng);

// ---- classification head ----
// Softmax over the last axis ([k] or [B,k]), max-subtracted.
Tensor softmax(const Tensor& logits);
double cross_entropy(const Tensor& probs, std::size_t label);

struct LossAndGrad {
  double loss = 0.0;   // mean over the batch
  Tensor grad_logits;  // (probs - onehot) / batch
  Tensor probs;
};

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// ---- optimisation ----
// value <- value - lr * grad for trainable params, then all grads are zeroed.
void sgd_step(std::span<Parameter* const> params, double learning_rate);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(double learning_rate, double momentum = 0.0)
      : learning_rate_(learning_rate), momentum_(momentum) {}

  void step(std::span<Parameter* const> params);

 private:
  double learning_rate_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

}  // namespace fedfusion
