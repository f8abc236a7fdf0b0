#include "fedfusion/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace fedfusion {

namespace {

Shape sample_shape(const Tensor& batch) { return Shape(batch.shape().begin() + 1, batch.shape().end()); }

void require_batch(const Tensor& x, std::size_t sample_rank, const std::string& who) {
  if (x.rank() != sample_rank + 1) {
    throw std::invalid_argument(who + " expects a batch of rank-" + std::to_string(sample_rank) + " samples, got " +
                                shape_to_string(x.shape()));
  }
}

void require_cache(const Tensor& cached, const std::string& who) {
  if (cached.empty()) throw std::logic_error(who + ": backward called before forward");
}

}  // namespace

void Layer::set_trainable(bool trainable) {
  std::vector<Parameter*> params;
  collect_parameters(params);
  for (Parameter* p : params) p->trainable = trainable;
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

Tensor concat_last_axis(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) throw ShapeError("concat leading axes differ", lead, pl);
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) out[r * total + offset + j] = p[r * w + j];
    }
    offset += w;
  }
  return out;
}

std::vector<Tensor> split_last_axis(const Tensor& whole, const std::vector<std::size_t>& widths) {
  const std::size_t total = whole.shape().back();
  const std::size_t rows = whole.size() / total;
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    Shape s = whole.shape();
    s.back() = w;
    Tensor p(s);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) p[r * w + j] = whole[r * total + offset + j];
    }
    offset += w;
    parts.push_back(std::move(p));
  }
  if (offset != total) throw std::invalid_argument("split widths do not cover the last axis");
  return parts;
}

// ---------------------------------------------------------------------- Conv2D

Conv2D::Conv2D(std::string name, std::size_t kernel, std::size_t in_channels, std::size_t out_channels, Rng& init,
               std::size_t stride, Padding padding)
    : Layer(std::move(name)),
      kernel_(this->name() + ".kernel",
              he_uniform({kernel, kernel, in_channels, out_channels}, kernel * kernel * in_channels, init)),
      bias_(this->name() + ".bias", Tensor({out_channels})),
      stride_(stride),
      padding_(padding) {}

Tensor Conv2D::forward(const Tensor& x, Mode, Rng&) {
  require_batch(x, 3, name());
  cached_input_ = x;
  std::vector<Tensor> outs;
  outs.reserve(x.dim(0));
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    outs.push_back(conv2d_forward(x.slice(n), kernel_.value, bias_.value, stride_, padding_));
  }
  return stack(outs);
}

Tensor Conv2D::backward(const Tensor& grad_out) {
  require_cache(cached_input_, name());
  Tensor grad_in(cached_input_.shape());
  for (std::size_t n = 0; n < cached_input_.dim(0); ++n) {
    grad_in.set_slice(n, conv2d_backward_acc(grad_out.slice(n), cached_input_.slice(n), kernel_.value, stride_,
                                             padding_, kernel_.grad, bias_.grad));
  }
  return grad_in;
}

Shape Conv2D::output_shape(const Shape& input) const {
  const std::size_t k = kernel_.value.dim(0);
  return {conv_output_size(input.at(0), k, stride_, padding_), conv_output_size(input.at(1), k, stride_, padding_),
          kernel_.value.dim(3)};
}

void Conv2D::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&kernel_);
  out.push_back(&bias_);
}

// ----------------------------------------------------------------------- Dense

Dense::Dense(std::string name, std::size_t in_features, std::size_t out_features, Rng& init)
    : Layer(std::move(name)),
      weights_(this->name() + ".weights", he_uniform({in_features, out_features}, in_features, init)),
      bias_(this->name() + ".bias", Tensor({out_features})) {}

Tensor Dense::forward(const Tensor& x, Mode, Rng&) {
  require_batch(x, 1, name());
  cached_input_ = x;
  return dense_forward(x, weights_.value, bias_.value);
}

Tensor Dense::backward(const Tensor& grad_out) {
  require_cache(cached_input_, name());
  DenseGrads g = dense_backward(grad_out, cached_input_, weights_.value);
  for (std::size_t i = 0; i < g.weights.size(); ++i) weights_.grad[i] += g.weights[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) bias_.grad[i] += g.bias[i];
  return std::move(g.input);
}

Shape Dense::output_shape(const Shape& input) const {
  if (input != Shape{weights_.value.dim(0)}) throw ShapeError(name() + " input", {weights_.value.dim(0)}, input);
  return {weights_.value.dim(1)};
}

void Dense::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weights_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, std::size_t features)
    : Layer(std::move(name)),
      gamma_(this->name() + ".gamma", Tensor({features}, 1.0)),
      beta_(this->name() + ".beta", Tensor({features}, 0.0)),
      stats_{Tensor({features}, 0.0), Tensor({features}, 1.0), 0.9} {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode, Rng&) {
  cache_ = {};
  return batch_norm(x, gamma_.value, beta_.value, stats_, mode, mode == Mode::Train ? &cache_ : nullptr);
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  BatchNormGrads g = batch_norm_backward(grad_out, cache_, gamma_.value);
  for (std::size_t i = 0; i < g.gamma.size(); ++i) {
    gamma_.grad[i] += g.gamma[i];
    beta_.grad[i] += g.beta[i];
  }
  return std::move(g.input);
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm::collect_buffers(std::vector<NamedTensor>& out) {
  out.push_back({name() + ".running_mean", &stats_.running_mean});
  out.push_back({name() + ".running_var", &stats_.running_var});
}

// ------------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, std::size_t features)
    : Layer(std::move(name)),
      gamma_(this->name() + ".gamma", Tensor({features}, 1.0)),
      beta_(this->name() + ".beta", Tensor({features}, 0.0)) {}

Tensor LayerNorm::forward(const Tensor& x, Mode, Rng&) {
  return layer_norm(x, gamma_.value, beta_.value, &cache_);
}

Tensor LayerNorm::backward(const Tensor& grad_out) {
  return layer_norm_backward_acc(grad_out, cache_, gamma_.value, gamma_.grad, beta_.grad);
}

void LayerNorm::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ------------------------------------------------------------ pointwise layers

Tensor Relu::forward(const Tensor& x, Mode, Rng&) {
  cached_input_ = x;
  return relu(x);
}

Tensor Relu::backward(const Tensor& grad_out) {
  require_cache(cached_input_, name());
  return relu_backward(grad_out, cached_input_);
}

Tensor MaxPool2D::forward(const Tensor& x, Mode, Rng&) {
  require_batch(x, 3, name());
  input_shape_ = sample_shape(x);
  argmax_.clear();
  std::vector<Tensor> outs;
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    MaxPoolResult r = max_pool2d(x.slice(n), size_);
    outs.push_back(std::move(r.output));
    argmax_.push_back(std::move(r.argmax));
  }
  return stack(outs);
}

Tensor MaxPool2D::backward(const Tensor& grad_out) {
  if (argmax_.empty()) throw std::logic_error(name() + ": backward called before forward");
  std::vector<Tensor> grads;
  for (std::size_t n = 0; n < argmax_.size(); ++n) {
    grads.push_back(max_pool2d_backward(grad_out.slice(n), argmax_[n], input_shape_));
  }
  return stack(grads);
}

Shape MaxPool2D::output_shape(const Shape& input) const { return {input.at(0) / size_, input.at(1) / size_, input.at(2)}; }

Tensor GlobalAvgPool::forward(const Tensor& x, Mode, Rng&) {
  require_batch(x, 3, name());
  input_shape_ = sample_shape(x);
  std::vector<Tensor> outs;
  for (std::size_t n = 0; n < x.dim(0); ++n) outs.push_back(global_avg_pool(x.slice(n)));
  return stack(outs);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw std::logic_error(name() + ": backward called before forward");
  std::vector<Tensor> grads;
  for (std::size_t n = 0; n < grad_out.dim(0); ++n) grads.push_back(global_avg_pool_backward(grad_out.slice(n), input_shape_));
  return stack(grads);
}

Tensor Flatten::forward(const Tensor& x, Mode, Rng&) {
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor Flatten::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw std::logic_error(name() + ": backward called before forward");
  return grad_out.reshaped(input_shape_);
}

Dropout::Dropout(std::string name, double rate) : Layer(std::move(name)), rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
  DropoutResult r = dropout(x, rate_, mode, rng);
  identity_ = r.mask.empty();
  mask_ = std::move(r.mask);
  return std::move(r.output);
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (identity_) return grad_out;
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask_[i];
  return g;
}

// ------------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode, Rng& rng) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode, rng);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Shape Sequential::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& layer : layers_) s = layer->output_shape(s);
  return s;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& layer : layers_) layer->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<NamedTensor>& out) {
  for (auto& layer : layers_) layer->collect_buffers(out);
}

// -------------------------------------------------------------- ParallelConcat

Sequential& ParallelConcat::add_branch(std::string name) {
  branches_.push_back(std::make_unique<Sequential>(std::move(name)));
  return *branches_.back();
}

Tensor ParallelConcat::forward(const Tensor& x, Mode mode, Rng& rng) {
  std::vector<Tensor> outs;
  widths_.clear();
  for (auto& b : branches_) {
    outs.push_back(b->forward(x, mode, rng));
    widths_.push_back(outs.back().shape().back());
  }
  return concat_last_axis(outs);
}

Tensor ParallelConcat::backward(const Tensor& grad_out) {
  if (widths_.empty()) throw std::logic_error(name() + ": backward called before forward");
  std::vector<Tensor> parts = split_last_axis(grad_out, widths_);
  Tensor grad_in;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    Tensor g = branches_[i]->backward(parts[i]);
    if (grad_in.empty()) {
      grad_in = std::move(g);
    } else {
      for (std::size_t j = 0; j < g.size(); ++j) grad_in[j] += g[j];
    }
  }
  return grad_in;
}

Shape ParallelConcat::output_shape(const Shape& input) const {
  Shape out;
  std::size_t channels = 0;
  for (const auto& b : branches_) {
    Shape s = b->output_shape(input);
    channels += s.back();
    s.back() = 0;
    if (!out.empty() && s != out) throw std::invalid_argument(name() + ": branch spatial shapes differ");
    out = s;
  }
  out.back() = channels;
  return out;
}

void ParallelConcat::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& b : branches_) b->collect_parameters(out);
}

void ParallelConcat::collect_buffers(std::vector<NamedTensor>& out) {
  for (auto& b : branches_) b->collect_buffers(out);
}

}  // namespace fedfusion
