#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fedfusion/ops.hpp"
#include "fedfusion/rng.hpp"
#include "fedfusion/tensor.hpp"

namespace fedfusion {

// A differentiable stage. Tensors carry a leading batch axis; output_shape()
// works on per-sample shapes. backward() must follow the matching forward().
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }

  virtual Tensor forward(const Tensor& x, Mode mode, Rng& rng) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  virtual void collect_buffers(std::vector<NamedTensor>& /*out*/) {}

  // Freezes or unfreezes every parameter owned by this layer.
  void set_trainable(bool trainable);

 private:
  std::string name_;
};

// He-uniform initialisation: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

Tensor concat_last_axis(const std::vector<Tensor>& parts);
std::vector<Tensor> split_last_axis(const Tensor& whole, const std::vector<std::size_t>& widths);

class Conv2D : public Layer {
 public:
  Conv2D(std::string name, std::size_t kernel, std::size_t in_channels, std::size_t out_channels, Rng& init,
         std::size_t stride = 1, Padding padding = Padding::Same);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

  Parameter& kernel() { return kernel_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter kernel_;
  Parameter bias_;
  std::size_t stride_;
  Padding padding_;
  Tensor cached_input_;
};

class Dense : public Layer {
 public:
  Dense(std::string name, std::size_t in_features, std::size_t out_features, Rng& init);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

  Parameter& weights() { return weights_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weights_;
  Parameter bias_;
  Tensor cached_input_;
};

class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, std::size_t features);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return input; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<NamedTensor>& out) override;

 private:
  Parameter gamma_;
  Parameter beta_;
  BatchNormStats stats_;
  BatchNormCache cache_;
};

// Per-position normalisation over the last axis with learned scale and shift.
class LayerNorm : public Layer {
 public:
  LayerNorm(std::string name, std::size_t features);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return input; }
  void collect_parameters(std::vector<Parameter*>& out) override;

 private:
  Parameter gamma_;
  Parameter beta_;
  LayerNormCache cache_;
};

class Relu : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return input; }

 private:
  Tensor cached_input_;
};

class MaxPool2D : public Layer {
 public:
  MaxPool2D(std::string name, std::size_t size) : Layer(std::move(name)), size_(size) {}
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;

 private:
  std::size_t size_;
  Shape input_shape_;
  std::vector<std::vector<std::size_t>> argmax_;
};

class GlobalAvgPool : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return {input.at(2)}; }

 private:
  Shape input_shape_;
};

class Flatten : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return {shape_numel(input)}; }

 private:
  Shape input_shape_;
};

class Dropout : public Layer {
 public:
  Dropout(std::string name, double rate);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return input; }

 private:
  double rate_;
  Tensor mask_;
  bool identity_ = true;
};

class Sequential : public Layer {
 public:
  using Layer::Layer;

  template <typename T, typename... Args>
  T& add(Args&&... args) {
    auto layer = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<NamedTensor>& out) override;

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Parallel branches over the same input, concatenated on the channel (last) axis.
class ParallelConcat : public Layer {
 public:
  using Layer::Layer;

  Sequential& add_branch(std::string name);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<NamedTensor>& out) override;

  std::size_t branch_count() const { return branches_.size(); }
  Sequential& branch(std::size_t i) { return *branches_.at(i); }

 private:
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<std::size_t> widths_;
};

}  // namespace fedfusion
