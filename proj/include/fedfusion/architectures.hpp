#pragma once

// Desk-scale classifiers, one per architectural motif:
//   TinyVGG        stacked 3x3 conv stages, batch-normalised dense head
//   TinyInception  parallel 1x1 / factorised-5x5 / 3x3 branches
//   TinyDense      densely connected block (each layer sees all predecessors)
//   TinySwin       patch embedding + regular/shifted window attention blocks

#include <cstdint>

#include "fedfusion/model.hpp"
#include "fedfusion/swin.hpp"

namespace fedfusion {

struct DenseBlockSpec {
  std::size_t num_layers = 3;
  std::size_t growth_rate = 8;
  std::size_t input_channels = 8;

  std::size_t output_channels() const { return input_channels + num_layers * growth_rate; }
};

struct ArchitectureOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t num_classes = 3;
  double dropout_rate = 0.5;
  std::size_t head_units = 64;  // dense head of inception/dense models
  std::size_t vgg_hidden1 = 128;
  std::size_t vgg_hidden2 = 64;
  std::size_t conv_width = 8;  // base channel count
  DenseBlockSpec dense_block;
  SwinConfig swin;
  std::uint64_t init_seed = 1;
};

// Each layer l (1-based) is conv3x3 + relu producing growth_rate channels
// from the channel-concatenation of x0 .. x(l-1).
class DenseBlock : public Layer {
 public:
  DenseBlock(std::string name, DenseBlockSpec spec, Rng& init);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

  const DenseBlockSpec& spec() const { return spec_; }
  // H(l) for l in [1, L].
  Sequential& composite(std::size_t l) { return *layers_.at(l - 1); }
  // Input seen by H(l) during the last forward pass.
  const Tensor& layer_input(std::size_t l) const { return inputs_.at(l - 1); }

 private:
  DenseBlockSpec spec_;
  std::vector<std::unique_ptr<Sequential>> layers_;
  std::vector<Tensor> inputs_;
};

// Runs a block on one sample [H,W,c0] or a batch [N,H,W,c0] in inference mode.
Tensor dense_block_forward(const Tensor& x0, DenseBlock& block);

Model build_tiny_vgg(const ArchitectureOptions& opts);
Model build_tiny_inception(const ArchitectureOptions& opts);
Model build_tiny_dense(const ArchitectureOptions& opts);
Model build_tiny_swin(const ArchitectureOptions& opts);
Model build_model(ArchitectureId arch, const ArchitectureOptions& opts);

}  // namespace fedfusion
