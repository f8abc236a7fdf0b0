#include "fedfusion/architectures.hpp"

#include <stdexcept>

namespace fedfusion {

// ------------------------------------------------------------------ DenseBlock

DenseBlock::DenseBlock(std::string name, DenseBlockSpec spec, Rng& init) : Layer(std::move(name)), spec_(spec) {
  if (spec.growth_rate == 0 || spec.input_channels == 0) throw std::invalid_argument("dense block sizes must be positive");
  for (std::size_t l = 1; l <= spec.num_layers; ++l) {
    const std::string lname = this->name() + ".h" + std::to_string(l);
    auto h = std::make_unique<Sequential>(lname);
    h->add<Conv2D>(lname + ".conv", 3, spec.input_channels + (l - 1) * spec.growth_rate, spec.growth_rate, init);
    h->add<Relu>(lname + ".relu");
    layers_.push_back(std::move(h));
  }
}

Tensor DenseBlock::forward(const Tensor& x, Mode mode, Rng& rng) {
  if (x.rank() != 4 || x.dim(3) != spec_.input_channels) {
    throw ShapeError(name() + " input channels", {x.rank() ? x.dim(0) : 0, 0, 0, spec_.input_channels}, x.shape());
  }
  std::vector<Tensor> features{x};
  inputs_.clear();
  for (auto& h : layers_) {
    inputs_.push_back(concat_last_axis(features));
    features.push_back(h->forward(inputs_.back(), mode, rng));
  }
  return concat_last_axis(features);
}

Tensor DenseBlock::backward(const Tensor& grad_out) {
  if (inputs_.size() != layers_.size()) throw std::logic_error(name() + ": backward called before forward");
  std::vector<std::size_t> widths{spec_.input_channels};
  for (std::size_t l = 0; l < layers_.size(); ++l) widths.push_back(spec_.growth_rate);
  std::vector<Tensor> grads = split_last_axis(grad_out, widths);
  for (std::size_t l = layers_.size(); l >= 1; --l) {
    Tensor g_in = layers_[l - 1]->backward(grads[l]);
    std::vector<std::size_t> in_widths(widths.begin(), widths.begin() + static_cast<std::ptrdiff_t>(l));
    std::vector<Tensor> parts = split_last_axis(g_in, in_widths);
    for (std::size_t j = 0; j < l; ++j) {
      for (std::size_t i = 0; i < parts[j].size(); ++i) grads[j][i] += parts[j][i];
    }
  }
  return std::move(grads[0]);
}

Shape DenseBlock::output_shape(const Shape& input) const {
  if (input.at(2) != spec_.input_channels) throw ShapeError(name() + " input", {input[0], input[1], spec_.input_channels}, input);
  return {input[0], input[1], spec_.output_channels()};
}

void DenseBlock::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& h : layers_) h->collect_parameters(out);
}

Tensor dense_block_forward(const Tensor& x0, DenseBlock& block) {
  Rng unused(0);
  if (x0.rank() == 3) {
    Tensor batch = x0.reshaped({1, x0.dim(0), x0.dim(1), x0.dim(2)});
    return block.forward(batch, Mode::Infer, unused).slice(0);
  }
  return block.forward(x0, Mode::Infer, unused);
}

// -------------------------------------------------------------------- builders

namespace {

Shape input_shape(const ArchitectureOptions& o) {
  if (o.height == 0 || o.width == 0 || o.channels == 0 || o.num_classes < 2) {
    throw std::invalid_argument("image dims must be positive and num_classes >= 2");
  }
  return {o.height, o.width, o.channels};
}

Model finish(ArchitectureId arch, const ArchitectureOptions& o, std::unique_ptr<Sequential> body) {
  Shape in = input_shape(o);
  const Shape out = body->output_shape(in);
  if (out != Shape{o.num_classes}) throw ShapeError("classifier head", {o.num_classes}, out);
  return Model(arch, std::move(in), o.num_classes, std::move(body), mix_seed(o.init_seed, 0xD5));
}

}  // namespace

Model build_tiny_vgg(const ArchitectureOptions& o) {
  const Shape in = input_shape(o);
  Rng init(o.init_seed);
  const std::size_t w = o.conv_width;
  auto net = std::make_unique<Sequential>("vgg");
  net->add<Conv2D>("conv1", 3, o.channels, w, init);
  net->add<Relu>("relu1");
  net->add<MaxPool2D>("pool1", 2);
  net->add<Conv2D>("conv2", 3, w, 2 * w, init);
  net->add<Relu>("relu2");
  net->add<MaxPool2D>("pool2", 2);
  net->add<Conv2D>("conv3", 3, 2 * w, 2 * w, init);
  net->add<Relu>("relu3");
  net->add<BatchNorm>("bn_conv", 2 * w);
  net->add<MaxPool2D>("pool3", 2);
  net->add<Flatten>("flatten");
  const std::size_t flat = net->output_shape(in).at(0);
  net->add<Dense>("fc1", flat, o.vgg_hidden1, init);
  net->add<BatchNorm>("bn_fc1", o.vgg_hidden1);
  net->add<Relu>("relu_fc1");
  net->add<Dropout>("dropout", o.dropout_rate);
  net->add<Dense>("fc2", o.vgg_hidden1, o.vgg_hidden2, init);
  net->add<BatchNorm>("bn_fc2", o.vgg_hidden2);
  net->add<Relu>("relu_fc2");
  net->add<Dense>("logits", o.vgg_hidden2, o.num_classes, init);
  return finish(ArchitectureId::TinyVGG, o, std::move(net));
}

Model build_tiny_inception(const ArchitectureOptions& o) {
  Rng init(o.init_seed);
  const std::size_t w = o.conv_width;
  auto net = std::make_unique<Sequential>("inception");
  net->add<Conv2D>("stem", 3, o.channels, w, init);
  net->add<Relu>("stem_relu");
  net->add<MaxPool2D>("stem_pool", 2);

  auto& mixed = net->add<ParallelConcat>("mixed");
  auto& b1 = mixed.add_branch("mixed.b1x1");
  b1.add<Conv2D>("mixed.b1x1.conv", 1, w, w, init);
  b1.add<Relu>("mixed.b1x1.relu");
  // Two stacked 3x3 convolutions cover the receptive field of one 5x5.
  auto& b5 = mixed.add_branch("mixed.b5x5");
  b5.add<Conv2D>("mixed.b5x5.reduce", 1, w, w, init);
  b5.add<Relu>("mixed.b5x5.reduce_relu");
  b5.add<Conv2D>("mixed.b5x5.conv_a", 3, w, w, init);
  b5.add<Relu>("mixed.b5x5.relu_a");
  b5.add<Conv2D>("mixed.b5x5.conv_b", 3, w, w, init);
  b5.add<Relu>("mixed.b5x5.relu_b");
  auto& b3 = mixed.add_branch("mixed.b3x3");
  b3.add<Conv2D>("mixed.b3x3.conv", 3, w, w, init);
  b3.add<Relu>("mixed.b3x3.relu");

  net->add<MaxPool2D>("mixed_pool", 2);
  net->add<GlobalAvgPool>("gap");
  net->add<Dense>("fc", 3 * w, o.head_units, init);
  net->add<Relu>("fc_relu");
  net->add<Dropout>("dropout", o.dropout_rate);
  net->add<Dense>("logits", o.head_units, o.num_classes, init);
  return finish(ArchitectureId::TinyInception, o, std::move(net));
}

Model build_tiny_dense(const ArchitectureOptions& o) {
  Rng init(o.init_seed);
  const DenseBlockSpec spec = o.dense_block;
  auto net = std::make_unique<Sequential>("dense");
  net->add<Conv2D>("stem", 3, o.channels, spec.input_channels, init);
  net->add<Relu>("stem_relu");
  net->add<MaxPool2D>("stem_pool", 2);
  net->add<DenseBlock>("block", spec, init);
  net->add<GlobalAvgPool>("gap");
  net->add<Dense>("fc", spec.output_channels(), o.head_units, init);
  net->add<Relu>("fc_relu");
  net->add<Dropout>("dropout", o.dropout_rate);
  net->add<Dense>("logits", o.head_units, o.num_classes, init);
  return finish(ArchitectureId::TinyDense, o, std::move(net));
}

Model build_tiny_swin(const ArchitectureOptions& o) {
  const SwinConfig& c = o.swin;
  validate_swin_config(c, o.height, o.width);
  Rng init(o.init_seed);
  auto net = std::make_unique<Sequential>("swin");
  net->add<PatchEmbed>("patch_embed", c.patch_size, o.channels, c.embed_dim, init);
  for (std::size_t d = 0; d < c.depth; ++d) {
    const std::string stage = "stage" + std::to_string(d);
    net->add<SwinBlock>(stage + ".block0", c.embed_dim, c.num_heads, c.window_size, 0, c.mlp_ratio * c.embed_dim, init);
    net->add<SwinBlock>(stage + ".block1", c.embed_dim, c.num_heads, c.window_size, c.shift_size,
                        c.mlp_ratio * c.embed_dim, init);
  }
  net->add<LayerNorm>("norm", c.embed_dim);
  net->add<GlobalAvgPool>("token_mean");
  net->add<Dense>("logits", c.embed_dim, o.num_classes, init);
  return finish(ArchitectureId::TinySwin, o, std::move(net));
}

Model build_model(ArchitectureId arch, const ArchitectureOptions& opts) {
  switch (arch) {
    case ArchitectureId::TinyVGG: return build_tiny_vgg(opts);
    case ArchitectureId::TinyInception: return build_tiny_inception(opts);
    case ArchitectureId::TinyDense: return build_tiny_dense(opts);
    case ArchitectureId::TinySwin: return build_tiny_swin(opts);
  }
  throw std::invalid_argument("unknown architecture id");
}

}  // namespace fedfusion
