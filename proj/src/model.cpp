#include "fedfusion/model.hpp"

#include <stdexcept>

namespace fedfusion {

std::optional<ArchitectureId> architecture_from_code(std::uint16_t code) {
  if (code >= 1 && code <= 4) return static_cast<ArchitectureId>(code);
  return std::nullopt;
}

std::string_view architecture_cli_name(ArchitectureId arch) {
  switch (arch) {
    case ArchitectureId::TinyVGG: return "vgg";
    case ArchitectureId::TinyInception: return "inception";
    case ArchitectureId::TinyDense: return "dense";
    case ArchitectureId::TinySwin: return "swin";
  }
  return "unknown";
}

std::string_view architecture_display_name(ArchitectureId arch) {
  switch (arch) {
    case ArchitectureId::TinyVGG: return "VGG-19";
    case ArchitectureId::TinyInception: return "Inception V3";
    case ArchitectureId::TinyDense: return "DenseNet 201";
    case ArchitectureId::TinySwin: return "SWIN Transformer";
  }
  return "unknown";
}

ArchitectureId parse_architecture(std::string_view name) {
  for (ArchitectureId a : kAllArchitectures) {
    if (architecture_cli_name(a) == name) return a;
  }
  throw std::invalid_argument("unknown model '" + std::string(name) + "'; expected one of {vgg, inception, dense, swin}");
}

Model::Model(ArchitectureId arch, Shape input_shape, std::size_t num_classes, std::unique_ptr<Sequential> body,
             std::uint64_t dropout_seed)
    : arch_(arch),
      input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      body_(std::move(body)),
      dropout_rng_(dropout_seed) {}

Tensor Model::logits(const Tensor& batch, Mode mode) {
  Shape sample(batch.shape().begin() + (batch.rank() ? 1 : 0), batch.shape().end());
  if (batch.rank() == 0 || sample != input_shape_) {
    Shape expected = input_shape_;
    expected.insert(expected.begin(), batch.rank() ? batch.dim(0) : 1);
    throw ShapeError("model input", expected, batch.shape());
  }
  return body_->forward(batch, mode, dropout_rng_);
}

Tensor Model::predict_proba(const Tensor& batch) { return softmax(logits(batch, Mode::Infer)); }

Tensor Model::backward(const Tensor& grad_logits) { return body_->backward(grad_logits); }

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  body_->collect_parameters(out);
  return out;
}

std::vector<NamedTensor> Model::state() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.push_back({p->name, &p->value});
  body_->collect_buffers(out);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

}  // namespace fedfusion
