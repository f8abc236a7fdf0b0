#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedfusion/layers.hpp"

namespace fedfusion {

// Wire-stable numeric codes.
enum class ArchitectureId : std::uint16_t {
  TinyVGG = 1,
  TinyInception = 2,
  TinyDense = 3,
  TinySwin = 4,
};

inline constexpr ArchitectureId kAllArchitectures[] = {ArchitectureId::TinyVGG, ArchitectureId::TinyInception,
                                                       ArchitectureId::TinyDense, ArchitectureId::TinySwin};

std::optional<ArchitectureId> architecture_from_code(std::uint16_t code);
// CLI names: vgg, inception, dense, swin.
std::string_view architecture_cli_name(ArchitectureId arch);
// Comparison-table names: VGG-19, Inception V3, DenseNet 201, SWIN Transformer.
std::string_view architecture_display_name(ArchitectureId arch);
// Throws std::invalid_argument listing the accepted names.
ArchitectureId parse_architecture(std::string_view name);

// A classifier: layer stack producing logits, plus the input contract it was built for.
class Model {
 public:
  Model(ArchitectureId arch, Shape input_shape, std::size_t num_classes, std::unique_ptr<Sequential> body,
        std::uint64_t dropout_seed);

  ArchitectureId arch() const { return arch_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }

  // batch[N, ...input_shape] -> logits[N, k]
  Tensor logits(const Tensor& batch, Mode mode);
  // Inference-mode class probabilities [N, k].
  Tensor predict_proba(const Tensor& batch);
  // Propagates d(loss)/d(logits) back, accumulating parameter gradients.
  Tensor backward(const Tensor& grad_logits);

  std::vector<Parameter*> parameters();
  // Parameters followed by buffers, in a stable order; the serialization manifest.
  std::vector<NamedTensor> state();
  std::size_t parameter_count();

  void zero_grad();
  void reseed_dropout(std::uint64_t seed) { dropout_rng_.reseed(seed); }
  Sequential& body() { return *body_; }

 private:
  ArchitectureId arch_;
  Shape input_shape_;
  std::size_t num_classes_;
  std::unique_ptr<Sequential> body_;
  Rng dropout_rng_;
};

}  // namespace fedfusion
