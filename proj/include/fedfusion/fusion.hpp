#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedfusion/artifact.hpp"
#include "fedfusion/model.hpp"

namespace fedfusion {

enum class FusionMode { Sum, Average };
inline constexpr FusionMode kAllFusionModes[] = {FusionMode::Sum, FusionMode::Average};

std::string_view fusion_mode_name(FusionMode mode);  // "Sum" / "Average"
std::string fusion_display_name(FusionMode mode);    // "Fusion(Sum)"

// Soft voting over per-member probability vectors. Each input must sum to 1 +- 1e-6.
Tensor fuse(std::span<const Tensor> probability_vectors, FusionMode mode);
// Same combination without the probability check, for pre-softmax scores.
Tensor fuse_scores(std::span<const Tensor> score_vectors, FusionMode mode);

struct EnsembleMember {
  ArchitectureId arch;
  ModelArtifact artifact;
  Model model;
};

class EnsembleModel {
 public:
  // Needs at least two members sharing num_classes and input shape.
  EnsembleModel(const std::vector<ModelArtifact>& artifacts, const ArchitectureOptions& opts, FusionMode mode,
                bool fuse_logits = false);

  std::vector<EnsembleMember>& members() { return members_; }
  FusionMode mode() const { return mode_; }
  void set_mode(FusionMode mode) { mode_ = mode; }
  bool fuses_logits() const { return fuse_logits_; }
  std::size_t num_classes() const { return members_.front().model.num_classes(); }

  // Per-member inference-mode outputs [N,k] (probabilities, or logits when fusing logits).
  std::vector<Tensor> member_outputs(const Tensor& batch);

 private:
  std::vector<EnsembleMember> members_;
  FusionMode mode_;
  bool fuse_logits_;
};

struct EnsemblePrediction {
  std::size_t class_index = 0;
  Tensor scores;
};

// Single image [H,W,C]. Ties in the fused scores go to the lowest class index.
EnsemblePrediction ensemble_predict(EnsembleModel& ensemble, const Tensor& image);
// Batched variant over [N,H,W,C].
std::vector<EnsemblePrediction> ensemble_predict_batch(EnsembleModel& ensemble, const Tensor& batch);
// Fuses already computed member outputs ([N,k] each) row by row.
std::vector<EnsemblePrediction> fuse_rows(std::span<const Tensor> member_outputs, FusionMode mode, bool check_simplex);

}  // namespace fedfusion
