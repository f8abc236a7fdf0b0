#include "fedfusion/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "fedfusion/train.hpp"

namespace fedfusion {

std::string_view fusion_mode_name(FusionMode mode) { return mode == FusionMode::Sum ? "Sum" : "Average"; }

std::string fusion_display_name(FusionMode mode) { return "Fusion(" + std::string(fusion_mode_name(mode)) + ")"; }

namespace {

Tensor combine(std::span<const Tensor> inputs, FusionMode mode, bool check_simplex) {
  if (inputs.empty()) throw std::invalid_argument("fuse needs at least one member output");
  const std::size_t k = inputs.front().size();
  Tensor out({k}, 0.0);
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    const Tensor& p = inputs[m];
    if (p.rank() != 1 || p.size() != k) throw ShapeError("member " + std::to_string(m) + " output", {k}, p.shape());
    if (check_simplex) {
      double s = 0.0;
      for (double v : p.data()) s += v;
      if (!(std::abs(s - 1.0) <= 1e-6)) {
        throw std::invalid_argument("member " + std::to_string(m) + " probabilities sum to " + std::to_string(s));
      }
    }
    for (std::size_t i = 0; i < k; ++i) out[i] += p[i];
  }
  if (mode == FusionMode::Average) {
    for (std::size_t i = 0; i < k; ++i) out[i] /= static_cast<double>(inputs.size());
  }
  return out;
}

}  // namespace

Tensor fuse(std::span<const Tensor> probability_vectors, FusionMode mode) {
  return combine(probability_vectors, mode, true);
}

Tensor fuse_scores(std::span<const Tensor> score_vectors, FusionMode mode) {
  return combine(score_vectors, mode, false);
}

EnsembleModel::EnsembleModel(const std::vector<ModelArtifact>& artifacts, const ArchitectureOptions& opts,
                             FusionMode mode, bool fuse_logits)
    : mode_(mode), fuse_logits_(fuse_logits) {
  if (artifacts.size() < 2) throw std::invalid_argument("an ensemble needs at least two members");
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    try {
      members_.push_back({artifacts[i].arch, artifacts[i], model_from_artifact(artifacts[i], opts)});
    } catch (const std::exception& e) {
      throw std::invalid_argument("member " + std::to_string(i) + " (" +
                                  std::string(architecture_cli_name(artifacts[i].arch)) + "): " + e.what());
    }
    const Model& m = members_.back().model;
    const Model& first = members_.front().model;
    if (m.num_classes() != first.num_classes() || m.input_shape() != first.input_shape()) {
      throw std::invalid_argument("member " + std::to_string(i) + " does not share num_classes/input shape with member 0");
    }
  }
}

std::vector<Tensor> EnsembleModel::member_outputs(const Tensor& batch) {
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    Model& m = members_[i].model;
    try {
      outs.push_back(fuse_logits_ ? m.logits(batch, Mode::Infer) : m.predict_proba(batch));
    } catch (const std::exception& e) {
      throw std::runtime_error("member " + std::to_string(i) + " (" + std::string(architecture_cli_name(m.arch())) +
                               ") failed: " + e.what());
    }
  }
  return outs;
}

std::vector<EnsemblePrediction> fuse_rows(std::span<const Tensor> member_outputs, FusionMode mode, bool check_simplex) {
  if (member_outputs.empty()) throw std::invalid_argument("no member outputs");
  const std::size_t n = member_outputs.front().dim(0);
  std::vector<EnsemblePrediction> preds;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<Tensor> rows;
    for (const Tensor& t : member_outputs) rows.push_back(t.slice(r));
    EnsemblePrediction p;
    p.scores = combine(rows, mode, check_simplex);
    p.class_index = argmax(p.scores.data());
    preds.push_back(std::move(p));
  }
  return preds;
}

std::vector<EnsemblePrediction> ensemble_predict_batch(EnsembleModel& ensemble, const Tensor& batch) {
  const auto outs = ensemble.member_outputs(batch);
  return fuse_rows(outs, ensemble.mode(), !ensemble.fuses_logits());
}

EnsemblePrediction ensemble_predict(EnsembleModel& ensemble, const Tensor& image) {
  Shape s = image.shape();
  s.insert(s.begin(), 1);
  return ensemble_predict_batch(ensemble, image.reshaped(s)).front();
}

}  // namespace fedfusion
