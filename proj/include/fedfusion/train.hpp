#pragma once

#include <cstdint>
#include <vector>

#include "fedfusion/data.hpp"
#include "fedfusion/model.hpp"

namespace fedfusion {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 0;  // 0 means floor(n / batch_size), i.e. one pass
  std::size_t batch_size = 16;
  double dropout_rate = 0.5;
  std::uint64_t rng_seed = 1;
  double momentum = 0.0;
  bool augment = false;
  AugmentConfig augmentation;
  std::size_t augmentation_multiplier = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  // Inference-mode outputs on the validation set, kept so losses can be recomputed.
  std::vector<std::vector<double>> validation_probabilities;
  std::vector<std::size_t> validation_labels;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
};

struct Evaluation {
  std::vector<std::vector<double>> probabilities;
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Inference-mode evaluation.
Evaluation evaluate(Model& model, const LabeledDataset& ds, std::size_t batch_size = 64);

// Minibatch SGD on softmax cross-entropy. Bitwise deterministic given
// (config.rng_seed, dataset, config). Fewer than two samples: nothing to do.
TrainingHistory train(Model& model, const LabeledDataset& train_set, const LabeledDataset* validation,
                      const TrainConfig& config);

}  // namespace fedfusion
