#include "fedfusion/train.hpp"

#include <numeric>
#include <stdexcept>

#include "fedfusion/ops.hpp"

namespace fedfusion {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (augmentation_multiplier == 0) throw std::invalid_argument("augmentation multiplier must be positive");
  augmentation.validate();
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Evaluation evaluate(Model& model, const LabeledDataset& ds, std::size_t batch_size) {
  Evaluation ev;
  if (ds.empty()) return ev;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, ds.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = model.predict_proba(batch_images(ds, idx));
    const std::size_t k = probs.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::vector<double> p(probs.data().begin() + static_cast<std::ptrdiff_t>(r * k),
                            probs.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
      const std::size_t label = ds.samples[idx[r]].label;
      const std::size_t pred = argmax(p);
      correct += pred == label ? 1 : 0;
      loss += cross_entropy(probs.slice(r), label);
      ev.predictions.push_back(pred);
      ev.labels.push_back(label);
      ev.probabilities.push_back(std::move(p));
    }
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  ev.mean_loss = loss / static_cast<double>(ds.size());
  return ev;
}

TrainingHistory train(Model& model, const LabeledDataset& train_set, const LabeledDataset* validation,
                      const TrainConfig& config) {
  config.validate();
  TrainingHistory history;
  const std::size_t n = train_set.size();
  if (n < 2) return history;

  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t steps = config.steps_per_epoch ? config.steps_per_epoch : n / batch;
  if (steps * batch > n * config.augmentation_multiplier) {
    throw std::invalid_argument("steps_per_epoch x batch_size exceeds available samples x augmentation multiplier");
  }

  Rng rng(config.rng_seed);
  model.reseed_dropout(mix_seed(config.rng_seed, 1));
  SgdOptimizer optimizer(config.learning_rate, config.momentum);
  std::vector<Parameter*> params = model.parameters();
  model.zero_grad();

  std::vector<std::size_t> base(n);
  std::iota(base.begin(), base.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order;
    while (order.size() < steps * batch) {
      std::vector<std::size_t> pass = base;
      rng.shuffle(pass);
      order.insert(order.end(), pass.begin(), pass.end());
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::span<const std::size_t> idx(order.data() + step * batch, batch);
      std::vector<Tensor> images;
      images.reserve(batch);
      for (std::size_t i : idx) {
        const Tensor& img = train_set.samples[i].image;
        images.push_back(config.augment ? augment(img, config.augmentation, rng) : img);
      }
      const std::vector<std::size_t> labels = batch_labels(train_set, idx);
      const Tensor logits = model.logits(stack(images), Mode::Train);
      LossAndGrad lg = softmax_cross_entropy(logits, labels);
      model.backward(lg.grad_logits);
      optimizer.step(params);

      loss_sum += lg.loss;
      const std::size_t k = lg.probs.dim(1);
      for (std::size_t r = 0; r < batch; ++r) {
        if (argmax(std::span<const double>(lg.probs.data().data() + r * k, k)) == labels[r]) ++correct;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(steps);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(steps * batch);
    if (validation && !validation->empty()) {
      Evaluation ev = evaluate(model, *validation);
      rec.validation_accuracy = ev.accuracy;
      rec.validation_loss = ev.mean_loss;
      rec.validation_probabilities = std::move(ev.probabilities);
      rec.validation_labels = std::move(ev.labels);
    }
    history.epochs.push_back(std::move(rec));
  }
  return history;
}

}  // namespace fedfusion
