#pragma once

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "fedfusion/layers.hpp"
#include "fedfusion/model.hpp"
#include "fedfusion/ops.hpp"
#include "fedfusion/rng.hpp"

namespace testing {

using namespace fedfusion;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("fedfusion_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central differences with h = 1e-6. Gradients below kGradFloor in magnitude are
// compared on an absolute scale. Probe losses are O(1), so FD cancellation noise
// sits around 1e-10..1e-8 and exactly-zero gradients (attention key bias) land well under.
inline constexpr double kFdStep = 1e-6;
inline constexpr double kGradFloor = 1e-4;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

struct GradReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;

  void add(double analytic, double numeric, const std::string& where) {
    const double e = rel_error(analytic, numeric);
    ++checked;
    if (e > max_rel) {
      max_rel = e;
      worst = where + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
    }
  }
  void merge(const GradReport& o) {
    checked += o.checked;
    if (o.max_rel > max_rel) {
      max_rel = o.max_rel;
      worst = o.worst;
    }
  }
};

// Indices to probe: all of them for small tensors, otherwise a random sample.
inline std::vector<std::size_t> probe_indices(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx;
  if (n <= limit) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (std::size_t i = 0; i < limit; ++i) idx.push_back(rng.below(n));
  }
  return idx;
}

// FD check of d/dv sum(R * f(v)) against `analytic` for every probed coordinate of v.
template <typename Loss>
GradReport check_coords(Tensor& v, const Tensor& analytic, Loss&& loss, const std::string& name, std::size_t limit,
                        Rng& rng) {
  GradReport rep;
  for (std::size_t i : probe_indices(v.size(), limit, rng)) {
    const double orig = v[i];
    v[i] = orig + kFdStep;
    const double up = loss();
    v[i] = orig - kFdStep;
    const double down = loss();
    v[i] = orig;
    rep.add(analytic[i], (up - down) / (2 * kFdStep), name + "[" + std::to_string(i) + "]");
  }
  return rep;
}

// Layer check with loss = sum(R * layer(x)); covers every parameter and the input.
inline GradReport layer_gradcheck(Layer& layer, Tensor x, std::uint64_t seed, std::size_t limit = 24,
                                  Mode mode = Mode::Train) {
  Rng rng(mix_seed(seed, 0xC0FFEE));
  Rng fwd_rng(0);
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  for (Parameter* p : params) p->zero_grad();

  fwd_rng.reseed(seed);
  const Tensor out = layer.forward(x, mode, fwd_rng);
  // Probe weights scaled by 1/sqrt(n) keep the loss O(1) whatever the output size.
  Tensor r = random_tensor(out.shape(), rng);
  for (double& v : r.data()) v /= std::sqrt(static_cast<double>(r.size()));
  const Tensor grad_x = layer.backward(r);

  auto loss = [&] {
    fwd_rng.reseed(seed);
    return dot(layer.forward(x, mode, fwd_rng), r);
  };
  GradReport rep;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    rep.merge(check_coords(p->value, analytic, loss, p->name, limit, rng));
  }
  rep.merge(check_coords(x, grad_x, loss, layer.name() + ".input", limit, rng));
  return rep;
}

// Full model check with mean softmax cross-entropy on a labelled batch.
inline GradReport model_gradcheck(Model& model, Tensor batch, const std::vector<std::size_t>& labels,
                                  std::uint64_t seed, std::size_t limit = 12) {
  Rng rng(mix_seed(seed, 0xC0FFEE));
  model.zero_grad();
  model.reseed_dropout(seed);
  LossAndGrad lg = softmax_cross_entropy(model.logits(batch, Mode::Train), labels);
  const Tensor grad_x = model.backward(lg.grad_logits);
  auto loss = [&] {
    model.reseed_dropout(seed);
    return softmax_cross_entropy(model.logits(batch, Mode::Train), labels).loss;
  };
  GradReport rep;
  for (Parameter* p : model.parameters()) {
    const Tensor analytic = p->grad;
    rep.merge(check_coords(p->value, analytic, loss, p->name, limit, rng));
  }
  rep.merge(check_coords(batch, grad_x, loss, "input", limit, rng));
  return rep;
}

}  // namespace testing
