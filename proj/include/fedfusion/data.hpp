#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedfusion/rng.hpp"
#include "fedfusion/tensor.hpp"

namespace fedfusion {

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames{"COVID-19", "Pneumonia", "Normal"};
// On-disk layout: one subdirectory per class.
inline constexpr std::array<std::string_view, kNumClasses> kClassDirs{"covid", "pneumonia", "normal"};

struct Sample {
  Tensor image;  // [H, W, C], values in [0, 1]
  std::size_t label = 0;
  std::size_t id = 0;  // stable identity within the originating dataset
};

struct LabeledDataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  Shape image_shape() const;
  std::vector<std::size_t> class_counts() const;
  // Checks the dataset invariants; throws std::invalid_argument on violation.
  void validate() const;
};

// Stacks the selected images into [N, H, W, C].
Tensor batch_images(const LabeledDataset& ds, std::span<const std::size_t> indices);
std::vector<std::size_t> batch_labels(const LabeledDataset& ds, std::span<const std::size_t> indices);

// Class 0: bright disk near the centre. Class 1: horizontal stripes.
// Class 2: low-amplitude noise background. Gaussian noise is added on top.
LabeledDataset generate_synthetic(std::size_t n_per_class, std::size_t size, double noise_level, std::uint64_t seed);

// ---- binary netpbm (P5 greyscale / P6 colour, maxval 255) ----

enum class RejectReason { BadHeader, Truncated, WrongShape, Unreadable };
std::string_view reject_reason_name(RejectReason reason);

class PnmError : public std::runtime_error {
 public:
  PnmError(RejectReason reason, const std::string& what) : std::runtime_error(what), reason_(reason) {}
  RejectReason reason() const { return reason_; }

 private:
  RejectReason reason_;
};

struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

PnmImage decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const PnmImage& image);

Tensor pnm_to_tensor(const PnmImage& image, double rescale);
// Inverse of pnm_to_tensor(.., 1/255): values are scaled by 255, rounded and clamped.
PnmImage tensor_to_pnm(const Tensor& image);
void write_pnm(const std::filesystem::path& path, const Tensor& image);

struct Rejection {
  std::filesystem::path path;
  RejectReason reason;
  std::string detail;
};

struct LoadResult {
  LabeledDataset dataset;
  std::vector<Rejection> rejected;
};

// Reads <root>/{covid,pneumonia,normal}/* . Corrupted files are skipped and
// reported. Throws if nothing is found or more than half the files are rejected.
LoadResult load_directory(const std::filesystem::path& root, double rescale = 1.0 / 255.0);

// ---- augmentation ----

struct AugmentConfig {
  double rescale = 1.0;
  double rotation_max_degrees = 15.0;
  bool horizontal_flip = true;
  double zoom_range = 0.1;

  static AugmentConfig disabled() { return {1.0, 0.0, false, 0.0}; }
  void validate() const;
};

// Bilinear resampling with edge clamping; output is clamped to [0, 1].
Tensor rotate_image(const Tensor& image, double degrees);
Tensor flip_horizontal(const Tensor& image);
Tensor zoom_image(const Tensor& image, double factor);

// rescale -> random rotation -> random horizontal flip -> random zoom.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng);

// ---- splitting ----

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// Stratified: floor(train_fraction * n_c) samples of each class go to train.
TrainTestSplit split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed);

}  // namespace fedfusion
