#include "fedfusion/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace fedfusion {

namespace fs = std::filesystem;

// ------------------------------------------------------------------- dataset

Shape LabeledDataset::image_shape() const {
  if (samples.empty()) throw std::logic_error("empty dataset has no image shape");
  return samples.front().image.shape();
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(kNumClasses, 0);
  for (const Sample& s : samples) counts.at(s.label)++;
  return counts;
}

void LabeledDataset::validate() const {
  if (samples.empty()) return;
  const Shape shape = image_shape();
  for (const Sample& s : samples) {
    if (s.image.shape() != shape) throw ShapeError("dataset images differ in shape", shape, s.image.shape());
    if (s.label >= kNumClasses) throw std::invalid_argument("label out of range: " + std::to_string(s.label));
    for (double v : s.image.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("pixel outside [0,1] in sample " + std::to_string(s.id));
    }
  }
}

Tensor batch_images(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<Tensor> imgs;
  imgs.reserve(indices.size());
  for (std::size_t i : indices) imgs.push_back(ds.samples.at(i).image);
  return stack(imgs);
}

std::vector<std::size_t> batch_labels(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(ds.samples.at(i).label);
  return labels;
}

// ----------------------------------------------------------------- synthetic

LabeledDataset generate_synthetic(std::size_t n_per_class, std::size_t size, double noise_level, std::uint64_t seed) {
  if (size == 0 || size % 4 != 0) throw std::invalid_argument("synthetic image size must be a positive multiple of 4");
  if (noise_level < 0.0) throw std::invalid_argument("noise level must be non-negative");
  Rng rng(seed);
  LabeledDataset ds;
  ds.samples.reserve(n_per_class * kNumClasses);
  const double s = static_cast<double>(size);
  for (std::size_t label = 0; label < kNumClasses; ++label) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Tensor img({size, size, 1});
      if (label == 0) {
        const double cy = s / 2.0 + rng.uniform(-s / 8.0, s / 8.0);
        const double cx = s / 2.0 + rng.uniform(-s / 8.0, s / 8.0);
        const double r = rng.uniform(s / 5.0, s / 3.0);
        const double amp = rng.uniform(0.6, 1.0);
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            img[y * size + x] = dy * dy + dx * dx <= r * r ? amp : 0.0;
          }
        }
      } else if (label == 1) {
        const std::size_t period = 4 + 2 * rng.below(3);
        const std::size_t phase = rng.below(period);
        const double amp = rng.uniform(0.6, 1.0);
        for (std::size_t y = 0; y < size; ++y) {
          const bool bright = (y + phase) % period < period / 2;
          for (std::size_t x = 0; x < size; ++x) img[y * size + x] = bright ? amp : 0.1;
        }
      } else {
        for (std::size_t p = 0; p < img.size(); ++p) img[p] = 0.2 + 0.1 * rng.uniform();
      }
      if (noise_level > 0.0) {
        for (std::size_t p = 0; p < img.size(); ++p) img[p] += noise_level * rng.normal();
      }
      for (std::size_t p = 0; p < img.size(); ++p) img[p] = std::clamp(img[p], 0.0, 1.0);
      ds.samples.push_back({std::move(img), label, ds.samples.size()});
    }
  }
  return ds;
}

// -------------------------------------------------------------------- netpbm

std::string_view reject_reason_name(RejectReason reason) {
  switch (reason) {
    case RejectReason::BadHeader: return "bad-header";
    case RejectReason::Truncated: return "truncated";
    case RejectReason::WrongShape: return "wrong-shape";
    case RejectReason::Unreadable: return "unreadable";
  }
  return "unknown";
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  // Reads the next whitespace-delimited token, skipping '#' comments.
  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) {
      if (out.size() > 16) throw PnmError(RejectReason::BadHeader, "header token too long");
      out.push_back(static_cast<char>(bytes_[pos_++]));
    }
    if (out.empty()) throw PnmError(RejectReason::BadHeader, "header ended early");
    return out;
  }

  std::size_t number(const char* what) {
    const std::string t = token();
    std::size_t v = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c))) throw PnmError(RejectReason::BadHeader, std::string("non-numeric ") + what);
      v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
  }

  // The single whitespace byte that terminates the header.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw PnmError(RejectReason::BadHeader, "missing header terminator");
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

PnmImage decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw PnmError(RejectReason::BadHeader, "bad magic (expected P5 or P6)");
  }
  PnmImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader reader(bytes.subspan(2));
  img.width = reader.number("width");
  img.height = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  if (img.width == 0 || img.height == 0) throw PnmError(RejectReason::BadHeader, "zero image dimension");
  if (img.width > 16384 || img.height > 16384) throw PnmError(RejectReason::BadHeader, "image dimension too large");
  if (maxval != 255) throw PnmError(RejectReason::BadHeader, "unsupported maxval " + std::to_string(maxval));
  reader.end_of_header();
  const std::size_t offset = 2 + reader.position();
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - offset < need) {
    throw PnmError(RejectReason::Truncated, "payload has " + std::to_string(bytes.size() - offset) + " of " +
                                               std::to_string(need) + " bytes");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + need));
  return img;
}

std::vector<std::uint8_t> encode_pnm(const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("netpbm supports 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw std::invalid_argument("pixel buffer does not match image dimensions");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Tensor pnm_to_tensor(const PnmImage& image, double rescale) {
  Tensor t({image.height, image.width, image.channels});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = static_cast<double>(image.pixels[i]) * rescale;
  return t;
}

PnmImage tensor_to_pnm(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("expected [H,W,C] image");
  PnmImage out{image.dim(1), image.dim(0), image.dim(2), std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(image[i] * 255.0), 0L, 255L));
  }
  return out;
}

void write_pnm(const fs::path& path, const Tensor& image) {
  const std::vector<std::uint8_t> bytes = encode_pnm(tensor_to_pnm(image));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

LoadResult load_directory(const fs::path& root, double rescale) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw std::runtime_error("data path is not a readable directory: " + root.string());

  LoadResult result;
  std::size_t total = 0;
  Shape expected;
  for (std::size_t label = 0; label < kNumClasses; ++label) {
    const fs::path dir = root / kClassDirs[label];
    if (!fs::is_directory(dir, ec)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      ++total;
      std::ifstream in(file, std::ios::binary);
      if (!in) {
        result.rejected.push_back({file, RejectReason::Unreadable, "cannot open"});
        continue;
      }
      const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      try {
        Tensor img = pnm_to_tensor(decode_pnm(bytes), rescale);
        if (expected.empty()) expected = img.shape();
        if (img.shape() != expected) {
          result.rejected.push_back({file, RejectReason::WrongShape,
                                     shape_to_string(img.shape()) + " differs from " + shape_to_string(expected)});
          continue;
        }
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
        const std::size_t id = result.dataset.samples.size();
        result.dataset.samples.push_back({std::move(img), label, id});
      } catch (const PnmError& e) {
        result.rejected.push_back({file, e.reason(), e.what()});
      }
    }
  }
  if (total == 0) throw std::runtime_error("no image files found under " + root.string());
  if (2 * result.rejected.size() > total) {
    throw std::runtime_error(std::to_string(result.rejected.size()) + " of " + std::to_string(total) +
                             " files rejected under " + root.string() + "; dataset presumed wrong");
  }
  return result;
}

// -------------------------------------------------------------- augmentation

void AugmentConfig::validate() const {
  if (!(rescale > 0.0)) throw std::invalid_argument("rescale must be positive");
  if (!(rotation_max_degrees >= 0.0)) throw std::invalid_argument("rotation must be non-negative");
  if (!(zoom_range >= 0.0 && zoom_range < 1.0)) throw std::invalid_argument("zoom range must be in [0,1)");
}

namespace {

// Samples image at fractional (y, x) with bilinear weights and edge clamping.
void sample_bilinear(const Tensor& img, double y, double x, double* out) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double a = img.at(y0, x0, ch), b = img.at(y0, x1, ch);
    const double d = img.at(y1, x0, ch), e = img.at(y1, x1, ch);
    const double top = a * (1.0 - fx) + b * fx;
    const double bottom = d * (1.0 - fx) + e * fx;
    out[ch] = std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
  }
}

template <typename Map>
Tensor resample(const Tensor& img, Map source_of) {
  if (img.rank() != 3) throw std::invalid_argument("expected [H,W,C] image");
  Tensor out(img.shape());
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto [sy, sx] = source_of(static_cast<double>(y), static_cast<double>(x));
      sample_bilinear(img, sy, sx, out.data().data() + (y * w + x) * c);
    }
  }
  return out;
}

}  // namespace

Tensor rotate_image(const Tensor& image, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(image.dim(0)) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.dim(1)) - 1.0) / 2.0;
  return resample(image, [&](double y, double x) {
    const double dy = y - cy, dx = x - cx;
    return std::pair{cy + cs * dy - sn * dx, cx + sn * dy + cs * dx};
  });
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("expected [H,W,C] image");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) out.at(y, x, ch) = image.at(y, w - 1 - x, ch);
    }
  }
  return out;
}

Tensor zoom_image(const Tensor& image, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("zoom factor must be positive");
  const double cy = (static_cast<double>(image.dim(0)) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.dim(1)) - 1.0) / 2.0;
  return resample(image, [&](double y, double x) { return std::pair{cy + (y - cy) / factor, cx + (x - cx) / factor}; });
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor out = image;
  if (cfg.rescale != 1.0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] * cfg.rescale, 0.0, 1.0);
  }
  if (cfg.rotation_max_degrees > 0.0) {
    out = rotate_image(out, rng.uniform(-cfg.rotation_max_degrees, cfg.rotation_max_degrees));
  }
  if (cfg.horizontal_flip && rng.uniform() < 0.5) out = flip_horizontal(out);
  if (cfg.zoom_range > 0.0) out = zoom_image(out, rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range));
  return out;
}

// ------------------------------------------------------------------ splitting

TrainTestSplit split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.samples[i].label).push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw std::invalid_argument("class " + std::string(kClassNames[c]) + " has fewer than 2 samples; cannot split");
    }
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size()) + 1e-9));
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  rng.shuffle(train_idx);
  rng.shuffle(test_idx);
  TrainTestSplit out;
  for (std::size_t i : train_idx) out.train.samples.push_back(ds.samples[i]);
  for (std::size_t i : test_idx) out.test.samples.push_back(ds.samples[i]);
  return out;
}

}  // namespace fedfusion
