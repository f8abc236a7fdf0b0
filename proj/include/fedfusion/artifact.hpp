#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfusion/architectures.hpp"
#include "fedfusion/model.hpp"
#include "fedfusion/wire.hpp"

namespace fedfusion {

struct ManifestEntry {
  std::string name;
  std::vector<std::uint32_t> dims;

  std::uint64_t numel() const;
  bool operator==(const ManifestEntry&) const = default;
};

// Architecture id + ordered (name, shape) manifest + flat float32 parameters.
// Buffers such as batch-norm running statistics are part of the manifest.
struct ModelArtifact {
  ArchitectureId arch = ArchitectureId::TinyVGG;
  std::vector<ManifestEntry> layout;
  std::vector<float> params;
  // Carried alongside, never serialized (LocalUpdate has its own accuracy field).
  std::optional<double> reported_accuracy;

  std::uint64_t manifest_total() const;
  // Throws std::invalid_argument if params do not match the manifest or are not finite.
  void validate() const;
};

// Bitwise comparison of the parameter payload.
bool operator==(const ModelArtifact& a, const ModelArtifact& b);

class ManifestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ModelArtifact export_artifact(Model& model);
// Loads params into an existing model; throws ManifestMismatch if arch or layout differ.
void import_artifact(const ModelArtifact& artifact, Model& model);
Model model_from_artifact(const ModelArtifact& artifact, const ArchitectureOptions& opts);

// Binary artifact encoding, shared by the model file and the wire payload.
void encode_artifact(const ModelArtifact& artifact, ByteWriter& out);
ModelArtifact decode_artifact(ByteReader& in);
std::vector<std::uint8_t> serialize_artifact(const ModelArtifact& artifact);
// Whole buffer must be one artifact; trailing bytes are an error.
ModelArtifact deserialize_artifact(std::span<const std::uint8_t> bytes);

void save_artifact(const std::filesystem::path& path, const ModelArtifact& artifact);
ModelArtifact load_artifact(const std::filesystem::path& path);

}  // namespace fedfusion
