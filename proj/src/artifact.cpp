#include "fedfusion/artifact.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace fedfusion {

namespace {

constexpr std::size_t kMaxNameLength = std::numeric_limits<std::uint16_t>::max();

std::vector<std::uint32_t> to_dims(const Shape& s) {
  std::vector<std::uint32_t> d;
  for (std::size_t v : s) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("dimension exceeds 32 bits");
    d.push_back(static_cast<std::uint32_t>(v));
  }
  return d;
}

std::string dims_string(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

}  // namespace

std::uint64_t ManifestEntry::numel() const {
  std::uint64_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

std::uint64_t ModelArtifact::manifest_total() const {
  std::uint64_t n = 0;
  for (const auto& e : layout) n += e.numel();
  return n;
}

void ModelArtifact::validate() const {
  if (manifest_total() != params.size()) {
    throw std::invalid_argument("artifact has " + std::to_string(params.size()) + " params but manifest declares " +
                                std::to_string(manifest_total()));
  }
  for (float p : params) {
    if (!std::isfinite(p)) throw std::invalid_argument("artifact contains a non-finite parameter");
  }
  if (reported_accuracy && !(*reported_accuracy >= 0.0 && *reported_accuracy <= 1.0)) {
    throw std::invalid_argument("reported accuracy outside [0,1]");
  }
}

bool operator==(const ModelArtifact& a, const ModelArtifact& b) {
  return a.arch == b.arch && a.layout == b.layout && a.reported_accuracy == b.reported_accuracy &&
         a.params.size() == b.params.size() &&
         std::memcmp(a.params.data(), b.params.data(), a.params.size() * sizeof(float)) == 0;
}

ModelArtifact export_artifact(Model& model) {
  ModelArtifact a;
  a.arch = model.arch();
  for (const NamedTensor& t : model.state()) {
    a.layout.push_back({t.name, to_dims(t.tensor->shape())});
    for (double v : t.tensor->data()) a.params.push_back(static_cast<float>(v));
  }
  return a;
}

void import_artifact(const ModelArtifact& artifact, Model& model) {
  if (artifact.arch != model.arch()) {
    throw ManifestMismatch("artifact is " + std::string(architecture_cli_name(artifact.arch)) + " but model is " +
                           std::string(architecture_cli_name(model.arch())));
  }
  std::vector<NamedTensor> state = model.state();
  if (state.size() != artifact.layout.size()) {
    throw ManifestMismatch("manifest has " + std::to_string(artifact.layout.size()) + " entries, model has " +
                           std::to_string(state.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    const ManifestEntry& e = artifact.layout[i];
    const std::vector<std::uint32_t> want = to_dims(state[i].tensor->shape());
    if (e.name != state[i].name || e.dims != want) {
      throw ManifestMismatch("manifest entry " + std::to_string(i) + " is " + e.name + dims_string(e.dims) +
                             ", model expects " + state[i].name + dims_string(want));
    }
  }
  if (artifact.params.size() != artifact.manifest_total()) {
    throw ManifestMismatch("parameter count does not match manifest");
  }
  std::size_t offset = 0;
  for (NamedTensor& t : state) {
    auto dst = t.tensor->data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<double>(artifact.params[offset + j]);
    offset += dst.size();
  }
}

Model model_from_artifact(const ModelArtifact& artifact, const ArchitectureOptions& opts) {
  Model m = build_model(artifact.arch, opts);
  import_artifact(artifact, m);
  return m;
}

void encode_artifact(const ModelArtifact& a, ByteWriter& out) {
  if (a.params.size() != a.manifest_total()) throw std::invalid_argument("artifact params do not match manifest");
  if (a.layout.size() > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("manifest too large");
  out.u16(static_cast<std::uint16_t>(a.arch));
  out.u32(static_cast<std::uint32_t>(a.layout.size()));
  for (const auto& e : a.layout) {
    if (e.name.size() > kMaxNameLength) throw std::invalid_argument("manifest name too long: " + e.name.substr(0, 32));
    out.u16(static_cast<std::uint16_t>(e.name.size()));
    out.bytes(e.name);
    out.u32(static_cast<std::uint32_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) out.u32(d);
  }
  out.u64(a.params.size());
  for (float p : a.params) {
    if (!std::isfinite(p)) throw std::invalid_argument("cannot encode a non-finite parameter");
    out.f32(p);
  }
}

ModelArtifact decode_artifact(ByteReader& in) {
  ModelArtifact a;
  const std::uint16_t code = in.u16();
  const auto arch = architecture_from_code(code);
  if (!arch) throw CodecError(CodecErrorKind::Malformed, "unknown architecture id " + std::to_string(code));
  a.arch = *arch;

  const std::uint32_t entries = in.u32();
  in.need_items(entries, 2 + 4);
  a.layout.reserve(entries);
  for (std::uint32_t i = 0; i < entries; ++i) {
    ManifestEntry e;
    const std::uint16_t len = in.u16();
    auto name = in.bytes(len);
    e.name.assign(name.begin(), name.end());
    const std::uint32_t rank = in.u32();
    in.need_items(rank, 4);
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = in.u32();
      if (d == 0) throw CodecError(CodecErrorKind::Malformed, "zero dimension in manifest entry " + e.name);
      e.dims.push_back(d);
    }
    a.layout.push_back(std::move(e));
  }

  const std::uint64_t count = in.u64();
  in.need_items(count, 4);
  // Products of huge dims can wrap, so compare against count step by step.
  std::uint64_t total = 0;
  bool exceeds = false;
  for (const auto& e : a.layout) {
    std::uint64_t n = 1;
    for (std::uint32_t d : e.dims) {
      if (d > count / n) exceeds = true;
      if (exceeds) break;
      n *= d;
    }
    if (exceeds || n > count - total) {
      exceeds = true;
      break;
    }
    total += n;
  }
  if (exceeds || total != count) {
    throw CodecError(CodecErrorKind::Malformed, "parameter count " + std::to_string(count) +
                                                    " does not match manifest total " + std::to_string(total));
  }
  a.params.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    a.params[i] = in.f32();
    if (!std::isfinite(a.params[i])) throw CodecError(CodecErrorKind::Malformed, "non-finite parameter");
  }
  return a;
}

std::vector<std::uint8_t> serialize_artifact(const ModelArtifact& artifact) {
  ByteWriter w;
  encode_artifact(artifact, w);
  return w.take();
}

ModelArtifact deserialize_artifact(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ModelArtifact a = decode_artifact(r);
  if (r.remaining()) throw CodecError(CodecErrorKind::TrailingBytes, std::to_string(r.remaining()) + " bytes after artifact");
  return a;
}

void save_artifact(const std::filesystem::path& path, const ModelArtifact& artifact) {
  const auto bytes = serialize_artifact(artifact);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

ModelArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize_artifact(bytes);
  } catch (const CodecError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace fedfusion
