#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "fedfusion/artifact.hpp"
#include "fedfusion/wire.hpp"

namespace fedfusion {

inline constexpr std::array<std::uint8_t, 4> kFrameMagic{'F', 'L', 'N', 'G'};
inline constexpr std::uint8_t kProtocolVersion = 0x01;
inline constexpr std::size_t kFrameHeaderSize = 10;  // magic, version, tag, u32 length
inline constexpr std::uint32_t kMaxPayloadSize = 256u << 20;

enum class MessageTag : std::uint8_t {
  Register = 0x01,
  GlobalModel = 0x02,
  LocalUpdate = 0x03,
  RoundResult = 0x04,
  Shutdown = 0x05,
};

struct RegisterMsg {
  std::uint32_t client_id = 0;
  bool operator==(const RegisterMsg&) const = default;
};

struct GlobalModelMsg {
  std::uint32_t round = 0;
  ModelArtifact artifact;
  bool operator==(const GlobalModelMsg&) const = default;
};

struct LocalUpdateMsg {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;
  double accuracy = 0.0;  // in [0, 1]
  ModelArtifact artifact;
  bool operator==(const LocalUpdateMsg&) const = default;
};

struct RoundResultMsg {
  std::uint32_t round = 0;
  bool promoted = false;
  double global_accuracy = 0.0;
  bool operator==(const RoundResultMsg&) const = default;
};

struct ShutdownMsg {
  bool operator==(const ShutdownMsg&) const = default;
};

using FedMessage = std::variant<RegisterMsg, GlobalModelMsg, LocalUpdateMsg, RoundResultMsg, ShutdownMsg>;

MessageTag message_tag(const FedMessage& msg);

struct FrameHeader {
  MessageTag tag;
  std::uint32_t payload_length;
};

// Parses the fixed 10-byte header. Magic is checked on whatever prefix is present,
// so a short buffer with wrong magic reports BadMagic rather than Truncated.
FrameHeader decode_header(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const FedMessage& msg);
std::vector<std::uint8_t> encode_payload(const FedMessage& msg);
// Exactly one frame; anything after the declared payload is TrailingBytes.
FedMessage decode(std::span<const std::uint8_t> frame);
FedMessage decode_payload(MessageTag tag, std::span<const std::uint8_t> payload);

}  // namespace fedfusion
