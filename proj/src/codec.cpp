#include "fedfusion/codec.hpp"

#include <cmath>

namespace fedfusion {

std::string_view codec_error_name(CodecErrorKind kind) {
  switch (kind) {
    case CodecErrorKind::BadMagic: return "bad magic";
    case CodecErrorKind::UnsupportedVersion: return "unsupported version";
    case CodecErrorKind::UnknownTag: return "unknown tag";
    case CodecErrorKind::Truncated: return "truncated";
    case CodecErrorKind::LengthOverflow: return "length overflow";
    case CodecErrorKind::Malformed: return "malformed";
    case CodecErrorKind::TrailingBytes: return "trailing bytes";
  }
  return "codec error";
}

namespace {

void check_accuracy(double a, const char* what) {
  if (!(a >= 0.0 && a <= 1.0)) throw CodecError(CodecErrorKind::Malformed, std::string(what) + " outside [0,1]");
}

struct PayloadWriter {
  ByteWriter& w;
  void operator()(const RegisterMsg& m) { w.u32(m.client_id); }
  void operator()(const GlobalModelMsg& m) {
    w.u32(m.round);
    encode_artifact(m.artifact, w);
  }
  void operator()(const LocalUpdateMsg& m) {
    check_accuracy(m.accuracy, "accuracy");
    w.u32(m.client_id);
    w.u32(m.round);
    w.f64(m.accuracy);
    encode_artifact(m.artifact, w);
  }
  void operator()(const RoundResultMsg& m) {
    check_accuracy(m.global_accuracy, "global accuracy");
    w.u32(m.round);
    w.u8(m.promoted ? 1 : 0);
    w.f64(m.global_accuracy);
  }
  void operator()(const ShutdownMsg&) {}
};

}  // namespace

MessageTag message_tag(const FedMessage& msg) {
  return static_cast<MessageTag>(msg.index() + 1);
}

std::vector<std::uint8_t> encode_payload(const FedMessage& msg) {
  ByteWriter w;
  std::visit(PayloadWriter{w}, msg);
  return w.take();
}

std::vector<std::uint8_t> encode(const FedMessage& msg) {
  const std::vector<std::uint8_t> payload = encode_payload(msg);
  if (payload.size() > kMaxPayloadSize) throw CodecError(CodecErrorKind::LengthOverflow, "payload too large to frame");
  ByteWriter w;
  w.bytes(kFrameMagic);
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(message_tag(msg)));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload);
  return w.take();
}

FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
  for (std::size_t i = 0; i < kFrameMagic.size() && i < bytes.size(); ++i) {
    if (bytes[i] != kFrameMagic[i]) throw CodecError(CodecErrorKind::BadMagic, "frame does not start with FLNG");
  }
  if (bytes.size() < kFrameHeaderSize) {
    throw CodecError(CodecErrorKind::Truncated, "frame header needs 10 bytes, have " + std::to_string(bytes.size()));
  }
  ByteReader r(bytes.subspan(4, kFrameHeaderSize - 4));
  const std::uint8_t version = r.u8();
  if (version != kProtocolVersion) {
    throw CodecError(CodecErrorKind::UnsupportedVersion, "version " + std::to_string(version));
  }
  const std::uint8_t tag = r.u8();
  if (tag < 0x01 || tag > 0x05) throw CodecError(CodecErrorKind::UnknownTag, "tag " + std::to_string(tag));
  const std::uint32_t length = r.u32();
  if (length > kMaxPayloadSize) {
    throw CodecError(CodecErrorKind::LengthOverflow, "payload length " + std::to_string(length) + " exceeds limit");
  }
  return {static_cast<MessageTag>(tag), length};
}

FedMessage decode_payload(MessageTag tag, std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  FedMessage out;
  switch (tag) {
    case MessageTag::Register: out = RegisterMsg{r.u32()}; break;
    case MessageTag::GlobalModel: {
      GlobalModelMsg m;
      m.round = r.u32();
      m.artifact = decode_artifact(r);
      out = std::move(m);
      break;
    }
    case MessageTag::LocalUpdate: {
      LocalUpdateMsg m;
      m.client_id = r.u32();
      m.round = r.u32();
      m.accuracy = r.f64();
      check_accuracy(m.accuracy, "accuracy");
      m.artifact = decode_artifact(r);
      out = std::move(m);
      break;
    }
    case MessageTag::RoundResult: {
      RoundResultMsg m;
      m.round = r.u32();
      const std::uint8_t flag = r.u8();
      if (flag > 1) throw CodecError(CodecErrorKind::Malformed, "promoted flag must be 0 or 1");
      m.promoted = flag == 1;
      m.global_accuracy = r.f64();
      check_accuracy(m.global_accuracy, "global accuracy");
      out = m;
      break;
    }
    case MessageTag::Shutdown: out = ShutdownMsg{}; break;
    default: throw CodecError(CodecErrorKind::UnknownTag, "tag " + std::to_string(static_cast<int>(tag)));
  }
  if (r.remaining()) {
    throw CodecError(CodecErrorKind::TrailingBytes, std::to_string(r.remaining()) + " unread payload bytes");
  }
  return out;
}

FedMessage decode(std::span<const std::uint8_t> frame) {
  const FrameHeader h = decode_header(frame);
  const std::size_t want = kFrameHeaderSize + h.payload_length;
  if (frame.size() < want) {
    throw CodecError(CodecErrorKind::Truncated, "payload declares " + std::to_string(h.payload_length) + " bytes, have " +
                                                    std::to_string(frame.size() - kFrameHeaderSize));
  }
  if (frame.size() > want) {
    throw CodecError(CodecErrorKind::TrailingBytes, std::to_string(frame.size() - want) + " bytes after frame");
  }
  return decode_payload(h.tag, frame.subspan(kFrameHeaderSize, h.payload_length));
}

}  // namespace fedfusion
