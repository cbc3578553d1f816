#include "apr/wire.hpp"

#include <algorithm>
#include <cstring>

#include "apr/error.hpp"

namespace apr {

namespace {

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

bool carries_payload(FrameKind kind) {
  switch (kind) {
  case FrameKind::EagerData:
  case FrameKind::RdvData:
  case FrameKind::FileioControl:
    return true;
  case FrameKind::Rts:
  case FrameKind::Cts:
  case FrameKind::Shutdown:
    return false;
  }
  return false;
}

} // namespace

const char* to_string(FrameKind kind) {
  switch (kind) {
  case FrameKind::EagerData: return "EAGER_DATA";
  case FrameKind::Rts: return "RTS";
  case FrameKind::Cts: return "CTS";
  case FrameKind::RdvData: return "RDV_DATA";
  case FrameKind::FileioControl: return "FILEIO_CONTROL";
  case FrameKind::Shutdown: return "SHUTDOWN";
  }
  return "?";
}

std::vector<std::byte> encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxFramePayload)
    throw EncodingError("frame payload exceeds length prefix range");
  if (carries_payload(frame.kind)) {
    if (frame.payload.size() != frame.envelope.length)
      throw UsageError("data frame payload size disagrees with envelope length");
  } else if (!frame.payload.empty()) {
    throw UsageError(std::string(to_string(frame.kind)) +
                     " frames carry zero-length payloads");
  }
  if (frame.envelope.source < 0 || frame.envelope.dest < 0 ||
      frame.envelope.tag < 0)
    throw UsageError("wildcards are not legal on the wire");

  const std::uint32_t remainder =
      static_cast<std::uint32_t>(kFrameHeaderBytes - 4 + frame.payload.size());
  std::vector<std::byte> out;
  out.reserve(4 + remainder);
  put_u32(out, remainder);
  out.push_back(static_cast<std::byte>(frame.kind));
  put_u32(out, frame.envelope.context_id);
  put_u32(out, static_cast<std::uint32_t>(frame.envelope.tag));
  put_u32(out, static_cast<std::uint32_t>(frame.envelope.source));
  put_u32(out, static_cast<std::uint32_t>(frame.envelope.dest));
  put_u64(out, frame.envelope.seq);
  put_u64(out, frame.envelope.length);
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

void FrameDecoder::feed(std::span<const std::byte> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameDecoder::next() {
  constexpr std::size_t fixed = kFrameHeaderBytes - 4; // after the prefix
  if (buffer_.size() < 4)
    return std::nullopt;

  std::byte prefix[4];
  std::copy_n(buffer_.begin(), 4, prefix);
  const std::uint32_t remainder = get_u32(prefix);
  if (remainder < fixed)
    throw ProtocolError("frame length prefix shorter than fixed header");
  if (buffer_.size() < 4 + static_cast<std::size_t>(remainder))
    return std::nullopt;

  std::vector<std::byte> raw(4 + remainder);
  std::copy_n(buffer_.begin(), raw.size(), raw.begin());
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(raw.size()));

  const std::byte* p = raw.data() + 4;
  const auto kind_tag = std::to_integer<std::uint8_t>(*p);
  if (kind_tag < 1 || kind_tag > 6)
    throw ProtocolError("malformed frame kind tag " + std::to_string(kind_tag));
  Frame frame;
  frame.kind = static_cast<FrameKind>(kind_tag);
  p += 1;
  frame.envelope.context_id = get_u32(p); p += 4;
  frame.envelope.tag = static_cast<std::int32_t>(get_u32(p)); p += 4;
  frame.envelope.source = static_cast<std::int32_t>(get_u32(p)); p += 4;
  frame.envelope.dest = static_cast<std::int32_t>(get_u32(p)); p += 4;
  frame.envelope.seq = get_u64(p); p += 8;
  frame.envelope.length = get_u64(p); p += 8;

  const std::size_t actual_payload = remainder - fixed;
  if (carries_payload(frame.kind)) {
    if (actual_payload != frame.envelope.length)
      throw ProtocolError("frame payload length disagrees with envelope");
  } else if (actual_payload != 0) {
    throw ProtocolError(std::string(to_string(frame.kind)) +
                        " frame carries unexpected payload bytes");
  }
  frame.payload.assign(p, p + actual_payload);
  return frame;
}

Frame decode_frame(std::span<const std::byte> bytes) {
  FrameDecoder decoder;
  decoder.feed(bytes);
  auto frame = decoder.next();
  if (!frame)
    throw ProtocolError("incomplete frame");
  if (decoder.buffered_bytes() != 0)
    throw ProtocolError("trailing bytes after frame");
  return *frame;
}

} // namespace apr
