#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace apr {

/// Wildcards are legal only in receive-side match patterns, never on the wire.
inline constexpr int kAnySource = -1;
inline constexpr int kAnyTag = -1;

enum class FrameKind : std::uint8_t {
  EagerData = 1,
  Rts = 2,
  Cts = 3,
  RdvData = 4,
  FileioControl = 5, // reserved; file I/O never crosses the wire in this build
  Shutdown = 6,
};

const char* to_string(FrameKind kind);

/// Addressing and matching metadata for one message. `length` is the payload
/// size of the message itself; control frames (RTS/CTS) carry it while their
/// frame payload stays empty.
struct MessageEnvelope {
  std::uint32_t context_id = 0;
  std::int32_t tag = 0;
  std::int32_t source = 0;
  std::int32_t dest = 0;
  std::uint64_t seq = 0;
  std::uint64_t length = 0;

  friend bool operator==(const MessageEnvelope&, const MessageEnvelope&) = default;
};

struct Frame {
  FrameKind kind = FrameKind::EagerData;
  MessageEnvelope envelope;
  std::vector<std::byte> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Bytes of the length prefix plus the fixed fields that follow it:
/// [length:u32][kind:u8][comm:u32][tag:i32][src:u32][dst:u32][seq:u64][payload_len:u64]
inline constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 4 + 4 + 4 + 4 + 8 + 8;

/// Largest frame payload the u32 length prefix can describe.
inline constexpr std::uint64_t kMaxFramePayload =
    0xFFFFFFFFull - (kFrameHeaderBytes - 4);

/// Serializes one frame. Little-endian fixed-width fields, deterministic.
/// Throws EncodingError when the payload exceeds the length prefix range and
/// UsageError when the frame violates its kind's payload rules.
std::vector<std::byte> encode_frame(const Frame& frame);

/// Incremental decoder for a byte stream produced by encode_frame. Bytes may
/// arrive in arbitrary fragments; surplus bytes are retained for the next
/// frame. Throws ProtocolError on a malformed kind tag or length mismatch.
class FrameDecoder {
public:
  void feed(std::span<const std::byte> bytes);

  /// Returns the next complete frame, or nullopt if more bytes are needed.
  std::optional<Frame> next();

  std::size_t buffered_bytes() const { return buffer_.size(); }

private:
  std::deque<std::byte> buffer_;
};

/// One-shot decode of exactly one frame; trailing bytes are an error.
/// Intended for tests and diagnostics.
Frame decode_frame(std::span<const std::byte> bytes);

} // namespace apr
