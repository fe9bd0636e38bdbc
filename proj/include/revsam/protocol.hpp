#pragma once

#include "revsam/backend.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Framed request/response protocol that lets an external process act as a Backend.
//
// Frame layout, all integers little-endian:
//   u32 body_length | u8 opcode | u32 header_length | header (UTF-8 JSON object) | payload
// body_length counts the header and payload bytes only, so a frame occupies
// kPrefixBytes + body_length bytes on the wire.
namespace revsam::wire {

enum class Opcode : std::uint8_t {
  Init = 1,
  EncodeImage = 2,
  EncodePrompt = 3,
  EncodeMemory = 4,
  Attend = 5,
  Decode = 6,
  Reset = 7,
  Error = 255,
};

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kPrefixBytes = 9;
/// Largest body a peer will accept. Bigger declared lengths are framing errors.
inline constexpr std::uint32_t kMaxBodyBytes = 256u << 20;
/// Per-axis cap on any image or grid dimension carried in a header.
inline constexpr std::uint32_t kMaxExtent = 1u << 15;

std::string opcode_name(std::uint8_t op);

struct Message {
  std::uint8_t opcode = 0;
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::uint8_t> payload;

  Message() = default;
  Message(Opcode op, nlohmann::json h, std::vector<std::uint8_t> p = {})
      : opcode(std::uint8_t(op)), header(std::move(h)), payload(std::move(p)) {}
  bool is(Opcode op) const { return opcode == std::uint8_t(op); }
};

/// Framing violation. `frame_bytes` is how many bytes the bad frame declared, so a
/// reader can skip it and stay aligned; zero when even the prefix was unusable.
class FrameError : public std::runtime_error {
 public:
  FrameError(const std::string& what, std::size_t frame_bytes)
      : std::runtime_error(what), frame_bytes_(frame_bytes) {}
  std::size_t frame_bytes() const { return frame_bytes_; }

 private:
  std::size_t frame_bytes_;
};

std::vector<std::uint8_t> encode_frame(const Message& m);

struct Parsed {
  Message message;
  std::size_t consumed = 0;
};

/// Parses the frame at the front of `bytes`. Returns nullopt while the buffer holds
/// less than one declared frame. Never reads beyond the declared frame length.
std::optional<Parsed> parse_frame(std::span<const std::uint8_t> bytes);

/// Checks prefix fields only; returns body_length and header_length.
std::pair<std::uint32_t, std::uint32_t> check_prefix(std::span<const std::uint8_t, kPrefixBytes> prefix);

/// Decodes header and payload of a body whose prefix already passed check_prefix.
Message decode_body(std::uint8_t opcode, std::uint32_t header_length,
                    std::span<const std::uint8_t> body);

// Byte transport with blocking semantics.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  /// Reads up to n bytes; returns 0 only at end of stream.
  virtual std::size_t read_some(std::uint8_t* dst, std::size_t n) = 0;
  virtual void write_all(const std::uint8_t* src, std::size_t n) = 0;
};

/// Reads and writes raw file descriptors (pipes, stdin/stdout).
class FdStream final : public ByteStream {
 public:
  FdStream(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}
  std::size_t read_some(std::uint8_t* dst, std::size_t n) override;
  void write_all(const std::uint8_t* src, std::size_t n) override;

 private:
  int read_fd_;
  int write_fd_;
};

class StreamClosed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads one frame. Returns nullopt on a clean end of stream before any byte of a
/// new frame; throws StreamClosed if the stream ends mid-frame and FrameError for
/// framing violations (after consuming the declared frame).
std::optional<Message> read_frame(ByteStream& in);
void write_frame(ByteStream& out, const Message& m);

// Payload codecs. Readers check sizes and throw BackendError(BadShape).
void put_f32s(std::vector<std::uint8_t>& out, std::span<const float> v);
std::vector<float> get_f32s(std::span<const std::uint8_t> in, std::size_t offset, std::size_t n);

Message error_message(ErrorCode code, const std::string& detail);
/// Throws BackendError for an ERROR message, or for a reply whose opcode is not `expect`.
void expect_reply(const Message& reply, Opcode expect);

/// Serves one session against `backend`. `handle` is transport-free so it can be
/// driven directly; `serve` loops over a stream until end of input.
class Server {
 public:
  explicit Server(Backend& backend) : backend_(backend) {}

  Message handle(const Message& request);
  /// Returns normally at end of input. Framing errors are answered and skipped.
  void serve(ByteStream& io);

 private:
  Message dispatch(const Message& request);

  Backend& backend_;
  BackboneConfig cfg_{};
  std::uint64_t sessions_ = 0;
};

}  // namespace revsam::wire
