#include "revsam/protocol.hpp"

#include "revsam/bytes.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <array>
#include <unistd.h>

namespace revsam::wire {

std::string opcode_name(std::uint8_t op) {
  switch (Opcode(op)) {
    case Opcode::Init: return "INIT";
    case Opcode::EncodeImage: return "ENCODE_IMAGE";
    case Opcode::EncodePrompt: return "ENCODE_PROMPT";
    case Opcode::EncodeMemory: return "ENCODE_MEMORY";
    case Opcode::Attend: return "ATTEND";
    case Opcode::Decode: return "DECODE";
    case Opcode::Reset: return "RESET";
    case Opcode::Error: return "ERROR";
  }
  return "opcode " + std::to_string(op);
}

// ---- framing ----

std::vector<std::uint8_t> encode_frame(const Message& m) {
  const std::string header = m.header.is_null() ? std::string("{}") : m.header.dump();
  const std::uint64_t body = std::uint64_t(header.size()) + m.payload.size();
  if (body > kMaxBodyBytes) {
    throw FrameError("frame body of " + std::to_string(body) + " bytes exceeds the " +
                         std::to_string(kMaxBodyBytes) + "-byte limit",
                     0);
  }
  std::vector<std::uint8_t> out;
  out.reserve(kPrefixBytes + body);
  le::put_u32(out, std::uint32_t(body));
  out.push_back(m.opcode);
  le::put_u32(out, std::uint32_t(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

std::pair<std::uint32_t, std::uint32_t> check_prefix(
    std::span<const std::uint8_t, kPrefixBytes> prefix) {
  const std::uint32_t body = le::get_u32(prefix, 0);
  const std::uint32_t header = le::get_u32(prefix, 5);
  if (body > kMaxBodyBytes) {
    throw FrameError("declared body length " + std::to_string(body) + " exceeds the " +
                         std::to_string(kMaxBodyBytes) + "-byte limit",
                     kPrefixBytes + std::size_t(body));
  }
  if (header > body) {
    throw FrameError("header length " + std::to_string(header) + " exceeds body length " +
                         std::to_string(body),
                     kPrefixBytes + std::size_t(body));
  }
  return {body, header};
}

Message decode_body(std::uint8_t opcode, std::uint32_t header_length,
                    std::span<const std::uint8_t> body) {
  const std::size_t frame = kPrefixBytes + body.size();
  if (header_length > body.size()) {
    throw FrameError("header length exceeds body length", frame);
  }
  Message m;
  m.opcode = opcode;
  if (header_length == 0) {
    m.header = nlohmann::json::object();
  } else {
    const auto* first = reinterpret_cast<const char*>(body.data());
    m.header = nlohmann::json::parse(first, first + header_length, nullptr, false);
    if (m.header.is_discarded()) throw FrameError("header is not valid JSON", frame);
    if (!m.header.is_object()) throw FrameError("header is not a JSON object", frame);
  }
  m.payload.assign(body.begin() + header_length, body.end());
  return m;
}

std::optional<Parsed> parse_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPrefixBytes) return std::nullopt;
  const auto [body, header] = check_prefix(bytes.first<kPrefixBytes>());
  const std::size_t frame = kPrefixBytes + std::size_t(body);
  if (bytes.size() < frame) return std::nullopt;
  return Parsed{decode_body(bytes[4], header, bytes.subspan(kPrefixBytes, body)), frame};
}

// ---- streams ----

std::size_t FdStream::read_some(std::uint8_t* dst, std::size_t n) {
  for (;;) {
    const ssize_t got = ::read(read_fd_, dst, n);
    if (got >= 0) return std::size_t(got);
    if (errno == EINTR) continue;
    throw StreamClosed(std::string("read failed: ") + std::strerror(errno));
  }
}

void FdStream::write_all(const std::uint8_t* src, std::size_t n) {
  while (n > 0) {
    const ssize_t put = ::write(write_fd_, src, n);
    if (put < 0) {
      if (errno == EINTR) continue;
      throw StreamClosed(std::string("write failed: ") + std::strerror(errno));
    }
    src += put;
    n -= std::size_t(put);
  }
}

namespace {

// Returns the number of bytes read; less than n only at end of stream.
std::size_t read_full(ByteStream& in, std::uint8_t* dst, std::size_t n) {
  std::size_t have = 0;
  while (have < n) {
    const std::size_t got = in.read_some(dst + have, n - have);
    if (got == 0) break;
    have += got;
  }
  return have;
}

void skip(ByteStream& in, std::size_t n) {
  std::uint8_t buf[4096];
  while (n > 0) {
    const std::size_t chunk = std::min(n, sizeof buf);
    if (read_full(in, buf, chunk) != chunk) throw StreamClosed("stream ended inside a frame");
    n -= chunk;
  }
}

}  // namespace

std::optional<Message> read_frame(ByteStream& in) {
  std::array<std::uint8_t, kPrefixBytes> prefix{};
  const std::size_t got = read_full(in, prefix.data(), prefix.size());
  if (got == 0) return std::nullopt;
  if (got < prefix.size()) throw StreamClosed("stream ended inside a frame prefix");

  const std::uint32_t declared = le::get_u32(prefix, 0);
  std::pair<std::uint32_t, std::uint32_t> lengths;
  try {
    lengths = check_prefix(prefix);
  } catch (const FrameError&) {
    skip(in, declared);
    throw;
  }
  std::vector<std::uint8_t> body(lengths.first);
  if (read_full(in, body.data(), body.size()) != body.size()) {
    throw StreamClosed("stream ended inside a frame body");
  }
  return decode_body(prefix[4], lengths.second, body);
}

void write_frame(ByteStream& out, const Message& m) {
  const auto bytes = encode_frame(m);
  out.write_all(bytes.data(), bytes.size());
}

// ---- payload codecs ----

void put_f32s(std::vector<std::uint8_t>& out, std::span<const float> v) {
  out.reserve(out.size() + 4 * v.size());
  for (float x : v) le::put_f32(out, x);
}

std::vector<float> get_f32s(std::span<const std::uint8_t> in, std::size_t offset, std::size_t n) {
  if (offset > in.size() || (in.size() - offset) / 4 < n) {
    throw BackendError(ErrorCode::BadShape, "payload holds fewer than " + std::to_string(n) +
                                                " f32 values at byte " + std::to_string(offset));
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = le::get_f32(in, offset + 4 * i);
  return out;
}

Message error_message(ErrorCode code, const std::string& detail) {
  return Message(Opcode::Error, {{"code", to_string(code)}, {"detail", detail}});
}

void expect_reply(const Message& reply, Opcode expect) {
  if (reply.is(Opcode::Error)) {
    const auto& h = reply.header;
    const std::string code = h.contains("code") && h["code"].is_string() ? h["code"].get<std::string>() : "";
    const std::string detail =
        h.contains("detail") && h["detail"].is_string() ? h["detail"].get<std::string>() : "";
    throw BackendError(error_code_from_string(code), detail);
  }
  if (!reply.is(expect)) {
    throw BackendError(ErrorCode::State, "expected " + opcode_name(std::uint8_t(expect)) +
                                             " reply, got " + opcode_name(reply.opcode));
  }
}

// ---- server ----

namespace {

std::uint32_t get_extent(const nlohmann::json& h, const char* key) {
  if (!h.contains(key) || !h[key].is_number_integer()) {
    throw BackendError(ErrorCode::BadMagic,
                       std::string("header field '") + key + "' missing or not an integer");
  }
  // Parsed text yields unsigned values, headers built in memory may hold signed ones.
  const auto v = h[key].get<std::int64_t>();
  if (v <= 0 || v > std::int64_t(kMaxExtent)) {
    throw BackendError(ErrorCode::BadShape, std::string(key) + " = " + std::to_string(v) +
                                                " outside [1, " + std::to_string(kMaxExtent) + "]");
  }
  return std::uint32_t(v);
}

void expect_payload(const Message& m, std::uint64_t bytes) {
  if (m.payload.size() != bytes) {
    throw BackendError(ErrorCode::BadShape,
                       opcode_name(m.opcode) + " payload is " + std::to_string(m.payload.size()) +
                           " bytes, header implies " + std::to_string(bytes));
  }
}

FeatureGrid read_features(const Message& m, std::size_t offset, std::uint32_t gr,
                          std::uint32_t gc, std::uint32_t dim) {
  FeatureGrid g;
  g.grid_rows = gr;
  g.grid_cols = gc;
  const std::size_t n = std::size_t(gr) * gc * dim;
  const auto v = get_f32s(m.payload, offset, n);
  g.features = Eigen::Map<const FeatureGrid::Matrix>(v.data(), Eigen::Index(gr) * gc, dim);
  return g;
}

template <typename Tag>
CellGrid<Tag> read_cells(const Message& m, std::size_t offset, std::uint32_t gr,
                         std::uint32_t gc) {
  CellGrid<Tag> g;
  g.grid_rows = gr;
  g.grid_cols = gc;
  const auto v = get_f32s(m.payload, offset, std::size_t(gr) * gc);
  g.values = Eigen::Map<const Eigen::ArrayXf>(v.data(), Eigen::Index(v.size()));
  return g;
}

std::vector<std::uint8_t> features_payload(const FeatureGrid& g) {
  std::vector<std::uint8_t> out;
  put_f32s(out, std::span<const float>(g.features.data(), std::size_t(g.features.size())));
  return out;
}

template <typename Tag>
void append_cells(std::vector<std::uint8_t>& out, const CellGrid<Tag>& g) {
  put_f32s(out, std::span<const float>(g.values.data(), std::size_t(g.values.size())));
}

BackboneConfig init_config(const nlohmann::json& h) {
  if (!h.contains("protocol_version") || !h["protocol_version"].is_number_integer()) {
    throw BackendError(ErrorCode::BadMagic, "INIT header lacks an integer protocol_version");
  }
  const auto version = h["protocol_version"].get<std::int64_t>();
  if (version != kProtocolVersion) {
    throw BackendError(ErrorCode::State, "unsupported protocol_version " + std::to_string(version));
  }
  nlohmann::json cfg = h;
  cfg.erase("protocol_version");
  try {
    return cfg.get<BackboneConfig>();
  } catch (const std::exception& e) {
    throw BackendError(ErrorCode::State, std::string("rejected config: ") + e.what());
  }
}

}  // namespace

Message Server::dispatch(const Message& req) {
  const auto& h = req.header;
  switch (Opcode(req.opcode)) {
    case Opcode::Init: {
      const BackboneConfig cfg = init_config(h);
      expect_payload(req, 0);
      backend_.init(cfg);
      cfg_ = cfg;
      ++sessions_;
      return Message(Opcode::Init, {{"accepted", true},
                                    {"protocol_version", kProtocolVersion},
                                    {"session", sessions_},
                                    {"patch", cfg.patch},
                                    {"feat_dim", cfg.feat_dim},
                                    {"max_body_bytes", kMaxBodyBytes},
                                    {"max_extent", kMaxExtent}});
    }
    case Opcode::EncodeImage: {
      const auto rows = get_extent(h, "rows"), cols = get_extent(h, "cols");
      expect_payload(req, 4ull * rows * cols);
      const auto v = get_f32s(req.payload, 0, std::size_t(rows) * cols);
      const Image img = Eigen::Map<const Image>(v.data(), rows, cols);
      const FeatureGrid g = backend_.encode_image(img);
      return Message(Opcode::EncodeImage,
                     {{"grid_rows", g.grid_rows}, {"grid_cols", g.grid_cols}, {"feat_dim", g.dim()}},
                     features_payload(g));
    }
    case Opcode::EncodePrompt: {
      const auto rows = get_extent(h, "rows"), cols = get_extent(h, "cols");
      expect_payload(req, std::uint64_t(rows) * cols);
      const Mask mask = Eigen::Map<const Mask>(req.payload.data(), rows, cols);
      const PromptGrid g = backend_.encode_prompt(mask);
      std::vector<std::uint8_t> payload;
      append_cells(payload, g);
      return Message(Opcode::EncodePrompt, {{"grid_rows", g.grid_rows}, {"grid_cols", g.grid_cols}},
                     std::move(payload));
    }
    case Opcode::EncodeMemory: {
      const auto gr = get_extent(h, "grid_rows"), gc = get_extent(h, "grid_cols");
      const auto dim = get_extent(h, "feat_dim");
      if (!h.contains("kind") || !h["kind"].is_string()) {
        throw BackendError(ErrorCode::BadMagic, "ENCODE_MEMORY header lacks a string kind");
      }
      MemoryKind kind;
      try {
        kind = memory_kind_from_string(h["kind"].get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw BackendError(ErrorCode::BadMagic, e.what());
      }
      const std::uint64_t cells = std::uint64_t(gr) * gc;
      expect_payload(req, 4 * cells * dim + 4 * cells);
      const FeatureGrid img = read_features(req, 0, gr, gc, dim);
      const PromptGrid prompt = read_cells<PromptTag>(req, std::size_t(4 * cells * dim), gr, gc);
      const MemoryId id = backend_.encode_memory(img, prompt, kind);
      return Message(Opcode::EncodeMemory, {{"id", id.value}});
    }
    case Opcode::Attend: {
      const auto gr = get_extent(h, "grid_rows"), gc = get_extent(h, "grid_cols");
      const auto dim = get_extent(h, "feat_dim");
      if (!h.contains("memory") || !h["memory"].is_array()) {
        throw BackendError(ErrorCode::BadMagic, "ATTEND header lacks a memory id array");
      }
      std::vector<MemoryId> ids;
      ids.reserve(h["memory"].size());
      for (const auto& id : h["memory"]) {
        if (!id.is_number_integer() || id.get<std::int64_t>() < 0 ||
            id.get<std::int64_t>() > 0xffffffffll) {
          throw BackendError(ErrorCode::BadMagic, "memory ids must be u32 integers");
        }
        ids.push_back(MemoryId{id.get<std::uint32_t>()});
      }
      expect_payload(req, 4ull * gr * gc * dim);
      const ProbabilityGrid p = backend_.attend(read_features(req, 0, gr, gc, dim), ids);
      std::vector<std::uint8_t> payload;
      append_cells(payload, p);
      return Message(Opcode::Attend, {{"grid_rows", p.grid_rows}, {"grid_cols", p.grid_cols}},
                     std::move(payload));
    }
    case Opcode::Decode: {
      const auto gr = get_extent(h, "grid_rows"), gc = get_extent(h, "grid_cols");
      const auto rows = get_extent(h, "rows"), cols = get_extent(h, "cols");
      expect_payload(req, 4ull * gr * gc);
      const Mask mask = backend_.decode(read_cells<ProbabilityTag>(req, 0, gr, gc), rows, cols);
      return Message(Opcode::Decode, {{"rows", mask.rows()}, {"cols", mask.cols()}},
                     std::vector<std::uint8_t>(mask.data(), mask.data() + mask.size()));
    }
    case Opcode::Reset:
      expect_payload(req, 0);
      backend_.reset();
      return Message(Opcode::Reset, nlohmann::json::object());
    case Opcode::Error:
      break;
  }
  throw BackendError(ErrorCode::UnknownOp, "no request handler for " + opcode_name(req.opcode));
}

Message Server::handle(const Message& request) {
  try {
    return dispatch(request);
  } catch (const BackendError& e) {
    return error_message(e.code(), e.detail());
  } catch (const std::exception& e) {
    return error_message(ErrorCode::State, e.what());
  }
}

void Server::serve(ByteStream& io) {
  for (;;) {
    Message reply;
    try {
      auto request = read_frame(io);
      if (!request) return;
      reply = handle(*request);
    } catch (const FrameError& e) {
      reply = error_message(ErrorCode::BadMagic, e.what());
    } catch (const StreamClosed&) {
      return;
    }
    try {
      write_frame(io, reply);
    } catch (const StreamClosed&) {
      return;
    }
  }
}

}  // namespace revsam::wire
