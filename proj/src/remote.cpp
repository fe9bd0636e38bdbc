#include "revsam/remote.hpp"

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace revsam {

using wire::Message;
using wire::Opcode;

wire::Message LoopbackChannel::call(const wire::Message& request) {
  const auto req = wire::encode_frame(request);
  const auto parsed = wire::parse_frame(req);
  const auto rep = wire::encode_frame(server_.handle(parsed->message));
  return wire::parse_frame(rep)->message;
}

// ---- subprocess ----

SubprocessChannel::SubprocessChannel(const std::string& command) : command_(command) {
  std::signal(SIGPIPE, SIG_IGN);
  int in[2], out[2];
  if (::pipe2(in, O_CLOEXEC) != 0) {
    throw BackendError(ErrorCode::State, std::string("pipe: ") + std::strerror(errno));
  }
  if (::pipe2(out, O_CLOEXEC) != 0) {
    ::close(in[0]);
    ::close(in[1]);
    throw BackendError(ErrorCode::State, std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = ::fork();
  if (pid_ < 0) {
    for (int fd : {in[0], in[1], out[0], out[1]}) ::close(fd);
    throw BackendError(ErrorCode::State, std::string("fork: ") + std::strerror(errno));
  }
  if (pid_ == 0) {
    ::dup2(in[0], STDIN_FILENO);
    ::dup2(out[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in[0]);
  ::close(out[1]);
  to_child_ = in[1];
  from_child_ = out[0];
  stream_ = std::make_unique<wire::FdStream>(from_child_, to_child_);
}

SubprocessChannel::~SubprocessChannel() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
  }
}

std::string SubprocessChannel::exit_status() {
  // The child closed its end; give it a moment to exit before reporting.
  for (int i = 0; i < 100 && pid_ > 0; ++i) {
    int status = 0;
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      pid_ = -1;
      if (WIFEXITED(status)) return "exit status " + std::to_string(WEXITSTATUS(status));
      if (WIFSIGNALED(status)) return "signal " + std::to_string(WTERMSIG(status));
      return "unknown status";
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return "still running";
}

wire::Message SubprocessChannel::call(const wire::Message& request) {
  std::optional<Message> reply;
  try {
    wire::write_frame(*stream_, request);
    reply = wire::read_frame(*stream_);
  } catch (const wire::StreamClosed& e) {
    throw BackendError(ErrorCode::State, "backend process '" + command_ + "' closed the stream (" +
                                             e.what() + "; " + exit_status() + ")");
  } catch (const wire::FrameError& e) {
    throw BackendError(ErrorCode::BadMagic, std::string("malformed reply: ") + e.what());
  }
  if (!reply) {
    throw BackendError(ErrorCode::State,
                       "backend process '" + command_ + "' exited (" + exit_status() + ")");
  }
  return std::move(*reply);
}

// ---- remote backend ----

namespace {

std::uint32_t reply_extent(const Message& m, const char* key) {
  const auto& h = m.header;
  if (!h.contains(key) || !h[key].is_number_integer() || h[key].get<std::int64_t>() <= 0 ||
      h[key].get<std::int64_t>() > std::int64_t(wire::kMaxExtent)) {
    throw BackendError(ErrorCode::BadMagic, "reply " + wire::opcode_name(m.opcode) +
                                                " has no usable '" + key + "' field");
  }
  return h[key].get<std::uint32_t>();
}

void check_reply_payload(const Message& m, std::uint64_t bytes) {
  if (m.payload.size() != bytes) {
    throw BackendError(ErrorCode::BadShape, "reply " + wire::opcode_name(m.opcode) + " payload is " +
                                                std::to_string(m.payload.size()) +
                                                " bytes, expected " + std::to_string(bytes));
  }
}

std::vector<std::uint8_t> feature_bytes(const FeatureGrid& g) {
  std::vector<std::uint8_t> out;
  wire::put_f32s(out, std::span<const float>(g.features.data(), std::size_t(g.features.size())));
  return out;
}

nlohmann::json grid_header(const FeatureGrid& g) {
  return {{"grid_rows", g.grid_rows}, {"grid_cols", g.grid_cols}, {"feat_dim", g.dim()}};
}

}  // namespace

wire::Message RemoteBackend::call(const wire::Message& request, wire::Opcode expect) {
  Message reply = channel_->call(request);
  wire::expect_reply(reply, expect);
  return reply;
}

void RemoteBackend::init(const BackboneConfig& cfg) {
  nlohmann::json h = cfg;
  h["protocol_version"] = wire::kProtocolVersion;
  const Message reply = call(Message(Opcode::Init, h), Opcode::Init);
  const auto& r = reply.header;
  if (!r.contains("accepted") || r["accepted"] != true) {
    throw BackendError(ErrorCode::State, "backend did not accept INIT");
  }
  caps_ = r;
}

FeatureGrid RemoteBackend::encode_image(const Image& slice) {
  std::vector<std::uint8_t> payload;
  wire::put_f32s(payload, std::span<const float>(slice.data(), std::size_t(slice.size())));
  const Message reply =
      call(Message(Opcode::EncodeImage, {{"rows", slice.rows()}, {"cols", slice.cols()}},
                   std::move(payload)),
           Opcode::EncodeImage);
  const auto gr = reply_extent(reply, "grid_rows"), gc = reply_extent(reply, "grid_cols");
  const auto dim = reply_extent(reply, "feat_dim");
  check_reply_payload(reply, 4ull * gr * gc * dim);
  const auto v = wire::get_f32s(reply.payload, 0, std::size_t(gr) * gc * dim);
  FeatureGrid g;
  g.grid_rows = gr;
  g.grid_cols = gc;
  g.features = Eigen::Map<const FeatureGrid::Matrix>(v.data(), Eigen::Index(gr) * gc, dim);
  return g;
}

PromptGrid RemoteBackend::encode_prompt(const Mask& mask) {
  const Message reply = call(
      Message(Opcode::EncodePrompt, {{"rows", mask.rows()}, {"cols", mask.cols()}},
              std::vector<std::uint8_t>(mask.data(), mask.data() + mask.size())),
      Opcode::EncodePrompt);
  const auto gr = reply_extent(reply, "grid_rows"), gc = reply_extent(reply, "grid_cols");
  check_reply_payload(reply, 4ull * gr * gc);
  const auto v = wire::get_f32s(reply.payload, 0, std::size_t(gr) * gc);
  PromptGrid g;
  g.grid_rows = gr;
  g.grid_cols = gc;
  g.values = Eigen::Map<const Eigen::ArrayXf>(v.data(), Eigen::Index(v.size()));
  return g;
}

MemoryId RemoteBackend::encode_memory(const FeatureGrid& img, const PromptGrid& prompt,
                                      MemoryKind kind) {
  if (prompt.grid_rows != img.grid_rows || prompt.grid_cols != img.grid_cols ||
      prompt.values.size() != img.cells()) {
    throw BackendError(ErrorCode::BadShape, "prompt grid does not match image grid");
  }
  auto payload = feature_bytes(img);
  wire::put_f32s(payload, std::span<const float>(prompt.values.data(), std::size_t(prompt.values.size())));
  nlohmann::json h = grid_header(img);
  h["kind"] = to_string(kind);
  const Message reply = call(Message(Opcode::EncodeMemory, h, std::move(payload)), Opcode::EncodeMemory);
  const auto& r = reply.header;
  if (!r.contains("id") || !r["id"].is_number_integer() || r["id"].get<std::int64_t>() < 0 ||
      r["id"].get<std::int64_t>() > 0xffffffffll) {
    throw BackendError(ErrorCode::BadMagic, "ENCODE_MEMORY reply lacks a u32 id");
  }
  return MemoryId{r["id"].get<std::uint32_t>()};
}

ProbabilityGrid RemoteBackend::attend(const FeatureGrid& query, std::span<const MemoryId> memory) {
  nlohmann::json h = grid_header(query);
  auto& ids = h["memory"] = nlohmann::json::array();
  for (auto id : memory) ids.push_back(id.value);
  const Message reply = call(Message(Opcode::Attend, h, feature_bytes(query)), Opcode::Attend);
  const auto gr = reply_extent(reply, "grid_rows"), gc = reply_extent(reply, "grid_cols");
  check_reply_payload(reply, 4ull * gr * gc);
  const auto v = wire::get_f32s(reply.payload, 0, std::size_t(gr) * gc);
  ProbabilityGrid g;
  g.grid_rows = gr;
  g.grid_cols = gc;
  g.values = Eigen::Map<const Eigen::ArrayXf>(v.data(), Eigen::Index(v.size()));
  return g;
}

Mask RemoteBackend::decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) {
  std::vector<std::uint8_t> payload;
  wire::put_f32s(payload, std::span<const float>(probs.values.data(), std::size_t(probs.values.size())));
  const Message reply = call(Message(Opcode::Decode,
                                     {{"grid_rows", probs.grid_rows},
                                      {"grid_cols", probs.grid_cols},
                                      {"rows", rows},
                                      {"cols", cols}},
                                     std::move(payload)),
                             Opcode::Decode);
  const auto r = reply_extent(reply, "rows"), c = reply_extent(reply, "cols");
  if (r != rows || c != cols) {
    throw BackendError(ErrorCode::BadShape, "DECODE reply is " + std::to_string(r) + "x" +
                                                std::to_string(c) + ", asked for " +
                                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  check_reply_payload(reply, std::uint64_t(r) * c);
  Mask m = Eigen::Map<const Mask>(reply.payload.data(), r, c);
  if (!is_binary(m)) throw BackendError(ErrorCode::BadShape, "DECODE reply mask is not binary");
  return m;
}

void RemoteBackend::reset() { call(Message(Opcode::Reset, nlohmann::json::object()), Opcode::Reset); }

}  // namespace revsam
