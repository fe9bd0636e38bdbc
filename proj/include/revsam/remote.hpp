#pragma once

#include "revsam/backend.hpp"
#include "revsam/protocol.hpp"

#include <memory>
#include <string>
#include <sys/types.h>

namespace revsam {

/// One request, one reply.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual wire::Message call(const wire::Message& request) = 0;
};

/// Runs a wire::Server in-process, round-tripping every message through its byte
/// encoding. Exercises the full codec without a child process.
class LoopbackChannel final : public Channel {
 public:
  explicit LoopbackChannel(Backend& backend) : server_(backend) {}
  wire::Message call(const wire::Message& request) override;

 private:
  wire::Server server_;
};

/// Spawns `/bin/sh -c command` and speaks the protocol over its stdin/stdout.
/// SIGPIPE is ignored process-wide so a dead peer surfaces as an error.
class SubprocessChannel final : public Channel {
 public:
  explicit SubprocessChannel(const std::string& command);
  ~SubprocessChannel() override;
  SubprocessChannel(const SubprocessChannel&) = delete;
  SubprocessChannel& operator=(const SubprocessChannel&) = delete;

  wire::Message call(const wire::Message& request) override;

 private:
  std::string exit_status();

  std::string command_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::unique_ptr<wire::FdStream> stream_;
};

/// Backend whose every stage is a request over a Channel.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(std::unique_ptr<Channel> channel) : channel_(std::move(channel)) {}

  void init(const BackboneConfig& cfg) override;
  FeatureGrid encode_image(const Image& slice) override;
  PromptGrid encode_prompt(const Mask& mask) override;
  MemoryId encode_memory(const FeatureGrid& img, const PromptGrid& prompt,
                         MemoryKind kind) override;
  ProbabilityGrid attend(const FeatureGrid& query, std::span<const MemoryId> memory) override;
  Mask decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) override;
  void reset() override;

  /// Header of the server's INIT reply.
  const nlohmann::json& capabilities() const { return caps_; }

 private:
  wire::Message call(const wire::Message& request, wire::Opcode expect);

  std::unique_ptr<Channel> channel_;
  nlohmann::json caps_;
};

}  // namespace revsam
