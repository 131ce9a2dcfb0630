#pragma once

// Line-delimited JSON protocol that lets an out-of-process model (e.g. a
// neural captioner) serve next-token distributions.
//
//   -> {"v":1,"op":"hello","vocab_hash":"<16 hex>","vocab_size":N}
//   <- {"v":1,"op":"hello","vocab_hash":"<16 hex>","vocab_size":N,"session":"s1","contexts":[...]}
//   -> {"v":1,"op":"logprobs","context":"<key>","prefix":[ids]}
//   <- {"v":1,"logprobs":[...]}            exactly outcome_count() entries
//   -> {"v":1,"op":"bye"}
// Failures are answered with {"v":1,"error":"<message>"}.

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>

#include "esd/lm.hpp"

namespace esd {

inline constexpr int kProtocolVersion = 1;

class LineChannel {
public:
  virtual ~LineChannel() = default;
  virtual void send(std::string_view line) = 0;
  /// Next line without the terminator; throws ProtocolError on EOF.
  virtual std::string receive() = 0;
};

/// Channel over a pair of iostreams.
class StreamChannel final : public LineChannel {
public:
  StreamChannel(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  void send(std::string_view line) override;
  std::string receive() override;

private:
  std::istream& in_;
  std::ostream& out_;
};

/// Spawns `/bin/sh -c command` and talks to its stdin/stdout.
class ProcessChannel final : public LineChannel {
public:
  explicit ProcessChannel(const std::string& command);
  ~ProcessChannel() override;
  ProcessChannel(const ProcessChannel&) = delete;
  ProcessChannel& operator=(const ProcessChannel&) = delete;

  void send(std::string_view line) override;
  std::string receive() override;

private:
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

class TcpChannel final : public LineChannel {
public:
  TcpChannel(const std::string& host, std::uint16_t port);
  explicit TcpChannel(int connected_fd) : fd_(connected_fd) {}
  ~TcpChannel() override;
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  void send(std::string_view line) override;
  std::string receive() override;

private:
  int fd_ = -1;
  std::string buffer_;
};

/// Remote model behind a LineChannel. The handshake runs in the constructor
/// and checks protocol version and vocabulary hash. One request in flight.
class ExternalLM final : public ConditionalLM {
public:
  ExternalLM(std::shared_ptr<const Vocabulary> vocab, std::unique_ptr<LineChannel> channel);
  ~ExternalLM() override;

  const Vocabulary& vocab() const override { return *vocab_; }
  bool has_context(const ContextKey& context) const override { return contexts_.contains(context.str()); }
  std::vector<ContextKey> contexts() const override;
  NextTokenDistribution next_token_logprobs(const ContextKey& context,
                                            std::span<const TokenId> prefix) const override;
  bool concurrent_queries() const override { return false; }

  const std::string& session() const noexcept { return session_; }

private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::unique_ptr<LineChannel> channel_;
  mutable std::mutex mutex_;
  std::string session_;
  std::set<std::string> contexts_;
};

/// Server side: turns request lines into response lines for one model.
class ModelServer {
public:
  explicit ModelServer(const ConditionalLM& lm);

  /// Handles one request; `done` is set after "bye".
  std::string handle(std::string_view request, bool& done);
  /// Serves one session until "bye" or end of input.
  void serve(LineChannel& channel);

private:
  const ConditionalLM& lm_;
  std::vector<std::string> contexts_;
  bool greeted_ = false;
  std::uint64_t sessions_ = 0;
};

/// Accepts TCP sessions on `port` (0 picks a free port, reported through
/// `on_listening`). Stops after `max_sessions` sessions when non-zero.
void serve_tcp(const ConditionalLM& lm, std::uint16_t port, std::size_t max_sessions,
               const std::function<void(std::uint16_t)>& on_listening = {});

}  // namespace esd
