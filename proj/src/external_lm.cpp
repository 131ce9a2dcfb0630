#include "esd/external_lm.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "esd/error.hpp"

namespace esd {

using nlohmann::json;

namespace {

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// recv/read until a newline is buffered.
template <typename ReadFn>
std::string read_line(std::string& buffer, ReadFn&& read_some) {
  for (;;) {
    const auto nl = buffer.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    char chunk[4096];
    const ssize_t n = read_some(chunk, sizeof chunk);
    if (n == 0) throw ProtocolError("peer closed the connection");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
    }
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

json parse_message(const std::string& line) {
  json msg;
  try {
    msg = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
  if (!msg.is_object()) throw ProtocolError("message must be a JSON object");
  if (!msg.contains("v") || !msg["v"].is_number_integer() || msg["v"].get<int>() != kProtocolVersion)
    throw ProtocolError("unsupported protocol version");
  return msg;
}

std::string error_reply(std::string_view what) {
  return json{{"v", kProtocolVersion}, {"error", what}}.dump();
}

}  // namespace

// ---------------------------------------------------------------------------
// Channels

void StreamChannel::send(std::string_view line) {
  out_ << line << '\n';
  out_.flush();
}

std::string StreamChannel::receive() {
  std::string line;
  if (!std::getline(in_, line)) throw ProtocolError("end of stream");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

ProcessChannel::ProcessChannel(const std::string& command) {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) throw ProtocolError("pipe() failed");
  pid_ = ::fork();
  if (pid_ < 0) throw ProtocolError("fork() failed");
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::signal(SIGPIPE, SIG_IGN);
}

ProcessChannel::~ProcessChannel() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
}

void ProcessChannel::send(std::string_view line) {
  std::string data(line);
  data.push_back('\n');
  write_all(to_child_, data);
}

std::string ProcessChannel::receive() {
  return read_line(buffer_, [this](char* buf, std::size_t n) { return ::read(from_child_, buf, n); });
}

TcpChannel::TcpChannel(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0)
    throw ProtocolError("cannot resolve " + host);
  for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
    fd_ = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd_ < 0) continue;
    if (::connect(fd_, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd_);
    fd_ = -1;
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw ProtocolError("cannot connect to " + host + ":" + service);
}

TcpChannel::~TcpChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpChannel::send(std::string_view line) {
  std::string data(line);
  data.push_back('\n');
  while (!data.empty()) {
    const ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
    }
    data.erase(0, static_cast<std::size_t>(n));
  }
}

std::string TcpChannel::receive() {
  return read_line(buffer_, [this](char* buf, std::size_t n) { return ::recv(fd_, buf, n, 0); });
}

// ---------------------------------------------------------------------------
// Client

ExternalLM::ExternalLM(std::shared_ptr<const Vocabulary> vocab, std::unique_ptr<LineChannel> channel)
    : vocab_(std::move(vocab)), channel_(std::move(channel)) {
  if (!vocab_ || !channel_) throw Error("external model needs a vocabulary and a channel");
  channel_->send(json{{"v", kProtocolVersion},
                      {"op", "hello"},
                      {"vocab_hash", format_hash(vocab_->hash())},
                      {"vocab_size", vocab_->size()}}
                     .dump());
  const json reply = parse_message(channel_->receive());
  if (reply.contains("error")) throw ProtocolError("handshake rejected: " + reply["error"].get<std::string>());
  if (reply.value("vocab_hash", std::string{}) != format_hash(vocab_->hash()))
    throw ProtocolError("vocabulary hash mismatch with external model");
  session_ = reply.value("session", std::string{});
  for (const auto& c : reply.value("contexts", json::array())) contexts_.insert(c.get<std::string>());
}

ExternalLM::~ExternalLM() {
  try {
    channel_->send(json{{"v", kProtocolVersion}, {"op", "bye"}}.dump());
  } catch (...) {
  }
}

std::vector<ContextKey> ExternalLM::contexts() const {
  std::vector<ContextKey> out;
  for (const auto& c : contexts_) out.emplace_back(c);
  return out;
}

NextTokenDistribution ExternalLM::next_token_logprobs(const ContextKey& context,
                                                      std::span<const TokenId> prefix) const {
  require_context(*this, context);
  json request{{"v", kProtocolVersion},
               {"op", "logprobs"},
               {"context", context.str()},
               {"prefix", std::vector<TokenId>(prefix.begin(), prefix.end())}};
  json reply;
  {
    std::lock_guard lock(mutex_);
    channel_->send(request.dump());
    reply = parse_message(channel_->receive());
  }
  if (reply.contains("error")) throw ProtocolError("external model error: " + reply["error"].get<std::string>());
  if (!reply.contains("logprobs") || !reply["logprobs"].is_array()) throw ProtocolError("reply lacks logprobs");
  const auto& arr = reply["logprobs"];
  if (arr.size() != vocab_->outcome_count())
    throw ProtocolError("expected " + std::to_string(vocab_->outcome_count()) + " logprobs, got " +
                        std::to_string(arr.size()));
  std::vector<double> lp;
  lp.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw ProtocolError("non-numeric logprob");
    lp.push_back(v.get<double>());
  }
  NextTokenDistribution dist(std::move(lp));
  if (!dist.all_finite()) throw ProtocolError("external model returned a non-finite logprob");
  if (dist.normalization_error() > 1e-6) throw ProtocolError("external distribution is not normalized");
  return dist;
}

// ---------------------------------------------------------------------------
// Server

ModelServer::ModelServer(const ConditionalLM& lm) : lm_(lm) {
  for (const auto& c : lm.contexts()) contexts_.push_back(c.str());
}

std::string ModelServer::handle(std::string_view request, bool& done) {
  done = false;
  json msg;
  try {
    msg = parse_message(std::string(request));
  } catch (const ProtocolError& e) {
    return error_reply(e.what());
  }
  const std::string op = msg.value("op", std::string{});
  const auto& vocab = lm_.vocab();
  if (op == "hello") {
    if (msg.value("vocab_hash", std::string{}) != format_hash(vocab.hash()))
      return error_reply("vocabulary hash mismatch");
    greeted_ = true;
    ++sessions_;
    return json{{"v", kProtocolVersion},
                {"op", "hello"},
                {"vocab_hash", format_hash(vocab.hash())},
                {"vocab_size", vocab.size()},
                {"session", "s" + std::to_string(sessions_)},
                {"contexts", contexts_}}
        .dump();
  }
  if (op == "bye") {
    done = true;
    greeted_ = false;
    return json{{"v", kProtocolVersion}, {"op", "bye"}}.dump();
  }
  if (op != "logprobs") return error_reply("unknown op '" + op + "'");
  if (!greeted_) return error_reply("handshake required before logprobs");
  try {
    const ContextKey ctx(msg.at("context").get<std::string>());
    const auto prefix = msg.at("prefix").get<std::vector<TokenId>>();
    for (auto id : prefix)
      if (id >= vocab.size()) return error_reply("prefix token id out of range");
    const auto dist = lm_.next_token_logprobs(ctx, prefix);
    return json{{"v", kProtocolVersion}, {"logprobs", dist.values()}}.dump();
  } catch (const std::exception& e) {
    return error_reply(e.what());
  }
}

void ModelServer::serve(LineChannel& channel) {
  for (;;) {
    std::string line;
    try {
      line = channel.receive();
    } catch (const ProtocolError&) {
      return;  // peer went away
    }
    if (line.empty()) continue;
    bool done = false;
    channel.send(handle(line, done));
    if (done) return;
  }
}

void serve_tcp(const ConditionalLM& lm, std::uint16_t port, std::size_t max_sessions,
               const std::function<void(std::uint16_t)>& on_listening) {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) throw ProtocolError("socket() failed");
  const int one = 1;
  ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 4) != 0) {
    ::close(listener);
    throw ProtocolError("cannot listen on port " + std::to_string(port));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  if (on_listening) on_listening(ntohs(addr.sin_port));

  ModelServer server(lm);
  for (std::size_t served = 0; max_sessions == 0 || served < max_sessions; ++served) {
    const int fd = ::accept(listener, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    TcpChannel channel(fd);
    server.serve(channel);
  }
  ::close(listener);
}

}  // namespace esd
