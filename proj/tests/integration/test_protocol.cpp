#include <doctest.h>

#include <future>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "esd/decode.hpp"
#include "esd/error.hpp"
#include "esd/external_lm.hpp"
#include "esd/ngram_lm.hpp"
#include "test_support.hpp"

using namespace esd;

namespace {

// Answers each request synchronously with an in-process server.
class LoopbackChannel final : public LineChannel {
public:
  explicit LoopbackChannel(ModelServer& server) : server_(server) {}
  void send(std::string_view line) override {
    bool done = false;
    pending_ = server_.handle(line, done);
  }
  std::string receive() override { return pending_; }

private:
  ModelServer& server_;
  std::string pending_;
};

struct Fixture {
  Rng rng{19};
  LoadedCorpus data = test::random_corpus(rng, 3, 5, 8, 5);
  NGramLM lm = train_ngram(data.corpus, 3, 0.1);
};

void check_same_model(const ConditionalLM& remote, const NGramLM& local) {
  CHECK(remote.contexts() == local.contexts());
  for (const auto& ctx : local.contexts())
    test::enumerate_sequences(local.vocab(), 2, [&](const TokenSeq& prefix) {
      const auto a = remote.next_token_logprobs(ctx, prefix);
      const auto b = local.next_token_logprobs(ctx, prefix);
      REQUIRE(a.size() == b.size());
      for (std::size_t o = 0; o < a.size(); ++o) CHECK(a[o] == b[o]);
    });
  DecodeParams p;
  p.lambda = 0.5;
  p.beam_width = 4;
  p.max_len = 6;
  const auto ra = es_beam_search(remote, ContextKey("c0"), remote, ContextKey("c1"), p);
  const auto rb = es_beam_search(local, ContextKey("c0"), local, ContextKey("c1"), p);
  CHECK(ra.hypotheses == rb.hypotheses);
}

}  // namespace

TEST_CASE("in-process channel reproduces the model") {
  Fixture f;
  ModelServer server(f.lm);
  ExternalLM remote(f.data.vocab, std::make_unique<LoopbackChannel>(server));
  CHECK(remote.session() == "s1");
  CHECK_FALSE(remote.concurrent_queries());
  check_same_model(remote, f.lm);
  CHECK_THROWS_AS(remote.next_token_logprobs(ContextKey("zz"), {}), UnknownContextError);
}

TEST_CASE("server rejects malformed and out-of-order requests") {
  Fixture f;
  ModelServer server(f.lm);
  bool done = false;
  auto reply = [&](const std::string& line) { return nlohmann::json::parse(server.handle(line, done)); };
  CHECK(reply("not json").contains("error"));
  CHECK(reply(R"({"v":1,"op":"logprobs","context":"c0","prefix":[]})").contains("error"));
  CHECK(reply(R"({"v":2,"op":"hello"})").contains("error"));
  CHECK(reply(R"({"v":1,"op":"hello","vocab_hash":"0000000000000000"})").contains("error"));
  const auto hello = reply(nlohmann::json{{"v", 1}, {"op", "hello"}, {"vocab_hash", format_hash(f.data.vocab->hash())}}.dump());
  CHECK(hello.at("contexts").size() == 3);
  CHECK(reply(R"({"v":1,"op":"logprobs","context":"nope","prefix":[]})").contains("error"));
  CHECK(reply(R"({"v":1,"op":"logprobs","context":"c0","prefix":[99999]})").contains("error"));
  CHECK(reply(R"({"v":1,"op":"dance"})").contains("error"));
  const auto ok = reply(R"({"v":1,"op":"logprobs","context":"c0","prefix":[3]})");
  CHECK(ok.at("logprobs").size() == f.data.vocab->outcome_count());
  reply(R"({"v":1,"op":"bye"})");
  CHECK(done);
}

TEST_CASE("client rejects a vocabulary mismatch") {
  Fixture f;
  ModelServer server(f.lm);
  auto other = std::make_shared<const Vocabulary>(Vocabulary::from_words({"x"}));
  CHECK_THROWS_AS(ExternalLM(other, std::make_unique<LoopbackChannel>(server)), ProtocolError);
}

TEST_CASE("stream channel over iostreams") {
  std::istringstream in("{\"a\":1}\n\nsecond\n");
  std::ostringstream out;
  StreamChannel ch(in, out);
  ch.send("hello");
  CHECK(out.str() == "hello\n");
  CHECK(ch.receive() == "{\"a\":1}");
  CHECK(ch.receive().empty());
  CHECK(ch.receive() == "second");
  CHECK_THROWS_AS(ch.receive(), ProtocolError);
}

TEST_CASE("subprocess server through the CLI") {
  Fixture f;
  test::TempDir dir;
  f.lm.save(dir / "m.bin");
  f.data.vocab->save(dir / "m.bin.vocab");
  const std::string cmd = std::string("'") + ESD_CLI_PATH + "' serve --model '" + (dir / "m.bin").string() + "'";
  ExternalLM remote(f.data.vocab, std::make_unique<ProcessChannel>(cmd));
  check_same_model(remote, f.lm);
}

TEST_CASE("TCP server on an ephemeral port") {
  Fixture f;
  std::promise<std::uint16_t> port_promise;
  auto port_future = port_promise.get_future();
  std::thread server([&] { serve_tcp(f.lm, 0, 2, [&](std::uint16_t p) { port_promise.set_value(p); }); });
  const auto port = port_future.get();
  {
    ExternalLM remote(f.data.vocab, std::make_unique<TcpChannel>("127.0.0.1", port));
    check_same_model(remote, f.lm);
  }
  {
    ExternalLM second(f.data.vocab, std::make_unique<TcpChannel>("127.0.0.1", port));
    CHECK(second.contexts().size() == 3);
  }
  server.join();
}
