#include <doctest.h>

#include "esd/config.hpp"
#include "esd/error.hpp"

using namespace esd;

TEST_CASE("parse scalars, arrays and comments") {
  const auto doc = ConfigDoc::parse(R"(# top
[run]
seed = 7          # trailing
lambdas = [0, 0.5, 1.0]
methods = ["S", "IS"]
kernel = "serial"
flag = true

[lm]
alpha = 1e-1
name = "a # not a comment"
)");
  CHECK(doc.at("run.seed").as_int() == 7);
  CHECK(doc.at("run.seed").as_double() == 7.0);
  CHECK(doc.at("run.lambdas").as_double_list() == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(doc.at("run.methods").as_string_list() == std::vector<std::string>{"S", "IS"});
  CHECK(doc.at("run.kernel").as_string() == "serial");
  CHECK(doc.at("run.flag").as_bool());
  CHECK(doc.at("lm.alpha").as_double() == doctest::Approx(0.1));
  CHECK(doc.at("lm.name").as_string() == "a # not a comment");
  CHECK_FALSE(doc.contains("run.missing"));
  CHECK_THROWS_AS(doc.at("run.missing"), Error);
}

TEST_CASE("type mismatches throw") {
  const auto doc = ConfigDoc::parse("[a]\nx = 1.5\ny = \"s\"\nz = [1, 2]\n");
  CHECK_THROWS_AS(doc.at("a.x").as_int(), Error);
  CHECK_THROWS_AS(doc.at("a.y").as_double(), Error);
  CHECK_THROWS_AS(doc.at("a.z").as_int(), Error);
  CHECK_THROWS_AS(doc.at("a.y").as_bool(), Error);
  CHECK(doc.at("a.z").as_int_list() == std::vector<std::int64_t>{1, 2});
}

TEST_CASE("parse errors carry the line") {
  auto line_of = [](const char* text) -> std::size_t {
    try {
      ConfigDoc::parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("[a]\nx = 1\nx = 2\n") == 3);
  CHECK(line_of("x = 1\n") == 1);
  CHECK(line_of("[a]\n\ny = \"open\n") == 3);
  CHECK(line_of("[a\n") == 1);
  CHECK(line_of("[a]\nnovalue\n") == 2);
  CHECK(line_of("[a]\nv = [1, , 2]\n") == 2);
  CHECK(line_of("[a]\nv = bare\n") == 2);
}

TEST_CASE("render round trips") {
  const auto doc = ConfigDoc::parse("[b]\nx = 1.0\ns = \"q\\\"t\"\n[a]\nl = [0.3, 2, \"w\"]\nf = false\n");
  const auto text = doc.render();
  const auto back = ConfigDoc::parse(text);
  CHECK(back.render() == text);
  CHECK(back.at("b.x").as_double() == 1.0);
  CHECK(back.at("b.s").as_string() == "q\"t");
  CHECK(text.find("[a]") < text.find("[b]"));
}

TEST_CASE("overrides") {
  auto doc = ConfigDoc::parse("[run]\nseed = 1\n");
  doc.apply_override("run.seed=9");
  doc.apply_override("run.kernel=serial");
  doc.apply_override("run.lambdas=[0.1,0.2]");
  CHECK(doc.at("run.seed").as_int() == 9);
  CHECK(doc.at("run.kernel").as_string() == "serial");
  CHECK(doc.at("run.lambdas").as_double_list().size() == 2);
  CHECK_THROWS_AS(doc.apply_override("noequals"), Error);
  CHECK_THROWS_AS(doc.apply_override("nosection=1"), Error);
}
