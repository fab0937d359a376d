#include <doctest.h>

#include "paratool/tokenizer.hpp"

using namespace paratool;

TEST_SUITE("tokenizer") {

TEST_CASE("empty text tokenizes to the empty sequence") {
  Vocabulary v({"a", "b"});
  CHECK(v.tokenize("").empty());
}

TEST_CASE("one token per whitespace-separated symbol") {
  Vocabulary v({"CALL", "add", "ARG", "3", "4", "END"});
  const auto toks = v.tokenize("CALL add ARG 3 ARG 4 END");
  CHECK(toks.size() == 7);
  CHECK(v.detokenize(toks) == "CALL add ARG 3 ARG 4 END");
}

TEST_CASE("round trip over arbitrary lines") {
  Vocabulary v({"x", "y", "z", "1", "2"});
  for (const std::string line : {"x y z", "1 2 1 2", "z", "x x x x x"}) {
    CHECK(v.detokenize(v.tokenize(line)) == line);
  }
}

TEST_CASE("out-of-vocabulary symbol is an error") {
  Vocabulary v({"a"});
  CHECK_THROWS(v.tokenize("a b"));
  CHECK_THROWS(v.id("nope"));
}

TEST_CASE("duplicate symbols are rejected") {
  CHECK_THROWS(Vocabulary({"a", "a"}));
}

TEST_CASE("whitespace is normalized to single spaces") {
  Vocabulary v({"a", "b"});
  CHECK(v.detokenize(v.tokenize("  a   b ")) == "a b");
}

}  // TEST_SUITE
