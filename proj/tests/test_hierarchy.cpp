#include "doctest.h"

#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "airlab/hierarchy.hpp"
#include "airlab/rng.hpp"

using namespace airlab;

namespace {

std::string random_bytes(Rng& rng, int max_len) {
  std::string s;
  const int n = rng.uniform_int(max_len + 1);
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>(rng.uniform_int(256)));
  return s;
}

std::string random_printable(Rng& rng, int min_len, int max_len) {
  std::string s;
  const int n = min_len + rng.uniform_int(max_len - min_len + 1);
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>(0x20 + rng.uniform_int(0x7f - 0x20)));
  return s;
}

int count_token(const TaggedSequence& seq, int id) {
  int n = 0;
  for (int t : seq.token_ids) n += (t == id);
  return n;
}

TEST_SUITE("hierarchy") {

TEST_CASE("tokenize maps bytes to their values") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("Ab") == std::vector<int>{65, 98});
}

TEST_CASE("tokenize round-trips 1000 random byte strings") {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = random_bytes(rng, 64);
    CHECK(detokenize(tokenize(s)) == s);
  }
}

TEST_CASE("detokenize rejects specials and out-of-range ids") {
  CHECK_THROWS_AS(detokenize({kTokBos}), std::out_of_range);
  CHECK_THROWS_AS(detokenize({65, 256}), std::out_of_range);
  CHECK_THROWS_AS(detokenize({-1}), std::out_of_range);
}

TEST_CASE("single-segment render is all instruction level") {
  TaggedSequence seq = render_chat_template("echo", std::nullopt, std::nullopt, Mechanism::Air);
  CHECK(seq.token_ids.front() == kTokBos);
  for (int lvl : seq.levels) CHECK(lvl == kLevelInstruction);
  for (uint8_t m : seq.response_mask) CHECK(m == 0);
  CHECK(seq.data_begin == -1);
  CHECK(seq.response_begin == -1);
}

TEST_CASE("full render is piecewise constant in template order") {
  TaggedSequence seq =
      render_chat_template("sum", std::string("1 2"), std::string("3"), Mechanism::None);
  // [BOS] + "#inst\n" + "sum" + "\n" | "#data\n" + "1 2" + "\n" | "#resp\n" + "3" + [EOS]
  CHECK(seq.size() == 11 + 10 + 8);
  int flips = 0;
  for (int i = 1; i < seq.size(); ++i) {
    CHECK(seq.levels[i] >= seq.levels[i - 1]);
    flips += (seq.levels[i] != seq.levels[i - 1]);
  }
  CHECK(flips == 2);
  CHECK(seq.token_ids.back() == kTokEos);
  CHECK(detokenize({seq.token_ids.begin() + seq.instruction_begin,
                    seq.token_ids.begin() + seq.instruction_end}) == "sum");
  CHECK(detokenize({seq.token_ids.begin() + seq.data_begin,
                    seq.token_ids.begin() + seq.data_end}) == "1 2");
  CHECK(detokenize({seq.token_ids.begin() + seq.response_begin,
                    seq.token_ids.begin() + seq.response_end}) == "3");
}

TEST_CASE("response mask equals response level everywhere") {
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    const bool with_data = rng.uniform_int(2) == 1;
    const bool with_resp = rng.uniform_int(2) == 1;
    TaggedSequence seq = render_chat_template(
        random_printable(rng, 1, 12),
        with_data ? std::optional<std::string>(random_printable(rng, 0, 12)) : std::nullopt,
        with_resp ? std::optional<std::string>(random_printable(rng, 1, 12)) : std::nullopt,
        static_cast<Mechanism>(rng.uniform_int(4)));
    REQUIRE(seq.token_ids.size() == seq.levels.size());
    REQUIRE(seq.token_ids.size() == seq.response_mask.size());
    for (int j = 0; j < seq.size(); ++j) {
      CHECK(static_cast<bool>(seq.response_mask[j]) == (seq.levels[j] == kLevelResponse));
    }
  }
}

TEST_CASE("delimiters adds one marker token per non-response segment") {
  TaggedSequence none_both =
      render_chat_template("sum", std::string("1 2"), std::nullopt, Mechanism::None);
  TaggedSequence delim_both =
      render_chat_template("sum", std::string("1 2"), std::nullopt, Mechanism::Delimiters);
  CHECK(delim_both.size() == none_both.size() + 2);
  CHECK(count_token(delim_both, kTokInst) == 1);
  CHECK(count_token(delim_both, kTokInpt) == 1);
  CHECK(count_token(none_both, kTokInst) == 0);
  CHECK(count_token(none_both, kTokInpt) == 0);

  TaggedSequence none_one = render_chat_template("echo", std::nullopt, std::nullopt, Mechanism::None);
  TaggedSequence delim_one =
      render_chat_template("echo", std::nullopt, std::nullopt, Mechanism::Delimiters);
  CHECK(delim_one.size() == none_one.size() + 1);
  CHECK(count_token(delim_one, kTokInpt) == 0);
}

TEST_CASE("ise and air render identically to none") {
  for (Mechanism m : {Mechanism::Ise, Mechanism::Air}) {
    TaggedSequence a = render_chat_template("sum", std::string("1 2"), std::string("3"), m);
    TaggedSequence b =
        render_chat_template("sum", std::string("1 2"), std::string("3"), Mechanism::None);
    CHECK(a.token_ids == b.token_ids);
    CHECK(a.levels == b.levels);
  }
}

TEST_CASE("render rejects ill-formed segments") {
  CHECK_THROWS_AS(render_chat_template("", std::nullopt, std::nullopt, Mechanism::None),
                  std::invalid_argument);
  CHECK_THROWS_AS(render_chat_template("a", std::nullopt, std::string(""), Mechanism::None),
                  std::invalid_argument);
}

TEST_CASE("rendering printable triples is injective") {
  Rng rng(47);
  using Triple = std::tuple<std::string, std::string, std::string>;
  std::map<std::vector<int>, Triple> seen;
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const std::string inst = random_printable(rng, 1, 8);
    const bool with_data = rng.uniform_int(2) == 1;
    const std::string data = with_data ? random_printable(rng, 0, 8) : std::string();
    const std::string resp = random_printable(rng, 1, 8);
    TaggedSequence seq = render_chat_template(
        inst, with_data ? std::optional<std::string>(data) : std::nullopt, resp, Mechanism::None);
    const Triple triple{inst, with_data ? "D:" + data : "-", resp};
    auto [it, inserted] = seen.emplace(seq.token_ids, triple);
    if (!inserted) {
      CHECK(it->second == triple);
    }
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("mechanism names round-trip and reject unknowns") {
  for (Mechanism m : {Mechanism::None, Mechanism::Delimiters, Mechanism::Ise, Mechanism::Air}) {
    CHECK(mechanism_from_name(mechanism_name(m)) == m);
  }
  CHECK_THROWS_AS(mechanism_from_name("attention"), std::invalid_argument);
}

}  // TEST_SUITE

}  // namespace
