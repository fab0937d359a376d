#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "paratool/synth.hpp"

using namespace paratool;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("toolset generation is deterministic with unique ids") {
  const Toolset a = gen_toolset(1, 12);
  const Toolset b = gen_toolset(1, 12);
  REQUIRE(a.tools.size() == 12);
  std::set<int> ids;
  std::set<std::string> names;
  for (size_t i = 0; i < a.tools.size(); ++i) {
    CHECK(a.tools[i].name == b.tools[i].name);
    CHECK(a.tools[i].doc_text == b.tools[i].doc_text);
    ids.insert(a.tools[i].id);
    names.insert(a.tools[i].name);
  }
  CHECK(ids.size() == 12);
  CHECK(names.size() == 12);
  CHECK_THROWS(gen_toolset(1, 1));
}

TEST_CASE("the near-duplicate document pair exceeds 0.5 jaccard") {
  const Toolset ts = gen_toolset(0, 12);
  const ToolSpec* vinc = ts.by_name("vinc");
  const ToolSpec* vdec = ts.by_name("vdec");
  REQUIRE(vinc != nullptr);
  REQUIRE(vdec != nullptr);
  const double j = jaccard(split_symbols(vinc->doc_text), split_symbols(vdec->doc_text));
  CHECK(j > 0.5);
  // and the documents are not identical
  CHECK(j < 1.0);
}

TEST_CASE("jaccard closed forms") {
  CHECK(jaccard({"a", "b", "c"}, {"a", "b", "c"}) == doctest::Approx(1.0));
  CHECK(jaccard({"a"}, {"b"}) == doctest::Approx(0.0));
  CHECK(jaccard({"a", "b", "c"}, {"b", "c", "d"}) == doctest::Approx(0.5));
  CHECK(jaccard({}, {}) == doctest::Approx(1.0));
  // duplicates collapse: sets, not bags
  CHECK(jaccard({"a", "a", "b"}, {"a", "b"}) == doctest::Approx(1.0));
}

TEST_CASE("atomic examples are valid and consistent with their queries") {
  const Toolset ts = gen_toolset(0, 12);
  Rng rng(5);
  for (const auto& tool : ts.tools) {
    const auto pairs = gen_atomic_examples(tool, 8, rng);
    REQUIRE(pairs.size() == 8);
    for (const auto& [query, action] : pairs) {
      CHECK(action.tool == tool.name);
      CHECK(action_valid(ts, action));
      // every argument value is stated in the query
      const auto words = split_symbols(query);
      for (const auto& arg : action.args) {
        CHECK(std::count(words.begin(), words.end(), arg) >= 1);
      }
    }
  }
  const auto one = gen_atomic_examples(ts.tools[0], 1, rng);
  CHECK(one.size() == 1);
}

TEST_CASE("action grammar round trips and rejects garbage") {
  Action a{"vadd", {"3", "4"}};
  CHECK(a.render() == "CALL vadd ARG 3 ARG 4 END");
  const auto parsed = parse_action(split_symbols(a.render()));
  REQUIRE(parsed.has_value());
  CHECK(*parsed == a);

  CHECK_FALSE(parse_action(split_symbols("vadd 3 4")).has_value());
  CHECK_FALSE(parse_action(split_symbols("CALL vadd ARG 3 ARG END")).has_value());
  CHECK_FALSE(parse_action(split_symbols("CALL vadd ARG 3")).has_value());
  CHECK_FALSE(parse_action(split_symbols("CALL END")).has_value());

  // zero-argument call parses
  const auto zero = parse_action(split_symbols("CALL wzero END"));
  REQUIRE(zero.has_value());
  CHECK(zero->args.empty());
}

TEST_CASE("observations render executor results in the vocabulary") {
  const Toolset ts = gen_toolset(0, 12);
  const ToolSpec* vadd = ts.by_name("vadd");
  REQUIRE(vadd != nullptr);
  CHECK(execute_tool(*vadd, {"3", "4"}) == "7");
  CHECK_THROWS(execute_tool(*vadd, {"3"}));
  CHECK_THROWS(execute_tool(*vadd, {"3", "x"}));
  const ToolSpec* lnext = ts.by_name("lnext");
  CHECK(execute_tool(*lnext, {"c"}) == "d");
  CHECK(execute_tool(*lnext, {"h"}) == "a");  // cyclic
}

TEST_CASE("build_distractors keeps the target, honors m, and only shuffles order") {
  const Toolset ts = gen_toolset(0, 12);
  std::vector<int> pool;
  for (const auto& t : ts.tools) {
    if (t.id != 0) pool.push_back(t.id);
  }
  Rng r1(1), r2(2);
  const auto a = build_distractors(0, pool, ts, 3, r1);
  const auto b = build_distractors(0, pool, ts, 3, r2);
  CHECK(a.size() == 4);
  CHECK(std::set<int>(a.begin(), a.end()) == std::set<int>(b.begin(), b.end()));
  CHECK(std::count(a.begin(), a.end(), 0) == 1);

  Rng r3(3);
  const auto only_target = build_distractors(0, pool, ts, 0, r3);
  CHECK(only_target == std::vector<int>{0});
  CHECK_THROWS(build_distractors(0, pool, ts, 99, r3));

  // the near-duplicate twin is always among the closest distractors
  Rng r4(4);
  const auto cands = build_distractors(0, pool, ts, 3, r4);  // tool 0 = vinc
  CHECK(std::count(cands.begin(), cands.end(), 1) == 1);     // tool 1 = vdec
}

TEST_CASE("episodes cut into one instance per step with growing history") {
  const Toolset ts = gen_toolset(0, 12);
  Rng rng(9);
  std::vector<std::vector<std::pair<std::string, Action>>> pools;
  for (const auto& t : ts.tools) {
    Rng sub = rng.split(static_cast<uint64_t>(t.id));
    pools.push_back(gen_atomic_examples(t, 4, sub));
  }
  const Episode ep = compose_episode(ts, {2, 5, 7}, pools, 4, rng);
  CHECK(ep.calls.size() == 3);
  CHECK(ep.candidates.size() == 4);

  const auto instances = episode_to_instances(ep, PromptFormat::document_free, SplitTag::train);
  REQUIRE(instances.size() == 3);
  for (size_t k = 0; k < 3; ++k) {
    CHECK(instances[k].history.size() == k);
    CHECK(instances[k].target == ep.calls[k]);
    CHECK(std::count(instances[k].candidates.begin(), instances[k].candidates.end(),
                     instances[k].target == ep.calls[k] ? ts.by_name(ep.calls[k].tool)->id : -1) == 1);
  }

  // a 1-call episode yields exactly one instance with empty history
  const Episode ep1 = compose_episode(ts, {3}, pools, 4, rng);
  const auto single = episode_to_instances(ep1, PromptFormat::document_free, SplitTag::train);
  REQUIRE(single.size() == 1);
  CHECK(single[0].history.empty());
}

TEST_CASE("document-free prompts contain no candidate document tokens") {
  const Toolset ts = gen_toolset(0, 12);
  const Toolset bb = gen_backbone_toolset(8);
  const Vocabulary vocab = build_vocabulary(ts, bb);

  TraceInstance ti;
  ti.query = "combine 3 and 4";
  ti.target = Action{"vadd", {"3", "4"}};
  ti.candidates = {2, 3, 4};
  ti.format = PromptFormat::document_free;
  const auto free_prompt = format_instance(ti, ts, vocab);
  const int doc_marker = vocab.id("DOC");
  CHECK(std::count(free_prompt.begin(), free_prompt.end(), doc_marker) == 0);

  ti.format = PromptFormat::document_aware;
  const auto aware_prompt = format_instance(ti, ts, vocab);
  CHECK(std::count(aware_prompt.begin(), aware_prompt.end(), doc_marker) == 3);
  CHECK(aware_prompt.size() > free_prompt.size());

  // empty history leaves nothing after the marker
  CHECK(free_prompt.back() == vocab.id("HIST"));

  // the training sequence appends the action as the span suffix
  const TokenSequence seq = make_training_sequence(ti, ts, vocab);
  CHECK(seq.span_start == static_cast<int>(aware_prompt.size()));
  CHECK(seq.span_len() == 7);  // CALL vadd ARG 3 ARG 4 END
}

TEST_CASE("token counts split into query, history, docs and examples") {
  const Toolset ts = gen_toolset(0, 12);
  TraceInstance ti;
  ti.query = "combine 3 and 4";
  ti.target = Action{"vadd", {"3", "4"}};
  ti.candidates = {2, 3};
  ti.history.push_back({Action{"vinc", {"5"}}, "6"});
  const auto c = count_tokens(ti, ts);
  CHECK(c.query_tokens == 5);   // QRY + 4 words
  CHECK(c.history_tokens == 1 + 5 + 2);  // HIST + CALL vinc ARG 5 END + OBS obs
  CHECK(c.doc_tokens > 0);
  CHECK(c.example_tokens > 0);
}

TEST_CASE("decontamination removes exact query matches and is idempotent") {
  TraceInstance a, b, c;
  a.query = "combine 1 and 2";
  b.query = "times 3 and 3";
  c.query = "combine 1 and 2";
  std::vector<TraceInstance> train{a, b};
  const std::vector<TraceInstance> test{c};
  CHECK(decontaminate(train, test) == 1);
  CHECK(train.size() == 1);
  CHECK(train[0].query == b.query);
  CHECK(decontaminate(train, test) == 0);

  std::vector<TraceInstance> disjoint{b};
  CHECK(decontaminate(disjoint, test) == 0);
  CHECK(disjoint.size() == 1);
}

TEST_CASE("corpus generation is a pure function of the seed") {
  const Toolset ts = gen_toolset(0, 12);
  SynthConfig cfg;
  cfg.atomic_per_tool = 4;
  cfg.episodes_per_tool = 3;
  cfg.test_episodes = 3;
  cfg.seed = 11;

  Rng r1(cfg.seed), r2(cfg.seed);
  const Dataset d1 = gen_corpus(cfg, ts, r1);
  const Dataset d2 = gen_corpus(cfg, ts, r2);
  CHECK(d1.train.size() == d2.train.size());

  save_instances_jsonl(d1.train, "synth_a.jsonl");
  save_instances_jsonl(d2.train, "synth_b.jsonl");
  CHECK(file_bytes("synth_a.jsonl") == file_bytes("synth_b.jsonl"));
  std::remove("synth_a.jsonl");
  std::remove("synth_b.jsonl");

  // every instance is executable and its target is among the candidates
  const Toolset bb = gen_backbone_toolset(8);
  for (const auto* split : {&d1.train, &d1.validation, &d1.test}) {
    for (const auto& ti : *split) {
      CHECK(action_valid(ts, ti.target));
      CHECK(std::count(ti.candidates.begin(), ti.candidates.end(),
                       ts.by_name(ti.target.tool)->id) == 1);
    }
  }
  CHECK(!d1.train.empty());
  CHECK(!d1.validation.empty());
  CHECK(!d1.test.empty());
}

TEST_CASE("dataset and toolset files round trip") {
  const Toolset ts = gen_toolset(0, 12);
  const Toolset bb = gen_backbone_toolset(8);
  const Vocabulary vocab = build_vocabulary(ts, bb);
  CHECK(vocab.size() <= 128);

  SynthConfig cfg;
  cfg.atomic_per_tool = 3;
  cfg.episodes_per_tool = 2;
  cfg.test_episodes = 2;
  Rng rng(3);
  const Dataset ds = gen_corpus(cfg, ts, rng);
  save_instances_jsonl(ds.train, "synth_rt.jsonl");
  const auto back = load_instances_jsonl("synth_rt.jsonl");
  REQUIRE(back.size() == ds.train.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].query == ds.train[i].query);
    CHECK(back[i].target == ds.train[i].target);
    CHECK(back[i].candidates == ds.train[i].candidates);
    CHECK((back[i].format == ds.train[i].format));
  }
  std::remove("synth_rt.jsonl");

  save_toolset(ts, vocab, "synth_ts.json");
  Toolset ts2;
  Vocabulary v2;
  load_toolset("synth_ts.json", ts2, v2);
  CHECK(ts2.tools.size() == ts.tools.size());
  CHECK(v2.size() == vocab.size());
  for (size_t i = 0; i < ts.tools.size(); ++i) {
    CHECK(ts2.tools[i].doc_text == ts.tools[i].doc_text);
  }
  std::remove("synth_ts.json");
}

TEST_CASE("prompt formats tokenize within the default model budget") {
  const Toolset ts = gen_toolset(0, 12);
  const Toolset bb = gen_backbone_toolset(8);
  const Vocabulary vocab = build_vocabulary(ts, bb);
  SynthConfig cfg;
  Rng rng(1);
  const Dataset ds = gen_corpus(cfg, ts, rng);
  size_t longest = 0;
  for (const auto* split : {&ds.train, &ds.validation, &ds.test}) {
    for (const auto& ti : *split) {
      const TokenSequence seq = make_training_sequence(ti, ts, vocab);
      longest = std::max(longest, seq.tokens.size());
    }
  }
  CHECK(longest <= 384);
  MESSAGE("longest training sequence: ", longest);
}

}  // TEST_SUITE
