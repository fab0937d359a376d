#include "paratool/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace paratool {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kIntMod = 16;  // integer results live in 0..15
const std::vector<std::string> kLetters = {"a", "b", "c", "d", "e", "f", "g", "h"};

enum Semantics : int {
  kAddMod = 0,
  kSubMod,
  kMulMod,
  kMaxOf,
  kMinOf,
  kSquareMod,
  kDoubleMod,
  kIncMod,
  kDecMod,
  kFirstOf,
  kSecondOf,
  kZeroOf,
  kNegMod,
  kLetterNext,
  kLetterPrev,
  kLetterPos,
  kLetterSame,
};

int parse_int_arg(const std::string& s) {
  if (s.empty() || s.size() > 2) throw std::invalid_argument("bad integer argument: " + s);
  for (const char c : s) {
    if (c < '0' || c > '9') throw std::invalid_argument("bad integer argument: " + s);
  }
  const int v = std::stoi(s);
  if (v < 0 || v >= kIntMod) throw std::invalid_argument("integer argument out of domain: " + s);
  return v;
}

int parse_letter_arg(const std::string& s) {
  for (size_t i = 0; i < kLetters.size(); ++i) {
    if (kLetters[i] == s) return static_cast<int>(i);
  }
  throw std::invalid_argument("letter argument out of domain: " + s);
}

std::string render_doc(const ToolSpec& t) {
  std::string doc = "DOC " + t.name;
  for (const ArgKind k : t.schema) doc += (k == ArgKind::integer) ? " KINT" : " KSYM";
  doc += " DESC";
  for (const auto& w : t.desc_words) doc += " " + w;
  for (const auto& v : t.verbs) doc += " " + v;
  doc += " ENDDOC";
  return doc;
}

std::string render_example(const ToolSpec& t, int variant) {
  // deterministic usage examples; these only feed document/example token counts
  std::vector<std::string> args;
  for (const ArgKind k : t.schema) {
    if (k == ArgKind::integer) {
      args.push_back(std::to_string((3 + 2 * variant + static_cast<int>(args.size())) % 10));
    } else {
      args.push_back(kLetters[static_cast<size_t>((1 + variant) % kLetters.size())]);
    }
  }
  Action a{t.name, args};
  std::string query = t.verbs[static_cast<size_t>(variant) % t.verbs.size()];
  for (size_t i = 0; i < args.size(); ++i) {
    if (i) query += " and";
    query += " " + args[i];
  }
  return query + " " + a.render();
}

ToolSpec make_tool(int id, std::string name, std::vector<ArgKind> schema,
                   std::vector<std::string> verbs, std::vector<std::string> desc, int semantics) {
  ToolSpec t;
  t.id = id;
  t.name = std::move(name);
  t.schema = std::move(schema);
  t.verbs = std::move(verbs);
  t.desc_words = std::move(desc);
  t.semantics = semantics;
  t.doc_text = render_doc(t);
  t.examples = {render_example(t, 0), render_example(t, 1)};
  return t;
}

// the verb sits directly after the QRY/then anchor so attention can fetch it
// structurally; filler varies only at the tail
const std::vector<std::string> kFillerSuffix = {"", "now", "please"};

std::string render_query(const ToolSpec& tool, const std::vector<std::string>& args, Rng& rng,
                         bool allow_filler = true) {
  std::string q = rng.pick(tool.verbs);
  for (size_t i = 0; i < args.size(); ++i) {
    if (i) q += " and";
    q += " " + args[i];
  }
  if (allow_filler) {
    const std::string& post = rng.pick(kFillerSuffix);
    if (!post.empty()) q += " " + post;
  }
  return q;
}

std::string strip_filler(const std::string& query) {
  auto words = split_symbols(query);
  while (!words.empty() && (words.back() == "now" || words.back() == "please")) {
    words.pop_back();
  }
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

std::string Action::render() const {
  std::string s = "CALL " + tool;
  for (const auto& a : args) s += " ARG " + a;
  s += " END";
  return s;
}

std::optional<Action> parse_action(const std::vector<std::string>& symbols) {
  if (symbols.size() < 3) return std::nullopt;
  if (symbols.front() != "CALL" || symbols.back() != "END") return std::nullopt;
  Action a;
  a.tool = symbols[1];
  if (a.tool == "ARG" || a.tool == "END" || a.tool == "CALL") return std::nullopt;
  size_t i = 2;
  while (i + 1 < symbols.size()) {
    if (symbols[i] != "ARG") return std::nullopt;
    const std::string& v = symbols[i + 1];
    if (v == "ARG" || v == "END" || v == "CALL") return std::nullopt;
    a.args.push_back(v);
    i += 2;
  }
  if (i != symbols.size() - 1) return std::nullopt;
  return a;
}

const ToolSpec& Toolset::by_id(int id) const {
  for (const auto& t : tools) {
    if (t.id == id) return t;
  }
  throw std::out_of_range("unknown tool id");
}

const ToolSpec* Toolset::by_name(const std::string& name) const {
  for (const auto& t : tools) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<int> Toolset::ids() const {
  std::vector<int> out;
  out.reserve(tools.size());
  for (const auto& t : tools) out.push_back(t.id);
  return out;
}

std::string execute_tool(const ToolSpec& tool, const std::vector<std::string>& args) {
  if (args.size() != tool.schema.size()) {
    throw std::invalid_argument("tool " + tool.name + ": wrong argument count");
  }
  std::vector<int> iv;
  for (size_t i = 0; i < args.size(); ++i) {
    if (tool.schema[i] == ArgKind::integer) {
      iv.push_back(parse_int_arg(args[i]));
    } else {
      iv.push_back(parse_letter_arg(args[i]));
    }
  }
  const auto digit = [](int v) { return std::to_string(((v % kIntMod) + kIntMod) % kIntMod); };
  const auto letter = [](int v) {
    const int n = static_cast<int>(kLetters.size());
    return kLetters[static_cast<size_t>(((v % n) + n) % n)];
  };
  switch (tool.semantics) {
    case kAddMod: return digit(iv[0] + iv[1]);
    case kSubMod: return digit(iv[0] - iv[1]);
    case kMulMod: return digit(iv[0] * iv[1]);
    case kMaxOf: return digit(std::max(iv[0], iv[1]));
    case kMinOf: return digit(std::min(iv[0], iv[1]));
    case kSquareMod: return digit(iv[0] * iv[0]);
    case kDoubleMod: return digit(2 * iv[0]);
    case kIncMod: return digit(iv[0] + 1);
    case kDecMod: return digit(iv[0] - 1);
    case kFirstOf: return digit(iv[0]);
    case kSecondOf: return digit(iv[1]);
    case kZeroOf: return digit(0);
    case kNegMod: return digit(-iv[0]);
    case kLetterNext: return letter(iv[0] + 1);
    case kLetterPrev: return letter(iv[0] - 1);
    case kLetterPos: return digit(iv[0]);
    case kLetterSame: return letter(iv[0]);
    default: throw std::logic_error("unknown tool semantics");
  }
}

bool action_valid(const Toolset& toolset, const Action& action) {
  const ToolSpec* tool = toolset.by_name(action.tool);
  if (tool == nullptr) return false;
  if (action.args.size() != tool->schema.size()) return false;
  try {
    (void)execute_tool(*tool, action.args);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

Toolset gen_toolset(uint64_t seed, int count) {
  (void)seed;  // the family is a fixed table; the seed only matters downstream
  if (count < 2) throw std::invalid_argument("gen_toolset: count must be >= 2");
  using K = ArgKind;
  std::vector<ToolSpec> all;
  int id = 0;
  // near-duplicate document pair first so any count >= 2 includes one
  all.push_back(make_tool(id++, "vinc", {K::integer}, {"increment", "advance"},
                          {"move", "step", "value", "one", "single", "number", "forward"},
                          kIncMod));
  all.push_back(make_tool(id++, "vdec", {K::integer}, {"decrement", "retreat"},
                          {"move", "step", "value", "one", "single", "number", "backward"},
                          kDecMod));
  all.push_back(make_tool(id++, "vadd", {K::integer, K::integer}, {"combine", "plus"},
                          {"sum", "two", "numbers"}, kAddMod));
  all.push_back(make_tool(id++, "vsub", {K::integer, K::integer}, {"minus", "takeaway"},
                          {"difference", "two", "numbers"}, kSubMod));
  all.push_back(make_tool(id++, "vmul", {K::integer, K::integer}, {"times", "cross"},
                          {"product", "two", "numbers"}, kMulMod));
  all.push_back(make_tool(id++, "vmax", {K::integer, K::integer}, {"bigger", "peak"},
                          {"greatest", "two", "numbers"}, kMaxOf));
  all.push_back(make_tool(id++, "vmin", {K::integer, K::integer}, {"smaller", "dip"},
                          {"least", "two", "numbers"}, kMinOf));
  all.push_back(make_tool(id++, "vsq", {K::integer}, {"squared", "selftimes"},
                          {"square", "one", "number"}, kSquareMod));
  all.push_back(make_tool(id++, "vdbl", {K::integer}, {"doubled", "twofold"},
                          {"twice", "one", "number"}, kDoubleMod));
  all.push_back(make_tool(id++, "lnext", {K::symbol}, {"slide", "rotate"},
                          {"letter", "next", "position"}, kLetterNext));
  all.push_back(make_tool(id++, "lprev", {K::symbol}, {"rewind", "backslide"},
                          {"letter", "previous", "position"}, kLetterPrev));
  all.push_back(make_tool(id++, "lpos", {K::symbol}, {"locate", "rank"},
                          {"letter", "index", "position"}, kLetterPos));
  if (count > static_cast<int>(all.size())) {
    throw std::invalid_argument("gen_toolset: at most 12 tools are defined");
  }
  Toolset ts;
  ts.tools.assign(all.begin(), all.begin() + count);
  return ts;
}

Toolset gen_backbone_toolset(int count) {
  using K = ArgKind;
  std::vector<ToolSpec> all;
  // ids offset so they never collide with the evaluation tools
  int id = 100;
  all.push_back(make_tool(id++, "wsum", {K::integer, K::integer}, {"fuse", "join"},
                          {"sum", "two", "numbers"}, kAddMod));
  all.push_back(make_tool(id++, "wfirst", {K::integer, K::integer}, {"primary", "lead"},
                          {"value", "two", "numbers"}, kFirstOf));
  all.push_back(make_tool(id++, "wlast", {K::integer, K::integer}, {"final", "trail"},
                          {"value", "two", "numbers"}, kSecondOf));
  all.push_back(make_tool(id++, "wbig", {K::integer, K::integer}, {"top", "crest"},
                          {"greatest", "two", "numbers"}, kMaxOf));
  all.push_back(make_tool(id++, "wzero", {K::integer}, {"clear", "wipe"},
                          {"value", "one", "number"}, kZeroOf));
  all.push_back(make_tool(id++, "wneg", {K::integer}, {"invert", "flipsign"},
                          {"difference", "one", "number"}, kNegMod));
  all.push_back(make_tool(id++, "wskip", {K::symbol}, {"hop", "bounce"},
                          {"letter", "next", "position"}, kLetterNext));
  all.push_back(make_tool(id++, "wsame", {K::symbol}, {"echo", "mirror"},
                          {"letter", "position", "value"}, kLetterSame));
  if (count < 1 || count > static_cast<int>(all.size())) {
    throw std::invalid_argument("gen_backbone_toolset: count out of range");
  }
  Toolset ts;
  ts.tools.assign(all.begin(), all.begin() + count);
  return ts;
}

Vocabulary build_vocabulary(const Toolset& eval_tools, const Toolset& backbone_tools) {
  std::vector<std::string> syms = {"DOC",  "DESC", "ENDDOC", "KINT", "KSYM", "QRY",
                                   "HIST", "OBS",  "CALL",   "ARG",  "END"};
  for (int i = 0; i < kIntMod; ++i) syms.push_back(std::to_string(i));
  for (const auto& l : kLetters) syms.push_back(l);
  for (const auto& f : {"please", "now", "then", "and"}) syms.push_back(f);

  std::set<std::string> seen(syms.begin(), syms.end());
  const auto add = [&](const std::string& s) {
    if (seen.insert(s).second) syms.push_back(s);
  };
  for (const Toolset* ts : {&eval_tools, &backbone_tools}) {
    for (const auto& t : ts->tools) {
      add(t.name);
      for (const auto& v : t.verbs) add(v);
      for (const auto& w : t.desc_words) add(w);
    }
  }
  return Vocabulary(syms);
}

std::vector<std::pair<std::string, Action>> gen_atomic_examples(const ToolSpec& tool, int k,
                                                                Rng& rng) {
  if (k < 1) throw std::invalid_argument("gen_atomic_examples: k must be >= 1");
  std::vector<std::pair<std::string, Action>> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    std::vector<std::string> args;
    for (const ArgKind kind : tool.schema) {
      if (kind == ArgKind::integer) {
        args.push_back(std::to_string(rng.uniform_int(0, 9)));
      } else {
        args.push_back(kLetters[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(kLetters.size()) - 1))]);
      }
    }
    const std::string query = render_query(tool, args, rng);
    out.emplace_back(query, Action{tool.name, args});
  }
  return out;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;  // convention: two empty sets match
  size_t inter = 0;
  for (const auto& x : sa) inter += sb.count(x);
  const size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> build_distractors(int target_id, const std::vector<int>& pool,
                                   const Toolset& toolset, int m, Rng& rng) {
  if (m > static_cast<int>(pool.size())) {
    throw std::invalid_argument("build_distractors: m exceeds the pool");
  }
  const auto target_doc = split_symbols(toolset.by_id(target_id).doc_text);
  std::vector<std::pair<double, int>> scored;
  for (const int id : pool) {
    if (id == target_id) throw std::invalid_argument("build_distractors: pool contains target");
    scored.emplace_back(jaccard(target_doc, split_symbols(toolset.by_id(id).doc_text)), id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  std::vector<int> candidates{target_id};
  for (int i = 0; i < m; ++i) candidates.push_back(scored[static_cast<size_t>(i)].second);
  rng.shuffle(candidates);
  return candidates;
}

Episode compose_episode(const Toolset& toolset, const std::vector<int>& involved,
                        const std::vector<std::vector<std::pair<std::string, Action>>>& pools,
                        int candidate_count, Rng& rng) {
  Episode ep;
  for (size_t k = 0; k < involved.size(); ++k) {
    const ToolSpec& tool = toolset.by_id(involved[k]);
    size_t pool_index = 0;
    for (size_t i = 0; i < toolset.tools.size(); ++i) {
      if (toolset.tools[i].id == involved[k]) pool_index = i;
    }
    const auto& pool = pools[pool_index];
    const auto& [q, a] = pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    if (k) ep.merged_query += " then ";
    ep.merged_query += strip_filler(q);
    ep.calls.push_back(a);
    ep.observations.push_back(execute_tool(tool, a.args));
  }

  // candidates: the involved tools plus nearest distractors of the first call
  std::set<int> cand(involved.begin(), involved.end());
  if (static_cast<int>(cand.size()) < candidate_count) {
    const auto target_doc = split_symbols(toolset.by_id(involved[0]).doc_text);
    std::vector<std::pair<double, int>> scored;
    for (const auto& t : toolset.tools) {
      if (cand.count(t.id)) continue;
      scored.emplace_back(jaccard(target_doc, split_symbols(t.doc_text)), t.id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    for (const auto& [score, id] : scored) {
      if (static_cast<int>(cand.size()) >= candidate_count) break;
      cand.insert(id);
    }
  }
  ep.candidates.assign(cand.begin(), cand.end());
  rng.shuffle(ep.candidates);
  return ep;
}

std::vector<TraceInstance> episode_to_instances(const Episode& episode, PromptFormat format,
                                                SplitTag split) {
  std::vector<TraceInstance> out;
  for (size_t k = 0; k < episode.calls.size(); ++k) {
    TraceInstance ti;
    ti.query = episode.merged_query;
    for (size_t j = 0; j < k; ++j) {
      ti.history.push_back({episode.calls[j], episode.observations[j]});
    }
    ti.candidates = episode.candidates;
    ti.target = episode.calls[k];
    ti.format = format;
    ti.split = split;
    ti.episode_calls = static_cast<int>(episode.calls.size());
    out.push_back(std::move(ti));
  }
  return out;
}

std::vector<int> format_instance(const TraceInstance& instance, const Toolset& toolset,
                                 const Vocabulary& vocab) {
  std::string text;
  if (instance.format == PromptFormat::document_aware) {
    for (const int id : instance.candidates) {
      text += toolset.by_id(id).doc_text + " ";
    }
  }
  text += "QRY " + instance.query + " HIST";
  for (const auto& step : instance.history) {
    text += " " + step.action.render() + " OBS " + step.observation;
  }
  return vocab.tokenize(text);
}

TokenSequence make_training_sequence(const TraceInstance& instance, const Toolset& toolset,
                                     const Vocabulary& vocab) {
  TokenSequence seq;
  seq.tokens = format_instance(instance, toolset, vocab);
  seq.span_start = static_cast<int>(seq.tokens.size());
  const auto action_tokens = vocab.tokenize(instance.target.render());
  seq.tokens.insert(seq.tokens.end(), action_tokens.begin(), action_tokens.end());
  return seq;
}

InstanceTokenCounts count_tokens(const TraceInstance& instance, const Toolset& toolset) {
  InstanceTokenCounts c;
  c.query_tokens = 1 + static_cast<int>(split_symbols(instance.query).size());  // QRY marker
  c.history_tokens = 1;                                                         // HIST marker
  for (const auto& step : instance.history) {
    c.history_tokens += static_cast<int>(split_symbols(step.action.render()).size()) + 2;
  }
  for (const int id : instance.candidates) {
    const ToolSpec& t = toolset.by_id(id);
    c.doc_tokens += static_cast<int>(split_symbols(t.doc_text).size());
    for (const auto& ex : t.examples) {
      c.example_tokens += static_cast<int>(split_symbols(ex).size());
    }
  }
  return c;
}

int decontaminate(std::vector<TraceInstance>& train, const std::vector<TraceInstance>& test) {
  std::unordered_set<std::string> test_queries;
  for (const auto& t : test) test_queries.insert(t.query);
  const auto before = train.size();
  train.erase(std::remove_if(train.begin(), train.end(),
                             [&](const TraceInstance& ti) {
                               return test_queries.count(ti.query) > 0;
                             }),
              train.end());
  return static_cast<int>(before - train.size());
}

Dataset gen_corpus(const SynthConfig& config, const Toolset& toolset, Rng& rng) {
  Dataset ds;
  const std::vector<int> all_ids = toolset.ids();
  const int m = std::min<int>(config.distractors_per_instance,
                              static_cast<int>(all_ids.size()) - 1);
  const int candidate_count = m + 1;

  // per-tool atomic pools
  std::vector<std::vector<std::pair<std::string, Action>>> pools;
  for (const auto& tool : toolset.tools) {
    Rng sub = rng.split("atomic").split(static_cast<uint64_t>(tool.id));
    pools.push_back(gen_atomic_examples(tool, config.atomic_per_tool, sub));
  }

  const auto push_both_formats = [&](const TraceInstance& base,
                                     std::vector<TraceInstance>& sink) {
    TraceInstance aware = base;
    aware.format = PromptFormat::document_aware;
    sink.push_back(aware);
    TraceInstance free = base;
    free.format = PromptFormat::document_free;
    sink.push_back(free);
  };

  // single-call instances from the atomic pools
  for (size_t ti = 0; ti < toolset.tools.size(); ++ti) {
    const ToolSpec& tool = toolset.tools[ti];
    Rng srng = rng.split("singles").split(static_cast<uint64_t>(tool.id));
    std::vector<int> pool_ids;
    for (const int id : all_ids) {
      if (id != tool.id) pool_ids.push_back(id);
    }
    for (const auto& [query, action] : pools[ti]) {
      TraceInstance base;
      base.query = query;
      base.target = action;
      base.candidates = build_distractors(tool.id, pool_ids, toolset, m, srng);
      base.episode_calls = 1;
      base.split = srng.next_double() < config.validation_fraction ? SplitTag::validation
                                                                   : SplitTag::train;
      push_both_formats(base, base.split == SplitTag::train ? ds.train : ds.validation);
    }
  }

  // multi-call episodes, split assigned per episode
  for (const auto& tool : toolset.tools) {
    Rng erng = rng.split("episodes").split(static_cast<uint64_t>(tool.id));
    for (int e = 0; e < config.episodes_per_tool; ++e) {
      const int calls = 2 + (e % 3);
      std::vector<int> others;
      for (const int id : all_ids) {
        if (id != tool.id) others.push_back(id);
      }
      erng.shuffle(others);
      std::vector<int> involved{tool.id};
      for (int j = 0; j < calls - 1; ++j) involved.push_back(others[static_cast<size_t>(j)]);
      erng.shuffle(involved);

      const Episode ep = compose_episode(toolset, involved, pools, candidate_count, erng);
      const SplitTag split = erng.next_double() < config.validation_fraction
                                 ? SplitTag::validation
                                 : SplitTag::train;
      for (const auto& inst : episode_to_instances(ep, PromptFormat::document_free, split)) {
        push_both_formats(inst, split == SplitTag::train ? ds.train : ds.validation);
      }
    }
  }

  // held-out test material: fresh draws, document-free
  for (const auto& tool : toolset.tools) {
    Rng trng = rng.split("test-singles").split(static_cast<uint64_t>(tool.id));
    const auto fresh = gen_atomic_examples(tool, config.test_singles_per_tool, trng);
    for (const auto& [query, action] : fresh) {
      TraceInstance ti;
      ti.query = query;
      ti.target = action;
      ti.candidates = {tool.id};  // the single-tool split
      ti.format = PromptFormat::document_free;
      ti.split = SplitTag::test;
      ti.episode_calls = 1;
      ds.test.push_back(std::move(ti));
    }
  }
  {
    Rng trng = rng.split("test-episodes");
    for (int e = 0; e < config.test_episodes; ++e) {
      const int calls = 2 + (e % 3);
      std::vector<int> order = all_ids;
      trng.shuffle(order);
      const std::vector<int> involved(order.begin(), order.begin() + calls);
      std::vector<std::vector<std::pair<std::string, Action>>> fresh_pools;
      for (const auto& tool : toolset.tools) {
        Rng frng = trng.split(static_cast<uint64_t>(1000 + e)).split(
            static_cast<uint64_t>(tool.id));
        fresh_pools.push_back(gen_atomic_examples(tool, 2, frng));
      }
      Rng crng = trng.split(static_cast<uint64_t>(2000 + e));
      const Episode ep = compose_episode(toolset, involved, fresh_pools, candidate_count, crng);
      for (auto& inst : episode_to_instances(ep, PromptFormat::document_free, SplitTag::test)) {
        ds.test.push_back(std::move(inst));
      }
    }
  }

  ds.decontamination_removed = decontaminate(ds.train, ds.test);
  return ds;
}

// ---- persistence ------------------------------------------------------------

namespace {

ordered_json instance_to_json(const TraceInstance& t) {
  ordered_json j;
  j["query"] = t.query;
  ordered_json hist = ordered_json::array();
  for (const auto& step : t.history) {
    hist.push_back({{"action", step.action.render()}, {"obs", step.observation}});
  }
  j["history"] = hist;
  j["candidates"] = t.candidates;
  j["target"] = t.target.render();
  j["format"] = t.format == PromptFormat::document_aware ? "aware" : "free";
  switch (t.split) {
    case SplitTag::train: j["split"] = "train"; break;
    case SplitTag::validation: j["split"] = "validation"; break;
    case SplitTag::test: j["split"] = "test"; break;
  }
  j["calls"] = t.episode_calls;
  return j;
}

TraceInstance instance_from_json(const ordered_json& j) {
  TraceInstance t;
  t.query = j.at("query").get<std::string>();
  for (const auto& h : j.at("history")) {
    const auto parsed = parse_action(split_symbols(h.at("action").get<std::string>()));
    if (!parsed) throw std::runtime_error("dataset: unparseable history action");
    t.history.push_back({*parsed, h.at("obs").get<std::string>()});
  }
  t.candidates = j.at("candidates").get<std::vector<int>>();
  const auto target = parse_action(split_symbols(j.at("target").get<std::string>()));
  if (!target) throw std::runtime_error("dataset: unparseable target action");
  t.target = *target;
  t.format = j.at("format").get<std::string>() == "aware" ? PromptFormat::document_aware
                                                          : PromptFormat::document_free;
  const std::string split = j.at("split").get<std::string>();
  t.split = split == "train" ? SplitTag::train
                             : (split == "validation" ? SplitTag::validation : SplitTag::test);
  t.episode_calls = j.at("calls").get<int>();
  return t;
}

}  // namespace

void save_instances_jsonl(const std::vector<TraceInstance>& instances, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& t : instances) os << instance_to_json(t).dump() << "\n";
}

std::vector<TraceInstance> load_instances_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<TraceInstance> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(instance_from_json(ordered_json::parse(line)));
  }
  return out;
}

void save_toolset(const Toolset& toolset, const Vocabulary& vocab, const std::string& path) {
  ordered_json j;
  ordered_json tools = ordered_json::array();
  for (const auto& t : toolset.tools) {
    ordered_json tj;
    tj["id"] = t.id;
    tj["name"] = t.name;
    std::vector<std::string> kinds;
    for (const ArgKind k : t.schema) kinds.push_back(k == ArgKind::integer ? "int" : "sym");
    tj["schema"] = kinds;
    tj["verbs"] = t.verbs;
    tj["desc_words"] = t.desc_words;
    tj["semantics"] = t.semantics;
    tj["doc"] = t.doc_text;
    tj["examples"] = t.examples;
    tools.push_back(tj);
  }
  j["tools"] = tools;
  j["vocabulary"] = vocab.symbols();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

void load_toolset(const std::string& path, Toolset& toolset, Vocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  ordered_json j;
  is >> j;
  toolset.tools.clear();
  for (const auto& tj : j.at("tools")) {
    ToolSpec t;
    t.id = tj.at("id").get<int>();
    t.name = tj.at("name").get<std::string>();
    for (const auto& k : tj.at("schema")) {
      t.schema.push_back(k.get<std::string>() == "int" ? ArgKind::integer : ArgKind::symbol);
    }
    t.verbs = tj.at("verbs").get<std::vector<std::string>>();
    t.desc_words = tj.at("desc_words").get<std::vector<std::string>>();
    t.semantics = tj.at("semantics").get<int>();
    t.doc_text = tj.at("doc").get<std::string>();
    t.examples = tj.at("examples").get<std::vector<std::string>>();
    toolset.tools.push_back(std::move(t));
  }
  vocab = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
}

}  // namespace paratool
