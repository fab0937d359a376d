#pragma once

#include <optional>
#include <string>
#include <vector>

#include "paratool/rng.hpp"
#include "paratool/tokenizer.hpp"

namespace paratool {

enum class ArgKind { integer, symbol };

// One tool call in the closed grammar `CALL <tool> ARG <v> ... END`.
struct Action {
  std::string tool;
  std::vector<std::string> args;

  std::string render() const;
  bool operator==(const Action&) const = default;
};

std::optional<Action> parse_action(const std::vector<std::string>& symbols);

struct ToolSpec {
  int id = -1;
  std::string name;
  std::vector<ArgKind> schema;
  std::vector<std::string> verbs;       // query verbs; also listed in the document
  std::vector<std::string> desc_words;  // shared description vocabulary
  int semantics = -1;
  std::string doc_text;                 // rendered document
  std::vector<std::string> examples;    // rendered usage examples
};

struct Toolset {
  std::vector<ToolSpec> tools;

  const ToolSpec& by_id(int id) const;
  const ToolSpec* by_name(const std::string& name) const;  // null when unknown
  std::vector<int> ids() const;
};

// Executes the tool over its closed argument domain; throws on domain or
// schema violations. Results are single vocabulary symbols.
std::string execute_tool(const ToolSpec& tool, const std::vector<std::string>& args);
bool action_valid(const Toolset& toolset, const Action& action);

// Deterministic tool family. The near-duplicate document pair sits at the
// front so it is present for every count >= 2.
Toolset gen_toolset(uint64_t seed, int count);
// Disjoint family used to teach the backbone the grammar and copying skills.
Toolset gen_backbone_toolset(int count);

// Full closed vocabulary covering both tool families, query templates,
// markers, digits and letters.
Vocabulary build_vocabulary(const Toolset& eval_tools, const Toolset& backbone_tools);

struct HistoryStep {
  Action action;
  std::string observation;
};

enum class PromptFormat { document_aware, document_free };
enum class SplitTag { train, validation, test };

struct TraceInstance {
  std::string query;
  std::vector<HistoryStep> history;
  std::vector<int> candidates;  // tool ids, target included
  Action target;
  PromptFormat format = PromptFormat::document_free;
  SplitTag split = SplitTag::train;
  int episode_calls = 1;
};

// ---- generation -----------------------------------------------------------

std::vector<std::pair<std::string, Action>> gen_atomic_examples(const ToolSpec& tool, int k,
                                                                Rng& rng);

// |A intersect B| / |A union B| over token sets; both empty -> 1 by convention.
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

// m highest-Jaccard tools from the pool plus the target, shuffled. The pool
// must not contain the target.
std::vector<int> build_distractors(int target_id, const std::vector<int>& pool,
                                   const Toolset& toolset, int m, Rng& rng);

// Cuts each multi-call episode before every call, one next-tool-prediction
// instance per step; observations come from executing the semantics.
struct Episode {
  std::string merged_query;
  std::vector<Action> calls;
  std::vector<std::string> observations;
  std::vector<int> candidates;
};
std::vector<TraceInstance> episode_to_instances(const Episode& episode, PromptFormat format,
                                                SplitTag split);
Episode compose_episode(const Toolset& toolset, const std::vector<int>& involved,
                        const std::vector<std::vector<std::pair<std::string, Action>>>& pools,
                        int candidate_count, Rng& rng);

// Prompt token ids for an instance in its format.
std::vector<int> format_instance(const TraceInstance& instance, const Toolset& toolset,
                                 const Vocabulary& vocab);
// Prompt plus target action, with the action span marked.
TokenSequence make_training_sequence(const TraceInstance& instance, const Toolset& toolset,
                                     const Vocabulary& vocab);

struct InstanceTokenCounts {
  int query_tokens = 0;
  int history_tokens = 0;
  int doc_tokens = 0;      // summed over candidates
  int example_tokens = 0;  // summed over candidates
};
InstanceTokenCounts count_tokens(const TraceInstance& instance, const Toolset& toolset);

// Removes train instances whose query exactly matches any test query;
// returns how many were dropped.
int decontaminate(std::vector<TraceInstance>& train, const std::vector<TraceInstance>& test);

// ---- corpus ---------------------------------------------------------------

struct SynthConfig {
  int tool_count = 12;
  int atomic_per_tool = 20;          // atomic examples per tool
  int episodes_per_tool = 18;        // 2..4-call episodes per tool
  int distractors_per_instance = 3;  // candidate list = target + distractors
  int test_singles_per_tool = 2;     // single-candidate test instances per tool
  int test_episodes = 16;
  double validation_fraction = 0.2;  // held out from the training material
  uint64_t seed = 0;
};

struct Dataset {
  std::vector<TraceInstance> train, validation, test;
  int decontamination_removed = 0;
};

Dataset gen_corpus(const SynthConfig& config, const Toolset& toolset, Rng& rng);

// ---- persistence ------------------------------------------------------------

void save_instances_jsonl(const std::vector<TraceInstance>& instances, const std::string& path);
std::vector<TraceInstance> load_instances_jsonl(const std::string& path);
void save_toolset(const Toolset& toolset, const Vocabulary& vocab, const std::string& path);
void load_toolset(const std::string& path, Toolset& toolset, Vocabulary& vocab);

}  // namespace paratool
