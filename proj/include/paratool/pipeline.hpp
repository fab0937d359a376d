#pragma once

#include <map>
#include <string>
#include <vector>

#include "paratool/adapter.hpp"
#include "paratool/gating.hpp"
#include "paratool/model.hpp"
#include "paratool/synth.hpp"

namespace paratool {

struct StageConfig {
  // backbone preparation: gets the stand-in LLM to grammar/copying competence
  double backbone_lr = 1e-3;
  int backbone_epochs = 6;
  // parametric tool pre-training (per-tool adapters)
  double stage1_lr = 1e-4;
  int stage1_epochs = 3;
  // joint fine-tuning under the frozen gate
  double stage3_lr = 1e-4;
  int stage3_epochs = 1;
  int top_n = 0;  // 0 -> use the instance candidate count
  double weight_decay = 0.0;
  int threads = 0;  // 0 -> hardware concurrency

  void validate() const;
};

struct TrainCurve {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch (NaN-free; empty val set -> 0)
};

enum class Strategy { paratool, average, top1, oracle, no_finetune };
Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);
const std::vector<Strategy>& all_strategies();

struct EvalRecord {
  int index = 0;
  std::vector<int> candidates;
  std::vector<double> alpha;
  std::string decoded;  // rendered emission, or "<decode-failure>"
  bool parsed = false;
  bool passed = false;
  bool action_hit = false;  // decoded tool name equals the ground truth
  bool gate_hit = false;    // selector argmax equals the ground truth
  int episode_calls = 1;
  bool single_candidate = false;
};

struct EvalReport {
  std::string strategy;
  double pass_rate = 0.0;
  double gating_accuracy = 0.0;
  double action_accuracy = 0.0;
  // per-split views: the single-tool split (one candidate) and multi-call split
  double pass_single = 0.0;
  double pass_multi = 0.0;
  double gating_multi = 0.0;
  double action_multi = 0.0;
  int n_single = 0;
  int n_multi = 0;
  std::vector<EvalRecord> records;
};

// ---- stages -----------------------------------------------------------------

// Full-parameter training of the backbone on its own corpus.
TrainCurve train_backbone(TransformerModel& model, const std::vector<TraceInstance>& train,
                          const std::vector<TraceInstance>& val, const Toolset& toolset,
                          const Vocabulary& vocab, const StageConfig& config, Rng& rng);

// Stage 1: optimize one tool's adapter on its own dataset; the base model and
// every other adapter stay bitwise unchanged.
TrainCurve pretrain_tool(const TransformerModel& model, AdapterStore& store, int tool_id,
                         const std::vector<TraceInstance>& train_i,
                         const std::vector<TraceInstance>& val_i, const Toolset& toolset,
                         const Vocabulary& vocab, const StageConfig& config, Rng& rng);

// Stage 1 over every tool, parallel across tools.
std::map<int, TrainCurve> pretrain_all(const TransformerModel& model, AdapterStore& store,
                                       const std::vector<TraceInstance>& train,
                                       const std::vector<TraceInstance>& val,
                                       const Toolset& toolset, const Vocabulary& vocab,
                                       const StageConfig& config, Rng& rng);

// Stage 3: jointly fine-tune the kept adapters under frozen gate weights on
// document-free instances.
TrainCurve finetune_joint(const TransformerModel& model, AdapterStore& store,
                          const GateNetwork& gate, const std::map<int, Tensor>& doc_embeddings,
                          const std::vector<TraceInstance>& train,
                          const std::vector<TraceInstance>& val, const Toolset& toolset,
                          const Vocabulary& vocab, const StageConfig& config, Rng& rng);

// ---- evaluation ---------------------------------------------------------------

// gate may be null for oracle/average; doc embeddings are required whenever the
// gate is consulted.
EvalReport evaluate(const TransformerModel& model, const AdapterStore& store,
                    const GateNetwork* gate, const std::map<int, Tensor>& doc_embeddings,
                    const std::vector<TraceInstance>& testset, const Toolset& toolset,
                    const Vocabulary& vocab, Strategy strategy, int top_n_cap, int threads);

// Composition weights for one instance under a strategy (exposed for tests).
CompositionWeights strategy_weights(Strategy strategy, const TraceInstance& instance,
                                    const GateNetwork* gate,
                                    const std::map<int, Tensor>& doc_embeddings,
                                    const Tensor& context, const Toolset& toolset, int top_n_cap);

std::map<int, Tensor> embed_tool_docs(const TransformerModel& model, const Toolset& toolset,
                                      const Vocabulary& vocab, int threads);

std::vector<GateSample> build_gate_samples(const TransformerModel& model,
                                           const std::vector<TraceInstance>& instances,
                                           const Toolset& toolset, const Vocabulary& vocab,
                                           int threads);

}  // namespace paratool
