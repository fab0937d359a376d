#pragma once

#include <map>
#include <string>
#include <vector>

#include "paratool/adapter.hpp"
#include "paratool/model.hpp"

namespace paratool {

struct GateConfig {
  int hidden = 128;  // the reference setting is 512 on ~4096-dim encoders
  int depth = 3;     // linear layers
  double entropy_lambda = 0.8;
  double lr = 5e-4;
  int epochs = 3;
  double weight_decay = 0.0;
  uint64_t seed = 0;
};

// MLP scoring a candidate tool from [c, d, c*d, |c-d|]; softmax over the
// candidate list yields the composition weights.
struct GateNetwork {
  GateConfig config;
  int encoder_dim = 0;               // h of the frozen encoder; input is 4h
  std::vector<Tensor> weights;       // out x in per layer
  std::vector<Tensor> biases;        // 1 x out per layer

  static GateNetwork init(const GateConfig& config, int encoder_dim, Rng& rng);
  std::vector<Tensor*> parameters();
  uint64_t parameter_hash() const;
};

// Last-position final hidden state of the frozen backbone over the
// document-free prompt. No gradients flow anywhere.
Tensor encode_context(const TransformerModel& model, const std::vector<int>& prompt_tokens);
// Same encoder over a rendered tool document.
Tensor encode_tool_doc(const TransformerModel& model, const std::vector<int>& doc_tokens);

// Scalar score for one candidate feature row.
double gate_score(const GateNetwork& gate, const Tensor& context, const Tensor& doc);

CompositionWeights gate_scores(const GateNetwork& gate, const Tensor& context,
                               const std::vector<int>& tool_ids,
                               const std::vector<const Tensor*>& docs);

// -ln alpha[target] - lambda * H(alpha)
double gate_loss_value(const CompositionWeights& weights, int target_index, double lambda);

struct GateSample {
  Tensor context;
  std::vector<int> candidates;
  int target_tool = -1;
};

struct GateTrainLog {
  std::vector<double> train_loss;     // per epoch
  std::vector<double> val_accuracy;   // per epoch
  std::vector<double> val_entropy;    // per epoch
};

GateNetwork train_gate(const GateConfig& config, int encoder_dim,
                       const std::vector<GateSample>& train, const std::vector<GateSample>& val,
                       const std::map<int, Tensor>& doc_embeddings, GateTrainLog* log = nullptr);

// Keep the n largest-weight candidates (ties to the smaller tool id) and
// renormalize by the kept mass. n >= size is the identity.
CompositionWeights top_n(const CompositionWeights& weights, int n);

void save_gate(const GateNetwork& gate, const std::string& path);
GateNetwork load_gate(const std::string& path);

// Embedding cache keyed by tool id and a document content hash.
void save_embedding_cache(const std::map<int, std::pair<uint64_t, Tensor>>& cache,
                          const std::string& path);
std::map<int, std::pair<uint64_t, Tensor>> load_embedding_cache(const std::string& path);
uint64_t doc_content_hash(const std::string& doc_text);

}  // namespace paratool
