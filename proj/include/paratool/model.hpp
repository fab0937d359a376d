#pragma once

#include <string>
#include <vector>

#include "paratool/adapter.hpp"
#include "paratool/autodiff.hpp"
#include "paratool/rng.hpp"
#include "paratool/tokenizer.hpp"

namespace paratool {

struct ModelConfig {
  int vocab = 128;
  int hidden = 64;
  int layers = 2;
  int heads = 2;
  int ffn = 128;
  int max_seq = 384;
  uint64_t seed = 0;
  double init_std = 0.08;

  void validate() const;
};

// Decoder-only pre-norm transformer, ReLU FFN, learned absolute positions,
// no biases, non-affine layer norms (so the parameter count is exactly the
// listed matrices).
struct TransformerModel {
  ModelConfig config;
  Tensor tok_embed;  // V x h
  Tensor pos_embed;  // max_seq x h
  struct LayerWeights {
    Tensor wq, wk, wv, wo;  // h x h
    Tensor w_up;            // ffn x h
    Tensor w_down;          // h x ffn
  };
  std::vector<LayerWeights> layers;
  Tensor w_head;  // V x h

  static TransformerModel init(const ModelConfig& config, Rng& rng);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  size_t parameter_count() const;
  uint64_t parameter_hash() const;
};

struct BoundModel {
  Var tok_embed, pos_embed, w_head;
  struct BoundLayer {
    Var wq, wk, wv, wo, w_up, w_down;
  };
  std::vector<BoundLayer> layers;

  std::vector<Var> all() const;
};

BoundModel bind_model(Tape& tape, const TransformerModel& model, bool trainable = true);

// Causal forward over token ids; returns S x V logits. final_hidden, when
// given, receives the post-norm hidden states feeding the head.
Var model_forward(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                  const std::vector<int>& tokens, const BoundComposition* delta = nullptr,
                  Var* final_hidden = nullptr);

// Same network over caller-provided input embeddings (S x h), used for
// input-gradient work.
Var model_forward_embedded(Tape& tape, const BoundModel& bound, const ModelConfig& config, Var x,
                           const BoundComposition* delta = nullptr, Var* final_hidden = nullptr);

// Token + position embedding rows for a sequence, as a plain tensor.
Tensor input_embeddings(const TransformerModel& model, const std::vector<int>& tokens);

// Mean negative log-probability over the action span only; prompt positions
// contribute nothing. The span must be a nonempty suffix starting past 0.
Var action_nll(Var logits, const TokenSequence& seq);

struct DecodeResult {
  enum class Status { ok, budget_exhausted };
  Status status = Status::ok;
  std::vector<int> emitted;  // tokens after the prompt, including the end token
};

// Greedy argmax decoding until end_token or budget tokens emitted.
DecodeResult greedy_decode(const TransformerModel& model, const std::vector<int>& prompt,
                           const ComposedDelta* delta, int end_token, int budget);

void save_model(const TransformerModel& model, const std::string& path);
TransformerModel load_model(const std::string& path);

}  // namespace paratool
