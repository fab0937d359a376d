#include "paratool/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "paratool/optim.hpp"
#include "paratool/parallel.hpp"

namespace paratool {

void StageConfig::validate() const {
  if (backbone_epochs < 0 || stage1_epochs < 0 || stage3_epochs < 0) {
    throw std::invalid_argument("stage config: negative epoch count");
  }
  if (top_n < 0) throw std::invalid_argument("stage config: top_n must be >= 0");
}

Strategy parse_strategy(const std::string& name) {
  if (name == "paratool") return Strategy::paratool;
  if (name == "average") return Strategy::average;
  if (name == "top1") return Strategy::top1;
  if (name == "oracle") return Strategy::oracle;
  if (name == "no_finetune") return Strategy::no_finetune;
  throw std::invalid_argument("unknown strategy: " + name);
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::paratool: return "paratool";
    case Strategy::average: return "average";
    case Strategy::top1: return "top1";
    case Strategy::oracle: return "oracle";
    case Strategy::no_finetune: return "no_finetune";
  }
  return "?";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all{Strategy::paratool, Strategy::average, Strategy::top1,
                                         Strategy::oracle, Strategy::no_finetune};
  return all;
}

namespace {

int resolve_threads(int configured) {
  return configured > 0 ? configured : default_thread_count();
}

// mean action_nll of a set under an optional composition chooser, values only
double mean_nll(const TransformerModel& model,
                const std::vector<TraceInstance>& instances, const Toolset& toolset,
                const Vocabulary& vocab,
                const std::function<ComposedDelta(const TraceInstance&)>& delta_of, int threads) {
  if (instances.empty()) return 0.0;
  std::vector<double> losses(instances.size(), 0.0);
  parallel_for(static_cast<int>(instances.size()), threads, [&](int i) {
    const TraceInstance& ti = instances[static_cast<size_t>(i)];
    const TokenSequence seq = make_training_sequence(ti, toolset, vocab);
    Tape tape;
    BoundModel bound = bind_model(tape, model, false);
    const ComposedDelta delta = delta_of(ti);
    BoundComposition bc;
    const BoundComposition* pbc = nullptr;
    if (!delta.empty()) {
      bc = bind_composition(tape, delta, false);
      pbc = &bc;
    }
    Var logits = model_forward(tape, bound, model.config, seq.tokens, pbc);
    losses[static_cast<size_t>(i)] = tape.value(action_nll(logits, seq)).item();
  });
  double s = 0.0;
  for (const double l : losses) s += l;
  return s / static_cast<double>(losses.size());
}

}  // namespace

TrainCurve train_backbone(TransformerModel& model, const std::vector<TraceInstance>& train,
                          const std::vector<TraceInstance>& val, const Toolset& toolset,
                          const Vocabulary& vocab, const StageConfig& config, Rng& rng) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_backbone: empty corpus");
  const int threads = resolve_threads(config.threads);

  AdamWConfig oc;
  oc.lr = config.backbone_lr;
  oc.weight_decay = config.weight_decay;
  AdamW opt(model.parameters(), oc);

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = rng.split("backbone-shuffle");

  const auto no_delta = [](const TraceInstance&) { return ComposedDelta{}; };

  TrainCurve curve;
  const long total_steps =
      static_cast<long>(config.backbone_epochs) * static_cast<long>(train.size());
  long step = 0;
  for (int epoch = 0; epoch < config.backbone_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (const size_t idx : order) {
      // linear decay to a tenth of the initial rate
      const double frac = total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 0.0;
      opt.set_lr(config.backbone_lr * (1.0 - 0.9 * frac));
      ++step;
      const TraceInstance& ti = train[idx];
      const TokenSequence seq = make_training_sequence(ti, toolset, vocab);
      Tape tape;
      BoundModel bound = bind_model(tape, model, true);
      Var loss = action_nll(model_forward(tape, bound, model.config, seq.tokens), seq);
      loss_sum += tape.value(loss).item();
      tape.backward(loss);
      const std::vector<Var> vars = bound.all();
      for (size_t p = 0; p < vars.size(); ++p) opt.step_param(p, tape.grad(vars[p]));
    }
    curve.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
    curve.val_loss.push_back(mean_nll(model, val, toolset, vocab, no_delta, threads));
  }
  return curve;
}

TrainCurve pretrain_tool(const TransformerModel& model, AdapterStore& store, int tool_id,
                         const std::vector<TraceInstance>& train_i,
                         const std::vector<TraceInstance>& val_i, const Toolset& toolset,
                         const Vocabulary& vocab, const StageConfig& config, Rng& rng) {
  config.validate();
  if (train_i.empty()) throw std::invalid_argument("pretrain_tool: empty per-tool dataset");
  const std::string tool_name = toolset.by_id(tool_id).name;
  for (const auto& ti : train_i) {
    if (ti.target.tool != tool_name) {
      throw std::invalid_argument("pretrain_tool: instance targets a different tool");
    }
  }

  LowRankAdapter& adapter = store.at(tool_id);
  std::vector<Tensor*> params;
  for (auto& lf : adapter.layers) {
    for (Tensor* t : {&lf.up_a, &lf.up_b, &lf.down_a, &lf.down_b}) {
      if (!t->empty()) params.push_back(t);
    }
  }
  AdamWConfig oc;
  oc.lr = config.stage1_lr;
  oc.weight_decay = config.weight_decay;
  AdamW opt(params, oc);

  std::vector<size_t> order(train_i.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = rng.split("stage1-shuffle").split(static_cast<uint64_t>(tool_id));

  const CompositionWeights self = CompositionWeights::one_hot({tool_id}, tool_id);
  const auto self_delta = [&](const TraceInstance&) { return compose({&adapter}, self); };

  TrainCurve curve;
  for (int epoch = 0; epoch < config.stage1_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (const size_t idx : order) {
      const TraceInstance& ti = train_i[idx];
      const TokenSequence seq = make_training_sequence(ti, toolset, vocab);
      Tape tape;
      BoundModel bound = bind_model(tape, model, false);
      const ComposedDelta delta = compose({&adapter}, self);
      BoundComposition bc = bind_composition(tape, delta, true);
      Var loss = action_nll(model_forward(tape, bound, model.config, seq.tokens, &bc), seq);
      loss_sum += tape.value(loss).item();
      tape.backward(loss);

      const BoundAdapter& ba = bc.adapters[0];
      size_t p = 0;
      for (size_t l = 0; l < adapter.layers.size(); ++l) {
        if (ba.up[l].attached) {
          opt.step_param(p++, tape.grad(ba.up[l].a));
          opt.step_param(p++, tape.grad(ba.up[l].b));
        }
        if (ba.down[l].attached) {
          opt.step_param(p++, tape.grad(ba.down[l].a));
          opt.step_param(p++, tape.grad(ba.down[l].b));
        }
      }
    }
    curve.train_loss.push_back(loss_sum / static_cast<double>(train_i.size()));
    curve.val_loss.push_back(mean_nll(model, val_i, toolset, vocab, self_delta, 1));
  }
  return curve;
}

std::map<int, TrainCurve> pretrain_all(const TransformerModel& model, AdapterStore& store,
                                       const std::vector<TraceInstance>& train,
                                       const std::vector<TraceInstance>& val,
                                       const Toolset& toolset, const Vocabulary& vocab,
                                       const StageConfig& config, Rng& rng) {
  const int threads = resolve_threads(config.threads);
  std::vector<int> ids = toolset.ids();

  // per-tool slices of the corpus
  std::map<int, std::vector<TraceInstance>> train_by_tool, val_by_tool;
  for (const auto& ti : train) {
    const ToolSpec* t = toolset.by_name(ti.target.tool);
    if (t != nullptr) train_by_tool[t->id].push_back(ti);
  }
  for (const auto& ti : val) {
    const ToolSpec* t = toolset.by_name(ti.target.tool);
    if (t != nullptr) val_by_tool[t->id].push_back(ti);
  }

  std::vector<TrainCurve> curves(ids.size());
  std::vector<Rng> rngs;
  for (const int id : ids) rngs.push_back(rng.split("stage1").split(static_cast<uint64_t>(id)));

  parallel_for(static_cast<int>(ids.size()), threads, [&](int i) {
    const int id = ids[static_cast<size_t>(i)];
    StageConfig local = config;
    local.threads = 1;
    curves[static_cast<size_t>(i)] =
        pretrain_tool(model, store, id, train_by_tool[id], val_by_tool[id], toolset, vocab, local,
                      rngs[static_cast<size_t>(i)]);
  });

  std::map<int, TrainCurve> out;
  for (size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(curves[i]));
  return out;
}

TrainCurve finetune_joint(const TransformerModel& model, AdapterStore& store,
                          const GateNetwork& gate, const std::map<int, Tensor>& doc_embeddings,
                          const std::vector<TraceInstance>& train,
                          const std::vector<TraceInstance>& val, const Toolset& toolset,
                          const Vocabulary& vocab, const StageConfig& config, Rng& rng) {
  config.validate();
  const int threads = resolve_threads(config.threads);

  // one optimizer slot per adapter factor, id-ordered
  std::vector<Tensor*> params;
  std::map<const Tensor*, size_t> slot;
  for (auto& [id, adapter] : store.adapters) {
    (void)id;
    for (auto& lf : adapter.layers) {
      for (Tensor* t : {&lf.up_a, &lf.up_b, &lf.down_a, &lf.down_b}) {
        if (!t->empty()) {
          slot[t] = params.size();
          params.push_back(t);
        }
      }
    }
  }
  AdamWConfig oc;
  oc.lr = config.stage3_lr;
  oc.weight_decay = config.weight_decay;
  AdamW opt(params, oc);

  // contexts are frozen; compute once
  std::vector<const TraceInstance*> usable;
  for (const auto& ti : train) {
    if (ti.format == PromptFormat::document_free) usable.push_back(&ti);
  }
  if (usable.empty()) throw std::invalid_argument("finetune_joint: no document-free instances");
  for (const auto* ti : usable) {
    if (ti->candidates.empty()) throw std::invalid_argument("finetune_joint: empty candidate set");
  }

  std::vector<Tensor> contexts(usable.size());
  parallel_for(static_cast<int>(usable.size()), threads, [&](int i) {
    contexts[static_cast<size_t>(i)] =
        encode_context(model, format_instance(*usable[static_cast<size_t>(i)], toolset, vocab));
  });

  std::vector<size_t> order(usable.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = rng.split("stage3-shuffle");

  const auto paratool_delta = [&](const TraceInstance& ti) {
    const Tensor c = encode_context(model, format_instance(ti, toolset, vocab));
    std::vector<const Tensor*> docs;
    for (const int id : ti.candidates) docs.push_back(&doc_embeddings.at(id));
    CompositionWeights w = gate_scores(gate, c, ti.candidates, docs);
    const int cap = config.top_n > 0 ? config.top_n : w.size();
    w = top_n(w, cap);
    return compose_from_store(store, w);
  };

  TrainCurve curve;
  for (int epoch = 0; epoch < config.stage3_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (const size_t idx : order) {
      const TraceInstance& ti = *usable[idx];
      std::vector<const Tensor*> docs;
      for (const int id : ti.candidates) docs.push_back(&doc_embeddings.at(id));
      CompositionWeights w = gate_scores(gate, contexts[idx], ti.candidates, docs);
      const int cap = config.top_n > 0 ? config.top_n : w.size();
      w = top_n(w, cap);

      const TokenSequence seq = make_training_sequence(ti, toolset, vocab);
      Tape tape;
      BoundModel bound = bind_model(tape, model, false);
      const ComposedDelta delta = compose_from_store(store, w);
      BoundComposition bc = bind_composition(tape, delta, true);
      Var loss = action_nll(model_forward(tape, bound, model.config, seq.tokens, &bc), seq);
      loss_sum += tape.value(loss).item();
      tape.backward(loss);

      for (size_t k = 0; k < bc.adapters.size(); ++k) {
        const BoundAdapter& ba = bc.adapters[k];
        LowRankAdapter& ad = store.at(ba.tool_id);
        for (size_t l = 0; l < ad.layers.size(); ++l) {
          if (ba.up[l].attached) {
            opt.step_param(slot.at(&ad.layers[l].up_a), tape.grad(ba.up[l].a));
            opt.step_param(slot.at(&ad.layers[l].up_b), tape.grad(ba.up[l].b));
          }
          if (ba.down[l].attached) {
            opt.step_param(slot.at(&ad.layers[l].down_a), tape.grad(ba.down[l].a));
            opt.step_param(slot.at(&ad.layers[l].down_b), tape.grad(ba.down[l].b));
          }
        }
      }
    }
    curve.train_loss.push_back(loss_sum / static_cast<double>(usable.size()));
    curve.val_loss.push_back(mean_nll(
        model,
        [&] {
          std::vector<TraceInstance> vfree;
          for (const auto& ti : val) {
            if (ti.format == PromptFormat::document_free) vfree.push_back(ti);
          }
          return vfree;
        }(),
        toolset, vocab, paratool_delta, threads));
  }
  return curve;
}

CompositionWeights strategy_weights(Strategy strategy, const TraceInstance& instance,
                                    const GateNetwork* gate,
                                    const std::map<int, Tensor>& doc_embeddings,
                                    const Tensor& context, const Toolset& toolset, int top_n_cap) {
  (void)toolset;
  const std::vector<int>& cands = instance.candidates;
  if (cands.empty()) throw std::invalid_argument("strategy_weights: empty candidate set");
  const ToolSpec* truth = toolset.by_name(instance.target.tool);
  if (truth == nullptr) throw std::invalid_argument("strategy_weights: unknown target tool");

  const auto gate_alpha = [&] {
    if (gate == nullptr) throw std::runtime_error("strategy requires a trained gate");
    std::vector<const Tensor*> docs;
    for (const int id : cands) docs.push_back(&doc_embeddings.at(id));
    return gate_scores(*gate, context, cands, docs);
  };

  switch (strategy) {
    case Strategy::oracle:
      return CompositionWeights::one_hot(cands, truth->id);
    case Strategy::average:
      return CompositionWeights::uniform(cands);
    case Strategy::top1: {
      const CompositionWeights w = gate_alpha();
      return CompositionWeights::one_hot(cands, w.argmax_tool());
    }
    case Strategy::paratool:
    case Strategy::no_finetune: {
      CompositionWeights w = gate_alpha();
      const int cap = top_n_cap > 0 ? top_n_cap : w.size();
      return top_n(w, cap);
    }
  }
  throw std::logic_error("unreachable strategy");
}

EvalReport evaluate(const TransformerModel& model, const AdapterStore& store,
                    const GateNetwork* gate, const std::map<int, Tensor>& doc_embeddings,
                    const std::vector<TraceInstance>& testset, const Toolset& toolset,
                    const Vocabulary& vocab, Strategy strategy, int top_n_cap, int threads) {
  if (testset.empty()) throw std::invalid_argument("evaluate: empty test set");
  EvalReport report;
  report.strategy = strategy_name(strategy);
  report.records.resize(testset.size());

  const int end_token = vocab.id("END");
  const int budget = 12;

  parallel_for(static_cast<int>(testset.size()), threads, [&](int i) {
    const TraceInstance& ti = testset[static_cast<size_t>(i)];
    EvalRecord rec;
    rec.index = i;
    rec.candidates = ti.candidates;
    rec.episode_calls = ti.episode_calls;
    rec.single_candidate = ti.candidates.size() == 1;

    const std::vector<int> prompt = format_instance(ti, toolset, vocab);
    Tensor context;
    const bool needs_gate = strategy == Strategy::paratool || strategy == Strategy::top1 ||
                            strategy == Strategy::no_finetune ||
                            (strategy == Strategy::average && gate != nullptr);
    if (needs_gate) context = encode_context(model, prompt);

    const CompositionWeights weights =
        strategy_weights(strategy, ti, gate, doc_embeddings, context, toolset, top_n_cap);
    rec.alpha = weights.weights;

    const int truth_id = toolset.by_name(ti.target.tool)->id;
    if (strategy == Strategy::oracle) {
      rec.gate_hit = true;  // ground truth is manually activated
    } else if (gate != nullptr) {
      std::vector<const Tensor*> docs;
      for (const int id : ti.candidates) docs.push_back(&doc_embeddings.at(id));
      const Tensor c = needs_gate ? context : encode_context(model, prompt);
      rec.gate_hit = gate_scores(*gate, c, ti.candidates, docs).argmax_tool() == truth_id;
    }

    const ComposedDelta delta = compose_from_store(store, weights);
    const DecodeResult dec = greedy_decode(model, prompt, &delta, end_token, budget);
    if (dec.status != DecodeResult::Status::ok) {
      rec.decoded = "<decode-failure>";
    } else {
      std::vector<std::string> symbols;
      for (const int tok : dec.emitted) symbols.push_back(vocab.symbol(tok));
      const auto parsed = parse_action(symbols);
      if (parsed.has_value()) {
        rec.parsed = true;
        rec.decoded = parsed->render();
        rec.action_hit = parsed->tool == ti.target.tool;
        rec.passed = *parsed == ti.target;
      } else {
        rec.decoded = "<parse-failure>";
      }
    }
    report.records[static_cast<size_t>(i)] = std::move(rec);
  });

  int pass = 0, gate_hits = 0, action_hits = 0;
  int pass_single = 0, pass_multi = 0, gate_multi = 0, action_multi = 0;
  for (const auto& rec : report.records) {
    pass += rec.passed;
    gate_hits += rec.gate_hit;
    action_hits += rec.action_hit;
    if (rec.single_candidate) {
      ++report.n_single;
      pass_single += rec.passed;
    }
    if (rec.episode_calls > 1) {
      ++report.n_multi;
      pass_multi += rec.passed;
      gate_multi += rec.gate_hit;
      action_multi += rec.action_hit;
    }
  }
  const double n = static_cast<double>(report.records.size());
  report.pass_rate = pass / n;
  report.gating_accuracy = gate_hits / n;
  report.action_accuracy = action_hits / n;
  report.pass_single = report.n_single ? static_cast<double>(pass_single) / report.n_single : 0.0;
  report.pass_multi = report.n_multi ? static_cast<double>(pass_multi) / report.n_multi : 0.0;
  report.gating_multi = report.n_multi ? static_cast<double>(gate_multi) / report.n_multi : 0.0;
  report.action_multi = report.n_multi ? static_cast<double>(action_multi) / report.n_multi : 0.0;
  return report;
}

std::map<int, Tensor> embed_tool_docs(const TransformerModel& model, const Toolset& toolset,
                                      const Vocabulary& vocab, int threads) {
  std::vector<Tensor> embeds(toolset.tools.size());
  parallel_for(static_cast<int>(toolset.tools.size()), threads, [&](int i) {
    embeds[static_cast<size_t>(i)] =
        encode_tool_doc(model, vocab.tokenize(toolset.tools[static_cast<size_t>(i)].doc_text));
  });
  std::map<int, Tensor> out;
  for (size_t i = 0; i < toolset.tools.size(); ++i) {
    out.emplace(toolset.tools[i].id, std::move(embeds[i]));
  }
  return out;
}

std::vector<GateSample> build_gate_samples(const TransformerModel& model,
                                           const std::vector<TraceInstance>& instances,
                                           const Toolset& toolset, const Vocabulary& vocab,
                                           int threads) {
  std::vector<const TraceInstance*> free_instances;
  for (const auto& ti : instances) {
    if (ti.format == PromptFormat::document_free) free_instances.push_back(&ti);
  }
  std::vector<GateSample> samples(free_instances.size());
  parallel_for(static_cast<int>(free_instances.size()), threads, [&](int i) {
    const TraceInstance& ti = *free_instances[static_cast<size_t>(i)];
    GateSample s;
    s.context = encode_context(model, format_instance(ti, toolset, vocab));
    s.candidates = ti.candidates;
    s.target_tool = toolset.by_name(ti.target.tool)->id;
    samples[static_cast<size_t>(i)] = std::move(s);
  });
  return samples;
}

}  // namespace paratool
