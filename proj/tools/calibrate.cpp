// Scratch driver for hyperparameter calibration; not part of the shipped CLI.
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iostream>

#include "paratool/experiment.hpp"
#include "paratool/parallel.hpp"

using namespace paratool;

int main(int argc, char** argv) {
  ExperimentConfig cfg;
  cfg.name = "calib";
  cfg.runs_root = "runs_calib";
  cfg.seeds = {1};
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    const auto next = [&] { return std::stod(argv[++i]); };
    if (a == "--backbone-lr") cfg.stages.backbone_lr = next();
    else if (a == "--backbone-epochs") cfg.stages.backbone_epochs = static_cast<int>(next());
    else if (a == "--stage1-lr") cfg.stages.stage1_lr = next();
    else if (a == "--stage1-epochs") cfg.stages.stage1_epochs = static_cast<int>(next());
    else if (a == "--stage3-lr") cfg.stages.stage3_lr = next();
    else if (a == "--stage3-epochs") cfg.stages.stage3_epochs = static_cast<int>(next());
    else if (a == "--gate-lr") cfg.gate.lr = next();
    else if (a == "--gate-epochs") cfg.gate.epochs = static_cast<int>(next());
    else if (a == "--lambda") cfg.gate.entropy_lambda = next();
    else if (a == "--seed") cfg.seeds = {static_cast<uint64_t>(next())};
    else if (a == "--atomic") cfg.synth.atomic_per_tool = static_cast<int>(next());
    else if (a == "--episodes") cfg.synth.episodes_per_tool = static_cast<int>(next());
    else if (a == "--stop-after") { /* handled below */ }
  }

  bool probe_only = false;
  bool decode_probe = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--probe") probe_only = true;
    if (std::string(argv[i]) == "--backbone-decode") decode_probe = true;
  }
  if (decode_probe) {
    const uint64_t seed = cfg.seeds[0];
    const RunPaths paths = RunPaths::make(cfg, seed);
    Toolset backbone;
    Vocabulary vocab;
    load_toolset(paths.backbone_toolset_file, backbone, vocab);
    const TransformerModel model = load_model(paths.model_file);
    const auto val = load_instances_jsonl(paths.backbone_validation_file);
    int shown = 0, pass = 0, total = 0;
    for (const auto& ti : val) {
      if (ti.format != PromptFormat::document_free) continue;
      ++total;
      const auto prompt = format_instance(ti, backbone, vocab);
      const DecodeResult dec = greedy_decode(model, prompt, nullptr, vocab.id("END"), 12);
      std::vector<std::string> syms;
      for (const int t : dec.emitted) syms.push_back(vocab.symbol(t));
      const auto parsed = parse_action(syms);
      const bool ok = parsed.has_value() && *parsed == ti.target;
      pass += ok;
      if (!ok && shown < 12) {
        ++shown;
        std::string emitted;
        for (const auto& s : syms) emitted += s + " ";
        std::printf("MISS hist=%zu q='%s' want='%s' got='%s'\n", ti.history.size(),
                    ti.query.c_str(), ti.target.render().c_str(), emitted.c_str());
      }
    }
    std::printf("backbone doc-free val pass: %.4f (n=%d)\n", total ? double(pass) / total : 0.0,
                total);
    return 0;
  }
  if (probe_only) {
    // feature-separability probe over existing artifacts
    const uint64_t seed = cfg.seeds[0];
    const RunPaths paths = RunPaths::make(cfg, seed);
    Toolset toolset;
    Vocabulary vocab;
    load_toolset(paths.toolset_file, toolset, vocab);
    const TransformerModel model = load_model(paths.model_file);
    const auto val = load_instances_jsonl(paths.validation_file);
    const auto doc_embeds = embed_tool_docs(model, toolset, vocab, 2);
    const auto samples = build_gate_samples(model, val, toolset, vocab, 2);

    const auto cos = [](const Tensor& a, const Tensor& b) {
      double ab = 0, aa = 0, bb = 0;
      for (size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
      }
      return ab / std::sqrt(aa * bb);
    };
    int cos_hit = 0, n_multi = 0;
    for (const auto& s : samples) {
      if (s.candidates.size() < 2) continue;
      ++n_multi;
      int best = s.candidates[0];
      double best_c = -2;
      for (const int id : s.candidates) {
        const double c = cos(s.context, doc_embeds.at(id));
        if (c > best_c) {
          best_c = c;
          best = id;
        }
      }
      cos_hit += (best == s.target_tool);
    }
    std::printf("cosine(c,d) top-1 accuracy on val multi: %.4f (n=%d)\n",
                n_multi ? double(cos_hit) / n_multi : 0.0, n_multi);

    // gate accuracy on its own training data after a long run
    GateConfig gc = cfg.gate;
    gc.seed = seed;
    gc.epochs = 60;
    GateTrainLog log;
    (void)train_gate(gc, model.config.hidden, samples, samples, doc_embeds, &log);
    std::printf("gate self-fit accuracy by epoch:");
    for (const double a : log.val_accuracy) std::printf(" %.3f", a);
    std::printf("\n");
    return 0;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const uint64_t seed = cfg.seeds[0];

  step_synth(cfg, seed);
  std::cout << "[synth] done\n";

  const auto t_pre0 = std::chrono::steady_clock::now();
  step_pretrain(cfg, seed);
  const auto t_pre1 = std::chrono::steady_clock::now();
  std::cout << "[pretrain] " << std::chrono::duration<double>(t_pre1 - t_pre0).count() << "s\n";

  const RunPaths paths = RunPaths::make(cfg, seed);
  {
    std::ifstream is(paths.curves_file);
    std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::cout << "curves: " << blob.substr(0, 600) << "\n";
  }
  {
    std::ifstream is(paths.stage_metrics_file);
    std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::cout << "metrics: " << blob << "\n";
  }

  step_train_gate(cfg, seed);
  {
    std::ifstream is(paths.reports_dir + "/gate_log.json");
    std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::cout << "gate: " << blob << "\n";
  }

  step_finetune(cfg, seed);
  {
    std::ifstream is(paths.stage_metrics_file);
    std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::cout << "metrics: " << blob << "\n";
  }

  for (const Strategy s : all_strategies()) {
    const EvalReport r = step_eval(cfg, seed, s);
    std::printf("[eval] %-12s pass=%.4f gating=%.4f action=%.4f single=%.4f multi=%.4f\n",
                r.strategy.c_str(), r.pass_rate, r.gating_accuracy, r.action_accuracy,
                r.pass_single, r.pass_multi);
  }

  const auto t1 = std::chrono::steady_clock::now();
  std::cout << "total " << std::chrono::duration<double>(t1 - t0).count() << "s\n";
  return 0;
}
