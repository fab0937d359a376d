#include "paratool/experiment.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "paratool/errors.hpp"
#include "paratool/parallel.hpp"

namespace paratool {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

ExperimentConfig::ExperimentConfig() {
  backbone_synth.tool_count = 8;
  backbone_synth.atomic_per_tool = 80;
  backbone_synth.episodes_per_tool = 24;
  backbone_synth.distractors_per_instance = 2;
  backbone_synth.test_singles_per_tool = 1;
  backbone_synth.test_episodes = 2;
}

RunPaths RunPaths::make(const ExperimentConfig& config, uint64_t seed) {
  RunPaths p;
  p.root = config.runs_root + "/" + config.name;
  p.seed_dir = p.root + "/seed" + std::to_string(seed);
  p.dataset_dir = p.seed_dir + "/dataset";
  p.reports_dir = p.seed_dir + "/reports";
  p.train_file = p.dataset_dir + "/train.jsonl";
  p.validation_file = p.dataset_dir + "/validation.jsonl";
  p.test_file = p.dataset_dir + "/test.jsonl";
  p.toolset_file = p.dataset_dir + "/toolset.json";
  p.backbone_train_file = p.dataset_dir + "/backbone_train.jsonl";
  p.backbone_validation_file = p.dataset_dir + "/backbone_validation.jsonl";
  p.backbone_toolset_file = p.dataset_dir + "/backbone_toolset.json";
  p.profiles_file = p.dataset_dir + "/profiles.json";
  p.model_file = p.seed_dir + "/model.bin";
  p.store1_file = p.seed_dir + "/adapters_stage1.bin";
  p.store3_file = p.seed_dir + "/adapters.bin";
  p.gate_file = p.seed_dir + "/gate.bin";
  p.embeds_file = p.seed_dir + "/doc_embeddings.bin";
  p.stage_metrics_file = p.reports_dir + "/stage_metrics.json";
  p.curves_file = p.reports_dir + "/curves.json";
  return p;
}

namespace {

void require_artifact(const std::string& path, const std::string& producing_verb) {
  if (!fs::exists(path)) {
    throw DependencyError("missing artifact " + path + "; run `" + producing_verb + "` first");
  }
}

int resolve_threads(const ExperimentConfig& config) {
  return config.threads > 0 ? config.threads : default_thread_count();
}

struct LoadedRun {
  Toolset toolset;
  Vocabulary vocab;
  std::vector<TraceInstance> train, validation, test;
};

LoadedRun load_dataset(const RunPaths& paths) {
  require_artifact(paths.toolset_file, "synth");
  LoadedRun r;
  load_toolset(paths.toolset_file, r.toolset, r.vocab);
  r.train = load_instances_jsonl(paths.train_file);
  r.validation = load_instances_jsonl(paths.validation_file);
  r.test = load_instances_jsonl(paths.test_file);
  return r;
}

std::map<int, Tensor> load_doc_embeddings(const RunPaths& paths, const Toolset& toolset) {
  require_artifact(paths.embeds_file, "train-gate");
  const auto cache = load_embedding_cache(paths.embeds_file);
  std::map<int, Tensor> out;
  for (const auto& tool : toolset.tools) {
    const auto it = cache.find(tool.id);
    if (it == cache.end() || it->second.first != doc_content_hash(tool.doc_text)) {
      throw DependencyError("stale document embedding cache; run `train-gate` again");
    }
    out.emplace(tool.id, it->second.second);
  }
  return out;
}

std::vector<TraceInstance> free_only(const std::vector<TraceInstance>& in) {
  std::vector<TraceInstance> out;
  for (const auto& ti : in) {
    if (ti.format == PromptFormat::document_free) out.push_back(ti);
  }
  return out;
}

ordered_json curve_to_json(const TrainCurve& c) {
  ordered_json j;
  j["train_loss"] = c.train_loss;
  j["val_loss"] = c.val_loss;
  return j;
}

void update_stage_metrics(const std::string& path, const std::string& key, double value) {
  ordered_json j;
  if (fs::exists(path)) {
    std::ifstream is(path);
    is >> j;
  }
  j[key] = value;
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << "\n";
}

double read_stage_metric(const std::string& path, const std::string& key, double fallback) {
  if (!fs::exists(path)) return fallback;
  std::ifstream is(path);
  ordered_json j;
  is >> j;
  if (!j.contains(key)) return fallback;
  return j.at(key).get<double>();
}

WorkloadProfile profile_from_instances(const std::string& name,
                                       const std::vector<TraceInstance>& instances,
                                       const Toolset& toolset, const ExperimentConfig& config) {
  WorkloadProfile p;
  p.name = name;
  p.dims.hidden = config.model.hidden;
  p.dims.layers = config.model.layers;
  p.dims.heads = config.model.heads;
  p.dims.ffn = config.model.ffn;
  p.dims.vocab = config.model.vocab;
  p.rank = config.adapter.rank;
  p.gate_hidden = config.gate.hidden;
  p.gate_depth = config.gate.depth;
  if (instances.empty()) return p;
  double q = 0.0, h = 0.0, d = 0.0, e = 0.0, c = 0.0;
  for (const auto& ti : instances) {
    const InstanceTokenCounts counts = count_tokens(ti, toolset);
    q += counts.query_tokens;
    h += counts.history_tokens;
    d += counts.doc_tokens;
    e += counts.example_tokens;
    c += static_cast<double>(ti.candidates.size());
  }
  const double n = static_cast<double>(instances.size());
  p.query_tokens = q / n;
  p.history_tokens = h / n;
  p.doc_tokens = d / n;
  p.example_tokens = e / n;
  p.candidates = static_cast<int>(c / n + 0.5);
  p.adapters = p.candidates;
  return p;
}

std::vector<WorkloadProfile> reference_profiles(const ExperimentConfig& config) {
  std::vector<WorkloadProfile> out;

  // doc-heavy desk profile: documents+examples at 12x the live context
  WorkloadProfile ninefold;
  ninefold.name = "ref_docheavy_desk";
  ninefold.dims = {config.model.hidden, config.model.layers, config.model.heads,
                   config.model.ffn, config.model.vocab};
  ninefold.query_tokens = 32;
  ninefold.history_tokens = 32;
  ninefold.doc_tokens = 512;
  ninefold.example_tokens = 256;
  ninefold.adapters = 4;
  ninefold.rank = config.adapter.rank;
  ninefold.gate_hidden = config.gate.hidden;
  ninefold.gate_depth = config.gate.depth;
  ninefold.candidates = 4;
  out.push_back(ninefold);

  // production-scale magnitudes with N L r = h; format fixture, not a
  // reproduction of any published numbers
  WorkloadProfile big;
  big.name = "ref_prod_scale_nlr_h";
  big.dims = {4096, 32, 32, 14336, 128256};
  big.query_tokens = 200;
  big.history_tokens = 300;
  big.doc_tokens = 3000;
  big.example_tokens = 1500;
  big.adapters = 8;
  big.rank = 16;
  big.gate_hidden = 512;
  big.gate_depth = 3;
  big.candidates = 8;
  out.push_back(big);

  // zero-document profile: the two paradigms read the same tokens
  WorkloadProfile zero;
  zero.name = "ref_zero_docs";
  zero.dims = ninefold.dims;
  zero.query_tokens = 24;
  zero.history_tokens = 16;
  zero.doc_tokens = 0;
  zero.example_tokens = 0;
  zero.adapters = 4;
  zero.rank = config.adapter.rank;
  zero.gate_hidden = config.gate.hidden;
  zero.gate_depth = config.gate.depth;
  zero.candidates = 4;
  out.push_back(zero);

  return out;
}

}  // namespace

void step_synth(const ExperimentConfig& config, uint64_t seed) {
  const RunPaths paths = RunPaths::make(config, seed);
  fs::create_directories(paths.dataset_dir);
  fs::create_directories(paths.reports_dir);

  const Toolset toolset = gen_toolset(seed, config.synth.tool_count);
  const Toolset backbone = gen_backbone_toolset(config.backbone_tool_count);
  const Vocabulary vocab = build_vocabulary(toolset, backbone);
  if (vocab.size() > config.model.vocab) {
    throw DataError("vocabulary does not fit the configured model vocab size");
  }

  Rng rng(seed);
  Rng eval_rng = rng.split("corpus");
  Rng backbone_rng = rng.split("backbone-corpus");
  SynthConfig sc = config.synth;
  sc.seed = seed;
  const Dataset ds = gen_corpus(sc, toolset, eval_rng);
  SynthConfig bc = config.backbone_synth;
  bc.seed = seed;
  const Dataset bds = gen_corpus(bc, backbone, backbone_rng);

  save_toolset(toolset, vocab, paths.toolset_file);
  save_toolset(backbone, vocab, paths.backbone_toolset_file);
  save_instances_jsonl(ds.train, paths.train_file);
  save_instances_jsonl(ds.validation, paths.validation_file);
  save_instances_jsonl(ds.test, paths.test_file);
  save_instances_jsonl(bds.train, paths.backbone_train_file);
  save_instances_jsonl(bds.validation, paths.backbone_validation_file);

  // workload profiles measured on the held-out material plus fixed references
  std::vector<TraceInstance> singles, multis;
  for (const auto& ti : ds.test) {
    (ti.episode_calls > 1 ? multis : singles).push_back(ti);
  }
  std::vector<WorkloadProfile> profiles;
  {
    // single-call instances carry their full distractor candidates in training;
    // measure the aware-cost against the multi-candidate shape
    std::vector<TraceInstance> train_singles, train_multis;
    for (const auto& ti : ds.train) {
      if (ti.format != PromptFormat::document_free) continue;
      (ti.episode_calls > 1 ? train_multis : train_singles).push_back(ti);
    }
    profiles.push_back(profile_from_instances("corpus_single_call", train_singles, toolset, config));
    profiles.push_back(profile_from_instances("corpus_multi_call", train_multis, toolset, config));
  }
  for (auto& p : reference_profiles(config)) profiles.push_back(std::move(p));
  save_profiles_json(profiles, paths.profiles_file);

  update_stage_metrics(paths.stage_metrics_file, "decontamination_removed",
                       static_cast<double>(ds.decontamination_removed));
}

void step_pretrain(const ExperimentConfig& config, uint64_t seed) {
  const RunPaths paths = RunPaths::make(config, seed);
  require_artifact(paths.backbone_train_file, "synth");
  const LoadedRun run = load_dataset(paths);

  Toolset backbone;
  Vocabulary vocab_unused;
  load_toolset(paths.backbone_toolset_file, backbone, vocab_unused);
  const auto backbone_train = load_instances_jsonl(paths.backbone_train_file);
  const auto backbone_val = load_instances_jsonl(paths.backbone_validation_file);

  StageConfig stages = config.stages;
  stages.threads = resolve_threads(config);

  Rng rng(seed);
  ModelConfig mc = config.model;
  mc.seed = seed;
  Rng model_rng = rng.split("model-init");
  TransformerModel model = TransformerModel::init(mc, model_rng);

  Rng backbone_rng = rng.split("backbone-train");
  const TrainCurve backbone_curve = train_backbone(model, backbone_train, backbone_val, backbone,
                                                   run.vocab, stages, backbone_rng);
  save_model(model, paths.model_file);

  AdapterStore store;
  Rng adapter_rng = rng.split("adapter-init");
  init_store(store, run.toolset.ids(), config.adapter, mc.layers, mc.hidden, mc.ffn, adapter_rng);

  Rng stage1_rng = rng.split("stage1-train");
  const auto curves =
      pretrain_all(model, store, run.train, run.validation, run.toolset, run.vocab, stages,
                   stage1_rng);
  save_store(store, paths.store1_file);

  ordered_json cj;
  cj["backbone"] = curve_to_json(backbone_curve);
  ordered_json stage1 = ordered_json::object();
  for (const auto& [id, curve] : curves) stage1[std::to_string(id)] = curve_to_json(curve);
  cj["stage1"] = stage1;
  std::ofstream os(paths.curves_file, std::ios::trunc);
  os << cj.dump(2) << "\n";

  // stage-1 convergence check: the single-tool split under the ground-truth
  // adapter; every strategy coincides there
  std::vector<TraceInstance> singles;
  for (const auto& ti : run.test) {
    if (ti.candidates.size() == 1) singles.push_back(ti);
  }
  if (!singles.empty()) {
    const EvalReport rep = evaluate(model, store, nullptr, {}, singles, run.toolset, run.vocab,
                                    Strategy::oracle, stages.top_n, stages.threads);
    update_stage_metrics(paths.stage_metrics_file, "stage1_single_pass", rep.pass_rate);
  }
}

void step_train_gate(const ExperimentConfig& config, uint64_t seed) {
  const RunPaths paths = RunPaths::make(config, seed);
  require_artifact(paths.model_file, "pretrain");
  const LoadedRun run = load_dataset(paths);
  const TransformerModel model = load_model(paths.model_file);
  const int threads = resolve_threads(config);

  // cache document embeddings keyed by id + content hash
  const std::map<int, Tensor> doc_embeds = embed_tool_docs(model, run.toolset, run.vocab, threads);
  std::map<int, std::pair<uint64_t, Tensor>> cache;
  for (const auto& tool : run.toolset.tools) {
    cache.emplace(tool.id,
                  std::make_pair(doc_content_hash(tool.doc_text), doc_embeds.at(tool.id)));
  }
  save_embedding_cache(cache, paths.embeds_file);

  const auto train_samples = build_gate_samples(model, run.train, run.toolset, run.vocab, threads);
  const auto val_samples =
      build_gate_samples(model, run.validation, run.toolset, run.vocab, threads);

  GateConfig gc = config.gate;
  gc.seed = seed;
  GateTrainLog log;
  const GateNetwork gate =
      train_gate(gc, model.config.hidden, train_samples, val_samples, doc_embeds, &log);
  save_gate(gate, paths.gate_file);

  ordered_json j;
  j["train_loss"] = log.train_loss;
  j["val_accuracy"] = log.val_accuracy;
  j["val_entropy"] = log.val_entropy;
  std::ofstream os(paths.reports_dir + "/gate_log.json", std::ios::trunc);
  os << j.dump(2) << "\n";
  if (!log.val_accuracy.empty()) {
    update_stage_metrics(paths.stage_metrics_file, "gate_val_accuracy", log.val_accuracy.back());
    update_stage_metrics(paths.stage_metrics_file, "gate_val_entropy", log.val_entropy.back());
  }
}

void step_finetune(const ExperimentConfig& config, uint64_t seed) {
  const RunPaths paths = RunPaths::make(config, seed);
  require_artifact(paths.store1_file, "pretrain");
  require_artifact(paths.gate_file, "train-gate");
  const LoadedRun run = load_dataset(paths);
  const TransformerModel model = load_model(paths.model_file);
  const GateNetwork gate = load_gate(paths.gate_file);
  const std::map<int, Tensor> doc_embeds = load_doc_embeddings(paths, run.toolset);

  StageConfig stages = config.stages;
  stages.threads = resolve_threads(config);

  AdapterStore store = load_store(paths.store1_file);

  const std::vector<TraceInstance> val_free = free_only(run.validation);
  const EvalReport before = evaluate(model, store, &gate, doc_embeds, val_free, run.toolset,
                                     run.vocab, Strategy::paratool, stages.top_n, stages.threads);
  update_stage_metrics(paths.stage_metrics_file, "val_pass_before_stage3", before.pass_rate);

  const uint64_t gate_hash_before = gate.parameter_hash();
  const uint64_t model_hash_before = model.parameter_hash();

  Rng rng(seed);
  Rng stage3_rng = rng.split("stage3-train");
  const TrainCurve curve = finetune_joint(model, store, gate, doc_embeds, run.train,
                                          run.validation, run.toolset, run.vocab, stages,
                                          stage3_rng);
  if (gate.parameter_hash() != gate_hash_before || model.parameter_hash() != model_hash_before) {
    throw std::logic_error("stage 3 must leave the gate and base model unchanged");
  }
  save_store(store, paths.store3_file);

  const EvalReport after = evaluate(model, store, &gate, doc_embeds, val_free, run.toolset,
                                    run.vocab, Strategy::paratool, stages.top_n, stages.threads);
  update_stage_metrics(paths.stage_metrics_file, "val_pass_after_stage3", after.pass_rate);

  ordered_json j = curve_to_json(curve);
  std::ofstream os(paths.reports_dir + "/stage3_curve.json", std::ios::trunc);
  os << j.dump(2) << "\n";
}

EvalReport step_eval(const ExperimentConfig& config, uint64_t seed, Strategy strategy) {
  const RunPaths paths = RunPaths::make(config, seed);
  const LoadedRun run = load_dataset(paths);
  require_artifact(paths.model_file, "pretrain");
  const TransformerModel model = load_model(paths.model_file);

  const bool wants_gate = strategy == Strategy::paratool || strategy == Strategy::top1 ||
                          strategy == Strategy::no_finetune;
  if (wants_gate) require_artifact(paths.gate_file, "train-gate");

  const std::string store_file =
      strategy == Strategy::no_finetune ? paths.store1_file : paths.store3_file;
  require_artifact(store_file, strategy == Strategy::no_finetune ? "pretrain" : "finetune");
  const AdapterStore store = load_store(store_file);

  GateNetwork gate;
  const GateNetwork* gate_ptr = nullptr;
  std::map<int, Tensor> doc_embeds;
  if (fs::exists(paths.gate_file)) {
    gate = load_gate(paths.gate_file);
    gate_ptr = &gate;
    doc_embeds = load_doc_embeddings(paths, run.toolset);
  } else if (wants_gate) {
    throw DependencyError("strategy needs a trained gate; run `train-gate` first");
  }

  const int threads = resolve_threads(config);
  const EvalReport report = evaluate(model, store, gate_ptr, doc_embeds, run.test, run.toolset,
                                     run.vocab, strategy, config.stages.top_n, threads);
  write_eval_report_jsonl(report,
                          paths.reports_dir + "/eval_" + strategy_name(strategy) + ".jsonl");
  return report;
}

RobustnessReport step_theory(const ExperimentConfig& config, uint64_t seed) {
  const RunPaths paths = RunPaths::make(config, seed);
  const LoadedRun run = load_dataset(paths);
  require_artifact(paths.model_file, "pretrain");
  require_artifact(paths.store3_file, "finetune");
  require_artifact(paths.gate_file, "train-gate");
  const TransformerModel model = load_model(paths.model_file);
  const AdapterStore store = load_store(paths.store3_file);
  const GateNetwork gate = load_gate(paths.gate_file);
  const std::map<int, Tensor> doc_embeds = load_doc_embeddings(paths, run.toolset);

  TheoryConfig tc = config.theory;
  tc.seed = seed;
  const RobustnessReport report =
      soft_vs_hard_report(model, store, gate, doc_embeds, run.test, run.toolset, run.vocab, tc,
                          resolve_threads(config));
  save_robustness_report(report, paths.reports_dir + "/theory.jsonl",
                         paths.reports_dir + "/theory_summary.txt");
  return report;
}

FlopsReport step_flops(const ExperimentConfig& config, uint64_t seed) {
  const RunPaths paths = RunPaths::make(config, seed);
  require_artifact(paths.profiles_file, "synth");
  const auto profiles = load_profiles_json(paths.profiles_file);
  const FlopsReport report = flops_table(profiles);
  save_flops_report(report, paths.reports_dir + "/flops.jsonl",
                    paths.reports_dir + "/flops.txt");
  return report;
}

void write_eval_report_jsonl(const EvalReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  ordered_json head;
  head["kind"] = "aggregate";
  head["strategy"] = report.strategy;
  head["pass_rate"] = report.pass_rate;
  head["gating_accuracy"] = report.gating_accuracy;
  head["action_accuracy"] = report.action_accuracy;
  head["pass_single"] = report.pass_single;
  head["pass_multi"] = report.pass_multi;
  head["gating_multi"] = report.gating_multi;
  head["action_multi"] = report.action_multi;
  head["n_single"] = report.n_single;
  head["n_multi"] = report.n_multi;
  head["n"] = report.records.size();
  os << head.dump() << "\n";
  for (const auto& rec : report.records) {
    ordered_json j;
    j["kind"] = "record";
    j["index"] = rec.index;
    j["candidates"] = rec.candidates;
    j["alpha"] = rec.alpha;
    j["decoded"] = rec.decoded;
    j["parsed"] = rec.parsed;
    j["passed"] = rec.passed;
    j["action_hit"] = rec.action_hit;
    j["gate_hit"] = rec.gate_hit;
    j["calls"] = rec.episode_calls;
    j["single_candidate"] = rec.single_candidate;
    os << j.dump() << "\n";
  }
}

EvalReport read_eval_report_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  EvalReport report;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const ordered_json j = ordered_json::parse(line);
    if (j.at("kind") == "aggregate") {
      report.strategy = j.at("strategy").get<std::string>();
      report.pass_rate = j.at("pass_rate").get<double>();
      report.gating_accuracy = j.at("gating_accuracy").get<double>();
      report.action_accuracy = j.at("action_accuracy").get<double>();
      report.pass_single = j.at("pass_single").get<double>();
      report.pass_multi = j.at("pass_multi").get<double>();
      report.gating_multi = j.at("gating_multi").get<double>();
      report.action_multi = j.at("action_multi").get<double>();
      report.n_single = j.at("n_single").get<int>();
      report.n_multi = j.at("n_multi").get<int>();
    } else {
      EvalRecord rec;
      rec.index = j.at("index").get<int>();
      rec.candidates = j.at("candidates").get<std::vector<int>>();
      rec.alpha = j.at("alpha").get<std::vector<double>>();
      rec.decoded = j.at("decoded").get<std::string>();
      rec.parsed = j.at("parsed").get<bool>();
      rec.passed = j.at("passed").get<bool>();
      rec.action_hit = j.at("action_hit").get<bool>();
      rec.gate_hit = j.at("gate_hit").get<bool>();
      rec.episode_calls = j.at("calls").get<int>();
      rec.single_candidate = j.at("single_candidate").get<bool>();
      report.records.push_back(std::move(rec));
    }
  }
  return report;
}

std::string render_summary(const ExperimentConfig& config) {
  std::ostringstream table;
  table << std::left << std::setw(8) << "seed" << std::setw(13) << "strategy" << std::right
        << std::setw(10) << "pass" << std::setw(10) << "gating" << std::setw(10) << "action"
        << std::setw(12) << "pass_sgl" << std::setw(12) << "pass_multi" << std::setw(14)
        << "action_multi"
        << "\n";
  table << std::fixed << std::setprecision(4);
  for (const uint64_t seed : config.seeds) {
    const RunPaths paths = RunPaths::make(config, seed);
    for (const Strategy s : all_strategies()) {
      const std::string file = paths.reports_dir + "/eval_" + strategy_name(s) + ".jsonl";
      if (!fs::exists(file)) continue;
      const EvalReport r = read_eval_report_jsonl(file);
      table << std::left << std::setw(8) << seed << std::setw(13) << r.strategy << std::right
            << std::setw(10) << r.pass_rate << std::setw(10) << r.gating_accuracy << std::setw(10)
            << r.action_accuracy << std::setw(12) << r.pass_single << std::setw(12)
            << r.pass_multi << std::setw(14) << r.action_multi << "\n";
    }
  }
  return table.str();
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.run_dir = config.runs_root + "/" + config.name;

  for (const uint64_t seed : config.seeds) {
    const RunPaths paths = RunPaths::make(config, seed);
    step_synth(config, seed);
    step_pretrain(config, seed);
    step_train_gate(config, seed);
    step_finetune(config, seed);

    SeedSummary summary;
    summary.seed = seed;
    for (const Strategy s : all_strategies()) {
      summary.eval.emplace(strategy_name(s), step_eval(config, seed, s));
    }
    (void)step_theory(config, seed);
    (void)step_flops(config, seed);

    summary.stage1_single_pass =
        read_stage_metric(paths.stage_metrics_file, "stage1_single_pass", 0.0);
    summary.val_pass_before_stage3 =
        read_stage_metric(paths.stage_metrics_file, "val_pass_before_stage3", 0.0);
    summary.val_pass_after_stage3 =
        read_stage_metric(paths.stage_metrics_file, "val_pass_after_stage3", 0.0);
    summary.decontamination_removed = static_cast<int>(
        read_stage_metric(paths.stage_metrics_file, "decontamination_removed", 0.0));
    result.seeds.push_back(std::move(summary));
  }

  // flat summary files at the run root
  {
    std::ofstream os(result.run_dir + "/summary.jsonl", std::ios::trunc);
    for (const auto& seed_summary : result.seeds) {
      for (const auto& [name, rep] : seed_summary.eval) {
        ordered_json j;
        j["seed"] = seed_summary.seed;
        j["strategy"] = name;
        j["pass_rate"] = rep.pass_rate;
        j["gating_accuracy"] = rep.gating_accuracy;
        j["action_accuracy"] = rep.action_accuracy;
        j["pass_single"] = rep.pass_single;
        j["pass_multi"] = rep.pass_multi;
        j["gating_multi"] = rep.gating_multi;
        j["action_multi"] = rep.action_multi;
        os << j.dump() << "\n";
      }
      ordered_json j;
      j["seed"] = seed_summary.seed;
      j["stage1_single_pass"] = seed_summary.stage1_single_pass;
      j["val_pass_before_stage3"] = seed_summary.val_pass_before_stage3;
      j["val_pass_after_stage3"] = seed_summary.val_pass_after_stage3;
      j["decontamination_removed"] = seed_summary.decontamination_removed;
      os << j.dump() << "\n";
    }
  }
  {
    std::ofstream os(result.run_dir + "/summary.txt", std::ios::trunc);
    os << render_summary(config);
  }

  const auto t1 = std::chrono::steady_clock::now();
  result.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  {
    // timing lives outside reports/ so reruns stay byte-comparable there
    std::ofstream os(result.run_dir + "/timing.json", std::ios::trunc);
    ordered_json j;
    j["wall_seconds"] = result.wall_seconds;
    os << j.dump(2) << "\n";
  }
  return result;
}

}  // namespace paratool
