#pragma once

#include <map>
#include <string>
#include <vector>

#include "paratool/flops.hpp"
#include "paratool/pipeline.hpp"
#include "paratool/theory.hpp"

namespace paratool {

struct ExperimentConfig {
  std::string name = "default";
  std::vector<uint64_t> seeds = {1, 2, 3};
  ModelConfig model;
  AdapterConfig adapter;
  GateConfig gate;
  StageConfig stages;
  SynthConfig synth;
  SynthConfig backbone_synth;
  int backbone_tool_count = 8;
  TheoryConfig theory;
  std::string runs_root = "runs";
  int threads = 0;

  ExperimentConfig();  // desk-scale defaults
};

struct RunPaths {
  std::string root;      // runs_root/name
  std::string seed_dir;  // root/seed<k>
  std::string dataset_dir, reports_dir;
  std::string train_file, validation_file, test_file, toolset_file;
  std::string backbone_train_file, backbone_validation_file, backbone_toolset_file;
  std::string profiles_file;
  std::string model_file, store1_file, store3_file, gate_file, embeds_file;
  std::string stage_metrics_file, curves_file;

  static RunPaths make(const ExperimentConfig& config, uint64_t seed);
};

// Individual pipeline steps; each reads only its declared inputs and writes
// only its declared outputs. Missing inputs raise DependencyError naming the
// producing verb.
void step_synth(const ExperimentConfig& config, uint64_t seed);
void step_pretrain(const ExperimentConfig& config, uint64_t seed);
void step_train_gate(const ExperimentConfig& config, uint64_t seed);
void step_finetune(const ExperimentConfig& config, uint64_t seed);
EvalReport step_eval(const ExperimentConfig& config, uint64_t seed, Strategy strategy);
RobustnessReport step_theory(const ExperimentConfig& config, uint64_t seed);
FlopsReport step_flops(const ExperimentConfig& config, uint64_t seed);

struct SeedSummary {
  uint64_t seed = 0;
  std::map<std::string, EvalReport> eval;  // by strategy name
  double stage1_single_pass = 0.0;
  double val_pass_before_stage3 = 0.0;
  double val_pass_after_stage3 = 0.0;
  int decontamination_removed = 0;
};

struct ExperimentResult {
  std::string run_dir;
  std::vector<SeedSummary> seeds;
  double wall_seconds = 0.0;
};

// Full chain over every seed; writes all artifacts plus summary.jsonl and
// summary.txt under runs_root/name.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Renders the flat summary table from the per-seed reports on disk.
std::string render_summary(const ExperimentConfig& config);

void write_eval_report_jsonl(const EvalReport& report, const std::string& path);
EvalReport read_eval_report_jsonl(const std::string& path);

}  // namespace paratool
