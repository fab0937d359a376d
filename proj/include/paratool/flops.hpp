#pragma once

#include <string>
#include <vector>

namespace paratool {

struct FlopsDims {
  int hidden = 64;
  int layers = 2;
  int heads = 2;
  int ffn = 128;
  int vocab = 128;
};

// One workload: token-count statistics plus the model/adapter/gate shape.
// Token counts may be per-instance means, hence doubles.
struct WorkloadProfile {
  std::string name;
  double query_tokens = 0.0;    // |q|
  double history_tokens = 0.0;  // |H|
  double doc_tokens = 0.0;      // sum over candidate documents
  double example_tokens = 0.0;  // sum over candidate usage examples
  FlopsDims dims;
  int adapters = 0;  // N
  int rank = 0;      // r
  int sites_per_layer = 2;
  bool encoder_full_forward = true;  // encoder modeled as one backbone pass at S_par
  int gate_hidden = 128;
  int gate_depth = 3;
  int candidates = 0;  // gate MLP evaluations

  double s_ctx() const { return query_tokens + history_tokens + doc_tokens + example_tokens; }
  double s_par() const { return query_tokens + history_tokens; }
};

// Matmul FLOPs only (2 per multiply-add):
//   linear    = 2 S L (4 h^2 + 2 h d_ff) + 2 S h V
//   attention = 4 L S^2 h
std::pair<double, double> flops_transformer(double s, const FlopsDims& dims);

// Diagnostic scalar-op count (softmax, layer norm, ReLU); kept out of totals.
double flops_scalar_ops(double s, const FlopsDims& dims);

struct FlopsBreakdown {
  std::string name;
  double seq_len = 0.0;
  double linear = 0.0;
  double attention = 0.0;
  double adapter = 0.0;
  double encoder = 0.0;
  double gate_mlp = 0.0;
  double scalar_ops = 0.0;  // diagnostic, excluded from total
  double total = 0.0;
  double overhead_fraction = 0.0;      // (adapter + encoder + gate_mlp) / total
  double adapter_gate_fraction = 0.0;  // (adapter + gate_mlp) / total
};

FlopsBreakdown flops_context(const WorkloadProfile& profile);
FlopsBreakdown flops_parameter(const WorkloadProfile& profile);

struct FlopsRow {
  std::string name;
  FlopsBreakdown context;
  FlopsBreakdown parameter;
  double ratio = 0.0;  // context total / parameter total
};

struct FlopsReport {
  std::vector<FlopsRow> rows;  // sorted by profile name
};

FlopsReport flops_table(std::vector<WorkloadProfile> profiles);

std::vector<WorkloadProfile> load_profiles_json(const std::string& path);
void save_profiles_json(const std::vector<WorkloadProfile>& profiles, const std::string& path);
void save_flops_report(const FlopsReport& report, const std::string& jsonl_path,
                       const std::string& table_path);

}  // namespace paratool
