#include "paratool/flops.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace paratool {

using ordered_json = nlohmann::ordered_json;

std::pair<double, double> flops_transformer(double s, const FlopsDims& dims) {
  if (s < 1.0) throw std::invalid_argument("flops_transformer: sequence length must be >= 1");
  const double h = dims.hidden;
  const double l = dims.layers;
  const double dff = dims.ffn;
  const double v = dims.vocab;
  const double linear = 2.0 * s * l * (4.0 * h * h + 2.0 * h * dff) + 2.0 * s * h * v;
  const double attention = 4.0 * l * s * s * h;
  return {linear, attention};
}

double flops_scalar_ops(double s, const FlopsDims& dims) {
  const double h = dims.hidden;
  const double l = dims.layers;
  // causal softmax (exp + div per visible score), layer norms, ReLU
  const double softmax_ops = l * dims.heads * s * (s + 1.0);
  const double norm_ops = (2.0 * l + 1.0) * 4.0 * s * h;
  const double relu_ops = l * s * static_cast<double>(dims.ffn);
  return softmax_ops + norm_ops + relu_ops;
}

FlopsBreakdown flops_context(const WorkloadProfile& profile) {
  FlopsBreakdown b;
  b.name = profile.name;
  b.seq_len = profile.s_ctx();
  const auto [linear, attention] = flops_transformer(b.seq_len, profile.dims);
  b.linear = linear;
  b.attention = attention;
  b.scalar_ops = flops_scalar_ops(b.seq_len, profile.dims);
  b.total = b.linear + b.attention;
  b.overhead_fraction = 0.0;
  b.adapter_gate_fraction = 0.0;
  return b;
}

FlopsBreakdown flops_parameter(const WorkloadProfile& profile) {
  FlopsBreakdown b;
  b.name = profile.name;
  b.seq_len = profile.s_par();
  const auto [linear, attention] = flops_transformer(b.seq_len, profile.dims);
  b.linear = linear;
  b.attention = attention;
  b.scalar_ops = flops_scalar_ops(b.seq_len, profile.dims);

  // factored low-rank branches: per adapter, layer and site, r (in + out)
  // multiply-adds per token with in + out = h + d_ff at both FFN sites
  const double site_cost =
      static_cast<double>(profile.rank) * (profile.dims.hidden + profile.dims.ffn);
  b.adapter = 2.0 * b.seq_len * profile.adapters * profile.dims.layers *
              profile.sites_per_layer * site_cost;

  if (profile.encoder_full_forward && profile.candidates > 0) {
    const auto [el, ea] = flops_transformer(b.seq_len, profile.dims);
    b.encoder = el + ea;
  }
  if (profile.candidates > 0) {
    const double in = 4.0 * profile.dims.hidden;
    const double gh = profile.gate_hidden;
    double per_candidate = 2.0 * (in * gh + gh);
    if (profile.gate_depth > 2) per_candidate += 2.0 * (profile.gate_depth - 2) * gh * gh;
    b.gate_mlp = profile.candidates * per_candidate;
  }

  b.total = b.linear + b.attention + b.adapter + b.encoder + b.gate_mlp;
  b.overhead_fraction = (b.adapter + b.encoder + b.gate_mlp) / b.total;
  b.adapter_gate_fraction = (b.adapter + b.gate_mlp) / b.total;
  return b;
}

FlopsReport flops_table(std::vector<WorkloadProfile> profiles) {
  if (profiles.empty()) throw std::invalid_argument("flops_table: no profiles");
  std::sort(profiles.begin(), profiles.end(),
            [](const WorkloadProfile& a, const WorkloadProfile& b) { return a.name < b.name; });
  FlopsReport report;
  for (const auto& p : profiles) {
    FlopsRow row;
    row.name = p.name;
    row.context = flops_context(p);
    row.parameter = flops_parameter(p);
    row.ratio = row.context.total / row.parameter.total;
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

ordered_json breakdown_to_json(const FlopsBreakdown& b) {
  ordered_json j;
  j["seq_len"] = b.seq_len;
  j["linear"] = b.linear;
  j["attention"] = b.attention;
  j["adapter"] = b.adapter;
  j["encoder"] = b.encoder;
  j["gate_mlp"] = b.gate_mlp;
  j["scalar_ops"] = b.scalar_ops;
  j["total"] = b.total;
  j["overhead_fraction"] = b.overhead_fraction;
  j["adapter_gate_fraction"] = b.adapter_gate_fraction;
  return j;
}

}  // namespace

std::vector<WorkloadProfile> load_profiles_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  ordered_json j;
  is >> j;
  std::vector<WorkloadProfile> out;
  for (const auto& pj : j.at("profiles")) {
    WorkloadProfile p;
    p.name = pj.at("name").get<std::string>();
    p.query_tokens = pj.at("query_tokens").get<double>();
    p.history_tokens = pj.at("history_tokens").get<double>();
    p.doc_tokens = pj.at("doc_tokens").get<double>();
    p.example_tokens = pj.at("example_tokens").get<double>();
    p.dims.hidden = pj.at("hidden").get<int>();
    p.dims.layers = pj.at("layers").get<int>();
    p.dims.heads = pj.at("heads").get<int>();
    p.dims.ffn = pj.at("ffn").get<int>();
    p.dims.vocab = pj.at("vocab").get<int>();
    p.adapters = pj.at("adapters").get<int>();
    p.rank = pj.at("rank").get<int>();
    if (pj.contains("sites_per_layer")) p.sites_per_layer = pj.at("sites_per_layer").get<int>();
    if (pj.contains("encoder_full_forward")) {
      p.encoder_full_forward = pj.at("encoder_full_forward").get<bool>();
    }
    if (pj.contains("gate_hidden")) p.gate_hidden = pj.at("gate_hidden").get<int>();
    if (pj.contains("gate_depth")) p.gate_depth = pj.at("gate_depth").get<int>();
    if (pj.contains("candidates")) p.candidates = pj.at("candidates").get<int>();
    out.push_back(std::move(p));
  }
  return out;
}

void save_profiles_json(const std::vector<WorkloadProfile>& profiles, const std::string& path) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : profiles) {
    ordered_json pj;
    pj["name"] = p.name;
    pj["query_tokens"] = p.query_tokens;
    pj["history_tokens"] = p.history_tokens;
    pj["doc_tokens"] = p.doc_tokens;
    pj["example_tokens"] = p.example_tokens;
    pj["hidden"] = p.dims.hidden;
    pj["layers"] = p.dims.layers;
    pj["heads"] = p.dims.heads;
    pj["ffn"] = p.dims.ffn;
    pj["vocab"] = p.dims.vocab;
    pj["adapters"] = p.adapters;
    pj["rank"] = p.rank;
    pj["sites_per_layer"] = p.sites_per_layer;
    pj["encoder_full_forward"] = p.encoder_full_forward;
    pj["gate_hidden"] = p.gate_hidden;
    pj["gate_depth"] = p.gate_depth;
    pj["candidates"] = p.candidates;
    arr.push_back(std::move(pj));
  }
  ordered_json j;
  j["profiles"] = arr;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

void save_flops_report(const FlopsReport& report, const std::string& jsonl_path,
                       const std::string& table_path) {
  {
    std::ofstream os(jsonl_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + jsonl_path);
    for (const auto& row : report.rows) {
      ordered_json j;
      j["name"] = row.name;
      j["context"] = breakdown_to_json(row.context);
      j["parameter"] = breakdown_to_json(row.parameter);
      j["ratio"] = row.ratio;
      os << j.dump() << "\n";
    }
  }
  {
    std::ofstream os(table_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + table_path);
    os << std::left << std::setw(22) << "profile" << std::right << std::setw(16) << "context"
       << std::setw(16) << "parameter" << std::setw(12) << "ratio" << std::setw(12) << "overhead"
       << std::setw(14) << "adapter+gate"
       << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& row : report.rows) {
      os << std::left << std::setw(22) << row.name << std::right << std::setw(16)
         << std::setprecision(0) << row.context.total << std::setw(16) << row.parameter.total
         << std::setprecision(4) << std::setw(12) << row.ratio << std::setw(12)
         << row.parameter.overhead_fraction << std::setw(14)
         << row.parameter.adapter_gate_fraction << "\n";
    }
  }
}

}  // namespace paratool
