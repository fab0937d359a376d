#include "paratool/gating.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "paratool/optim.hpp"

namespace paratool {

namespace {

Tensor normal_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

uint64_t hash_bytes(uint64_t h, const void* p, size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= c[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

Tensor feature_row(const Tensor& c, const Tensor& d) {
  if (c.size() != d.size()) throw std::invalid_argument("gate feature: dim mismatch");
  const int h = static_cast<int>(c.size());
  Tensor f({1, 4 * h});
  for (int i = 0; i < h; ++i) {
    f.at(0, i) = c[static_cast<size_t>(i)];
    f.at(0, h + i) = d[static_cast<size_t>(i)];
    f.at(0, 2 * h + i) = c[static_cast<size_t>(i)] * d[static_cast<size_t>(i)];
    f.at(0, 3 * h + i) = std::fabs(c[static_cast<size_t>(i)] - d[static_cast<size_t>(i)]);
  }
  return f;
}

}  // namespace

GateNetwork GateNetwork::init(const GateConfig& config, int encoder_dim, Rng& rng) {
  if (config.depth < 1) throw std::invalid_argument("gate depth must be >= 1");
  if (config.entropy_lambda < 0.0) throw std::invalid_argument("entropy weight must be >= 0");
  GateNetwork g;
  g.config = config;
  g.encoder_dim = encoder_dim;
  int in = 4 * encoder_dim;
  for (int l = 0; l < config.depth; ++l) {
    const int out = (l == config.depth - 1) ? 1 : config.hidden;
    // He-style fan-in scaling; a flat small init starves the scores through
    // several ReLU layers
    const double stddev = std::sqrt(2.0 / in);
    g.weights.push_back(normal_tensor({out, in}, stddev, rng));
    g.biases.push_back(Tensor::zeros({1, out}));
    in = out;
  }
  return g;
}

std::vector<Tensor*> GateNetwork::parameters() {
  std::vector<Tensor*> ps;
  for (size_t i = 0; i < weights.size(); ++i) {
    ps.push_back(&weights[i]);
    ps.push_back(&biases[i]);
  }
  return ps;
}

uint64_t GateNetwork::parameter_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : weights) h = hash_bytes(h, t.data(), t.size() * sizeof(double));
  for (const auto& t : biases) h = hash_bytes(h, t.data(), t.size() * sizeof(double));
  return h;
}

Tensor encode_context(const TransformerModel& model, const std::vector<int>& prompt_tokens) {
  if (prompt_tokens.empty()) throw std::invalid_argument("encode_context: empty prompt");
  Tape tape;
  BoundModel bound = bind_model(tape, model, false);
  Var hidden;
  (void)model_forward(tape, bound, model.config, prompt_tokens, nullptr, &hidden);
  const Tensor& hv = tape.value(hidden);
  Tensor c({model.config.hidden});
  const int last = hv.rows() - 1;
  for (int j = 0; j < hv.cols(); ++j) c[static_cast<size_t>(j)] = hv.at(last, j);
  return c;
}

Tensor encode_tool_doc(const TransformerModel& model, const std::vector<int>& doc_tokens) {
  return encode_context(model, doc_tokens);
}

namespace {

double mlp_score(const GateNetwork& g, const Tensor& f) {
  Tensor x = f;  // 1 x in
  for (size_t l = 0; l < g.weights.size(); ++l) {
    const Tensor& w = g.weights[l];
    const Tensor& b = g.biases[l];
    Tensor y({1, w.rows()});
    matmul_into(x, w, y, false, true, false);
    for (int j = 0; j < y.cols(); ++j) y.at(0, j) += b.at(0, j);
    if (l + 1 < g.weights.size()) {
      for (size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    }
    x = std::move(y);
  }
  return x.at(0, 0);
}

}  // namespace

double gate_score(const GateNetwork& gate, const Tensor& context, const Tensor& doc) {
  return mlp_score(gate, feature_row(context, doc));
}

CompositionWeights gate_scores(const GateNetwork& gate, const Tensor& context,
                               const std::vector<int>& tool_ids,
                               const std::vector<const Tensor*>& docs) {
  if (tool_ids.empty()) throw std::invalid_argument("gate_scores: empty candidate list");
  if (tool_ids.size() != docs.size()) throw std::invalid_argument("gate_scores: ids/docs mismatch");
  std::vector<double> scores(tool_ids.size());
  for (size_t i = 0; i < tool_ids.size(); ++i) {
    scores[i] = gate_score(gate, context, *docs[i]);
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double denom = 0.0;
  for (double& s : scores) {
    s = std::exp(s - mx);
    denom += s;
  }
  CompositionWeights w;
  w.tool_ids = tool_ids;
  w.weights.resize(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) w.weights[i] = scores[i] / denom;
  return w;
}

double gate_loss_value(const CompositionWeights& weights, int target_index, double lambda) {
  if (target_index < 0 || target_index >= weights.size()) {
    throw std::invalid_argument("gate_loss: target outside the candidate list");
  }
  return -std::log(weights.weights[static_cast<size_t>(target_index)]) -
         lambda * weights.entropy();
}

namespace {

struct BoundGate {
  std::vector<Var> weights, biases;
};

BoundGate bind_gate(Tape& tape, const GateNetwork& g) {
  BoundGate b;
  for (size_t i = 0; i < g.weights.size(); ++i) {
    b.weights.push_back(tape.input(g.weights[i]));
    b.biases.push_back(tape.input(g.biases[i]));
  }
  return b;
}

Var gate_forward_row(Tape& tape, const BoundGate& bg, const Tensor& features) {
  // features: N x 4h constant; returns N x 1 scores
  Var x = tape.constant(features);
  for (size_t l = 0; l < bg.weights.size(); ++l) {
    x = add_rowwise(matmul_nt(x, bg.weights[l]), bg.biases[l]);
    if (l + 1 < bg.weights.size()) x = relu(x);
  }
  return x;
}

}  // namespace

GateNetwork train_gate(const GateConfig& config, int encoder_dim,
                       const std::vector<GateSample>& train, const std::vector<GateSample>& val,
                       const std::map<int, Tensor>& doc_embeddings, GateTrainLog* log) {
  Rng rng(config.seed);
  Rng init_rng = rng.split("gate-init");
  GateNetwork gate = GateNetwork::init(config, encoder_dim, init_rng);

  for (const auto& s : train) {
    if (std::count(s.candidates.begin(), s.candidates.end(), s.target_tool) != 1) {
      throw std::invalid_argument("train_gate: ground-truth tool outside the candidate set");
    }
  }

  // candidate features are fixed; precompute per sample
  const auto features_of = [&](const GateSample& s) {
    Tensor f({static_cast<int>(s.candidates.size()), 4 * encoder_dim});
    for (size_t i = 0; i < s.candidates.size(); ++i) {
      const Tensor row = feature_row(s.context, doc_embeddings.at(s.candidates[i]));
      for (int j = 0; j < f.cols(); ++j) f.at(static_cast<int>(i), j) = row.at(0, j);
    }
    return f;
  };
  std::vector<Tensor> train_features;
  train_features.reserve(train.size());
  for (const auto& s : train) train_features.push_back(features_of(s));

  AdamWConfig oc;
  oc.lr = config.lr;
  oc.weight_decay = config.weight_decay;
  AdamW opt(gate.parameters(), oc);

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = rng.split("gate-shuffle");

  const auto evaluate = [&](const std::vector<GateSample>& samples, double& acc, double& ent) {
    int hit = 0;
    double hsum = 0.0;
    for (const auto& s : samples) {
      std::vector<const Tensor*> docs;
      for (const int id : s.candidates) docs.push_back(&doc_embeddings.at(id));
      const CompositionWeights w = gate_scores(gate, s.context, s.candidates, docs);
      if (w.argmax_tool() == s.target_tool) ++hit;
      hsum += w.entropy();
    }
    acc = samples.empty() ? 0.0 : static_cast<double>(hit) / samples.size();
    ent = samples.empty() ? 0.0 : hsum / samples.size();
  };

  const long total_steps = static_cast<long>(config.epochs) * static_cast<long>(train.size());
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (const size_t idx : order) {
      // linear decay to a tenth of the initial rate
      const double frac = total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 0.0;
      opt.set_lr(config.lr * (1.0 - 0.9 * frac));
      ++step;
      const GateSample& s = train[idx];
      int target_index = 0;
      for (size_t i = 0; i < s.candidates.size(); ++i) {
        if (s.candidates[i] == s.target_tool) target_index = static_cast<int>(i);
      }
      Tape tape;
      BoundGate bg = bind_gate(tape, gate);
      Var scores_col = gate_forward_row(tape, bg, train_features[idx]);  // N x 1
      Var logits = transpose(scores_col);                                      // 1 x N
      Var la = log_softmax(logits);
      Var alpha = softmax(logits);
      Var ce = nll_rows(la, {0}, {target_index});
      Var entropy = neg(dot(alpha, la));
      Var loss = sub(ce, scale(entropy, config.entropy_lambda));
      loss_sum += tape.value(loss).item();
      tape.backward(loss);

      auto params = gate.parameters();
      for (size_t p = 0; p < params.size(); ++p) {
        const Var v = (p % 2 == 0) ? bg.weights[p / 2] : bg.biases[p / 2];
        opt.step_param(p, tape.grad(v));
      }
    }
    if (log != nullptr) {
      log->train_loss.push_back(train.empty() ? 0.0 : loss_sum / train.size());
      double acc = 0.0, ent = 0.0;
      evaluate(val, acc, ent);
      log->val_accuracy.push_back(acc);
      log->val_entropy.push_back(ent);
    }
  }
  return gate;
}

CompositionWeights top_n(const CompositionWeights& weights, int n) {
  if (n < 1) throw std::invalid_argument("top_n: n must be >= 1");
  if (n >= weights.size()) return weights;
  std::vector<size_t> idx(weights.weights.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (weights.weights[a] != weights.weights[b]) return weights.weights[a] > weights.weights[b];
    return weights.tool_ids[a] < weights.tool_ids[b];
  });
  idx.resize(static_cast<size_t>(n));
  std::sort(idx.begin(), idx.end());  // keep the original candidate order
  CompositionWeights out;
  double kept = 0.0;
  for (const size_t i : idx) kept += weights.weights[i];
  for (const size_t i : idx) {
    out.tool_ids.push_back(weights.tool_ids[i]);
    out.weights.push_back(weights.weights[i] / kept);
  }
  return out;
}

// ---- persistence ------------------------------------------------------------

namespace {

constexpr char kGateMagic[4] = {'P', 'T', 'G', 'T'};
constexpr uint32_t kGateVersion = 1;
constexpr char kCacheMagic[4] = {'P', 'T', 'E', 'C'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("gate file: truncated");
  return v;
}

}  // namespace

void save_gate(const GateNetwork& gate, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("gate: cannot open for writing: " + path);
  os.write(kGateMagic, 4);
  write_pod(os, kGateVersion);
  write_pod(os, static_cast<int32_t>(gate.config.hidden));
  write_pod(os, static_cast<int32_t>(gate.config.depth));
  write_pod(os, gate.config.entropy_lambda);
  write_pod(os, gate.config.lr);
  write_pod(os, static_cast<int32_t>(gate.config.epochs));
  write_pod(os, gate.config.weight_decay);
  write_pod(os, gate.config.seed);
  write_pod(os, static_cast<int32_t>(gate.encoder_dim));
  for (size_t i = 0; i < gate.weights.size(); ++i) {
    os.write(reinterpret_cast<const char*>(gate.weights[i].data()),
             static_cast<std::streamsize>(gate.weights[i].size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(gate.biases[i].data()),
             static_cast<std::streamsize>(gate.biases[i].size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("gate: write failed: " + path);
}

GateNetwork load_gate(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("gate: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kGateMagic, 4) != 0) {
    throw std::runtime_error("gate: bad magic");
  }
  if (read_pod<uint32_t>(is) != kGateVersion) throw std::runtime_error("gate: bad version");
  GateConfig c;
  c.hidden = read_pod<int32_t>(is);
  c.depth = read_pod<int32_t>(is);
  c.entropy_lambda = read_pod<double>(is);
  c.lr = read_pod<double>(is);
  c.epochs = read_pod<int32_t>(is);
  c.weight_decay = read_pod<double>(is);
  c.seed = read_pod<uint64_t>(is);
  const int encoder_dim = read_pod<int32_t>(is);
  Rng dummy(0);
  GateNetwork g = GateNetwork::init(c, encoder_dim, dummy);
  for (size_t i = 0; i < g.weights.size(); ++i) {
    is.read(reinterpret_cast<char*>(g.weights[i].data()),
            static_cast<std::streamsize>(g.weights[i].size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(g.biases[i].data()),
            static_cast<std::streamsize>(g.biases[i].size() * sizeof(double)));
    if (!is) throw std::runtime_error("gate: truncated parameter block");
  }
  return g;
}

uint64_t doc_content_hash(const std::string& doc_text) {
  return hash_bytes(0xcbf29ce484222325ull, doc_text.data(), doc_text.size());
}

void save_embedding_cache(const std::map<int, std::pair<uint64_t, Tensor>>& cache,
                          const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("embedding cache: cannot open for writing: " + path);
  os.write(kCacheMagic, 4);
  write_pod(os, static_cast<uint32_t>(cache.size()));
  for (const auto& [id, entry] : cache) {
    write_pod(os, static_cast<int32_t>(id));
    write_pod(os, entry.first);
    write_pod(os, static_cast<uint32_t>(entry.second.size()));
    os.write(reinterpret_cast<const char*>(entry.second.data()),
             static_cast<std::streamsize>(entry.second.size() * sizeof(double)));
  }
}

std::map<int, std::pair<uint64_t, Tensor>> load_embedding_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("embedding cache: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw std::runtime_error("embedding cache: bad magic");
  }
  const auto count = read_pod<uint32_t>(is);
  std::map<int, std::pair<uint64_t, Tensor>> cache;
  for (uint32_t i = 0; i < count; ++i) {
    const int id = read_pod<int32_t>(is);
    const uint64_t hash = read_pod<uint64_t>(is);
    const auto dim = read_pod<uint32_t>(is);
    Tensor t({static_cast<int>(dim)});
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("embedding cache: truncated");
    cache.emplace(id, std::make_pair(hash, std::move(t)));
  }
  return cache;
}

}  // namespace paratool
