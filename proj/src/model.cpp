#include "paratool/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace paratool {

void ModelConfig::validate() const {
  if (vocab < 2 || hidden < 1 || layers < 1 || heads < 1 || ffn < 1 || max_seq < 2) {
    throw std::invalid_argument("model config: nonpositive dimension");
  }
  if (hidden % heads != 0) throw std::invalid_argument("model config: hidden % heads != 0");
}

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

}  // namespace

TransformerModel TransformerModel::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  TransformerModel m;
  m.config = config;
  m.tok_embed = normal_tensor({config.vocab, config.hidden}, config.init_std, rng);
  m.pos_embed = normal_tensor({config.max_seq, config.hidden}, config.init_std, rng);
  m.layers.resize(static_cast<size_t>(config.layers));
  for (auto& l : m.layers) {
    l.wq = normal_tensor({config.hidden, config.hidden}, config.init_std, rng);
    l.wk = normal_tensor({config.hidden, config.hidden}, config.init_std, rng);
    l.wv = normal_tensor({config.hidden, config.hidden}, config.init_std, rng);
    l.wo = normal_tensor({config.hidden, config.hidden}, config.init_std, rng);
    l.w_up = normal_tensor({config.ffn, config.hidden}, config.init_std, rng);
    l.w_down = normal_tensor({config.hidden, config.ffn}, config.init_std, rng);
  }
  m.w_head = normal_tensor({config.vocab, config.hidden}, config.init_std, rng);
  return m;
}

std::vector<Tensor*> TransformerModel::parameters() {
  std::vector<Tensor*> ps{&tok_embed, &pos_embed};
  for (auto& l : layers) {
    ps.push_back(&l.wq);
    ps.push_back(&l.wk);
    ps.push_back(&l.wv);
    ps.push_back(&l.wo);
    ps.push_back(&l.w_up);
    ps.push_back(&l.w_down);
  }
  ps.push_back(&w_head);
  return ps;
}

std::vector<const Tensor*> TransformerModel::parameters() const {
  auto ps = const_cast<TransformerModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

size_t TransformerModel::parameter_count() const {
  size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

uint64_t TransformerModel::parameter_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor* t : parameters()) h = hash_bytes(h, t->data(), t->size() * sizeof(double));
  return h;
}

std::vector<Var> BoundModel::all() const {
  std::vector<Var> vs{tok_embed, pos_embed};
  for (const auto& l : layers) {
    vs.push_back(l.wq);
    vs.push_back(l.wk);
    vs.push_back(l.wv);
    vs.push_back(l.wo);
    vs.push_back(l.w_up);
    vs.push_back(l.w_down);
  }
  vs.push_back(w_head);
  return vs;
}

BoundModel bind_model(Tape& tape, const TransformerModel& model, bool trainable) {
  BoundModel b;
  b.tok_embed = tape.input(model.tok_embed, trainable);
  b.pos_embed = tape.input(model.pos_embed, trainable);
  b.layers.resize(model.layers.size());
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    b.layers[i].wq = tape.input(l.wq, trainable);
    b.layers[i].wk = tape.input(l.wk, trainable);
    b.layers[i].wv = tape.input(l.wv, trainable);
    b.layers[i].wo = tape.input(l.wo, trainable);
    b.layers[i].w_up = tape.input(l.w_up, trainable);
    b.layers[i].w_down = tape.input(l.w_down, trainable);
  }
  b.w_head = tape.input(model.w_head, trainable);
  return b;
}

Var model_forward_embedded(Tape& tape, const BoundModel& bound, const ModelConfig& config, Var x,
                           const BoundComposition* delta, Var* final_hidden) {
  const int s = tape.value(x).rows();
  if (s > config.max_seq) throw std::invalid_argument("sequence exceeds max length");
  const int head_dim = config.hidden / config.heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));
  (void)s;

  for (int li = 0; li < config.layers; ++li) {
    const auto& lw = bound.layers[static_cast<size_t>(li)];

    Var a_in = layer_norm(x);
    Var q = matmul_nt(a_in, lw.wq);
    Var k = matmul_nt(a_in, lw.wk);
    Var v = matmul_nt(a_in, lw.wv);

    Var merged;
    for (int h = 0; h < config.heads; ++h) {
      Var qh = slice_cols(q, h * head_dim, head_dim);
      Var kh = slice_cols(k, h * head_dim, head_dim);
      Var vh = slice_cols(v, h * head_dim, head_dim);
      Var probs = causal_softmax(scale(matmul_nt(qh, kh), inv_sqrt_hd));
      Var ctx = matmul(probs, vh);
      merged = (h == 0) ? ctx : concat_cols(merged, ctx);
    }
    x = add(x, matmul_nt(merged, lw.wo));

    Var f_in = layer_norm(x);
    Var up = apply_low_rank(f_in, lw.w_up, delta, li, true);
    Var act = relu(up);
    Var down = apply_low_rank(act, lw.w_down, delta, li, false);
    x = add(x, down);
  }

  Var xf = layer_norm(x);
  if (final_hidden != nullptr) *final_hidden = xf;
  return matmul_nt(xf, bound.w_head);
}

Var model_forward(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                  const std::vector<int>& tokens, const BoundComposition* delta,
                  Var* final_hidden) {
  if (tokens.empty()) throw std::invalid_argument("empty token sequence");
  if (static_cast<int>(tokens.size()) > config.max_seq) {
    throw std::invalid_argument("sequence exceeds max length");
  }
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = add(embedding(bound.tok_embed, tokens), embedding(bound.pos_embed, positions));
  return model_forward_embedded(tape, bound, config, x, delta, final_hidden);
}

Tensor input_embeddings(const TransformerModel& model, const std::vector<int>& tokens) {
  const int h = model.config.hidden;
  Tensor x({static_cast<int>(tokens.size()), h});
  for (size_t i = 0; i < tokens.size(); ++i) {
    for (int j = 0; j < h; ++j) {
      x.at(static_cast<int>(i), j) =
          model.tok_embed.at(tokens[i], j) + model.pos_embed.at(static_cast<int>(i), j);
    }
  }
  return x;
}

Var action_nll(Var logits, const TokenSequence& seq) {
  const int n = static_cast<int>(seq.tokens.size());
  if (seq.span_start <= 0 || seq.span_start >= n) {
    throw std::invalid_argument("action span must be a nonempty suffix after position 0");
  }
  std::vector<int> rows, targets;
  for (int t = seq.span_start; t < n; ++t) {
    rows.push_back(t - 1);  // token t is predicted from the previous position
    targets.push_back(seq.tokens[static_cast<size_t>(t)]);
  }
  return nll_rows(log_softmax(logits), rows, targets);
}

DecodeResult greedy_decode(const TransformerModel& model, const std::vector<int>& prompt,
                           const ComposedDelta* delta, int end_token, int budget) {
  DecodeResult res;
  std::vector<int> tokens = prompt;
  for (int step = 0; step < budget; ++step) {
    if (static_cast<int>(tokens.size()) >= model.config.max_seq) break;
    Tape tape;
    BoundModel bound = bind_model(tape, model, false);
    BoundComposition bc;
    const BoundComposition* pbc = nullptr;
    if (delta != nullptr && !delta->empty()) {
      bc = bind_composition(tape, *delta, false);
      pbc = &bc;
    }
    Var logits = model_forward(tape, bound, model.config, tokens, pbc);
    const Tensor& lv = tape.value(logits);
    const int last = lv.rows() - 1;
    int best = 0;
    for (int j = 1; j < lv.cols(); ++j) {
      if (lv.at(last, j) > lv.at(last, best)) best = j;
    }
    tokens.push_back(best);
    res.emitted.push_back(best);
    if (best == end_token) {
      res.status = DecodeResult::Status::ok;
      return res;
    }
  }
  res.status = DecodeResult::Status::budget_exhausted;
  return res;
}

// ---- checkpointing ---------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'P', 'T', 'L', 'M'};
constexpr uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("model checkpoint: truncated file");
  return v;
}

}  // namespace

void save_model(const TransformerModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("model checkpoint: cannot open for writing: " + path);
  os.write(kModelMagic, 4);
  write_pod(os, kModelVersion);
  const auto& c = model.config;
  write_pod(os, static_cast<int32_t>(c.vocab));
  write_pod(os, static_cast<int32_t>(c.hidden));
  write_pod(os, static_cast<int32_t>(c.layers));
  write_pod(os, static_cast<int32_t>(c.heads));
  write_pod(os, static_cast<int32_t>(c.ffn));
  write_pod(os, static_cast<int32_t>(c.max_seq));
  write_pod(os, c.seed);
  write_pod(os, c.init_std);
  for (const Tensor* t : model.parameters()) {
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("model checkpoint: write failed: " + path);
}

TransformerModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("model checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw std::runtime_error("model checkpoint: bad magic");
  }
  if (read_pod<uint32_t>(is) != kModelVersion) {
    throw std::runtime_error("model checkpoint: unsupported version");
  }
  ModelConfig c;
  c.vocab = read_pod<int32_t>(is);
  c.hidden = read_pod<int32_t>(is);
  c.layers = read_pod<int32_t>(is);
  c.heads = read_pod<int32_t>(is);
  c.ffn = read_pod<int32_t>(is);
  c.max_seq = read_pod<int32_t>(is);
  c.seed = read_pod<uint64_t>(is);
  c.init_std = read_pod<double>(is);
  c.validate();

  Rng dummy(0);
  TransformerModel m = TransformerModel::init(c, dummy);
  for (Tensor* t : m.parameters()) {
    is.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!is) throw std::runtime_error("model checkpoint: truncated parameter block");
  }
  return m;
}

}  // namespace paratool
