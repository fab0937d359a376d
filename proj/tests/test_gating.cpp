#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "paratool/gating.hpp"
#include "paratool/synth.hpp"

using namespace paratool;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab = 16;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 12;
  c.max_seq = 24;
  return c;
}

Tensor random_vec(int n, Rng& rng) {
  Tensor t({n});
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_SUITE("gating") {

TEST_CASE("context encoding has dim h, is deterministic and frozen") {
  Rng rng(0);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  const std::vector<int> prompt{3, 1, 4, 1, 5};
  const Tensor a = encode_context(m, prompt);
  const Tensor b = encode_context(m, prompt);
  CHECK(static_cast<int>(a.size()) == m.config.hidden);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK_THROWS(encode_context(m, {}));

  // identical documents encode identically
  const Tensor d1 = encode_tool_doc(m, {7, 2, 9});
  const Tensor d2 = encode_tool_doc(m, {7, 2, 9});
  for (size_t i = 0; i < d1.size(); ++i) CHECK(d1[i] == d2[i]);
}

TEST_CASE("all-zero gate parameters give uniform weights") {
  GateConfig gc;
  gc.hidden = 6;
  Rng rng(1);
  GateNetwork g = GateNetwork::init(gc, 8, rng);
  for (Tensor* p : g.parameters()) {
    for (size_t i = 0; i < p->size(); ++i) (*p)[i] = 0.0;
  }
  Rng vr(2);
  const Tensor c = random_vec(8, vr);
  const Tensor d0 = random_vec(8, vr), d1 = random_vec(8, vr), d2 = random_vec(8, vr),
               d3 = random_vec(8, vr);
  const CompositionWeights w = gate_scores(g, c, {0, 1, 2, 3}, {&d0, &d1, &d2, &d3});
  for (const double x : w.weights) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("duplicate documents get equal weights; permutation only permutes") {
  GateConfig gc;
  gc.hidden = 10;
  Rng rng(3);
  GateNetwork g = GateNetwork::init(gc, 8, rng);
  Rng vr(4);
  const Tensor c = random_vec(8, vr);
  const Tensor da = random_vec(8, vr);
  const Tensor db = random_vec(8, vr);

  const CompositionWeights w = gate_scores(g, c, {0, 1, 2}, {&da, &db, &da});
  CHECK(w.weights[0] == doctest::Approx(w.weights[2]).epsilon(1e-12));

  const CompositionWeights p = gate_scores(g, c, {2, 0, 1}, {&da, &da, &db});
  CHECK(p.weights[0] == doctest::Approx(w.weights[2]).epsilon(1e-12));
  CHECK(p.weights[1] == doctest::Approx(w.weights[0]).epsilon(1e-12));
  CHECK(p.weights[2] == doctest::Approx(w.weights[1]).epsilon(1e-12));
  CHECK(p.argmax_tool() == w.argmax_tool());

  CHECK_THROWS(gate_scores(g, c, {}, {}));
}

TEST_CASE("gate loss closed forms") {
  CompositionWeights w;
  w.tool_ids = {0, 1};
  w.weights = {0.5, 0.5};
  CHECK(gate_loss_value(w, 0, 0.8) == doctest::Approx(0.2 * std::log(2.0)).epsilon(1e-9));
  CHECK(gate_loss_value(w, 0, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::fabs(gate_loss_value(w, 0, 0.8) - 0.13863) < 1e-4);

  const CompositionWeights u = CompositionWeights::uniform({0, 1, 2, 3});
  CHECK(u.entropy() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS(gate_loss_value(w, 5, 0.0));
}

TEST_CASE("gate training loss gradient matches finite differences") {
  // assemble the exact training-step graph and check d(loss)/d(params)
  GateConfig gc;
  gc.hidden = 5;
  gc.depth = 3;
  Rng rng(5);
  GateNetwork gate = GateNetwork::init(gc, 4, rng);
  Rng vr(6);
  Tensor features({3, 16});
  for (size_t i = 0; i < features.size(); ++i) features[i] = vr.normal();
  const int target_index = 1;
  const double lambda = 0.8;

  const auto loss_of = [&](const GateNetwork& g) {
    Tape tape;
    std::vector<Var> ws, bs;
    for (size_t i = 0; i < g.weights.size(); ++i) {
      ws.push_back(tape.input(g.weights[i]));
      bs.push_back(tape.input(g.biases[i]));
    }
    Var x = tape.constant(features);
    for (size_t l = 0; l < ws.size(); ++l) {
      x = add_rowwise(matmul_nt(x, ws[l]), bs[l]);
      if (l + 1 < ws.size()) x = relu(x);
    }
    Var logits = transpose(x);
    Var la = log_softmax(logits);
    Var alpha = softmax(logits);
    Var loss = sub(nll_rows(la, {0}, {target_index}), scale(neg(dot(alpha, la)), lambda));
    return tape.value(loss).item();
  };

  Tape tape;
  std::vector<Var> ws, bs;
  for (size_t i = 0; i < gate.weights.size(); ++i) {
    ws.push_back(tape.input(gate.weights[i]));
    bs.push_back(tape.input(gate.biases[i]));
  }
  Var x = tape.constant(features);
  for (size_t l = 0; l < ws.size(); ++l) {
    x = add_rowwise(matmul_nt(x, ws[l]), bs[l]);
    if (l + 1 < ws.size()) x = relu(x);
  }
  Var logits = transpose(x);
  Var la = log_softmax(logits);
  Var alpha = softmax(logits);
  Var loss = sub(nll_rows(la, {0}, {target_index}), scale(neg(dot(alpha, la)), lambda));
  tape.backward(loss);

  const double step = 1e-6;
  double worst = 0.0;
  auto params = gate.parameters();
  for (size_t p = 0; p < params.size(); ++p) {
    const Var v = (p % 2 == 0) ? ws[p / 2] : bs[p / 2];
    const Tensor& g = tape.grad(v);
    Tensor& t = *params[p];
    for (size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss_of(gate);
      t[i] = orig - step;
      const double down = loss_of(gate);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::fabs(g[i] - numeric) / std::max(1.0, std::fabs(g[i]));
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("top_n arithmetic, identity, one-hot and ratio preservation") {
  CompositionWeights w;
  w.tool_ids = {0, 1, 2};
  w.weights = {0.7, 0.2, 0.1};
  const CompositionWeights t2 = top_n(w, 2);
  REQUIRE(t2.size() == 2);
  CHECK(t2.tool_ids == std::vector<int>{0, 1});
  CHECK(t2.weights[0] == doctest::Approx(0.7 / 0.9).epsilon(1e-12));
  CHECK(t2.weights[1] == doctest::Approx(0.2 / 0.9).epsilon(1e-12));
  // ratios among kept candidates are exactly preserved
  CHECK(t2.weights[0] / t2.weights[1] == doctest::Approx(0.7 / 0.2).epsilon(1e-12));

  const CompositionWeights same = top_n(w, 3);
  CHECK(same.weights == w.weights);
  const CompositionWeights more = top_n(w, 10);
  CHECK(more.weights == w.weights);

  CompositionWeights hot = CompositionWeights::one_hot({4, 5, 6}, 5);
  for (int n = 1; n <= 3; ++n) {
    const CompositionWeights k = top_n(hot, n);
    CHECK(k.argmax_tool() == 5);
    CHECK(k.weights[static_cast<size_t>(k.argmax_index())] == doctest::Approx(1.0));
  }

  // ties break toward the smaller tool id
  CompositionWeights tie;
  tie.tool_ids = {9, 4, 7};
  tie.weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const CompositionWeights kept = top_n(tie, 2);
  CHECK(kept.tool_ids == std::vector<int>{4, 7});
}

TEST_CASE("training on single-candidate instances is trivially accurate") {
  GateConfig gc;
  gc.hidden = 6;
  gc.epochs = 1;
  Rng vr(8);
  std::vector<GateSample> train, val;
  std::map<int, Tensor> docs;
  docs.emplace(0, random_vec(8, vr));
  for (int i = 0; i < 4; ++i) {
    GateSample s;
    s.context = random_vec(8, vr);
    s.candidates = {0};
    s.target_tool = 0;
    train.push_back(s);
    val.push_back(s);
  }
  GateTrainLog log;
  (void)train_gate(gc, 8, train, val, docs, &log);
  CHECK(log.val_accuracy.back() == doctest::Approx(1.0));

  // ground truth outside candidates is rejected
  train[0].target_tool = 9;
  CHECK_THROWS(train_gate(gc, 8, train, val, docs));
}

TEST_CASE("entropy regularization yields strictly softer validation weights") {
  // synthetic separable task over 4 tools, 3 seeds
  const int h = 8;
  int higher = 0;
  for (const uint64_t seed : {11ull, 22ull, 33ull}) {
    Rng vr(seed);
    std::map<int, Tensor> docs;
    for (int i = 0; i < 4; ++i) docs.emplace(i, random_vec(h, vr));
    std::vector<GateSample> train, val;
    for (int n = 0; n < 60; ++n) {
      const int target = n % 4;
      GateSample s;
      // context near the target's document
      s.context = docs.at(target);
      for (size_t i = 0; i < s.context.size(); ++i) s.context[i] += 0.3 * vr.normal();
      s.candidates = {0, 1, 2, 3};
      s.target_tool = target;
      if (n % 5 == 0) {
        val.push_back(s);
      } else {
        train.push_back(s);
      }
    }
    GateConfig plain;
    plain.hidden = 16;
    plain.epochs = 6;
    plain.entropy_lambda = 0.0;
    plain.seed = seed;
    GateConfig soft = plain;
    soft.entropy_lambda = 0.8;

    GateTrainLog log_plain, log_soft;
    (void)train_gate(plain, h, train, val, docs, &log_plain);
    (void)train_gate(soft, h, train, val, docs, &log_soft);
    if (log_soft.val_entropy.back() > log_plain.val_entropy.back()) ++higher;
  }
  CHECK(higher == 3);
}

TEST_CASE("gate checkpoint and embedding cache round trip") {
  GateConfig gc;
  gc.hidden = 7;
  Rng rng(9);
  GateNetwork g = GateNetwork::init(gc, 6, rng);
  save_gate(g, "gate_rt.bin");
  const GateNetwork r = load_gate("gate_rt.bin");
  CHECK(r.parameter_hash() == g.parameter_hash());
  CHECK(r.encoder_dim == g.encoder_dim);
  std::remove("gate_rt.bin");

  std::map<int, std::pair<uint64_t, Tensor>> cache;
  Rng vr(10);
  cache.emplace(3, std::make_pair(doc_content_hash("DOC x ENDDOC"), random_vec(6, vr)));
  cache.emplace(5, std::make_pair(doc_content_hash("DOC y ENDDOC"), random_vec(6, vr)));
  save_embedding_cache(cache, "cache_rt.bin");
  const auto back = load_embedding_cache("cache_rt.bin");
  REQUIRE(back.size() == 2);
  CHECK(back.at(3).first == cache.at(3).first);
  for (size_t i = 0; i < 6; ++i) CHECK(back.at(5).second[i] == cache.at(5).second[i]);
  std::remove("cache_rt.bin");
}

}  // TEST_SUITE
