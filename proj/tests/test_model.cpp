#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "paratool/model.hpp"

using namespace paratool;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab = 12;
  c.hidden = 8;
  c.layers = 2;
  c.heads = 2;
  c.ffn = 12;
  c.max_seq = 16;
  c.init_std = 0.08;
  return c;
}

std::vector<int> random_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> t(static_cast<size_t>(n));
  for (int& x : t) x = rng.uniform_int(0, vocab - 1);
  return t;
}

Tensor forward_values(const TransformerModel& m, const std::vector<int>& tokens,
                      const ComposedDelta* delta = nullptr) {
  Tape tape;
  BoundModel bound = bind_model(tape, m);
  BoundComposition bc;
  const BoundComposition* pbc = nullptr;
  if (delta != nullptr) {
    bc = bind_composition(tape, *delta);
    pbc = &bc;
  }
  return tape.value(model_forward(tape, bound, m.config, tokens, pbc));
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count matches the declared matrices") {
  Rng rng(0);
  const ModelConfig c = tiny_config();
  TransformerModel m = TransformerModel::init(c, rng);
  const size_t expect = static_cast<size_t>(c.vocab) * c.hidden + static_cast<size_t>(c.max_seq) * c.hidden +
                        static_cast<size_t>(c.layers) * (4 * c.hidden * c.hidden + 2 * c.hidden * c.ffn) +
                        static_cast<size_t>(c.vocab) * c.hidden;
  CHECK(m.parameter_count() == expect);
}

TEST_CASE("forward yields S x V logits and is deterministic") {
  Rng rng(1);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  const auto tokens = random_tokens(7, m.config.vocab, rng);
  const Tensor a = forward_values(m, tokens);
  const Tensor b = forward_values(m, tokens);
  CHECK(a.rows() == 7);
  CHECK(a.cols() == m.config.vocab);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("composing an all-zero adapter reproduces base logits bitwise") {
  Rng rng(2);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  AdapterConfig ac;
  ac.rank = 4;
  ac.scale = 16.0;
  Rng arng = rng.split("adapter");
  LowRankAdapter ad = init_adapter(0, ac, m.config.layers, m.config.hidden, m.config.ffn, arng);
  const CompositionWeights w = CompositionWeights::one_hot({0}, 0);
  const ComposedDelta delta = compose({&ad}, w);

  const auto tokens = random_tokens(9, m.config.vocab, rng);
  const Tensor base = forward_values(m, tokens);
  const Tensor with = forward_values(m, tokens, &delta);
  for (size_t i = 0; i < base.size(); ++i) CHECK(base[i] == with[i]);
}

TEST_CASE("causal masking: prefix rows are bitwise invariant to later tokens") {
  Rng rng(3);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  auto tokens = random_tokens(10, m.config.vocab, rng);
  const Tensor full = forward_values(m, tokens);
  for (const int cut : {3, 6, 9}) {
    const std::vector<int> prefix(tokens.begin(), tokens.begin() + cut);
    const Tensor part = forward_values(m, prefix);
    for (int i = 0; i < cut; ++i) {
      for (int j = 0; j < m.config.vocab; ++j) {
        CHECK(part.at(i, j) == full.at(i, j));
      }
    }
  }
}

TEST_CASE("action_nll closed forms") {
  // uniform logits, span length 1, V=64 -> ln 64
  Tape tape;
  Var logits = tape.input(Tensor({4, 64}));
  TokenSequence seq;
  seq.tokens = {1, 2, 3, 7};
  seq.span_start = 3;
  const double loss = tape.value(action_nll(logits, seq)).item();
  CHECK(loss == doctest::Approx(std::log(64.0)).epsilon(1e-12));

  // saturated correct logits -> tiny loss
  Tape tape2;
  Tensor sat({3, 8});
  sat.at(1, 5) = 50.0;
  sat.at(2, 6) = 50.0;
  Var l2 = tape2.input(sat);
  TokenSequence seq2;
  seq2.tokens = {0, 0, 5, 6};
  seq2.span_start = 2;
  CHECK(tape2.value(action_nll(l2, seq2)).item() < 1e-3);
}

TEST_CASE("loss depends only on span rows") {
  Rng rng(4);
  Tensor logits({6, 10});
  for (size_t i = 0; i < logits.size(); ++i) logits[i] = rng.normal();
  TokenSequence seq;
  seq.tokens = {1, 2, 3, 4, 5, 6};
  seq.span_start = 4;  // predicted from rows 3 and 4

  Tape t1;
  const double a = t1.value(action_nll(t1.input(logits), seq)).item();

  // perturb logits at prompt rows (0..2) and at the trailing row (5)
  Tensor perturbed = logits;
  for (const int r : {0, 1, 2, 5}) {
    for (int j = 0; j < 10; ++j) perturbed.at(r, j) += rng.normal();
  }
  Tape t2;
  const double b = t2.value(action_nll(t2.input(perturbed), seq)).item();
  CHECK(a == b);
}

TEST_CASE("empty span is rejected") {
  Tape tape;
  Var logits = tape.input(Tensor({3, 5}));
  TokenSequence seq;
  seq.tokens = {0, 1, 2};
  seq.span_start = 3;
  CHECK_THROWS(action_nll(logits, seq));
  seq.span_start = 0;
  CHECK_THROWS(action_nll(logits, seq));
}

TEST_CASE("action_nll gradients match finite differences for every parameter") {
  Rng rng(5);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  TokenSequence seq;
  seq.tokens = random_tokens(6, m.config.vocab, rng);
  seq.span_start = 3;

  const auto loss_value = [&](const TransformerModel& model) {
    Tape tape;
    BoundModel bound = bind_model(tape, model);
    return tape.value(action_nll(model_forward(tape, bound, model.config, seq.tokens), seq)).item();
  };

  // analytic gradients
  Tape tape;
  BoundModel bound = bind_model(tape, m);
  Var loss = action_nll(model_forward(tape, bound, m.config, seq.tokens), seq);
  tape.backward(loss);
  const std::vector<Var> vars = bound.all();

  const double step = 1e-5;
  double worst = 0.0;
  auto params = m.parameters();
  REQUIRE(params.size() == vars.size());
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    const Tensor& g = tape.grad(vars[p]);
    for (size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss_value(m);
      t[i] = orig - step;
      const double down = loss_value(m);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::fabs(g[i] - numeric) / std::max(1.0, std::fabs(g[i]));
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("greedy decode is deterministic and respects the budget") {
  Rng rng(6);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  const auto prompt = random_tokens(4, m.config.vocab, rng);
  const DecodeResult a = greedy_decode(m, prompt, nullptr, /*end_token=*/0, /*budget=*/5);
  const DecodeResult b = greedy_decode(m, prompt, nullptr, 0, 5);
  CHECK(a.emitted == b.emitted);
  CHECK(a.emitted.size() <= 5);
  if (a.status == DecodeResult::Status::ok) {
    CHECK(a.emitted.back() == 0);
  } else {
    CHECK(a.emitted.size() == 5);
  }
}

TEST_CASE("overlong sequences are rejected") {
  Rng rng(7);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  const auto tokens = random_tokens(m.config.max_seq + 1, m.config.vocab, rng);
  Tape tape;
  BoundModel bound = bind_model(tape, m);
  CHECK_THROWS(model_forward(tape, bound, m.config, tokens));
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(8);
  TransformerModel m = TransformerModel::init(tiny_config(), rng);
  const std::string path = "test_model_ckpt.bin";
  save_model(m, path);
  const TransformerModel r = load_model(path);
  CHECK(r.parameter_hash() == m.parameter_hash());
  CHECK(r.config.hidden == m.config.hidden);
  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoint header is rejected") {
  const std::string path = "test_model_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
  }
  CHECK_THROWS(load_model(path));
  std::remove(path.c_str());
}

}  // TEST_SUITE
