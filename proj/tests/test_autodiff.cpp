#include <doctest.h>

#include <cmath>

#include "paratool/autodiff.hpp"
#include "paratool/rng.hpp"

using namespace paratool;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("softmax of equal logits is uniform") {
  Tape tape;
  Var x = tape.input(Tensor({2}, {0.0, 0.0}));
  Var p = softmax(x);
  CHECK(tape.value(p)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tape.value(p)[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  Rng rng(0);
  Tape tape;
  Var x = tape.input(random_tensor({6, 40}, rng, 3.0));
  const Tensor& p = tape.value(softmax(x));
  for (int i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < p.cols(); ++j) {
      s += p.at(i, j);
      CHECK(p.at(i, j) >= 0.0);
    }
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy closed form and nonnegativity") {
  Tape tape;
  Var p = tape.input(Tensor({1, 2}, {0.5, 0.5}));
  Var ce = cross_entropy(p, {0});
  CHECK(tape.value(ce).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(tape.value(ce).item() >= 0.0);
}

TEST_CASE("matmul by identity is the identity") {
  Rng rng(1);
  Tape tape;
  Var eye = tape.input(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  Tensor m = random_tensor({2, 2}, rng);
  Var vm = tape.input(m);
  const Tensor& out = tape.value(matmul(eye, vm));
  for (size_t i = 0; i < m.size(); ++i) CHECK(out[i] == m[i]);
}

TEST_CASE("d/dx of x*x at 3 is 6") {
  Tape tape;
  Var x = tape.input(Tensor::scalar(3.0));
  Var y = mul(x, x);
  tape.backward(y);
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("softmax jacobian at uniform logits") {
  // downstream gradient [1, 0] over 2 classes -> [0.25, -0.25]
  Tape tape;
  Var x = tape.input(Tensor({2}, {0.0, 0.0}));
  Var p = softmax(x);
  Var picked = dot(p, tape.constant(Tensor({2}, {1.0, 0.0})));
  tape.backward(picked);
  CHECK(tape.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(tape.grad(x)[1] == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("grad_check exact on quadratics and zero on constants") {
  Rng rng(2);
  Tensor x = random_tensor({7}, rng);
  const double q = grad_check([](Tape& t, Var v) { return dot(v, v); }, x);
  CHECK(q < 1e-9);
  const double z =
      grad_check([](Tape& t, Var v) { return mul(sum(v), t.constant(Tensor::scalar(0.0))); }, x);
  CHECK(z == 0.0);
}

TEST_CASE("every primitive passes finite differences") {
  Rng rng(3);
  const double tol = 1e-5;

  // the function under test must be deterministic, so fix all constants up front
  const Tensor c34a = random_tensor({3, 4}, rng);
  const Tensor c45 = random_tensor({4, 5}, rng);
  const Tensor c64 = random_tensor({6, 4}, rng);
  const Tensor c35 = random_tensor({3, 5}, rng);
  const Tensor c26a = random_tensor({2, 6}, rng);
  const Tensor c26b = random_tensor({2, 6}, rng);
  const Tensor c38 = random_tensor({3, 8}, rng);
  const Tensor c24 = random_tensor({2, 4}, rng);
  const Tensor c54 = random_tensor({5, 4}, rng);
  const Tensor c32 = random_tensor({3, 2}, rng);
  const Tensor c36 = random_tensor({3, 6}, rng);
  const Tensor c42 = random_tensor({4, 2}, rng);
  const Tensor c53a = random_tensor({5, 3}, rng);
  const Tensor c53b = random_tensor({5, 3}, rng);

  CHECK(grad_check([](Tape&, Var v) { return sum(relu(v)); }, random_tensor({8}, rng)) < tol);
  CHECK(grad_check([](Tape&, Var v) { return sum(vabs(v)); }, random_tensor({8}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(mul(v, t.constant(c34a))); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(add(v, t.constant(c34a))); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(sub(t.constant(c34a), v)); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([](Tape&, Var v) { return sum(scale(v, -2.5)); },
                   random_tensor({5}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(matmul(v, t.constant(c45))); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(matmul_nt(v, t.constant(c64))); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(matmul(t.constant(c35), v)); },
                   random_tensor({5, 2}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(mul(softmax(v), t.constant(c26a))); },
                   random_tensor({2, 6}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(mul(log_softmax(v), t.constant(c26b))); },
                   random_tensor({2, 6}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return sum(mul(layer_norm(v), t.constant(c38))); },
                   random_tensor({3, 8}, rng)) < tol);
  CHECK(grad_check([](Tape&, Var v) { return cross_entropy(softmax(v), {1, 0, 2}); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([](Tape&, Var v) { return nll_rows(log_softmax(v), {0, 2}, {1, 3}); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([](Tape&, Var v) { return sum(embedding(v, {0, 2, 2, 1})); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) {
          return sum(mul(concat_rows(v, t.constant(c24)), t.constant(c54)));
        },
        random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) {
          return sum(mul(concat_cols(v, t.constant(c32)), t.constant(c36)));
        },
        random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) {
          return sum(mul(slice_rows(v, 1, 2), t.constant(c24)));
        },
        random_tensor({4, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) {
          return sum(mul(slice_cols(v, 1, 2), t.constant(c42)));
        },
        random_tensor({4, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) { return dot(v, t.constant(c34a)); },
                   random_tensor({3, 4}, rng)) < tol);
  CHECK(grad_check([&](Tape& t, Var v) {
          return sum(mul(add_rowwise(t.constant(c53a), v), t.constant(c53b)));
        },
        random_tensor({1, 3}, rng)) < tol);
}

TEST_CASE("three-layer composite matches finite differences") {
  Rng rng(4);
  Tensor w1 = random_tensor({6, 5}, rng, 0.5);
  Tensor w2 = random_tensor({4, 6}, rng, 0.5);
  const double err = grad_check(
      [&](Tape& t, Var v) {
        Var h1 = relu(matmul_nt(v, t.constant(w1)));
        Var h2 = layer_norm(matmul_nt(h1, t.constant(w2)));
        return cross_entropy(softmax(h2), {1, 3});
      },
      random_tensor({2, 5}, rng));
  CHECK(err < 1e-5);
}

TEST_CASE("untouched inputs read back zero gradients") {
  Tape tape;
  Var x = tape.input(Tensor::scalar(2.0));
  Var unused = tape.input(Tensor({3}, {1.0, 2.0, 3.0}));
  Var y = mul(x, x);
  tape.backward(y);
  for (size_t i = 0; i < 3; ++i) CHECK(tape.grad(unused)[i] == 0.0);
}

TEST_CASE("backward twice throws, non-scalar loss throws") {
  Tape tape;
  Var x = tape.input(Tensor({2}, {1.0, 2.0}));
  Var y = mul(x, x);
  CHECK_THROWS(tape.backward(y));  // not scalar
  Var s = sum(y);
  tape.backward(s);
  CHECK_THROWS(tape.backward(s));  // consumed
}

TEST_CASE("shape mismatches are rejected") {
  Tape tape;
  Var a = tape.input(Tensor({2, 3}));
  Var b = tape.input(Tensor({3, 2}));
  CHECK_THROWS(add(a, b));
  CHECK_THROWS(mul(a, b));
  CHECK_THROWS(matmul(a, a));
  CHECK_THROWS(matmul_nt(a, b));
}

TEST_CASE("non-finite inputs are rejected") {
  Tape tape;
  CHECK_THROWS(tape.input(Tensor({2}, {1.0, std::numeric_limits<double>::infinity()})));
}

TEST_CASE("identical seed and op sequence produce bitwise identical tensors") {
  const auto run = [] {
    Rng rng(99);
    Tape tape;
    Var x = tape.input(random_tensor({4, 4}, rng));
    Var y = softmax(matmul(x, x));
    return tape.value(y);
  };
  const Tensor a = run();
  const Tensor b = run();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

}  // TEST_SUITE
