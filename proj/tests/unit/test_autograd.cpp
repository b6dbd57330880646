#include <doctest.h>

#include "oracles.hpp"
#include "rhythmvec/autograd.hpp"
#include "rhythmvec/error.hpp"
#include "rhythmvec/layers.hpp"
#include "rhythmvec/rng.hpp"

using namespace rhythmvec;
using namespace rhythmvec::nn;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Checks d/dx sum(W .* op(x)) for an op applied to a single parameter.
void check_unary(const std::function<Var(Tape&, Var)>& op, const Matrix& x0, Rng& rng,
                 double tol = 1e-6) {
  ParameterStore store;
  store.add("x", x0);
  Tape probe(false);
  const Matrix out0 = op(probe, probe.parameter(store, "x")).value();
  const Matrix w = random_matrix(rng, out0.rows(), out0.cols());

  Tape tape(true);
  Var y = op(tape, tape.parameter(store, "x"));
  tape.backward(y, w);
  Gradients g = Gradients::zeros_like(store);
  tape.collect(g);

  auto f = [&](const Matrix& x) {
    ParameterStore s;
    s.add("x", x);
    Tape t(false);
    return op(t, t.parameter(s, "x")).value().cwiseProduct(w).sum();
  };
  const Matrix numeric = oracle::numeric_gradient(f, x0);
  CHECK(oracle::relative_error(g.values[0], numeric) <= tol);
}

}  // namespace

TEST_CASE("elementwise and shape op gradients") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 4, 2);
  const Matrix r = random_matrix(rng, 1, 4);
  check_unary([&](Tape& t, Var x) { return matmul(x, t.constant(b)); }, a, rng);
  check_unary([&](Tape& t, Var x) { return matmul(t.constant(a), x); }, b, rng);
  check_unary([&](Tape& t, Var x) { return matmul_nt(x, t.constant(a)); }, a, rng);
  const Matrix c = random_matrix(rng, 2, 4);
  check_unary([&](Tape& t, Var x) { return matmul_nt(t.constant(c), x); }, random_matrix(rng, 5, 4), rng);
  check_unary([&](Tape& t, Var x) { return add(x, t.constant(a)); }, a, rng);
  check_unary([&](Tape& t, Var x) { return add_row(t.constant(a), x); }, r, rng);
  check_unary([&](Tape&, Var x) { return scale(x, -2.5); }, a, rng);
  const Matrix mask = random_matrix(rng, 3, 4);
  check_unary([&](Tape&, Var x) { return mul_const(x, mask); }, a, rng);
  check_unary([&](Tape&, Var x) { return tanh(x); }, a, rng);
  check_unary([&](Tape&, Var x) { return relu(x); }, a + Matrix::Constant(3, 4, 0.05), rng);
  check_unary([&](Tape&, Var x) { return transpose(x); }, a, rng);
  check_unary([&](Tape&, Var x) { return slice_cols(x, 1, 2); }, a, rng);
  check_unary([&](Tape&, Var x) { return concat_cols({x, scale(x, 2.0), slice_cols(x, 0, 1)}); }, a, rng);
}

TEST_CASE("softmax and layer norm gradients") {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 3, 5);
  check_unary([](Tape&, Var x) { return softmax_rows(x); }, a, rng);
  check_unary([](Tape&, Var x) { return softmax_rows(x, 3); }, a, rng);
  const Matrix g = random_matrix(rng, 1, 5);
  const Matrix b = random_matrix(rng, 1, 5);
  check_unary([&](Tape& t, Var x) { return layer_norm(x, t.constant(g), t.constant(b)); }, a, rng, 1e-5);
  check_unary([&](Tape& t, Var x) { return layer_norm(t.constant(a), x, t.constant(b)); }, g, rng);
  check_unary([&](Tape& t, Var x) { return layer_norm(t.constant(a), t.constant(g), x); }, b, rng);
}

TEST_CASE("masked softmax gives padding zero weight") {
  Tape t(false);
  const Var s = softmax_rows(t.constant(Matrix::Random(2, 5)), 3);
  CHECK(s.value().rightCols(2).cwiseAbs().maxCoeff() == 0.0);
  for (Eigen::Index r = 0; r < 2; ++r) CHECK(s.value().row(r).sum() == doctest::Approx(1.0));
}

TEST_CASE("transformer block gradient through every parameter") {
  Rng rng(3);
  ParameterStore store;
  init_transformer_block(store, "blk", 8, 12, rng);
  const Matrix x0 = random_matrix(rng, 5, 8);
  const Matrix w = random_matrix(rng, 5, 8);

  Tape tape(true);
  Var y = transformer_block(tape, store, "blk", tape.constant(x0), 2, 4, {});
  tape.backward(y, w);
  Gradients g = Gradients::zeros_like(store);
  tape.collect(g);

  for (std::size_t i = 0; i < store.size(); ++i) {
    auto f = [&](const Matrix& v) {
      ParameterStore s = store;
      s[i].value = v;
      Tape t(false);
      return transformer_block(t, s, "blk", t.constant(x0), 2, 4, {}).value().cwiseProduct(w).sum();
    };
    INFO(store[i].name);
    CHECK(oracle::relative_error(g.values[i], oracle::numeric_gradient(f, store[i].value)) <= 1e-5);
  }
}

TEST_CASE("shape errors") {
  Tape t;
  CHECK_THROWS_AS(matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), ShapeError);
  CHECK_THROWS_AS(add(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(slice_cols(t.constant(Matrix::Zero(2, 3)), 2, 2), ShapeError);
}

TEST_CASE("adam clips and moves against the gradient") {
  ParameterStore store;
  store.add("w", Matrix::Constant(1, 2, 1.0));
  Adam adam(store, {0.1, 0.9, 0.999, 1e-8, 1.0});
  Gradients g = Gradients::zeros_like(store);
  g.values[0] << 30.0, -40.0;
  const double pre = adam.step(store, g);
  CHECK(pre == doctest::Approx(50.0));
  CHECK(g.norm() == doctest::Approx(1.0));
  CHECK(store[0].value(0, 0) == doctest::Approx(0.9));
  CHECK(store[0].value(0, 1) == doctest::Approx(1.1));
}

TEST_CASE("parameter store lookup") {
  ParameterStore s;
  s.add("a", Matrix::Zero(2, 2));
  s.add("b", Matrix::Zero(1, 3));
  CHECK(s.index_of("b") == 1);
  CHECK(s.scalar_count() == 7);
  CHECK(s.contains("a"));
  CHECK_FALSE(s.contains("c"));
  CHECK_THROWS(s.index_of("c"));
}
