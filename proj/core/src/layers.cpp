#include "rhythmvec/layers.hpp"

#include <cmath>

#include "rhythmvec/error.hpp"

namespace rhythmvec::nn {

namespace {

Matrix glorot(Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  // Row-major fill order keeps the draw sequence independent of storage order.
  for (Eigen::Index r = 0; r < in; ++r) {
    for (Eigen::Index c = 0; c < out; ++c) w(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
  }
  return w;
}

}  // namespace

void init_linear(ParameterStore& store, const std::string& prefix, Eigen::Index in,
                 Eigen::Index out, Rng& rng) {
  store.add(prefix + ".W", glorot(in, out, rng));
  store.add(prefix + ".b", Matrix::Zero(1, out));
}

void init_layer_norm(ParameterStore& store, const std::string& prefix, Eigen::Index dim) {
  store.add(prefix + ".g", Matrix::Ones(1, dim));
  store.add(prefix + ".b", Matrix::Zero(1, dim));
}

void init_transformer_block(ParameterStore& store, const std::string& prefix,
                            Eigen::Index model_dim, Eigen::Index ffn_dim, Rng& rng) {
  init_layer_norm(store, prefix + ".ln1", model_dim);
  init_linear(store, prefix + ".qkv", model_dim, 3 * model_dim, rng);
  init_linear(store, prefix + ".out", model_dim, model_dim, rng);
  init_layer_norm(store, prefix + ".ln2", model_dim);
  init_linear(store, prefix + ".ffn1", model_dim, ffn_dim, rng);
  init_linear(store, prefix + ".ffn2", ffn_dim, model_dim, rng);
}

void init_attentive_pool(ParameterStore& store, const std::string& prefix, Eigen::Index dim,
                         Eigen::Index hidden, Rng& rng) {
  store.add(prefix + ".W", glorot(dim, hidden, rng));
  store.add(prefix + ".b", Matrix::Zero(1, hidden));
  store.add(prefix + ".mu", glorot(1, hidden, rng));
}

Var dropout(Var x, const Dropout& drop) {
  if (!drop.active()) return x;
  const Matrix& v = x.value();
  Matrix mask(v.rows(), v.cols());
  const double keep = 1.0 - drop.rate;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      mask(r, c) = drop.rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
  }
  return mul_const(x, mask);
}

Var linear(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x) {
  return add_row(matmul(x, tape.parameter(store, prefix + ".W")),
                 tape.parameter(store, prefix + ".b"));
}

Var layer_norm(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x) {
  return nn::layer_norm(x, tape.parameter(store, prefix + ".g"),
                        tape.parameter(store, prefix + ".b"));
}

Var transformer_block(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x,
                      int n_heads, Eigen::Index valid_len, const Dropout& drop) {
  const Eigen::Index d = x.cols();
  if (n_heads <= 0 || d % n_heads != 0) {
    throw ShapeError("transformer_block: model dim " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(n_heads));
  }
  const Eigen::Index head_dim = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var normed = layer_norm(tape, store, prefix + ".ln1", x);
  Var qkv = linear(tape, store, prefix + ".qkv", normed);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Var q = slice_cols(qkv, h * head_dim, head_dim);
    Var k = slice_cols(qkv, d + h * head_dim, head_dim);
    Var v = slice_cols(qkv, 2 * d + h * head_dim, head_dim);
    Var weights = softmax_rows(scale(matmul_nt(q, k), inv_sqrt), valid_len);
    heads.push_back(matmul(weights, v));
  }
  Var attended = linear(tape, store, prefix + ".out", concat_cols(heads));
  Var h = add(x, dropout(attended, drop));

  Var ffn = linear(tape, store, prefix + ".ffn2",
                   relu(linear(tape, store, prefix + ".ffn1",
                               layer_norm(tape, store, prefix + ".ln2", h))));
  return add(h, dropout(ffn, drop));
}

Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index dim) {
  Matrix table(rows, dim);
  for (Eigen::Index pos = 0; pos < rows; ++pos) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

Var attentive_pool(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x,
                   Eigen::Index valid_len) {
  Var hidden = tanh(add_row(matmul(x, tape.parameter(store, prefix + ".W")),
                            tape.parameter(store, prefix + ".b")));
  // (1 x M) * (T x M)^T -> 1 x T scores
  Var scores = matmul_nt(tape.parameter(store, prefix + ".mu"), hidden);
  Var weights = softmax_rows(scores, valid_len);
  return matmul(weights, x);
}

Adam::Adam(const ParameterStore& store, Options options) : options_(options) {
  for (const auto& p : store.all()) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

double Adam::step(ParameterStore& store, Gradients& grads) {
  const double norm = grads.norm();
  if (options_.clip_norm > 0.0 && norm > options_.clip_norm) grads.scale(options_.clip_norm / norm);
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& g = grads.values[i];
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    auto update = (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + options_.eps);
    store[i].value.array() -= options_.learning_rate * update;
  }
  return norm;
}

}  // namespace rhythmvec::nn
