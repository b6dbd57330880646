#pragma once

#include <string>

#include "rhythmvec/autograd.hpp"
#include "rhythmvec/rng.hpp"

namespace rhythmvec::nn {

/// Glorot-uniform weight (in x out) named prefix.W plus zero bias prefix.b.
void init_linear(ParameterStore& store, const std::string& prefix, Eigen::Index in,
                 Eigen::Index out, Rng& rng);
void init_layer_norm(ParameterStore& store, const std::string& prefix, Eigen::Index dim);
/// Pre-norm block: x + MHA(LN(x)), then h + FFN(LN(h)).
void init_transformer_block(ParameterStore& store, const std::string& prefix,
                            Eigen::Index model_dim, Eigen::Index ffn_dim, Rng& rng);
/// prefix.W (d x m), prefix.b (1 x m), prefix.mu (1 x m).
void init_attentive_pool(ParameterStore& store, const std::string& prefix, Eigen::Index dim,
                         Eigen::Index hidden, Rng& rng);

/// Dropout source for training; inactive when rate is 0 or rng is null.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const noexcept { return rate > 0.0 && rng != nullptr; }
};

Var dropout(Var x, const Dropout& drop);
Var linear(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x);
Var layer_norm(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x);

/// Multi-head self-attention block over rows of x. Rows at or beyond
/// valid_len are padding: they are masked out as keys.
Var transformer_block(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x,
                      int n_heads, Eigen::Index valid_len, const Dropout& drop);

/// Sinusoidal position table, rows x dim.
Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index dim);

/// Self-attentive temporal pooling: weights = softmax_t(tanh(x_t W + b) mu^T),
/// output = sum_t weights_t x_t (1 x d). Padding rows receive zero weight.
Var attentive_pool(Tape& tape, const ParameterStore& store, const std::string& prefix, Var x,
                   Eigen::Index valid_len);

/// Adaptive-moment optimizer with global gradient-norm clipping.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;
  };

  Adam(const ParameterStore& store, Options options);

  /// Clips `grads` in place, then updates `store`. Returns the pre-clip norm.
  double step(ParameterStore& store, Gradients& grads);

 private:
  Options options_;
  long steps_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace rhythmvec::nn
