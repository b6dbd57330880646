#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace rhythmvec::nn {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
};

/// Named parameters in insertion order. The order is the serialization
/// order and the index used by Gradients.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix value);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Parameter& at(std::string_view name) const { return params_[index_of(name)]; }
  Parameter& at(std::string_view name) { return params_[index_of(name)]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& operator[](std::size_t i) { return params_[i]; }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Parameter>& all() const noexcept { return params_; }

  bool operator==(const ParameterStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient buffers parallel to a ParameterStore.
struct Gradients {
  std::vector<Matrix> values;

  static Gradients zeros_like(const ParameterStore& store);
  void add(const Gradients& other);
  void scale(double factor);
  double norm() const;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Tape& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode automatic differentiation over dense matrices.
///
/// With gradients disabled the tape records values only, which is how
/// inference runs; the forward arithmetic is identical in both modes.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Matrix value);
  /// Leaf bound to store[index]; the store must outlive the tape.
  Var parameter(const ParameterStore& store, std::string_view name);

  /// Records an op result. `inputs` decide whether the node needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  const Matrix& value(int id) const;
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].needs_grad; }
  /// Adds `g` into the gradient of `v` (no-op if v needs no gradient).
  void accumulate(Var v, const Matrix& g);
  /// Gradient of a node after backward(); zero if none reached it.
  Matrix grad(Var v) const;

  /// Propagates `seed` (same shape as root) back through the tape.
  void backward(Var root, const Matrix& seed);
  /// Adds parameter-leaf gradients into `grads`.
  void collect(Gradients& grads) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    int param_index = -1;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// Differentiable ops. All shapes are checked and throw ShapeError.
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
/// Elementwise product with a constant matrix.
Var mul_const(Var a, const Matrix& mask);
Var relu(Var a);
Var tanh(Var a);
Var transpose(Var a);
/// Row-wise softmax. When valid_cols >= 0, columns >= valid_cols get weight 0.
Var softmax_rows(Var a, Eigen::Index valid_cols = -1);
/// Row-wise layer normalization with 1 x n gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);

}  // namespace rhythmvec::nn
