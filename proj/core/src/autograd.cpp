#include "rhythmvec/autograd.hpp"

#include <cmath>

#include "rhythmvec/error.hpp"

namespace rhythmvec::nn {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " +
                   shape_of(b));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore / Gradients

Parameter& ParameterStore::add(std::string name, Matrix value) {
  if (index_.contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value)});
  return params_.back();
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value) {
      return false;
    }
  }
  return true;
}

Gradients Gradients::zeros_like(const ParameterStore& store) {
  Gradients g;
  g.values.reserve(store.size());
  for (const auto& p : store.all()) g.values.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
}

void Gradients::scale(double factor) {
  for (auto& v : values) v *= factor;
}

double Gradients::norm() const {
  double sq = 0.0;
  for (const auto& v : values) sq += v.squaredNorm();
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(const ParameterStore& store, std::string_view name) {
  const std::size_t index = store.index_of(name);
  Node node;
  node.external = &store[index].value;
  node.needs_grad = grad_enabled_;
  node.param_index = static_cast<int>(index);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (Var v : inputs) node.needs_grad = node.needs_grad || needs_grad(v);
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (Var v : inputs) node.needs_grad = node.needs_grad || needs_grad(v);
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(int id) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  return node.external ? *node.external : node.value;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (!node.needs_grad) return;
  if (node.has_grad) {
    node.grad += g;
  } else {
    node.grad = g;
    node.has_grad = true;
  }
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.has_grad) return node.grad;
  const Matrix& val = value(v.id());
  return Matrix::Zero(val.rows(), val.cols());
}

void Tape::backward(Var root, const Matrix& seed) {
  if (!grad_enabled_) throw Error("backward on a tape with gradients disabled");
  const Matrix& rv = value(root.id());
  if (seed.rows() != rv.rows() || seed.cols() != rv.cols()) shape_fail("backward seed", rv, seed);
  accumulate(root, seed);
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.has_grad || !node.backward) continue;
    // The closure may accumulate into earlier nodes only, so the reference
    // to this node's gradient stays valid.
    node.backward(*this, node.grad);
  }
}

void Tape::collect(Gradients& grads) const {
  for (const Node& node : nodes_) {
    if (node.param_index >= 0 && node.has_grad) {
      grads.values[static_cast<std::size_t>(node.param_index)] += node.grad;
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  Matrix out = av * bv;
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_fail("matmul_nt", av, bv);
  Matrix out = av * bv.transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_fail("add", av, bv);
  Matrix out = av + bv;
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_fail("add_row", av, rv);
  Matrix out = av.rowwise() + rv.row(0);
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Matrix& g) {
    t.accumulate(a, g * factor);
  });
}

Var mul_const(Var a, const Matrix& mask) {
  const Matrix& av = a.value();
  if (av.rows() != mask.rows() || av.cols() != mask.cols()) shape_fail("mul_const", av, mask);
  Matrix out = av.cwiseProduct(mask);
  return a.tape().record(std::move(out), {a}, [a, mask](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix((a.value().array() > 0.0).select(g.array(), 0.0)));
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  Tape& tape = a.tape();
  const int self = static_cast<int>(tape.size());
  return tape.record(std::move(out), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var softmax_rows(Var a, Eigen::Index valid_cols) {
  const Matrix& av = a.value();
  const Eigen::Index cols = valid_cols < 0 ? av.cols() : valid_cols;
  if (cols <= 0 || cols > av.cols()) {
    throw ShapeError("softmax_rows: valid column count " + std::to_string(valid_cols) +
                     " out of range for " + shape_of(av));
  }
  Matrix out = Matrix::Zero(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r).head(cols);
    const double peak = row.maxCoeff();
    auto e = (row.array() - peak).exp();
    const double total = e.sum();
    out.row(r).head(cols) = (e / total).matrix();
  }
  Tape& tape = a.tape();
  const int self = static_cast<int>(tape.size());
  return tape.record(std::move(out), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& p = t.value(self);
    const Eigen::VectorXd inner = (g.cwiseProduct(p)).rowwise().sum();
    Matrix ga = p.cwiseProduct(g - inner.replicate(1, g.cols()));
    t.accumulate(a, ga);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  if (gv.rows() != 1 || gv.cols() != xv.cols()) shape_fail("layer_norm gain", xv, gv);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_fail("layer_norm bias", xv, bv);
  const auto n = static_cast<double>(xv.cols());
  const Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / n) + eps).rsqrt().matrix();
  Matrix normed = centered.array().colwise() * inv_std.array();
  Matrix out = (normed.array().rowwise() * gv.row(0).array()).matrix();
  out.rowwise() += bv.row(0);
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normed, inv_std, n](Tape& t, const Matrix& g) {
        if (t.needs_grad(gain)) t.accumulate(gain, g.cwiseProduct(normed).colwise().sum());
        if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
        if (t.needs_grad(x)) {
          const Matrix gn = (g.array().rowwise() * gain.value().row(0).array()).matrix();
          const Eigen::VectorXd mean_gn = gn.rowwise().sum() / n;
          const Eigen::VectorXd mean_gn_x = gn.cwiseProduct(normed).rowwise().sum() / n;
          Matrix gx = gn.colwise() - mean_gn;
          gx -= (normed.array().colwise() * mean_gn_x.array()).matrix();
          gx = (gx.array().colwise() * inv_std.array()).matrix();
          t.accumulate(x, gx);
        }
      });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& av = a.value();
  if (start < 0 || count < 0 || start + count > av.cols()) {
    throw ShapeError("slice_cols: range out of bounds for " + shape_of(av));
  }
  Matrix out = av.middleCols(start, count);
  return a.tape().record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    const Matrix& v = a.value();
    Matrix full = Matrix::Zero(v.rows(), v.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (p.rows() != rows) shape_fail("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index offset = 0;
    for (Var p : parts) {
      const Eigen::Index c = p.cols();
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(offset, c));
      offset += c;
    }
  });
}

}  // namespace rhythmvec::nn
