#pragma once

// A small reverse-mode tape over Matrix values. It covers exactly the ops the
// denoiser, the blendshape decoder, the geometric losses and the mapping
// network need; nothing more.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eet/kernels.hpp"
#include "eet/numerics.hpp"

namespace eet::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1×1 node.
  double scalar() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Per-parameter gradient buffers aligned with a ParamStore's entry order.
using GradBuffer = std::vector<Matrix>;
GradBuffer zero_grads_like(const ParamStore& store);

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  /// Leaf bound to a ParamStore entry; repeated calls return the same node.
  Var param(const std::string& name);

  /// Propagates d(loss)/d(node) from a 1×1 loss and adds parameter
  /// gradients into `grads` (aligned with the bound store).
  void backward(Var loss, GradBuffer& grads);
  void backward(Var loss, ParamStore& store);

  // Op-author interface.
  Var push(Matrix value, std::span<const Var> parents, BackwardFn fn);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient flowing into node `id` (valid inside a BackwardFn for `id`).
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adds g into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& g);
  /// Mutable gradient buffer for node `id`, allocated on first use; nullptr for constants.
  Matrix* grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::ptrdiff_t param_index = -1;
  };

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

Var matmul(Var a, Var b);
/// a·bᵀ
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x (n×m) plus a 1×m row broadcast over all rows.
Var add_row(Var x, Var bias);
Var gelu(Var x);
Var softmax_rows(Var x);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var repeat_rows(Var row, std::size_t n);
/// 1×m mean over rows.
Var mean_rows(Var x);
/// Row t of the result is x[t+1] − x[t].
Var row_diff(Var x);
/// Multiplies row r by w[r].
Var scale_rows(Var x, std::span<const double> w);
/// Σ x², as 1×1.
Var sum_squares(Var x);
/// 1 − a·b / (‖a‖‖b‖) for row vectors, as 1×1. Throws on a zero norm.
Var cosine_distance(Var a, Var b);
/// Per-frame area-weighted vertex normals of a T × 3V sequence.
Var vertex_normals(Var frames, std::span<const Face> faces);
/// Σ_i w_i·x_i over 1×1 terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }

}  // namespace eet::ad
