// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvp/error.hpp"

namespace mvp::core {

/// Dense row-major matrix. Used for everything from a 1x1 loss to the
/// (templates*classes) x dim fused feature block.
template <typename T>
class Tensor2D {
 public:
  using value_type = T;

  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> values);

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor2D scalar(T v) { return Tensor2D(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  void fill(T v);
  bool same_shape(const Tensor2D& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  /// Index of the first non-finite value, or size() when all are finite.
  std::size_t first_non_finite() const noexcept;
  bool all_finite() const noexcept { return first_non_finite() == size(); }

  template <typename U>
  Tensor2D<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor2D<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> values_;
};

std::string shape_string(std::size_t rows, std::size_t cols);

template <typename T>
struct Parameter {
  std::string name;
  Tensor2D<T> value;
  Tensor2D<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor2D<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Tensor2D<T>(value.rows(), value.cols()); }
};

enum class Reduction { mean, sum };

/// Tanh-approximation GELU and its derivative.
template <typename T>
T gelu_value(T x) noexcept;
template <typename T>
T gelu_derivative(T x) noexcept;

/// Reverse-mode tape. Each op computes its forward value immediately and,
/// when gradients are enabled, records a closure that pushes the node's
/// gradient back to its inputs. Nodes are addressed by index, so a Graph
/// must outlive every Var it hands out and is neither copyable nor movable.
template <typename T>
class Graph {
 public:
  struct Var {
    std::size_t index = 0;
  };

  explicit Graph(bool requires_grad = true) : requires_grad_(requires_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool requires_grad() const noexcept { return requires_grad_; }

  /// Leaf owning a copy of `value`.
  Var input(Tensor2D<T> value);
  /// Leaf referencing caller-owned storage; the tensor must outlive the graph.
  Var input_ref(const Tensor2D<T>& value);
  /// Leaf bound to a trainable parameter (referenced, not copied).
  Var param(const Parameter<T>& p);

  Var affine(Var x, Var w, Var b);
  Var gelu(Var x);
  Var slice_cols(Var x, std::size_t begin, std::size_t end);
  /// Row i*K + j of the result is concat(a_i, b_j) for a: M x da, b: K x db.
  Var pair_concat(Var a, Var b);
  /// Row (i*K + j) of the result is a_i for K repeats of each row.
  Var repeat_rows(Var a, std::size_t repeats);
  Var normalize_rows(Var x);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  Var scale(Var x, T factor);
  Var reshape(Var x, std::size_t rows, std::size_t cols);
  Var add(Var a, Var b);
  /// ca * a + cb * b for two 1x1 nodes.
  Var combine(Var a, T ca, Var b, T cb);
  /// Sum of all entries, as 1x1.
  Var sum(Var x);

  Var reparameterize(Var mu, Var logvar, const Tensor2D<T>& eps, T variance_scale);
  /// Cross-entropy of row-wise softmax against integer labels, as 1x1.
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels,
                            Reduction reduction = Reduction::mean);
  /// sum over rows of ||target - pred||^2, as 1x1.
  Var squared_error(Var target, Var pred);
  /// sum over rows of KL(N(mu, exp(logvar)) || N(0, I)), as 1x1.
  Var gaussian_kl(Var mu, Var logvar);

  const Tensor2D<T>& value(Var v) const;
  const Tensor2D<T>& grad(Var v) const;
  T scalar(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(Var loss);
  /// Adds gradients of every bound parameter into Parameter::grad.
  void accumulate_into(std::span<Parameter<T>* const> params) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor2D<T> owned;
    const Tensor2D<T>* external = nullptr;
    Tensor2D<T> grad;
    std::function<void()> backward;

    const Tensor2D<T>& value() const { return external ? *external : owned; }
  };

  Var push(Tensor2D<T> value);
  Node& node(Var v) { return nodes_[v.index]; }
  const Node& node(Var v) const { return nodes_[v.index]; }
  Tensor2D<T>& grad_mut(Var v);

  bool requires_grad_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter<T>*, std::size_t>> params_;
};

extern template class Tensor2D<float>;
extern template class Tensor2D<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mvp::core
