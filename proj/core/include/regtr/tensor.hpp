#pragma once

// Minimal define-by-run reverse-mode autodiff over dense row-major matrices.
//
// Every tensor is 2-D (rows x cols); scalars are 1x1. Ops record their parents
// and a backward closure when any input requires a gradient. backward() on a
// scalar visits the recorded graph once in reverse topological order and
// accumulates into every reachable node's gradient buffer. Leaf gradients keep
// accumulating across calls until zero_grad().
//
// Broadcasting is limited to adding/subtracting a 1 x cols bias row.

#include "regtr/error.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace regtr::ad {

template <typename T>
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, T value, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::array<std::size_t, 2> shape() const { return {node_->rows, node_->cols}; }
  std::string shape_str() const;

  std::span<const T> values() const { return node_->value; }
  /// Writable storage; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_values() const { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() const { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }
  const char* op() const { return node_->op; }

  /// Populates gradients of everything reachable. Throws if not 1x1.
  void backward() const;
  void zero_grad() const { node_->grad.assign(node_->value.size(), T(0)); }

  /// Same values, no history.
  Tensor detach() const;
  /// Deep copy as a fresh leaf.
  Tensor clone_leaf(bool requires_grad) const;

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// When enabled, every op checks its output for NaN/Inf and throws
/// NumericalError naming the op. Off by default; process-wide.
void set_debug_checks(bool enabled);
bool debug_checks();

// --- linear algebra -------------------------------------------------------
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T without materialising the transpose.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

// --- elementwise / broadcast ----------------------------------------------
/// b may match a exactly or be a 1 x a.cols() bias row.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
/// out(i, j) = x(i, j) * w(i, 0); w is rows x 1.
template <typename T> Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
/// Gradient passes where lo <= x <= hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// --- structural ----------------------------------------------------------
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);

// --- reductions / normalisation -----------------------------------------
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// rows x 1 sums over the last dimension.
template <typename T> Tensor<T> sum_cols(const Tensor<T>& a);
/// Row-wise softmax, max-subtracted.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
/// rows x 1: log sum_{j : mask(i,j) != 0} exp a(i,j). Each row needs one
/// active entry. `mask` has a's shape.
template <typename T> Tensor<T> masked_logsumexp_rows(const Tensor<T>& a, std::span<const std::uint8_t> mask);
/// Row-wise layer normalisation followed by gamma * x + beta (both 1 x cols).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
template <typename T> Tensor<T> l2_normalize_rows(const Tensor<T>& a, T eps = T(1e-12));
/// One output row per group: column-wise max / mean over the listed rows.
template <typename T>
Tensor<T> group_max(const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups);
template <typename T>
Tensor<T> group_mean(const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups);

}  // namespace regtr::ad
