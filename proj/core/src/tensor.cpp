#include "regtr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace regtr::ad {
namespace {

std::atomic<bool> g_debug_checks{false};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Map<T> map(std::vector<T>& v, std::size_t r, std::size_t c) {
  return Map<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename T>
CMap<T> cmap(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return CMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::string shp(std::size_t r, std::size_t c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename T>
void require_defined(const char* op, const Tensor<T>& t) {
  if (!t.defined()) throw InvalidArgument(std::string(op) + ": undefined tensor");
}

template <typename T>
[[noreturn]] void shape_error(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw InvalidArgument(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

// Allocates the output node and wires parents when any of them needs a grad.
template <typename T>
std::shared_ptr<Node<T>> make_node(const char* op, std::size_t r, std::size_t c,
                                   std::initializer_list<const Tensor<T>*> parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = r;
  n->cols = c;
  n->op = op;
  n->value.assign(r * c, T(0));
  for (const Tensor<T>* p : parents) {
    if (p->requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const Tensor<T>* p : parents) n->parents.push_back(p->node_ptr());
  }
  return n;
}

template <typename T>
std::shared_ptr<Node<T>> make_node_vec(const char* op, std::size_t r, std::size_t c,
                                       const std::vector<Tensor<T>>& parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = r;
  n->cols = c;
  n->op = op;
  n->value.assign(r * c, T(0));
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
  }
  return n;
}

template <typename T>
Tensor<T> finish(std::shared_ptr<Node<T>> n) {
  if (g_debug_checks.load(std::memory_order_relaxed)) {
    for (const T v : n->value) {
      if (!std::isfinite(v)) throw NumericalError(std::string(n->op) + ": non-finite output " + shp(n->rows, n->cols));
    }
  }
  return Tensor<T>(std::move(n));
}

// Parent p's grad buffer if it participates in backward, else nullptr.
template <typename T>
std::vector<T>* pgrad(Node<T>& n, std::size_t i) {
  Node<T>& p = *n.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

template <typename T, typename F, typename G>
Tensor<T> unary(const char* op, const Tensor<T>& a, F forward, G derivative) {
  require_defined(op, a);
  auto n = make_node<T>(op, a.rows(), a.cols(), {&a});
  const auto& av = a.node().value;
  for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = forward(av[i]);
  if (n->requires_grad) {
    n->backward_fn = [derivative](Node<T>& self) {
      auto* ga = pgrad(self, 0);
      if (!ga) return;
      const auto& x = self.parents[0]->value;
      for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * derivative(x[i], self.value[i]);
    };
  }
  return finish(std::move(n));
}

template <typename T>
bool is_bias_row(const Tensor<T>& a, const Tensor<T>& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
}

template <typename T>
Tensor<T> add_sub(const char* op, const Tensor<T>& a, const Tensor<T>& b, T sign) {
  require_defined(op, a);
  require_defined(op, b);
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool bias = !same && is_bias_row(a, b);
  if (!same && !bias) shape_error(op, a, b);
  auto n = make_node<T>(op, a.rows(), a.cols(), {&a, &b});
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] + sign * bv[bias ? i % c : i];
  if (n->requires_grad) {
    n->backward_fn = [bias, c, sign](Node<T>& self) {
      if (auto* ga = pgrad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
      }
      if (auto* gb = pgrad(self, 1)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[bias ? i % c : i] += sign * self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks.store(enabled); }
bool debug_checks() { return g_debug_checks.load(); }

// --- Tensor members -------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return full(rows, cols, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(std::size_t rows, std::size_t cols, T value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from(std::size_t rows, std::size_t cols, std::vector<T> values, bool requires_grad) {
  if (values.size() != rows * cols) {
    throw InvalidArgument("tensor: " + std::to_string(values.size()) + " values for shape " + shp(rows, cols));
  }
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return full(1, 1, value, requires_grad);
}

template <typename T>
std::string Tensor<T>::shape_str() const {
  if (!node_) return "[undefined]";
  return shp(node_->rows, node_->cols);
}

template <typename T>
T Tensor<T>::item() const {
  if (!node_ || node_->value.size() != 1) throw InvalidArgument("item: expected a 1x1 tensor, got " + shape_str());
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() const {
  if (!node_) throw InvalidArgument("backward: undefined tensor");
  if (node_->rows != 1 || node_->cols != 1) {
    throw InvalidArgument("backward: loss must be a 1x1 scalar, got " + shape_str());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  // Interior nodes start from zero on every pass; leaves accumulate.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
  }
  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto n = std::make_shared<Node<T>>();
  n->rows = node_->rows;
  n->cols = node_->cols;
  n->value = node_->value;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::clone_leaf(bool requires_grad) const {
  Tensor out = detach();
  out.node_->requires_grad = requires_grad;
  return out;
}

// --- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node<T>("matmul", m, n, {&a, &b});
  map(out->value, m, n).noalias() = cmap(a.node().value, m, k) * cmap(b.node().value, k, n);
  if (out->requires_grad) {
    out->backward_fn = [m, k, n](Node<T>& self) {
      const auto g = cmap(self.grad, m, n);
      if (auto* ga = pgrad(self, 0)) map(*ga, m, k).noalias() += g * cmap(self.parents[1]->value, k, n).transpose();
      if (auto* gb = pgrad(self, 1)) map(*gb, k, n).noalias() += cmap(self.parents[0]->value, m, k).transpose() * g;
    };
  }
  return finish(std::move(out));
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined("matmul_nt", a);
  require_defined("matmul_nt", b);
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  auto out = make_node<T>("matmul_nt", m, n, {&a, &b});
  map(out->value, m, n).noalias() = cmap(a.node().value, m, k) * cmap(b.node().value, n, k).transpose();
  if (out->requires_grad) {
    out->backward_fn = [m, k, n](Node<T>& self) {
      const auto g = cmap(self.grad, m, n);
      if (auto* ga = pgrad(self, 0)) map(*ga, m, k).noalias() += g * cmap(self.parents[1]->value, n, k);
      if (auto* gb = pgrad(self, 1)) map(*gb, n, k).noalias() += g.transpose() * cmap(self.parents[0]->value, m, k);
    };
  }
  return finish(std::move(out));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_defined("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  auto out = make_node<T>("transpose", c, r, {&a});
  map(out->value, c, r) = cmap(a.node().value, r, c).transpose();
  if (out->requires_grad) {
    out->backward_fn = [r, c](Node<T>& self) {
      if (auto* ga = pgrad(self, 0)) map(*ga, r, c) += cmap(self.grad, c, r).transpose();
    };
  }
  return finish(std::move(out));
}

// --- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return add_sub("add", a, b, T(1));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add_sub("sub", a, b, T(-1));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
  auto n = make_node<T>("mul", a.rows(), a.cols(), {&a, &b});
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * bv[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      const auto& x = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      if (auto* ga = pgrad(self, 0)) {
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * y[i];
      }
      if (auto* gb = pgrad(self, 1)) {
        for (std::size_t i = 0; i < x.size(); ++i) (*gb)[i] += self.grad[i] * x[i];
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(
      "scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(
      "add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w) {
  require_defined("scale_rows", x);
  require_defined("scale_rows", w);
  if (w.rows() != x.rows() || w.cols() != 1) shape_error("scale_rows", x, w);
  const std::size_t r = x.rows(), c = x.cols();
  auto n = make_node<T>("scale_rows", r, c, {&x, &w});
  const auto& xv = x.node().value;
  const auto& wv = w.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = xv[i * c + j] * wv[i];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      const auto& xv = self.parents[0]->value;
      const auto& wv = self.parents[1]->value;
      auto* gx = pgrad(self, 0);
      auto* gw = pgrad(self, 1);
      for (std::size_t i = 0; i < r; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const T g = self.grad[i * c + j];
          if (gx) (*gx)[i * c + j] += g * wv[i];
          acc += g * xv[i * c + j];
        }
        if (gw) (*gw)[i] += acc;
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary(
      "sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary(
      "softplus", a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (!(lo <= hi)) throw InvalidArgument("clamp: lo > hi");
  return unary(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// --- structural -----------------------------------------------------------

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  for (const auto& p : parts) require_defined("concat_cols", p);
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts[0], p);
    offsets.push_back(c);
    c += p.cols();
  }
  auto n = make_node_vec<T>("concat_cols", r, c, parts);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].node().value;
    const std::size_t pc = parts[k].cols();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                  n->value.begin() + static_cast<std::ptrdiff_t>(i * c + offsets[k]));
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, offsets](Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto* g = pgrad(self, k);
        if (!g) continue;
        const std::size_t pc = self.parents[k]->cols;
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < pc; ++j) (*g)[i * pc + j] += self.grad[i * c + offsets[k] + j];
        }
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
  for (const auto& p : parts) require_defined("concat_rows", p);
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0], p);
    r += p.rows();
  }
  auto n = make_node_vec<T>("concat_rows", r, c, parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.node().value.begin(), p.node().value.end(), n->value.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t len = self.parents[k]->value.size();
        if (auto* g = pgrad(self, k)) {
          for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[off + i];
        }
        off += len;
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_defined("slice_cols", a);
  if (begin > end || end > a.cols()) {
    throw InvalidArgument("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") out of bounds for " + a.shape_str());
  }
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  auto n = make_node<T>("slice_cols", r, w, {&a});
  const auto& v = a.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < w; ++j) n->value[i * w + j] = v[i * c + begin + j];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, w, begin](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < w; ++j) (*g)[i * c + begin + j] += self.grad[i * w + j];
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_defined("slice_rows", a);
  if (begin > end || end > a.rows()) {
    throw InvalidArgument("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") out of bounds for " + a.shape_str());
  }
  const std::size_t c = a.cols();
  auto n = make_node<T>("slice_rows", end - begin, c, {&a});
  const auto& v = a.node().value;
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(begin * c), v.begin() + static_cast<std::ptrdiff_t>(end * c),
            n->value.begin());
  if (n->requires_grad) {
    n->backward_fn = [begin, c](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * c + i] += self.grad[i];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  require_defined("gather_rows", a);
  const std::size_t c = a.cols();
  for (const std::size_t r : rows) {
    if (r >= a.rows()) throw InvalidArgument("gather_rows: row " + std::to_string(r) + " out of bounds for " + a.shape_str());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  auto n = make_node<T>("gather_rows", idx.size(), c, {&a});
  const auto& v = a.node().value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                n->value.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  if (n->requires_grad) {
    n->backward_fn = [idx = std::move(idx), c](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < c; ++j) (*g)[idx[i] * c + j] += self.grad[i * c + j];
      }
    };
  }
  return finish(std::move(n));
}

// --- reductions / normalisation ------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  require_defined("sum", a);
  auto n = make_node<T>("sum", 1, 1, {&a});
  T s = 0;
  for (const T v : a.node().value) s += v;
  n->value[0] = s;
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (auto& x : *g) x += self.grad[0];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require_defined("mean", a);
  if (a.size() == 0) throw InvalidArgument("mean: empty tensor " + a.shape_str());
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  require_defined("sum_cols", a);
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make_node<T>("sum_cols", r, 1, {&a});
  const auto& v = a.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j];
    n->value[i] = s;
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  require_defined("softmax_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0) throw InvalidArgument("softmax_rows: zero columns in " + a.shape_str());
  auto n = make_node<T>("softmax_rows", r, c, {&a});
  const auto& v = a.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = v.data() + i * c;
    T* y = n->value.data() + i * c;
    const T mx = *std::max_element(x, x + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < c; ++j) y[j] *= inv;
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < r; ++i) {
        const T* y = self.value.data() + i * c;
        const T* gy = self.grad.data() + i * c;
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> masked_logsumexp_rows(const Tensor<T>& a, std::span<const std::uint8_t> mask) {
  require_defined("masked_logsumexp_rows", a);
  if (mask.size() != a.size()) {
    throw InvalidArgument("masked_logsumexp_rows: mask has " + std::to_string(mask.size()) + " entries for " +
                          a.shape_str());
  }
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make_node<T>("masked_logsumexp_rows", r, 1, {&a});
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const auto& v = a.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (m[i * c + j]) mx = std::max(mx, v[i * c + j]);
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      throw InvalidArgument("masked_logsumexp_rows: row " + std::to_string(i) + " has no active entries");
    }
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (m[i * c + j]) s += std::exp(v[i * c + j] - mx);
    }
    n->value[i] = mx + std::log(s);
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, m = std::move(m)](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      const auto& x = self.parents[0]->value;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          if (m[i * c + j]) (*g)[i * c + j] += self.grad[i] * std::exp(x[i * c + j] - self.value[i]);
        }
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_defined("layer_norm", x);
  require_defined("layer_norm", gamma);
  require_defined("layer_norm", beta);
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c) shape_error("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != c) shape_error("layer_norm", x, beta);
  if (c == 0) throw InvalidArgument("layer_norm: zero columns");
  auto n = make_node<T>("layer_norm", r, c, {&x, &gamma, &beta});
  std::vector<T> xhat(r * c);
  std::vector<T> inv_std(r);
  const auto& xv = x.node().value;
  const auto& gv = gamma.node().value;
  const auto& bv = beta.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xv.data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      n->value[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
      const auto& gv = self.parents[1]->value;
      auto* gx = pgrad(self, 0);
      auto* gg = pgrad(self, 1);
      auto* gb = pgrad(self, 2);
      std::vector<T> dxhat(c);
      for (std::size_t i = 0; i < r; ++i) {
        const T* gy = self.grad.data() + i * c;
        const T* xh = xhat.data() + i * c;
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < c; ++j) {
          if (gg) (*gg)[j] += gy[j] * xh[j];
          if (gb) (*gb)[j] += gy[j];
          dxhat[j] = gy[j] * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xh[j];
        }
        if (!gx) continue;
        m1 /= static_cast<T>(c);
        m2 /= static_cast<T>(c);
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += inv_std[i] * (dxhat[j] - m1 - xh[j] * m2);
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a, T eps) {
  require_defined("l2_normalize_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make_node<T>("l2_normalize_rows", r, c, {&a});
  std::vector<T> norms(r);
  const auto& v = a.node().value;
  for (std::size_t i = 0; i < r; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] * v[i * c + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = v[i * c + j] / norms[i];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, eps, norms = std::move(norms)](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < r; ++i) {
        const T* y = self.value.data() + i * c;
        const T* gy = self.grad.data() + i * c;
        if (norms[i] <= eps) {
          for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += gy[j] / norms[i];
          continue;
        }
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += (gy[j] - y[j] * dot) / norms[i];
      }
    };
  }
  return finish(std::move(n));
}

namespace {

template <typename T>
void check_groups(const char* op, const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups) {
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (groups[gi].empty()) throw InvalidArgument(std::string(op) + ": group " + std::to_string(gi) + " is empty");
    for (const std::size_t r : groups[gi]) {
      if (r >= a.rows()) {
        throw InvalidArgument(std::string(op) + ": row " + std::to_string(r) + " out of bounds for " + a.shape_str());
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> group_max(const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups) {
  require_defined("group_max", a);
  check_groups("group_max", a, groups);
  const std::size_t c = a.cols(), ng = groups.size();
  auto n = make_node<T>("group_max", ng, c, {&a});
  std::vector<std::size_t> argmax(ng * c);
  const auto& v = a.node().value;
  for (std::size_t gi = 0; gi < ng; ++gi) {
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = groups[gi][0];
      for (const std::size_t r : groups[gi]) {
        if (v[r * c + j] > v[best * c + j]) best = r;
      }
      argmax[gi * c + j] = best;
      n->value[gi * c + j] = v[best * c + j];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [c, argmax = std::move(argmax)](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t k = 0; k < argmax.size(); ++k) (*g)[argmax[k] * c + k % c] += self.grad[k];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> group_mean(const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups) {
  require_defined("group_mean", a);
  check_groups("group_mean", a, groups);
  const std::size_t c = a.cols(), ng = groups.size();
  auto n = make_node<T>("group_mean", ng, c, {&a});
  const auto& v = a.node().value;
  for (std::size_t gi = 0; gi < ng; ++gi) {
    const T inv = T(1) / static_cast<T>(groups[gi].size());
    for (const std::size_t r : groups[gi]) {
      for (std::size_t j = 0; j < c; ++j) n->value[gi * c + j] += v[r * c + j] * inv;
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [c, groups](Node<T>& self) {
      auto* g = pgrad(self, 0);
      if (!g) return;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const T inv = T(1) / static_cast<T>(groups[gi].size());
        for (const std::size_t r : groups[gi]) {
          for (std::size_t j = 0; j < c; ++j) (*g)[r * c + j] += self.grad[gi * c + j] * inv;
        }
      }
    };
  }
  return finish(std::move(n));
}

// --- explicit instantiation ----------------------------------------------

#define REGTR_INSTANTIATE(T)                                                                                   \
  template class Tensor<T>;                                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> transpose(const Tensor<T>&);                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> exp(const Tensor<T>&);                                                                  \
  template Tensor<T> log(const Tensor<T>&);                                                                  \
  template Tensor<T> abs(const Tensor<T>&);                                                                  \
  template Tensor<T> sqrt(const Tensor<T>&);                                                                 \
  template Tensor<T> softplus(const Tensor<T>&);                                                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                          \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                             \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                             \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                                 \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                 \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                            \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> sum_cols(const Tensor<T>&);                                                             \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                         \
  template Tensor<T> masked_logsumexp_rows(const Tensor<T>&, std::span<const std::uint8_t>);                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                    \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&, T);                                                 \
  template Tensor<T> group_max(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&);              \
  template Tensor<T> group_mean(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&);

REGTR_INSTANTIATE(float)
REGTR_INSTANTIATE(double)

#undef REGTR_INSTANTIATE

}  // namespace regtr::ad
