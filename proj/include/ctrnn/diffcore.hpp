// SPDX-License-Identifier: Apache-2.0
/**
 * @file   diffcore.hpp
 * @brief  Reverse-mode automatic differentiation over dense column vectors and
 *         matrices, plus the named parameter store shared by every model.
 *
 * A Graph is built define-by-run: each op appends a node whose value is
 * computed immediately and cached in a flat arena. backward() walks the nodes
 * in reverse insertion order and accumulates gradients of a scalar root into
 * the flat gradient array of a ParamStore (or any buffer with the same
 * layout). Graphs are reused across examples through clear(), which keeps the
 * arena capacity.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace ctrnn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape &) const = default;
  std::string str() const;
};

struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor column(std::vector<double> v);

  double &at(std::size_t r, std::size_t c) { return values[r * shape.cols + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values[r * shape.cols + c];
  }
};

/// Named dense parameters with gradient accumulators, stored contiguously so a
/// whole-model gradient is a single flat array.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
  };

  std::size_t add(std::string name, Shape shape,
                  std::span<const double> init = {});

  template <typename Rng>
  std::size_t add_uniform(std::string name, Shape shape, double bound,
                          Rng &rng);

  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t num_entries() const { return entries_.size(); }
  std::size_t total_size() const { return values_.size(); }
  const Entry &entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<Entry> &entries() const { return entries_; }

  std::span<double> value(std::size_t i);
  std::span<const double> value(std::size_t i) const;
  std::span<double> grad(std::size_t i);
  std::span<const double> grad(std::size_t i) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  void zero_grad();

  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json &doc);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  matmul,
  affine,
  add,
  sub,
  hadamard,
  div,
  tanh,
  sigmoid,
  softplus,
  exp,
  log,
  square,
  concat,
  slice,
  sum,
  scale,
  add_scalar,
};

std::string_view op_name(OpKind kind);

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId &) const = default;
};

class Graph {
 public:
  Graph() = default;

  NodeId constant(std::span<const double> values, Shape shape);
  NodeId constant(const Tensor &t) { return constant(t.values, t.shape); }
  NodeId column(std::initializer_list<double> values);
  NodeId scalar(double v);
  NodeId zeros(std::size_t rows);

  /// Leaf bound to entry `i` of `store`; its gradient lands at the entry's
  /// offset in the flat gradient buffer passed to backward().
  NodeId param(const ParamStore &store, std::size_t i);

  NodeId matmul(NodeId a, NodeId b);
  /// w * x + b for a column vector x.
  NodeId affine(NodeId w, NodeId x, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softplus(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  /// Stacks rows; column counts must agree.
  NodeId concat(NodeId a, NodeId b);
  NodeId concat(std::initializer_list<NodeId> parts);
  NodeId slice(NodeId a, std::size_t row_begin, std::size_t row_count);
  NodeId sum(NodeId a);
  NodeId scale(NodeId a, double s);
  NodeId add_scalar(NodeId a, double s);

  Shape shape(NodeId n) const;
  std::span<const double> value(NodeId n) const;
  double item(NodeId n) const;
  OpKind kind(NodeId n) const { return nodes_[n.index].kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(root)/d(param) into `flat_grads`, which must have the
  /// layout of the ParamStore the parameter leaves were bound to.
  void backward(NodeId root, std::span<double> flat_grads);
  void backward(NodeId root, ParamStore &store) {
    backward(root, store.grads());
  }

  /// Gradient of the last backward() root with respect to any node.
  std::span<const double> grad(NodeId n) const;

  void clear();

 private:
  struct Node {
    OpKind kind;
    bool needs_grad;
    std::uint32_t a;
    std::uint32_t b;
    std::uint32_t c;
    std::uint32_t rows;
    std::uint32_t cols;
    std::size_t offset;
    std::size_t aux;  // param flat offset, or slice begin
    double scalar;
  };

  NodeId push(OpKind kind, Shape shape, std::uint32_t a, std::uint32_t b,
              std::uint32_t c, bool needs_grad);
  double *val(std::uint32_t i) { return vals_.data() + nodes_[i].offset; }
  const double *val(std::uint32_t i) const {
    return vals_.data() + nodes_[i].offset;
  }
  double *grd(std::uint32_t i) { return grads_.data() + nodes_[i].offset; }
  Shape shape_of(std::uint32_t i) const {
    return {nodes_[i].rows, nodes_[i].cols};
  }
  void check_same(OpKind kind, NodeId a, NodeId b) const;
  void check_finite(NodeId n) const;
  NodeId unary(OpKind kind, NodeId a);

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> grads_;
};

using GraphBuilder = std::function<NodeId(Graph &, const ParamStore &)>;

/// Max over all parameter scalars of
/// |analytic - central difference| / max(|analytic|, |fd|, kGradCheckFloor).
/// The floor sits above the roundoff of a central difference at step 1e-5,
/// so components that are numerically zero do not dominate.
constexpr double kGradCheckFloor = 1e-6;
double grad_check(const GraphBuilder &builder, ParamStore &store, double step);

// ----------------------------------------------------------------------------

template <typename Rng>
std::size_t ParamStore::add_uniform(std::string name, Shape shape,
                                    double bound, Rng &rng) {
  std::vector<double> init(shape.size());
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto &v : init) v = dist(rng);
  return add(std::move(name), shape, init);
}

}  // namespace ctrnn
