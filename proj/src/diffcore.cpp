// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ctrnn {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

constexpr int kParamStoreFormat = 1;

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << rows << "x" << cols << ")";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v)
    : shape(s), values(std::move(v)) {
  if (values.size() != shape.size())
    throw ShapeError("tensor value count " + std::to_string(values.size()) +
                     " does not match shape " + shape.str());
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

// ---------------------------------------------------------------------------
// ParamStore

std::size_t ParamStore::add(std::string name, Shape shape,
                            std::span<const double> init) {
  if (by_name_.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  if (!init.empty() && init.size() != shape.size())
    throw ShapeError("initial values for " + name + " do not match shape " +
                     shape.str());
  Entry e{name, shape, values_.size()};
  if (init.empty())
    values_.resize(values_.size() + shape.size(), 0.0);
  else
    values_.insert(values_.end(), init.begin(), init.end());
  grads_.resize(values_.size(), 0.0);
  const std::size_t idx = entries_.size();
  by_name_.emplace(std::move(name), idx);
  entries_.push_back(std::move(e));
  return idx;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end())
    throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParamStore::contains(std::string_view name) const {
  return by_name_.count(std::string(name)) > 0;
}

std::span<double> ParamStore::value(std::size_t i) {
  const auto &e = entries_.at(i);
  return {values_.data() + e.offset, e.shape.size()};
}
std::span<const double> ParamStore::value(std::size_t i) const {
  const auto &e = entries_.at(i);
  return {values_.data() + e.offset, e.shape.size()};
}
std::span<double> ParamStore::grad(std::size_t i) {
  const auto &e = entries_.at(i);
  return {grads_.data() + e.offset, e.shape.size()};
}
std::span<const double> ParamStore::grad(std::size_t i) const {
  const auto &e = entries_.at(i);
  return {grads_.data() + e.offset, e.shape.size()};
}

void ParamStore::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

nlohmann::json ParamStore::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto v = value(i);
    entries.push_back({{"name", entries_[i].name},
                       {"shape", {entries_[i].shape.rows, entries_[i].shape.cols}},
                       {"values", std::vector<double>(v.begin(), v.end())}});
  }
  return {{"format_version", kParamStoreFormat}, {"entries", entries}};
}

ParamStore ParamStore::from_json(const nlohmann::json &doc) {
  if (!doc.contains("format_version") ||
      doc.at("format_version").get<int>() != kParamStoreFormat)
    throw std::invalid_argument("parameter document: unsupported format_version");
  if (!doc.contains("entries") || !doc.at("entries").is_array())
    throw std::invalid_argument("parameter document: missing field 'entries'");
  ParamStore store;
  for (const auto &e : doc.at("entries")) {
    for (const char *field : {"name", "shape", "values"})
      if (!e.contains(field))
        throw std::invalid_argument(
            std::string("parameter document: entry missing field '") + field +
            "'");
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2)
      throw std::invalid_argument("parameter document: shape must have 2 dims");
    const auto values = e.at("values").get<std::vector<double>>();
    store.add(e.at("name").get<std::string>(), {shape[0], shape[1]}, values);
  }
  return store;
}

// ---------------------------------------------------------------------------
// Graph

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::affine: return "affine";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::hadamard: return "hadamard";
    case OpKind::div: return "div";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softplus: return "softplus";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::sum: return "sum";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
  }
  return "unknown";
}

NodeId Graph::push(OpKind kind, Shape shape, std::uint32_t a, std::uint32_t b,
                   std::uint32_t c, bool needs_grad) {
  Node n{};
  n.kind = kind;
  n.needs_grad = needs_grad;
  n.a = a;
  n.b = b;
  n.c = c;
  n.rows = static_cast<std::uint32_t>(shape.rows);
  n.cols = static_cast<std::uint32_t>(shape.cols);
  n.offset = vals_.size();
  vals_.resize(vals_.size() + shape.size());
  nodes_.push_back(n);
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check_same(OpKind kind, NodeId a, NodeId b) const {
  if (shape_of(a.index) != shape_of(b.index))
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " +
                     shape_of(a.index).str() + " vs " +
                     shape_of(b.index).str());
}

void Graph::check_finite(NodeId n) const {
  const auto &node = nodes_[n.index];
  const double *v = val(n.index);
  for (std::size_t i = 0, e = std::size_t(node.rows) * node.cols; i < e; ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string(op_name(node.kind)) +
                         ": non-finite output");
}

NodeId Graph::constant(std::span<const double> values, Shape shape) {
  if (values.size() != shape.size())
    throw ShapeError("constant: " + std::to_string(values.size()) +
                     " values for shape " + shape.str());
  NodeId id = push(OpKind::constant, shape, 0, 0, 0, false);
  std::copy(values.begin(), values.end(), val(id.index));
  check_finite(id);
  return id;
}

NodeId Graph::column(std::initializer_list<double> values) {
  return constant(std::span<const double>(values.begin(), values.size()),
                  {values.size(), 1});
}

NodeId Graph::scalar(double v) { return constant({&v, 1}, {1, 1}); }

NodeId Graph::zeros(std::size_t rows) {
  NodeId id = push(OpKind::constant, {rows, 1}, 0, 0, 0, false);
  std::fill_n(val(id.index), rows, 0.0);
  return id;
}

NodeId Graph::param(const ParamStore &store, std::size_t i) {
  const auto &e = store.entry(i);
  NodeId id = push(OpKind::parameter, e.shape, 0, 0, 0, true);
  nodes_[id.index].aux = e.offset;
  const auto v = store.value(i);
  std::copy(v.begin(), v.end(), val(id.index));
  check_finite(id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Shape sa = shape_of(a.index), sb = shape_of(b.index);
  if (sa.cols != sb.rows)
    throw ShapeError("matmul: shape mismatch " + sa.str() + " * " + sb.str());
  NodeId id = push(OpKind::matmul, {sa.rows, sb.cols}, a.index, b.index, 0,
                   nodes_[a.index].needs_grad || nodes_[b.index].needs_grad);
  const double *A = val(a.index), *B = val(b.index);
  double *C = val(id.index);
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
      C[i * n + j] = acc;
    }
  check_finite(id);
  return id;
}

NodeId Graph::affine(NodeId w, NodeId x, NodeId b) {
  const Shape sw = shape_of(w.index), sx = shape_of(x.index),
              sb = shape_of(b.index);
  if (sx.cols != 1 || sw.cols != sx.rows || sb != Shape{sw.rows, 1})
    throw ShapeError("affine: shape mismatch W" + sw.str() + " x" + sx.str() +
                     " b" + sb.str());
  NodeId id = push(OpKind::affine, {sw.rows, 1}, w.index, x.index, b.index,
                   nodes_[w.index].needs_grad || nodes_[x.index].needs_grad ||
                       nodes_[b.index].needs_grad);
  const double *W = val(w.index), *X = val(x.index), *B = val(b.index);
  double *Y = val(id.index);
  const std::size_t m = sw.rows, k = sw.cols;
  for (std::size_t i = 0; i < m; ++i) {
    double acc = B[i];
    const double *row = W + i * k;
    for (std::size_t p = 0; p < k; ++p) acc += row[p] * X[p];
    Y[i] = acc;
  }
  check_finite(id);
  return id;
}

#define CTRNN_BINARY_OP(NAME, KIND, EXPR)                                   \
  NodeId Graph::NAME(NodeId a, NodeId b) {                                  \
    check_same(OpKind::KIND, a, b);                                         \
    NodeId id = push(OpKind::KIND, shape_of(a.index), a.index, b.index, 0,  \
                     nodes_[a.index].needs_grad || nodes_[b.index].needs_grad); \
    const double *x = val(a.index), *y = val(b.index);                      \
    double *out = val(id.index);                                            \
    for (std::size_t i = 0, e = shape_of(a.index).size(); i < e; ++i)       \
      out[i] = (EXPR);                                                      \
    check_finite(id);                                                       \
    return id;                                                              \
  }

CTRNN_BINARY_OP(add, add, x[i] + y[i])
CTRNN_BINARY_OP(sub, sub, x[i] - y[i])
CTRNN_BINARY_OP(hadamard, hadamard, x[i] * y[i])
CTRNN_BINARY_OP(div, div, x[i] / y[i])

#undef CTRNN_BINARY_OP

NodeId Graph::unary(OpKind kind, NodeId a) {
  NodeId id = push(kind, shape_of(a.index), a.index, 0, 0,
                   nodes_[a.index].needs_grad);
  const double *x = val(a.index);
  double *out = val(id.index);
  const std::size_t e = shape_of(a.index).size();
  switch (kind) {
    case OpKind::tanh:
      for (std::size_t i = 0; i < e; ++i) out[i] = std::tanh(x[i]);
      break;
    case OpKind::sigmoid:
      for (std::size_t i = 0; i < e; ++i) out[i] = stable_sigmoid(x[i]);
      break;
    case OpKind::softplus:
      for (std::size_t i = 0; i < e; ++i) out[i] = stable_softplus(x[i]);
      break;
    case OpKind::exp:
      for (std::size_t i = 0; i < e; ++i) out[i] = std::exp(x[i]);
      break;
    case OpKind::log:
      for (std::size_t i = 0; i < e; ++i) out[i] = std::log(x[i]);
      break;
    case OpKind::square:
      for (std::size_t i = 0; i < e; ++i) out[i] = x[i] * x[i];
      break;
    default:
      throw std::logic_error("unary: not a unary op");
  }
  check_finite(id);
  return id;
}

NodeId Graph::tanh(NodeId a) { return unary(OpKind::tanh, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(OpKind::sigmoid, a); }
NodeId Graph::softplus(NodeId a) { return unary(OpKind::softplus, a); }
NodeId Graph::exp(NodeId a) { return unary(OpKind::exp, a); }
NodeId Graph::log(NodeId a) { return unary(OpKind::log, a); }
NodeId Graph::square(NodeId a) { return unary(OpKind::square, a); }

NodeId Graph::concat(NodeId a, NodeId b) {
  const Shape sa = shape_of(a.index), sb = shape_of(b.index);
  if (sa.cols != sb.cols)
    throw ShapeError("concat: shape mismatch " + sa.str() + " vs " + sb.str());
  NodeId id = push(OpKind::concat, {sa.rows + sb.rows, sa.cols}, a.index,
                   b.index, 0,
                   nodes_[a.index].needs_grad || nodes_[b.index].needs_grad);
  double *out = val(id.index);
  std::copy_n(val(a.index), sa.size(), out);
  std::copy_n(val(b.index), sb.size(), out + sa.size());
  return id;
}

NodeId Graph::concat(std::initializer_list<NodeId> parts) {
  if (parts.size() == 0) throw ShapeError("concat: no inputs");
  auto it = parts.begin();
  NodeId acc = *it++;
  for (; it != parts.end(); ++it) acc = concat(acc, *it);
  return acc;
}

NodeId Graph::slice(NodeId a, std::size_t row_begin, std::size_t row_count) {
  const Shape sa = shape_of(a.index);
  if (row_count == 0 || row_begin + row_count > sa.rows)
    throw ShapeError("slice: rows [" + std::to_string(row_begin) + ", " +
                     std::to_string(row_begin + row_count) + ") outside " +
                     sa.str());
  NodeId id = push(OpKind::slice, {row_count, sa.cols}, a.index, 0, 0,
                   nodes_[a.index].needs_grad);
  nodes_[id.index].aux = row_begin;
  std::copy_n(val(a.index) + row_begin * sa.cols, row_count * sa.cols,
              val(id.index));
  return id;
}

NodeId Graph::sum(NodeId a) {
  NodeId id = push(OpKind::sum, {1, 1}, a.index, 0, 0,
                   nodes_[a.index].needs_grad);
  const double *x = val(a.index);
  double acc = 0.0;
  for (std::size_t i = 0, e = shape_of(a.index).size(); i < e; ++i)
    acc += x[i];
  *val(id.index) = acc;
  check_finite(id);
  return id;
}

NodeId Graph::scale(NodeId a, double s) {
  NodeId id = push(OpKind::scale, shape_of(a.index), a.index, 0, 0,
                   nodes_[a.index].needs_grad);
  nodes_[id.index].scalar = s;
  const double *x = val(a.index);
  double *out = val(id.index);
  for (std::size_t i = 0, e = shape_of(a.index).size(); i < e; ++i)
    out[i] = s * x[i];
  check_finite(id);
  return id;
}

NodeId Graph::add_scalar(NodeId a, double s) {
  NodeId id = push(OpKind::add_scalar, shape_of(a.index), a.index, 0, 0,
                   nodes_[a.index].needs_grad);
  nodes_[id.index].scalar = s;
  const double *x = val(a.index);
  double *out = val(id.index);
  for (std::size_t i = 0, e = shape_of(a.index).size(); i < e; ++i)
    out[i] = x[i] + s;
  check_finite(id);
  return id;
}

Shape Graph::shape(NodeId n) const { return shape_of(n.index); }

std::span<const double> Graph::value(NodeId n) const {
  return {val(n.index), shape_of(n.index).size()};
}

double Graph::item(NodeId n) const {
  if (shape_of(n.index) != Shape{1, 1})
    throw ShapeError("item: node is not scalar " + shape_of(n.index).str());
  return *val(n.index);
}

std::span<const double> Graph::grad(NodeId n) const {
  if (grads_.size() != vals_.size())
    throw std::logic_error("grad: backward has not been run");
  return {grads_.data() + nodes_[n.index].offset, shape_of(n.index).size()};
}

void Graph::clear() {
  nodes_.clear();
  vals_.clear();
  grads_.clear();
}

void Graph::backward(NodeId root, std::span<double> flat_grads) {
  if (shape_of(root.index) != Shape{1, 1})
    throw ShapeError("backward: root must be scalar, got " +
                     shape_of(root.index).str());
  grads_.assign(vals_.size(), 0.0);
  *grd(root.index) = 1.0;

  for (std::int64_t k = root.index; k >= 0; --k) {
    const auto i = static_cast<std::uint32_t>(k);
    const Node &n = nodes_[i];
    if (!n.needs_grad) continue;
    const std::size_t e = std::size_t(n.rows) * n.cols;
    const double *g = grads_.data() + n.offset;
    switch (n.kind) {
      case OpKind::constant:
        break;
      case OpKind::parameter: {
        if (n.aux + e > flat_grads.size())
          throw ShapeError("backward: gradient buffer smaller than parameter layout");
        double *dst = flat_grads.data() + n.aux;
        for (std::size_t j = 0; j < e; ++j) dst[j] += g[j];
        break;
      }
      case OpKind::matmul: {
        const Shape sa = shape_of(n.a), sb = shape_of(n.b);
        const std::size_t m = sa.rows, kk = sa.cols, nn = sb.cols;
        const double *A = val(n.a), *B = val(n.b);
        if (nodes_[n.a].needs_grad) {
          double *dA = grd(n.a);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t p = 0; p < kk; ++p) {
              double acc = 0.0;
              for (std::size_t c = 0; c < nn; ++c)
                acc += g[r * nn + c] * B[p * nn + c];
              dA[r * kk + p] += acc;
            }
        }
        if (nodes_[n.b].needs_grad) {
          double *dB = grd(n.b);
          for (std::size_t p = 0; p < kk; ++p)
            for (std::size_t c = 0; c < nn; ++c) {
              double acc = 0.0;
              for (std::size_t r = 0; r < m; ++r)
                acc += A[r * kk + p] * g[r * nn + c];
              dB[p * nn + c] += acc;
            }
        }
        break;
      }
      case OpKind::affine: {
        const Shape sw = shape_of(n.a);
        const std::size_t m = sw.rows, kk = sw.cols;
        const double *W = val(n.a), *X = val(n.b);
        if (nodes_[n.a].needs_grad) {
          double *dW = grd(n.a);
          for (std::size_t r = 0; r < m; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            double *row = dW + r * kk;
            for (std::size_t p = 0; p < kk; ++p) row[p] += gr * X[p];
          }
        }
        if (nodes_[n.b].needs_grad) {
          double *dX = grd(n.b);
          for (std::size_t r = 0; r < m; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            const double *row = W + r * kk;
            for (std::size_t p = 0; p < kk; ++p) dX[p] += gr * row[p];
          }
        }
        if (nodes_[n.c].needs_grad) {
          double *dB = grd(n.c);
          for (std::size_t r = 0; r < m; ++r) dB[r] += g[r];
        }
        break;
      }
      case OpKind::add: {
        if (nodes_[n.a].needs_grad) {
          double *d = grd(n.a);
          for (std::size_t j = 0; j < e; ++j) d[j] += g[j];
        }
        if (nodes_[n.b].needs_grad) {
          double *d = grd(n.b);
          for (std::size_t j = 0; j < e; ++j) d[j] += g[j];
        }
        break;
      }
      case OpKind::sub: {
        if (nodes_[n.a].needs_grad) {
          double *d = grd(n.a);
          for (std::size_t j = 0; j < e; ++j) d[j] += g[j];
        }
        if (nodes_[n.b].needs_grad) {
          double *d = grd(n.b);
          for (std::size_t j = 0; j < e; ++j) d[j] -= g[j];
        }
        break;
      }
      case OpKind::hadamard: {
        const double *x = val(n.a), *y = val(n.b);
        if (nodes_[n.a].needs_grad) {
          double *d = grd(n.a);
          for (std::size_t j = 0; j < e; ++j) d[j] += g[j] * y[j];
        }
        if (nodes_[n.b].needs_grad) {
          double *d = grd(n.b);
          for (std::size_t j = 0; j < e; ++j) d[j] += g[j] * x[j];
        }
        break;
      }
      case OpKind::div: {
        const double *x = val(n.a), *y = val(n.b);
        if (nodes_[n.a].needs_grad) {
          double *d = grd(n.a);
          for (std::size_t j = 0; j < e; ++j) d[j] += g[j] / y[j];
        }
        if (nodes_[n.b].needs_grad) {
          double *d = grd(n.b);
          for (std::size_t j = 0; j < e; ++j)
            d[j] -= g[j] * x[j] / (y[j] * y[j]);
        }
        break;
      }
      case OpKind::tanh: {
        const double *y = val(i);
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j] * (1.0 - y[j] * y[j]);
        break;
      }
      case OpKind::sigmoid: {
        const double *y = val(i);
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j] * y[j] * (1.0 - y[j]);
        break;
      }
      case OpKind::softplus: {
        const double *x = val(n.a);
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j] * stable_sigmoid(x[j]);
        break;
      }
      case OpKind::exp: {
        const double *y = val(i);
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j] * y[j];
        break;
      }
      case OpKind::log: {
        const double *x = val(n.a);
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j] / x[j];
        break;
      }
      case OpKind::square: {
        const double *x = val(n.a);
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += 2.0 * g[j] * x[j];
        break;
      }
      case OpKind::concat: {
        const std::size_t ea = shape_of(n.a).size();
        if (nodes_[n.a].needs_grad) {
          double *d = grd(n.a);
          for (std::size_t j = 0; j < ea; ++j) d[j] += g[j];
        }
        if (nodes_[n.b].needs_grad) {
          double *d = grd(n.b);
          for (std::size_t j = ea; j < e; ++j) d[j - ea] += g[j];
        }
        break;
      }
      case OpKind::slice: {
        double *d = grd(n.a) + n.aux * n.cols;
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j];
        break;
      }
      case OpKind::sum: {
        double *d = grd(n.a);
        const std::size_t ea = shape_of(n.a).size();
        for (std::size_t j = 0; j < ea; ++j) d[j] += g[0];
        break;
      }
      case OpKind::scale: {
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += n.scalar * g[j];
        break;
      }
      case OpKind::add_scalar: {
        double *d = grd(n.a);
        for (std::size_t j = 0; j < e; ++j) d[j] += g[j];
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------

double grad_check(const GraphBuilder &builder, ParamStore &store, double step) {
  Graph g;
  const NodeId root = builder(g, store);
  if (!std::isfinite(g.item(root)))
    throw NumericError("grad_check: builder produced a non-finite loss");
  std::vector<double> analytic(store.total_size(), 0.0);
  g.backward(root, analytic);

  auto eval = [&]() {
    Graph h;
    const double v = h.item(builder(h, store));
    if (!std::isfinite(v))
      throw NumericError("grad_check: builder produced a non-finite loss");
    return v;
  };

  double worst = 0.0;
  auto values = store.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = eval();
    values[i] = saved - step;
    const double down = eval();
    values[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(fd), kGradCheckFloor});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

}  // namespace ctrnn
