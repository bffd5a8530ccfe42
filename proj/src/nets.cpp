// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/nets.hpp"

#include <cmath>

namespace ctrnn::nets {

std::size_t ensure_param(ParamStore &store, const std::string &name,
                         Shape shape, double bound, Rng *rng) {
  if (store.contains(name)) {
    const std::size_t idx = store.index_of(name);
    if (store.entry(idx).shape != shape)
      throw ShapeError("parameter " + name + " has shape " +
                       store.entry(idx).shape.str() + ", expected " +
                       shape.str());
    return idx;
  }
  if (rng == nullptr)
    throw std::invalid_argument("missing parameter " + name +
                                " and no generator to initialise it");
  return store.add_uniform(name, shape, bound, *rng);
}

namespace {
double init_bound(std::size_t fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
}
}  // namespace

// ---------------------------------------------------------------------------

Mlp::Mlp(ParamStore &store, const std::string &prefix, MlpSpec spec, Rng *rng)
    : spec_(std::move(spec)) {
  if (spec_.widths.size() < 2)
    throw std::invalid_argument("MlpSpec needs an input width and at least one layer");
  for (auto w : spec_.widths)
    if (w == 0) throw std::invalid_argument("MlpSpec widths must be positive");
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const std::size_t in = spec_.widths[l], out = spec_.widths[l + 1];
    const double bound = init_bound(in);
    w_.push_back(ensure_param(store, prefix + "/W" + std::to_string(l),
                              {out, in}, bound, rng));
    b_.push_back(ensure_param(store, prefix + "/b" + std::to_string(l),
                              {out, 1}, bound, rng));
  }
}

Mlp::Bound Mlp::bind(Graph &g, const ParamStore &store) const {
  Bound p;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    p.w.push_back(g.param(store, w_[l]));
    p.b.push_back(g.param(store, b_[l]));
  }
  return p;
}

NodeId Mlp::forward(Graph &g, const Bound &p, NodeId x) const {
  const std::size_t layers = p.w.size();
  for (std::size_t l = 0; l < layers; ++l) {
    x = g.affine(p.w[l], x, p.b[l]);
    const bool last = l + 1 == layers;
    if (!last || spec_.final_activation == FinalActivation::tanh) x = g.tanh(x);
  }
  return x;
}

// ---------------------------------------------------------------------------

GruCell::GruCell(ParamStore &store, const std::string &prefix,
                 std::size_t input_dim, std::size_t hidden_dim, Rng *rng)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  if (hidden_dim == 0) throw std::invalid_argument("GRU hidden_dim must be positive");
  const double bound = init_bound(input_dim + hidden_dim);
  const Shape w{hidden_dim, input_dim}, u{hidden_dim, hidden_dim},
      b{hidden_dim, 1};
  auto mk = [&](const char *n, Shape s) {
    return ensure_param(store, prefix + "/" + n, s, bound, rng);
  };
  if (input_dim > 0) wr_ = mk("W_r", w);
  ur_ = mk("U_r", u);
  br_ = mk("b_r", b);
  if (input_dim > 0) wu_ = mk("W_u", w);
  uu_ = mk("U_u", u);
  bu_ = mk("b_u", b);
  if (input_dim > 0) wc_ = mk("W_c", w);
  uc_ = mk("U_c", u);
  bc_ = mk("b_c", b);
}

GruCell::Bound GruCell::bind(Graph &g, const ParamStore &store) const {
  Bound p{};
  if (wr_) p.wr = g.param(store, *wr_);
  p.ur = g.param(store, ur_);
  p.br = g.param(store, br_);
  if (wu_) p.wu = g.param(store, *wu_);
  p.uu = g.param(store, uu_);
  p.bu = g.param(store, bu_);
  if (wc_) p.wc = g.param(store, *wc_);
  p.uc = g.param(store, uc_);
  p.bc = g.param(store, bc_);
  return p;
}

GruCell::Gates GruCell::gates(Graph &g, const Bound &p, std::optional<NodeId> x,
                              NodeId h) const {
  if (x.has_value() != p.wr.has_value())
    throw ShapeError(input_dim_ == 0 ? "GRU cell: has no input but one was given"
                                     : "GRU cell: input required");
  auto pre = [&](std::optional<NodeId> w, NodeId u, NodeId b, NodeId state) {
    NodeId acc = g.affine(u, state, b);
    if (w) acc = g.add(g.matmul(*w, *x), acc);
    return acc;
  };
  const NodeId r = g.sigmoid(pre(p.wr, p.ur, p.br, h));
  const NodeId u = g.sigmoid(pre(p.wu, p.uu, p.bu, h));
  const NodeId c = g.tanh(pre(p.wc, p.uc, p.bc, g.hadamard(r, h)));
  return {r, u, c};
}

NodeId GruCell::step(Graph &g, const Bound &p, std::optional<NodeId> x,
                     NodeId h) const {
  const Gates gt = gates(g, p, x, h);
  // (1 - u) h + u c = h + u (c - h)
  return g.add(h, g.hadamard(gt.u, g.sub(gt.c, h)));
}

// ---------------------------------------------------------------------------

LstmCell::LstmCell(ParamStore &store, const std::string &prefix,
                   std::size_t input_dim, std::size_t hidden_dim, Rng *rng)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  if (hidden_dim == 0 || input_dim == 0)
    throw std::invalid_argument("LSTM dims must be positive");
  const double bound = init_bound(input_dim + hidden_dim);
  const Shape w{hidden_dim, input_dim}, u{hidden_dim, hidden_dim},
      b{hidden_dim, 1};
  const char *names[12] = {"W_f", "U_f", "b_f", "W_i", "U_i", "b_i",
                           "W_o", "U_o", "b_o", "W_g", "U_g", "b_g"};
  for (int k = 0; k < 12; ++k) {
    const Shape s = k % 3 == 0 ? w : (k % 3 == 1 ? u : b);
    idx_[k] = ensure_param(store, prefix + "/" + names[k], s, bound, rng);
  }
}

LstmCell::Bound LstmCell::bind(Graph &g, const ParamStore &store) const {
  auto P = [&](int k) { return g.param(store, idx_[k]); };
  return {P(0), P(1), P(2), P(3), P(4), P(5),
          P(6), P(7), P(8), P(9), P(10), P(11)};
}

LstmState LstmCell::step(Graph &g, const Bound &p, NodeId x, LstmState s) const {
  auto pre = [&](NodeId w, NodeId u, NodeId b) {
    return g.add(g.matmul(w, x), g.affine(u, s.h, b));
  };
  const NodeId f = g.sigmoid(pre(p.wf, p.uf, p.bf));
  const NodeId i = g.sigmoid(pre(p.wi, p.ui, p.bi));
  const NodeId o = g.sigmoid(pre(p.wo, p.uo, p.bo));
  const NodeId cand = g.tanh(pre(p.wg, p.ug, p.bg));
  const NodeId c = g.add(g.hadamard(f, s.c), g.hadamard(i, cand));
  const NodeId h = g.hadamard(o, g.tanh(c));
  return {h, c};
}

// ---------------------------------------------------------------------------

GruOdeField::GruOdeField(ParamStore &store, const std::string &prefix,
                         std::size_t hidden_dim, std::size_t control_dim,
                         Rng *rng)
    : cell_(store, prefix, control_dim, hidden_dim, rng) {}

NodeId GruOdeField::derivative(Graph &g, const Bound &p, NodeId z,
                               std::optional<NodeId> controls) const {
  const auto gt = cell_.gates(g, p, controls, z);
  const NodeId diff = g.sub(gt.c, z);
  // (1 - u) (c - z)
  return g.sub(diff, g.hadamard(gt.u, diff));
}

// ---------------------------------------------------------------------------

GruFlow::GruFlow(ParamStore &store, const std::string &prefix,
                 std::size_t hidden_dim, std::size_t control_dim, Rng *rng)
    : control_dim_(control_dim),
      cell_(store, prefix, control_dim + 1, hidden_dim, rng) {}

NodeId GruFlow::apply(Graph &g, const Bound &p, NodeId z,
                      std::optional<NodeId> controls, double gap) const {
  if (gap < 0.0) throw std::invalid_argument("GRU flow: negative gap");
  if (controls.has_value() != (control_dim_ > 0))
    throw ShapeError("GRU flow: control vector presence does not match control_dim");
  const NodeId t = g.scalar(gap / 24.0);
  const NodeId x = controls ? g.concat(*controls, t) : t;
  const auto gt = cell_.gates(g, p, x, z);
  const NodeId delta = g.hadamard(gt.u, g.sub(gt.c, z));
  return g.add(z, g.scale(delta, std::tanh(gap)));
}

// ---------------------------------------------------------------------------

OutputHead::OutputHead(ParamStore &store, const std::string &prefix,
                       std::size_t input_dim, Rng *rng)
    : mlp_(store, prefix, {{input_dim, 2}, FinalActivation::none}, rng) {}

HeadOutput OutputHead::forward(Graph &g, const Bound &p, NodeId z) const {
  const NodeId out = mlp_.forward(g, p, z);
  const NodeId mu = g.slice(out, 0, 1);
  const NodeId sigma = g.add_scalar(g.softplus(g.slice(out, 1, 1)), kSigmaFloor);
  return {mu, sigma};
}

}  // namespace ctrnn::nets
