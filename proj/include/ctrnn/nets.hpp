// SPDX-License-Identifier: Apache-2.0
/**
 * @file   nets.hpp
 * @brief  Parameterised building blocks: MLP, GRU and LSTM cells, the GRU-ODE
 *         vector field, the GRU neural flow and the distribution output head.
 *
 * Each block owns indices into a ParamStore. Constructing a block against a
 * store that already holds its entries (a loaded checkpoint) attaches to them
 * after a shape check; otherwise the entries are created with
 * uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation. bind() places the
 * parameter leaves on a Graph once so every step of a rollout reuses them.
 */
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctrnn/diffcore.hpp"

namespace ctrnn::nets {

using Rng = std::mt19937_64;

/// Returns the index of `name`, creating it if absent. `rng` may be null only
/// when the entry is known to exist.
std::size_t ensure_param(ParamStore &store, const std::string &name,
                         Shape shape, double bound, Rng *rng);

enum class FinalActivation { none, tanh };

struct MlpSpec {
  /// Layer widths including the input width; at least one layer.
  std::vector<std::size_t> widths;
  FinalActivation final_activation = FinalActivation::none;
};

class Mlp {
 public:
  struct Bound {
    std::vector<NodeId> w;
    std::vector<NodeId> b;
  };

  Mlp() = default;
  Mlp(ParamStore &store, const std::string &prefix, MlpSpec spec, Rng *rng);

  Bound bind(Graph &g, const ParamStore &store) const;
  /// Affine + tanh stack; the final layer applies spec().final_activation.
  NodeId forward(Graph &g, const Bound &p, NodeId x) const;
  const MlpSpec &spec() const { return spec_; }

 private:
  MlpSpec spec_;
  std::vector<std::size_t> w_;
  std::vector<std::size_t> b_;
};

/// r = sig(Wr x + Ur h + br), u = sig(Wu x + Uu h + bu),
/// c = tanh(Wc x + Uc (r*h) + bc), h' = (1 - u) * h + u * c.
/// input_dim may be zero, in which case the W terms are absent.
class GruCell {
 public:
  struct Bound {
    std::optional<NodeId> wr, wu, wc;
    NodeId ur, br, uu, bu, uc, bc;
  };
  struct Gates {
    NodeId r, u, c;
  };

  GruCell() = default;
  GruCell(ParamStore &store, const std::string &prefix, std::size_t input_dim,
          std::size_t hidden_dim, Rng *rng);

  Bound bind(Graph &g, const ParamStore &store) const;
  Gates gates(Graph &g, const Bound &p, std::optional<NodeId> x, NodeId h) const;
  NodeId step(Graph &g, const Bound &p, std::optional<NodeId> x, NodeId h) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::optional<std::size_t> wr_, wu_, wc_;
  std::size_t ur_ = 0, br_ = 0, uu_ = 0, bu_ = 0, uc_ = 0, bc_ = 0;
};

struct LstmState {
  NodeId h;
  NodeId c;
};

/// Forget/input/output gates with tanh candidate g:
/// c' = f*c + i*g, h' = o*tanh(c').
class LstmCell {
 public:
  struct Bound {
    NodeId wf, uf, bf, wi, ui, bi, wo, uo, bo, wg, ug, bg;
  };

  LstmCell() = default;
  LstmCell(ParamStore &store, const std::string &prefix, std::size_t input_dim,
           std::size_t hidden_dim, Rng *rng);

  Bound bind(Graph &g, const ParamStore &store) const;
  LstmState step(Graph &g, const Bound &p, NodeId x, LstmState s) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::array<std::size_t, 12> idx_{};
};

/// dz/dt = (1 - u(z)) * (c(z) - z) with GRU gates of z; an optional constant
/// control vector enters the gates as the GRU input.
class GruOdeField {
 public:
  using Bound = GruCell::Bound;

  GruOdeField() = default;
  GruOdeField(ParamStore &store, const std::string &prefix,
              std::size_t hidden_dim, std::size_t control_dim, Rng *rng);

  Bound bind(Graph &g, const ParamStore &store) const {
    return cell_.bind(g, store);
  }
  NodeId derivative(Graph &g, const Bound &p, NodeId z,
                    std::optional<NodeId> controls) const;

 private:
  GruCell cell_;
};

/// z' = z + tanh(gap) * u * (c - z), u and c GRU gates over z with input
/// [controls; gap/24]. tanh(0) = 0 makes gap = 0 the identity exactly.
class GruFlow {
 public:
  using Bound = GruCell::Bound;

  GruFlow() = default;
  GruFlow(ParamStore &store, const std::string &prefix, std::size_t hidden_dim,
          std::size_t control_dim, Rng *rng);

  Bound bind(Graph &g, const ParamStore &store) const {
    return cell_.bind(g, store);
  }
  NodeId apply(Graph &g, const Bound &p, NodeId z,
               std::optional<NodeId> controls, double gap) const;

 private:
  std::size_t control_dim_ = 0;
  GruCell cell_;
};

struct HeadOutput {
  NodeId mu;
  NodeId sigma;
};

/// Affine map to (mu, s); sigma = softplus(s) + 1e-4.
class OutputHead {
 public:
  static constexpr double kSigmaFloor = 1e-4;
  using Bound = Mlp::Bound;

  OutputHead() = default;
  OutputHead(ParamStore &store, const std::string &prefix,
             std::size_t input_dim, Rng *rng);

  Bound bind(Graph &g, const ParamStore &store) const {
    return mlp_.bind(g, store);
  }
  HeadOutput forward(Graph &g, const Bound &p, NodeId z) const;

 private:
  Mlp mlp_;
};

}  // namespace ctrnn::nets
