#pragma once

#include <cstddef>
#include <vector>

#include "pocketcm/autodiff.hpp"
#include "pocketcm/mol.hpp"
#include "pocketcm/rng.hpp"
#include "pocketcm/tensor.hpp"

namespace pocketcm {

// EGNN-style denoiser over the joint scaffold+context graph: scalar-gated
// coordinate updates (equivariant) and residual feature updates (invariant).
// Scaffold and context features pass through role-specific input MLPs; the
// time factor is embedded from sinusoidal features of log t and added to
// every node.
struct DenoiserConfig {
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t time_features = 16;  // 8 sin/cos pairs of log t
  double gate_clamp = 3.0;
  double sigma_data = 0.5;  // input scaling 1/sqrt(t^2 + sigma_data^2)
  bool zero_init_gate = true;

  std::size_t scaffold_features() const { return kLigandElementCount; }
  std::size_t fg_features() const { return kLigandElementCount; }
  std::size_t pocket_features() const { return kResidueClassCount; }
};

ParamSet init_denoiser_params(const DenoiserConfig& config, Rng& rng);

// Message-passing topology for one (scaffold size, context) pair. Scaffold
// nodes connect to every other scaffold node and to every context node in
// both directions; context-context edges use the 5 A cutoff on the fixed
// context coordinates. A distance cutoff on heavily noised scaffold
// coordinates would leave the graph empty at high sigma, so scaffold edges
// are coordinate-independent.
struct DenoiserGraph {
  std::size_t n_scaffold = 0, n_fg = 0, n_pocket = 0;
  std::vector<std::size_t> src, dst;

  std::size_t total_nodes() const { return n_scaffold + n_fg + n_pocket; }
  static DenoiserGraph build(std::size_t n_scaffold, const MolecularContext& context);
};

struct DenoiserNodes {
  int x = -1;  // tape id, N_s x 3 (re-centred)
  int h = -1;  // tape id, N_s x 5
};

// Forward pass on an existing tape; x_id / h_id are tape nodes carrying the
// (noised) scaffold coordinates and features.
DenoiserNodes denoiser_forward_tape(Tape& tape, const BoundParams& bound, const ParamSet& params,
                                    const DenoiserConfig& config, const DenoiserGraph& graph,
                                    int x_id, int h_id, const MolecularContext& context, double t);

// Plain evaluation; builds a private tape.
ScaffoldState denoiser_forward(const ScaffoldState& z_t, double t, const MolecularContext& context,
                               const ParamSet& params, const DenoiserConfig& config,
                               const DenoiserGraph* cached_graph = nullptr);

// Role-specific input embeddings plus the shared time embedding (N x d).
Tensor embed_inputs(const ScaffoldState& z_t, const MolecularContext& context, double t,
                    const ParamSet& params, const DenoiserConfig& config);

// One message-passing layer on plain tensors (exposed for direct testing).
// Coordinates move for rows with mask 1 only.
struct EgnnLayerResult {
  Tensor embeddings;
  Tensor coordinates;
};
EgnnLayerResult egnn_layer(const Tensor& embeddings, const Tensor& coordinates,
                           const std::vector<std::size_t>& src, const std::vector<std::size_t>& dst,
                           const std::vector<std::uint8_t>& movable, const ParamSet& params,
                           std::size_t layer_index, const DenoiserConfig& config);

Tensor time_features(double t, std::size_t count);

}  // namespace pocketcm
