#include "pocketcm/denoiser.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace pocketcm {

namespace {

std::string layer_name(std::size_t l, const char* block, const char* which) {
  return "layer" + std::to_string(l) + "." + block + "." + which;
}

Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out, double gain = 1.0) {
  Tensor w({fan_in, fan_out});
  const double scale = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : w.values) v = scale * rng.normal();
  return w;
}

struct LayerIds {
  int edge_w1, edge_b1, edge_w2, edge_b2;
  int gate_w1, gate_b1, gate_w2, gate_b2;
  int node_w1, node_b1, node_w2, node_b2;
};

LayerIds bind_layer(const BoundParams& bound, const ParamSet& params, std::size_t l) {
  return LayerIds{
      bound.id(params, layer_name(l, "edge", "w1")), bound.id(params, layer_name(l, "edge", "b1")),
      bound.id(params, layer_name(l, "edge", "w2")), bound.id(params, layer_name(l, "edge", "b2")),
      bound.id(params, layer_name(l, "gate", "w1")), bound.id(params, layer_name(l, "gate", "b1")),
      bound.id(params, layer_name(l, "gate", "w2")), bound.id(params, layer_name(l, "gate", "b2")),
      bound.id(params, layer_name(l, "node", "w1")), bound.id(params, layer_name(l, "node", "b1")),
      bound.id(params, layer_name(l, "node", "w2")), bound.id(params, layer_name(l, "node", "b2"))};
}

struct LayerOut {
  int embeddings;
  int coordinates;
  int distances;  // pre-guard edge distances, for zero-distance diagnostics
};

// m_ij = MLP(s_i, s_j, d_ij, d_ij^2); s_i += MLP(s_i, sum_j m_ij);
// x_i += sum_j phi(m_ij) (x_i - x_j)/d_ij for movable rows, phi clamped.
LayerOut egnn_layer_tape(Tape& tape, const LayerIds& ids, int e_id, int x_id,
                         const std::vector<std::size_t>& src, const std::vector<std::size_t>& dst,
                         int movable_col_id, double gate_clamp) {
  const std::size_t n = tape.value(e_id).shape[0];
  // Aggregations are degree-normalized; an unnormalized sum over the dense
  // scaffold neighbourhoods compounds across residual layers.
  Tensor inv_degree({n, 1}, 0.0);
  for (std::size_t s : src) inv_degree.values[s] += 1.0;
  for (double& v : inv_degree.values) v = v > 0.0 ? 1.0 / v : 0.0;
  int inv_deg_id = tape.constant(inv_degree);
  int xs = tape.gather_rows(x_id, src);
  int xd = tape.gather_rows(x_id, dst);
  int diff = tape.sub(xs, xd);
  int d = tape.l2norm_rows(diff);
  int rg = tape.recip_guard(d);
  int dir = tape.mul(diff, rg);  // zero vector for zero-distance pairs
  int d2 = tape.mul(d, d);

  int m_in = tape.concat_cols({tape.gather_rows(e_id, src), tape.gather_rows(e_id, dst), d, d2});
  int m = tape.silu(tape.affine(m_in, ids.edge_w1, ids.edge_b1));
  m = tape.silu(tape.affine(m, ids.edge_w2, ids.edge_b2));

  int phi = tape.silu(tape.affine(m, ids.gate_w1, ids.gate_b1));
  phi = tape.clamp(tape.affine(phi, ids.gate_w2, ids.gate_b2), -gate_clamp, gate_clamp);

  int upd = tape.mul(tape.scatter_sum_rows(tape.mul(phi, dir), src, n), inv_deg_id);
  int x_next = tape.add(x_id, tape.mul(upd, movable_col_id));

  int agg = tape.mul(tape.scatter_sum_rows(m, src, n), inv_deg_id);
  int n_in = tape.concat_cols({e_id, agg});
  int dn = tape.silu(tape.affine(n_in, ids.node_w1, ids.node_b1));
  dn = tape.affine(dn, ids.node_w2, ids.node_b2);
  int e_next = tape.add(e_id, dn);

  return {e_next, x_next, d};
}

}  // namespace

Tensor time_features(double t, std::size_t count) {
  Tensor f({1, count});
  const double c = std::log(t);
  const std::size_t pairs = count / 2;
  for (std::size_t k = 0; k < pairs; ++k) {
    const double freq = 0.25 * std::pow(2.0, static_cast<double>(k));
    f.values[2 * k] = std::sin(freq * c);
    f.values[2 * k + 1] = std::cos(freq * c);
  }
  return f;
}

ParamSet init_denoiser_params(const DenoiserConfig& config, Rng& rng) {
  const std::size_t d = config.hidden;
  ParamSet p;
  p["embed.scaffold.w"] = init_weight(rng, config.scaffold_features(), d);
  p["embed.scaffold.b"] = Tensor({1, d}, 0.0);
  p["embed.fg.w"] = init_weight(rng, config.fg_features(), d);
  p["embed.fg.b"] = Tensor({1, d}, 0.0);
  p["embed.pocket.w"] = init_weight(rng, config.pocket_features(), d);
  p["embed.pocket.b"] = Tensor({1, d}, 0.0);
  p["time.w"] = init_weight(rng, config.time_features, d);
  p["time.b"] = Tensor({1, d}, 0.0);
  for (std::size_t l = 0; l < config.layers; ++l) {
    p[layer_name(l, "edge", "w1")] = init_weight(rng, 2 * d + 2, d);
    p[layer_name(l, "edge", "b1")] = Tensor({1, d}, 0.0);
    p[layer_name(l, "edge", "w2")] = init_weight(rng, d, d);
    p[layer_name(l, "edge", "b2")] = Tensor({1, d}, 0.0);
    p[layer_name(l, "gate", "w1")] = init_weight(rng, d, d);
    p[layer_name(l, "gate", "b1")] = Tensor({1, d}, 0.0);
    p[layer_name(l, "gate", "w2")] =
        config.zero_init_gate ? Tensor({d, 1}, 0.0) : init_weight(rng, d, 1);
    p[layer_name(l, "gate", "b2")] = Tensor({1, 1}, 0.0);
    p[layer_name(l, "node", "w1")] = init_weight(rng, 2 * d, d);
    p[layer_name(l, "node", "b1")] = Tensor({1, d}, 0.0);
    p[layer_name(l, "node", "w2")] = init_weight(rng, d, d, 0.5);
    p[layer_name(l, "node", "b2")] = Tensor({1, d}, 0.0);
  }
  p["out.w1"] = init_weight(rng, d, d);
  p["out.b1"] = Tensor({1, d}, 0.0);
  p["out.w2"] = init_weight(rng, d, config.scaffold_features());
  p["out.b2"] = Tensor({1, config.scaffold_features()}, 0.0);
  return p;
}

DenoiserGraph DenoiserGraph::build(std::size_t n_scaffold, const MolecularContext& context) {
  DenoiserGraph g;
  g.n_scaffold = n_scaffold;
  g.n_fg = context.fg_atoms.size();
  g.n_pocket = context.pocket_atoms.size();
  const std::size_t n = g.total_nodes();
  auto is_scaffold = [&](std::size_t i) { return i < n_scaffold; };
  auto context_pos = [&](std::size_t i) {
    const std::size_t k = i - n_scaffold;
    return k < g.n_fg ? context.fg_atoms[k].position : context.pocket_atoms[k - g.n_fg].position;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (is_scaffold(i) || is_scaffold(j)) {
        g.src.push_back(i);
        g.dst.push_back(j);
        continue;
      }
      const auto& a = context_pos(i);
      const auto& b = context_pos(j);
      const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
      if (std::sqrt(dx * dx + dy * dy + dz * dz) <= kEdgeCutoff) {
        g.src.push_back(i);
        g.dst.push_back(j);
      }
    }
  return g;
}

DenoiserNodes denoiser_forward_tape(Tape& tape, const BoundParams& bound, const ParamSet& params,
                                    const DenoiserConfig& config, const DenoiserGraph& graph,
                                    int x_id, int h_id, const MolecularContext& context, double t) {
  if (t <= 0.0) throw std::invalid_argument("denoiser_forward: t must be positive");
  const std::size_t n_s = graph.n_scaffold;
  const std::size_t n = graph.total_nodes();
  const double c_in = 1.0 / std::sqrt(t * t + config.sigma_data * config.sigma_data);

  int e_s = tape.affine(tape.scale(h_id, c_in), bound.id(params, "embed.scaffold.w"),
                        bound.id(params, "embed.scaffold.b"));
  std::vector<int> blocks{e_s};
  if (graph.n_fg)
    blocks.push_back(tape.affine(tape.constant(context.fg_features), bound.id(params, "embed.fg.w"),
                                 bound.id(params, "embed.fg.b")));
  if (graph.n_pocket)
    blocks.push_back(tape.affine(tape.constant(context.pocket_features),
                                 bound.id(params, "embed.pocket.w"), bound.id(params, "embed.pocket.b")));
  int e = blocks.size() > 1 ? tape.concat_rows(blocks) : blocks[0];
  int temb = tape.affine(tape.constant(time_features(t, config.time_features)),
                         bound.id(params, "time.w"), bound.id(params, "time.b"));
  e = tape.add(e, temb);

  std::vector<int> coord_blocks{x_id};
  if (graph.n_fg) coord_blocks.push_back(tape.constant(context.fg_coords));
  if (graph.n_pocket) coord_blocks.push_back(tape.constant(context.pocket_coords));
  int x = coord_blocks.size() > 1 ? tape.concat_rows(coord_blocks) : coord_blocks[0];
  int xs = tape.scale(x, c_in);

  Tensor movable({n, 1}, 0.0);
  for (std::size_t i = 0; i < n_s; ++i) movable.values[i] = 1.0;
  int movable_id = tape.constant(movable);

  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerIds ids = bind_layer(bound, params, l);
    LayerOut out = egnn_layer_tape(tape, ids, e, xs, graph.src, graph.dst, movable_id, config.gate_clamp);
    for (double dv : tape.value(out.distances).values)
      if (dv <= 1e-12) {
        std::fprintf(stderr, "[denoiser] zero-distance pair at layer %zu, contribution dropped\n", l);
        break;
      }
    e = out.embeddings;
    xs = out.coordinates;
    if (!tape.value(e).all_finite() || !tape.value(xs).all_finite())
      throw std::runtime_error("denoiser_forward: non-finite intermediate at layer " + std::to_string(l));
  }

  int x_out = tape.slice_rows(tape.scale(xs, 1.0 / c_in), 0, n_s);
  int mean = tape.scale(tape.sum_rows(x_out), 1.0 / static_cast<double>(n_s));
  int x_centered = tape.sub(x_out, mean);

  int h_emb = tape.slice_rows(e, 0, n_s);
  int h_out = tape.silu(tape.affine(h_emb, bound.id(params, "out.w1"), bound.id(params, "out.b1")));
  h_out = tape.affine(h_out, bound.id(params, "out.w2"), bound.id(params, "out.b2"));

  return {x_centered, h_out};
}

ScaffoldState denoiser_forward(const ScaffoldState& z_t, double t, const MolecularContext& context,
                               const ParamSet& params, const DenoiserConfig& config,
                               const DenoiserGraph* cached_graph) {
  DenoiserGraph local;
  if (!cached_graph) {
    local = DenoiserGraph::build(z_t.atom_count(), context);
    cached_graph = &local;
  }
  Tape tape;
  BoundParams bound = BoundParams::bind(tape, params);
  int x_id = tape.constant(z_t.coords);
  int h_id = tape.constant(z_t.features);
  DenoiserNodes out =
      denoiser_forward_tape(tape, bound, params, config, *cached_graph, x_id, h_id, context, t);
  ScaffoldState result;
  result.coords = tape.value(out.x);
  result.features = tape.value(out.h);
  return result;
}

Tensor embed_inputs(const ScaffoldState& z_t, const MolecularContext& context, double t,
                    const ParamSet& params, const DenoiserConfig& config) {
  if (t <= 0.0) throw std::invalid_argument("embed_inputs: t must be positive");
  const double c_in = 1.0 / std::sqrt(t * t + config.sigma_data * config.sigma_data);
  Tape tape;
  BoundParams bound = BoundParams::bind(tape, params);
  int e_s = tape.affine(tape.scale(tape.constant(z_t.features), c_in),
                        bound.id(params, "embed.scaffold.w"), bound.id(params, "embed.scaffold.b"));
  std::vector<int> blocks{e_s};
  if (!context.fg_atoms.empty())
    blocks.push_back(tape.affine(tape.constant(context.fg_features), bound.id(params, "embed.fg.w"),
                                 bound.id(params, "embed.fg.b")));
  if (!context.pocket_atoms.empty())
    blocks.push_back(tape.affine(tape.constant(context.pocket_features),
                                 bound.id(params, "embed.pocket.w"), bound.id(params, "embed.pocket.b")));
  int e = blocks.size() > 1 ? tape.concat_rows(blocks) : blocks[0];
  int temb = tape.affine(tape.constant(time_features(t, config.time_features)),
                         bound.id(params, "time.w"), bound.id(params, "time.b"));
  return tape.value(tape.add(e, temb));
}

EgnnLayerResult egnn_layer(const Tensor& embeddings, const Tensor& coordinates,
                           const std::vector<std::size_t>& src, const std::vector<std::size_t>& dst,
                           const std::vector<std::uint8_t>& movable, const ParamSet& params,
                           std::size_t layer_index, const DenoiserConfig& config) {
  if (src.size() != dst.size()) throw std::invalid_argument("egnn_layer: src/dst size mismatch");
  for (std::size_t k = 0; k < src.size(); ++k)
    if (src[k] >= embeddings.shape[0] || dst[k] >= embeddings.shape[0])
      throw std::invalid_argument("egnn_layer: edge index out of range");
  Tape tape;
  BoundParams bound = BoundParams::bind(tape, params);
  LayerIds ids = bind_layer(bound, params, layer_index);
  Tensor mask({embeddings.shape[0], 1}, 0.0);
  for (std::size_t i = 0; i < movable.size(); ++i) mask.values[i] = movable[i] ? 1.0 : 0.0;
  LayerOut out = egnn_layer_tape(tape, ids, tape.constant(embeddings), tape.constant(coordinates), src,
                                 dst, tape.constant(mask), config.gate_clamp);
  return {tape.value(out.embeddings), tape.value(out.coordinates)};
}

}  // namespace pocketcm
