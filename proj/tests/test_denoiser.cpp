#include <doctest.h>

#include <cmath>

#include "pocketcm/consistency.hpp"
#include "pocketcm/denoiser.hpp"
#include "pocketcm/mol.hpp"
#include "pocketcm/rng.hpp"

using namespace pocketcm;

namespace {

struct Fixture {
  DenoiserConfig config;
  ParamSet params;
  TrainItem item;

  explicit Fixture(std::uint64_t seed, bool zero_gate = false, std::size_t hidden = 32,
                   std::size_t layers = 2) {
    config.hidden = hidden;
    config.layers = layers;
    config.zero_init_gate = zero_gate;
    Rng rng = Rng::substream(seed, "init");
    params = init_denoiser_params(config, rng);
    SynthesizedComplex sc = synthesize_complex(seed);
    item = make_train_item(build_context(sc.graph, sc.scaffold_mask));
  }
};

void random_rotation(Rng& rng, double R[3][3]) {
  double a[3], b[3];
  for (int i = 0; i < 3; ++i) a[i] = rng.normal();
  double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  for (int i = 0; i < 3; ++i) a[i] /= na;
  for (int i = 0; i < 3; ++i) b[i] = rng.normal();
  double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  for (int i = 0; i < 3; ++i) b[i] -= d * a[i];
  double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  for (int i = 0; i < 3; ++i) b[i] /= nb;
  double c[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  for (int i = 0; i < 3; ++i) {
    R[i][0] = a[i];
    R[i][1] = b[i];
    R[i][2] = c[i];
  }
}

Tensor rotate_rows(const Tensor& x, const double R[3][3]) {
  Tensor out = x;
  for (std::size_t r = 0; r < x.shape[0]; ++r) {
    for (int i = 0; i < 3; ++i)
      out.at(r, i) = R[i][0] * x.at(r, 0) + R[i][1] * x.at(r, 1) + R[i][2] * x.at(r, 2);
  }
  return out;
}

MolecularContext rotate_context(const MolecularContext& ctx, const double R[3][3]) {
  MolecularContext out = ctx;
  for (AtomRecord& a : out.fg_atoms) {
    auto p = a.position;
    for (int i = 0; i < 3; ++i) a.position[i] = R[i][0] * p[0] + R[i][1] * p[1] + R[i][2] * p[2];
  }
  for (AtomRecord& a : out.pocket_atoms) {
    auto p = a.position;
    for (int i = 0; i < 3; ++i) a.position[i] = R[i][0] * p[0] + R[i][1] * p[1] + R[i][2] * p[2];
  }
  out.rebuild_derived();
  return out;
}

ScaffoldState noised_state(const TrainItem& item, double t, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "noise");
  ScaffoldState z;
  z.coords = item.scaffold.coords;
  z.features = item.scaffold.features;
  Tensor ex({z.coords.shape[0], 3});
  for (double& v : ex.values) v = rng.normal();
  subtract_com_inplace(ex);
  for (std::size_t i = 0; i < z.coords.values.size(); ++i) z.coords.values[i] += t * ex.values[i];
  for (double& v : z.features.values) v += t * rng.normal();
  return z;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  double scale = 0.0;
  for (double v : a.values) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.values.size(); ++i)
    worst = std::max(worst, std::abs(a.values[i] - b.values[i]) / (scale + 1e-12));
  return worst;
}

}  // namespace

TEST_CASE("embed_inputs") {
  Fixture f(21);
  ScaffoldState z = noised_state(f.item, 0.7, 1);

  SUBCASE("identical call is bit-identical") {
    Tensor a = embed_inputs(z, f.item.context, 0.7, f.params, f.config);
    Tensor b = embed_inputs(z, f.item.context, 0.7, f.params, f.config);
    CHECK(a.values == b.values);
  }
  SUBCASE("identical nodes embed identically") {
    ScaffoldState two;
    two.coords = Tensor({2, 3}, 0.0);
    two.features = Tensor({2, kLigandElementCount}, 0.0);
    two.features.at(0, 0) = 1.0;
    two.features.at(1, 0) = 1.0;
    Tensor e = embed_inputs(two, f.item.context, 0.5, f.params, f.config);
    for (std::size_t c = 0; c < f.config.hidden; ++c) CHECK(e.at(0, c) == e.at(1, c));
  }
  SUBCASE("changing t changes every node embedding") {
    Tensor a = embed_inputs(z, f.item.context, 0.7, f.params, f.config);
    Tensor b = embed_inputs(z, f.item.context, 1.9, f.params, f.config);
    for (std::size_t r = 0; r < a.shape[0]; ++r) {
      double diff = 0.0;
      for (std::size_t c = 0; c < a.shape[1]; ++c) diff += std::abs(a.at(r, c) - b.at(r, c));
      CHECK(diff > 0.0);
    }
  }
  SUBCASE("t must be positive") {
    CHECK_THROWS_AS(embed_inputs(z, f.item.context, 0.0, f.params, f.config), std::invalid_argument);
  }
}

TEST_CASE("egnn_layer") {
  Fixture f(33);
  const DenoiserGraph& g = f.item.graph;
  Tensor emb = embed_inputs(noised_state(f.item, 0.4, 2), f.item.context, 0.4, f.params, f.config);
  Tensor coords({g.total_nodes(), 3});
  Rng rng(5);
  for (double& v : coords.values) v = rng.normal();
  std::vector<std::uint8_t> movable(g.total_nodes(), 0);
  for (std::size_t i = 0; i < g.n_scaffold; ++i) movable[i] = 1;

  SUBCASE("zero gate weights leave coordinates unchanged") {
    Fixture z(33, /*zero_gate=*/true);
    EgnnLayerResult out = egnn_layer(emb, coords, g.src, g.dst, movable, z.params, 0, z.config);
    CHECK(out.coordinates.values == coords.values);
  }
  SUBCASE("context rows never move") {
    EgnnLayerResult out = egnn_layer(emb, coords, g.src, g.dst, movable, f.params, 0, f.config);
    for (std::size_t i = g.n_scaffold; i < g.total_nodes(); ++i)
      for (std::size_t c = 0; c < 3; ++c) CHECK(out.coordinates.at(i, c) == coords.at(i, c));
  }
  SUBCASE("rotation equivariance within 1e-9") {
    Rng rr(9);
    double R[3][3];
    random_rotation(rr, R);
    EgnnLayerResult base = egnn_layer(emb, coords, g.src, g.dst, movable, f.params, 0, f.config);
    EgnnLayerResult rot =
        egnn_layer(emb, rotate_rows(coords, R), g.src, g.dst, movable, f.params, 0, f.config);
    CHECK(max_rel_err(rotate_rows(base.coordinates, R), rot.coordinates) < 1e-9);
    CHECK(max_rel_err(base.embeddings, rot.embeddings) < 1e-12);
  }
  SUBCASE("permutation equivariance") {
    const std::size_t n = g.total_nodes();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = (i + 3) % n;  // relabeling
    Tensor emb_p({n, emb.shape[1]});
    Tensor coords_p({n, 3});
    std::vector<std::uint8_t> movable_p(n);
    for (std::size_t i = 0; i < n; ++i) {
      movable_p[perm[i]] = movable[i];
      for (std::size_t c = 0; c < emb.shape[1]; ++c) emb_p.at(perm[i], c) = emb.at(i, c);
      for (std::size_t c = 0; c < 3; ++c) coords_p.at(perm[i], c) = coords.at(i, c);
    }
    std::vector<std::size_t> src_p(g.src.size()), dst_p(g.dst.size());
    for (std::size_t k = 0; k < g.src.size(); ++k) {
      src_p[k] = perm[g.src[k]];
      dst_p[k] = perm[g.dst[k]];
    }
    EgnnLayerResult base = egnn_layer(emb, coords, g.src, g.dst, movable, f.params, 0, f.config);
    EgnnLayerResult permuted =
        egnn_layer(emb_p, coords_p, src_p, dst_p, movable_p, f.params, 0, f.config);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(permuted.coordinates.at(perm[i], c) ==
              doctest::Approx(base.coordinates.at(i, c)).epsilon(1e-11));
      for (std::size_t c = 0; c < emb.shape[1]; ++c)
        CHECK(permuted.embeddings.at(perm[i], c) ==
              doctest::Approx(base.embeddings.at(i, c)).epsilon(1e-11));
    }
  }
  SUBCASE("zero-distance pair contributes no update") {
    Tensor two_emb({2, f.config.hidden}, 0.3);
    Tensor two_coords({2, 3}, 1.0);  // coincident atoms
    EgnnLayerResult out = egnn_layer(two_emb, two_coords, {0, 1}, {1, 0}, {1, 1}, f.params, 0, f.config);
    CHECK(out.coordinates.values == two_coords.values);
  }
}

TEST_CASE("denoiser_forward") {
  Fixture f(44);
  ScaffoldState z = noised_state(f.item, 1.3, 3);

  SUBCASE("output shapes match input shapes") {
    ScaffoldState out = denoiser_forward(z, 1.3, f.item.context, f.params, f.config, &f.item.graph);
    CHECK(out.coords.shape == z.coords.shape);
    CHECK(out.features.shape == z.features.shape);
  }
  SUBCASE("end-to-end rotation equivariance, invariant features") {
    Rng rr(17);
    ScaffoldState base = denoiser_forward(z, 1.3, f.item.context, f.params, f.config);
    for (int rep = 0; rep < 10; ++rep) {
      double R[3][3];
      random_rotation(rr, R);
      ScaffoldState zr;
      zr.coords = rotate_rows(z.coords, R);
      zr.features = z.features;
      MolecularContext ctx_r = rotate_context(f.item.context, R);
      ScaffoldState rot = denoiser_forward(zr, 1.3, ctx_r, f.params, f.config);
      CHECK(max_rel_err(rotate_rows(base.coords, R), rot.coords) < 1e-9);
      CHECK(max_rel_err(base.features, rot.features) < 1e-9);
    }
  }
  SUBCASE("scaffold output is re-centred") {
    ScaffoldState out = denoiser_forward(z, 2.9, f.item.context, f.params, f.config, &f.item.graph);
    double com[3] = {0, 0, 0};
    for (std::size_t i = 0; i < out.coords.shape[0]; ++i)
      for (std::size_t c = 0; c < 3; ++c) com[c] += out.coords.at(i, c);
    for (double v : com) CHECK(std::abs(v) / static_cast<double>(out.coords.shape[0]) < 1e-12);
  }
  SUBCASE("gradient of coordinate MSE passes the finite-difference oracle") {
    Fixture small(55, false, 16, 2);
    ScaffoldState zs = noised_state(small.item, 0.8, 4);
    Tensor target = small.item.scaffold.coords;

    auto loss_value = [&](const ParamSet& p) {
      Tape tape;
      BoundParams bound = BoundParams::bind(tape, p);
      DenoiserNodes out =
          denoiser_forward_tape(tape, bound, p, small.config, small.item.graph,
                                tape.constant(zs.coords), tape.constant(zs.features),
                                small.item.context, 0.8);
      return tape.value(tape.mse(out.x, tape.constant(target))).scalar_value();
    };
    Tape tape;
    BoundParams bound = BoundParams::bind(tape, small.params);
    DenoiserNodes out =
        denoiser_forward_tape(tape, bound, small.params, small.config, small.item.graph,
                              tape.constant(zs.coords), tape.constant(zs.features),
                              small.item.context, 0.8);
    int loss = tape.mse(out.x, tape.constant(target));
    tape.backward(loss);
    GradMap analytic = bound.grads(tape, small.params);
    Rng rng(123);
    CHECK(finite_diff_check(loss_value, small.params, analytic, 1e-5, 6, rng) < 1e-4);
  }
}
