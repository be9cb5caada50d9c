#include <doctest.h>

#include <cmath>

#include "pocketcm/metrics.hpp"
#include "pocketcm/rng.hpp"

using namespace pocketcm;

namespace {

AtomRecord atom(Element e, double x, double y, double z, AtomRole role = AtomRole::Scaffold) {
  return AtomRecord{e, {x, y, z}, role};
}

ScaffoldState state_of(const std::vector<AtomRecord>& atoms) {
  ScaffoldState z;
  z.coords = Tensor({atoms.size(), 3});
  z.features = Tensor({atoms.size(), kLigandElementCount}, 0.0);
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) z.coords.at(i, c) = atoms[i].position[c];
    z.features.at(i, static_cast<std::size_t>(atoms[i].element)) = 1.0;
  }
  return z;
}

std::vector<AtomRecord> chain(std::size_t n, double spacing = 1.5) {
  std::vector<AtomRecord> atoms;
  for (std::size_t i = 0; i < n; ++i) atoms.push_back(atom(Element::C, spacing * i, 0, 0));
  return atoms;
}

}  // namespace

TEST_CASE("jsd closed forms") {
  SUBCASE("identical distributions give zero") {
    CHECK(jsd({0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("disjoint supports give ln 2") {
    CHECK(jsd({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("p=(1,0), q=(0.5,0.5) gives 0.215762") {
    CHECK(jsd({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(0.215762).epsilon(1e-5));
  }
  SUBCASE("unnormalized inputs are normalized first") {
    CHECK(jsd({10.0, 0.0}, {5.0, 5.0}) == doctest::Approx(jsd({1.0, 0.0}, {0.5, 0.5})).epsilon(1e-12));
  }
  SUBCASE("symmetric, bounded by ln 2, zero on self") {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> p(6), q(6);
      for (double& v : p) v = rng.uniform();
      for (double& v : q) v = rng.uniform();
      const double ab = jsd(p, q);
      CHECK(ab == doctest::Approx(jsd(q, p)).epsilon(1e-12));
      CHECK(ab >= 0.0);
      CHECK(ab <= std::log(2.0) + 1e-12);
      CHECK(jsd(p, p) == doctest::Approx(0.0).epsilon(1e-15));
    }
  }
  SUBCASE("empty or massless histograms rejected") {
    CHECK_THROWS_AS(jsd({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(jsd({0.0, 0.0}, {1.0, 0.0}), std::invalid_argument);
  }
}

TEST_CASE("evaluate_batch") {
  MolecularContext ctx;
  ctx.pocket_atoms = {atom(Element::Res0, 0, 0, 30.0, AtomRole::Pocket)};
  ctx.rebuild_derived();

  SUBCASE("identical samples have zero diversity") {
    std::vector<std::vector<ScaffoldState>> samples = {{state_of(chain(4)), state_of(chain(4))}};
    EvalReport r = evaluate_batch(samples, {ctx}, {});
    CHECK(r.rows[0].diversity == 0.0);
    CHECK(r.rows[0].connectivity_rate == 1.0);
  }
  SUBCASE("unseen hashes give novelty 1") {
    std::vector<std::vector<ScaffoldState>> samples = {{state_of(chain(3)), state_of(chain(5))}};
    EvalReport r = evaluate_batch(samples, {ctx}, {12345ull});
    CHECK(r.rows[0].novelty == 1.0);
  }
  SUBCASE("training-set hashes give novelty 0") {
    const std::vector<AtomRecord> mol = chain(4);
    std::vector<AtomRecord> with_fg = mol;  // decode adds fg atoms; ctx has none
    std::set<std::uint64_t> hashes = {canonical_hash(with_fg)};
    std::vector<std::vector<ScaffoldState>> samples = {{state_of(mol)}};
    EvalReport r = evaluate_batch(samples, {ctx}, hashes);
    CHECK(r.rows[0].novelty == 0.0);
  }
  SUBCASE("two connected plus two fragmented gives connectivity 0.5") {
    std::vector<AtomRecord> split = {atom(Element::C, 0, 0, 0), atom(Element::C, 5.0, 0, 0)};
    std::vector<std::vector<ScaffoldState>> samples = {
        {state_of(chain(3)), state_of(chain(4)), state_of(split), state_of(split)}};
    EvalReport r = evaluate_batch(samples, {ctx}, {});
    CHECK(r.rows[0].connectivity_rate == doctest::Approx(0.5));
  }
  SUBCASE("undecodable samples count as invalid and are excluded from chemistry") {
    ScaffoldState bad = state_of(chain(3));
    bad.coords.values[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<ScaffoldState>> samples = {{state_of(chain(3)), bad}};
    EvalReport r = evaluate_batch(samples, {ctx}, {});
    CHECK(r.rows[0].invalid == 1);
    CHECK(r.rows[0].validity_rate == doctest::Approx(0.5));
    CHECK(r.rows[0].connectivity_rate == 1.0);  // over the decodable one
  }
  SUBCASE("diversity and novelty invariant to atom order") {
    Rng rng(5);
    std::vector<AtomRecord> a = chain(5);
    a[2].element = Element::N;
    std::vector<AtomRecord> shuffled = a;
    for (std::size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
    std::vector<std::vector<ScaffoldState>> s1 = {{state_of(a), state_of(chain(4))}};
    std::vector<std::vector<ScaffoldState>> s2 = {{state_of(shuffled), state_of(chain(4))}};
    EvalReport r1 = evaluate_batch(s1, {ctx}, {canonical_hash(a)});
    EvalReport r2 = evaluate_batch(s2, {ctx}, {canonical_hash(a)});
    CHECK(r1.rows[0].diversity == doctest::Approx(r2.rows[0].diversity).epsilon(1e-12));
    CHECK(r1.rows[0].novelty == r2.rows[0].novelty);
  }
}

TEST_CASE("bond_geometry_histograms") {
  SUBCASE("planar hexagon: one 6-ring, all angles in the 120-degree bin") {
    std::vector<AtomRecord> hexagon;
    const double r = 1.39;
    for (int k = 0; k < 6; ++k) {
      const double a = M_PI / 3.0 * k;
      // circumradius equals the edge length for a regular hexagon
      hexagon.push_back(atom(Element::C, r * std::cos(a), r * std::sin(a), 0.0));
    }
    GeometryHistograms g = bond_geometry_histograms({hexagon});
    CHECK(g.ring_counts[6 - 3] == 1);
    for (std::size_t s = 0; s < g.ring_counts.size(); ++s)
      if (s != 3) CHECK(g.ring_counts[s] == 0);
    // all 6 angles at 120 degrees; 120 is a bin edge, so acos rounding picks
    // one of the two adjacent bins
    const std::size_t bin_120 = static_cast<std::size_t>((120.0 - 60.0) / 5.0);
    CHECK(g.bond_angles.counts[bin_120] + g.bond_angles.counts[bin_120 - 1] == 6.0);
    for (std::size_t b = 0; b < g.bond_angles.counts.size(); ++b)
      if (b != bin_120 && b != bin_120 - 1) CHECK(g.bond_angles.counts[b] == 0.0);
    CHECK(g.bond_angles.mass() == 6.0);
    CHECK(g.cc_distance.mass() == 6.0);
  }
  SUBCASE("linear chain has no rings") {
    GeometryHistograms g = bond_geometry_histograms({chain(6)});
    for (std::size_t s = 0; s < g.ring_counts.size(); ++s) CHECK(g.ring_counts[s] == 0);
  }
  SUBCASE("normalized histogram sums to one") {
    GeometryHistograms g = bond_geometry_histograms({chain(6)});
    double total = 0.0;
    for (double v : g.cc_distance.normalized()) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("element-pair routing") {
    std::vector<AtomRecord> cno = {atom(Element::C, 0, 0, 0), atom(Element::N, 1.4, 0, 0),
                                   atom(Element::O, 2.8, 0, 0)};
    GeometryHistograms g = bond_geometry_histograms({cno});
    CHECK(g.cn_distance.mass() == 1.0);
    CHECK(g.cc_distance.mass() == 0.0);
    CHECK(g.co_distance.mass() == 0.0);  // N-O bond is not a tracked pair
  }
}

TEST_CASE("timing_report") {
  std::vector<TimingRun> runs = {
      {"consistency", 0.5, 50, 50},   {"consistency", 0.7, 50, 50},
      {"heun_pf_ode", 10.0, 999, 500}, {"heun_pf_ode", 12.0, 999, 500}};

  SUBCASE("row per method with eval ratios") {
    auto rows = timing_report(runs, "heun_pf_ode");
    REQUIRE(rows.size() == 2);
    const TimingRow& cm = rows[0].method == "consistency" ? rows[0] : rows[1];
    CHECK(cm.eval_ratio == doctest::Approx(999.0 / 50.0));
    CHECK(cm.wall_mean == doctest::Approx(0.6));
    CHECK(cm.speedup_wall == doctest::Approx(11.0 / 0.6));
  }
  SUBCASE("identical method compared to itself has ratio 1") {
    auto rows = timing_report({{"m", 1.0, 10, 10}, {"m", 1.0, 10, 10}}, "m");
    CHECK(rows[0].speedup_wall == doctest::Approx(1.0));
    CHECK(rows[0].eval_ratio == doctest::Approx(1.0));
  }
  SUBCASE("no runs rejected") { CHECK_THROWS_AS(timing_report({}, "x"), std::invalid_argument); }
}

TEST_CASE("molecule_valid") {
  SUBCASE("clean chain is valid") { CHECK(molecule_valid(chain(4))); }
  SUBCASE("isolated atom invalidates") {
    std::vector<AtomRecord> mol = chain(3);
    mol.push_back(atom(Element::C, 20, 0, 0));
    CHECK_FALSE(molecule_valid(mol));
  }
  SUBCASE("valence violation invalidates") {
    std::vector<AtomRecord> mol = {atom(Element::F, 0, 0, 0), atom(Element::C, 1.4, 0, 0),
                                   atom(Element::C, -1.4, 0, 0)};  // F with 2 bonds
    CHECK_FALSE(molecule_valid(mol));
  }
}
