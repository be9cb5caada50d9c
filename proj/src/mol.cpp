#include "pocketcm/mol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace pocketcm {

namespace {

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::array<double, 3> random_unit(Rng& rng) {
  // Rejection from the cube keeps the draw isotropic.
  for (;;) {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    const double z = rng.uniform(-1.0, 1.0);
    const double n2 = x * x + y * y + z * z;
    if (n2 > 1e-6 && n2 <= 1.0) {
      const double n = std::sqrt(n2);
      return {x / n, y / n, z / n};
    }
  }
}

double min_dist_to(const std::vector<AtomRecord>& atoms, const std::array<double, 3>& p) {
  double best = 1e30;
  for (const AtomRecord& a : atoms) best = std::min(best, dist3(a.position, p));
  return best;
}

Element pick_scaffold_element(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.72) return Element::C;
  if (u < 0.84) return Element::N;
  if (u < 0.96) return Element::O;
  if (u < 0.98) return Element::F;
  return Element::S;
}

Element pick_fg_element(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.40) return Element::C;
  if (u < 0.60) return Element::N;
  if (u < 0.80) return Element::O;
  if (u < 0.90) return Element::F;
  return Element::S;
}

std::uint64_t mix64(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

// Per-atom labels after `rounds` of neighbourhood refinement over the bond
// graph, seeded with the element.
std::vector<std::uint64_t> refine_labels(const std::vector<AtomRecord>& atoms,
                                         const std::vector<Bond>& bonds, int rounds) {
  const std::size_t n = atoms.size();
  std::vector<std::vector<std::size_t>> adjacency(n);
  for (const Bond& b : bonds) {
    adjacency[b.first].push_back(b.second);
    adjacency[b.second].push_back(b.first);
  }
  std::vector<std::uint64_t> labels(n);
  for (std::size_t i = 0; i < n; ++i)
    labels[i] = mix64(0x517cc1b727220a95ull, static_cast<std::uint64_t>(atoms[i].element));
  std::vector<std::uint64_t> next(n);
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint64_t> neigh;
      neigh.reserve(adjacency[i].size());
      for (std::size_t j : adjacency[i]) neigh.push_back(labels[j]);
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t h = mix64(labels[i], 0xabcdef0123456789ull);
      for (std::uint64_t v : neigh) h = mix64(h, v);
      next[i] = h;
    }
    labels = next;
  }
  return labels;
}

}  // namespace

const char* element_name(Element e) {
  switch (e) {
    case Element::C: return "C";
    case Element::N: return "N";
    case Element::O: return "O";
    case Element::F: return "F";
    case Element::S: return "S";
    case Element::Res0: return "RES0";
    case Element::Res1: return "RES1";
    case Element::Res2: return "RES2";
    case Element::Res3: return "RES3";
  }
  return "?";
}

bool element_from_name(const std::string& name, Element& out) {
  static const std::map<std::string, Element> table = {
      {"C", Element::C},       {"N", Element::N},       {"O", Element::O},
      {"F", Element::F},       {"S", Element::S},       {"RES0", Element::Res0},
      {"RES1", Element::Res1}, {"RES2", Element::Res2}, {"RES3", Element::Res3}};
  auto it = table.find(name);
  if (it == table.end()) return false;
  out = it->second;
  return true;
}

bool is_ligand_element(Element e) { return static_cast<std::uint8_t>(e) < kLigandElementCount; }

double BondTable::covalent_radius(Element e) const {
  switch (e) {
    case Element::C: return 0.77;
    case Element::N: return 0.75;
    case Element::O: return 0.73;
    case Element::F: return 0.71;
    case Element::S: return 1.02;
    default: return 0.77;  // pocket C-alpha treated as carbon
  }
}

double BondTable::vdw_radius(Element e) const {
  switch (e) {
    case Element::C: return 1.70;
    case Element::N: return 1.55;
    case Element::O: return 1.52;
    case Element::F: return 1.47;
    case Element::S: return 1.80;
    default: return 1.70;
  }
}

int BondTable::max_valence(Element e) const {
  switch (e) {
    case Element::C: return 4;
    case Element::N: return 3;
    case Element::O: return 2;
    case Element::F: return 1;
    case Element::S: return 6;
    default: return 4;
  }
}

void ComplexGraph::rebuild_derived() {
  const std::size_t n = atoms.size();
  constexpr std::size_t kFeatureDim = kLigandElementCount + kResidueClassCount + 3;
  features = Tensor({n, kFeatureDim}, 0.0);
  coordinates = Tensor({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    features.at(i, static_cast<std::size_t>(atoms[i].element)) = 1.0;
    features.at(i, kLigandElementCount + kResidueClassCount + static_cast<std::size_t>(atoms[i].role)) = 1.0;
    for (std::size_t c = 0; c < 3; ++c) coordinates.at(i, c) = atoms[i].position[c];
  }
  edges.clear();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = dist3(atoms[i].position, atoms[j].position);
      if (d <= kEdgeCutoff && d > 0.0) {
        EdgeRecord e;
        e.i = i;
        e.j = j;
        e.distance = d;
        for (std::size_t c = 0; c < 3; ++c)
          e.direction[c] = (atoms[i].position[c] - atoms[j].position[c]) / d;
        edges.push_back(e);
      }
    }
}

void MolecularContext::rebuild_derived() {
  fg_coords = Tensor({fg_atoms.size(), 3});
  fg_features = Tensor({fg_atoms.size(), kLigandElementCount}, 0.0);
  for (std::size_t i = 0; i < fg_atoms.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) fg_coords.at(i, c) = fg_atoms[i].position[c];
    fg_features.at(i, static_cast<std::size_t>(fg_atoms[i].element)) = 1.0;
  }
  pocket_coords = Tensor({pocket_atoms.size(), 3});
  pocket_features = Tensor({pocket_atoms.size(), kResidueClassCount}, 0.0);
  for (std::size_t i = 0; i < pocket_atoms.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) pocket_coords.at(i, c) = pocket_atoms[i].position[c];
    const auto cls = static_cast<std::size_t>(pocket_atoms[i].element) - kLigandElementCount;
    pocket_features.at(i, cls) = 1.0;
  }
}

void SizeParams::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("size params out of range: ") + what);
  };
  check(scaffold_min >= 6 && scaffold_max <= 14 && scaffold_min <= scaffold_max, "scaffold atoms (6..14)");
  check(fg_groups_min >= 1 && fg_groups_max <= 3 && fg_groups_min <= fg_groups_max,
        "functional groups (1..3)");
  check(fg_size_min >= 1 && fg_size_max <= 4 && fg_size_min <= fg_size_max, "group size (1..4)");
  check(pocket_min >= 8 && pocket_max <= 24 && pocket_min <= pocket_max, "pocket points (8..24)");
}

SynthesizedComplex synthesize_complex(std::uint64_t seed, const SizeParams& params) {
  params.validate();
  Rng rng(seed);
  constexpr int kMaxAttempts = 1000;
  auto fail = [](const char* constraint) {
    throw std::runtime_error(std::string("synthesize_complex: rejection sampling exhausted (") +
                             constraint + ")");
  };

  std::vector<AtomRecord> atoms;

  // Scaffold: random tree growth, bond lengths in [1.2, 1.6] A. Any pair
  // closer than 1.82 A is bonded for every element combination, so tree
  // edges keep the scaffold connected under bond inference.
  const std::size_t n_scaffold =
      params.scaffold_min + rng.uniform_int(params.scaffold_max - params.scaffold_min + 1);
  atoms.push_back({pick_scaffold_element(rng), {0.0, 0.0, 0.0}, AtomRole::Scaffold});
  for (std::size_t k = 1; k < n_scaffold; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const std::size_t parent = rng.uniform_int(atoms.size());
      const auto dir = random_unit(rng);
      const double len = rng.uniform(1.2, 1.6);
      std::array<double, 3> p = atoms[parent].position;
      for (std::size_t c = 0; c < 3; ++c) p[c] += dir[c] * len;
      if (min_dist_to(atoms, p) >= 1.1) {
        atoms.push_back({pick_scaffold_element(rng), p, AtomRole::Scaffold});
        placed = true;
      }
    }
    if (!placed) fail("scaffold atom placement");
  }

  // Functional groups: short chains grown from scaffold anchors.
  const std::size_t n_groups =
      params.fg_groups_min + rng.uniform_int(params.fg_groups_max - params.fg_groups_min + 1);
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t size =
        params.fg_size_min + rng.uniform_int(params.fg_size_max - params.fg_size_min + 1);
    std::size_t anchor = rng.uniform_int(n_scaffold);
    for (std::size_t k = 0; k < size; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        const auto dir = random_unit(rng);
        const double len = rng.uniform(1.2, 1.6);
        std::array<double, 3> p = atoms[anchor].position;
        for (std::size_t c = 0; c < 3; ++c) p[c] += dir[c] * len;
        if (min_dist_to(atoms, p) >= 1.1) {
          atoms.push_back({pick_fg_element(rng), p, AtomRole::FunctionalGroup});
          anchor = atoms.size() - 1;  // chain continues from the new atom
          placed = true;
        }
      }
      if (!placed) fail("functional group placement");
    }
  }

  // Pocket: C-alpha points on a partial shell 3-8 A from the nearest ligand
  // atom. The 3 A floor clears the C/C clash threshold (2.9 A) for every
  // element pair by construction.
  const std::size_t n_ligand = atoms.size();
  const std::size_t n_pocket =
      params.pocket_min + rng.uniform_int(params.pocket_max - params.pocket_min + 1);
  std::vector<AtomRecord> pocket;
  for (std::size_t k = 0; k < n_pocket; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const std::size_t source = rng.uniform_int(n_ligand);
      const auto dir = random_unit(rng);
      const double d = rng.uniform(3.0, 8.0);
      std::array<double, 3> p = atoms[source].position;
      for (std::size_t c = 0; c < 3; ++c) p[c] += dir[c] * d;
      double nearest_ligand = 1e30;
      for (std::size_t i = 0; i < n_ligand; ++i)
        nearest_ligand = std::min(nearest_ligand, dist3(atoms[i].position, p));
      bool pocket_spacing_ok = true;
      for (const AtomRecord& q : pocket)
        if (dist3(q.position, p) < 2.0) {
          pocket_spacing_ok = false;
          break;
        }
      if (nearest_ligand >= 3.0 && nearest_ligand <= 8.0 && pocket_spacing_ok) {
        const auto cls = static_cast<Element>(kLigandElementCount + rng.uniform_int(kResidueClassCount));
        pocket.push_back({cls, p, AtomRole::Pocket});
        placed = true;
      }
    }
    if (!placed) fail("pocket shell placement");
  }
  atoms.insert(atoms.end(), pocket.begin(), pocket.end());

  SynthesizedComplex out;
  out.graph.atoms = std::move(atoms);
  out.graph.rebuild_derived();
  out.scaffold_mask.assign(out.graph.atoms.size(), 0);
  for (std::size_t i = 0; i < n_scaffold; ++i) out.scaffold_mask[i] = 1;
  return out;
}

Tensor subtract_com(const Tensor& coordinates, const std::vector<std::uint8_t>& mask) {
  if (coordinates.rank() != 2 || coordinates.shape[1] != 3)
    throw std::invalid_argument("subtract_com: coordinates must be Nx3, got " + coordinates.shape_str());
  if (mask.size() != coordinates.shape[0])
    throw std::invalid_argument("subtract_com: mask size mismatch");
  double com[3] = {0.0, 0.0, 0.0};
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++count;
    for (std::size_t c = 0; c < 3; ++c) com[c] += coordinates.at(i, c);
  }
  if (count == 0) throw std::invalid_argument("subtract_com: empty mask");
  for (double& v : com) v /= static_cast<double>(count);
  Tensor out = coordinates;
  for (std::size_t i = 0; i < out.shape[0]; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.at(i, c) -= com[c];
  return out;
}

void subtract_com_inplace(Tensor& coordinates) {
  std::vector<std::uint8_t> mask(coordinates.shape[0], 1);
  coordinates = subtract_com(coordinates, mask);
}

BuiltContext build_context(const ComplexGraph& complex, const std::vector<std::uint8_t>& scaffold_mask) {
  if (scaffold_mask.size() != complex.atoms.size())
    throw std::invalid_argument("build_context: mask size mismatch");
  std::size_t n_scaffold = 0;
  for (std::uint8_t m : scaffold_mask) n_scaffold += m;
  if (n_scaffold == 0) throw std::invalid_argument("build_context: scaffold mask is empty");

  std::vector<AtomRecord> ligand;
  for (std::size_t i = 0; i < complex.atoms.size(); ++i)
    if (complex.atoms[i].role != AtomRole::Pocket) ligand.push_back(complex.atoms[i]);

  // Scaffold centre of mass defines the frame.
  double com[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < complex.atoms.size(); ++i) {
    if (!scaffold_mask[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) com[c] += complex.atoms[i].position[c];
  }
  for (double& v : com) v /= static_cast<double>(n_scaffold);

  BuiltContext out;
  std::vector<AtomRecord> scaffold_atoms;
  for (std::size_t i = 0; i < complex.atoms.size(); ++i) {
    AtomRecord a = complex.atoms[i];
    for (std::size_t c = 0; c < 3; ++c) a.position[c] -= com[c];
    if (scaffold_mask[i]) {
      scaffold_atoms.push_back(a);
    } else if (a.role == AtomRole::FunctionalGroup) {
      out.context.fg_atoms.push_back(a);
    } else if (a.role == AtomRole::Pocket) {
      double nearest = 1e30;
      for (const AtomRecord& l : ligand) nearest = std::min(nearest, dist3(l.position, complex.atoms[i].position));
      if (nearest <= kPocketCutoff) out.context.pocket_atoms.push_back(a);
    } else {
      // non-pocket, non-fg, unmasked: treat as functional-group context
      out.context.fg_atoms.push_back(a);
    }
  }
  if (out.context.pocket_atoms.empty())
    throw std::runtime_error("build_context: no pocket atoms within 8 A of the ligand");

  out.context.rebuild_derived();

  out.scaffold.coords = Tensor({scaffold_atoms.size(), 3});
  out.scaffold.features = Tensor({scaffold_atoms.size(), kLigandElementCount}, 0.0);
  for (std::size_t i = 0; i < scaffold_atoms.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.scaffold.coords.at(i, c) = scaffold_atoms[i].position[c];
    out.scaffold.features.at(i, static_cast<std::size_t>(scaffold_atoms[i].element)) = 1.0;
  }

  out.graph.atoms = scaffold_atoms;
  out.graph.atoms.insert(out.graph.atoms.end(), out.context.fg_atoms.begin(), out.context.fg_atoms.end());
  out.graph.atoms.insert(out.graph.atoms.end(), out.context.pocket_atoms.begin(),
                         out.context.pocket_atoms.end());
  out.graph.rebuild_derived();
  return out;
}

std::vector<Bond> infer_bonds(const std::vector<AtomRecord>& atoms, const BondTable& table) {
  std::vector<Bond> bonds;
  for (std::size_t i = 0; i < atoms.size(); ++i)
    for (std::size_t j = i + 1; j < atoms.size(); ++j) {
      const double threshold =
          table.covalent_radius(atoms[i].element) + table.covalent_radius(atoms[j].element) +
          table.bond_tolerance;
      if (dist3(atoms[i].position, atoms[j].position) < threshold) bonds.emplace_back(i, j);
    }
  return bonds;
}

std::size_t count_clashes(const std::vector<AtomRecord>& ligand, const std::vector<AtomRecord>& pocket,
                          const BondTable& table) {
  std::size_t clashes = 0;
  for (const AtomRecord& l : ligand)
    for (const AtomRecord& p : pocket) {
      const double threshold =
          table.vdw_radius(l.element) + table.vdw_radius(p.element) - table.clash_tolerance;
      if (dist3(l.position, p.position) < threshold) ++clashes;
    }
  return clashes;
}

ConnectivityReport connectivity_and_valence(const std::vector<AtomRecord>& atoms, const BondTable& table) {
  ConnectivityReport report;
  const std::size_t n = atoms.size();
  if (n == 0) return report;
  const std::vector<Bond> bonds = infer_bonds(atoms, table);
  std::vector<std::size_t> degree(n, 0);
  std::vector<std::vector<std::size_t>> adjacency(n);
  for (const Bond& b : bonds) {
    ++degree[b.first];
    ++degree[b.second];
    adjacency[b.first].push_back(b.second);
    adjacency[b.second].push_back(b.first);
  }
  // BFS from atom 0
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<std::size_t> queue{0};
  seen[0] = 1;
  std::size_t visited = 1;
  while (!queue.empty()) {
    const std::size_t u = queue.back();
    queue.pop_back();
    for (std::size_t v : adjacency[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++visited;
        queue.push_back(v);
      }
  }
  report.connected = visited == n;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (degree[i] <= static_cast<std::size_t>(table.max_valence(atoms[i].element))) ++ok;
  report.valence_ok_fraction = static_cast<double>(ok) / static_cast<double>(n);
  return report;
}

Fingerprint fingerprint(const std::vector<AtomRecord>& atoms, const BondTable& table) {
  Fingerprint fp{};
  if (atoms.empty()) return fp;
  const std::vector<Bond> bonds = infer_bonds(atoms, table);
  // radius 0, 1, 2 environments
  std::vector<std::vector<std::size_t>> adjacency(atoms.size());
  for (const Bond& b : bonds) {
    adjacency[b.first].push_back(b.second);
    adjacency[b.second].push_back(b.first);
  }
  std::vector<std::uint64_t> labels(atoms.size());
  for (std::size_t i = 0; i < atoms.size(); ++i)
    labels[i] = mix64(0x517cc1b727220a95ull, static_cast<std::uint64_t>(atoms[i].element));
  for (int radius = 0; radius <= 2; ++radius) {
    for (std::uint64_t label : labels) {
      const std::uint64_t h = mix64(label, 0x2545f4914f6cdd1dull + radius);
      fp[(h % kFingerprintBits) / 64] |= 1ull << ((h % kFingerprintBits) % 64);
    }
    if (radius == 2) break;
    std::vector<std::uint64_t> next(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::vector<std::uint64_t> neigh;
      for (std::size_t j : adjacency[i]) neigh.push_back(labels[j]);
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t h = mix64(labels[i], 0xabcdef0123456789ull);
      for (std::uint64_t v : neigh) h = mix64(h, v);
      next[i] = h;
    }
    labels = next;
  }
  return fp;
}

double tanimoto_dissimilarity(const Fingerprint& a, const Fingerprint& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t w = 0; w < a.size(); ++w) {
    inter += __builtin_popcountll(a[w] & b[w]);
    uni += __builtin_popcountll(a[w] | b[w]);
  }
  if (uni == 0) return 0.0;  // both empty
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

double fingerprint_tanimoto(const std::vector<AtomRecord>& a, const std::vector<AtomRecord>& b,
                            const BondTable& table) {
  return tanimoto_dissimilarity(fingerprint(a, table), fingerprint(b, table));
}

std::uint64_t canonical_hash(const std::vector<AtomRecord>& atoms, const BondTable& table) {
  if (atoms.empty()) return Rng::fnv1a64("empty-graph");
  const std::vector<Bond> bonds = infer_bonds(atoms, table);
  std::vector<std::uint64_t> labels = refine_labels(atoms, bonds, 3);
  std::sort(labels.begin(), labels.end());
  std::uint64_t digest = mix64(0x6a09e667f3bcc908ull, atoms.size());
  digest = mix64(digest, bonds.size());
  for (std::uint64_t label : labels) digest = mix64(digest, label);
  return digest;
}

std::vector<AtomRecord> decode_molecule(const ScaffoldState& state, const MolecularContext& context) {
  std::vector<AtomRecord> atoms;
  const std::size_t n = state.atom_count();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kLigandElementCount; ++c)
      if (state.features.at(i, c) > state.features.at(i, best)) best = c;
    AtomRecord a;
    a.element = static_cast<Element>(best);
    a.role = AtomRole::Scaffold;
    for (std::size_t c = 0; c < 3; ++c) a.position[c] = state.coords.at(i, c);
    atoms.push_back(a);
  }
  atoms.insert(atoms.end(), context.fg_atoms.begin(), context.fg_atoms.end());
  return atoms;
}

bool state_is_finite(const ScaffoldState& state) {
  return state.coords.all_finite() && state.features.all_finite();
}

}  // namespace pocketcm
