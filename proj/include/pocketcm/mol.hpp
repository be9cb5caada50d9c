#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pocketcm/rng.hpp"
#include "pocketcm/tensor.hpp"

namespace pocketcm {

// Ligand elements plus pocket C-alpha residue classes. Pocket points carry a
// residue class instead of a chemical element.
enum class Element : std::uint8_t { C, N, O, F, S, Res0, Res1, Res2, Res3 };
constexpr std::size_t kLigandElementCount = 5;  // C N O F S
constexpr std::size_t kResidueClassCount = 4;

enum class AtomRole : std::uint8_t { Pocket, FunctionalGroup, Scaffold };

const char* element_name(Element e);
bool element_from_name(const std::string& name, Element& out);
bool is_ligand_element(Element e);

// Tabulated radii (Angstrom). Pocket C-alpha points are treated as carbon.
struct BondTable {
  double covalent_radius(Element e) const;
  double vdw_radius(Element e) const;
  int max_valence(Element e) const;
  double bond_tolerance = 0.4;   // added to combined covalent radii
  double clash_tolerance = 0.5;  // subtracted from combined vdW radii
};

struct AtomRecord {
  Element element = Element::C;
  std::array<double, 3> position{0.0, 0.0, 0.0};
  AtomRole role = AtomRole::Scaffold;
};

struct EdgeRecord {
  std::size_t i = 0, j = 0;
  double distance = 0.0;
  std::array<double, 3> direction{0.0, 0.0, 0.0};  // (x_i - x_j) / d_ij
};

constexpr double kEdgeCutoff = 5.0;    // graph edges (Angstrom)
constexpr double kPocketCutoff = 8.0;  // pocket inclusion radius around the ligand

// Joint protein-pocket / ligand graph: atoms, one-hot features with role
// flags, coordinates and directed edges within the 5 A cutoff.
struct ComplexGraph {
  std::vector<AtomRecord> atoms;
  Tensor features;     // N x (9 one-hot + 3 role flags)
  Tensor coordinates;  // N x 3
  std::vector<EdgeRecord> edges;

  std::size_t atom_count() const { return atoms.size(); }
  void rebuild_derived();  // features, coordinates and 5 A edge list from atoms
};

// Fixed conditioning: pocket C-alpha points and retained functional groups,
// expressed in the scaffold centre-of-mass frame.
struct MolecularContext {
  std::vector<AtomRecord> fg_atoms;
  std::vector<AtomRecord> pocket_atoms;
  Tensor fg_coords;        // F x 3
  Tensor fg_features;      // F x 5 element one-hot
  Tensor pocket_coords;    // P x 3
  Tensor pocket_features;  // P x 4 residue-class one-hot
  void rebuild_derived();
};

// The generated object: scaffold coordinates and per-atom class features at
// some noise level. Zero centre of mass after projection.
struct ScaffoldState {
  Tensor coords;    // N x 3
  Tensor features;  // N x 5 class one-hot / logits
  std::size_t atom_count() const { return coords.rank() == 2 ? coords.shape[0] : 0; }
};

struct SizeParams {
  std::size_t scaffold_min = 6, scaffold_max = 10;
  std::size_t fg_groups_min = 1, fg_groups_max = 2;
  std::size_t fg_size_min = 1, fg_size_max = 3;
  std::size_t pocket_min = 8, pocket_max = 14;
  void validate() const;  // throws when outside the documented ranges
};

struct SynthesizedComplex {
  ComplexGraph graph;
  std::vector<std::uint8_t> scaffold_mask;
};

// Procedural protein-pocket/scaffold complex: connected scaffold with bond
// lengths in [1.2, 1.6] A, functional groups on the periphery, pocket
// C-alpha points on a partial shell 3-8 A from the ligand, clash-free by
// construction. Deterministic in the seed.
SynthesizedComplex synthesize_complex(std::uint64_t seed, const SizeParams& params = {});

struct BuiltContext {
  MolecularContext context;
  ScaffoldState scaffold;
  ComplexGraph graph;  // full complex in the scaffold-CoM frame, 5 A edges
};

// Filters the pocket to 8 A around the ligand, shifts every coordinate so the
// scaffold centre of mass sits at the origin, and splits the complex into the
// fixed context and the diffusable scaffold.
BuiltContext build_context(const ComplexGraph& complex, const std::vector<std::uint8_t>& scaffold_mask);

// Subtracts the mean of the masked rows from every row; the masked subsystem
// ends up with zero centre of mass.
Tensor subtract_com(const Tensor& coordinates, const std::vector<std::uint8_t>& mask);
void subtract_com_inplace(Tensor& coordinates);  // all-rows mask

using Bond = std::pair<std::size_t, std::size_t>;

// Distance-based bond perception: bonded iff d < r_cov(i) + r_cov(j) + 0.4 A.
std::vector<Bond> infer_bonds(const std::vector<AtomRecord>& atoms, const BondTable& table = {});

// Steric clashes: pairs with d < vdW_i + vdW_j - 0.5 A (strict).
std::size_t count_clashes(const std::vector<AtomRecord>& ligand, const std::vector<AtomRecord>& pocket,
                          const BondTable& table = {});

struct ConnectivityReport {
  bool connected = false;
  double valence_ok_fraction = 0.0;
};

ConnectivityReport connectivity_and_valence(const std::vector<AtomRecord>& atoms,
                                            const BondTable& table = {});

// Hashed atom-environment fingerprint: radius-2 neighbourhoods over inferred
// bonds, folded into 2048 bits.
constexpr std::size_t kFingerprintBits = 2048;
using Fingerprint = std::array<std::uint64_t, kFingerprintBits / 64>;

Fingerprint fingerprint(const std::vector<AtomRecord>& atoms, const BondTable& table = {});
double tanimoto_dissimilarity(const Fingerprint& a, const Fingerprint& b);
double fingerprint_tanimoto(const std::vector<AtomRecord>& a, const std::vector<AtomRecord>& b,
                            const BondTable& table = {});

// Isomorphism-invariant digest via 3 rounds of element-seeded neighbourhood
// refinement over inferred bonds.
std::uint64_t canonical_hash(const std::vector<AtomRecord>& atoms, const BondTable& table = {});

// Decoded molecule helpers shared by samplers / rewards / metrics: scaffold
// state plus the context's functional-group atoms form the molecule.
std::vector<AtomRecord> decode_molecule(const ScaffoldState& state, const MolecularContext& context);
bool state_is_finite(const ScaffoldState& state);

}  // namespace pocketcm
