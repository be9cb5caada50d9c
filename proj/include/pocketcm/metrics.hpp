#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pocketcm/mol.hpp"

namespace pocketcm {

struct EvalContextRow {
  std::size_t context_id = 0;
  std::size_t samples = 0;
  std::size_t invalid = 0;  // undecodable
  double connectivity_rate = 0.0;
  double validity_rate = 0.0;
  double diversity = 0.0;  // mean pairwise Tanimoto dissimilarity
  double novelty = 0.0;
  double clash_mean = 0.0;
  double clash_median = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct EvalReport {
  std::vector<EvalContextRow> rows;
  Aggregate connectivity, validity, diversity, novelty, clash_mean;
  std::size_t total_samples = 0;
  std::size_t total_invalid = 0;
};

// Connectivity / diversity / novelty / clash statistics per context group,
// aggregated mean +- std across contexts. Undecodable samples count against
// validity and are excluded from the chemistry metrics.
EvalReport evaluate_batch(const std::vector<std::vector<ScaffoldState>>& samples_per_context,
                          const std::vector<MolecularContext>& contexts,
                          const std::set<std::uint64_t>& training_hashes);

// Validity: decodable, every atom bonded, valence fraction 1.
bool molecule_valid(const std::vector<AtomRecord>& molecule, const BondTable& table = {});

// Jensen-Shannon divergence in natural log base; histograms must share
// binning and carry mass.
double jsd(const std::vector<double>& p, const std::vector<double>& q);

struct Histogram {
  double lo = 0.0, hi = 0.0, width = 0.0;
  std::vector<double> counts;

  void add(double value);
  double mass() const;
  std::vector<double> normalized() const;
  static Histogram with_bins(double lo, double hi, double width);
};

struct GeometryHistograms {
  Histogram cc_distance;   // C-C bond lengths, 0.05 A bins over [1.0, 2.0]
  Histogram cn_distance;   // C-N
  Histogram co_distance;   // C-O
  Histogram bond_angles;   // 5 degree bins over [60, 180]
  std::array<std::size_t, 7> ring_counts{};  // ring sizes 3..9
};

GeometryHistograms bond_geometry_histograms(const std::vector<std::vector<AtomRecord>>& molecules,
                                            const BondTable& table = {});

struct TimingRun {
  std::string method;
  double wall_seconds = 0.0;
  std::size_t evals = 0;
  std::size_t steps = 0;
};

struct TimingRow {
  std::string method;
  double wall_mean = 0.0;
  double wall_std = 0.0;
  std::size_t evals = 0;
  std::size_t steps = 0;
  std::size_t runs = 0;
  double speedup_wall = 1.0;  // baseline wall mean / this wall mean
  double eval_ratio = 1.0;    // baseline evals / this evals
};

// Per-method wall-clock statistics and exact evaluation counts, with speedup
// ratios against the named baseline method.
std::vector<TimingRow> timing_report(const std::vector<TimingRun>& runs,
                                     const std::string& baseline_method);

}  // namespace pocketcm
