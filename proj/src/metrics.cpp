#include "pocketcm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace pocketcm {

namespace {

Aggregate aggregate_of(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  for (double v : values) a.stddev += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(a.stddev / static_cast<double>(values.size()));
  return a;
}

double angle_deg(const std::array<double, 3>& center, const std::array<double, 3>& a,
                 const std::array<double, 3>& b) {
  double u[3], v[3];
  for (int c = 0; c < 3; ++c) {
    u[c] = a[c] - center[c];
    v[c] = b[c] - center[c];
  }
  const double nu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const double nv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  double cosv = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv);
  cosv = std::min(1.0, std::max(-1.0, cosv));
  return std::acos(cosv) * 180.0 / M_PI;
}

}  // namespace

bool molecule_valid(const std::vector<AtomRecord>& molecule, const BondTable& table) {
  if (molecule.empty()) return false;
  const std::vector<Bond> bonds = infer_bonds(molecule, table);
  std::vector<std::size_t> degree(molecule.size(), 0);
  for (const Bond& b : bonds) {
    ++degree[b.first];
    ++degree[b.second];
  }
  for (std::size_t i = 0; i < molecule.size(); ++i)
    if (degree[i] == 0) return false;
  return connectivity_and_valence(molecule, table).valence_ok_fraction == 1.0;
}

EvalReport evaluate_batch(const std::vector<std::vector<ScaffoldState>>& samples_per_context,
                          const std::vector<MolecularContext>& contexts,
                          const std::set<std::uint64_t>& training_hashes) {
  if (samples_per_context.size() != contexts.size())
    throw std::invalid_argument("evaluate_batch: context count mismatch");
  EvalReport report;
  std::vector<double> conn, valid, div, nov, clash;

  for (std::size_t c = 0; c < contexts.size(); ++c) {
    EvalContextRow row;
    row.context_id = c;
    row.samples = samples_per_context[c].size();
    std::vector<std::vector<AtomRecord>> molecules;
    for (const ScaffoldState& z : samples_per_context[c]) {
      if (!state_is_finite(z) || z.atom_count() == 0) {
        row.invalid += 1;
        continue;
      }
      molecules.push_back(decode_molecule(z, contexts[c]));
    }
    std::vector<double> clashes;
    std::size_t connected = 0, valid_count = 0, novel = 0;
    std::vector<Fingerprint> fps;
    for (const auto& mol : molecules) {
      if (connectivity_and_valence(mol).connected) ++connected;
      if (molecule_valid(mol)) ++valid_count;
      if (!training_hashes.count(canonical_hash(mol))) ++novel;
      clashes.push_back(static_cast<double>(count_clashes(mol, contexts[c].pocket_atoms)));
      fps.push_back(fingerprint(mol));
    }
    const double n_dec = static_cast<double>(molecules.size());
    if (!molecules.empty()) {
      row.connectivity_rate = connected / n_dec;
      row.novelty = novel / n_dec;
      double pair_sum = 0.0;
      std::size_t pair_count = 0;
      for (std::size_t i = 0; i < fps.size(); ++i)
        for (std::size_t j = i + 1; j < fps.size(); ++j) {
          pair_sum += tanimoto_dissimilarity(fps[i], fps[j]);
          ++pair_count;
        }
      row.diversity = pair_count ? pair_sum / static_cast<double>(pair_count) : 0.0;
      double cm = 0.0;
      for (double v : clashes) cm += v;
      row.clash_mean = cm / n_dec;
      std::vector<double> sorted = clashes;
      std::sort(sorted.begin(), sorted.end());
      row.clash_median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                           : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    }
    row.validity_rate = row.samples ? static_cast<double>(valid_count) / row.samples : 0.0;
    report.total_samples += row.samples;
    report.total_invalid += row.invalid;
    conn.push_back(row.connectivity_rate);
    valid.push_back(row.validity_rate);
    div.push_back(row.diversity);
    nov.push_back(row.novelty);
    clash.push_back(row.clash_mean);
    report.rows.push_back(row);
  }
  report.connectivity = aggregate_of(conn);
  report.validity = aggregate_of(valid);
  report.diversity = aggregate_of(div);
  report.novelty = aggregate_of(nov);
  report.clash_mean = aggregate_of(clash);
  return report;
}

double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.empty() || p.size() != q.size())
    throw std::invalid_argument("jsd: histograms must share a non-empty binning");
  double sp = 0.0, sq = 0.0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  if (sp <= 0.0 || sq <= 0.0) throw std::invalid_argument("jsd: histogram carries no mass");
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] / sp;
    const double qi = q[i] / sq;
    const double mi = 0.5 * (pi + qi);
    if (pi > 0.0) out += 0.5 * pi * std::log(pi / mi);
    if (qi > 0.0) out += 0.5 * qi * std::log(qi / mi);
  }
  return out;
}

Histogram Histogram::with_bins(double lo, double hi, double width) {
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.width = width;
  h.counts.assign(static_cast<std::size_t>(std::round((hi - lo) / width)), 0.0);
  return h;
}

void Histogram::add(double value) {
  if (value < lo || value >= hi) return;
  const auto bin = static_cast<std::size_t>((value - lo) / width);
  counts[std::min(bin, counts.size() - 1)] += 1.0;
}

double Histogram::mass() const {
  double m = 0.0;
  for (double v : counts) m += v;
  return m;
}

std::vector<double> Histogram::normalized() const {
  const double m = mass();
  std::vector<double> out = counts;
  if (m > 0.0)
    for (double& v : out) v /= m;
  return out;
}

namespace {

// Smallest ring through each bond: BFS with the bond removed; rings are
// deduplicated by vertex set.
void count_rings(const std::vector<AtomRecord>& atoms, const std::vector<Bond>& bonds,
                 std::array<std::size_t, 7>& ring_counts) {
  const std::size_t n = atoms.size();
  std::vector<std::vector<std::size_t>> adjacency(n);
  for (const Bond& b : bonds) {
    adjacency[b.first].push_back(b.second);
    adjacency[b.second].push_back(b.first);
  }
  std::set<std::vector<std::size_t>> seen;
  for (const Bond& bond : bonds) {
    // shortest path from bond.first to bond.second avoiding the bond itself
    std::vector<int> parent(n, -1);
    std::vector<std::uint8_t> visited(n, 0);
    std::deque<std::size_t> queue{bond.first};
    visited[bond.first] = 1;
    bool found = false;
    while (!queue.empty() && !found) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (std::size_t v : adjacency[u]) {
        if (u == bond.first && v == bond.second) continue;
        if (visited[v]) continue;
        visited[v] = 1;
        parent[v] = static_cast<int>(u);
        if (v == bond.second) {
          found = true;
          break;
        }
        queue.push_back(v);
      }
    }
    if (!found) continue;
    std::vector<std::size_t> ring{bond.second};
    for (int v = parent[bond.second]; v != -1; v = parent[v]) ring.push_back(static_cast<std::size_t>(v));
    std::sort(ring.begin(), ring.end());
    if (ring.size() < 3 || ring.size() > 9) continue;
    if (seen.insert(ring).second) ring_counts[ring.size() - 3] += 1;
  }
}

}  // namespace

GeometryHistograms bond_geometry_histograms(const std::vector<std::vector<AtomRecord>>& molecules,
                                            const BondTable& table) {
  GeometryHistograms g;
  g.cc_distance = Histogram::with_bins(1.0, 2.0, 0.05);
  g.cn_distance = Histogram::with_bins(1.0, 2.0, 0.05);
  g.co_distance = Histogram::with_bins(1.0, 2.0, 0.05);
  g.bond_angles = Histogram::with_bins(60.0, 180.0, 5.0);

  for (const auto& mol : molecules) {
    const std::vector<Bond> bonds = infer_bonds(mol, table);
    std::vector<std::vector<std::size_t>> adjacency(mol.size());
    for (const Bond& b : bonds) {
      adjacency[b.first].push_back(b.second);
      adjacency[b.second].push_back(b.first);
      const double d = std::sqrt(
          std::pow(mol[b.first].position[0] - mol[b.second].position[0], 2) +
          std::pow(mol[b.first].position[1] - mol[b.second].position[1], 2) +
          std::pow(mol[b.first].position[2] - mol[b.second].position[2], 2));
      const Element e1 = mol[b.first].element, e2 = mol[b.second].element;
      auto pair_is = [&](Element a, Element b2) {
        return (e1 == a && e2 == b2) || (e1 == b2 && e2 == a);
      };
      if (pair_is(Element::C, Element::C)) g.cc_distance.add(d);
      if (pair_is(Element::C, Element::N)) g.cn_distance.add(d);
      if (pair_is(Element::C, Element::O)) g.co_distance.add(d);
    }
    for (std::size_t i = 0; i < mol.size(); ++i)
      for (std::size_t a = 0; a < adjacency[i].size(); ++a)
        for (std::size_t b = a + 1; b < adjacency[i].size(); ++b)
          g.bond_angles.add(
              angle_deg(mol[i].position, mol[adjacency[i][a]].position, mol[adjacency[i][b]].position));
    count_rings(mol, bonds, g.ring_counts);
  }
  return g;
}

std::vector<TimingRow> timing_report(const std::vector<TimingRun>& runs,
                                     const std::string& baseline_method) {
  if (runs.empty()) throw std::invalid_argument("timing_report: no runs");
  std::vector<std::string> methods;
  for (const TimingRun& r : runs)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);

  std::vector<TimingRow> rows;
  for (const std::string& m : methods) {
    TimingRow row;
    row.method = m;
    std::vector<double> walls;
    for (const TimingRun& r : runs)
      if (r.method == m) {
        walls.push_back(r.wall_seconds);
        row.evals = r.evals;
        row.steps = r.steps;
      }
    const Aggregate a = aggregate_of(walls);
    row.wall_mean = a.mean;
    row.wall_std = a.stddev;
    row.runs = walls.size();
    rows.push_back(row);
  }
  const auto base = std::find_if(rows.begin(), rows.end(),
                                 [&](const TimingRow& r) { return r.method == baseline_method; });
  if (base != rows.end()) {
    for (TimingRow& r : rows) {
      r.speedup_wall = r.wall_mean > 0.0 ? base->wall_mean / r.wall_mean : 1.0;
      r.eval_ratio = r.evals ? static_cast<double>(base->evals) / static_cast<double>(r.evals) : 1.0;
    }
  }
  return rows;
}

}  // namespace pocketcm
