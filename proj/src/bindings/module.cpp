#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pocketcm/consistency.hpp"
#include "pocketcm/io.hpp"
#include "pocketcm/metrics.hpp"
#include "pocketcm/rlcm.hpp"
#include "pocketcm/sampler.hpp"

namespace py = pybind11;
using namespace pocketcm;

namespace {

// Python-facing view of a complex: atoms + scaffold mask.
struct PyComplex {
  SynthesizedComplex data;

  std::size_t atom_count() const { return data.graph.atoms.size(); }
  std::vector<std::string> elements() const {
    std::vector<std::string> out;
    for (const AtomRecord& a : data.graph.atoms) out.push_back(element_name(a.element));
    return out;
  }
  std::vector<std::string> roles() const {
    std::vector<std::string> out;
    for (const AtomRecord& a : data.graph.atoms)
      out.push_back(a.role == AtomRole::Pocket ? "pocket"
                    : a.role == AtomRole::FunctionalGroup ? "functional-group"
                                                          : "scaffold");
    return out;
  }
  std::vector<std::array<double, 3>> positions() const {
    std::vector<std::array<double, 3>> out;
    for (const AtomRecord& a : data.graph.atoms) out.push_back(a.position);
    return out;
  }
  std::vector<int> scaffold_mask() const {
    return std::vector<int>(data.scaffold_mask.begin(), data.scaffold_mask.end());
  }
  std::size_t edge_count() const { return data.graph.edges.size(); }

  std::vector<AtomRecord> ligand() const {
    std::vector<AtomRecord> out;
    for (const AtomRecord& a : data.graph.atoms)
      if (a.role != AtomRole::Pocket) out.push_back(a);
    return out;
  }
  std::vector<AtomRecord> pocket() const {
    std::vector<AtomRecord> out;
    for (const AtomRecord& a : data.graph.atoms)
      if (a.role == AtomRole::Pocket) out.push_back(a);
    return out;
  }

  std::string to_json() const { return complex_to_json(data.graph, data.scaffold_mask).dump(2); }
  static PyComplex from_json(const std::string& text) {
    return PyComplex{complex_from_json(nlohmann::json::parse(text), "<string>")};
  }
  void save(const std::string& path) const { write_complex_json(path, data.graph, data.scaffold_mask); }
  static PyComplex load(const std::string& path) { return PyComplex{read_complex_json(path)}; }
};

PyComplex sample_to_complex(const ScaffoldState& state, const MolecularContext& context) {
  PyComplex out;
  std::vector<AtomRecord> scaffold = decode_molecule(state, MolecularContext{});
  for (const AtomRecord& a : scaffold) {
    out.data.graph.atoms.push_back(a);
    out.data.scaffold_mask.push_back(1);
  }
  for (const AtomRecord& a : context.fg_atoms) {
    out.data.graph.atoms.push_back(a);
    out.data.scaffold_mask.push_back(0);
  }
  for (const AtomRecord& a : context.pocket_atoms) {
    out.data.graph.atoms.push_back(a);
    out.data.scaffold_mask.push_back(0);
  }
  out.data.graph.rebuild_derived();
  return out;
}

// Trained consistency model with its schedule, trainable and samplable from
// Python.
struct PyModel {
  RunConfig config;
  EmaPair pair;
  std::size_t steps_done = 0;

  PyModel(std::size_t layers, std::size_t hidden, std::uint64_t seed) {
    config.layers = layers;
    config.hidden = hidden;
    config.seed = seed;
    config.validate();
    Rng init = Rng::substream(seed, "init");
    pair.online = init_denoiser_params(config.denoiser(), init);
    pair.target = pair.online;
  }

  explicit PyModel(const std::string& checkpoint_path) : config() {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    config = RunConfig::from_json(nlohmann::json::parse(ckpt.config_json));
    pair.online = ckpt.online;
    pair.target = ckpt.ema;
    steps_done = ckpt.step;
  }

  py::dict train(const std::vector<PyComplex>& complexes, std::size_t steps, std::size_t batch,
                 double lr, std::size_t grid_steps, std::uint64_t seed, std::size_t threads) {
    if (complexes.empty()) throw std::invalid_argument("train: empty dataset");
    std::vector<TrainItem> items;
    for (const PyComplex& c : complexes)
      items.push_back(make_train_item(build_context(c.data.graph, c.data.scaffold_mask)));
    TrainerConfig tc = config.trainer();
    tc.adam.lr = lr;
    tc.batch_size = batch;
    tc.threads = threads;
    ConsistencyTrainer trainer(config.denoiser(), config.schedule(),
                               TrainingSchedule::constant(grid_steps, config.ema_decay), tc,
                               pair.online);
    trainer.pair().target = pair.target;
    const double initial = trainer.probe_loss(items, seed, 64);
    Rng rng = Rng::substream(seed, "train");
    double last_loss = 0.0;
    for (std::size_t s = 0; s < steps; ++s) last_loss = trainer.train_step(items, rng).loss;
    const double final_probe = trainer.probe_loss(items, seed, 64);
    pair = trainer.pair();
    steps_done += steps;
    py::dict out;
    out["initial_probe_loss"] = initial;
    out["final_probe_loss"] = final_probe;
    out["last_step_loss"] = last_loss;
    return out;
  }

  ConsistencyModel model(bool use_ema) const {
    ConsistencyModel m;
    m.params = use_ema ? pair.target : pair.online;
    m.config = config.denoiser();
    m.schedule = config.schedule();
    return m;
  }

  py::tuple sample(const PyComplex& complex, std::size_t steps, bool score, std::size_t metric_start,
                   std::uint64_t seed, bool use_ema) {
    BuiltContext built = build_context(complex.data.graph, complex.data.scaffold_mask);
    SamplingPlan plan = SamplingPlan::from_steps(config.schedule(), steps, metric_start);
    plan.variance_difference_renoise = config.variance_difference_renoise;
    Rng rng = Rng::substream(seed, "sample");
    SampleResult r = multistep_metric_sample(model(use_ema), plan, built.context,
                                             built.scaffold.atom_count(),
                                             score ? ScoreFn(custom_score) : ScoreFn(), rng);
    py::dict info;
    info["denoiser_evals"] = r.denoiser_evals;
    info["best_step"] = r.best_step;
    info["best_score"] = r.best_score;
    py::list step_scores;
    for (const StepScore& s : r.scores) step_scores.append(py::make_tuple(s.step, s.score));
    info["scores"] = step_scores;
    return py::make_tuple(sample_to_complex(r.best, built.context), info);
  }

  py::dict consistency_check(const PyComplex& complex, double t, std::uint64_t seed) {
    // f at epsilon must be the identity; exposed for direct verification
    BuiltContext built = build_context(complex.data.graph, complex.data.scaffold_mask);
    Rng rng(seed);
    ScaffoldState z = draw_unit_noise(built.scaffold.atom_count(), rng);
    ScaffoldState out = consistency_apply(z, t, built.context, pair.target, config.denoiser(),
                                          config.schedule());
    double max_dev = 0.0;
    for (std::size_t i = 0; i < z.coords.values.size(); ++i)
      max_dev = std::max(max_dev, std::abs(out.coords.values[i] - z.coords.values[i]));
    for (std::size_t i = 0; i < z.features.values.size(); ++i)
      max_dev = std::max(max_dev, std::abs(out.features.values[i] - z.features.values[i]));
    py::dict d;
    d["max_deviation_from_input"] = max_dev;
    return d;
  }

  void save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.step = steps_done;
    ckpt.config_json = config.to_json().dump();
    ckpt.online = pair.online;
    ckpt.ema = pair.target;
    save_checkpoint(path, ckpt);
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "pocket-conditioned equivariant consistency models over synthetic complexes";

  py::class_<PyComplex>(m, "Complex")
      .def_property_readonly("atom_count", &PyComplex::atom_count)
      .def_property_readonly("edge_count", &PyComplex::edge_count)
      .def("elements", &PyComplex::elements)
      .def("roles", &PyComplex::roles)
      .def("positions", &PyComplex::positions)
      .def("scaffold_mask", &PyComplex::scaffold_mask)
      .def("to_json", &PyComplex::to_json)
      .def_static("from_json", &PyComplex::from_json, py::arg("text"))
      .def("save", &PyComplex::save, py::arg("path"))
      .def_static("load", &PyComplex::load, py::arg("path"));

  m.def(
      "synthesize_complex",
      [](std::uint64_t seed, std::size_t scaffold_min, std::size_t scaffold_max,
         std::size_t pocket_min, std::size_t pocket_max) {
        SizeParams sizes;
        sizes.scaffold_min = scaffold_min;
        sizes.scaffold_max = scaffold_max;
        sizes.pocket_min = pocket_min;
        sizes.pocket_max = pocket_max;
        return PyComplex{synthesize_complex(seed, sizes)};
      },
      py::arg("seed"), py::arg("scaffold_min") = 6, py::arg("scaffold_max") = 10,
      py::arg("pocket_min") = 8, py::arg("pocket_max") = 14,
      "Procedurally generate a pocket/scaffold complex (deterministic in the seed).");

  m.def(
      "count_clashes",
      [](const PyComplex& c) { return count_clashes(c.ligand(), c.pocket()); },
      py::arg("complex"), "Steric clashes between the ligand and the pocket.");
  m.def(
      "connectivity",
      [](const PyComplex& c) {
        const ConnectivityReport r = connectivity_and_valence(c.ligand());
        return py::make_tuple(r.connected, r.valence_ok_fraction);
      },
      py::arg("complex"), "(is_connected, valence_ok_fraction) of the ligand.");
  m.def(
      "canonical_hash",
      [](const PyComplex& c) { return canonical_hash(c.ligand()); }, py::arg("complex"),
      "Isomorphism-invariant 64-bit digest of the ligand graph.");
  m.def(
      "tanimoto_dissimilarity",
      [](const PyComplex& a, const PyComplex& b) { return fingerprint_tanimoto(a.ligand(), b.ligand()); },
      py::arg("a"), py::arg("b"));
  m.def(
      "proxy_pocket_energy",
      [](const PyComplex& c) { return proxy_pocket_energy(c.ligand(), c.pocket()); },
      py::arg("complex"), "Lennard-Jones-style pocket interaction proxy (lower is better).");

  m.def(
      "karras_grid",
      [](std::size_t n, double sigma_min, double sigma_max, double rho) {
        NoiseSchedule s;
        s.sigma_min = sigma_min;
        s.sigma_max = sigma_max;
        s.rho = rho;
        return karras_grid(s, n);
      },
      py::arg("n"), py::arg("sigma_min") = 0.002, py::arg("sigma_max") = 80.0, py::arg("rho") = 7.0);
  m.def(
      "skip_out_coeffs",
      [](double t, double sigma_min, double sigma_data) {
        NoiseSchedule s;
        s.sigma_min = sigma_min;
        s.sigma_data = sigma_data;
        const SkipOutCoeffs c = skip_out_coeffs(t, s);
        return py::make_tuple(c.skip, c.out);
      },
      py::arg("t"), py::arg("sigma_min") = 0.002, py::arg("sigma_data") = 0.5);
  m.def("jsd", &jsd, py::arg("p"), py::arg("q"),
        "Jensen-Shannon divergence (natural log base) between two histograms.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<std::size_t, std::size_t, std::uint64_t>(), py::arg("layers") = 4,
           py::arg("hidden") = 64, py::arg("seed") = 0)
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def("train", &PyModel::train, py::arg("complexes"), py::arg("steps") = 100,
           py::arg("batch") = 4, py::arg("lr") = 1e-4, py::arg("grid_steps") = 50,
           py::arg("seed") = 0, py::arg("threads") = 2)
      .def("sample", &PyModel::sample, py::arg("complex"), py::arg("steps") = 10,
           py::arg("score") = true, py::arg("metric_start") = 1, py::arg("seed") = 0,
           py::arg("use_ema") = true)
      .def("consistency_check", &PyModel::consistency_check, py::arg("complex"), py::arg("t"),
           py::arg("seed") = 0)
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("steps_done", [](const PyModel& m2) { return m2.steps_done; });
}
