#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pocketcm/consistency.hpp"
#include "pocketcm/io.hpp"
#include "pocketcm/metrics.hpp"
#include "pocketcm/rlcm.hpp"
#include "pocketcm/sampler.hpp"

namespace fs = std::filesystem;
using namespace pocketcm;

namespace {

std::string resolve_out(const std::string& out) {
  const char* root = std::getenv("POCKETCM_OUT_ROOT");
  if (root && *root && !out.empty() && out[0] != '/') return std::string(root) + "/" + out;
  return out;
}

struct RunDir {
  fs::path dir;
  nlohmann::json manifest;

  explicit RunDir(const std::string& out, const std::string& command, const RunConfig& config) {
    dir = resolve_out(out);
    fs::create_directories(dir);
    manifest["command"] = command;
    manifest["seed"] = config.seed;
    manifest["inputs"] = nlohmann::json::object();
    manifest["outputs"] = nlohmann::json::array();
    atomic_write_file((dir / "config.json").string(), config.to_json().dump(2) + "\n");
    manifest["outputs"].push_back("config.json");
  }

  void record_input(const std::string& path) {
    manifest["inputs"][path] = hash_hex(content_hash_file(path));
  }
  void write(const std::string& name, const std::string& contents) {
    atomic_write_file((dir / name).string(), contents);
    manifest["outputs"].push_back(name);
  }
  void finish() { atomic_write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n"); }
};

std::vector<fs::path> complex_files(const std::string& data_dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("complex_", 0) == 0 && entry.path().extension() == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no complex_*.json files in " + data_dir);
  return files;
}

// Model dimensions and the noise schedule come from the config snapshot the
// checkpoint carries; the active config drives sampling/finetuning knobs.
ConsistencyModel model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
  RunConfig stored = RunConfig::from_json(nlohmann::json::parse(ckpt.config_json));
  ConsistencyModel model;
  model.params = use_ema ? ckpt.ema : ckpt.online;
  model.config = stored.denoiser();
  model.schedule = stored.schedule();
  Rng probe = Rng::substream(0, "shape-probe");
  validate_checkpoint_shapes(ckpt, init_denoiser_params(model.config, probe));
  return model;
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string row;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) row += ",";
    row += cells[i];
  }
  return row + "\n";
}

int cmd_gen_data(const RunConfig& config, const std::string& out, std::size_t count) {
  RunDir run(out, "gen-data", config);
  nlohmann::json hashes = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) {
    Rng seed_stream = Rng::substream(config.seed, "data", i);
    SynthesizedComplex sc = synthesize_complex(seed_stream.next_u64(), config.sizes);
    char name[64];
    std::snprintf(name, sizeof(name), "complex_%04zu.json", i);
    run.write(name, complex_to_json(sc.graph, sc.scaffold_mask).dump(2) + "\n");
    std::vector<AtomRecord> molecule;
    for (const AtomRecord& a : sc.graph.atoms)
      if (a.role != AtomRole::Pocket) molecule.push_back(a);
    hashes.push_back(hash_hex(canonical_hash(molecule)));
  }
  run.write("hashes.json", hashes.dump(2) + "\n");
  run.finish();
  std::printf("gen-data: wrote %zu complexes to %s\n", count, run.dir.c_str());
  return 0;
}

int cmd_train(const RunConfig& config, const std::string& data_dir, const std::string& out) {
  RunDir run(out, "train", config);
  std::vector<TrainItem> items;
  for (const fs::path& f : complex_files(data_dir)) {
    run.record_input(f.string());
    SynthesizedComplex sc = read_complex_json(f.string());
    items.push_back(make_train_item(build_context(sc.graph, sc.scaffold_mask)));
  }

  Rng init_rng = Rng::substream(config.seed, "init");
  ConsistencyTrainer trainer(config.denoiser(), config.schedule(),
                             TrainingSchedule::constant(config.train_grid_steps, config.ema_decay),
                             config.trainer(), init_denoiser_params(config.denoiser(), init_rng));

  const double initial_probe = trainer.probe_loss(items, config.seed, 128);
  Rng train_rng = Rng::substream(config.seed, "train");
  std::string log = csv_join({"step", "loss", "grad_norm"});
  for (std::size_t s = 0; s < config.train_steps; ++s) {
    StepMetrics m = trainer.train_step(items, train_rng);
    log += csv_join({std::to_string(s + 1), format_double(m.loss), format_double(m.grad_norm)});
  }
  const double final_probe = trainer.probe_loss(items, config.seed, 128);
  run.write("training_log.csv", log);

  Checkpoint ckpt;
  ckpt.step = trainer.step_count();
  ckpt.config_json = config.to_json().dump();
  ckpt.online = trainer.pair().online;
  ckpt.ema = trainer.pair().target;
  save_checkpoint((run.dir / "ckpt.thcm").string(), ckpt);
  run.manifest["outputs"].push_back("ckpt.thcm");

  nlohmann::json summary{{"steps", config.train_steps},
                         {"initial_probe_loss", initial_probe},
                         {"final_probe_loss", final_probe},
                         {"probe_ratio", final_probe / initial_probe}};
  run.write("train_summary.json", summary.dump(2) + "\n");
  run.finish();
  std::printf("train: %zu steps, probe loss %.6f -> %.6f (ratio %.4f)\n", config.train_steps,
              initial_probe, final_probe, final_probe / initial_probe);
  return 0;
}

int cmd_sample(const RunConfig& config, const std::string& ckpt_path, const std::string& data_dir,
               const std::string& out, const std::string& score_mode, const std::string& sampler_kind,
               std::size_t per_context, std::size_t ode_steps, const std::string& solver_name,
               std::size_t resample_u, std::size_t jump) {
  RunDir run(out, "sample", config);
  run.record_input(ckpt_path);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ConsistencyModel model = model_from_checkpoint(ckpt, config.sample_with_ema);

  std::string scores_csv = csv_join({"context", "sample", "step", "score"});
  std::string summary_csv =
      csv_join({"context", "sample", "best_step", "best_score", "final_score", "evals"});

  std::size_t ctx_index = 0;
  for (const fs::path& f : complex_files(data_dir)) {
    run.record_input(f.string());
    SynthesizedComplex sc = read_complex_json(f.string());
    BuiltContext built = build_context(sc.graph, sc.scaffold_mask);
    const std::size_t n_atoms = built.scaffold.atom_count();

    for (std::size_t s = 0; s < per_context; ++s) {
      Rng rng = Rng::substream(config.seed, "sample", ctx_index * 100000 + s);
      SampleResult result;
      if (sampler_kind == "cm") {
        SamplingPlan plan =
            SamplingPlan::from_steps(model.schedule, config.sample_steps, config.metric_start);
        plan.variance_difference_renoise = config.variance_difference_renoise;
        ScoreFn score;
        if (score_mode == "default") score = custom_score;
        result = multistep_metric_sample(model, plan, built.context, n_atoms, score, rng);
      } else if (sampler_kind == "ode") {
        const DenoiserGraph graph = DenoiserGraph::build(n_atoms, built.context);
        DenoiseFn denoiser = [&](const ScaffoldState& z, double t) {
          return model.apply(z, t, built.context, &graph);
        };
        result = pf_ode_sample(denoiser, model.schedule, n_atoms, ode_steps,
                               solver_name == "euler" ? OdeSolver::Euler : OdeSolver::Heun, rng);
      } else {  // inpaint
        const DenoiserGraph graph = DenoiserGraph::build(n_atoms, built.context);
        DenoiseFn denoiser = [&](const ScaffoldState& z, double t) {
          return model.apply(z, t, built.context, &graph);
        };
        std::vector<std::uint8_t> known(n_atoms, 0);
        for (std::size_t i = 0; i < n_atoms / 2; ++i) known[i] = 1;  // inpaint the second half
        result = inpaint_sample(denoiser, model.schedule, known, built.scaffold, resample_u, jump,
                                ode_steps, rng);
      }

      // decoded best sample joined with its context, in complex JSON format
      std::vector<AtomRecord> scaffold_atoms = decode_molecule(result.best, MolecularContext{});
      ComplexGraph sample_graph;
      std::vector<std::uint8_t> mask;
      for (const AtomRecord& a : scaffold_atoms) {
        sample_graph.atoms.push_back(a);
        mask.push_back(1);
      }
      for (const AtomRecord& a : built.context.fg_atoms) {
        sample_graph.atoms.push_back(a);
        mask.push_back(0);
      }
      for (const AtomRecord& a : built.context.pocket_atoms) {
        sample_graph.atoms.push_back(a);
        mask.push_back(0);
      }
      sample_graph.rebuild_derived();
      char name[64];
      std::snprintf(name, sizeof(name), "sample_ctx%03zu_%03zu.json", ctx_index, s);
      run.write(name, complex_to_json(sample_graph, mask).dump(2) + "\n");

      for (const StepScore& sc2 : result.scores)
        scores_csv += csv_join({std::to_string(ctx_index), std::to_string(s),
                                std::to_string(sc2.step), format_double(sc2.score)});
      double final_score = 0.0;
      try {
        final_score = custom_score(result.final_state, built.context);
      } catch (const std::exception&) {
        final_score = -1e300;
      }
      summary_csv += csv_join({std::to_string(ctx_index), std::to_string(s),
                               std::to_string(result.best_step), format_double(result.best_score),
                               format_double(final_score), std::to_string(result.denoiser_evals)});
    }
    ++ctx_index;
  }
  run.write("scores.csv", scores_csv);
  run.write("samples_summary.csv", summary_csv);
  run.finish();
  std::printf("sample: wrote samples for %zu contexts to %s\n", ctx_index, run.dir.c_str());
  return 0;
}

int cmd_finetune(const RunConfig& config, const std::string& ckpt_path, const std::string& data_dir,
                 const std::string& out, const std::string& reward_name) {
  RunDir run(out, "finetune", config);
  run.record_input(ckpt_path);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ConsistencyModel policy = model_from_checkpoint(ckpt, config.sample_with_ema);

  std::vector<RlcmContextData> contexts;
  for (const fs::path& f : complex_files(data_dir)) {
    run.record_input(f.string());
    SynthesizedComplex sc = read_complex_json(f.string());
    contexts.push_back(make_rlcm_context(build_context(sc.graph, sc.scaffold_mask)));
  }

  const RewardKind kind = reward_name == "affinity" ? RewardKind::Affinity : RewardKind::Clash;
  RolloutPlan plan = RolloutPlan::from_horizon(config.schedule(), config.horizon,
                                               config.variance_difference_renoise);
  RlcmRunner runner(policy, plan, config.rlcm(), contexts, kind);

  std::string log = csv_join({"iteration", "mean_reward", "mean_clashes", "mean_energy",
                              "clip_fraction", "ratio_mean", "ratio_min", "ratio_max", "dropped",
                              "surrogate"});
  Rng rng = Rng::substream(config.seed, "rl");
  for (std::size_t it = 0; it < config.iterations; ++it) {
    PpoDiagnostics d = runner.iterate(rng);
    log += csv_join({std::to_string(it + 1), format_double(d.mean_reward),
                     format_double(d.mean_clashes), format_double(d.mean_energy),
                     format_double(d.clip_fraction), format_double(d.mean_ratio),
                     format_double(d.min_ratio), format_double(d.max_ratio),
                     std::to_string(d.dropped), format_double(d.surrogate)});
    if ((it + 1) % 10 == 0)
      std::printf("finetune iter %zu: reward %.4f clashes %.3f energy %.3f clipfrac %.3f\n", it + 1,
                  d.mean_reward, d.mean_clashes, d.mean_energy, d.clip_fraction);
  }
  run.write("rlcm_log.csv", log);

  Checkpoint out_ckpt;
  out_ckpt.step = ckpt.step + config.iterations;
  out_ckpt.config_json = config.to_json().dump();
  out_ckpt.online = runner.policy().params;
  out_ckpt.ema = runner.policy().params;
  save_checkpoint((run.dir / "ckpt_finetuned.thcm").string(), out_ckpt);
  run.manifest["outputs"].push_back("ckpt_finetuned.thcm");
  run.finish();
  std::printf("finetune: %zu iterations (%s reward) -> %s\n", config.iterations, reward_name.c_str(),
              run.dir.c_str());
  return 0;
}

int cmd_eval(const RunConfig& config, const std::string& samples_dir, const std::string& data_dir,
             const std::string& hashes_path, const std::string& out) {
  RunDir run(out, "eval", config);
  std::set<std::uint64_t> training_hashes;
  if (!hashes_path.empty()) {
    run.record_input(hashes_path);
    for (const nlohmann::json& h : nlohmann::json::parse(read_file(hashes_path)))
      training_hashes.insert(std::stoull(h.get<std::string>(), nullptr, 16));
  }

  std::vector<MolecularContext> contexts;
  std::vector<std::vector<AtomRecord>> reference_molecules;
  for (const fs::path& f : complex_files(data_dir)) {
    run.record_input(f.string());
    SynthesizedComplex sc = read_complex_json(f.string());
    BuiltContext built = build_context(sc.graph, sc.scaffold_mask);
    contexts.push_back(built.context);
    reference_molecules.push_back(decode_molecule(built.scaffold, built.context));
  }

  // Samples grouped per context by the sample_ctx{i}_{j}.json naming scheme.
  std::vector<std::vector<ScaffoldState>> samples(contexts.size());
  std::vector<std::vector<AtomRecord>> generated_molecules;
  for (const auto& entry : fs::directory_iterator(samples_dir)) {
    const std::string name = entry.path().filename().string();
    unsigned ctx = 0, idx = 0;
    if (std::sscanf(name.c_str(), "sample_ctx%u_%u.json", &ctx, &idx) != 2) continue;
    if (ctx >= contexts.size()) throw std::runtime_error("sample context out of range: " + name);
    run.record_input(entry.path().string());
    SynthesizedComplex sc = read_complex_json(entry.path().string());
    ScaffoldState z;
    std::vector<AtomRecord> scaffold;
    for (std::size_t i = 0; i < sc.graph.atoms.size(); ++i)
      if (sc.scaffold_mask[i]) scaffold.push_back(sc.graph.atoms[i]);
    z.coords = Tensor({scaffold.size(), 3});
    z.features = Tensor({scaffold.size(), kLigandElementCount}, 0.0);
    for (std::size_t i = 0; i < scaffold.size(); ++i) {
      for (std::size_t c = 0; c < 3; ++c) z.coords.at(i, c) = scaffold[i].position[c];
      z.features.at(i, static_cast<std::size_t>(scaffold[i].element)) = 1.0;
    }
    samples[ctx].push_back(z);
    generated_molecules.push_back(decode_molecule(z, contexts[ctx]));
  }

  EvalReport report = evaluate_batch(samples, contexts, training_hashes);

  std::string csv = csv_join({"context", "samples", "invalid", "connectivity", "validity",
                              "diversity", "novelty", "clash_mean", "clash_median"});
  for (const EvalContextRow& r : report.rows)
    csv += csv_join({std::to_string(r.context_id), std::to_string(r.samples),
                     std::to_string(r.invalid), format_double(r.connectivity_rate),
                     format_double(r.validity_rate), format_double(r.diversity),
                     format_double(r.novelty), format_double(r.clash_mean),
                     format_double(r.clash_median)});
  run.write("eval_report.csv", csv);

  const GeometryHistograms gen = bond_geometry_histograms(generated_molecules);
  const GeometryHistograms ref = bond_geometry_histograms(reference_molecules);
  auto hist_jsd = [](const Histogram& a, const Histogram& b) -> nlohmann::json {
    if (a.mass() <= 0.0 || b.mass() <= 0.0) return nullptr;
    return jsd(a.counts, b.counts);
  };
  // JSD in natural log base; validity = decodable + all atoms bonded +
  // clean valences; diversity is the per-context mean pairwise Tanimoto
  // dissimilarity (disclosed here because the aggregation is config-defined).
  nlohmann::json jreport{
      {"schema_version", 1},
      {"metric_notes",
       {{"jsd_log_base", "natural"},
        {"validity", "decodable + every atom bonded + valence_ok_fraction == 1"},
        {"diversity", "per-context mean pairwise Tanimoto dissimilarity (radius-2/2048-bit)"}}},
      {"aggregate",
       {{"connectivity", {{"mean", report.connectivity.mean}, {"std", report.connectivity.stddev}}},
        {"validity", {{"mean", report.validity.mean}, {"std", report.validity.stddev}}},
        {"diversity", {{"mean", report.diversity.mean}, {"std", report.diversity.stddev}}},
        {"novelty", {{"mean", report.novelty.mean}, {"std", report.novelty.stddev}}},
        {"clash_mean", {{"mean", report.clash_mean.mean}, {"std", report.clash_mean.stddev}}},
        {"total_samples", report.total_samples},
        {"total_invalid", report.total_invalid}}},
      {"geometry_jsd_vs_reference",
       {{"cc_distance", hist_jsd(gen.cc_distance, ref.cc_distance)},
        {"cn_distance", hist_jsd(gen.cn_distance, ref.cn_distance)},
        {"co_distance", hist_jsd(gen.co_distance, ref.co_distance)},
        {"bond_angles", hist_jsd(gen.bond_angles, ref.bond_angles)}}},
      {"ring_counts_generated", gen.ring_counts},
      {"ring_counts_reference", ref.ring_counts}};
  run.write("eval_report.json", jreport.dump(2) + "\n");
  run.finish();
  std::printf("eval: connectivity %.3f +- %.3f, diversity %.3f, novelty %.3f -> %s\n",
              report.connectivity.mean, report.connectivity.stddev, report.diversity.mean,
              report.novelty.mean, run.dir.c_str());
  return 0;
}

int cmd_bench(const RunConfig& config, const std::string& ckpt_path, const std::string& data_dir,
              const std::string& out, std::size_t cm_steps, std::size_t ode_steps,
              std::size_t batch) {
  RunDir run(out, "bench", config);
  run.record_input(ckpt_path);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ConsistencyModel model = model_from_checkpoint(ckpt, config.sample_with_ema);

  std::vector<BuiltContext> contexts;
  for (const fs::path& f : complex_files(data_dir)) {
    run.record_input(f.string());
    SynthesizedComplex sc = read_complex_json(f.string());
    contexts.push_back(build_context(sc.graph, sc.scaffold_mask));
    if (contexts.size() >= batch) break;
  }

  std::vector<TimingRun> runs;
  std::size_t cm_evals = 0, heun_evals = 0;
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const BuiltContext& built = contexts[c];
    const std::size_t n_atoms = built.scaffold.atom_count();
    {
      Rng rng = Rng::substream(config.seed, "bench-cm", c);
      SamplingPlan plan = SamplingPlan::from_steps(model.schedule, cm_steps);
      SampleResult r = multistep_metric_sample(model, plan, built.context, n_atoms, nullptr, rng);
      runs.push_back({"consistency", r.wall_seconds, r.denoiser_evals, cm_steps});
      cm_evals = r.denoiser_evals;
    }
    {
      Rng rng = Rng::substream(config.seed, "bench-ode", c);
      const DenoiserGraph graph = DenoiserGraph::build(n_atoms, built.context);
      DenoiseFn denoiser = [&](const ScaffoldState& z, double t) {
        return model.apply(z, t, built.context, &graph);
      };
      SampleResult r = pf_ode_sample(denoiser, model.schedule, n_atoms, ode_steps, OdeSolver::Heun, rng);
      runs.push_back({"heun_pf_ode", r.wall_seconds, r.denoiser_evals, ode_steps});
      heun_evals = r.denoiser_evals;
    }
  }

  const std::vector<TimingRow> rows = timing_report(runs, "heun_pf_ode");
  std::string csv = csv_join(
      {"method", "runs", "steps", "evals", "wall_mean_s", "wall_std_s", "speedup_wall", "eval_ratio"});
  for (const TimingRow& r : rows)
    csv += csv_join({r.method, std::to_string(r.runs), std::to_string(r.steps),
                     std::to_string(r.evals), format_double(r.wall_mean), format_double(r.wall_std),
                     format_double(r.speedup_wall), format_double(r.eval_ratio)});
  run.write("bench_timing.csv", csv);  // measured wall clock: not byte-reproducible

  nlohmann::json counts{{"consistency_evals", cm_evals},
                        {"heun_evals", heun_evals},
                        {"cm_steps", cm_steps},
                        {"ode_steps", ode_steps},
                        {"eval_ratio", static_cast<double>(heun_evals) / static_cast<double>(cm_evals)},
                        {"contexts", contexts.size()}};
  run.write("bench_counts.json", counts.dump(2) + "\n");
  run.finish();
  double cm_wall = 0, ode_wall = 0;
  for (const TimingRow& r : rows) {
    if (r.method == "consistency") cm_wall = r.wall_mean;
    if (r.method == "heun_pf_ode") ode_wall = r.wall_mean;
  }
  std::printf("bench: consistency %zu evals %.3fs/ctx vs heun %zu evals %.3fs/ctx (%.1fx wall)\n",
              cm_evals, cm_wall, heun_evals, ode_wall, ode_wall / cm_wall);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pocketcm: pocket-conditioned equivariant consistency models on synthetic complexes"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt_path, samples_dir, hashes_path;
  std::string score_mode = "default", reward_name = "clash", sampler_kind = "cm";
  std::string solver_name = "heun";
  std::size_t count = 10, per_context = 1, ode_steps = 500, cm_steps = 50, batch = 4;
  std::size_t resample_u = 1, jump = 1;
  RunConfig cli_config;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "RunConfig JSON file");
    cmd->add_option("--seed", cli_config.seed, "root seed");
    cmd->add_option("--threads", cli_config.threads, "worker threads");
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic complexes");
  add_common(gen);
  gen->add_option("--count", count, "number of complexes");
  gen->add_option("--scaffold-min", cli_config.sizes.scaffold_min);
  gen->add_option("--scaffold-max", cli_config.sizes.scaffold_max);
  gen->add_option("--pocket-min", cli_config.sizes.pocket_min);
  gen->add_option("--pocket-max", cli_config.sizes.pocket_max);

  CLI::App* train = app.add_subcommand("train", "consistency training");
  add_common(train);
  train->add_option("--data", data_dir, "complex directory")->required();
  train->add_option("--steps", cli_config.train_steps, "optimizer steps");
  train->add_option("--batch", cli_config.batch_size, "batch size");
  train->add_option("--grid-steps", cli_config.train_grid_steps, "N(k) grid size");
  train->add_option("--lr", cli_config.lr, "learning rate");
  train->add_option("--layers", cli_config.layers);
  train->add_option("--hidden", cli_config.hidden);

  CLI::App* sample = app.add_subcommand("sample", "metric-selected multistep sampling");
  add_common(sample);
  sample->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  sample->add_option("--data", data_dir, "complex directory")->required();
  sample->add_option("--steps", cli_config.sample_steps, "consistency evaluation count");
  sample->add_option("--metric-start", cli_config.metric_start, "first scored step m");
  sample->add_option("--score", score_mode, "off|default")
      ->check(CLI::IsMember({"off", "default"}));
  sample->add_option("--sampler", sampler_kind, "cm|ode|inpaint")
      ->check(CLI::IsMember({"cm", "ode", "inpaint"}));
  sample->add_option("--count", per_context, "samples per context");
  sample->add_option("--ode-steps", ode_steps, "PF-ODE steps (ode/inpaint)");
  sample->add_option("--solver", solver_name, "euler|heun")->check(CLI::IsMember({"euler", "heun"}));
  sample->add_option("--resample-u", resample_u, "inpaint resampling loops");
  sample->add_option("--jump", jump, "inpaint jump length");
  sample->add_flag("--variance-renoise", cli_config.variance_difference_renoise,
                   "use sqrt(tau^2 - eps^2) re-noise instead of the printed sqrt(tau_n - tau_n+1)");
  sample->add_flag("!--no-ema", cli_config.sample_with_ema, "sample with online weights");

  CLI::App* finetune = app.add_subcommand("finetune", "RLCM policy-gradient fine-tuning");
  add_common(finetune);
  finetune->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  finetune->add_option("--data", data_dir, "context complex directory")->required();
  finetune->add_option("--reward", reward_name, "affinity|clash")
      ->check(CLI::IsMember({"affinity", "clash"}));
  finetune->add_option("--horizon", cli_config.horizon, "inference steps per rollout");
  finetune->add_option("--iterations", cli_config.iterations, "outer iterations");
  finetune->add_option("--rollouts", cli_config.rollouts_per_context, "fresh rollouts per context");
  finetune->add_option("--clip-range", cli_config.clip_range, "PPO clip range");
  finetune->add_option("--rlcm-lr", cli_config.rlcm_lr, "policy learning rate");
  finetune->add_option("--minibatches", cli_config.minibatches);

  CLI::App* eval = app.add_subcommand("eval", "batch evaluation report");
  add_common(eval);
  eval->add_option("--samples", samples_dir, "sample directory")->required();
  eval->add_option("--data", data_dir, "context complex directory")->required();
  eval->add_option("--train-hashes", hashes_path, "hashes.json from gen-data");

  CLI::App* bench = app.add_subcommand("bench", "consistency vs Heun PF-ODE timing");
  add_common(bench);
  bench->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  bench->add_option("--data", data_dir, "complex directory")->required();
  bench->add_option("--cm-steps", cm_steps, "consistency evaluations");
  bench->add_option("--ode-steps", ode_steps, "Heun steps");
  bench->add_option("--batch", batch, "contexts to time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s", app.help().c_str());
    return 2;
  }

  try {
    RunConfig config = cli_config;
    if (!config_path.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_file(config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(config_path + ": malformed JSON: " + e.what());
      }
      config = RunConfig::from_json(j);
      // Explicitly passed CLI options override the file.
      CLI::App* sub = app.get_subcommands().front();
      auto passed = [&](const std::string& name) {
        const CLI::Option* opt = sub->get_option_no_throw(name);
        return opt && opt->count() > 0;
      };
      if (passed("--seed")) config.seed = cli_config.seed;
      if (passed("--threads")) config.threads = cli_config.threads;
      if (passed("--steps") && sub->get_name() == "train") config.train_steps = cli_config.train_steps;
      if (passed("--steps") && sub->get_name() == "sample") config.sample_steps = cli_config.sample_steps;
      if (passed("--batch") && sub->get_name() == "train") config.batch_size = cli_config.batch_size;
      if (passed("--grid-steps")) config.train_grid_steps = cli_config.train_grid_steps;
      if (passed("--lr")) config.lr = cli_config.lr;
      if (passed("--layers")) config.layers = cli_config.layers;
      if (passed("--hidden")) config.hidden = cli_config.hidden;
      if (passed("--metric-start")) config.metric_start = cli_config.metric_start;
      if (passed("--horizon")) config.horizon = cli_config.horizon;
      if (passed("--iterations")) config.iterations = cli_config.iterations;
      if (passed("--rollouts")) config.rollouts_per_context = cli_config.rollouts_per_context;
      if (passed("--clip-range")) config.clip_range = cli_config.clip_range;
      if (passed("--rlcm-lr")) config.rlcm_lr = cli_config.rlcm_lr;
      if (passed("--minibatches")) config.minibatches = cli_config.minibatches;
      if (passed("--variance-renoise"))
        config.variance_difference_renoise = cli_config.variance_difference_renoise;
      if (passed("--no-ema")) config.sample_with_ema = cli_config.sample_with_ema;
      if (passed("--scaffold-min")) config.sizes.scaffold_min = cli_config.sizes.scaffold_min;
      if (passed("--scaffold-max")) config.sizes.scaffold_max = cli_config.sizes.scaffold_max;
      if (passed("--pocket-min")) config.sizes.pocket_min = cli_config.sizes.pocket_min;
      if (passed("--pocket-max")) config.sizes.pocket_max = cli_config.sizes.pocket_max;
    }
    config.validate();

    if (gen->parsed()) return cmd_gen_data(config, out_dir, count);
    if (train->parsed()) return cmd_train(config, data_dir, out_dir);
    if (sample->parsed())
      return cmd_sample(config, ckpt_path, data_dir, out_dir, score_mode, sampler_kind, per_context,
                        ode_steps, solver_name, resample_u, jump);
    if (finetune->parsed()) return cmd_finetune(config, ckpt_path, data_dir, out_dir, reward_name);
    if (eval->parsed()) return cmd_eval(config, samples_dir, data_dir, hashes_path, out_dir);
    if (bench->parsed()) return cmd_bench(config, ckpt_path, data_dir, out_dir, cm_steps, ode_steps, batch);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
