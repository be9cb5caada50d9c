#include "pocketcm/sampler.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace pocketcm {

namespace {

using Clock = std::chrono::steady_clock;

ScaffoldState axpy(const ScaffoldState& a, double s, const ScaffoldState& b) {
  ScaffoldState out = a;
  for (std::size_t i = 0; i < out.coords.values.size(); ++i) out.coords.values[i] += s * b.coords.values[i];
  for (std::size_t i = 0; i < out.features.values.size(); ++i)
    out.features.values[i] += s * b.features.values[i];
  return out;
}

double max_abs(const ScaffoldState& z) {
  double m = 0.0;
  for (double v : z.coords.values) m = std::max(m, std::abs(v));
  for (double v : z.features.values) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

ScaffoldState draw_unit_noise(std::size_t n_atoms, Rng& rng) {
  ScaffoldState eps;
  eps.coords = Tensor({n_atoms, 3});
  for (double& v : eps.coords.values) v = rng.normal();
  subtract_com_inplace(eps.coords);
  eps.features = Tensor({n_atoms, kLigandElementCount});
  for (double& v : eps.features.values) v = rng.normal();
  return eps;
}

SamplingPlan SamplingPlan::from_steps(const NoiseSchedule& schedule, std::size_t total_evals,
                                      std::size_t metric_start) {
  if (total_evals < 1) throw std::invalid_argument("sampling plan: need at least one evaluation");
  SamplingPlan plan;
  plan.t_max = schedule.sigma_max;
  plan.t_min = schedule.sigma_min;
  plan.metric_start = metric_start;
  if (total_evals > 1) {
    const std::vector<double> grid = karras_grid(schedule, total_evals + 1);
    plan.taus.assign(grid.begin() + 1, grid.end() - 1);
  }
  return plan;
}

void SamplingPlan::validate() const {
  double prev = t_max;
  for (double tau : taus) {
    if (tau >= prev || tau < t_min)
      throw std::invalid_argument("sampling plan: times must strictly decrease within [eps, T]");
    prev = tau;
  }
  if (!taus.empty() && (metric_start < 1 || metric_start > taus.size()))
    throw std::invalid_argument("sampling plan: metric start outside [1, N-1]");
}

SampleResult multistep_metric_sample(const ConsistencyModel& model, const SamplingPlan& plan,
                                     const MolecularContext& context, std::size_t n_atoms,
                                     const ScoreFn& score_fn, Rng& rng) {
  plan.validate();
  const auto t0 = Clock::now();
  const DenoiserGraph graph = DenoiserGraph::build(n_atoms, context);

  SampleResult result;
  ScaffoldState z_tilde = draw_unit_noise(n_atoms, rng);
  for (double& v : z_tilde.coords.values) v *= plan.t_max;  // Z_T ~ N(0, T^2 I)
  for (double& v : z_tilde.features.values) v *= plan.t_max;
  ScaffoldState z = model.apply(z_tilde, plan.t_max, context, &graph);
  result.denoiser_evals = 1;

  double max_score = -std::numeric_limits<double>::infinity();
  ScaffoldState best;
  std::size_t best_step = 0;
  bool scored_any = false;

  const std::size_t n_refine = plan.taus.size();
  for (std::size_t idx = 0; idx < n_refine; ++idx) {
    const std::size_t n = idx + 1;  // Alg. 2's loop variable
    const double tau_n = plan.taus[idx];
    const double tau_next = idx + 1 < n_refine ? plan.taus[idx + 1] : plan.t_min;
    const double sigma = plan.variance_difference_renoise
                             ? std::sqrt(tau_n * tau_n - plan.t_min * plan.t_min)
                             : std::sqrt(tau_n - tau_next);
    ScaffoldState eps = draw_unit_noise(n_atoms, rng);
    ScaffoldState renoised = axpy(z, sigma, eps);
    z = model.apply(renoised, tau_n, context, &graph);
    result.denoiser_evals += 1;

    if (score_fn && n >= plan.metric_start) {
      double score;
      try {
        score = score_fn(z, context);
        if (!std::isfinite(score)) throw std::runtime_error("non-finite score");
      } catch (const std::exception& e) {
        std::fprintf(stderr, "[sample] score failed at step %zu (%s); candidate skipped\n", n, e.what());
        score = -std::numeric_limits<double>::infinity();
      }
      result.scores.push_back({n, score});
      if (score > max_score) {  // strict comparison: earliest candidate wins ties
        max_score = score;
        best = z;
        best_step = n;
        scored_any = true;
      }
    }
  }

  result.final_state = z;
  if (scored_any) {
    result.best = best;
    result.best_score = max_score;
    result.best_step = best_step;
  } else {
    result.best = z;
    result.best_score = score_fn ? -std::numeric_limits<double>::infinity() : 0.0;
    result.best_step = n_refine;
  }
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

double custom_score(const ScaffoldState& z, const MolecularContext& context) {
  if (!state_is_finite(z)) throw std::invalid_argument("custom_score: state not decodable");
  const std::vector<AtomRecord> molecule = decode_molecule(z, context);
  const ConnectivityReport report = connectivity_and_valence(molecule);
  const std::size_t clashes = count_clashes(molecule, context.pocket_atoms);
  return (report.connected ? 1.0 : 0.0) + report.valence_ok_fraction -
         0.1 * static_cast<double>(clashes);
}

ScaffoldState score_from_denoiser(const ScaffoldState& z_t, double t, const DenoiseFn& denoiser) {
  if (t <= 0.0) throw std::invalid_argument("score_from_denoiser: t must be positive");
  const ScaffoldState d = denoiser(z_t, t);
  ScaffoldState score;
  score.coords = Tensor(z_t.coords.shape);
  score.features = Tensor(z_t.features.shape);
  const double inv_t2 = 1.0 / (t * t);
  for (std::size_t i = 0; i < score.coords.values.size(); ++i)
    score.coords.values[i] = (d.coords.values[i] - z_t.coords.values[i]) * inv_t2;
  for (std::size_t i = 0; i < score.features.values.size(); ++i)
    score.features.values[i] = (d.features.values[i] - z_t.features.values[i]) * inv_t2;
  subtract_com_inplace(score.coords);
  if (!state_is_finite(score)) throw std::runtime_error("score_from_denoiser: non-finite score field");
  return score;
}

SampleResult pf_ode_sample(const DenoiseFn& denoiser, const NoiseSchedule& schedule,
                           std::size_t n_atoms, std::size_t n_steps, OdeSolver solver, Rng& rng) {
  if (n_steps < 1) throw std::invalid_argument("pf_ode_sample: need at least one step");
  const auto t0 = Clock::now();
  const std::vector<double> grid = karras_grid(schedule, n_steps + 1);

  SampleResult result;
  ScaffoldState z = draw_unit_noise(n_atoms, rng);
  for (double& v : z.coords.values) v *= schedule.sigma_max;
  for (double& v : z.features.values) v *= schedule.sigma_max;

  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t_cur = grid[i];
    const double t_next = grid[i + 1];
    const double dt = t_next - t_cur;
    // dZ/dt = -t s(Z, t) = (Z - D(Z, t)) / t
    ScaffoldState d_cur = axpy(z, -1.0, denoiser(z, t_cur));
    for (double& v : d_cur.coords.values) v /= t_cur;
    for (double& v : d_cur.features.values) v /= t_cur;
    result.denoiser_evals += 1;

    ScaffoldState z_euler = axpy(z, dt, d_cur);
    if (solver == OdeSolver::Heun && i + 1 < n_steps) {
      ScaffoldState d_next = axpy(z_euler, -1.0, denoiser(z_euler, t_next));
      for (double& v : d_next.coords.values) v /= t_next;
      for (double& v : d_next.features.values) v /= t_next;
      result.denoiser_evals += 1;
      ScaffoldState avg = d_cur;
      for (std::size_t k = 0; k < avg.coords.values.size(); ++k)
        avg.coords.values[k] = 0.5 * (avg.coords.values[k] + d_next.coords.values[k]);
      for (std::size_t k = 0; k < avg.features.values.size(); ++k)
        avg.features.values[k] = 0.5 * (avg.features.values[k] + d_next.features.values[k]);
      z = axpy(z, dt, avg);
    } else {
      z = z_euler;
    }
    if (max_abs(z) > 1e6)
      throw std::runtime_error("pf_ode_sample: trajectory diverged at step " + std::to_string(i));
  }
  subtract_com_inplace(z.coords);
  result.final_state = z;
  result.best = z;
  result.best_step = n_steps;
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

SampleResult inpaint_sample(const DenoiseFn& denoiser, const NoiseSchedule& schedule,
                            const std::vector<std::uint8_t>& known_mask, const ScaffoldState& known,
                            std::size_t resample_u, std::size_t jump, std::size_t n_steps, Rng& rng) {
  if (resample_u < 1) throw std::invalid_argument("inpaint_sample: U must be >= 1");
  if (jump < 1) throw std::invalid_argument("inpaint_sample: jump must be >= 1");
  const std::size_t n_atoms = known.atom_count();
  if (known_mask.size() != n_atoms) throw std::invalid_argument("inpaint_sample: mask size mismatch");
  bool all_known = true;
  for (std::uint8_t m : known_mask) all_known = all_known && m;
  if (all_known)
    std::fprintf(stderr, "[inpaint] mask covers all atoms; output reduces to the known block\n");

  const auto t0 = Clock::now();
  const std::vector<double> grid = karras_grid(schedule, n_steps + 1);
  SampleResult result;

  auto merge = [&](const ScaffoldState& known_block, const ScaffoldState& unknown_block) {
    ScaffoldState out = unknown_block;
    for (std::size_t i = 0; i < n_atoms; ++i) {
      if (!known_mask[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) out.coords.at(i, c) = known_block.coords.at(i, c);
      for (std::size_t c = 0; c < kLigandElementCount; ++c)
        out.features.at(i, c) = known_block.features.at(i, c);
    }
    return out;
  };

  // Ground truth forward-noised to level t; exact at the terminal level so
  // the final merge returns the known block verbatim.
  auto known_at = [&](double t) {
    if (t <= schedule.sigma_min) return known;
    ScaffoldState eps = draw_unit_noise(n_atoms, rng);
    return axpy(known, t, eps);
  };

  auto euler_step = [&](const ScaffoldState& z, double t_cur, double t_next) {
    ScaffoldState d = axpy(z, -1.0, denoiser(z, t_cur));
    for (double& v : d.coords.values) v /= t_cur;
    for (double& v : d.features.values) v /= t_cur;
    result.denoiser_evals += 1;
    return axpy(z, t_next - t_cur, d);
  };

  auto merged_step = [&](const ScaffoldState& z, std::size_t level) {
    const double t_cur = grid[level];
    const double t_next = grid[level + 1];
    ScaffoldState unknown_block = euler_step(z, t_cur, t_next);
    return merge(known_at(t_next), unknown_block);
  };

  ScaffoldState z = draw_unit_noise(n_atoms, rng);
  for (double& v : z.coords.values) v *= schedule.sigma_max;
  for (double& v : z.features.values) v *= schedule.sigma_max;

  for (std::size_t i = 0; i < n_steps; ++i) {
    z = merged_step(z, i);
    for (std::size_t u = 1; u < resample_u; ++u) {
      const std::size_t back = std::min(jump, i + 1);
      const double t_hi = grid[i + 1 - back];
      const double t_lo = grid[i + 1];
      ScaffoldState eps = draw_unit_noise(n_atoms, rng);
      z = axpy(z, std::sqrt(t_hi * t_hi - t_lo * t_lo), eps);
      for (std::size_t k = i + 1 - back; k <= i; ++k) z = merged_step(z, k);
    }
  }

  result.final_state = z;
  result.best = z;
  result.best_step = n_steps;
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

}  // namespace pocketcm
