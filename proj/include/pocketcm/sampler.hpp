#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pocketcm/consistency.hpp"
#include "pocketcm/mol.hpp"
#include "pocketcm/rng.hpp"

namespace pocketcm {

// Bundle of everything needed to evaluate f(Z_t, t | u).
struct ConsistencyModel {
  ParamSet params;
  DenoiserConfig config;
  NoiseSchedule schedule;

  ScaffoldState apply(const ScaffoldState& z, double t, const MolecularContext& context,
                      const DenoiserGraph* graph = nullptr) const {
    return consistency_apply(z, t, context, params, config, schedule, graph);
  }
};

// Time points tau_1 > ... > tau_{N-1} within [eps, T]; the terminal level
// t_min stands in for tau_N in the last re-noise. metric_start is the
// 1-based index m from which intermediate outputs are scored.
struct SamplingPlan {
  std::vector<double> taus;
  double t_max = 80.0;
  double t_min = 0.002;
  std::size_t metric_start = 1;
  bool variance_difference_renoise = false;  // sqrt(tau_n^2 - eps^2) instead of sqrt(tau_n - tau_{n+1})

  // total_evals = N: one call at T plus N-1 refinement calls.
  static SamplingPlan from_steps(const NoiseSchedule& schedule, std::size_t total_evals,
                                 std::size_t metric_start = 1);
  void validate() const;
  std::size_t total_evals() const { return taus.size() + 1; }
};

struct StepScore {
  std::size_t step = 0;  // n within Alg. 2's loop
  double score = 0.0;
};

struct SampleResult {
  ScaffoldState best;
  ScaffoldState final_state;
  std::vector<StepScore> scores;
  double best_score = 0.0;
  std::size_t best_step = 0;
  std::size_t denoiser_evals = 0;
  double wall_seconds = 0.0;  // measurement, excluded from determinism contracts
};

using ScoreFn = std::function<double(const ScaffoldState&, const MolecularContext&)>;
using DenoiseFn = std::function<ScaffoldState(const ScaffoldState&, double)>;

// Multistep consistency sampling with scoring and selection. With a null
// score function it reduces to plain multistep sampling (best = final); a
// failing score candidate is skipped with score -inf.
SampleResult multistep_metric_sample(const ConsistencyModel& model, const SamplingPlan& plan,
                                     const MolecularContext& context, std::size_t n_atoms,
                                     const ScoreFn& score_fn, Rng& rng);

// Connectivity + valence - 0.1 per clash, on the decoded molecule.
double custom_score(const ScaffoldState& z, const MolecularContext& context);

// Score-field estimate s(Z, t) = (D(Z, t) - Z) / t^2, coordinates CoM-projected.
ScaffoldState score_from_denoiser(const ScaffoldState& z_t, double t, const DenoiseFn& denoiser);

enum class OdeSolver { Euler, Heun };

// Probability-flow ODE dZ/dt = (Z - D(Z, t)) / t integrated from T to eps
// over the Karras grid. Heun spends 2 evaluations per step except the last.
SampleResult pf_ode_sample(const DenoiseFn& denoiser, const NoiseSchedule& schedule,
                           std::size_t n_atoms, std::size_t n_steps, OdeSolver solver, Rng& rng);

// Mask-merge inpainting over the PF-ODE loop: per step the known block is
// re-noised from the ground truth, the unknown block takes an Euler step,
// and the two merge by mask; U-1 resampling loops re-noise `jump` levels
// back and redo the segment. The final merge is exact on the known block.
SampleResult inpaint_sample(const DenoiseFn& denoiser, const NoiseSchedule& schedule,
                            const std::vector<std::uint8_t>& known_mask, const ScaffoldState& known,
                            std::size_t resample_u, std::size_t jump, std::size_t n_steps, Rng& rng);

// Fresh CoM-projected joint noise draw at unit scale.
ScaffoldState draw_unit_noise(std::size_t n_atoms, Rng& rng);

}  // namespace pocketcm
