#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pocketcm/denoiser.hpp"
#include "pocketcm/mol.hpp"
#include "pocketcm/optim.hpp"
#include "pocketcm/rng.hpp"

namespace pocketcm {

struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double rho = 7.0;

  double epsilon() const { return sigma_min; }
};

// Karras time grid, strictly decreasing from sigma_max to sigma_min:
// t_i = (sigma_max^(1/rho) + (i-1)/(N-1) (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho
std::vector<double> karras_grid(const NoiseSchedule& schedule, std::size_t n);

struct SkipOutCoeffs {
  double skip = 1.0;
  double out = 0.0;
};

// z_skip = sd^2 / ((t-eps)^2 + sd^2), z_out = sd (t-eps) / sqrt((t-eps)^2 + sd^2);
// (1, 0) at t = eps, so the boundary condition holds structurally.
SkipOutCoeffs skip_out_coeffs(double t, const NoiseSchedule& schedule);

// f(Z_t, t | u) = z_skip Z_t + z_out F_theta(Z_t, t | u), coordinates re-centred.
ScaffoldState consistency_apply(const ScaffoldState& z_t, double t, const MolecularContext& context,
                                const ParamSet& params, const DenoiserConfig& config,
                                const NoiseSchedule& schedule,
                                const DenoiserGraph* cached_graph = nullptr);

DenoiserNodes consistency_apply_tape(Tape& tape, const BoundParams& bound, const ParamSet& params,
                                     const DenoiserConfig& config, const NoiseSchedule& schedule,
                                     const DenoiserGraph& graph, int x_id, int h_id,
                                     const MolecularContext& context, double t);

struct EmaPair {
  ParamSet online;  // theta
  ParamSet target;  // theta^-
};

// theta^- = mu theta^- + (1 - mu) theta
void ema_update(EmaPair& pair, double mu);

// N(k) and mu(k); both constant by default but pluggable.
struct TrainingSchedule {
  std::function<std::size_t(std::size_t)> step_count;
  std::function<double(std::size_t)> ema_decay;

  static TrainingSchedule constant(std::size_t n, double mu) {
    TrainingSchedule s;
    s.step_count = [n](std::size_t) { return n; };
    s.ema_decay = [mu](std::size_t) { return mu; };
    return s;
  }
};

struct TrainItem {
  ScaffoldState scaffold;  // clean data, CoM-centred
  MolecularContext context;
  DenoiserGraph graph;
};

TrainItem make_train_item(const BuiltContext& built);

// One sampled training pair: same noise draw at the target (lower) and
// student (higher) time.
struct LossDraw {
  std::size_t item = 0;
  std::size_t n = 0;       // grid index drawn from U[1, N-1] (increasing enumeration)
  double t_target = 0.0;   // t_n
  double t_student = 0.0;  // t_{n+1} > t_n
  Tensor eps_x;            // CoM-projected
  Tensor eps_h;
};

// MSE(f_theta(z + t_{n+1} eps, t_{n+1} | u), f_theta-(z + t_n eps, t_n | u))
// over coordinates plus features; the target branch is a constant.
double consistency_training_loss(const TrainItem& item, const LossDraw& draw, const EmaPair& pair,
                                 const DenoiserConfig& config, const NoiseSchedule& schedule,
                                 GradMap* grads_out);

struct TrainerConfig {
  AdamConfig adam{1e-4, 0.9, 0.995, 1e-8};
  double max_grad_norm = 10.0;
  std::size_t batch_size = 4;
  std::size_t threads = 2;
};

struct StepMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double mean_grad_norm = 0.0;
  std::size_t steps = 0;
};

class ConsistencyTrainer {
 public:
  ConsistencyTrainer(DenoiserConfig config, NoiseSchedule schedule, TrainingSchedule training,
                     TrainerConfig trainer, ParamSet initial);

  LossDraw sample_draw(std::size_t n_items, std::size_t scaffold_atoms, Rng& rng) const;

  StepMetrics train_step(const std::vector<TrainItem>& dataset, Rng& rng);
  EpochMetrics train_epoch(const std::vector<TrainItem>& dataset, Rng& rng);

  // Mean loss over deterministic draws from `seed`; never updates parameters.
  double probe_loss(const std::vector<TrainItem>& dataset, std::uint64_t seed,
                    std::size_t samples) const;

  EmaPair& pair() { return pair_; }
  const EmaPair& pair() const { return pair_; }
  std::size_t step_count() const { return k_; }
  const DenoiserConfig& denoiser_config() const { return config_; }
  const NoiseSchedule& noise_schedule() const { return schedule_; }
  AdamState& optimizer_state() { return adam_; }

 private:
  DenoiserConfig config_;
  NoiseSchedule schedule_;
  TrainingSchedule training_;
  TrainerConfig trainer_;
  EmaPair pair_;
  AdamState adam_;
  std::size_t k_ = 0;
};

}  // namespace pocketcm
