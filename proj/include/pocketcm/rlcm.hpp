#pragma once

#include <cstddef>
#include <vector>

#include "pocketcm/sampler.hpp"

namespace pocketcm {

// Proxy affinity of generated and reference molecule, validity proxy,
// connectivity, clash counts and the combined reward.
struct RewardTerms {
  double generated_energy = 0.0;  // DS
  double reference_energy = 0.0;  // RS
  double validity = 0.0;          // V, valence-fraction proxy
  double connectivity = 0.0;      // C
  double generated_clashes = 0.0; // SC
  double reference_clashes = 0.0; // RSC
  double combined = 0.0;
};

enum class RewardKind { Affinity, Clash };

// Lennard-Jones-style pocket interaction: sum over ligand/pocket pairs within
// 8 A of 4 [(r0/d)^12 - (r0/d)^6], r0 = vdW_i + vdW_j - 0.5, d floored at
// 0.8 r0. Lower is better.
double proxy_pocket_energy(const std::vector<AtomRecord>& ligand,
                           const std::vector<AtomRecord>& pocket, const BondTable& table = {});

// r = -2 (DS - RS) + V + C
RewardTerms reward_affinity(const std::vector<AtomRecord>& molecule,
                            const std::vector<AtomRecord>& reference,
                            const std::vector<AtomRecord>& pocket, const BondTable& table = {});

// r = C + V - (SC - RSC)
RewardTerms reward_clash(const std::vector<AtomRecord>& molecule,
                         const std::vector<AtomRecord>& reference,
                         const std::vector<AtomRecord>& pocket, const BondTable& table = {});

// Diagonal-Gaussian log-density summed over coordinates and features.
double gaussian_logprob(const ScaffoldState& action, const ScaffoldState& mean, double stddev);

// Within each context group subtract the mean and divide by the population
// std (+1e-8); groups of one pass through zero-centred.
std::vector<double> normalize_rewards_per_context(const std::vector<std::size_t>& context_ids,
                                                  const std::vector<double>& rewards);

// Evaluation times e_0 = T > e_1 > ... > e_H for a rollout with H actions;
// the policy noise for action a_t mirrors the sampler's re-noise scale for
// the destination state.
struct RolloutPlan {
  std::vector<double> eval_times;
  double terminal_floor = 0.002;
  bool variance_difference = false;

  static RolloutPlan from_horizon(const NoiseSchedule& schedule, std::size_t horizon,
                                  bool variance_difference = false);
  std::size_t horizon() const { return eval_times.size() - 1; }
  double sigma_for_transition(std::size_t t) const;
};

struct TrajectoryStep {
  ScaffoldState state;   // noised scaffold at time tau
  ScaffoldState action;  // next noised state
  double tau = 0.0;
  double sigma = 0.0;
  double behavior_logprob = 0.0;
};

struct Trajectory {
  std::size_t context_id = 0;
  std::vector<TrajectoryStep> steps;
  ScaffoldState terminal;  // f(s_H), the molecule the reward sees
  RewardTerms reward;
  double normalized_reward = 0.0;
};

struct RlcmContextData {
  MolecularContext context;
  std::vector<AtomRecord> reference_molecule;
  std::size_t scaffold_atoms = 0;
  DenoiserGraph graph;
};

RlcmContextData make_rlcm_context(const BuiltContext& built);

// Multistep inference with Gaussian transition noise; rewards assigned once
// at the horizon. Deterministic in the rng; zero policy noise reproduces the
// plain multistep sample.
std::vector<Trajectory> rollout_trajectories(const ConsistencyModel& policy, const RolloutPlan& plan,
                                             const std::vector<RlcmContextData>& contexts,
                                             std::size_t rollouts_per_context, RewardKind kind,
                                             Rng& rng, bool zero_noise = false,
                                             std::size_t threads = 2);

struct RlcmConfig {
  AdamConfig adam{1e-5, 0.9, 0.995, 1e-8};
  double clip_range = 1e-4;
  std::size_t inner_epochs = 1;
  std::size_t buffer_size = 32;
  std::size_t min_count = 16;
  std::size_t rollouts_per_context = 16;
  std::size_t update_trajs_per_context = 16;  // newest-first draw from the buffer
  std::size_t minibatches = 4;
  double max_grad_norm = 10.0;
  std::size_t threads = 2;
  bool variance_difference = false;
};

struct PpoDiagnostics {
  double mean_ratio = 1.0;
  double min_ratio = 1.0;
  double max_ratio = 1.0;
  double clip_fraction = 0.0;
  double mean_reward = 0.0;       // raw combined reward over the update set
  double mean_clashes = 0.0;
  double mean_energy = 0.0;
  std::size_t dropped = 0;        // non-finite ratios
  std::size_t trajectories = 0;
  double surrogate = 0.0;
};

// One clipped-surrogate update pass (Alg. 3 inner loop) over the given
// trajectories: accumulates gradients across all H steps per minibatch,
// clips the global norm, applies Adam.
PpoDiagnostics ppo_clipped_update(std::vector<Trajectory>& trajectories,
                                  const std::vector<RlcmContextData>& contexts,
                                  ConsistencyModel& policy, AdamState& optimizer,
                                  const RlcmConfig& config, Rng& rng);

// Buffered fine-tuning driver: fresh rollouts per iteration, per-context ring
// buffers, min-count gating, then ppo_clipped_update on the newest
// trajectories per context.
class RlcmRunner {
 public:
  RlcmRunner(ConsistencyModel policy, RolloutPlan plan, RlcmConfig config,
             std::vector<RlcmContextData> contexts, RewardKind kind);

  PpoDiagnostics iterate(Rng& rng);
  const ConsistencyModel& policy() const { return policy_; }
  ConsistencyModel& policy() { return policy_; }
  const RolloutPlan& plan() const { return plan_; }

 private:
  ConsistencyModel policy_;
  RolloutPlan plan_;
  RlcmConfig config_;
  std::vector<RlcmContextData> contexts_;
  RewardKind kind_;
  AdamState adam_;
  std::vector<std::vector<Trajectory>> buffers_;  // per context, newest last
};

}  // namespace pocketcm
