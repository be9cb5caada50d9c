#include "pocketcm/rlcm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "pocketcm/util.hpp"

namespace pocketcm {

namespace {

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

constexpr double kInteractionShell = 8.0;

}  // namespace

double proxy_pocket_energy(const std::vector<AtomRecord>& ligand,
                           const std::vector<AtomRecord>& pocket, const BondTable& table) {
  double energy = 0.0;
  for (const AtomRecord& l : ligand)
    for (const AtomRecord& p : pocket) {
      const double d = dist3(l.position, p.position);
      if (d > kInteractionShell) continue;
      const double r0 = table.vdw_radius(l.element) + table.vdw_radius(p.element) - table.clash_tolerance;
      const double d_eff = std::max(d, 0.8 * r0);
      const double q = r0 / d_eff;
      const double q6 = q * q * q * q * q * q;
      energy += 4.0 * (q6 * q6 - q6);
    }
  return energy;
}

namespace {

RewardTerms base_terms(const std::vector<AtomRecord>& molecule,
                       const std::vector<AtomRecord>& reference,
                       const std::vector<AtomRecord>& pocket, const BondTable& table) {
  RewardTerms t;
  const ConnectivityReport report = connectivity_and_valence(molecule, table);
  t.connectivity = report.connected ? 1.0 : 0.0;
  t.validity = report.valence_ok_fraction;
  t.generated_energy = proxy_pocket_energy(molecule, pocket, table);
  t.reference_energy = proxy_pocket_energy(reference, pocket, table);
  t.generated_clashes = static_cast<double>(count_clashes(molecule, pocket, table));
  t.reference_clashes = static_cast<double>(count_clashes(reference, pocket, table));
  return t;
}

}  // namespace

RewardTerms reward_affinity(const std::vector<AtomRecord>& molecule,
                            const std::vector<AtomRecord>& reference,
                            const std::vector<AtomRecord>& pocket, const BondTable& table) {
  RewardTerms t = base_terms(molecule, reference, pocket, table);
  t.combined = -2.0 * (t.generated_energy - t.reference_energy) + t.validity + t.connectivity;
  return t;
}

RewardTerms reward_clash(const std::vector<AtomRecord>& molecule,
                         const std::vector<AtomRecord>& reference,
                         const std::vector<AtomRecord>& pocket, const BondTable& table) {
  RewardTerms t = base_terms(molecule, reference, pocket, table);
  t.combined = t.connectivity + t.validity - (t.generated_clashes - t.reference_clashes);
  return t;
}

double gaussian_logprob(const ScaffoldState& action, const ScaffoldState& mean, double stddev) {
  if (stddev <= 0.0) throw std::invalid_argument("gaussian_logprob: stddev must be positive");
  const std::size_t k = action.coords.numel() + action.features.numel();
  double quad = 0.0;
  for (std::size_t i = 0; i < action.coords.values.size(); ++i) {
    const double z = (action.coords.values[i] - mean.coords.values[i]) / stddev;
    quad += z * z;
  }
  for (std::size_t i = 0; i < action.features.values.size(); ++i) {
    const double z = (action.features.values[i] - mean.features.values[i]) / stddev;
    quad += z * z;
  }
  return -0.5 * quad - 0.5 * static_cast<double>(k) * std::log(2.0 * M_PI) -
         static_cast<double>(k) * std::log(stddev);
}

std::vector<double> normalize_rewards_per_context(const std::vector<std::size_t>& context_ids,
                                                  const std::vector<double>& rewards) {
  if (context_ids.size() != rewards.size())
    throw std::invalid_argument("normalize_rewards_per_context: size mismatch");
  std::vector<double> out(rewards.size(), 0.0);
  std::vector<std::size_t> groups(context_ids);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  for (std::size_t g : groups) {
    double mean = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < rewards.size(); ++i)
      if (context_ids[i] == g) {
        mean += rewards[i];
        ++count;
      }
    mean /= static_cast<double>(count);
    if (count < 2) {
      for (std::size_t i = 0; i < rewards.size(); ++i)
        if (context_ids[i] == g) out[i] = 0.0;  // zero-centred pass-through
      continue;
    }
    double var = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i)
      if (context_ids[i] == g) {
        const double d = rewards[i] - mean;
        var += d * d;
      }
    const double std_dev = std::sqrt(var / static_cast<double>(count));
    for (std::size_t i = 0; i < rewards.size(); ++i)
      if (context_ids[i] == g) out[i] = (rewards[i] - mean) / (std_dev + 1e-8);
  }
  return out;
}

RolloutPlan RolloutPlan::from_horizon(const NoiseSchedule& schedule, std::size_t horizon,
                                      bool variance_difference) {
  if (horizon < 1) throw std::invalid_argument("rollout plan: horizon must be >= 1");
  RolloutPlan plan;
  plan.variance_difference = variance_difference;
  const std::vector<double> grid = karras_grid(schedule, horizon + 2);
  plan.eval_times.assign(grid.begin(), grid.end() - 1);  // e_0..e_H
  plan.terminal_floor = grid.back();
  return plan;
}

double RolloutPlan::sigma_for_transition(std::size_t t) const {
  // a_t lands at eval_times[t+1]; its noise matches the sampler's re-noise
  // for that destination state.
  const double tau_n = eval_times[t + 1];
  const double tau_next = t + 2 < eval_times.size() ? eval_times[t + 2] : terminal_floor;
  return variance_difference ? std::sqrt(tau_n * tau_n - terminal_floor * terminal_floor)
                             : std::sqrt(tau_n - tau_next);
}

RlcmContextData make_rlcm_context(const BuiltContext& built) {
  RlcmContextData data;
  data.context = built.context;
  data.scaffold_atoms = built.scaffold.atom_count();
  data.reference_molecule = decode_molecule(built.scaffold, built.context);
  data.graph = DenoiserGraph::build(data.scaffold_atoms, built.context);
  return data;
}

std::vector<Trajectory> rollout_trajectories(const ConsistencyModel& policy, const RolloutPlan& plan,
                                             const std::vector<RlcmContextData>& contexts,
                                             std::size_t rollouts_per_context, RewardKind kind,
                                             Rng& rng, bool zero_noise, std::size_t threads) {
  if (rollouts_per_context < 1) throw std::invalid_argument("rollout: batch must be >= 1");
  const std::size_t H = plan.horizon();
  const std::size_t total = contexts.size() * rollouts_per_context;

  // Pre-draw every random number in a fixed order so worker scheduling
  // cannot change the streams.
  std::vector<std::uint64_t> seeds(total);
  for (std::uint64_t& s : seeds) s = rng.next_u64();

  std::vector<Trajectory> out(total);
  parallel_for(total, threads, [&](std::size_t idx) {
    const std::size_t ctx_id = idx / rollouts_per_context;
    const RlcmContextData& ctx = contexts[ctx_id];
    Rng local(seeds[idx]);

    Trajectory traj;
    traj.context_id = ctx_id;
    ScaffoldState state = draw_unit_noise(ctx.scaffold_atoms, local);
    for (double& v : state.coords.values) v *= plan.eval_times[0];
    for (double& v : state.features.values) v *= plan.eval_times[0];

    for (std::size_t t = 0; t < H; ++t) {
      ScaffoldState mean = policy.apply(state, plan.eval_times[t], ctx.context, &ctx.graph);
      const double sigma = plan.sigma_for_transition(t);
      ScaffoldState action = mean;
      if (!zero_noise) {
        ScaffoldState eps = draw_unit_noise(ctx.scaffold_atoms, local);
        for (std::size_t i = 0; i < action.coords.values.size(); ++i)
          action.coords.values[i] += sigma * eps.coords.values[i];
        for (std::size_t i = 0; i < action.features.values.size(); ++i)
          action.features.values[i] += sigma * eps.features.values[i];
      }
      TrajectoryStep step;
      step.state = state;
      step.action = action;
      step.tau = plan.eval_times[t];
      step.sigma = sigma;
      step.behavior_logprob = gaussian_logprob(action, mean, sigma);
      traj.steps.push_back(std::move(step));
      state = action;
    }
    traj.terminal = policy.apply(state, plan.eval_times[H], ctx.context, &ctx.graph);

    const std::vector<AtomRecord> molecule = decode_molecule(traj.terminal, ctx.context);
    traj.reward = kind == RewardKind::Affinity
                      ? reward_affinity(molecule, ctx.reference_molecule, ctx.context.pocket_atoms)
                      : reward_clash(molecule, ctx.reference_molecule, ctx.context.pocket_atoms);
    out[idx] = std::move(traj);
  });
  return out;
}

PpoDiagnostics ppo_clipped_update(std::vector<Trajectory>& trajectories,
                                  const std::vector<RlcmContextData>& contexts,
                                  ConsistencyModel& policy, AdamState& optimizer,
                                  const RlcmConfig& config, Rng& rng) {
  (void)rng;
  PpoDiagnostics diag;
  if (trajectories.empty()) return diag;
  diag.trajectories = trajectories.size();

  std::vector<std::size_t> ctx_ids(trajectories.size());
  std::vector<double> raw(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    ctx_ids[i] = trajectories[i].context_id;
    raw[i] = trajectories[i].reward.combined;
    diag.mean_reward += trajectories[i].reward.combined;
    diag.mean_clashes += trajectories[i].reward.generated_clashes;
    diag.mean_energy += trajectories[i].reward.generated_energy;
  }
  diag.mean_reward /= static_cast<double>(trajectories.size());
  diag.mean_clashes /= static_cast<double>(trajectories.size());
  diag.mean_energy /= static_cast<double>(trajectories.size());

  const std::vector<double> advantage = normalize_rewards_per_context(ctx_ids, raw);
  for (std::size_t i = 0; i < trajectories.size(); ++i)
    trajectories[i].normalized_reward = advantage[i];

  double ratio_sum = 0.0;
  double ratio_min = std::numeric_limits<double>::infinity();
  double ratio_max = -std::numeric_limits<double>::infinity();
  std::size_t ratio_count = 0, clipped_count = 0, dropped = 0;
  double surrogate_sum = 0.0;

  struct TrajStats {
    double ratio_sum = 0.0;
    double ratio_min = std::numeric_limits<double>::infinity();
    double ratio_max = -std::numeric_limits<double>::infinity();
    std::size_t clipped = 0;
    std::size_t count = 0;
    double surrogate = 0.0;
    bool finite = true;
  };

  const std::size_t k_mb = std::max<std::size_t>(1, config.minibatches);
  for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
    for (std::size_t mb = 0; mb < k_mb; ++mb) {
      std::vector<std::size_t> members;
      for (std::size_t i = mb; i < trajectories.size(); i += k_mb) members.push_back(i);
      if (members.empty()) continue;

      std::vector<GradMap> grads(members.size());
      std::vector<TrajStats> stats(members.size());

      parallel_for(members.size(), config.threads, [&](std::size_t mi) {
        const Trajectory& traj = trajectories[members[mi]];
        const RlcmContextData& ctx = contexts[traj.context_id];
        const double adv = traj.normalized_reward;
        TrajStats& st = stats[mi];

        Tape tape;
        BoundParams bound = BoundParams::bind(tape, policy.params);
        std::vector<int> terms;
        for (const TrajectoryStep& step : traj.steps) {
          DenoiserNodes mean = consistency_apply_tape(
              tape, bound, policy.params, policy.config, policy.schedule, ctx.graph,
              tape.constant(step.state.coords), tape.constant(step.state.features), ctx.context,
              step.tau);
          int dx = tape.sub(tape.constant(step.action.coords), mean.x);
          int dh = tape.sub(tape.constant(step.action.features), mean.h);
          int quad = tape.add(tape.sum_all(tape.mul(dx, dx)), tape.sum_all(tape.mul(dh, dh)));
          const std::size_t k_dim = step.action.coords.numel() + step.action.features.numel();
          const double const_part = -0.5 * static_cast<double>(k_dim) * std::log(2.0 * M_PI) -
                                    static_cast<double>(k_dim) * std::log(step.sigma);
          int lp_new = tape.add(tape.scale(quad, -0.5 / (step.sigma * step.sigma)),
                                tape.constant_scalar(const_part));
          int ratio = tape.exponential(tape.sub(lp_new, tape.constant_scalar(step.behavior_logprob)));
          const double r = tape.value(ratio).scalar_value();
          if (!std::isfinite(r)) {
            st.finite = false;
            break;
          }
          st.ratio_sum += r;
          st.ratio_min = std::min(st.ratio_min, r);
          st.ratio_max = std::max(st.ratio_max, r);
          st.count += 1;
          if (std::abs(r - 1.0) > config.clip_range) st.clipped += 1;
          int clipped = tape.clamp(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range);
          int term = tape.minimum(tape.scale(ratio, adv), tape.scale(clipped, adv));
          terms.push_back(term);
        }
        if (!st.finite || terms.empty()) {
          st.finite = st.finite && !terms.empty();
          return;
        }
        int objective = terms[0];
        for (std::size_t k = 1; k < terms.size(); ++k) objective = tape.add(objective, terms[k]);
        st.surrogate = tape.value(objective).scalar_value();
        int loss = tape.scale(objective, -1.0);
        tape.backward(loss);
        grads[mi] = bound.grads(tape, policy.params);
      });

      // deterministic reduction over surviving trajectories
      GradMap total;
      std::size_t alive = 0;
      for (std::size_t mi = 0; mi < members.size(); ++mi) {
        if (!stats[mi].finite) {
          ++dropped;
          continue;
        }
        if (grads[mi].empty()) continue;
        if (total.empty()) {
          total = grads[mi];
        } else {
          for (auto& [name, g] : total) {
            const Tensor& gb = grads[mi].at(name);
            for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += gb.values[k];
          }
        }
        ++alive;
        ratio_sum += stats[mi].ratio_sum;
        ratio_min = std::min(ratio_min, stats[mi].ratio_min);
        ratio_max = std::max(ratio_max, stats[mi].ratio_max);
        ratio_count += stats[mi].count;
        clipped_count += stats[mi].clipped;
        surrogate_sum += stats[mi].surrogate;
      }
      if (alive == 0) continue;
      for (auto& [name, g] : total)
        for (double& v : g.values) v /= static_cast<double>(alive);
      clip_global_norm(total, config.max_grad_norm);
      adam_step(policy.params, total, optimizer);
    }
  }

  diag.mean_ratio = ratio_count ? ratio_sum / static_cast<double>(ratio_count) : 1.0;
  diag.min_ratio = ratio_count ? ratio_min : 1.0;
  diag.max_ratio = ratio_count ? ratio_max : 1.0;
  diag.clip_fraction = ratio_count ? static_cast<double>(clipped_count) / ratio_count : 0.0;
  diag.dropped = dropped;
  diag.surrogate = surrogate_sum;
  return diag;
}

RlcmRunner::RlcmRunner(ConsistencyModel policy, RolloutPlan plan, RlcmConfig config,
                       std::vector<RlcmContextData> contexts, RewardKind kind)
    : policy_(std::move(policy)),
      plan_(std::move(plan)),
      config_(config),
      contexts_(std::move(contexts)),
      kind_(kind) {
  adam_.config = config_.adam;
  adam_.init(policy_.params);
  buffers_.resize(contexts_.size());
}

PpoDiagnostics RlcmRunner::iterate(Rng& rng) {
  std::vector<Trajectory> fresh = rollout_trajectories(policy_, plan_, contexts_,
                                                       config_.rollouts_per_context, kind_, rng,
                                                       false, config_.threads);
  for (Trajectory& t : fresh) {
    auto& buffer = buffers_[t.context_id];
    buffer.push_back(std::move(t));
    if (buffer.size() > config_.buffer_size)
      buffer.erase(buffer.begin(), buffer.begin() + (buffer.size() - config_.buffer_size));
  }
  std::vector<Trajectory> update_set;
  for (const auto& buffer : buffers_) {
    if (buffer.size() < config_.min_count) continue;  // context not yet eligible
    const std::size_t take = std::min(config_.update_trajs_per_context, buffer.size());
    update_set.insert(update_set.end(), buffer.end() - take, buffer.end());
  }
  return ppo_clipped_update(update_set, contexts_, policy_, adam_, config_, rng);
}

}  // namespace pocketcm
