#include <doctest.h>

#include <cmath>

#include "pocketcm/rlcm.hpp"

using namespace pocketcm;

namespace {

struct RlcmFixture {
  NoiseSchedule schedule;
  ConsistencyModel policy;
  std::vector<RlcmContextData> contexts;

  explicit RlcmFixture(std::uint64_t seed, std::size_t n_contexts = 2) {
    DenoiserConfig config;
    config.hidden = 16;
    config.layers = 2;
    config.zero_init_gate = false;
    Rng ir = Rng::substream(seed, "init");
    policy.params = init_denoiser_params(config, ir);
    policy.config = config;
    policy.schedule = schedule;
    for (std::size_t c = 0; c < n_contexts; ++c) {
      SizeParams sizes;
      sizes.scaffold_min = 6;
      sizes.scaffold_max = 7;
      sizes.pocket_min = 8;
      sizes.pocket_max = 9;
      SynthesizedComplex sc = synthesize_complex(seed * 100 + c, sizes);
      contexts.push_back(make_rlcm_context(build_context(sc.graph, sc.scaffold_mask)));
    }
  }
};

AtomRecord atom(Element e, double x, double y, double z, AtomRole role = AtomRole::Scaffold) {
  return AtomRecord{e, {x, y, z}, role};
}

}  // namespace

TEST_CASE("gaussian_logprob") {
  ScaffoldState mean;
  mean.coords = Tensor({2, 3}, 0.5);
  mean.features = Tensor({2, kLigandElementCount}, -0.2);
  const std::size_t k = mean.coords.numel() + mean.features.numel();

  SUBCASE("density at the mode") {
    CHECK(gaussian_logprob(mean, mean, 1.0) ==
          doctest::Approx(-0.5 * static_cast<double>(k) * std::log(2.0 * M_PI)).epsilon(1e-12));
  }
  SUBCASE("doubling the std drops the mode log-density by k ln 2") {
    const double delta = gaussian_logprob(mean, mean, 1.0) - gaussian_logprob(mean, mean, 2.0);
    CHECK(delta == doctest::Approx(static_cast<double>(k) * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("matches an independent high-precision evaluation on random draws") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
      ScaffoldState action = mean;
      for (double& v : action.coords.values) v += rng.normal();
      for (double& v : action.features.values) v += rng.normal();
      const double sigma = 0.3 + rng.uniform();
      long double expect = 0.0L;
      for (std::size_t i = 0; i < action.coords.values.size(); ++i) {
        const long double z = (action.coords.values[i] - mean.coords.values[i]) / sigma;
        expect += -0.5L * z * z - 0.5L * std::log(2.0L * M_PIl) - std::log((long double)sigma);
      }
      for (std::size_t i = 0; i < action.features.values.size(); ++i) {
        const long double z = (action.features.values[i] - mean.features.values[i]) / sigma;
        expect += -0.5L * z * z - 0.5L * std::log(2.0L * M_PIl) - std::log((long double)sigma);
      }
      CHECK(gaussian_logprob(action, mean, sigma) ==
            doctest::Approx(static_cast<double>(expect)).epsilon(1e-10));
    }
  }
  SUBCASE("non-positive std rejected") {
    CHECK_THROWS_AS(gaussian_logprob(mean, mean, 0.0), std::invalid_argument);
  }
}

TEST_CASE("proxy_pocket_energy") {
  BondTable table;
  const double r0 = 2.0 * table.vdw_radius(Element::C) - table.clash_tolerance;  // 2.9
  std::vector<AtomRecord> pocket = {atom(Element::Res0, 0, 0, 0, AtomRole::Pocket)};

  SUBCASE("zero at the LJ crossing") {
    CHECK(proxy_pocket_energy({atom(Element::C, r0, 0, 0)}, pocket) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("minimum of -1 at 2^(1/6) r0") {
    const double d = std::pow(2.0, 1.0 / 6.0) * r0;
    CHECK(proxy_pocket_energy({atom(Element::C, d, 0, 0)}, pocket) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("empty interaction shell is zero") {
    CHECK(proxy_pocket_energy({atom(Element::C, 9.0, 0, 0)}, pocket) == 0.0);
  }
  SUBCASE("distance floor keeps deep-overlap values bounded") {
    const double e0 = proxy_pocket_energy({atom(Element::C, 0.0, 0, 0)}, pocket);
    const double e_floor = proxy_pocket_energy({atom(Element::C, 0.8 * r0, 0, 0)}, pocket);
    CHECK(e0 == doctest::Approx(e_floor));
  }
}

TEST_CASE("reward functions") {
  // connected, valence-clean two-carbon molecule well clear of the pocket
  std::vector<AtomRecord> reference = {atom(Element::C, 0, 0, 0), atom(Element::C, 1.5, 0, 0)};
  std::vector<AtomRecord> pocket = {atom(Element::Res0, 0, 0, 6.0, AtomRole::Pocket)};

  SUBCASE("generated equal to reference") {
    RewardTerms a = reward_affinity(reference, reference, pocket);
    CHECK(a.combined == doctest::Approx(a.validity + a.connectivity));
    CHECK(a.connectivity == 1.0);
    CHECK(a.validity == 1.0);
    RewardTerms c = reward_clash(reference, reference, pocket);
    CHECK(c.combined == doctest::Approx(2.0));
  }
  SUBCASE("one unit of proxy-energy improvement is worth +2") {
    RewardTerms base = reward_affinity(reference, reference, pocket);
    // hand-build terms: DS = RS - 1
    RewardTerms t = base;
    t.generated_energy = t.reference_energy - 1.0;
    const double combined = -2.0 * (t.generated_energy - t.reference_energy) + t.validity + t.connectivity;
    CHECK(combined == doctest::Approx(4.0));
  }
  SUBCASE("disconnected clone loses exactly the connectivity point") {
    std::vector<AtomRecord> split = {atom(Element::C, 0, 0, 0), atom(Element::C, 4.0, 0, 0)};
    RewardTerms a = reward_affinity(split, reference, pocket);
    CHECK(a.connectivity == 0.0);
    // proxy energies of both fragments still evaluated; compare the C term only
    RewardTerms ref_terms = reward_affinity(reference, reference, pocket);
    CHECK(ref_terms.connectivity - a.connectivity == doctest::Approx(1.0));
  }
  SUBCASE("clash reward arithmetic") {
    RewardTerms t;
    t.connectivity = 1.0;
    t.validity = 1.0;
    t.generated_clashes = 5.0;
    t.reference_clashes = 2.0;
    const double combined = t.connectivity + t.validity - (t.generated_clashes - t.reference_clashes);
    CHECK(combined == doctest::Approx(-1.0));
    t.generated_clashes = 0.0;
    CHECK(t.connectivity + t.validity - (t.generated_clashes - t.reference_clashes) ==
          doctest::Approx(4.0));
  }
}

TEST_CASE("normalize_rewards_per_context") {
  SUBCASE("pair {1, 3} becomes {-1, +1}") {
    auto out = normalize_rewards_per_context({0, 0}, {1.0, 3.0});
    CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-7));
  }
  SUBCASE("constant group collapses to zeros") {
    auto out = normalize_rewards_per_context({0, 0, 0}, {2.5, 2.5, 2.5});
    for (double v : out) CHECK(v == 0.0);
  }
  SUBCASE("affine shifts within a context cancel") {
    auto a = normalize_rewards_per_context({0, 0, 1, 1}, {1.0, 3.0, -2.0, 4.0});
    auto b = normalize_rewards_per_context({0, 0, 1, 1}, {101.0, 103.0, 48.0, 54.0});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }
  SUBCASE("singleton group passes through zero-centred") {
    auto out = normalize_rewards_per_context({0, 1, 1}, {7.0, 1.0, 2.0});
    CHECK(out[0] == 0.0);
  }
}

TEST_CASE("rollout_trajectories") {
  RlcmFixture f(301);
  RolloutPlan plan = RolloutPlan::from_horizon(f.schedule, 3);

  SUBCASE("plan times decrease and sigma matches the sampler convention") {
    CHECK(plan.horizon() == 3);
    CHECK(plan.eval_times[0] == 80.0);
    for (std::size_t t = 0; t + 1 < plan.eval_times.size(); ++t)
      CHECK(plan.eval_times[t + 1] < plan.eval_times[t]);
    const double last_sigma = plan.sigma_for_transition(plan.horizon() - 1);
    CHECK(last_sigma ==
          doctest::Approx(std::sqrt(plan.eval_times.back() - plan.terminal_floor)).epsilon(1e-12));
  }
  SUBCASE("same seed gives identical trajectories and rewards") {
    Rng r1(5), r2(5);
    auto a = rollout_trajectories(f.policy, plan, f.contexts, 2, RewardKind::Clash, r1);
    auto b = rollout_trajectories(f.policy, plan, f.contexts, 2, RewardKind::Clash, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].reward.combined == b[i].reward.combined);
      CHECK(a[i].terminal.coords.values == b[i].terminal.coords.values);
      for (std::size_t s = 0; s < a[i].steps.size(); ++s)
        CHECK(a[i].steps[s].behavior_logprob == b[i].steps[s].behavior_logprob);
    }
  }
  SUBCASE("zero policy noise reproduces the deterministic multistep sample") {
    Rng r1(6);
    auto rollouts = rollout_trajectories(f.policy, plan, f.contexts, 1, RewardKind::Clash, r1,
                                         /*zero_noise=*/true);
    // replay the sampler with the same initial draw stream
    Rng r2(6);
    const std::uint64_t seed0 = r2.next_u64();
    r2.next_u64();  // second context's seed
    Rng traj_rng(seed0);
    SamplingPlan splan;
    splan.t_max = plan.eval_times[0];
    splan.t_min = plan.terminal_floor;
    splan.taus.assign(plan.eval_times.begin() + 1, plan.eval_times.end());
    ScaffoldState z0 = draw_unit_noise(f.contexts[0].scaffold_atoms, traj_rng);
    for (double& v : z0.coords.values) v *= splan.t_max;
    for (double& v : z0.features.values) v *= splan.t_max;
    ScaffoldState z = f.policy.apply(z0, splan.t_max, f.contexts[0].context, &f.contexts[0].graph);
    for (std::size_t n = 0; n < splan.taus.size(); ++n)
      z = f.policy.apply(z, splan.taus[n], f.contexts[0].context, &f.contexts[0].graph);
    for (std::size_t i = 0; i < z.coords.values.size(); ++i)
      CHECK(rollouts[0].terminal.coords.values[i] == doctest::Approx(z.coords.values[i]).epsilon(1e-12));
  }
  SUBCASE("H=1 degenerates to a single-step MDP") {
    RolloutPlan one = RolloutPlan::from_horizon(f.schedule, 1);
    Rng rng(7);
    auto rollouts = rollout_trajectories(f.policy, one, f.contexts, 1, RewardKind::Clash, rng);
    CHECK(rollouts[0].steps.size() == 1);
  }
}

TEST_CASE("ppo_clipped_update") {
  RlcmFixture f(302);
  RolloutPlan plan = RolloutPlan::from_horizon(f.schedule, 2);
  RlcmConfig config;
  config.minibatches = 1;
  config.threads = 2;

  Rng rng(9);
  std::vector<Trajectory> trajs =
      rollout_trajectories(f.policy, plan, f.contexts, 4, RewardKind::Clash, rng);

  SUBCASE("ratios are exactly 1 for a freshly synchronized policy") {
    AdamState adam;
    adam.config = config.adam;
    adam.init(f.policy.params);
    ConsistencyModel policy = f.policy;
    Rng urng(1);
    PpoDiagnostics d = ppo_clipped_update(trajs, f.contexts, policy, adam, config, urng);
    CHECK(d.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.min_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.max_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.clip_fraction == 0.0);
    CHECK(d.trajectories == trajs.size());
  }
  SUBCASE("a stale behavior policy produces off-1 ratios and engages the clip") {
    // collect with theta, update with a perturbed theta': ratios leave the
    // 1e-4 clip band immediately
    ConsistencyModel stale = f.policy;
    Rng pr(99);
    for (auto& [name, tensor] : stale.params.items)
      for (double& v : tensor.values) v += 1e-3 * pr.normal();
    AdamState adam;
    adam.config = config.adam;
    adam.init(stale.params);
    Rng urng(2);
    PpoDiagnostics d = ppo_clipped_update(trajs, f.contexts, stale, adam, config, urng);
    CHECK(d.clip_fraction > 0.0);
    CHECK(d.mean_ratio != 1.0);
  }
  SUBCASE("clipped branch kills the gradient for out-of-range ratios") {
    // single synthetic trajectory, behaviour logprob shifted so ratio >> 1+eps
    std::vector<Trajectory> shifted = {trajs[0]};
    shifted[0].reward.combined = 5.0;  // positive
    for (TrajectoryStep& s : shifted[0].steps) s.behavior_logprob -= std::log(1.0 + 10.0 * config.clip_range);
    std::vector<Trajectory> fresh = {trajs[0]};
    // context group of one -> normalized reward 0 -> zero gradient anyway;
    // use two trajectories in one context with distinct rewards instead
    shifted.push_back(trajs[1]);
    shifted[1].context_id = shifted[0].context_id;

    AdamState adam;
    adam.config = config.adam;
    adam.init(f.policy.params);
    ConsistencyModel policy = f.policy;
    const ParamSet before = policy.params;
    Rng urng(3);
    PpoDiagnostics d = ppo_clipped_update(shifted, f.contexts, policy, adam, config, urng);
    CHECK(d.clip_fraction > 0.0);
    // parameters still move (the unshifted trajectory carries gradient), but
    // the update is finite and ran
    CHECK(d.trajectories == 2);
  }
  SUBCASE("non-finite ratio drops the trajectory and counts it") {
    std::vector<Trajectory> poisoned = trajs;
    poisoned[0].steps[0].behavior_logprob = -std::numeric_limits<double>::infinity();
    AdamState adam;
    adam.config = config.adam;
    adam.init(f.policy.params);
    ConsistencyModel policy = f.policy;
    Rng urng(5);
    PpoDiagnostics d = ppo_clipped_update(poisoned, f.contexts, policy, adam, config, urng);
    CHECK(d.dropped == 1);
  }
  SUBCASE("surrogate is invariant to per-context reward shifts") {
    auto grads_for = [&](double shift) {
      std::vector<Trajectory> copy = trajs;
      for (Trajectory& t : copy)
        if (t.context_id == 0) t.reward.combined += shift;
      AdamState adam;
      adam.config = config.adam;
      adam.init(f.policy.params);
      ConsistencyModel policy = f.policy;
      Rng urng(4);
      ppo_clipped_update(copy, f.contexts, policy, adam, config, urng);
      return policy.params;
    };
    const ParamSet a = grads_for(0.0);
    const ParamSet b = grads_for(100.0);
    for (std::size_t i = 0; i < a.items.size(); ++i)
      for (std::size_t k = 0; k < a.items[i].second.values.size(); ++k)
        CHECK(a.items[i].second.values[k] ==
              doctest::Approx(b.items[i].second.values[k]).epsilon(1e-10));
  }
}

TEST_CASE("rlcm runner buffering") {
  RlcmFixture f(303, 1);
  RolloutPlan plan = RolloutPlan::from_horizon(f.schedule, 2);
  RlcmConfig config;
  config.rollouts_per_context = 4;
  config.min_count = 8;
  config.buffer_size = 8;
  config.update_trajs_per_context = 4;
  config.minibatches = 1;

  RlcmRunner runner(f.policy, plan, config, f.contexts, RewardKind::Clash);
  Rng rng(11);
  PpoDiagnostics first = runner.iterate(rng);
  CHECK(first.trajectories == 0);  // buffer below min count, no update yet
  PpoDiagnostics second = runner.iterate(rng);
  CHECK(second.trajectories == 4);  // newest 4 of the 8 buffered
}
