#include "pocketcm/consistency.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pocketcm/util.hpp"

namespace pocketcm {

std::vector<double> karras_grid(const NoiseSchedule& schedule, std::size_t n) {
  if (n < 2) throw std::invalid_argument("karras_grid: need at least 2 points");
  const double inv_rho = 1.0 / schedule.rho;
  const double hi = std::pow(schedule.sigma_max, inv_rho);
  const double lo = std::pow(schedule.sigma_min, inv_rho);
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    grid[i] = std::pow(hi + frac * (lo - hi), schedule.rho);
  }
  grid.front() = schedule.sigma_max;
  grid.back() = schedule.sigma_min;
  return grid;
}

SkipOutCoeffs skip_out_coeffs(double t, const NoiseSchedule& schedule) {
  const double eps = schedule.epsilon();
  if (t < eps) throw std::invalid_argument("skip_out_coeffs: t below epsilon");
  const double dt = t - eps;
  const double sd2 = schedule.sigma_data * schedule.sigma_data;
  SkipOutCoeffs c;
  c.skip = sd2 / (dt * dt + sd2);
  c.out = schedule.sigma_data * dt / std::sqrt(dt * dt + sd2);
  return c;
}

DenoiserNodes consistency_apply_tape(Tape& tape, const BoundParams& bound, const ParamSet& params,
                                     const DenoiserConfig& config, const NoiseSchedule& schedule,
                                     const DenoiserGraph& graph, int x_id, int h_id,
                                     const MolecularContext& context, double t) {
  const SkipOutCoeffs c = skip_out_coeffs(t, schedule);
  DenoiserNodes raw = denoiser_forward_tape(tape, bound, params, config, graph, x_id, h_id, context, t);
  int fx = tape.add(tape.scale(x_id, c.skip), tape.scale(raw.x, c.out));
  int fh = tape.add(tape.scale(h_id, c.skip), tape.scale(raw.h, c.out));
  const double n_s = static_cast<double>(graph.n_scaffold);
  int mean = tape.scale(tape.sum_rows(fx), 1.0 / n_s);
  return {tape.sub(fx, mean), fh};
}

ScaffoldState consistency_apply(const ScaffoldState& z_t, double t, const MolecularContext& context,
                                const ParamSet& params, const DenoiserConfig& config,
                                const NoiseSchedule& schedule, const DenoiserGraph* cached_graph) {
  DenoiserGraph local;
  if (!cached_graph) {
    local = DenoiserGraph::build(z_t.atom_count(), context);
    cached_graph = &local;
  }
  Tape tape;
  BoundParams bound = BoundParams::bind(tape, params);
  DenoiserNodes out = consistency_apply_tape(tape, bound, params, config, schedule, *cached_graph,
                                             tape.constant(z_t.coords), tape.constant(z_t.features),
                                             context, t);
  ScaffoldState result;
  result.coords = tape.value(out.x);
  result.features = tape.value(out.h);
  return result;
}

void ema_update(EmaPair& pair, double mu) {
  if (mu <= 0.0 || mu >= 1.0) throw std::invalid_argument("ema_update: mu must lie in (0, 1)");
  if (pair.target.items.size() != pair.online.items.size())
    throw std::invalid_argument("ema_update: parameter sets differ");
  for (std::size_t i = 0; i < pair.online.items.size(); ++i) {
    Tensor& tgt = pair.target.items[i].second;
    const Tensor& onl = pair.online.items[i].second;
    for (std::size_t k = 0; k < tgt.values.size(); ++k)
      tgt.values[k] = mu * tgt.values[k] + (1.0 - mu) * onl.values[k];
  }
}

TrainItem make_train_item(const BuiltContext& built) {
  TrainItem item;
  item.scaffold = built.scaffold;
  item.context = built.context;
  item.graph = DenoiserGraph::build(built.scaffold.atom_count(), built.context);
  return item;
}

namespace {

Tensor noisy(const Tensor& clean, const Tensor& eps, double t) {
  Tensor out = clean;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += t * eps.values[i];
  return out;
}

}  // namespace

double consistency_training_loss(const TrainItem& item, const LossDraw& draw, const EmaPair& pair,
                                 const DenoiserConfig& config, const NoiseSchedule& schedule,
                                 GradMap* grads_out) {
  // Target branch (theta^-): plain evaluation, excluded from differentiation.
  ScaffoldState target_in;
  target_in.coords = noisy(item.scaffold.coords, draw.eps_x, draw.t_target);
  target_in.features = noisy(item.scaffold.features, draw.eps_h, draw.t_target);
  ScaffoldState target =
      consistency_apply(target_in, draw.t_target, item.context, pair.target, config, schedule,
                        &item.graph);

  Tape tape;
  BoundParams bound = BoundParams::bind(tape, pair.online);
  int x_id = tape.constant(noisy(item.scaffold.coords, draw.eps_x, draw.t_student));
  int h_id = tape.constant(noisy(item.scaffold.features, draw.eps_h, draw.t_student));
  DenoiserNodes student = consistency_apply_tape(tape, bound, pair.online, config, schedule,
                                                 item.graph, x_id, h_id, item.context, draw.t_student);
  int loss = tape.add(tape.mse(student.x, tape.constant(target.coords)),
                      tape.mse(student.h, tape.constant(target.features)));
  const double value = tape.value(loss).scalar_value();
  if (grads_out) {
    tape.backward(loss);
    *grads_out = bound.grads(tape, pair.online);
  }
  return value;
}

ConsistencyTrainer::ConsistencyTrainer(DenoiserConfig config, NoiseSchedule schedule,
                                       TrainingSchedule training, TrainerConfig trainer,
                                       ParamSet initial)
    : config_(config), schedule_(schedule), training_(std::move(training)), trainer_(trainer) {
  pair_.online = initial;
  pair_.target = std::move(initial);  // theta^- starts at theta
  adam_.config = trainer_.adam;
  adam_.init(pair_.online);
}

LossDraw ConsistencyTrainer::sample_draw(std::size_t n_items, std::size_t scaffold_atoms,
                                         Rng& rng) const {
  const std::size_t n_grid = training_.step_count(k_);
  const std::vector<double> grid = karras_grid(schedule_, n_grid);
  LossDraw draw;
  draw.item = rng.uniform_int(n_items);
  // n ~ U[1, N-1] in the increasing enumeration (t_1 = eps, t_N = sigma_max):
  // target at t_n = grid[N-n], student at t_{n+1} = grid[N-n-1].
  draw.n = 1 + rng.uniform_int(n_grid - 1);
  draw.t_target = grid[n_grid - draw.n];
  draw.t_student = grid[n_grid - draw.n - 1];
  if (scaffold_atoms > 0) {
    draw.eps_x = Tensor({scaffold_atoms, 3});
    for (double& v : draw.eps_x.values) v = rng.normal();
    subtract_com_inplace(draw.eps_x);
    draw.eps_h = Tensor({scaffold_atoms, kLigandElementCount});
    for (double& v : draw.eps_h.values) v = rng.normal();
  }
  return draw;
}

StepMetrics ConsistencyTrainer::train_step(const std::vector<TrainItem>& dataset, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("train_step: empty dataset");
  const std::size_t batch = std::min(trainer_.batch_size, dataset.size());

  // All random draws happen before the parallel section.
  std::vector<LossDraw> draws;
  draws.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    LossDraw d = sample_draw(dataset.size(), 0, rng);
    const std::size_t atoms = dataset[d.item].scaffold.atom_count();
    d.eps_x = Tensor({atoms, 3});
    for (double& v : d.eps_x.values) v = rng.normal();
    subtract_com_inplace(d.eps_x);
    d.eps_h = Tensor({atoms, kLigandElementCount});
    for (double& v : d.eps_h.values) v = rng.normal();
    draws.push_back(std::move(d));
  }

  std::vector<double> losses(batch, 0.0);
  std::vector<GradMap> grads(batch);
  parallel_for(batch, trainer_.threads, [&](std::size_t b) {
    losses[b] = consistency_training_loss(dataset[draws[b].item], draws[b], pair_, config_, schedule_,
                                          &grads[b]);
  });

  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  mean_loss /= static_cast<double>(batch);
  if (!std::isfinite(mean_loss)) {
    std::ostringstream os;
    os << "train_step: non-finite loss at k=" << k_ << "; draws:";
    for (std::size_t b = 0; b < batch; ++b)
      os << " (item=" << draws[b].item << ", n=" << draws[b].n << ", t_n=" << draws[b].t_target
         << ", t_n+1=" << draws[b].t_student << ", loss=" << losses[b] << ")";
    throw std::runtime_error(os.str());
  }

  // Fixed-order accumulation keeps the batch reduction deterministic.
  GradMap total = grads[0];
  for (std::size_t b = 1; b < batch; ++b)
    for (auto& [name, g] : total) {
      const Tensor& gb = grads[b].at(name);
      for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += gb.values[i];
    }
  for (auto& [name, g] : total)
    for (double& v : g.values) v /= static_cast<double>(batch);

  StepMetrics metrics;
  metrics.loss = mean_loss;
  metrics.grad_norm = clip_global_norm(total, trainer_.max_grad_norm);
  metrics.skipped = !adam_step(pair_.online, total, adam_);
  ema_update(pair_, training_.ema_decay(k_));
  k_ += 1;
  return metrics;
}

EpochMetrics ConsistencyTrainer::train_epoch(const std::vector<TrainItem>& dataset, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  const std::size_t steps =
      (dataset.size() + trainer_.batch_size - 1) / std::max<std::size_t>(1, trainer_.batch_size);
  EpochMetrics metrics;
  for (std::size_t s = 0; s < steps; ++s) {
    StepMetrics m = train_step(dataset, rng);
    metrics.mean_loss += m.loss;
    metrics.mean_grad_norm += m.grad_norm;
    metrics.steps += 1;
  }
  metrics.mean_loss /= static_cast<double>(metrics.steps);
  metrics.mean_grad_norm /= static_cast<double>(metrics.steps);
  return metrics;
}

double ConsistencyTrainer::probe_loss(const std::vector<TrainItem>& dataset, std::uint64_t seed,
                                      std::size_t samples) const {
  Rng rng = Rng::substream(seed, "probe");
  std::vector<LossDraw> draws;
  for (std::size_t s = 0; s < samples; ++s) {
    LossDraw d = sample_draw(dataset.size(), 0, rng);
    const std::size_t atoms = dataset[d.item].scaffold.atom_count();
    d.eps_x = Tensor({atoms, 3});
    for (double& v : d.eps_x.values) v = rng.normal();
    subtract_com_inplace(d.eps_x);
    d.eps_h = Tensor({atoms, kLigandElementCount});
    for (double& v : d.eps_h.values) v = rng.normal();
    draws.push_back(std::move(d));
  }
  std::vector<double> losses(samples, 0.0);
  parallel_for(samples, trainer_.threads, [&](std::size_t s) {
    losses[s] = consistency_training_loss(dataset[draws[s].item], draws[s], pair_, config_, schedule_,
                                          nullptr);
  });
  double mean = 0.0;
  for (double l : losses) mean += l;
  return mean / static_cast<double>(samples);
}

}  // namespace pocketcm
