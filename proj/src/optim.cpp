#include "pocketcm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pocketcm {

void AdamState::init(const ParamSet& params) {
  m.clear();
  v.clear();
  for (const auto& [name, tensor] : params.items) {
    m.emplace_back(tensor.shape, 0.0);
    v.emplace_back(tensor.shape, 0.0);
  }
  step = 0;
  skipped_steps = 0;
}

bool adam_step(ParamSet& params, const GradMap& grads, AdamState& state) {
  if (!state.initialized()) state.init(params);
  for (const auto& [name, tensor] : params.items) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::out_of_range("adam_step: missing gradient for " + name);
    if (!it->second.all_finite()) {
      ++state.skipped_steps;
      return false;
    }
  }
  state.step += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
    Tensor& p = params.items[pi].second;
    const Tensor& g = grads.at(params.items[pi].first);
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      m.values[i] = b1 * m.values[i] + (1.0 - b1) * g.values[i];
      v.values[i] = b2 * v.values[i] + (1.0 - b2) * g.values[i] * g.values[i];
      const double mhat = m.values[i] / bc1;
      const double vhat = v.values[i] / bc2;
      p.values[i] -= state.config.lr * mhat / (std::sqrt(vhat) + state.config.eps);
    }
  }
  return true;
}

double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.values) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.values) v *= s;
  }
  return norm;
}

}  // namespace pocketcm
