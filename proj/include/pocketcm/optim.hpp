#pragma once

#include <cstddef>
#include <vector>

#include "pocketcm/autodiff.hpp"
#include "pocketcm/tensor.hpp"

namespace pocketcm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.995;
  double eps = 1e-8;
};

// First/second moment accumulators, laid out parallel to the ParamSet.
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t skipped_steps = 0;

  void init(const ParamSet& params);
  bool initialized() const { return !m.empty(); }
};

// Bias-corrected Adam update. A non-finite gradient skips the whole step
// (counter not advanced) and bumps skipped_steps; the caller logs it.
// Returns false when the step was skipped.
bool adam_step(ParamSet& params, const GradMap& grads, AdamState& state);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip global norm.
double clip_global_norm(GradMap& grads, double max_norm);

double global_norm(const GradMap& grads);

}  // namespace pocketcm
