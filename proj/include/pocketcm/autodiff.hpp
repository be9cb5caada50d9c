#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pocketcm/rng.hpp"
#include "pocketcm/tensor.hpp"

namespace pocketcm {

// Reverse-mode automatic differentiation over a dynamic tape.
//
// The primitive set is closed: every op listed in OpKind has a paired
// derivative in Tape::backward and a finite-difference test. Binary
// elementwise ops broadcast a (1xC), (Nx1) or (1x1) operand against an (NxC)
// one; gradients are reduced back over the broadcast axes.
enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kScale,       // c * x for a compile-time constant c
  kExp,
  kSilu,
  kSigmoid,
  kClamp,
  kMin,         // elementwise min of two same-shape tensors
  kRecipGuard,  // 1/x, 0 where |x| <= guard
  kL2NormRows,  // NxC -> Nx1, Euclidean norm along the last axis
  kSumAll,      // -> 1x1
  kSumRows,     // NxC -> 1xC
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kGatherRows,
  kScatterSumRows,
};

struct TapeNode {
  OpKind op = OpKind::kLeaf;
  std::vector<int> inputs;
  Tensor value;
  Tensor grad;  // allocated during backward
  bool needs_grad = false;
  double c0 = 0.0, c1 = 0.0;       // op constants (scale factor, clamp bounds, guard)
  std::vector<std::size_t> index;  // gather/scatter row indices
  std::size_t extent = 0;          // scatter out-rows or slice begin
  std::size_t extent2 = 0;         // slice length
};

class Tape {
 public:
  int leaf(Tensor v, bool needs_grad);
  int constant(Tensor v) { return leaf(std::move(v), false); }
  int constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int matmul(int a, int b);
  int scale(int a, double c);
  int exponential(int a);
  int silu(int a);
  int sigmoid(int a);
  int clamp(int a, double lo, double hi);
  int minimum(int a, int b);
  int recip_guard(int a, double guard = 1e-12);
  int l2norm_rows(int a);
  int sum_all(int a);
  int sum_rows(int a);
  int concat_rows(const std::vector<int>& parts);
  int concat_cols(const std::vector<int>& parts);
  int slice_rows(int a, std::size_t begin, std::size_t len);
  int gather_rows(int a, std::vector<std::size_t> index);
  int scatter_sum_rows(int a, std::vector<std::size_t> index, std::size_t out_rows);

  // Conveniences composed from primitives.
  int mean_all(int a);
  int mse(int a, int b);  // mean squared error, scalar
  int affine(int x, int w, int b) { return add(matmul(x, w), b); }

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients for every node with
  // needs_grad in reverse topological (= creation) order. Deterministic: all
  // reductions run in fixed index order.
  void backward(int loss_id);

  void clear() { nodes_.clear(); }

 private:
  int push(TapeNode n);
  TapeNode& at(int id) { return nodes_[id]; }
  std::vector<TapeNode> nodes_;
};

// Named, ordered parameter collection. Order is the serialization and
// gradient-accumulation order, so iteration is deterministic.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& operator[](const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t total_size() const;
};

using GradMap = std::map<std::string, Tensor>;

// Parameter leaves registered on a tape. grads() returns one tensor per
// parameter (zeros when the parameter never reached the loss).
struct BoundParams {
  std::vector<int> leaf_ids;
  static BoundParams bind(Tape& tape, const ParamSet& params);
  int id(const ParamSet& params, const std::string& name) const;
  GradMap grads(const Tape& tape, const ParamSet& params) const;
};

// Central-difference gradient oracle: max over sampled coordinates of
// |analytic - central difference| / (|analytic| + 1e-8). Samples up to
// max_coords_per_tensor coordinates from each parameter tensor.
//
// Coordinates whose gradient sits below the central-difference resolution
// floor (machine epsilon times |f| over the step) cannot be certified at
// resolution_target by any 64-bit evaluation; they are excluded from the
// max. Every coordinate the estimator can resolve is checked strictly.
double finite_diff_check(const std::function<double(const ParamSet&)>& fn, const ParamSet& params,
                         const GradMap& analytic, double step,
                         std::size_t max_coords_per_tensor, Rng& rng,
                         double resolution_target = 1e-4);

}  // namespace pocketcm
