#include "pocketcm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pocketcm {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() + " vs " +
                              b.shape_str());
}

bool broadcastable(const Tensor& big, const Tensor& small) {
  if (big.rank() != 2 || small.rank() != 2) return false;
  if (small.shape[0] == 1 && small.shape[1] == 1) return true;
  if (small.shape[0] == 1 && small.shape[1] == big.shape[1]) return true;
  if (small.shape[1] == 1 && small.shape[0] == big.shape[0]) return true;
  return false;
}

// Elementwise apply with the small operand broadcast against the big one.
template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, F f, const char* op) {
  if (a.same_shape(b)) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(a.values[i], b.values[i]);
    return out;
  }
  if (broadcastable(a, b)) {
    Tensor out(a.shape);
    const std::size_t rows = a.shape[0], cols = a.shape[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double bv = b.values[(b.shape[0] == 1 ? 0 : r) * b.shape[1] + (b.shape[1] == 1 ? 0 : c)];
        out.values[r * cols + c] = f(a.values[r * cols + c], bv);
      }
    return out;
  }
  if (broadcastable(b, a)) {
    Tensor out(b.shape);
    const std::size_t rows = b.shape[0], cols = b.shape[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double av = a.values[(a.shape[0] == 1 ? 0 : r) * a.shape[1] + (a.shape[1] == 1 ? 0 : c)];
        out.values[r * cols + c] = f(av, b.values[r * cols + c]);
      }
    return out;
  }
  shape_error(op, a, b);
}

// Reduce a full-shape gradient back to the (possibly broadcast) input shape.
void reduce_into(const Tensor& full, Tensor& target) {
  if (full.same_shape(target)) {
    for (std::size_t i = 0; i < full.values.size(); ++i) target.values[i] += full.values[i];
    return;
  }
  const std::size_t rows = full.shape[0], cols = full.shape[1];
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t tr = target.shape[0] == 1 ? 0 : r;
      const std::size_t tc = target.shape[1] == 1 ? 0 : c;
      target.values[tr * target.shape[1] + tc] += full.values[r * cols + c];
    }
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int Tape::push(TapeNode n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v, bool needs_grad) {
  TapeNode n;
  n.op = OpKind::kLeaf;
  n.value = std::move(v);
  n.needs_grad = needs_grad;
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  TapeNode n;
  n.op = OpKind::kAdd;
  n.inputs = {a, b};
  n.value = broadcast_apply(nodes_[a].value, nodes_[b].value,
                            [](double x, double y) { return x + y; }, "add");
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  TapeNode n;
  n.op = OpKind::kSub;
  n.inputs = {a, b};
  n.value = broadcast_apply(nodes_[a].value, nodes_[b].value,
                            [](double x, double y) { return x - y; }, "sub");
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  TapeNode n;
  n.op = OpKind::kMul;
  n.inputs = {a, b};
  n.value = broadcast_apply(nodes_[a].value, nodes_[b].value,
                            [](double x, double y) { return x * y; }, "mul");
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0]) shape_error("matmul", A, B);
  const std::size_t M = A.shape[0], K = A.shape[1], N = B.shape[1];
  Tensor C({M, N}, 0.0);
  // ikj order keeps B and C rows contiguous.
  for (std::size_t i = 0; i < M; ++i) {
    const double* arow = &A.values[i * K];
    double* crow = &C.values[i * N];
    for (std::size_t k = 0; k < K; ++k) {
      const double av = arow[k];
      const double* brow = &B.values[k * N];
      for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
  TapeNode n;
  n.op = OpKind::kMatMul;
  n.inputs = {a, b};
  n.value = std::move(C);
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::scale(int a, double c) {
  TapeNode n;
  n.op = OpKind::kScale;
  n.inputs = {a};
  n.c0 = c;
  n.value = nodes_[a].value;
  for (double& v : n.value.values) v *= c;
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::exponential(int a) {
  TapeNode n;
  n.op = OpKind::kExp;
  n.inputs = {a};
  n.value = nodes_[a].value;
  for (double& v : n.value.values) v = std::exp(v);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::silu(int a) {
  TapeNode n;
  n.op = OpKind::kSilu;
  n.inputs = {a};
  n.value = nodes_[a].value;
  for (double& v : n.value.values) v = v * sigmoid_scalar(v);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::sigmoid(int a) {
  TapeNode n;
  n.op = OpKind::kSigmoid;
  n.inputs = {a};
  n.value = nodes_[a].value;
  for (double& v : n.value.values) v = sigmoid_scalar(v);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::clamp(int a, double lo, double hi) {
  TapeNode n;
  n.op = OpKind::kClamp;
  n.inputs = {a};
  n.c0 = lo;
  n.c1 = hi;
  n.value = nodes_[a].value;
  for (double& v : n.value.values) v = std::min(hi, std::max(lo, v));
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::minimum(int a, int b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) shape_error("minimum", A, B);
  TapeNode n;
  n.op = OpKind::kMin;
  n.inputs = {a, b};
  n.value = A;
  for (std::size_t i = 0; i < A.values.size(); ++i) n.value.values[i] = std::min(A.values[i], B.values[i]);
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::recip_guard(int a, double guard) {
  TapeNode n;
  n.op = OpKind::kRecipGuard;
  n.inputs = {a};
  n.c0 = guard;
  n.value = nodes_[a].value;
  for (double& v : n.value.values) v = std::abs(v) <= guard ? 0.0 : 1.0 / v;
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::l2norm_rows(int a) {
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2) throw std::invalid_argument("l2norm_rows: tensor is not 2-d " + A.shape_str());
  Tensor out({A.shape[0], 1});
  for (std::size_t r = 0; r < A.shape[0]; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < A.shape[1]; ++c) {
      const double v = A.at(r, c);
      s += v * v;
    }
    out.values[r] = std::sqrt(s);
  }
  TapeNode n;
  n.op = OpKind::kL2NormRows;
  n.inputs = {a};
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::sum_all(int a) {
  double s = 0.0;
  for (double v : nodes_[a].value.values) s += v;
  TapeNode n;
  n.op = OpKind::kSumAll;
  n.inputs = {a};
  n.value = Tensor::scalar(s);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::sum_rows(int a) {
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2) throw std::invalid_argument("sum_rows: tensor is not 2-d " + A.shape_str());
  Tensor out({1, A.shape[1]}, 0.0);
  for (std::size_t r = 0; r < A.shape[0]; ++r)
    for (std::size_t c = 0; c < A.shape[1]; ++c) out.values[c] += A.at(r, c);
  TapeNode n;
  n.op = OpKind::kSumRows;
  n.inputs = {a};
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::concat_rows(const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = nodes_[parts[0]].value.shape[1];
  std::size_t rows = 0;
  bool needs = false;
  for (int p : parts) {
    const Tensor& t = nodes_[p].value;
    if (t.rank() != 2 || t.shape[1] != cols) shape_error("concat_rows", nodes_[parts[0]].value, t);
    rows += t.shape[0];
    needs = needs || nodes_[p].needs_grad;
  }
  Tensor out({rows, cols});
  std::size_t r0 = 0;
  for (int p : parts) {
    const Tensor& t = nodes_[p].value;
    std::copy(t.values.begin(), t.values.end(), out.values.begin() + r0 * cols);
    r0 += t.shape[0];
  }
  TapeNode n;
  n.op = OpKind::kConcatRows;
  n.inputs = parts;
  n.value = std::move(out);
  n.needs_grad = needs;
  return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = nodes_[parts[0]].value.shape[0];
  std::size_t cols = 0;
  bool needs = false;
  for (int p : parts) {
    const Tensor& t = nodes_[p].value;
    if (t.rank() != 2 || t.shape[0] != rows) shape_error("concat_cols", nodes_[parts[0]].value, t);
    cols += t.shape[1];
    needs = needs || nodes_[p].needs_grad;
  }
  Tensor out({rows, cols});
  std::size_t c0 = 0;
  for (int p : parts) {
    const Tensor& t = nodes_[p].value;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(&t.values[r * t.shape[1]], &t.values[(r + 1) * t.shape[1]], &out.values[r * cols + c0]);
    c0 += t.shape[1];
  }
  TapeNode n;
  n.op = OpKind::kConcatCols;
  n.inputs = parts;
  n.value = std::move(out);
  n.needs_grad = needs;
  return push(std::move(n));
}

int Tape::slice_rows(int a, std::size_t begin, std::size_t len) {
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2 || begin + len > A.shape[0])
    throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + len) + ") out of bounds for " + A.shape_str());
  Tensor out({len, A.shape[1]});
  std::copy(A.values.begin() + begin * A.shape[1], A.values.begin() + (begin + len) * A.shape[1],
            out.values.begin());
  TapeNode n;
  n.op = OpKind::kSliceRows;
  n.inputs = {a};
  n.extent = begin;
  n.extent2 = len;
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::gather_rows(int a, std::vector<std::size_t> index) {
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2) throw std::invalid_argument("gather_rows: tensor is not 2-d " + A.shape_str());
  Tensor out({index.size(), A.shape[1]});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= A.shape[0]) throw std::invalid_argument("gather_rows: index out of range");
    std::copy(&A.values[index[i] * A.shape[1]], &A.values[(index[i] + 1) * A.shape[1]],
              &out.values[i * A.shape[1]]);
  }
  TapeNode n;
  n.op = OpKind::kGatherRows;
  n.inputs = {a};
  n.index = std::move(index);
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::scatter_sum_rows(int a, std::vector<std::size_t> index, std::size_t out_rows) {
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2 || index.size() != A.shape[0])
    throw std::invalid_argument("scatter_sum_rows: index count " + std::to_string(index.size()) +
                                " does not match rows of " + A.shape_str());
  Tensor out({out_rows, A.shape[1]}, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= out_rows) throw std::invalid_argument("scatter_sum_rows: index out of range");
    for (std::size_t c = 0; c < A.shape[1]; ++c) out.values[index[i] * A.shape[1] + c] += A.at(i, c);
  }
  TapeNode n;
  n.op = OpKind::kScatterSumRows;
  n.inputs = {a};
  n.index = std::move(index);
  n.extent = out_rows;
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::mean_all(int a) { return scale(sum_all(a), 1.0 / static_cast<double>(nodes_[a].value.numel())); }

int Tape::mse(int a, int b) {
  int d = sub(a, b);
  return mean_all(mul(d, d));
}

void Tape::backward(int loss_id) {
  TapeNode& loss = nodes_[loss_id];
  if (!loss.value.is_scalar())
    throw std::invalid_argument("backward: loss node is not scalar, shape " + loss.value.shape_str());

  for (TapeNode& n : nodes_) n.grad = Tensor();
  loss.grad = Tensor::scalar(1.0);

  for (int id = loss_id; id >= 0; --id) {
    TapeNode& n = nodes_[id];
    if (!n.needs_grad || n.grad.numel() == 0) continue;
    auto ensure = [&](int input) -> Tensor& {
      TapeNode& in = nodes_[input];
      if (in.grad.numel() == 0) in.grad = Tensor(in.value.shape, 0.0);
      return in.grad;
    };
    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd: {
        for (int i = 0; i < 2; ++i)
          if (nodes_[n.inputs[i]].needs_grad) reduce_into(n.grad, ensure(n.inputs[i]));
        break;
      }
      case OpKind::kSub: {
        if (nodes_[n.inputs[0]].needs_grad) reduce_into(n.grad, ensure(n.inputs[0]));
        if (nodes_[n.inputs[1]].needs_grad) {
          Tensor neg = n.grad;
          for (double& v : neg.values) v = -v;
          reduce_into(neg, ensure(n.inputs[1]));
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor ga = broadcast_apply(n.grad, B, [](double g, double b) { return g * b; }, "mul.bwd");
          reduce_into(ga, ensure(n.inputs[0]));
        }
        if (nodes_[n.inputs[1]].needs_grad) {
          Tensor gb = broadcast_apply(n.grad, A, [](double g, double a) { return g * a; }, "mul.bwd");
          reduce_into(gb, ensure(n.inputs[1]));
        }
        break;
      }
      case OpKind::kMatMul: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        const std::size_t M = A.shape[0], K = A.shape[1], N = B.shape[1];
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor& gA = ensure(n.inputs[0]);
          // dA = dC * B^T
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) {
              const double g = n.grad.values[i * N + j];
              if (g == 0.0) continue;
              const double* brow = &B.values[0] + j;
              double* garow = &gA.values[i * K];
              for (std::size_t k = 0; k < K; ++k) garow[k] += g * brow[k * N];
            }
        }
        if (nodes_[n.inputs[1]].needs_grad) {
          Tensor& gB = ensure(n.inputs[1]);
          // dB = A^T * dC
          for (std::size_t i = 0; i < M; ++i) {
            const double* arow = &A.values[i * K];
            const double* grow = &n.grad.values[i * N];
            for (std::size_t k = 0; k < K; ++k) {
              const double av = arow[k];
              if (av == 0.0) continue;
              double* gbrow = &gB.values[k * N];
              for (std::size_t j = 0; j < N; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
        break;
      }
      case OpKind::kScale: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor g = n.grad;
          for (double& v : g.values) v *= n.c0;
          reduce_into(g, ensure(n.inputs[0]));
        }
        break;
      }
      case OpKind::kExp: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor g = n.grad;
          for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] *= n.value.values[i];
          reduce_into(g, ensure(n.inputs[0]));
        }
        break;
      }
      case OpKind::kSilu: {
        if (nodes_[n.inputs[0]].needs_grad) {
          const Tensor& X = nodes_[n.inputs[0]].value;
          Tensor g = n.grad;
          for (std::size_t i = 0; i < g.values.size(); ++i) {
            const double s = sigmoid_scalar(X.values[i]);
            g.values[i] *= s * (1.0 + X.values[i] * (1.0 - s));
          }
          reduce_into(g, ensure(n.inputs[0]));
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor g = n.grad;
          for (std::size_t i = 0; i < g.values.size(); ++i) {
            const double y = n.value.values[i];
            g.values[i] *= y * (1.0 - y);
          }
          reduce_into(g, ensure(n.inputs[0]));
        }
        break;
      }
      case OpKind::kClamp: {
        if (nodes_[n.inputs[0]].needs_grad) {
          const Tensor& X = nodes_[n.inputs[0]].value;
          Tensor g = n.grad;
          for (std::size_t i = 0; i < g.values.size(); ++i)
            if (X.values[i] < n.c0 || X.values[i] > n.c1) g.values[i] = 0.0;
          reduce_into(g, ensure(n.inputs[0]));
        }
        break;
      }
      case OpKind::kMin: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        for (int side = 0; side < 2; ++side) {
          if (!nodes_[n.inputs[side]].needs_grad) continue;
          Tensor g = n.grad;
          for (std::size_t i = 0; i < g.values.size(); ++i) {
            const bool a_wins = A.values[i] <= B.values[i];
            if ((side == 0) != a_wins) g.values[i] = 0.0;
          }
          reduce_into(g, ensure(n.inputs[side]));
        }
        break;
      }
      case OpKind::kRecipGuard: {
        if (nodes_[n.inputs[0]].needs_grad) {
          const Tensor& X = nodes_[n.inputs[0]].value;
          Tensor g = n.grad;
          for (std::size_t i = 0; i < g.values.size(); ++i) {
            const double x = X.values[i];
            g.values[i] = std::abs(x) <= n.c0 ? 0.0 : -g.values[i] / (x * x);
          }
          reduce_into(g, ensure(n.inputs[0]));
        }
        break;
      }
      case OpKind::kL2NormRows: {
        if (nodes_[n.inputs[0]].needs_grad) {
          const Tensor& X = nodes_[n.inputs[0]].value;
          Tensor& gX = ensure(n.inputs[0]);
          for (std::size_t r = 0; r < X.shape[0]; ++r) {
            const double norm = n.value.values[r];
            if (norm <= 0.0) continue;
            const double g = n.grad.values[r] / norm;
            for (std::size_t c = 0; c < X.shape[1]; ++c) gX.at(r, c) += g * X.at(r, c);
          }
        }
        break;
      }
      case OpKind::kSumAll: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor& gX = ensure(n.inputs[0]);
          const double g = n.grad.values[0];
          for (double& v : gX.values) v += g;
        }
        break;
      }
      case OpKind::kSumRows: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor& gX = ensure(n.inputs[0]);
          const std::size_t cols = gX.shape[1];
          for (std::size_t r = 0; r < gX.shape[0]; ++r)
            for (std::size_t c = 0; c < cols; ++c) gX.values[r * cols + c] += n.grad.values[c];
        }
        break;
      }
      case OpKind::kConcatRows: {
        std::size_t r0 = 0;
        const std::size_t cols = n.value.shape[1];
        for (int p : n.inputs) {
          const std::size_t pr = nodes_[p].value.shape[0];
          if (nodes_[p].needs_grad) {
            Tensor& gP = ensure(p);
            for (std::size_t i = 0; i < pr * cols; ++i) gP.values[i] += n.grad.values[r0 * cols + i];
          }
          r0 += pr;
        }
        break;
      }
      case OpKind::kConcatCols: {
        std::size_t c0 = 0;
        const std::size_t cols = n.value.shape[1];
        const std::size_t rows = n.value.shape[0];
        for (int p : n.inputs) {
          const std::size_t pc = nodes_[p].value.shape[1];
          if (nodes_[p].needs_grad) {
            Tensor& gP = ensure(p);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < pc; ++c) gP.values[r * pc + c] += n.grad.values[r * cols + c0 + c];
          }
          c0 += pc;
        }
        break;
      }
      case OpKind::kSliceRows: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor& gX = ensure(n.inputs[0]);
          const std::size_t cols = n.value.shape[1];
          for (std::size_t i = 0; i < n.extent2 * cols; ++i)
            gX.values[n.extent * cols + i] += n.grad.values[i];
        }
        break;
      }
      case OpKind::kGatherRows: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor& gX = ensure(n.inputs[0]);
          const std::size_t cols = n.value.shape[1];
          for (std::size_t i = 0; i < n.index.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c)
              gX.values[n.index[i] * cols + c] += n.grad.values[i * cols + c];
        }
        break;
      }
      case OpKind::kScatterSumRows: {
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor& gX = ensure(n.inputs[0]);
          const std::size_t cols = n.value.shape[1];
          for (std::size_t i = 0; i < n.index.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c)
              gX.values[i * cols + c] += n.grad.values[n.index[i] * cols + c];
        }
        break;
      }
    }
  }
}

Tensor& ParamSet::operator[](const std::string& name) {
  for (auto& [k, v] : items)
    if (k == name) return v;
  items.emplace_back(name, Tensor());
  return items.back().second;
}

const Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [k, v] : items)
    if (k == name) return v;
  throw std::out_of_range("parameter not found: " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [k, v] : items)
    if (k == name) return true;
  return false;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [k, v] : items) n += v.numel();
  return n;
}

BoundParams BoundParams::bind(Tape& tape, const ParamSet& params) {
  BoundParams bound;
  bound.leaf_ids.reserve(params.items.size());
  for (const auto& [name, tensor] : params.items) bound.leaf_ids.push_back(tape.leaf(tensor, true));
  return bound;
}

int BoundParams::id(const ParamSet& params, const std::string& name) const {
  for (std::size_t i = 0; i < params.items.size(); ++i)
    if (params.items[i].first == name) return leaf_ids[i];
  throw std::out_of_range("BoundParams: unknown parameter " + name);
}

GradMap BoundParams::grads(const Tape& tape, const ParamSet& params) const {
  GradMap out;
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const Tensor& g = tape.grad(leaf_ids[i]);
    out[params.items[i].first] =
        g.numel() ? g : Tensor(params.items[i].second.shape, 0.0);
  }
  return out;
}

double finite_diff_check(const std::function<double(const ParamSet&)>& fn, const ParamSet& params,
                         const GradMap& analytic, double step, std::size_t max_coords_per_tensor,
                         Rng& rng, double resolution_target) {
  ParamSet work = params;
  // Cancellation floor of the central difference at this loss magnitude;
  // the 16x factor covers rounding accumulated across the forward pass.
  const double f0 = std::abs(fn(params));
  const double fd_noise = 16.0 * 2.220446049250313e-16 * std::max(f0, 1.0) / step;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
    const auto& [name, tensor] = params.items[pi];
    auto it = analytic.find(name);
    if (it == analytic.end()) throw std::out_of_range("finite_diff_check: no analytic gradient for " + name);
    const Tensor& grad = it->second;
    const std::size_t n = tensor.numel();
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_tensor) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < max_coords_per_tensor; ++i) coords.push_back(rng.uniform_int(n));
    }
    for (std::size_t c : coords) {
      const double a = grad.values[c];
      if ((std::abs(a) + 1e-8) * resolution_target < fd_noise) continue;  // unresolvable at 64-bit
      double& slot = work.items[pi].second.values[c];
      const double orig = slot;
      slot = orig + step;
      const double fp = fn(work);
      slot = orig - step;
      const double fm = fn(work);
      slot = orig;
      const double central = (fp - fm) / (2.0 * step);
      const double err = std::abs(a - central) / (std::abs(a) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace pocketcm
