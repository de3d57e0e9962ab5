#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "deskmt/error.hpp"

namespace deskmt {

// Dense row-major tensor. F is float for training, double for verification.
template <typename F>
struct Tensor {
  std::vector<long> shape;
  std::vector<F> data;
  std::vector<F> grad;  // allocated lazily, same length as data
  bool requires_grad = false;

  long numel() const {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), F(0));
  }

  void zero_grad() { grad.assign(data.size(), F(0)); }

  std::string shape_str() const {
    std::ostringstream ss;
    ss << '[';
    for (size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
    ss << ']';
    return ss.str();
  }
};

template <typename F>
using TensorPtr = std::shared_ptr<Tensor<F>>;

template <typename F>
TensorPtr<F> tensor(std::vector<long> shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<F>>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(t->numel()), F(0));
  t->requires_grad = requires_grad;
  return t;
}

template <typename F>
TensorPtr<F> tensor(std::vector<long> shape, std::vector<F> values, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<F>>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  require(static_cast<long>(t->data.size()) == t->numel(), "SHAPE_ERROR",
          "value count does not match shape " + t->shape_str());
  t->requires_grad = requires_grad;
  return t;
}

// Records backward closures in execution order; backward replays in reverse.
template <typename F>
class Tape {
public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  void backward(const TensorPtr<F>& loss) {
    require(loss->numel() == 1, "TAPE_ERROR", "backward requires a scalar loss");
    require(!consumed_, "TAPE_ERROR", "tape already consumed; build a fresh tape");
    consumed_ = true;
    loss->ensure_grad();
    loss->grad[0] = F(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  size_t size() const { return ops_.size(); }

private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

namespace ops {

template <typename F>
bool track(Tape<F>* tape, std::initializer_list<TensorPtr<F>> inputs) {
  if (!tape) return false;
  for (const auto& t : inputs)
    if (t->requires_grad) return true;
  return false;
}

template <typename F>
TensorPtr<F> out_like(std::vector<long> shape, bool rg) {
  return tensor<F>(std::move(shape), rg);
}

// ---- elementwise ----

template <typename F>
TensorPtr<F> add(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  require(a->shape == b->shape, "SHAPE_ERROR", "add: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
  bool rg = track(tape, {a, b});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (rg)
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i];
      }
    });
  return out;
}

// a + tiled b, where b repeats cyclically (covers bias/gain/positional-bias
// broadcasts: the trailing dims of a match b's full shape).
template <typename F>
TensorPtr<F> add_cycle(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  size_t nb = b->data.size();
  require(nb > 0 && a->data.size() % nb == 0, "SHAPE_ERROR",
          "add_cycle: " + b->shape_str() + " does not tile " + a->shape_str());
  bool rg = track(tape, {a, b});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i % nb];
  if (rg)
    tape->record([a, b, out, nb] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < a->data.size(); ++i) b->grad[i % nb] += out->grad[i];
      }
    });
  return out;
}

template <typename F>
TensorPtr<F> mul(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  require(a->shape == b->shape, "SHAPE_ERROR", "mul: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
  bool rg = track(tape, {a, b});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (rg)
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  return out;
}

template <typename F>
TensorPtr<F> scale(Tape<F>* tape, const TensorPtr<F>& a, F c) {
  bool rg = track(tape, {a});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * c;
  if (rg)
    tape->record([a, out, c] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * c;
    });
  return out;
}

template <typename F>
TensorPtr<F> exp(Tape<F>* tape, const TensorPtr<F>& a) {
  bool rg = track(tape, {a});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
  if (rg)
    tape->record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * out->data[i];
    });
  return out;
}

template <typename F>
TensorPtr<F> tanh(Tape<F>* tape, const TensorPtr<F>& a) {
  bool rg = track(tape, {a});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::tanh(a->data[i]);
  if (rg)
    tape->record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i)
        a->grad[i] += out->grad[i] * (F(1) - out->data[i] * out->data[i]);
    });
  return out;
}

template <typename F>
TensorPtr<F> relu(Tape<F>* tape, const TensorPtr<F>& a) {
  bool rg = track(tape, {a});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] > F(0) ? a->data[i] : F(0);
  if (rg)
    tape->record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i)
        if (a->data[i] > F(0)) a->grad[i] += out->grad[i];
    });
  return out;
}

// Inverted dropout: kept activations scale by 1/(1-rate).
template <typename F>
TensorPtr<F> dropout(Tape<F>* tape, const TensorPtr<F>& a, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, "RATE_ERROR", "dropout rate must lie in [0,1)");
  if (rate == 0.0) return a;
  auto keep = std::make_shared<std::vector<char>>(a->data.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  F s = F(1.0 / (1.0 - rate));
  bool rg = track(tape, {a});
  auto out = out_like<F>(a->shape, rg);
  for (size_t i = 0; i < a->data.size(); ++i) {
    (*keep)[i] = u(rng) >= rate;
    out->data[i] = (*keep)[i] ? a->data[i] * s : F(0);
  }
  if (rg)
    tape->record([a, out, keep, s] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i)
        if ((*keep)[i]) a->grad[i] += out->grad[i] * s;
    });
  return out;
}

template <typename F>
TensorPtr<F> sum(Tape<F>* tape, const TensorPtr<F>& a) {
  bool rg = track(tape, {a});
  auto out = out_like<F>({1}, rg);
  F s = 0;
  for (F x : a->data) s += x;
  out->data[0] = s;
  if (rg)
    tape->record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[0];
    });
  return out;
}

// ---- shape ops ----

template <typename F>
TensorPtr<F> reshape(Tape<F>* tape, const TensorPtr<F>& a, std::vector<long> shape) {
  bool rg = track(tape, {a});
  auto out = out_like<F>(std::move(shape), rg);
  require(out->numel() == a->numel(), "SHAPE_ERROR",
          "reshape: element count mismatch " + a->shape_str() + " -> " + out->shape_str());
  out->data = a->data;
  if (rg)
    tape->record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
    });
  return out;
}

template <typename F>
TensorPtr<F> transpose_last2(Tape<F>* tape, const TensorPtr<F>& a) {
  require(a->shape.size() >= 2, "SHAPE_ERROR", "transpose needs rank >= 2, got " + a->shape_str());
  long rows = a->shape[a->shape.size() - 2], cols = a->shape.back();
  long batch = a->numel() / (rows * cols);
  bool rg = track(tape, {a});
  std::vector<long> shape = a->shape;
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  auto out = out_like<F>(shape, rg);
  for (long b = 0; b < batch; ++b)
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c)
        out->data[(b * cols + c) * rows + r] = a->data[(b * rows + r) * cols + c];
  if (rg)
    tape->record([a, out, batch, rows, cols] {
      a->ensure_grad();
      for (long b = 0; b < batch; ++b)
        for (long r = 0; r < rows; ++r)
          for (long c = 0; c < cols; ++c)
            a->grad[(b * rows + r) * cols + c] += out->grad[(b * cols + c) * rows + r];
    });
  return out;
}

template <typename F>
TensorPtr<F> concat(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b, int axis) {
  require(a->shape.size() == b->shape.size(), "SHAPE_ERROR", "concat: rank mismatch");
  int rank = static_cast<int>(a->shape.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "SHAPE_ERROR", "concat: bad axis");
  for (int d = 0; d < rank; ++d)
    require(d == axis || a->shape[d] == b->shape[d], "SHAPE_ERROR",
            "concat: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a->shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= a->shape[d];
  long na = a->shape[axis] * inner, nb = b->shape[axis] * inner;
  std::vector<long> shape = a->shape;
  shape[axis] += b->shape[axis];
  bool rg = track(tape, {a, b});
  auto out = out_like<F>(shape, rg);
  for (long o = 0; o < outer; ++o) {
    for (long i = 0; i < na; ++i) out->data[o * (na + nb) + i] = a->data[o * na + i];
    for (long i = 0; i < nb; ++i) out->data[o * (na + nb) + na + i] = b->data[o * nb + i];
  }
  if (rg)
    tape->record([a, b, out, outer, na, nb] {
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (long o = 0; o < outer; ++o) {
        if (a->requires_grad)
          for (long i = 0; i < na; ++i) a->grad[o * na + i] += out->grad[o * (na + nb) + i];
        if (b->requires_grad)
          for (long i = 0; i < nb; ++i) b->grad[o * nb + i] += out->grad[o * (na + nb) + na + i];
      }
    });
  return out;
}

template <typename F>
TensorPtr<F> slice(Tape<F>* tape, const TensorPtr<F>& a, int axis, long start, long len) {
  int rank = static_cast<int>(a->shape.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "SHAPE_ERROR", "slice: bad axis");
  require(start >= 0 && len >= 0 && start + len <= a->shape[axis], "SHAPE_ERROR",
          "slice: range out of bounds for " + a->shape_str());
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a->shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= a->shape[d];
  long ax = a->shape[axis];
  std::vector<long> shape = a->shape;
  shape[axis] = len;
  bool rg = track(tape, {a});
  auto out = out_like<F>(shape, rg);
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < len * inner; ++i)
      out->data[o * len * inner + i] = a->data[o * ax * inner + start * inner + i];
  if (rg)
    tape->record([a, out, outer, inner, ax, start, len] {
      a->ensure_grad();
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < len * inner; ++i)
          a->grad[o * ax * inner + start * inner + i] += out->grad[o * len * inner + i];
    });
  return out;
}

// ---- matmul family ----

namespace detail {
// C[m,n] += A[m,k] * B[k,n], row-major, ikj order.
template <typename F>
void mm_acc(const F* A, const F* B, F* C, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const F* a = A + i * k;
    F* c = C + i * n;
    for (long p = 0; p < k; ++p) {
      F av = a[p];
      if (av == F(0)) continue;
      const F* b = B + p * n;
      for (long j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}
// C[m,n] += A[m,k] * B[n,k]^T
template <typename F>
void mm_nt_acc(const F* A, const F* B, F* C, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const F* a = A + i * k;
    F* c = C + i * n;
    for (long j = 0; j < n; ++j) {
      const F* b = B + j * k;
      F s = 0;
      for (long p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}
// C[k,n] += A[m,k]^T * B[m,n]
template <typename F>
void mm_tn_acc(const F* A, const F* B, F* C, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const F* a = A + i * k;
    const F* b = B + i * n;
    for (long p = 0; p < k; ++p) {
      F av = a[p];
      if (av == F(0)) continue;
      F* c = C + p * n;
      for (long j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}
}  // namespace detail

// [m,k] x [k,n] -> [m,n]; a may carry extra leading dims (flattened into m).
template <typename F>
TensorPtr<F> matmul(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  require(a->shape.size() >= 2 && b->shape.size() == 2, "SHAPE_ERROR",
          "matmul: need [..,m,k] x [k,n], got " + a->shape_str() + " x " + b->shape_str());
  long k = a->shape.back(), n = b->shape[1];
  require(b->shape[0] == k, "SHAPE_ERROR",
          "matmul: inner dims differ, " + a->shape_str() + " x " + b->shape_str());
  long m = a->numel() / k;
  std::vector<long> shape(a->shape.begin(), a->shape.end() - 1);
  shape.push_back(n);
  bool rg = track(tape, {a, b});
  auto out = out_like<F>(shape, rg);
  detail::mm_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (rg)
    tape->record([a, b, out, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();  // dA = dC * B^T
        detail::mm_nt_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();  // dB = A^T * dC
        detail::mm_tn_acc(a->data.data(), out->grad.data(), b->grad.data(), m, k, n);
      }
    });
  return out;
}

// [..,m,k] x [n,k] -> [..,m,n]  (right operand transposed; used for tied
// output projections).
template <typename F>
TensorPtr<F> matmul_nt(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  require(a->shape.size() >= 2 && b->shape.size() == 2, "SHAPE_ERROR",
          "matmul_nt: need [..,m,k] x [n,k], got " + a->shape_str() + " x " + b->shape_str());
  long k = a->shape.back(), n = b->shape[0];
  require(b->shape[1] == k, "SHAPE_ERROR",
          "matmul_nt: inner dims differ, " + a->shape_str() + " x " + b->shape_str());
  long m = a->numel() / k;
  std::vector<long> shape(a->shape.begin(), a->shape.end() - 1);
  shape.push_back(n);
  bool rg = track(tape, {a, b});
  auto out = out_like<F>(shape, rg);
  detail::mm_nt_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (rg)
    tape->record([a, b, out, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();  // dA = dC * B
        detail::mm_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();  // dB = dC^T * A
        detail::mm_tn_acc(out->grad.data(), a->data.data(), b->grad.data(), m, n, k);
      }
    });
  return out;
}

// Batched [B,m,k] x [B,k,n] -> [B,m,n].
template <typename F>
TensorPtr<F> bmm(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  require(a->shape.size() == 3 && b->shape.size() == 3 && a->shape[0] == b->shape[0] &&
              a->shape[2] == b->shape[1],
          "SHAPE_ERROR", "bmm: incompatible " + a->shape_str() + " x " + b->shape_str());
  long B = a->shape[0], m = a->shape[1], k = a->shape[2], n = b->shape[2];
  bool rg = track(tape, {a, b});
  auto out = out_like<F>({B, m, n}, rg);
  for (long i = 0; i < B; ++i)
    detail::mm_acc(a->data.data() + i * m * k, b->data.data() + i * k * n,
                   out->data.data() + i * m * n, m, k, n);
  if (rg)
    tape->record([a, b, out, B, m, k, n] {
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (long i = 0; i < B; ++i) {
        if (a->requires_grad)
          detail::mm_nt_acc(out->grad.data() + i * m * n, b->data.data() + i * k * n,
                            a->grad.data() + i * m * k, m, n, k);
        if (b->requires_grad)
          detail::mm_tn_acc(a->data.data() + i * m * k, out->grad.data() + i * m * n,
                            b->grad.data() + i * k * n, m, k, n);
      }
    });
  return out;
}

// Batched [B,m,k] x [B,n,k] -> [B,m,n]  (right operand transposed).
template <typename F>
TensorPtr<F> bmm_nt(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& b) {
  require(a->shape.size() == 3 && b->shape.size() == 3 && a->shape[0] == b->shape[0] &&
              a->shape[2] == b->shape[2],
          "SHAPE_ERROR", "bmm_nt: incompatible " + a->shape_str() + " x " + b->shape_str());
  long B = a->shape[0], m = a->shape[1], k = a->shape[2], n = b->shape[1];
  bool rg = track(tape, {a, b});
  auto out = out_like<F>({B, m, n}, rg);
  for (long i = 0; i < B; ++i)
    detail::mm_nt_acc(a->data.data() + i * m * k, b->data.data() + i * n * k,
                      out->data.data() + i * m * n, m, k, n);
  if (rg)
    tape->record([a, b, out, B, m, k, n] {
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (long i = 0; i < B; ++i) {
        if (a->requires_grad)
          detail::mm_acc(out->grad.data() + i * m * n, b->data.data() + i * n * k,
                         a->grad.data() + i * m * k, m, n, k);
        if (b->requires_grad)  // dB = dC^T * A
          detail::mm_tn_acc(out->grad.data() + i * m * n, a->data.data() + i * m * k,
                            b->grad.data() + i * n * k, m, n, k);
      }
    });
  return out;
}

// ---- normalization / softmax / losses ----

// Softmax over the last axis, max-subtracted.
template <typename F>
TensorPtr<F> softmax(Tape<F>* tape, const TensorPtr<F>& a) {
  long cols = a->shape.back();
  long rows = a->numel() / cols;
  bool rg = track(tape, {a});
  auto out = out_like<F>(a->shape, rg);
  for (long r = 0; r < rows; ++r) {
    const F* x = a->data.data() + r * cols;
    F* y = out->data.data() + r * cols;
    F mx = x[0];
    for (long c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    F z = 0;
    for (long c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (long c = 0; c < cols; ++c) y[c] /= z;
  }
  if (rg)
    tape->record([a, out, rows, cols] {
      a->ensure_grad();
      for (long r = 0; r < rows; ++r) {
        const F* y = out->data.data() + r * cols;
        const F* dy = out->grad.data() + r * cols;
        F dot = 0;
        for (long c = 0; c < cols; ++c) dot += y[c] * dy[c];
        F* dx = a->grad.data() + r * cols;
        for (long c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
      }
    });
  return out;
}

// Layer normalization over the last axis (mean/variance, no bias), then a
// learned gain broadcast over rows.
template <typename F>
TensorPtr<F> layer_norm(Tape<F>* tape, const TensorPtr<F>& a, const TensorPtr<F>& gain, F eps) {
  long cols = a->shape.back();
  require(gain->shape == std::vector<long>{cols}, "SHAPE_ERROR",
          "layer_norm: gain shape " + gain->shape_str() + " does not match last axis of " +
              a->shape_str());
  long rows = a->numel() / cols;
  bool rg = track(tape, {a, gain});
  auto out = out_like<F>(a->shape, rg);
  auto xhat = std::make_shared<Tensor<F>>();  // saved for backward
  xhat->shape = a->shape;
  xhat->data.resize(a->data.size());
  std::vector<F> inv_std(rows);
  for (long r = 0; r < rows; ++r) {
    const F* x = a->data.data() + r * cols;
    F mean = 0;
    for (long c = 0; c < cols; ++c) mean += x[c];
    mean /= F(cols);
    F var = 0;
    for (long c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= F(cols);
    F is = F(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (long c = 0; c < cols; ++c) {
      F h = (x[c] - mean) * is;
      xhat->data[r * cols + c] = h;
      out->data[r * cols + c] = h * gain->data[c];
    }
  }
  if (rg)
    tape->record([a, gain, out, xhat, inv_std, rows, cols] {
      if (gain->requires_grad) {
        gain->ensure_grad();
        for (long r = 0; r < rows; ++r)
          for (long c = 0; c < cols; ++c)
            gain->grad[c] += out->grad[r * cols + c] * xhat->data[r * cols + c];
      }
      if (a->requires_grad) {
        a->ensure_grad();
        for (long r = 0; r < rows; ++r) {
          const F* h = xhat->data.data() + r * cols;
          F sum_dh = 0, sum_dh_h = 0;
          std::vector<F> dh(cols);
          for (long c = 0; c < cols; ++c) {
            dh[c] = out->grad[r * cols + c] * gain->data[c];
            sum_dh += dh[c];
            sum_dh_h += dh[c] * h[c];
          }
          F* dx = a->grad.data() + r * cols;
          for (long c = 0; c < cols; ++c)
            dx[c] += inv_std[r] * (dh[c] - sum_dh / F(cols) - h[c] * sum_dh_h / F(cols));
        }
      }
    });
  return out;
}

// table [V,D], ids (N) -> [N,D]
template <typename F>
TensorPtr<F> embedding(Tape<F>* tape, const TensorPtr<F>& table, const std::vector<int>& ids) {
  require(table->shape.size() == 2, "SHAPE_ERROR", "embedding: table must be 2-D");
  long V = table->shape[0], D = table->shape[1];
  for (int id : ids)
    require(id >= 0 && id < V, "SHAPE_ERROR",
            "embedding: id " + std::to_string(id) + " out of range [0," + std::to_string(V) + ")");
  bool rg = track(tape, {table});
  auto out = out_like<F>({static_cast<long>(ids.size()), D}, rg);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table->data.data() + ids[i] * D, D, out->data.data() + i * D);
  if (rg)
    tape->record([table, out, ids, D] {
      table->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (long d = 0; d < D; ++d) table->grad[ids[i] * D + d] += out->grad[i * D + d];
    });
  return out;
}

// table [buckets,H], bucket_ix (Q*K) -> [H,Q,K]; used for learned
// relative-position attention biases.
template <typename F>
TensorPtr<F> gather_bias(Tape<F>* tape, const TensorPtr<F>& table,
                         const std::vector<int>& bucket_ix, long Q, long K) {
  require(table->shape.size() == 2, "SHAPE_ERROR", "gather_bias: table must be 2-D");
  require(static_cast<long>(bucket_ix.size()) == Q * K, "SHAPE_ERROR", "gather_bias: index count mismatch");
  long H = table->shape[1];
  bool rg = track(tape, {table});
  auto out = out_like<F>({H, Q, K}, rg);
  for (long h = 0; h < H; ++h)
    for (long i = 0; i < Q * K; ++i) out->data[h * Q * K + i] = table->data[bucket_ix[i] * H + h];
  if (rg)
    tape->record([table, out, bucket_ix, H, Q, K] {
      table->ensure_grad();
      for (long h = 0; h < H; ++h)
        for (long i = 0; i < Q * K; ++i)
          table->grad[bucket_ix[i] * H + h] += out->grad[h * Q * K + i];
    });
  return out;
}

// Mean token-level cross entropy over targets != ignore_index, with
// log-sum-exp stabilization. logits [N,V], targets (N).
template <typename F>
TensorPtr<F> cross_entropy(Tape<F>* tape, const TensorPtr<F>& logits,
                           const std::vector<int>& targets, int ignore_index) {
  require(logits->shape.size() == 2, "SHAPE_ERROR", "cross_entropy: logits must be [N,V]");
  long N = logits->shape[0], V = logits->shape[1];
  require(static_cast<long>(targets.size()) == N, "SHAPE_ERROR",
          "cross_entropy: target count mismatch");
  long n_active = 0;
  for (int t : targets)
    if (t != ignore_index) ++n_active;
  require(n_active > 0, "LOSS_ERROR", "cross_entropy: every target position is ignored");

  bool rg = track(tape, {logits});
  auto out = out_like<F>({1}, rg);
  auto probs = std::make_shared<Tensor<F>>();  // softmax rows, saved for backward
  probs->shape = logits->shape;
  probs->data.resize(logits->data.size());
  F total = 0;
  for (long r = 0; r < N; ++r) {
    const F* x = logits->data.data() + r * V;
    F* p = probs->data.data() + r * V;
    F mx = x[0];
    for (long c = 1; c < V; ++c) mx = std::max(mx, x[c]);
    F z = 0;
    for (long c = 0; c < V; ++c) {
      p[c] = std::exp(x[c] - mx);
      z += p[c];
    }
    for (long c = 0; c < V; ++c) p[c] /= z;
    if (targets[r] != ignore_index) {
      require(targets[r] >= 0 && targets[r] < V, "SHAPE_ERROR", "cross_entropy: target id out of range");
      total += -(x[targets[r]] - mx - std::log(z));
    }
  }
  out->data[0] = total / F(n_active);
  if (rg)
    tape->record([logits, out, probs, targets, ignore_index, N, V, n_active] {
      logits->ensure_grad();
      F g = out->grad[0] / F(n_active);
      for (long r = 0; r < N; ++r) {
        if (targets[r] == ignore_index) continue;
        const F* p = probs->data.data() + r * V;
        F* dx = logits->grad.data() + r * V;
        for (long c = 0; c < V; ++c) dx[c] += g * p[c];
        dx[targets[r]] -= g;
      }
    });
  return out;
}

}  // namespace ops

// Central finite-difference gradient check against reverse mode. Evaluates f
// (which must build a fresh tape internally per call) on perturbed copies of
// x; checks up to max_coords coordinates (all when <= 0).
template <typename F>
double grad_check(const std::function<F(const TensorPtr<F>&)>& f,
                  const std::function<void(const TensorPtr<F>&)>& backward_fill,
                  const TensorPtr<F>& x, F eps, long max_coords = 0, uint64_t seed = 0) {
  backward_fill(x);  // leaves analytic gradient in x->grad
  std::vector<F> analytic = x->grad;
  std::vector<long> coords;
  long n = static_cast<long>(x->data.size());
  if (max_coords <= 0 || max_coords >= n) {
    coords.resize(n);
    for (long i = 0; i < n; ++i) coords[i] = i;
  } else {
    std::mt19937_64 rng(seed);
    std::vector<long> all(n);
    for (long i = 0; i < n; ++i) all[i] = i;
    for (long i = 0; i < max_coords; ++i) std::swap(all[i], all[i + rng() % (n - i)]);
    coords.assign(all.begin(), all.begin() + max_coords);
  }
  double max_rel = 0;
  for (long c : coords) {
    F keep = x->data[c];
    x->data[c] = keep + eps;
    F up = f(x);
    x->data[c] = keep - eps;
    F down = f(x);
    x->data[c] = keep;
    double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
    double a = analytic[c];
    double denom = std::max(1.0, std::max(std::abs(a), std::abs(numeric)));
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace deskmt
