#pragma once

// Forward and backward passes for the handful of operations the ViT needs.
// Every product accumulates over the shared dimension in ascending order,
// so results are bit-reproducible and match a naive triple loop exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "neurovit/tensor.hpp"

namespace neurovit {

namespace detail {

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

template <class T>
void require_rank2(const BasicTensor<T>& t, const char* name) {
  require(t.rank() == 2, Errc::ShapeMismatch, std::string(name) + " must be rank 2, got " + shape_string(t.shape()));
}

}  // namespace detail

// ---- matmul ------------------------------------------------------------------

/// C[m,n] = A[m,k] B[k,n].
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank2(a, "matmul lhs");
  detail::require_rank2(b, "matmul rhs");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, Errc::ShapeMismatch,
                  "matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  BasicTensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (int i = 0; i < m; ++i) {
    T* row = pc + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = pa[static_cast<std::size_t>(i) * k + p];
      const T* brow = pb + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return c;
}

/// C[m,n] = A[m,k] B[n,k]^T.
template <class T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank2(a, "matmul_nt lhs");
  detail::require_rank2(b, "matmul_nt rhs");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  detail::require(b.dim(1) == k, Errc::ShapeMismatch, "matmul_nt inner dimensions differ");
  BasicTensor<T> c({m, n});
  for (int i = 0; i < m; ++i) {
    const T* arow = a.data().data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b.data().data() + static_cast<std::size_t>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c.at(i, j) = acc;
    }
  }
  return c;
}

/// C[m,n] = A[k,m]^T B[k,n].
template <class T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank2(a, "matmul_tn lhs");
  detail::require_rank2(b, "matmul_tn rhs");
  const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, Errc::ShapeMismatch, "matmul_tn inner dimensions differ");
  BasicTensor<T> c({m, n});
  T* pc = c.data().data();
  for (int p = 0; p < k; ++p) {
    const T* arow = a.data().data() + static_cast<std::size_t>(p) * m;
    const T* brow = b.data().data() + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = pc + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
struct MatmulGrads {
  BasicTensor<T> da;
  BasicTensor<T> db;
};

template <class T>
MatmulGrads<T> matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>& dc) {
  return {matmul_nt(dc, b), matmul_tn(a, dc)};
}

// ---- linear (x W + b) --------------------------------------------------------

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
  BasicTensor<T> y = matmul(x, w);
  const int n = y.dim(1);
  detail::require(static_cast<int>(bias.size()) == n, Errc::ShapeMismatch, "linear bias length differs from output width");
  for (int i = 0; i < y.dim(0); ++i)
    for (int j = 0; j < n; ++j) y.at(i, j) += bias[static_cast<std::size_t>(j)];
  return y;
}

template <class T>
struct LinearGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dw;
  BasicTensor<T> db;
};

template <class T>
LinearGrads<T> linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy) {
  LinearGrads<T> g{matmul_nt(dy, w), matmul_tn(x, dy), BasicTensor<T>({dy.dim(1)})};
  for (int i = 0; i < dy.dim(0); ++i)
    for (int j = 0; j < dy.dim(1); ++j) g.db[static_cast<std::size_t>(j)] += dy.at(i, j);
  return g;
}

// ---- layer norm --------------------------------------------------------------

template <class T>
struct LayerNormCache {
  BasicTensor<T> xhat;     // normalized input, [n, e]
  std::vector<T> rstd;     // 1 / sqrt(var + eps) per row
};

template <class T>
struct LayerNormResult {
  BasicTensor<T> y;
  LayerNormCache<T> cache;
};

/// Per-row (x - mean) / sqrt(var + eps) * gamma + beta, biased variance.
template <class T>
LayerNormResult<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                              T eps = T(1e-6)) {
  detail::require_rank2(x, "layer_norm input");
  const int n = x.dim(0), e = x.dim(1);
  detail::require(static_cast<int>(gamma.size()) == e && static_cast<int>(beta.size()) == e, Errc::ShapeMismatch,
                  "layer_norm gamma/beta length differs from feature width");
  LayerNormResult<T> r{BasicTensor<T>(x.shape()), {BasicTensor<T>(x.shape()), std::vector<T>(static_cast<std::size_t>(n))}};
  for (int i = 0; i < n; ++i) {
    T mean = T(0);
    for (int j = 0; j < e; ++j) mean += x.at(i, j);
    mean /= static_cast<T>(e);
    T var = T(0);
    for (int j = 0; j < e; ++j) {
      const T c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<T>(e);
    const T rstd = T(1) / std::sqrt(var + eps);
    r.cache.rstd[static_cast<std::size_t>(i)] = rstd;
    for (int j = 0; j < e; ++j) {
      const T xh = (x.at(i, j) - mean) * rstd;
      r.cache.xhat.at(i, j) = xh;
      r.y.at(i, j) = xh * gamma[static_cast<std::size_t>(j)] + beta[static_cast<std::size_t>(j)];
    }
  }
  return r;
}

template <class T>
struct LayerNormGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dgamma;
  BasicTensor<T> dbeta;
};

template <class T>
LayerNormGrads<T> layer_norm_backward(const LayerNormCache<T>& cache, const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& dy) {
  const int n = dy.dim(0), e = dy.dim(1);
  LayerNormGrads<T> g{BasicTensor<T>(dy.shape()), BasicTensor<T>({e}), BasicTensor<T>({e})};
  std::vector<T> dxhat(static_cast<std::size_t>(e));
  for (int i = 0; i < n; ++i) {
    T mean_d = T(0);
    T mean_dx = T(0);
    for (int j = 0; j < e; ++j) {
      const T d = dy.at(i, j);
      const T xh = cache.xhat.at(i, j);
      g.dgamma[static_cast<std::size_t>(j)] += d * xh;
      g.dbeta[static_cast<std::size_t>(j)] += d;
      dxhat[static_cast<std::size_t>(j)] = d * gamma[static_cast<std::size_t>(j)];
      mean_d += dxhat[static_cast<std::size_t>(j)];
      mean_dx += dxhat[static_cast<std::size_t>(j)] * xh;
    }
    mean_d /= static_cast<T>(e);
    mean_dx /= static_cast<T>(e);
    const T rstd = cache.rstd[static_cast<std::size_t>(i)];
    for (int j = 0; j < e; ++j) {
      g.dx.at(i, j) = rstd * (dxhat[static_cast<std::size_t>(j)] - mean_d - cache.xhat.at(i, j) * mean_dx);
    }
  }
  return g;
}

// ---- GELU (tanh approximation) ----------------------------------------------

namespace detail {
template <class T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
template <class T>
constexpr T kGeluA = static_cast<T>(0.044715);
}  // namespace detail

template <class T>
T gelu_scalar(T x) noexcept {
  const T u = detail::kGeluC<T> * (x + detail::kGeluA<T> * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T gelu_grad_scalar(T x) noexcept {
  const T u = detail::kGeluC<T> * (x + detail::kGeluA<T> * x * x * x);
  const T t = std::tanh(u);
  const T du = detail::kGeluC<T> * (T(1) + T(3) * detail::kGeluA<T> * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
  return y;
}

template <class T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
  return dx;
}

// ---- softmax over the last dimension ----------------------------------------

template <class T>
void softmax_rows_inplace(std::span<T> values, int row_len) {
  const std::size_t n = static_cast<std::size_t>(row_len);
  for (std::size_t r = 0; r + n <= values.size(); r += n) {
    T* row = values.data() + r;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

/// Max-subtracted softmax along the last axis of any-rank input.
template <class T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  detail::require(x.rank() >= 1, Errc::ShapeMismatch, "softmax needs rank >= 1");
  BasicTensor<T> y = x;
  y.drop_grad();
  softmax_rows_inplace(y.data(), x.dim(x.rank() - 1));
  return y;
}

/// dx = y * (dy - sum(dy * y)) per row, given the softmax output y.
template <class T>
void softmax_backward_rows(std::span<const T> y, std::span<const T> dy, std::span<T> dx, int row_len) {
  const std::size_t n = static_cast<std::size_t>(row_len);
  for (std::size_t r = 0; r + n <= y.size(); r += n) {
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += dy[r + j] * y[r + j];
    for (std::size_t j = 0; j < n; ++j) dx[r + j] = y[r + j] * (dy[r + j] - dot);
  }
}

template <class T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& y, const BasicTensor<T>& dy) {
  BasicTensor<T> dx(y.shape());
  softmax_backward_rows<T>(y.data(), dy.data(), dx.data(), y.dim(y.rank() - 1));
  return dx;
}

// ---- multi-head self-attention -----------------------------------------------

template <class T>
struct AttentionWeights {
  const BasicTensor<T>& wqkv;  // [e, 3e]
  const BasicTensor<T>& bqkv;  // [3e]
  const BasicTensor<T>& wo;    // [e, e]
  const BasicTensor<T>& bo;    // [e]
};

template <class T>
struct AttentionCache {
  BasicTensor<T> qkv;         // [n, 3e], q | k | v
  std::vector<T> probs;       // heads x n x n attention weights
  BasicTensor<T> ctx;         // [n, e] concatenated head outputs
};

template <class T>
struct AttentionResult {
  BasicTensor<T> y;
  AttentionCache<T> cache;
};

/// Scaled dot-product self-attention with `heads` heads of width e / heads,
/// scale 1 / sqrt(e / heads), followed by the output projection.
template <class T>
AttentionResult<T> multi_head_attention(const BasicTensor<T>& x, const AttentionWeights<T>& w, int heads) {
  detail::require_rank2(x, "attention input");
  const int n = x.dim(0), e = x.dim(1);
  detail::require(heads >= 1 && e % heads == 0, Errc::BadHeadCount,
                  "embed dim " + std::to_string(e) + " is not divisible by " + std::to_string(heads) + " heads");
  detail::require(w.wqkv.rank() == 2 && w.wqkv.dim(0) == e && w.wqkv.dim(1) == 3 * e, Errc::ShapeMismatch,
                  "attention wqkv must be [e, 3e]");
  detail::require(w.wo.rank() == 2 && w.wo.dim(0) == e && w.wo.dim(1) == e, Errc::ShapeMismatch,
                  "attention wo must be [e, e]");
  const int hd = e / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  AttentionResult<T> r;
  r.cache.qkv = linear(x, w.wqkv, w.bqkv);
  r.cache.probs.assign(static_cast<std::size_t>(heads) * n * n, T(0));
  r.cache.ctx = BasicTensor<T>({n, e});
  const auto& qkv = r.cache.qkv;
  for (int h = 0; h < heads; ++h) {
    T* P = r.cache.probs.data() + static_cast<std::size_t>(h) * n * n;
    const int qo = h * hd, ko = e + h * hd, vo = 2 * e + h * hd;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        T s = T(0);
        for (int c = 0; c < hd; ++c) s += qkv.at(i, qo + c) * qkv.at(j, ko + c);
        P[static_cast<std::size_t>(i) * n + j] = s * scale;
      }
    }
    softmax_rows_inplace(std::span<T>(P, static_cast<std::size_t>(n) * n), n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const T p = P[static_cast<std::size_t>(i) * n + j];
        for (int c = 0; c < hd; ++c) r.cache.ctx.at(i, qo + c) += p * qkv.at(j, vo + c);
      }
    }
  }
  r.y = linear(r.cache.ctx, w.wo, w.bo);
  return r;
}

template <class T>
struct AttentionGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dwqkv;
  BasicTensor<T> dbqkv;
  BasicTensor<T> dwo;
  BasicTensor<T> dbo;
};

template <class T>
AttentionGrads<T> multi_head_attention_backward(const BasicTensor<T>& x, const AttentionWeights<T>& w, int heads,
                                                const AttentionCache<T>& cache, const BasicTensor<T>& dy) {
  const int n = x.dim(0), e = x.dim(1);
  const int hd = e / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  auto out = linear_backward(cache.ctx, w.wo, dy);
  const BasicTensor<T>& dctx = out.dx;
  const auto& qkv = cache.qkv;
  BasicTensor<T> dqkv({n, 3 * e});
  std::vector<T> dP(static_cast<std::size_t>(n) * n);
  std::vector<T> dS(static_cast<std::size_t>(n) * n);
  for (int h = 0; h < heads; ++h) {
    const T* P = cache.probs.data() + static_cast<std::size_t>(h) * n * n;
    const int qo = h * hd, ko = e + h * hd, vo = 2 * e + h * hd;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        T s = T(0);
        for (int c = 0; c < hd; ++c) s += dctx.at(i, qo + c) * qkv.at(j, vo + c);
        dP[static_cast<std::size_t>(i) * n + j] = s;
      }
    }
    // dV = P^T dctx
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const T p = P[static_cast<std::size_t>(i) * n + j];
        for (int c = 0; c < hd; ++c) dqkv.at(j, vo + c) += p * dctx.at(i, qo + c);
      }
    }
    softmax_backward_rows<T>(std::span<const T>(P, dP.size()), dP, dS, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const T g = dS[static_cast<std::size_t>(i) * n + j] * scale;
        for (int c = 0; c < hd; ++c) {
          dqkv.at(i, qo + c) += g * qkv.at(j, ko + c);
          dqkv.at(j, ko + c) += g * qkv.at(i, qo + c);
        }
      }
    }
  }
  auto in = linear_backward(x, w.wqkv, dqkv);
  return {std::move(in.dx), std::move(in.dw), std::move(in.db), std::move(out.dw), std::move(out.db)};
}

// ---- Adam --------------------------------------------------------------------

struct AdamOptions {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;  // decoupled (AdamW-style)
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update of `params` in place; increments state.t.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, const AdamOptions& opt);

// ---- finite differences -------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares `analytic` against central differences of `f` at `params`.
/// Step per coordinate is h_scale * max(1, |x|); relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-6).
template <class T>
GradCheckResult finite_difference_check(const std::function<double(std::span<const T>)>& f,
                                        std::span<const T> params, std::span<const T> analytic,
                                        double h_scale = 1e-3) {
  detail::require(params.size() == analytic.size(), Errc::ShapeMismatch, "gradient length differs from parameters");
  std::vector<T> work(params.begin(), params.end());
  GradCheckResult res;
  for (std::size_t i = 0; i < work.size(); ++i) {
    const T x = work[i];
    const T h = static_cast<T>(h_scale * std::max(1.0, std::abs(static_cast<double>(x))));
    work[i] = x + h;
    const double fp = f(work);
    work[i] = x - h;
    const double fm = f(work);
    work[i] = x;
    // Use the step actually representable in T.
    const double step = static_cast<double>(static_cast<T>(x + h)) - static_cast<double>(static_cast<T>(x - h));
    const double numeric = (fp - fm) / step;
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > res.max_rel_error) res = {rel, i, a, numeric};
  }
  return res;
}

}  // namespace neurovit
