#include "infonet/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "infonet/bilinear.hpp"

namespace infonet::ad {

namespace {

template <class Real>
using RMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using Map = Eigen::Map<RMat<Real>>;
template <class Real>
using CMap = Eigen::Map<const RMat<Real>>;
template <class Real>
using ArrMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <class Real>
using CArrMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(s));
  }
}

template <class Real>
Tape<Real>& tape_of(Var<Real> a, Var<Real> b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
  return *a.tape;
}

// Rows x last-axis view of any tensor with rank >= 1.
inline std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.empty()) return {1, 1};
  const std::size_t cols = s.back();
  return {cols ? shape_size(s) / cols : 0, cols};
}

}  // namespace

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b, bool trans_a, bool trans_b) {
  Tape<Real>& tape = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank("matmul", A.shape(), 2);
  require_rank("matmul", B.shape(), 2);
  const std::size_t m = trans_a ? A.dim(1) : A.dim(0);
  const std::size_t k = trans_a ? A.dim(0) : A.dim(1);
  const std::size_t kb = trans_b ? B.dim(1) : B.dim(0);
  const std::size_t n = trans_b ? B.dim(0) : B.dim(1);
  if (k != kb) shape_error("matmul", A.shape(), B.shape());

  auto out = Tensor<Real>::uninitialized({m, n});
  CMap<Real> Am(A.ptr(), A.dim(0), A.dim(1));
  CMap<Real> Bm(B.ptr(), B.dim(0), B.dim(1));
  Map<Real> C(out.ptr(), m, n);
  if (!trans_a && !trans_b) C.noalias() = Am * Bm;
  else if (trans_a && !trans_b) C.noalias() = Am.transpose() * Bm;
  else if (!trans_a && trans_b) C.noalias() = Am * Bm.transpose();
  else C.noalias() = Am.transpose() * Bm.transpose();

  const std::size_t ia = a.index, ib = b.index;
  return tape.push(std::move(out), {ia, ib}, [ia, ib, trans_a, trans_b](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    CMap<Real> Gm(G.ptr(), G.dim(0), G.dim(1));
    CMap<Real> Am(A.ptr(), A.dim(0), A.dim(1));
    CMap<Real> Bm(B.ptr(), B.dim(0), B.dim(1));
    if (t.requires_grad(ia)) {
      auto& dA = t.grad_buffer(ia);
      Map<Real> dAm(dA.ptr(), A.dim(0), A.dim(1));
      // dA_eff = G * B_eff^T
      if (!trans_a) {
        if (!trans_b) dAm.noalias() += Gm * Bm.transpose();
        else dAm.noalias() += Gm * Bm;
      } else {
        if (!trans_b) dAm.noalias() += Bm * Gm.transpose();
        else dAm.noalias() += Bm.transpose() * Gm.transpose();
      }
    }
    if (t.requires_grad(ib)) {
      auto& dB = t.grad_buffer(ib);
      Map<Real> dBm(dB.ptr(), B.dim(0), B.dim(1));
      // dB_eff = A_eff^T * G
      if (!trans_b) {
        if (!trans_a) dBm.noalias() += Am.transpose() * Gm;
        else dBm.noalias() += Am * Gm;
      } else {
        if (!trans_a) dBm.noalias() += Gm.transpose() * Am;
        else dBm.noalias() += Gm.transpose() * Am.transpose();
      }
    }
  });
}

template <class Real>
Var<Real> batched_matmul(Var<Real> a, Var<Real> b, bool trans_b) {
  Tape<Real>& tape = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank("batched_matmul", A.shape(), 3);
  require_rank("batched_matmul", B.shape(), 3);
  const std::size_t batch = A.dim(0), m = A.dim(1), k = A.dim(2);
  const std::size_t kb = trans_b ? B.dim(2) : B.dim(1);
  const std::size_t n = trans_b ? B.dim(1) : B.dim(2);
  if (B.dim(0) != batch || kb != k) shape_error("batched_matmul", A.shape(), B.shape());

  auto out = Tensor<Real>::uninitialized({batch, m, n});
  const std::size_t bs0 = B.dim(1), bs1 = B.dim(2);
  for (std::size_t i = 0; i < batch; ++i) {
    CMap<Real> Am(A.ptr() + i * m * k, m, k);
    CMap<Real> Bm(B.ptr() + i * bs0 * bs1, bs0, bs1);
    Map<Real> C(out.ptr() + i * m * n, m, n);
    if (trans_b) C.noalias() = Am * Bm.transpose();
    else C.noalias() = Am * Bm;
  }

  const std::size_t ia = a.index, ib = b.index;
  return tape.push(std::move(out), {ia, ib},
                   [ia, ib, batch, m, k, n, bs0, bs1, trans_b](Tape<Real>& t, std::size_t self) {
                     const auto& G = *t.grad(self);
                     const auto& A = t.value(ia);
                     const auto& B = t.value(ib);
                     const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
                     Real* dA = ga ? t.grad_buffer(ia).ptr() : nullptr;
                     Real* dB = gb ? t.grad_buffer(ib).ptr() : nullptr;
                     for (std::size_t i = 0; i < batch; ++i) {
                       CMap<Real> Gm(G.ptr() + i * m * n, m, n);
                       CMap<Real> Am(A.ptr() + i * m * k, m, k);
                       CMap<Real> Bm(B.ptr() + i * bs0 * bs1, bs0, bs1);
                       if (ga) {
                         Map<Real> dAm(dA + i * m * k, m, k);
                         if (trans_b) dAm.noalias() += Gm * Bm;
                         else dAm.noalias() += Gm * Bm.transpose();
                       }
                       if (gb) {
                         Map<Real> dBm(dB + i * bs0 * bs1, bs0, bs1);
                         if (trans_b) dBm.noalias() += Gm.transpose() * Am;
                         else dBm.noalias() += Am.transpose() * Gm;
                       }
                     }
                   });
}

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) shape_error("add", A.shape(), B.shape());
  auto out = Tensor<Real>::uninitialized(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  const std::size_t ia = a.index, ib = b.index;
  return tape.push(std::move(out), {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    for (auto idx : {ia, ib}) {
      if (!t.requires_grad(idx)) continue;
      auto& d = t.grad_buffer(idx);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
    }
  });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) shape_error("sub", A.shape(), B.shape());
  auto out = Tensor<Real>::uninitialized(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  const std::size_t ia = a.index, ib = b.index;
  return tape.push(std::move(out), {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    if (t.requires_grad(ia)) {
      auto& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
    }
    if (t.requires_grad(ib)) {
      auto& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] -= G[i];
    }
  });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) shape_error("mul", A.shape(), B.shape());
  auto out = Tensor<Real>::uninitialized(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  const std::size_t ia = a.index, ib = b.index;
  return tape.push(std::move(out), {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * B[i];
    }
    if (t.requires_grad(ib)) {
      auto& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * A[i];
    }
  });
}

template <class Real>
Var<Real> scale(Var<Real> a, Real s) {
  const auto& A = a.value();
  auto out = Tensor<Real>::uninitialized(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * s;
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia, s](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * s;
  });
}

template <class Real>
Var<Real> add_bias(Var<Real> x, Var<Real> bias) {
  Tape<Real>& tape = tape_of(x, bias);
  const auto& X = x.value();
  const auto& B = bias.value();
  auto [rows, cols] = rows_cols(X.shape());
  if (X.rank() < 1 || B.rank() != 1 || B.dim(0) != cols) shape_error("add_bias", X.shape(), B.shape());
  auto out = Tensor<Real>::uninitialized(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = X.ptr() + r * cols;
    Real* o = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] = xr[c] + B[c];
  }
  const std::size_t ix = x.index, ib = bias.index;
  return tape.push(std::move(out), {ix, ib}, [ix, ib, rows, cols](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    if (t.requires_grad(ix)) {
      auto& d = t.grad_buffer(ix);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
    }
    if (t.requires_grad(ib)) {
      auto& d = t.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* g = G.ptr() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) d[c] += g[c];
      }
    }
  });
}

template <class Real>
Var<Real> transpose(Var<Real> a) {
  const auto& A = a.value();
  require_rank("transpose", A.shape(), 2);
  const std::size_t m = A.dim(0), n = A.dim(1);
  auto out = Tensor<Real>::uninitialized({n, m});
  Map<Real>(out.ptr(), n, m) = CMap<Real>(A.ptr(), m, n).transpose();
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia, m, n](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ia);
    Map<Real>(d.ptr(), m, n) += CMap<Real>(G.ptr(), n, m).transpose();
  });
}

template <class Real>
Var<Real> reshape(Var<Real> a, Shape shape) {
  const auto& A = a.value();
  if (shape_size(shape) != A.size()) shape_error("reshape", A.shape(), shape);
  Tensor<Real> out(std::move(shape), A.data());
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
  });
}

template <class Real>
Var<Real> softmax(Var<Real> a) {
  const auto& A = a.value();
  if (A.rank() < 1) throw std::invalid_argument("softmax: scalar input");
  auto [rows, cols] = rows_cols(A.shape());
  auto out = Tensor<Real>::uninitialized(A.shape());
  if (rows > 0 && cols > 0) {
    // Whole-matrix passes vectorise far better than per-row reductions.
    const auto R = static_cast<Eigen::Index>(rows), C = static_cast<Eigen::Index>(cols);
    CMap<Real> X(A.ptr(), R, C);
    Map<Real> Y(out.ptr(), R, C);
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> mx = X.rowwise().maxCoeff();
    Y.noalias() = X.colwise() - mx;
    ArrMap<Real> ya(out.ptr(), R * C);
    ya = ya.exp();
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> inv = Y.rowwise().sum().cwiseInverse();
    Y = inv.asDiagonal() * Y;
  }
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia, rows, cols](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    const auto& Y = t.value(self);
    auto& d = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* g = G.ptr() + r * cols;
      const Real* y = Y.ptr() + r * cols;
      Real* dx = d.ptr() + r * cols;
      Real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

template <class Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps) {
  Tape<Real>& tape = tape_of(x, gain);
  tape_of(x, bias);
  const auto& X = x.value();
  const auto& Gn = gain.value();
  const auto& Bs = bias.value();
  auto [rows, cols] = rows_cols(X.shape());
  if (X.rank() < 1 || Gn.shape() != Shape{cols} || Bs.shape() != Shape{cols}) {
    shape_error("layer_norm", X.shape(), Gn.shape());
  }
  auto out = Tensor<Real>::uninitialized(X.shape());
  std::vector<Real> xhat(X.size());
  std::vector<Real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = X.ptr() + r * cols;
    Real mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<Real>(cols);
    const Real rs = Real(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    Real* xh = xhat.data() + r * cols;
    Real* o = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      xh[c] = (xr[c] - mu) * rs;
      o[c] = xh[c] * Gn[c] + Bs[c];
    }
  }
  const std::size_t ix = x.index, ig = gain.index, ib = bias.index;
  if (!tape.recording()) xhat.clear(), rstd.clear();
  return tape.push(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<Real>& t,
                                                                               std::size_t self) {
        const auto& G = *t.grad(self);
        const auto& Gn = t.value(ig);
        if (t.requires_grad(ig)) {
          auto& d = t.grad_buffer(ig);
          for (std::size_t i = 0; i < G.size(); ++i) d[i % cols] += G[i] * xhat[i];
        }
        if (t.requires_grad(ib)) {
          auto& d = t.grad_buffer(ib);
          for (std::size_t i = 0; i < G.size(); ++i) d[i % cols] += G[i];
        }
        if (t.requires_grad(ix)) {
          auto& d = t.grad_buffer(ix);
          const Real inv_n = Real(1) / static_cast<Real>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const Real* g = G.ptr() + r * cols;
            const Real* xh = xhat.data() + r * cols;
            Real m1 = 0, m2 = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              const Real dxh = g[c] * Gn[c];
              m1 += dxh;
              m2 += dxh * xh[c];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            Real* dx = d.ptr() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
              dx[c] += rstd[r] * (g[c] * Gn[c] - m1 - xh[c] * m2);
            }
          }
        }
      });
}

template <class Real>
Var<Real> gelu(Var<Real> a) {
  const auto& A = a.value();
  auto out = Tensor<Real>::uninitialized(A.shape());
  const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  {
    const auto n = static_cast<Eigen::Index>(A.size());
    CArrMap<Real> x(A.ptr(), n);
    ArrMap<Real>(out.ptr(), n) = Real(0.5) * x * (Real(1) + (x * inv_sqrt2).erf());
  }
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia, inv_sqrt2](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    const auto& A = t.value(ia);
    auto& d = t.grad_buffer(ia);
    const Real inv_sqrt2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Real>;
    const auto n = static_cast<Eigen::Index>(G.size());
    CArrMap<Real> x(A.ptr(), n);
    const auto cdf = Real(0.5) * (Real(1) + (x * inv_sqrt2).erf());
    const auto pdf = inv_sqrt2pi * (Real(-0.5) * x.square()).exp();
    ArrMap<Real>(d.ptr(), n) += CArrMap<Real>(G.ptr(), n) * (cdf + x * pdf);
  });
}

template <class Real>
Var<Real> relu(Var<Real> a) {
  const auto& A = a.value();
  auto out = Tensor<Real>::uninitialized(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > Real(0) ? A[i] : Real(0);
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    const auto& A = t.value(ia);
    auto& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (A[i] > Real(0)) d[i] += G[i];
    }
  });
}

template <class Real>
Var<Real> mean(Var<Real> a) {
  const auto& A = a.value();
  if (A.size() == 0) throw std::invalid_argument("mean of empty tensor");
  Real s = 0;
  for (Real v : A.data()) s += v;
  const Real inv = Real(1) / static_cast<Real>(A.size());
  const std::size_t ia = a.index;
  return a.tape->push(Tensor<Real>::scalar(s * inv), {ia}, [ia, inv](Tape<Real>& t, std::size_t self) {
    const Real g = (*t.grad(self))[0] * inv;
    auto& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

template <class Real>
Var<Real> logsumexp(Var<Real> a) {
  const auto& A = a.value();
  if (A.rank() < 1 || A.shape().back() == 0) throw std::invalid_argument("logsumexp: empty last axis");
  auto [rows, cols] = rows_cols(A.shape());
  Shape out_shape(A.shape().begin(), A.shape().end() - 1);
  auto out = Tensor<Real>::uninitialized(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = A.ptr() + r * cols;
    CArrMap<Real> xa(x, static_cast<Eigen::Index>(cols));
    const Real mx = xa.maxCoeff();
    out[r] = mx + std::log((xa - mx).exp().sum());
  }
  const std::size_t ia = a.index;
  return a.tape->push(std::move(out), {ia}, [ia, rows, cols](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    const auto& Y = t.value(self);
    const auto& A = t.value(ia);
    auto& d = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* x = A.ptr() + r * cols;
      Real* dx = d.ptr() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += G[r] * std::exp(x[c] - Y[r]);
    }
  });
}

template <class Real>
Var<Real> gather_rows(Var<Real> a, std::span<const std::size_t> rows) {
  const auto& A = a.value();
  require_rank("gather_rows", A.shape(), 2);
  const std::size_t n = A.dim(1);
  auto out = Tensor<Real>::uninitialized({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= A.dim(0)) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(rows[r]) + " out of range for " +
                                  shape_str(A.shape()));
    }
    std::copy_n(A.ptr() + rows[r] * n, n, out.ptr() + r * n);
  }
  const std::size_t ia = a.index;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape->push(std::move(out), {ia}, [ia, n, idx = std::move(idx)](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < n; ++c) d[idx[r] * n + c] += G[r * n + c];
    }
  });
}

template <class Real>
Var<Real> bilinear_lookup(Var<Real> table, std::span<const double> us, std::span<const double> vs) {
  const auto& Tb = table.value();
  require_rank("bilinear_lookup", Tb.shape(), 2);
  const std::size_t L = Tb.dim(0);
  if (Tb.dim(1) != L || L < 2) throw std::invalid_argument("bilinear_lookup: table must be LxL, L>=2, got " + shape_str(Tb.shape()));
  if (us.size() != vs.size()) {
    throw std::invalid_argument("bilinear_lookup: " + std::to_string(us.size()) + " u values vs " +
                                std::to_string(vs.size()) + " v values");
  }
  const std::size_t n = us.size();
  std::vector<BilinearStencil> st(n);
  auto out = Tensor<Real>::uninitialized({n});
  for (std::size_t i = 0; i < n; ++i) {
    st[i] = bilinear_stencil(L, us[i], vs[i]);
    const auto& s = st[i];
    out[i] = static_cast<Real>(s.w00()) * Tb[s.i0 * L + s.j0] + static_cast<Real>(s.w01()) * Tb[s.i0 * L + s.j1] +
             static_cast<Real>(s.w10()) * Tb[s.i1 * L + s.j0] + static_cast<Real>(s.w11()) * Tb[s.i1 * L + s.j1];
  }
  const std::size_t it = table.index;
  if (!table.tape->recording()) st.clear();
  return table.tape->push(std::move(out), {it}, [it, L, st = std::move(st)](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(it);
    for (std::size_t i = 0; i < st.size(); ++i) {
      const auto& s = st[i];
      const Real g = G[i];
      d[s.i0 * L + s.j0] += g * static_cast<Real>(s.w00());
      d[s.i0 * L + s.j1] += g * static_cast<Real>(s.w01());
      d[s.i1 * L + s.j0] += g * static_cast<Real>(s.w10());
      d[s.i1 * L + s.j1] += g * static_cast<Real>(s.w11());
    }
  });
}

template <class Real>
Var<Real> conv2d_fixed(Var<Real> x, const Tensor<Real>& kernel) {
  const auto& X = x.value();
  require_rank("conv2d_fixed", X.shape(), 2);
  require_rank("conv2d_fixed", kernel.shape(), 2);
  const std::size_t k = kernel.dim(0);
  if (kernel.dim(1) != k || k % 2 == 0) {
    throw std::invalid_argument("conv2d_fixed: kernel must be square with odd size, got " + shape_str(kernel.shape()));
  }
  const std::size_t H = X.dim(0), W = X.dim(1);
  const long r = static_cast<long>(k / 2);
  // tap offsets resolved once: clamp(i + a - r) for every output row/col
  auto clamp_idx = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };
  auto out = Tensor<Real>::uninitialized({H, W});
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      Real acc = 0;
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t si = clamp_idx(static_cast<long>(i) + static_cast<long>(a) - r, H);
        for (std::size_t b = 0; b < k; ++b) {
          const std::size_t sj = clamp_idx(static_cast<long>(j) + static_cast<long>(b) - r, W);
          acc += kernel[a * k + b] * X[si * W + sj];
        }
      }
      out[i * W + j] = acc;
    }
  }
  const std::size_t ix = x.index;
  return x.tape->push(std::move(out), {ix}, [ix, kernel, H, W, k, r, clamp_idx](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const Real g = G[i * W + j];
        for (std::size_t a = 0; a < k; ++a) {
          const std::size_t si = clamp_idx(static_cast<long>(i) + static_cast<long>(a) - r, H);
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t sj = clamp_idx(static_cast<long>(j) + static_cast<long>(b) - r, W);
            d[si * W + sj] += g * kernel[a * k + b];
          }
        }
      }
    }
  });
}

template <class Real>
Var<Real> concat(Var<Real> a, Var<Real> b, std::size_t axis) {
  Tape<Real>& tape = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() == 0 || A.rank() != B.rank()) shape_error("concat", A.shape(), B.shape());
  const std::size_t ia = a.index, ib = b.index;
  if (axis == 0) {
    for (std::size_t i = 1; i < A.rank(); ++i) {
      if (A.dim(i) != B.dim(i)) shape_error("concat", A.shape(), B.shape());
    }
    Shape s = A.shape();
    s[0] += B.dim(0);
    std::vector<Real> data;
    data.reserve(A.size() + B.size());
    data.insert(data.end(), A.data().begin(), A.data().end());
    data.insert(data.end(), B.data().begin(), B.data().end());
    const std::size_t na = A.size();
    return tape.push(Tensor<Real>(s, std::move(data)), {ia, ib}, [ia, ib, na](Tape<Real>& t, std::size_t self) {
      const auto& G = *t.grad(self);
      if (t.requires_grad(ia)) {
        auto& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < na; ++i) d[i] += G[i];
      }
      if (t.requires_grad(ib)) {
        auto& d = t.grad_buffer(ib);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[na + i];
      }
    });
  }
  if (axis != 1 || A.rank() != 2 || A.dim(0) != B.dim(0)) shape_error("concat", A.shape(), B.shape());
  const std::size_t m = A.dim(0), ca = A.dim(1), cb = B.dim(1);
  auto out = Tensor<Real>::uninitialized({m, ca + cb});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(A.ptr() + r * ca, ca, out.ptr() + r * (ca + cb));
    std::copy_n(B.ptr() + r * cb, cb, out.ptr() + r * (ca + cb) + ca);
  }
  return tape.push(std::move(out), {ia, ib}, [ia, ib, m, ca, cb](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    for (std::size_t r = 0; r < m; ++r) {
      if (t.requires_grad(ia)) {
        auto& d = t.grad_buffer(ia);
        for (std::size_t c = 0; c < ca; ++c) d[r * ca + c] += G[r * (ca + cb) + c];
      }
      if (t.requires_grad(ib)) {
        auto& d = t.grad_buffer(ib);
        for (std::size_t c = 0; c < cb; ++c) d[r * cb + c] += G[r * (ca + cb) + ca + c];
      }
    }
  });
}

template <class Real>
Var<Real> split_heads(Var<Real> x, std::size_t heads) {
  const auto& X = x.value();
  require_rank("split_heads", X.shape(), 2);
  const std::size_t n = X.dim(0), width = X.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("split_heads: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t dh = width / heads;
  auto out = Tensor<Real>::uninitialized({heads, n, dh});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(X.ptr() + i * width + h * dh, dh, out.ptr() + (h * n + i) * dh);
  const std::size_t ix = x.index;
  return x.tape->push(std::move(out), {ix}, [ix, heads, n, dh, width](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ix);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        const Real* g = G.ptr() + (h * n + i) * dh;
        Real* dx = d.ptr() + i * width + h * dh;
        for (std::size_t c = 0; c < dh; ++c) dx[c] += g[c];
      }
  });
}

template <class Real>
Var<Real> merge_heads(Var<Real> x) {
  const auto& X = x.value();
  require_rank("merge_heads", X.shape(), 3);
  const std::size_t heads = X.dim(0), n = X.dim(1), dh = X.dim(2), width = heads * dh;
  auto out = Tensor<Real>::uninitialized({n, width});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(X.ptr() + (h * n + i) * dh, dh, out.ptr() + i * width + h * dh);
  const std::size_t ix = x.index;
  return x.tape->push(std::move(out), {ix}, [ix, heads, n, dh, width](Tape<Real>& t, std::size_t self) {
    const auto& G = *t.grad(self);
    auto& d = t.grad_buffer(ix);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        const Real* g = G.ptr() + i * width + h * dh;
        Real* dx = d.ptr() + (h * n + i) * dh;
        for (std::size_t c = 0; c < dh; ++c) dx[c] += g[c];
      }
  });
}

#define INFONET_INSTANTIATE_OPS(R)                                                          \
  template Var<R> matmul(Var<R>, Var<R>, bool, bool);                                      \
  template Var<R> batched_matmul(Var<R>, Var<R>, bool);                                    \
  template Var<R> add(Var<R>, Var<R>);                                                     \
  template Var<R> sub(Var<R>, Var<R>);                                                     \
  template Var<R> mul(Var<R>, Var<R>);                                                     \
  template Var<R> scale(Var<R>, R);                                                        \
  template Var<R> add_bias(Var<R>, Var<R>);                                                \
  template Var<R> transpose(Var<R>);                                                       \
  template Var<R> reshape(Var<R>, Shape);                                                  \
  template Var<R> softmax(Var<R>);                                                         \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, R);                                   \
  template Var<R> gelu(Var<R>);                                                            \
  template Var<R> relu(Var<R>);                                                            \
  template Var<R> mean(Var<R>);                                                            \
  template Var<R> logsumexp(Var<R>);                                                       \
  template Var<R> gather_rows(Var<R>, std::span<const std::size_t>);                       \
  template Var<R> bilinear_lookup(Var<R>, std::span<const double>, std::span<const double>); \
  template Var<R> conv2d_fixed(Var<R>, const Tensor<R>&);                                  \
  template Var<R> concat(Var<R>, Var<R>, std::size_t);                                     \
  template Var<R> split_heads(Var<R>, std::size_t);                                        \
  template Var<R> merge_heads(Var<R>);

INFONET_INSTANTIATE_OPS(float)
INFONET_INSTANTIATE_OPS(double)

}  // namespace infonet::ad
