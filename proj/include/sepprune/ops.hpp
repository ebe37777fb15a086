#pragma once

// Differentiable operations recorded on a Tape. The convolution kernels keep
// a fixed per-output accumulation order (sequential over input channels and
// taps, vectorized over time only), which is what makes masked and
// structurally pruned models agree exactly: removed channels contribute
// exact zeros without reordering the surviving additions.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>
#include <vector>

#include "sepprune/tensor.hpp"

namespace sepprune {

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  int padding = 0;
};

inline int conv1d_out_len(int L, int K, const ConvSpec& s) {
  long n = static_cast<long>(L) + 2L * s.padding -
           static_cast<long>(s.dilation) * (K - 1) - 1;
  if (n < 0) return 0;
  return static_cast<int>(n / s.stride) + 1;
}

inline int conv_transpose1d_out_len(int L, int K, int stride, int padding) {
  return (L - 1) * stride - 2 * padding + K;
}

namespace detail {

template <class T>
Tape<T>& same_tape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tape() != b.tape())
    throw InvalidArgumentError("operands live on different tapes");
  return *a.tape();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgumentError(msg);
}

// Valid output range for one tap: all l in [lo,hi) with 0 <= l*stride+off < L.
inline void tap_range(int off, int stride, int L, int Lout, int& lo, int& hi) {
  lo = off < 0 ? (-off + stride - 1) / stride : 0;
  int top = L - 1 - off;
  hi = top < 0 ? 0 : std::min(Lout, top / stride + 1);
  if (hi < lo) hi = lo;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: input [B,Cin,L], weight [Cout,Cin/groups,K], bias [Cout] optional.
// Cross-correlation, explicit symmetric zero padding.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> conv1d(Tensor<T> input, Tensor<T> weight,
                 std::type_identity_t<std::optional<Tensor<T>>> bias,
                 ConvSpec spec) {
  Tape<T>& tape = detail::same_tape(input, weight);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  detail::require(xs.size() == 3, "conv1d: input must be [B,Cin,L], got " + shape_str(xs));
  detail::require(ws.size() == 3,
                  "conv1d: weight must be [Cout,Cin/groups,K], got " + shape_str(ws));
  detail::require(spec.stride >= 1 && spec.dilation >= 1 && spec.groups >= 1 &&
                      spec.padding >= 0,
                  "conv1d: stride/dilation/groups must be >= 1, padding >= 0");
  const int B = xs[0], Cin = xs[1], L = xs[2];
  const int Cout = ws[0], Cpg = ws[1], K = ws[2];
  detail::require(Cin % spec.groups == 0, "conv1d: Cin not divisible by groups");
  detail::require(Cout % spec.groups == 0, "conv1d: Cout not divisible by groups");
  detail::require(Cpg == Cin / spec.groups,
                  "conv1d: weight shape " + shape_str(ws) + " inconsistent with Cin=" +
                      std::to_string(Cin) + " groups=" + std::to_string(spec.groups));
  if (bias) {
    detail::same_tape(input, *bias);
    detail::require(bias->shape() == Shape{Cout}, "conv1d: bias must be [Cout]");
  }
  const int Lout = conv1d_out_len(L, K, spec);
  detail::require(Lout >= 1, "conv1d: output length < 1 for L=" + std::to_string(L));

  const int cout_pg = Cout / spec.groups;
  std::vector<T> out(static_cast<std::size_t>(B) * Cout * Lout);
  const T* X = input.values().data();
  const T* W = weight.values().data();
  const T* Bv = bias ? bias->values().data() : nullptr;
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Cout; ++co) {
      T* o = out.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
      std::fill(o, o + Lout, Bv ? Bv[co] : T(0));
      const int g = co / cout_pg;
      for (int cl = 0; cl < Cpg; ++cl) {
        const int ci = g * Cpg + cl;
        const T* x = X + (static_cast<std::size_t>(b) * Cin + ci) * L;
        const T* w = W + (static_cast<std::size_t>(co) * Cpg + cl) * K;
        for (int k = 0; k < K; ++k) {
          const T wk = w[k];
          const int off = k * spec.dilation - spec.padding;
          int lo, hi;
          detail::tap_range(off, spec.stride, L, Lout, lo, hi);
          if (spec.stride == 1) {
            const T* xo = x + off;
            for (int l = lo; l < hi; ++l) o[l] += wk * xo[l];
          } else {
            for (int l = lo; l < hi; ++l) o[l] += wk * x[l * spec.stride + off];
          }
        }
      }
    }
  }

  const int in_id = input.id(), w_id = weight.id();
  const int b_id = bias ? bias->id() : -1;
  std::vector<int> ins = {in_id, w_id};
  if (bias) ins.push_back(b_id);
  return tape.emit(
      "conv1d", Shape{B, Cout, Lout}, std::move(out), std::move(ins),
      [=](Tape<T>& tp, int out_id) {
        const T* G = tp.node(out_id).grad.data();
        const T* Xv = tp.node(in_id).values.data();
        const T* Wv = tp.node(w_id).values.data();
        const bool need_in = tp.node(in_id).needs_grad;
        const bool need_w = tp.node(w_id).needs_grad;
        const bool need_b = b_id >= 0 && tp.node(b_id).needs_grad;
        T* GI = need_in ? tp.grad_buffer(in_id).data() : nullptr;
        T* GW = need_w ? tp.grad_buffer(w_id).data() : nullptr;
        T* GB = need_b ? tp.grad_buffer(b_id).data() : nullptr;
        for (int b = 0; b < B; ++b) {
          for (int co = 0; co < Cout; ++co) {
            const T* go = G + (static_cast<std::size_t>(b) * Cout + co) * Lout;
            if (GB) {
              T s = 0;
              for (int l = 0; l < Lout; ++l) s += go[l];
              GB[co] += s;
            }
            if (!GI && !GW) continue;
            const int g = co / cout_pg;
            for (int cl = 0; cl < Cpg; ++cl) {
              const int ci = g * Cpg + cl;
              const std::size_t xrow = (static_cast<std::size_t>(b) * Cin + ci) * L;
              const std::size_t wrow = (static_cast<std::size_t>(co) * Cpg + cl) * K;
              for (int k = 0; k < K; ++k) {
                const int off = k * spec.dilation - spec.padding;
                int lo, hi;
                detail::tap_range(off, spec.stride, L, Lout, lo, hi);
                if (GI) {
                  const T wk = Wv[wrow + k];
                  T* gi = GI + xrow;
                  if (spec.stride == 1) {
                    T* gio = gi + off;
                    for (int l = lo; l < hi; ++l) gio[l] += wk * go[l];
                  } else {
                    for (int l = lo; l < hi; ++l) gi[l * spec.stride + off] += wk * go[l];
                  }
                }
                if (GW) {
                  const T* x = Xv + xrow;
                  T s = 0;
                  if (spec.stride == 1) {
                    const T* xo = x + off;
                    for (int l = lo; l < hi; ++l) s += go[l] * xo[l];
                  } else {
                    for (int l = lo; l < hi; ++l) s += go[l] * x[l * spec.stride + off];
                  }
                  GW[wrow + k] += s;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// conv_transpose1d: input [B,Cin,L], weight [Cin,Cout,K], bias [Cout]
// optional. Adjoint of conv1d with the same stride/padding (dilation 1,
// groups 1).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> conv_transpose1d(Tensor<T> input, Tensor<T> weight,
                           std::type_identity_t<std::optional<Tensor<T>>> bias,
                           int stride, int padding) {
  Tape<T>& tape = detail::same_tape(input, weight);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  detail::require(xs.size() == 3,
                  "conv_transpose1d: input must be [B,Cin,L], got " + shape_str(xs));
  detail::require(ws.size() == 3,
                  "conv_transpose1d: weight must be [Cin,Cout,K], got " + shape_str(ws));
  detail::require(stride >= 1 && padding >= 0,
                  "conv_transpose1d: stride must be >= 1, padding >= 0");
  const int B = xs[0], Cin = xs[1], L = xs[2];
  const int Cout = ws[1], K = ws[2];
  detail::require(ws[0] == Cin, "conv_transpose1d: weight Cin mismatch, weight " +
                                    shape_str(ws) + " input " + shape_str(xs));
  if (bias) {
    detail::same_tape(input, *bias);
    detail::require(bias->shape() == Shape{Cout}, "conv_transpose1d: bias must be [Cout]");
  }
  const int Lout = conv_transpose1d_out_len(L, K, stride, padding);
  detail::require(Lout >= 1, "conv_transpose1d: output length < 1");

  std::vector<T> out(static_cast<std::size_t>(B) * Cout * Lout);
  const T* X = input.values().data();
  const T* W = weight.values().data();
  const T* Bv = bias ? bias->values().data() : nullptr;
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Cout; ++co) {
      T* o = out.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
      std::fill(o, o + Lout, Bv ? Bv[co] : T(0));
    }
    for (int ci = 0; ci < Cin; ++ci) {
      const T* x = X + (static_cast<std::size_t>(b) * Cin + ci) * L;
      for (int co = 0; co < Cout; ++co) {
        T* o = out.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
        const T* w = W + (static_cast<std::size_t>(ci) * Cout + co) * K;
        for (int k = 0; k < K; ++k) {
          const T wk = w[k];
          const int off = k - padding;  // t = l*stride + off
          int lo, hi;
          detail::tap_range(off, stride, Lout, L, lo, hi);
          for (int l = lo; l < hi; ++l) o[l * stride + off] += wk * x[l];
        }
      }
    }
  }

  const int in_id = input.id(), w_id = weight.id();
  const int b_id = bias ? bias->id() : -1;
  std::vector<int> ins = {in_id, w_id};
  if (bias) ins.push_back(b_id);
  return tape.emit(
      "conv_transpose1d", Shape{B, Cout, Lout}, std::move(out), std::move(ins),
      [=](Tape<T>& tp, int out_id) {
        const T* G = tp.node(out_id).grad.data();
        const T* Xv = tp.node(in_id).values.data();
        const T* Wv = tp.node(w_id).values.data();
        const bool need_in = tp.node(in_id).needs_grad;
        const bool need_w = tp.node(w_id).needs_grad;
        const bool need_b = b_id >= 0 && tp.node(b_id).needs_grad;
        T* GI = need_in ? tp.grad_buffer(in_id).data() : nullptr;
        T* GW = need_w ? tp.grad_buffer(w_id).data() : nullptr;
        T* GB = need_b ? tp.grad_buffer(b_id).data() : nullptr;
        for (int b = 0; b < B; ++b) {
          if (GB) {
            for (int co = 0; co < Cout; ++co) {
              const T* go = G + (static_cast<std::size_t>(b) * Cout + co) * Lout;
              T s = 0;
              for (int t = 0; t < Lout; ++t) s += go[t];
              GB[co] += s;
            }
          }
          if (!GI && !GW) continue;
          for (int ci = 0; ci < Cin; ++ci) {
            const std::size_t xrow = (static_cast<std::size_t>(b) * Cin + ci) * L;
            for (int co = 0; co < Cout; ++co) {
              const T* go = G + (static_cast<std::size_t>(b) * Cout + co) * Lout;
              const std::size_t wrow = (static_cast<std::size_t>(ci) * Cout + co) * K;
              for (int k = 0; k < K; ++k) {
                const int off = k - padding;
                int lo, hi;
                detail::tap_range(off, stride, Lout, L, lo, hi);
                if (GI) {
                  const T wk = Wv[wrow + k];
                  T* gi = GI + xrow;
                  for (int l = lo; l < hi; ++l) gi[l] += wk * go[l * stride + off];
                }
                if (GW) {
                  const T* x = Xv + xrow;
                  T s = 0;
                  for (int l = lo; l < hi; ++l) s += x[l] * go[l * stride + off];
                  GW[wrow + k] += s;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise / broadcast binary ops. Broadcast is restricted to identical
// shapes, a per-channel [C] vector against [B,C,L], or a 1-element scalar
// against anything.
// ---------------------------------------------------------------------------
namespace detail {

enum class Bc { Same, ChanRight, ChanLeft, ScalarRight, ScalarLeft };

template <class T>
Bc classify_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Bc::Same;
  if (b.numel() == 1) return Bc::ScalarRight;
  if (a.numel() == 1) return Bc::ScalarLeft;
  if (a.shape().size() == 3 && b.shape().size() == 1 && b.shape()[0] == a.shape()[1])
    return Bc::ChanRight;
  if (b.shape().size() == 3 && a.shape().size() == 1 && a.shape()[0] == b.shape()[1])
    return Bc::ChanLeft;
  throw InvalidArgumentError(std::string(op) + ": incompatible broadcast " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Reduce a [B,C,L]-shaped gradient onto a [C] vector.
template <class T>
void reduce_chan(const T* g, int B, int C, int L, T* acc, const T* scale) {
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* row = g + (static_cast<std::size_t>(b) * C + c) * L;
      const T* srow = scale ? scale + (static_cast<std::size_t>(b) * C + c) * L : nullptr;
      T s = 0;
      if (srow)
        for (int l = 0; l < L; ++l) s += row[l] * srow[l];
      else
        for (int l = 0; l < L; ++l) s += row[l];
      acc[c] += s;
    }
}

template <class T>
T reduce_all(const T* g, std::size_t n, const T* scale) {
  T s = 0;
  if (scale)
    for (std::size_t i = 0; i < n; ++i) s += g[i] * scale[i];
  else
    for (std::size_t i = 0; i < n; ++i) s += g[i];
  return s;
}

}  // namespace detail

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto bc = detail::classify_broadcast(a, b, "add");
  // Normalize so that any broadcastee sits on the right.
  if (bc == detail::Bc::ChanLeft || bc == detail::Bc::ScalarLeft) return add(b, a);

  const T* A = a.values().data();
  const T* Bp = b.values().data();
  std::vector<T> out(a.numel());
  if (bc == detail::Bc::Same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + Bp[i];
  } else if (bc == detail::Bc::ScalarRight) {
    const T s = Bp[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + s;
  } else {  // ChanRight
    const int B_ = a.shape()[0], C = a.shape()[1], L = a.shape()[2];
    for (int bb = 0; bb < B_; ++bb)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(bb) * C + c) * L;
        const T s = Bp[c];
        for (int l = 0; l < L; ++l) out[base + l] = A[base + l] + s;
      }
  }
  const int a_id = a.id(), b_id = b.id();
  const Shape ash = a.shape();
  return tape.emit("add", ash, std::move(out), {a_id, b_id},
                   [=](Tape<T>& tp, int out_id) {
                     const T* G = tp.node(out_id).grad.data();
                     const std::size_t n = tp.node(out_id).values.size();
                     if (tp.node(a_id).needs_grad) {
                       T* ga = tp.grad_buffer(a_id).data();
                       for (std::size_t i = 0; i < n; ++i) ga[i] += G[i];
                     }
                     if (tp.node(b_id).needs_grad) {
                       T* gb = tp.grad_buffer(b_id).data();
                       if (bc == detail::Bc::Same) {
                         for (std::size_t i = 0; i < n; ++i) gb[i] += G[i];
                       } else if (bc == detail::Bc::ScalarRight) {
                         gb[0] += detail::reduce_all(G, n, static_cast<const T*>(nullptr));
                       } else {
                         detail::reduce_chan(G, ash[0], ash[1], ash[2], gb,
                                             static_cast<const T*>(nullptr));
                       }
                     }
                   });
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto bc = detail::classify_broadcast(a, b, "sub");
  detail::require(bc == detail::Bc::Same || bc == detail::Bc::ScalarRight ||
                      bc == detail::Bc::ChanRight,
                  "sub: broadcastee must be on the right");
  const T* A = a.values().data();
  const T* Bp = b.values().data();
  std::vector<T> out(a.numel());
  if (bc == detail::Bc::Same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - Bp[i];
  } else if (bc == detail::Bc::ScalarRight) {
    const T s = Bp[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - s;
  } else {
    const int B_ = a.shape()[0], C = a.shape()[1], L = a.shape()[2];
    for (int bb = 0; bb < B_; ++bb)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(bb) * C + c) * L;
        const T s = Bp[c];
        for (int l = 0; l < L; ++l) out[base + l] = A[base + l] - s;
      }
  }
  const int a_id = a.id(), b_id = b.id();
  const Shape ash = a.shape();
  return tape.emit("sub", ash, std::move(out), {a_id, b_id},
                   [=](Tape<T>& tp, int out_id) {
                     const T* G = tp.node(out_id).grad.data();
                     const std::size_t n = tp.node(out_id).values.size();
                     if (tp.node(a_id).needs_grad) {
                       T* ga = tp.grad_buffer(a_id).data();
                       for (std::size_t i = 0; i < n; ++i) ga[i] += G[i];
                     }
                     if (tp.node(b_id).needs_grad) {
                       T* gb = tp.grad_buffer(b_id).data();
                       if (bc == detail::Bc::Same) {
                         for (std::size_t i = 0; i < n; ++i) gb[i] -= G[i];
                       } else if (bc == detail::Bc::ScalarRight) {
                         gb[0] -= detail::reduce_all(G, n, static_cast<const T*>(nullptr));
                       } else {
                         std::vector<T> tmp(static_cast<std::size_t>(ash[1]), T(0));
                         detail::reduce_chan(G, ash[0], ash[1], ash[2], tmp.data(),
                                             static_cast<const T*>(nullptr));
                         for (int c = 0; c < ash[1]; ++c) gb[c] -= tmp[c];
                       }
                     }
                   });
}

template <class T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto bc = detail::classify_broadcast(a, b, "mul");
  if (bc == detail::Bc::ChanLeft || bc == detail::Bc::ScalarLeft) return mul(b, a);

  const T* A = a.values().data();
  const T* Bp = b.values().data();
  std::vector<T> out(a.numel());
  if (bc == detail::Bc::Same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * Bp[i];
  } else if (bc == detail::Bc::ScalarRight) {
    const T s = Bp[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * s;
  } else {
    const int B_ = a.shape()[0], C = a.shape()[1], L = a.shape()[2];
    for (int bb = 0; bb < B_; ++bb)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(bb) * C + c) * L;
        const T s = Bp[c];
        for (int l = 0; l < L; ++l) out[base + l] = A[base + l] * s;
      }
  }
  const int a_id = a.id(), b_id = b.id();
  const Shape ash = a.shape();
  return tape.emit(
      "mul", ash, std::move(out), {a_id, b_id}, [=](Tape<T>& tp, int out_id) {
        const T* G = tp.node(out_id).grad.data();
        const std::size_t n = tp.node(out_id).values.size();
        const T* Av = tp.node(a_id).values.data();
        const T* Bv = tp.node(b_id).values.data();
        if (tp.node(a_id).needs_grad) {
          T* ga = tp.grad_buffer(a_id).data();
          if (bc == detail::Bc::Same) {
            for (std::size_t i = 0; i < n; ++i) ga[i] += G[i] * Bv[i];
          } else if (bc == detail::Bc::ScalarRight) {
            const T s = Bv[0];
            for (std::size_t i = 0; i < n; ++i) ga[i] += G[i] * s;
          } else {
            const int B_ = ash[0], C = ash[1], L = ash[2];
            for (int bb = 0; bb < B_; ++bb)
              for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(bb) * C + c) * L;
                const T s = Bv[c];
                for (int l = 0; l < L; ++l) ga[base + l] += G[base + l] * s;
              }
          }
        }
        if (tp.node(b_id).needs_grad) {
          T* gb = tp.grad_buffer(b_id).data();
          if (bc == detail::Bc::Same) {
            for (std::size_t i = 0; i < n; ++i) gb[i] += G[i] * Av[i];
          } else if (bc == detail::Bc::ScalarRight) {
            gb[0] += detail::reduce_all(G, n, Av);
          } else {
            detail::reduce_chan(G, ash[0], ash[1], ash[2], gb, Av);
          }
        }
      });
}

template <class T>
Tensor<T> scalar_mul(Tensor<T> x, double c) {
  Tape<T>& tape = *x.tape();
  const T* X = x.values().data();
  std::vector<T> out(x.numel());
  const T cc = static_cast<T>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * cc;
  const int x_id = x.id();
  return tape.emit("scalar_mul", x.shape(), std::move(out), {x_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     T* gx = tp.grad_buffer(x_id).data();
                     const std::size_t n = tp.node(out_id).values.size();
                     for (std::size_t i = 0; i < n; ++i) gx[i] += G[i] * cc;
                   });
}

// ---------------------------------------------------------------------------
// Unary elementwise ops.
// ---------------------------------------------------------------------------
namespace detail {

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const char* name, Tensor<T> x, Fwd fwd, Bwd bwd) {
  Tape<T>& tape = *x.tape();
  const T* X = x.values().data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(X[i]);
  const int x_id = x.id();
  return tape.emit(name, x.shape(), std::move(out), {x_id},
                   [x_id, bwd](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     const T* X = tp.node(x_id).values.data();
                     const T* Y = tp.node(out_id).values.data();
                     T* gx = tp.grad_buffer(x_id).data();
                     const std::size_t n = tp.node(out_id).values.size();
                     for (std::size_t i = 0; i < n; ++i) gx[i] += G[i] * bwd(X[i], Y[i]);
                   });
}

}  // namespace detail

template <class T>
Tensor<T> relu(Tensor<T> x) {
  return detail::unary_op(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(Tensor<T> x) {
  return detail::unary_op(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> log(Tensor<T> x) {
  return detail::unary_op(
      "log", x, [](T v) { return std::log(v); },
      [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> exp(Tensor<T> x) {
  return detail::unary_op(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> square(Tensor<T> x) {
  return detail::unary_op(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sqrt(Tensor<T> x) {
  return detail::unary_op(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}

// prelu with one learnable slope per channel: x [B,C,L], slope [C].
template <class T>
Tensor<T> prelu(Tensor<T> x, Tensor<T> slope) {
  Tape<T>& tape = detail::same_tape(x, slope);
  detail::require(x.shape().size() == 3, "prelu: input must be [B,C,L]");
  const int B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  detail::require(slope.shape() == Shape{C}, "prelu: slope must be [C]");
  const T* X = x.values().data();
  const T* A = slope.values().data();
  std::vector<T> out(x.numel());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
      const T a = A[c];
      for (int l = 0; l < L; ++l) {
        const T v = X[base + l];
        out[base + l] = v > T(0) ? v : a * v;
      }
    }
  const int x_id = x.id(), a_id = slope.id();
  return tape.emit(
      "prelu", x.shape(), std::move(out), {x_id, a_id},
      [=](Tape<T>& tp, int out_id) {
        const T* G = tp.node(out_id).grad.data();
        const T* Xv = tp.node(x_id).values.data();
        const T* Av = tp.node(a_id).values.data();
        const bool need_x = tp.node(x_id).needs_grad;
        const bool need_a = tp.node(a_id).needs_grad;
        T* gx = need_x ? tp.grad_buffer(x_id).data() : nullptr;
        T* ga = need_a ? tp.grad_buffer(a_id).data() : nullptr;
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
            const T a = Av[c];
            T sa = 0;
            for (int l = 0; l < L; ++l) {
              const T v = Xv[base + l];
              const T g = G[base + l];
              if (gx) gx[base + l] += g * (v > T(0) ? T(1) : a);
              if (ga && v <= T(0)) sa += g * v;
            }
            if (ga) ga[c] += sa;
          }
      });
}

// ---------------------------------------------------------------------------
// Reductions to a scalar [1] tensor.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> sum(Tensor<T> x) {
  Tape<T>& tape = *x.tape();
  const T* X = x.values().data();
  T s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += X[i];
  const int x_id = x.id();
  return tape.emit("sum", Shape{1}, std::vector<T>{s}, {x_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T g = tp.node(out_id).grad[0];
                     T* gx = tp.grad_buffer(x_id).data();
                     const std::size_t n = tp.node(x_id).values.size();
                     for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                   });
}

template <class T>
Tensor<T> mean(Tensor<T> x) {
  Tape<T>& tape = *x.tape();
  const T* X = x.values().data();
  const std::size_t n = x.numel();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += X[i];
  s /= static_cast<T>(n);
  const int x_id = x.id();
  return tape.emit("mean", Shape{1}, std::vector<T>{s}, {x_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T g = tp.node(out_id).grad[0] / static_cast<T>(n);
                     T* gx = tp.grad_buffer(x_id).data();
                     for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                   });
}

// ---------------------------------------------------------------------------
// channel_norm: each channel normalized by its own mean/variance over the
// time axis, then scaled/shifted. Per-channel independence is what makes
// channel removal exact. Variance stabilized by a fixed 1e-5.
// ---------------------------------------------------------------------------
inline constexpr double kChannelNormEps = 1e-5;

template <class T>
Tensor<T> channel_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias) {
  Tape<T>& tape = detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  detail::require(x.shape().size() == 3, "channel_norm: input must be [B,C,L]");
  const int B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  detail::require(C >= 1 && L >= 2, "channel_norm: needs C >= 1 and L >= 2");
  detail::require(gain.shape() == Shape{C} && bias.shape() == Shape{C},
                  "channel_norm: gain/bias must be [C]");

  const T* X = x.values().data();
  const T* Gn = gain.values().data();
  const T* Bs = bias.values().data();
  std::vector<T> out(x.numel());
  auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * C * 2);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
      T mu = 0;
      for (int l = 0; l < L; ++l) mu += X[base + l];
      mu /= static_cast<T>(L);
      T var = 0;
      for (int l = 0; l < L; ++l) {
        const T d = X[base + l] - mu;
        var += d * d;
      }
      var /= static_cast<T>(L);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(kChannelNormEps));
      (*stats)[(static_cast<std::size_t>(b) * C + c) * 2] = mu;
      (*stats)[(static_cast<std::size_t>(b) * C + c) * 2 + 1] = inv;
      const T g = Gn[c], be = Bs[c];
      for (int l = 0; l < L; ++l) out[base + l] = (X[base + l] - mu) * inv * g + be;
    }

  const int x_id = x.id(), g_id = gain.id(), b_id = bias.id();
  return tape.emit(
      "channel_norm", x.shape(), std::move(out), {x_id, g_id, b_id},
      [=](Tape<T>& tp, int out_id) {
        const T* G = tp.node(out_id).grad.data();
        const T* Xv = tp.node(x_id).values.data();
        const T* Gv = tp.node(g_id).values.data();
        const bool need_x = tp.node(x_id).needs_grad;
        const bool need_g = tp.node(g_id).needs_grad;
        const bool need_b = tp.node(b_id).needs_grad;
        T* gx = need_x ? tp.grad_buffer(x_id).data() : nullptr;
        T* gg = need_g ? tp.grad_buffer(g_id).data() : nullptr;
        T* gb = need_b ? tp.grad_buffer(b_id).data() : nullptr;
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
            const T mu = (*stats)[(static_cast<std::size_t>(b) * C + c) * 2];
            const T inv = (*stats)[(static_cast<std::size_t>(b) * C + c) * 2 + 1];
            T sg = 0, sb = 0;
            for (int l = 0; l < L; ++l) {
              const T xh = (Xv[base + l] - mu) * inv;
              sg += G[base + l] * xh;
              sb += G[base + l];
            }
            if (gg) gg[c] += sg;
            if (gb) gb[c] += sb;
            if (gx) {
              const T k = Gv[c] * inv;
              const T mg = sb / static_cast<T>(L);
              const T mgx = sg / static_cast<T>(L);
              for (int l = 0; l < L; ++l) {
                const T xh = (Xv[base + l] - mu) * inv;
                gx[base + l] += k * (G[base + l] - mg - xh * mgx);
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// binarize_ste: hard threshold forward (strictly greater; pi == eps drops),
// straight-through backward with the incoming gradient clamped to [-1, 1].
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> binarize_ste(Tensor<T> pi, double eps) {
  Tape<T>& tape = *pi.tape();
  const T* P = pi.values().data();
  std::vector<T> out(pi.numel());
  const T e = static_cast<T>(eps);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = P[i] > e ? T(1) : T(0);
  const int p_id = pi.id();
  return tape.emit("binarize_ste", pi.shape(), std::move(out), {p_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(p_id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     T* gp = tp.grad_buffer(p_id).data();
                     const std::size_t n = tp.node(out_id).values.size();
                     for (std::size_t i = 0; i < n; ++i)
                       gp[i] += std::clamp(G[i], T(-1), T(1));
                   });
}

// ---------------------------------------------------------------------------
// Structural ops: slicing, concatenation, time crop/pad. Plumbing the model
// graph and the PIT loss need; all tape-recorded.
// ---------------------------------------------------------------------------

// Extract one (batch, channel) time series as a [L] vector.
template <class T>
Tensor<T> row(Tensor<T> x, int b, int c) {
  Tape<T>& tape = *x.tape();
  detail::require(x.shape().size() == 3, "row: input must be [B,C,L]");
  const int B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  detail::require(b >= 0 && b < B && c >= 0 && c < C, "row: index out of range");
  const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
  const T* X = x.values().data();
  std::vector<T> out(X + base, X + base + L);
  const int x_id = x.id();
  return tape.emit("row", Shape{L}, std::move(out), {x_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     T* gx = tp.grad_buffer(x_id).data();
                     for (int l = 0; l < L; ++l) gx[base + l] += G[l];
                   });
}

// x[:, c0:c1, :]
template <class T>
Tensor<T> slice_channels(Tensor<T> x, int c0, int c1) {
  Tape<T>& tape = *x.tape();
  detail::require(x.shape().size() == 3, "slice_channels: input must be [B,C,L]");
  const int B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  detail::require(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad range");
  const int Cs = c1 - c0;
  const T* X = x.values().data();
  std::vector<T> out(static_cast<std::size_t>(B) * Cs * L);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < Cs; ++c) {
      const T* src = X + (static_cast<std::size_t>(b) * C + c0 + c) * L;
      std::copy(src, src + L, out.data() + (static_cast<std::size_t>(b) * Cs + c) * L);
    }
  const int x_id = x.id();
  return tape.emit("slice_channels", Shape{B, Cs, L}, std::move(out), {x_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     T* gx = tp.grad_buffer(x_id).data();
                     for (int b = 0; b < B; ++b)
                       for (int c = 0; c < Cs; ++c) {
                         const T* g = G + (static_cast<std::size_t>(b) * Cs + c) * L;
                         T* dst = gx + (static_cast<std::size_t>(b) * C + c0 + c) * L;
                         for (int l = 0; l < L; ++l) dst[l] += g[l];
                       }
                   });
}

// Concatenate along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  Tape<T>& tape = *parts[0].tape();
  const int B = parts[0].shape()[0], L = parts[0].shape()[2];
  int C = 0;
  std::vector<int> ids, chans;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    detail::require(p.shape().size() == 3 && p.shape()[0] == B && p.shape()[2] == L,
                    "concat_channels: mismatched shapes");
    C += p.shape()[1];
    ids.push_back(p.id());
    chans.push_back(p.shape()[1]);
  }
  std::vector<T> out(static_cast<std::size_t>(B) * C * L);
  for (int b = 0; b < B; ++b) {
    int c_at = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const T* src = parts[i].values().data() +
                     static_cast<std::size_t>(b) * chans[i] * L;
      std::copy(src, src + static_cast<std::size_t>(chans[i]) * L,
                out.data() + (static_cast<std::size_t>(b) * C + c_at) * L);
      c_at += chans[i];
    }
  }
  return tape.emit("concat_channels", Shape{B, C, L}, std::move(out), ids,
                   [=](Tape<T>& tp, int out_id) {
                     const T* G = tp.node(out_id).grad.data();
                     for (int b = 0; b < B; ++b) {
                       int c_at = 0;
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         if (tp.node(ids[i]).needs_grad) {
                           T* g = tp.grad_buffer(ids[i]).data() +
                                  static_cast<std::size_t>(b) * chans[i] * L;
                           const T* src = G + (static_cast<std::size_t>(b) * C + c_at) * L;
                           for (std::size_t j = 0;
                                j < static_cast<std::size_t>(chans[i]) * L; ++j)
                             g[j] += src[j];
                         }
                         c_at += chans[i];
                       }
                     }
                   });
}

// Crop or zero-pad the time axis to exactly `target` samples.
template <class T>
Tensor<T> crop_or_pad_time(Tensor<T> x, int target) {
  Tape<T>& tape = *x.tape();
  detail::require(x.shape().size() == 3, "crop_or_pad_time: input must be [B,C,L]");
  detail::require(target >= 1, "crop_or_pad_time: target must be >= 1");
  const int B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  if (L == target) return x;
  const int copy = std::min(L, target);
  const T* X = x.values().data();
  std::vector<T> out(static_cast<std::size_t>(B) * C * target, T(0));
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      std::copy(X + (static_cast<std::size_t>(b) * C + c) * L,
                X + (static_cast<std::size_t>(b) * C + c) * L + copy,
                out.data() + (static_cast<std::size_t>(b) * C + c) * target);
  const int x_id = x.id();
  return tape.emit("crop_or_pad_time", Shape{B, C, target}, std::move(out), {x_id},
                   [=](Tape<T>& tp, int out_id) {
                     if (!tp.node(x_id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     T* gx = tp.grad_buffer(x_id).data();
                     for (int b = 0; b < B; ++b)
                       for (int c = 0; c < C; ++c) {
                         const T* g = G + (static_cast<std::size_t>(b) * C + c) * target;
                         T* dst = gx + (static_cast<std::size_t>(b) * C + c) * L;
                         for (int l = 0; l < copy; ++l) dst[l] += g[l];
                       }
                   });
}

}  // namespace sepprune
