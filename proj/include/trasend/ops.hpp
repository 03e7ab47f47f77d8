#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trasend/tape.hpp"
#include "trasend/tensor.hpp"

namespace trasend {

enum class Act { relu, tanh, sigmoid };
enum class Padding { valid, same };

namespace detail {

// Decomposes a shape around one axis: flat index = (o * len + l) * inner + i.
struct AxisLines {
  int64_t outer, len, inner;
};

inline AxisLines axis_lines(const std::vector<int64_t>& shape, int axis) {
  int n = static_cast<int>(shape.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw ShapeError("axis out of range for shape " + shape_to_string(shape));
  }
  AxisLines a{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) a.outer *= shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < n; ++i) a.inner *= shape[static_cast<size_t>(i)];
  return a;
}

// C[n x q] += op(A) * op(B) where op transposes when the flag is set.
// A is (n x p) or (p x n) under ta; B is (p x q) or (q x p) under tb.
template <typename S>
void matmul_acc(S* c, const S* a, const S* b, int64_t n, int64_t p, int64_t q, bool ta, bool tb) {
  if (!ta && !tb) {
    for (int64_t i = 0; i < n; ++i) {
      S* crow = c + i * q;
      const S* arow = a + i * p;
      for (int64_t k = 0; k < p; ++k) {
        const S aik = arow[k];
        if (aik == S(0)) continue;
        const S* brow = b + k * q;
        for (int64_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int64_t i = 0; i < n; ++i) {
      const S* arow = a + i * p;
      S* crow = c + i * q;
      for (int64_t j = 0; j < q; ++j) {
        const S* brow = b + j * p;
        S acc = S(0);
        for (int64_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
        crow[j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int64_t k = 0; k < p; ++k) {
      const S* arow = a + k * n;
      const S* brow = b + k * q;
      for (int64_t i = 0; i < n; ++i) {
        const S aki = arow[i];
        if (aki == S(0)) continue;
        S* crow = c + i * q;
        for (int64_t j = 0; j < q; ++j) crow[j] += aki * brow[j];
      }
    }
  } else {
    for (int64_t i = 0; i < n; ++i) {
      S* crow = c + i * q;
      for (int64_t j = 0; j < q; ++j) {
        const S* brow = b + j * p;
        S acc = S(0);
        for (int64_t k = 0; k < p; ++k) acc += a[k * n + i] * brow[k];
        crow[j] += acc;
      }
    }
  }
}

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t s, Padding pad) {
  if (pad == Padding::valid) {
    if (k > in) {
      throw ShapeError("kernel extent " + std::to_string(k) + " exceeds input extent " +
                       std::to_string(in));
    }
    return (in - k) / s + 1;
  }
  return (in + s - 1) / s;  // ceil(in / s)
}

inline int64_t conv_pad_before(int64_t in, int64_t out, int64_t k, int64_t s, Padding pad) {
  if (pad == Padding::valid) return 0;
  int64_t total = std::max<int64_t>((out - 1) * s + k - in, 0);
  return total / 2;  // remainder goes after
}

}  // namespace detail

template <typename S>
Var constant(GradTape<S>& tape, Tensor<S> value) {
  return tape.leaf(std::move(value), false);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var add(GradTape<S>& tape, Var a, Var b) {
  const Tensor<S>& av = tape.val(a);
  const Tensor<S>& bv = tape.val(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("add: shape " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor<S> out = av;
  const S* bp = bv.data();
  S* op = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) op[i] += bp[i];
  bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng, [a, b, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename S>
Var sub(GradTape<S>& tape, Var a, Var b) {
  const Tensor<S>& av = tape.val(a);
  const Tensor<S>& bv = tape.val(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("sub: shape " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor<S> out = av;
  const S* bp = bv.data();
  S* op = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) op[i] -= bp[i];
  bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng, [a, b, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    t.accumulate(a, g);
    if (t.needs_grad(b)) {
      Tensor<S> neg = g;
      S* p = neg.data();
      for (int64_t i = 0; i < neg.numel(); ++i) p[i] = -p[i];
      t.accumulate(b, neg);
    }
  });
}

template <typename S>
Var mul(GradTape<S>& tape, Var a, Var b) {
  const Tensor<S>& av = tape.val(a);
  const Tensor<S>& bv = tape.val(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("mul: shape " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor<S> out = av;
  const S* bp = bv.data();
  S* op = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) op[i] *= bp[i];
  bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng, [a, b, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor<S> da = g;
      const S* bp2 = t.val(b).data();
      S* p = da.data();
      for (int64_t i = 0; i < da.numel(); ++i) p[i] *= bp2[i];
      t.accumulate(a, da);
    }
    if (t.needs_grad(b)) {
      Tensor<S> db = g;
      const S* ap2 = t.val(a).data();
      S* p = db.data();
      for (int64_t i = 0; i < db.numel(); ++i) p[i] *= ap2[i];
      t.accumulate(b, db);
    }
  });
}

template <typename S>
Var scale(GradTape<S>& tape, Var a, S c) {
  Tensor<S> out = tape.val(a);
  S* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) p[i] *= c;
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(a), [a, c, self](GradTape<S>& t) {
    Tensor<S> da = t.grad(self);
    S* p2 = da.data();
    for (int64_t i = 0; i < da.numel(); ++i) p2[i] *= c;
    t.accumulate(a, da);
  });
}

namespace detail {

// Walks a row-major tensor of `shape` while tracking the offset into a
// broadcast operand whose per-axis strides are `ystride` (0 on broadcast
// axes). Calls fn(flat_index, broadcast_offset) for every element.
template <typename F>
void broadcast_for_each(const std::vector<int64_t>& shape, const std::vector<int64_t>& ystride,
                        F&& fn) {
  const int nd = static_cast<int>(shape.size());
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t yoff = 0;
  const int64_t n = numel_of(shape);
  for (int64_t i = 0; i < n; ++i) {
    fn(i, yoff);
    for (int d = nd - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      yoff += ystride[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < shape[static_cast<size_t>(d)]) break;
      yoff -= ystride[static_cast<size_t>(d)] * idx[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

// x + y with y broadcast against x: equal rank, every y dimension either
// matches x or is 1. Gradient of y sums over the broadcast axes.
template <typename S>
Var badd(GradTape<S>& tape, Var x, Var y) {
  const Tensor<S>& xv = tape.val(x);
  const Tensor<S>& yv = tape.val(y);
  if (xv.ndim() != yv.ndim()) {
    throw ShapeError("badd: rank mismatch " + xv.shape_str() + " vs " + yv.shape_str());
  }
  const int nd = xv.ndim();
  std::vector<int64_t> ystride(static_cast<size_t>(nd));
  int64_t s = 1;
  for (int i = nd - 1; i >= 0; --i) {
    int64_t xd = xv.shape()[static_cast<size_t>(i)];
    int64_t yd = yv.shape()[static_cast<size_t>(i)];
    if (yd != xd && yd != 1) {
      throw ShapeError("badd: shape " + yv.shape_str() + " does not broadcast to " + xv.shape_str());
    }
    ystride[static_cast<size_t>(i)] = (yd == 1) ? 0 : s;
    s *= yd;
  }
  const std::vector<int64_t> xshape = xv.shape();

  Tensor<S> out = xv;
  {
    S* op = out.data();
    const S* yp = yv.data();
    detail::broadcast_for_each(xshape, ystride, [&](int64_t i, int64_t yoff) { op[i] += yp[yoff]; });
  }
  bool ng = tape.needs_grad(x) || tape.needs_grad(y);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng, [x, y, self, xshape, ystride](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    t.accumulate(x, g);
    if (t.needs_grad(y)) {
      Tensor<S> dy = Tensor<S>::zeros(t.val(y).shape());
      S* dp = dy.data();
      const S* gp = g.data();
      detail::broadcast_for_each(xshape, ystride,
                                 [&](int64_t i, int64_t yoff) { dp[yoff] += gp[i]; });
      t.accumulate(y, dy);
    }
  });
}

// x + c with c a fixed (non-learned) tensor broadcast like badd's y.
template <typename S>
Var add_const(GradTape<S>& tape, Var x, const Tensor<S>& c) {
  Var cv = constant(tape, c);
  return badd(tape, x, cv);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Var matmul(GradTape<S>& tape, Var a, Var b, bool ta = false, bool tb = false) {
  const Tensor<S>& av = tape.val(a);
  const Tensor<S>& bv = tape.val(b);
  if (av.ndim() != 2 || bv.ndim() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + av.shape_str() + " and " + bv.shape_str());
  }
  int64_t n = ta ? av.dim(1) : av.dim(0);
  int64_t p = ta ? av.dim(0) : av.dim(1);
  int64_t pb = tb ? bv.dim(1) : bv.dim(0);
  int64_t q = tb ? bv.dim(0) : bv.dim(1);
  if (p != pb) {
    throw ShapeError("matmul: inner dimensions disagree, " + av.shape_str() + (ta ? "^T" : "") +
                     " x " + bv.shape_str() + (tb ? "^T" : ""));
  }
  Tensor<S> out({n, q});
  detail::matmul_acc(out.data(), av.data(), bv.data(), n, p, q, ta, tb);
  bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng, [a, b, ta, tb, n, p, q, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor<S> da = Tensor<S>::zeros(t.val(a).shape());
      if (!ta) {
        detail::matmul_acc(da.data(), g.data(), t.val(b).data(), n, q, p, false, !tb);
      } else {
        detail::matmul_acc(da.data(), t.val(b).data(), g.data(), p, q, n, tb, true);
      }
      t.accumulate(a, da);
    }
    if (t.needs_grad(b)) {
      Tensor<S> db = Tensor<S>::zeros(t.val(b).shape());
      if (!tb) {
        detail::matmul_acc(db.data(), t.val(a).data(), g.data(), p, n, q, !ta, false);
      } else {
        detail::matmul_acc(db.data(), g.data(), t.val(a).data(), q, n, p, true, ta);
      }
      t.accumulate(b, db);
    }
  });
}

// Batched matmul over matching leading batch dimension: [B,n,p] x [B,p,q].
template <typename S>
Var bmm(GradTape<S>& tape, Var a, Var b, bool ta = false, bool tb = false) {
  const Tensor<S>& av = tape.val(a);
  const Tensor<S>& bv = tape.val(b);
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0)) {
    throw ShapeError("bmm: want [B,n,p] x [B,p,q], got " + av.shape_str() + " and " + bv.shape_str());
  }
  int64_t B = av.dim(0);
  int64_t n = ta ? av.dim(2) : av.dim(1);
  int64_t p = ta ? av.dim(1) : av.dim(2);
  int64_t pb = tb ? bv.dim(2) : bv.dim(1);
  int64_t q = tb ? bv.dim(1) : bv.dim(2);
  if (p != pb) {
    throw ShapeError("bmm: inner dimensions disagree, " + av.shape_str() + " x " + bv.shape_str());
  }
  Tensor<S> out({B, n, q});
  const int64_t astep = av.dim(1) * av.dim(2);
  const int64_t bstep = bv.dim(1) * bv.dim(2);
  for (int64_t i = 0; i < B; ++i) {
    detail::matmul_acc(out.data() + i * n * q, av.data() + i * astep, bv.data() + i * bstep, n, p, q,
                       ta, tb);
  }
  bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng,
                   [a, b, ta, tb, B, n, p, q, astep, bstep, self](GradTape<S>& t) {
                     const Tensor<S>& g = t.grad(self);
                     if (t.needs_grad(a)) {
                       Tensor<S> da = Tensor<S>::zeros(t.val(a).shape());
                       for (int64_t i = 0; i < B; ++i) {
                         const S* gi = g.data() + i * n * q;
                         const S* bi = t.val(b).data() + i * bstep;
                         S* di = da.data() + i * astep;
                         if (!ta) {
                           detail::matmul_acc(di, gi, bi, n, q, p, false, !tb);
                         } else {
                           detail::matmul_acc(di, bi, gi, p, q, n, tb, true);
                         }
                       }
                       t.accumulate(a, da);
                     }
                     if (t.needs_grad(b)) {
                       Tensor<S> db = Tensor<S>::zeros(t.val(b).shape());
                       for (int64_t i = 0; i < B; ++i) {
                         const S* gi = g.data() + i * n * q;
                         const S* ai = t.val(a).data() + i * astep;
                         S* di = db.data() + i * bstep;
                         if (!tb) {
                           detail::matmul_acc(di, ai, gi, p, n, q, !ta, false);
                         } else {
                           detail::matmul_acc(di, gi, ai, q, n, p, true, ta);
                         }
                       }
                       t.accumulate(b, db);
                     }
                   });
}

// out = x W + b with row-wise bias broadcast.
template <typename S>
Var dense(GradTape<S>& tape, Var x, Var w, Var b) {
  Var y = matmul(tape, x, w);
  const Tensor<S>& bv = tape.val(b);
  if (bv.ndim() != 1 || bv.dim(0) != tape.val(y).dim(1)) {
    throw ShapeError("dense: bias " + bv.shape_str() + " vs output " + tape.val(y).shape_str());
  }
  Var b2 = reshape(tape, b, {1, bv.dim(0)});
  return badd(tape, y, b2);
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Var reshape(GradTape<S>& tape, Var x, std::vector<int64_t> shape) {
  Tensor<S> out = tape.val(x).reshaped(shape);
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, self](GradTape<S>& t) {
    t.accumulate(x, t.grad(self).reshaped(t.val(x).shape()));
  });
}

template <typename S>
Var slice(GradTape<S>& tape, Var x, int axis, int64_t start, int64_t len) {
  const Tensor<S>& xv = tape.val(x);
  auto lines = detail::axis_lines(xv.shape(), axis);
  if (axis < 0) axis += xv.ndim();
  if (start < 0 || len < 1 || start + len > lines.len) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for axis of extent " + std::to_string(lines.len));
  }
  std::vector<int64_t> oshape = xv.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor<S> out(oshape);
  const S* xp = xv.data();
  S* op = out.data();
  for (int64_t o = 0; o < lines.outer; ++o) {
    const S* src = xp + (o * lines.len + start) * lines.inner;
    S* dst = op + o * len * lines.inner;
    std::copy(src, src + len * lines.inner, dst);
  }
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, lines, start, len, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S> dx = Tensor<S>::zeros(t.val(x).shape());
    const S* gp = g.data();
    S* dp = dx.data();
    for (int64_t o = 0; o < lines.outer; ++o) {
      S* dst = dp + (o * lines.len + start) * lines.inner;
      const S* src = gp + o * len * lines.inner;
      std::copy(src, src + len * lines.inner, dst);
    }
    t.accumulate(x, dx);
  });
}

template <typename S>
Var concat(GradTape<S>& tape, const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Tensor<S>& first = tape.val(parts[0]);
  int nd = first.ndim();
  if (axis < 0) axis += nd;
  std::vector<int64_t> oshape = first.shape();
  int64_t total = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor<S>& t = tape.val(p);
    if (t.ndim() != nd) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < nd; ++i) {
      if (i != axis && t.shape()[static_cast<size_t>(i)] != oshape[static_cast<size_t>(i)]) {
        throw ShapeError("concat: shape " + t.shape_str() + " vs " + first.shape_str());
      }
    }
    total += t.dim(axis);
    ng = ng || tape.needs_grad(p);
  }
  oshape[static_cast<size_t>(axis)] = total;
  Tensor<S> out(oshape);
  auto olines = detail::axis_lines(oshape, axis);
  int64_t at = 0;
  for (Var p : parts) {
    const Tensor<S>& t = tape.val(p);
    int64_t len = t.dim(axis);
    const S* src = t.data();
    for (int64_t o = 0; o < olines.outer; ++o) {
      S* dst = out.data() + (o * olines.len + at) * olines.inner;
      std::copy(src + o * len * olines.inner, src + (o + 1) * len * olines.inner, dst);
    }
    at += len;
  }
  std::vector<Var> kept = parts;
  Var self = tape.next_var();
  return tape.push(std::move(out), ng, [kept, axis, olines, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    int64_t at2 = 0;
    for (Var p : kept) {
      const Tensor<S>& v = t.val(p);
      int64_t len = v.dim(axis);
      if (t.needs_grad(p)) {
        Tensor<S> dp(v.shape());
        for (int64_t o = 0; o < olines.outer; ++o) {
          const S* src = g.data() + (o * olines.len + at2) * olines.inner;
          std::copy(src, src + len * olines.inner, dp.data() + o * len * olines.inner);
        }
        t.accumulate(p, dp);
      }
      at2 += len;
    }
  });
}

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

template <typename S>
Var activation(GradTape<S>& tape, Var x, Act kind) {
  Tensor<S> out = tape.val(x);
  S* p = out.data();
  const int64_t n = out.numel();
  switch (kind) {
    case Act::relu:
      for (int64_t i = 0; i < n; ++i) p[i] = p[i] > S(0) ? p[i] : S(0);
      break;
    case Act::tanh:
      for (int64_t i = 0; i < n; ++i) p[i] = std::tanh(p[i]);
      break;
    case Act::sigmoid:
      for (int64_t i = 0; i < n; ++i) p[i] = S(1) / (S(1) + std::exp(-p[i]));
      break;
  }
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, kind, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& y = t.val(self);
    Tensor<S> dx = g;
    S* dp = dx.data();
    const S* yp = y.data();
    const S* xp = t.val(x).data();
    const int64_t m = dx.numel();
    switch (kind) {
      case Act::relu:
        for (int64_t i = 0; i < m; ++i) dp[i] = xp[i] > S(0) ? dp[i] : S(0);
        break;
      case Act::tanh:
        for (int64_t i = 0; i < m; ++i) dp[i] *= (S(1) - yp[i] * yp[i]);
        break;
      case Act::sigmoid:
        for (int64_t i = 0; i < m; ++i) dp[i] *= yp[i] * (S(1) - yp[i]);
        break;
    }
    t.accumulate(x, dx);
  });
}

template <typename S>
Var relu(GradTape<S>& tape, Var x) {
  return activation(tape, x, Act::relu);
}

// Max-subtracted softmax along one axis.
template <typename S>
Var softmax(GradTape<S>& tape, Var x, int axis) {
  const Tensor<S>& xv = tape.val(x);
  auto lines = detail::axis_lines(xv.shape(), axis);
  Tensor<S> out = xv;
  S* p = out.data();
  for (int64_t o = 0; o < lines.outer; ++o) {
    for (int64_t in = 0; in < lines.inner; ++in) {
      S* base = p + o * lines.len * lines.inner + in;
      S mx = base[0];
      for (int64_t l = 1; l < lines.len; ++l) mx = std::max(mx, base[l * lines.inner]);
      S sum = S(0);
      for (int64_t l = 0; l < lines.len; ++l) {
        S e = std::exp(base[l * lines.inner] - mx);
        base[l * lines.inner] = e;
        sum += e;
      }
      for (int64_t l = 0; l < lines.len; ++l) base[l * lines.inner] /= sum;
    }
  }
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, lines, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& y = t.val(self);
    Tensor<S> dx(y.shape());
    const S* gp = g.data();
    const S* yp = y.data();
    S* dp = dx.data();
    for (int64_t o = 0; o < lines.outer; ++o) {
      for (int64_t in = 0; in < lines.inner; ++in) {
        int64_t b = o * lines.len * lines.inner + in;
        S dot = S(0);
        for (int64_t l = 0; l < lines.len; ++l) {
          int64_t i = b + l * lines.inner;
          dot += gp[i] * yp[i];
        }
        for (int64_t l = 0; l < lines.len; ++l) {
          int64_t i = b + l * lines.inner;
          dp[i] = yp[i] * (gp[i] - dot);
        }
      }
    }
    t.accumulate(x, dx);
  });
}

template <typename S>
Var log_softmax(GradTape<S>& tape, Var x, int axis) {
  const Tensor<S>& xv = tape.val(x);
  auto lines = detail::axis_lines(xv.shape(), axis);
  Tensor<S> out = xv;
  S* p = out.data();
  for (int64_t o = 0; o < lines.outer; ++o) {
    for (int64_t in = 0; in < lines.inner; ++in) {
      S* base = p + o * lines.len * lines.inner + in;
      S mx = base[0];
      for (int64_t l = 1; l < lines.len; ++l) mx = std::max(mx, base[l * lines.inner]);
      S sum = S(0);
      for (int64_t l = 0; l < lines.len; ++l) sum += std::exp(base[l * lines.inner] - mx);
      S lse = mx + std::log(sum);
      for (int64_t l = 0; l < lines.len; ++l) base[l * lines.inner] -= lse;
    }
  }
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, lines, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& y = t.val(self);
    Tensor<S> dx(y.shape());
    const S* gp = g.data();
    const S* yp = y.data();
    S* dp = dx.data();
    for (int64_t o = 0; o < lines.outer; ++o) {
      for (int64_t in = 0; in < lines.inner; ++in) {
        int64_t b = o * lines.len * lines.inner + in;
        S gsum = S(0);
        for (int64_t l = 0; l < lines.len; ++l) gsum += gp[b + l * lines.inner];
        for (int64_t l = 0; l < lines.len; ++l) {
          int64_t i = b + l * lines.inner;
          dp[i] = gp[i] - std::exp(yp[i]) * gsum;
        }
      }
    }
    t.accumulate(x, dx);
  });
}

template <typename S>
Var layer_norm(GradTape<S>& tape, Var x, Var gain, Var bias, int axis, S eps) {
  const Tensor<S>& xv = tape.val(x);
  auto lines = detail::axis_lines(xv.shape(), axis);
  if (lines.len < 1) throw ShapeError("layer_norm over empty axis");
  const Tensor<S>& gv = tape.val(gain);
  const Tensor<S>& bv = tape.val(bias);
  if (gv.numel() != lines.len || bv.numel() != lines.len) {
    throw ShapeError("layer_norm: gain " + gv.shape_str() + " / bias " + bv.shape_str() +
                     " vs axis extent " + std::to_string(lines.len));
  }
  Tensor<S> out(xv.shape());
  Tensor<S> xhat(xv.shape());
  Tensor<S> inv_std({lines.outer * lines.inner});
  const S* xp = xv.data();
  S* op = out.data();
  S* hp = xhat.data();
  const S* gp = gv.data();
  const S* bp = bv.data();
  int64_t line = 0;
  for (int64_t o = 0; o < lines.outer; ++o) {
    for (int64_t in = 0; in < lines.inner; ++in, ++line) {
      int64_t b = o * lines.len * lines.inner + in;
      S mean = S(0);
      for (int64_t l = 0; l < lines.len; ++l) mean += xp[b + l * lines.inner];
      mean /= S(lines.len);
      S var = S(0);
      for (int64_t l = 0; l < lines.len; ++l) {
        S d = xp[b + l * lines.inner] - mean;
        var += d * d;
      }
      var /= S(lines.len);
      S istd = S(1) / std::sqrt(var + eps);
      inv_std[line] = istd;
      for (int64_t l = 0; l < lines.len; ++l) {
        int64_t i = b + l * lines.inner;
        S h = (xp[i] - mean) * istd;
        hp[i] = h;
        op[i] = h * gp[l] + bp[l];
      }
    }
  }
  bool ng = tape.needs_grad(x) || tape.needs_grad(gain) || tape.needs_grad(bias);
  Var self = tape.next_var();
  return tape.push(
      std::move(out), ng,
      [x, gain, bias, lines, xhat = std::move(xhat), inv_std = std::move(inv_std),
       self](GradTape<S>& t) {
        const Tensor<S>& g = t.grad(self);
        const S* gp2 = g.data();
        const S* hp2 = xhat.data();
        const Tensor<S>& gv2 = t.val(gain);
        if (t.needs_grad(gain) || t.needs_grad(bias)) {
          Tensor<S> dgain = Tensor<S>::zeros(gv2.shape());
          Tensor<S> dbias = Tensor<S>::zeros(t.val(bias).shape());
          for (int64_t o = 0; o < lines.outer; ++o) {
            for (int64_t in = 0; in < lines.inner; ++in) {
              int64_t b = o * lines.len * lines.inner + in;
              for (int64_t l = 0; l < lines.len; ++l) {
                int64_t i = b + l * lines.inner;
                dgain[l] += gp2[i] * hp2[i];
                dbias[l] += gp2[i];
              }
            }
          }
          t.accumulate(gain, dgain);
          t.accumulate(bias, dbias);
        }
        if (t.needs_grad(x)) {
          Tensor<S> dx(t.val(x).shape());
          S* dp = dx.data();
          const S* gw = gv2.data();
          int64_t line2 = 0;
          for (int64_t o = 0; o < lines.outer; ++o) {
            for (int64_t in = 0; in < lines.inner; ++in, ++line2) {
              int64_t b = o * lines.len * lines.inner + in;
              S mean_dh = S(0), mean_dh_h = S(0);
              for (int64_t l = 0; l < lines.len; ++l) {
                int64_t i = b + l * lines.inner;
                S dh = gp2[i] * gw[l];
                mean_dh += dh;
                mean_dh_h += dh * hp2[i];
              }
              mean_dh /= S(lines.len);
              mean_dh_h /= S(lines.len);
              S istd = inv_std[line2];
              for (int64_t l = 0; l < lines.len; ++l) {
                int64_t i = b + l * lines.inner;
                S dh = gp2[i] * gw[l];
                dp[i] = istd * (dh - mean_dh - hp2[i] * mean_dh_h);
              }
            }
          }
          t.accumulate(x, dx);
        }
      });
}

/// Mutable running statistics for one batch-norm layer. Stored outside the
/// tape; updated in train mode, read in eval mode.
template <typename S>
struct BatchNormStats {
  Tensor<S>* mean = nullptr;
  Tensor<S>* var = nullptr;
};

// Normalizes over all leading axes per trailing-axis channel. Train mode uses
// batch statistics and folds them into the running stats; eval mode applies
// the running stats as constants.
template <typename S>
Var batch_norm(GradTape<S>& tape, Var x, Var scale_v, Var shift_v, BatchNormStats<S> stats,
               RunMode mode, S momentum, S eps) {
  const Tensor<S>& xv = tape.val(x);
  const int64_t C = xv.dim(-1);
  const int64_t N = xv.numel() / C;
  const Tensor<S>& sv = tape.val(scale_v);
  const Tensor<S>& hv = tape.val(shift_v);
  if (sv.numel() != C || hv.numel() != C) {
    throw ShapeError("batch_norm: scale " + sv.shape_str() + " / shift " + hv.shape_str() +
                     " vs channels " + std::to_string(C));
  }
  if (stats.mean == nullptr || stats.var == nullptr) {
    throw StateError("batch_norm: running statistics not provided");
  }
  if (mode == RunMode::eval && (stats.mean->numel() != C || stats.var->numel() != C)) {
    throw StateError("batch_norm: running statistics empty in eval mode");
  }

  Tensor<S> use_mean({C}), use_var({C});
  if (mode == RunMode::train) {
    if (N < 1) throw ShapeError("batch_norm: empty batch");
    const S* xp = xv.data();
    for (int64_t r = 0; r < N; ++r) {
      for (int64_t c = 0; c < C; ++c) use_mean[c] += xp[r * C + c];
    }
    for (int64_t c = 0; c < C; ++c) use_mean[c] /= S(N);
    for (int64_t r = 0; r < N; ++r) {
      for (int64_t c = 0; c < C; ++c) {
        S d = xp[r * C + c] - use_mean[c];
        use_var[c] += d * d;
      }
    }
    for (int64_t c = 0; c < C; ++c) use_var[c] /= S(N);
    if (stats.mean->numel() != C) {
      *stats.mean = Tensor<S>::zeros({C});
      *stats.var = Tensor<S>::ones({C});
    }
    for (int64_t c = 0; c < C; ++c) {
      (*stats.mean)[c] = (S(1) - momentum) * (*stats.mean)[c] + momentum * use_mean[c];
      (*stats.var)[c] = (S(1) - momentum) * (*stats.var)[c] + momentum * use_var[c];
    }
  } else {
    use_mean = *stats.mean;
    use_var = *stats.var;
  }

  Tensor<S> inv_std({C});
  for (int64_t c = 0; c < C; ++c) inv_std[c] = S(1) / std::sqrt(use_var[c] + eps);
  Tensor<S> out(xv.shape());
  Tensor<S> xhat(xv.shape());
  {
    const S* xp = xv.data();
    S* op = out.data();
    S* hp = xhat.data();
    const S* sp = sv.data();
    const S* shp = hv.data();
    for (int64_t r = 0; r < N; ++r) {
      for (int64_t c = 0; c < C; ++c) {
        int64_t i = r * C + c;
        S h = (xp[i] - use_mean[c]) * inv_std[c];
        hp[i] = h;
        op[i] = h * sp[c] + shp[c];
      }
    }
  }
  bool ng = tape.needs_grad(x) || tape.needs_grad(scale_v) || tape.needs_grad(shift_v);
  Var self = tape.next_var();
  bool train_stats = (mode == RunMode::train);
  return tape.push(
      std::move(out), ng,
      [x, scale_v, shift_v, C, N, xhat = std::move(xhat), inv_std = std::move(inv_std), train_stats,
       self](GradTape<S>& t) {
        const Tensor<S>& g = t.grad(self);
        const S* gp = g.data();
        const S* hp = xhat.data();
        if (t.needs_grad(scale_v) || t.needs_grad(shift_v)) {
          Tensor<S> dscale = Tensor<S>::zeros({C});
          Tensor<S> dshift = Tensor<S>::zeros({C});
          for (int64_t r = 0; r < N; ++r) {
            for (int64_t c = 0; c < C; ++c) {
              int64_t i = r * C + c;
              dscale[c] += gp[i] * hp[i];
              dshift[c] += gp[i];
            }
          }
          t.accumulate(scale_v, dscale);
          t.accumulate(shift_v, dshift);
        }
        if (t.needs_grad(x)) {
          const S* sp = t.val(scale_v).data();
          Tensor<S> dx(t.val(x).shape());
          S* dp = dx.data();
          if (train_stats) {
            std::vector<S> mean_dh(static_cast<size_t>(C), S(0));
            std::vector<S> mean_dh_h(static_cast<size_t>(C), S(0));
            for (int64_t r = 0; r < N; ++r) {
              for (int64_t c = 0; c < C; ++c) {
                int64_t i = r * C + c;
                S dh = gp[i] * sp[c];
                mean_dh[static_cast<size_t>(c)] += dh;
                mean_dh_h[static_cast<size_t>(c)] += dh * hp[i];
              }
            }
            for (int64_t c = 0; c < C; ++c) {
              mean_dh[static_cast<size_t>(c)] /= S(N);
              mean_dh_h[static_cast<size_t>(c)] /= S(N);
            }
            for (int64_t r = 0; r < N; ++r) {
              for (int64_t c = 0; c < C; ++c) {
                int64_t i = r * C + c;
                S dh = gp[i] * sp[c];
                dp[i] = inv_std[c] *
                        (dh - mean_dh[static_cast<size_t>(c)] - hp[i] * mean_dh_h[static_cast<size_t>(c)]);
              }
            }
          } else {
            for (int64_t r = 0; r < N; ++r) {
              for (int64_t c = 0; c < C; ++c) {
                int64_t i = r * C + c;
                dp[i] = gp[i] * sp[c] * inv_std[c];
              }
            }
          }
          t.accumulate(x, dx);
        }
      });
}

// Inverted dropout: train mode zeroes entries with probability p and scales
// survivors by 1/(1-p); eval mode is the identity.
template <typename S>
Var dropout(GradTape<S>& tape, Var x, S p, RunMode mode, std::mt19937_64& rng) {
  if (p < S(0) || p >= S(1)) {
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (mode == RunMode::eval || p == S(0)) return x;
  const Tensor<S>& xv = tape.val(x);
  Tensor<S> mask(xv.shape());
  std::bernoulli_distribution drop(static_cast<double>(p));
  const S keep_scale = S(1) / (S(1) - p);
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = drop(rng) ? S(0) : keep_scale;
  Tensor<S> out = xv;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, mask = std::move(mask), self](GradTape<S>& t) {
    Tensor<S> dx = t.grad(self);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= mask[i];
    t.accumulate(x, dx);
  });
}

// ---------------------------------------------------------------------------
// Convolution (NHWC, filters [kh, kw, cin, cout])
// ---------------------------------------------------------------------------

template <typename S>
Var conv2d(GradTape<S>& tape, Var x, Var w, int64_t sh, int64_t sw, Padding pad) {
  const Tensor<S>& xv = tape.val(x);
  const Tensor<S>& wv = tape.val(w);
  if (xv.ndim() != 4 || wv.ndim() != 4) {
    throw ShapeError("conv2d: want x [N,H,W,C] and filters [kh,kw,cin,cout], got " + xv.shape_str() +
                     " and " + wv.shape_str());
  }
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int64_t KH = wv.dim(0), KW = wv.dim(1), CI = wv.dim(2), CO = wv.dim(3);
  if (CI != C) {
    throw ShapeError("conv2d: input channels " + std::to_string(C) + " vs filter channels " +
                     std::to_string(CI));
  }
  if (sh < 1 || sw < 1) throw ConfigError("conv2d: strides must be positive");
  const int64_t OH = detail::conv_out_extent(H, KH, sh, pad);
  const int64_t OW = detail::conv_out_extent(W, KW, sw, pad);
  const int64_t ph = detail::conv_pad_before(H, OH, KH, sh, pad);
  const int64_t pw = detail::conv_pad_before(W, OW, KW, sw, pad);

  Tensor<S> out({N, OH, OW, CO});
  const S* xp = xv.data();
  const S* wp = wv.data();
  S* op = out.data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t oh = 0; oh < OH; ++oh) {
      for (int64_t ow = 0; ow < OW; ++ow) {
        S* orow = op + ((n * OH + oh) * OW + ow) * CO;
        for (int64_t kh = 0; kh < KH; ++kh) {
          int64_t ih = oh * sh - ph + kh;
          if (ih < 0 || ih >= H) continue;
          for (int64_t kw = 0; kw < KW; ++kw) {
            int64_t iw = ow * sw - pw + kw;
            if (iw < 0 || iw >= W) continue;
            const S* xrow = xp + ((n * H + ih) * W + iw) * C;
            const S* wrow = wp + (kh * KW + kw) * C * CO;
            for (int64_t ci = 0; ci < C; ++ci) {
              const S xin = xrow[ci];
              if (xin == S(0)) continue;
              const S* wc = wrow + ci * CO;
              for (int64_t co = 0; co < CO; ++co) orow[co] += xin * wc[co];
            }
          }
        }
      }
    }
  }
  bool ng = tape.needs_grad(x) || tape.needs_grad(w);
  Var self = tape.next_var();
  return tape.push(std::move(out), ng,
                   [x, w, N, H, W, C, KH, KW, CO, OH, OW, sh, sw, ph, pw, self](GradTape<S>& t) {
                     const Tensor<S>& g = t.grad(self);
                     const S* gp = g.data();
                     const S* xp2 = t.val(x).data();
                     const S* wp2 = t.val(w).data();
                     bool need_x = t.needs_grad(x);
                     bool need_w = t.needs_grad(w);
                     Tensor<S> dx = need_x ? Tensor<S>::zeros(t.val(x).shape()) : Tensor<S>();
                     Tensor<S> dw = need_w ? Tensor<S>::zeros(t.val(w).shape()) : Tensor<S>();
                     for (int64_t n = 0; n < N; ++n) {
                       for (int64_t oh = 0; oh < OH; ++oh) {
                         for (int64_t ow = 0; ow < OW; ++ow) {
                           const S* grow = gp + ((n * OH + oh) * OW + ow) * CO;
                           for (int64_t kh = 0; kh < KH; ++kh) {
                             int64_t ih = oh * sh - ph + kh;
                             if (ih < 0 || ih >= H) continue;
                             for (int64_t kw = 0; kw < KW; ++kw) {
                               int64_t iw = ow * sw - pw + kw;
                               if (iw < 0 || iw >= W) continue;
                               int64_t xoff = ((n * H + ih) * W + iw) * C;
                               int64_t woff = (kh * KW + kw) * C * CO;
                               for (int64_t ci = 0; ci < C; ++ci) {
                                 const S* wc = wp2 + woff + ci * CO;
                                 if (need_x) {
                                   S acc = S(0);
                                   for (int64_t co = 0; co < CO; ++co) acc += grow[co] * wc[co];
                                   dx[xoff + ci] += acc;
                                 }
                                 if (need_w) {
                                   const S xin = xp2[xoff + ci];
                                   if (xin != S(0)) {
                                     S* dwc = dw.data() + woff + ci * CO;
                                     for (int64_t co = 0; co < CO; ++co) dwc[co] += xin * grow[co];
                                   }
                                 }
                               }
                             }
                           }
                         }
                       }
                     }
                     if (need_x) t.accumulate(x, dx);
                     if (need_w) t.accumulate(w, dw);
                   });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename S>
Var sum_all(GradTape<S>& tape, Var x) {
  const Tensor<S>& xv = tape.val(x);
  S total = S(0);
  for (int64_t i = 0; i < xv.numel(); ++i) total += xv[i];
  Var self = tape.next_var();
  return tape.push(Tensor<S>::scalar(total), tape.needs_grad(x), [x, self](GradTape<S>& t) {
    S g = t.grad(self)[0];
    t.accumulate(x, Tensor<S>::full(t.val(x).shape(), g));
  });
}

template <typename S>
Var mean_axis(GradTape<S>& tape, Var x, int axis) {
  const Tensor<S>& xv = tape.val(x);
  auto lines = detail::axis_lines(xv.shape(), axis);
  if (axis < 0) axis += xv.ndim();
  std::vector<int64_t> oshape;
  for (int i = 0; i < xv.ndim(); ++i) {
    if (i != axis) oshape.push_back(xv.shape()[static_cast<size_t>(i)]);
  }
  if (oshape.empty()) oshape.push_back(1);
  Tensor<S> out = Tensor<S>::zeros(oshape);
  const S* xp = xv.data();
  S* op = out.data();
  for (int64_t o = 0; o < lines.outer; ++o) {
    for (int64_t l = 0; l < lines.len; ++l) {
      const S* src = xp + (o * lines.len + l) * lines.inner;
      S* dst = op + o * lines.inner;
      for (int64_t in = 0; in < lines.inner; ++in) dst[in] += src[in];
    }
  }
  const S inv = S(1) / S(lines.len);
  for (int64_t i = 0; i < out.numel(); ++i) op[i] *= inv;
  Var self = tape.next_var();
  return tape.push(std::move(out), tape.needs_grad(x), [x, lines, inv, self](GradTape<S>& t) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S> dx(t.val(x).shape());
    const S* gp = g.data();
    S* dp = dx.data();
    for (int64_t o = 0; o < lines.outer; ++o) {
      for (int64_t l = 0; l < lines.len; ++l) {
        S* dst = dp + (o * lines.len + l) * lines.inner;
        const S* src = gp + o * lines.inner;
        for (int64_t in = 0; in < lines.inner; ++in) dst[in] = src[in] * inv;
      }
    }
    t.accumulate(x, dx);
  });
}

// Summed cross-entropy of logits against one-hot targets, fused with
// log-softmax for stability. Targets are a fixed tensor, not a tape node.
template <typename S>
Var softmax_cross_entropy(GradTape<S>& tape, Var logits, const Tensor<S>& onehot) {
  const Tensor<S>& lv = tape.val(logits);
  if (lv.ndim() != 2 || !lv.same_shape(onehot)) {
    throw ShapeError("softmax_cross_entropy: logits " + lv.shape_str() + " vs targets " +
                     onehot.shape_str());
  }
  const int64_t N = lv.dim(0), C = lv.dim(1);
  Tensor<S> probs(lv.shape());
  S loss = S(0);
  for (int64_t i = 0; i < N; ++i) {
    const S* row = lv.data() + i * C;
    S mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    S sum = S(0);
    for (int64_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
    S lse = mx + std::log(sum);
    for (int64_t c = 0; c < C; ++c) {
      S logp = row[c] - lse;
      probs[i * C + c] = std::exp(logp);
      loss -= onehot[i * C + c] * logp;
    }
  }
  Var self = tape.next_var();
  return tape.push(Tensor<S>::scalar(loss), tape.needs_grad(logits),
                   [logits, probs = std::move(probs), onehot, self](GradTape<S>& t) {
                     S g = t.grad(self)[0];
                     Tensor<S> dl(probs.shape());
                     for (int64_t i = 0; i < dl.numel(); ++i) dl[i] = g * (probs[i] - onehot[i]);
                     t.accumulate(logits, dl);
                   });
}

// ---------------------------------------------------------------------------
// Attention and recurrent building blocks
// ---------------------------------------------------------------------------

// attention(Q, K, V) = softmax(Q K^T / sqrt(d_k)) V for single matrices.
template <typename S>
Var scaled_dot_attention(GradTape<S>& tape, Var q, Var k, Var v) {
  const Tensor<S>& qv = tape.val(q);
  const Tensor<S>& kv = tape.val(k);
  const Tensor<S>& vv = tape.val(v);
  if (qv.ndim() != 2 || kv.ndim() != 2 || vv.ndim() != 2 || qv.dim(1) != kv.dim(1) ||
      kv.dim(0) != vv.dim(0)) {
    throw ShapeError("scaled_dot_attention: Q " + qv.shape_str() + ", K " + kv.shape_str() + ", V " +
                     vv.shape_str());
  }
  Var scores = matmul(tape, q, k, false, true);
  Var scaled = scale(tape, scores, S(1) / std::sqrt(S(qv.dim(1))));
  Var weights = softmax(tape, scaled, -1);
  return matmul(tape, weights, v);
}

template <typename S>
struct GruCellVars {
  Var wz, uz, bz;
  Var wr, ur, br;
  Var wh, uh, bh;
};

// z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
// htilde = tanh(x Wh + (r*h) Uh + bh), h' = (1-z)*h + z*htilde.
template <typename S>
Var gru_cell(GradTape<S>& tape, Var x, Var h, const GruCellVars<S>& w) {
  Var z = activation(tape, badd(tape, add(tape, matmul(tape, x, w.wz), matmul(tape, h, w.uz)),
                                reshape(tape, w.bz, {1, tape.val(w.bz).numel()})),
                     Act::sigmoid);
  Var r = activation(tape, badd(tape, add(tape, matmul(tape, x, w.wr), matmul(tape, h, w.ur)),
                                reshape(tape, w.br, {1, tape.val(w.br).numel()})),
                     Act::sigmoid);
  Var rh = mul(tape, r, h);
  Var htilde = activation(tape, badd(tape, add(tape, matmul(tape, x, w.wh), matmul(tape, rh, w.uh)),
                                     reshape(tape, w.bh, {1, tape.val(w.bh).numel()})),
                          Act::tanh);
  // h + z*(htilde - h)
  return add(tape, h, mul(tape, z, sub(tape, htilde, h)));
}

}  // namespace trasend
