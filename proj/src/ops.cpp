#include "vtu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace vtu {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
bool tracking(std::initializer_list<const Tensor<S>*> inputs) {
  if (active_tape<S>() == nullptr) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
void record(Tensor<S>& out, const char* op, std::function<void()> backward) {
  out.set_requires_grad(true);
  active_tape<S>()->record(op, std::move(backward));
}

template <typename S>
ArrMap<S> grad_of(const std::shared_ptr<TensorNode<S>>& node) {
  auto& g = node->grad_buffer();
  return {g.data(), static_cast<Index>(g.size())};
}

Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return axis;
}

// outer x extent x inner decomposition of a shape around `axis`.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

// Strides of `in` expressed over the broadcast output shape (0 on broadcast axes).
std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<Index> strides(r, 0);
  Index stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

// Calls f(out_offset, a_offset, b_offset) for every output element.
template <typename F>
void broadcast_loop(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, F&& f) {
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t r = out.size();
  const Index last = out[r - 1];
  const Index la = sa[r - 1], lb = sb[r - 1];
  std::vector<Index> idx(r, 0);
  Index ia = 0, ib = 0, io = 0;
  const Index rows = shape_size(out) / last;
  for (Index row = 0; row < rows; ++row) {
    for (Index j = 0; j < last; ++j) f(io + j, ia + j * la, ib + j * lb);
    io += last;
    for (Index d = static_cast<Index>(r) - 2; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename S, BinOp Op>
S apply(S x, S y) {
  if constexpr (Op == BinOp::Add) return x + y;
  if constexpr (Op == BinOp::Sub) return x - y;
  if constexpr (Op == BinOp::Mul) return x * y;
  if constexpr (Op == BinOp::Div) return x / y;
}

template <typename S, BinOp Op>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, const char* name) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const bool same = a.shape() == b.shape();
  std::vector<Index> sa, sb;
  if (!same) {
    sa = broadcast_strides(a.shape(), out_shape);
    sb = broadcast_strides(b.shape(), out_shape);
  }
  Tensor<S> out(out_shape);
  S* o = out.mutable_ptr();
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  if (same) {
    for (Index i = 0; i < out.size(); ++i) o[i] = apply<S, Op>(pa[i], pb[i]);
  } else {
    broadcast_loop(out_shape, sa, sb, [&](Index io, Index ia, Index ib) { o[io] = apply<S, Op>(pa[ia], pb[ib]); });
  }
  if (tracking({&a, &b})) {
    record(out, name, [an = a.node(), bn = b.node(), on = out.node(), same, sa, sb] {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      const S* va = an->data.data();
      const S* vb = bn->data.data();
      S* ga = an->requires_grad ? an->grad_buffer().data() : nullptr;
      S* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
      auto step = [&](Index io, Index ia, Index ib) {
        const S gi = g[io];
        if constexpr (Op == BinOp::Add) {
          if (ga) ga[ia] += gi;
          if (gb) gb[ib] += gi;
        } else if constexpr (Op == BinOp::Sub) {
          if (ga) ga[ia] += gi;
          if (gb) gb[ib] -= gi;
        } else if constexpr (Op == BinOp::Mul) {
          if (ga) ga[ia] += gi * vb[ib];
          if (gb) gb[ib] += gi * va[ia];
        } else {
          if (ga) ga[ia] += gi / vb[ib];
          if (gb) gb[ib] -= gi * va[ia] / (vb[ib] * vb[ib]);
        }
      };
      if (same) {
        const Index n = static_cast<Index>(on->data.size());
        for (Index i = 0; i < n; ++i) step(i, i, i);
      } else {
        broadcast_loop(on->shape, sa, sb, step);
      }
    });
  }
  return out;
}

// Unary elementwise op; `deriv(x, y)` is dy/dx.
template <typename S, typename F, typename D>
Tensor<S> unary(const Tensor<S>& x, const char* name, F forward, D deriv) {
  Tensor<S> out(x.shape());
  const S* px = x.ptr();
  S* po = out.mutable_ptr();
  for (Index i = 0; i < x.size(); ++i) po[i] = forward(px[i]);
  if (tracking({&x})) {
    record(out, name, [xn = x.node(), on = out.node(), deriv] {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = xn->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xn->data[i], on->data[i]);
    });
  }
  return out;
}

// Output columns [lo, hi) whose input column ox*stride - pad + kx lies in [0, w).
inline std::pair<Index, Index> valid_span(Index k_off, Index stride, Index pad, Index w, Index wo) {
  const Index shift = k_off - pad;
  Index lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  Index hi = w - 1 - shift < 0 ? 0 : (w - 1 - shift) / stride + 1;
  lo = std::min(lo, wo);
  hi = std::clamp(hi, lo, wo);
  return {lo, hi};
}

// Column matrix for cross-correlation: (C*k*k) x (Ho*Wo).
template <typename S>
void im2col(const S* x, Index channels, Index h, Index w, Index k, Index stride, Index pad, Index ho, Index wo,
            S* cols) {
  for (Index c = 0; c < channels; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        S* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        const auto [lo, hi] = valid_span(kx, stride, pad, w, wo);
        const Index shift = kx - pad;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          S* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, S(0));
            continue;
          }
          const S* src = x + (c * h + iy) * w + shift;
          std::fill(dst, dst + lo, S(0));
          if (stride == 1)
            std::copy(src + lo, src + hi, dst + lo);
          else
            for (Index ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          std::fill(dst + hi, dst + wo, S(0));
        }
      }
}

template <typename S>
void col2im(const S* cols, Index channels, Index h, Index w, Index k, Index stride, Index pad, Index ho, Index wo,
            S* x) {
  for (Index c = 0; c < channels; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const S* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        const auto [lo, hi] = valid_span(kx, stride, pad, w, wo);
        const Index shift = kx - pad;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const S* __restrict src = row + oy * wo;
          S* __restrict dst = x + (c * h + iy) * w + shift;
          if (stride == 1)
            for (Index ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          else
            for (Index ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
}

struct ConvGeometry {
  Index in_c, h, w, out_c, k, stride, pad, ho, wo;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Shared normalization over contiguous chunks. Element j uses gain/bias slot
// (j / run) % period; every chunk holds a whole number of runs.
template <typename S>
Tensor<S> normalize_chunks(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, Index chunks,
                           Index chunk_len, S eps, Index run, Index period, const char* name) {
  Tensor<S> out(x.shape());
  std::vector<S> xhat(static_cast<std::size_t>(x.size()));
  std::vector<S> rstd(static_cast<std::size_t>(chunks));
  const S* px = x.ptr();
  const S* pg = gain.ptr();
  const S* pb = bias.ptr();
  S* po = out.mutable_ptr();
  const Index runs = chunk_len / run;
  for (Index c = 0; c < chunks; ++c) {
    const Index base = c * chunk_len;
    S mu = 0;
    for (Index i = 0; i < chunk_len; ++i) mu += px[base + i];
    mu /= S(chunk_len);
    S var = 0;
    for (Index i = 0; i < chunk_len; ++i) {
      const S d = px[base + i] - mu;
      var += d * d;
    }
    var /= S(chunk_len);
    const S r = S(1) / std::sqrt(var + eps);
    rstd[c] = r;
    Index ch = (base / run) % period;
    for (Index q = 0; q < runs; ++q) {
      const S gch = pg[ch], bch = pb[ch];
      for (Index j = base + q * run, e = j + run; j < e; ++j) {
        xhat[j] = (px[j] - mu) * r;
        po[j] = gch * xhat[j] + bch;
      }
      if (++ch == period) ch = 0;
    }
  }
  if (tracking({&x, &gain, &bias})) {
    record(out, name,
           [xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node(), xhat = std::move(xhat),
            rstd = std::move(rstd), chunks, chunk_len, run, period] {
             if (on->grad.empty()) return;
             const auto& g = on->grad;
             const Index total_runs = static_cast<Index>(g.size()) / run;
             if (gn->requires_grad || bn->requires_grad) {
               auto& gg = gn->grad_buffer();
               auto& gb = bn->grad_buffer();
               Index ch = 0;
               for (Index q = 0; q < total_runs; ++q) {
                 S sg = 0, sb = 0;
                 for (Index j = q * run, e = j + run; j < e; ++j) {
                   sg += g[j] * xhat[j];
                   sb += g[j];
                 }
                 gg[ch] += sg;
                 gb[ch] += sb;
                 if (++ch == period) ch = 0;
               }
             }
             if (!xn->requires_grad) return;
             auto& gx = xn->grad_buffer();
             const S n = S(chunk_len);
             const Index runs = chunk_len / run;
             std::vector<S> dy(static_cast<std::size_t>(chunk_len));
             for (Index c = 0; c < chunks; ++c) {
               const Index base = c * chunk_len;
               S sum_dy = 0, sum_dy_xhat = 0;
               Index ch = (base / run) % period;
               for (Index q = 0; q < runs; ++q) {
                 const S gch = gn->data[ch];
                 for (Index i = q * run, e = i + run; i < e; ++i) {
                   const S d = g[base + i] * gch;
                   dy[i] = d;
                   sum_dy += d;
                   sum_dy_xhat += d * xhat[base + i];
                 }
                 if (++ch == period) ch = 0;
               }
               const S scale = rstd[c] / n;
               for (Index i = 0; i < chunk_len; ++i)
                 gx[base + i] += scale * (n * dy[i] - sum_dy - xhat[base + i] * sum_dy_xhat);
             }
           });
  }
  return out;
}

// Per-axis interpolation taps for half-pixel-center bilinear resizing.
struct Taps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(Index in, Index factor) {
  const Index out = in * factor;
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const Index l = static_cast<Index>(std::floor(src));
    t.lo[o] = l;
    t.hi[o] = std::min(l + 1, in - 1);
    t.frac[o] = src - static_cast<double>(l);
  }
  return t;
}

void require_rank(const Shape& shape, Index rank, const char* op) {
  if (static_cast<Index>(shape.size()) != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(shape));
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const Index ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const Index eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcast-compatible");
    out[r - 1 - k] = std::max(ea, eb);
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S, BinOp::Add>(a, b, "add");
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S, BinOp::Sub>(a, b, "sub");
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S, BinOp::Mul>(a, b, "mul");
}
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S, BinOp::Div>(a, b, "div");
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  return unary(a, "scale", [factor](S x) { return x * factor; }, [factor](S, S) { return factor; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S value) {
  return unary(a, "add_scalar", [value](S x) { return x + value; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor<S> out({m, n});
  MatMap<S>(out.mutable_ptr(), m, n).noalias() = ConstMatMap<S>(a.ptr(), m, k) * ConstMatMap<S>(b.ptr(), k, n);
  if (tracking({&a, &b})) {
    record(out, "matmul", [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      if (on->grad.empty()) return;
      ConstMatMap<S> g(on->grad.data(), m, n);
      if (an->requires_grad)
        MatMap<S>(an->grad_buffer().data(), m, k).noalias() += g * ConstMatMap<S>(bn->data.data(), k, n).transpose();
      if (bn->requires_grad)
        MatMap<S>(bn->grad_buffer().data(), k, n).noalias() += ConstMatMap<S>(an->data.data(), m, k).transpose() * g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, Index stride, Index padding) {
  require_rank(input.shape(), 3, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  if (kernel.dim(1) != input.dim(0))
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                     shape_str(input.shape()));
  if (kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd extent, got " + shape_str(kernel.shape()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), kernel.dim(2), stride, padding, 0, 0};
  const Index span_h = geo.h + 2 * padding - geo.k;
  const Index span_w = geo.w + 2 * padding - geo.k;
  if (span_h < 0 || span_w < 0)
    throw ShapeError("conv2d: output extent < 1 for input " + shape_str(input.shape()) + " and kernel " +
                     shape_str(kernel.shape()));
  geo.ho = span_h / stride + 1;
  geo.wo = span_w / stride + 1;
  const Index rows = geo.in_c * geo.k * geo.k;
  const Index cols_n = geo.ho * geo.wo;

  // Every entry is written by im2col, so the buffer is left uninitialized.
  std::shared_ptr<RowMat<S>> cols;
  const S* cols_ptr = input.ptr();
  if (!geo.pointwise()) {
    cols = std::make_shared<RowMat<S>>(rows, cols_n);
    im2col(input.ptr(), geo.in_c, geo.h, geo.w, geo.k, stride, padding, geo.ho, geo.wo, cols->data());
    cols_ptr = cols->data();
  }
  Tensor<S> out({geo.out_c, geo.ho, geo.wo});
  MatMap<S>(out.mutable_ptr(), geo.out_c, cols_n).noalias() =
      ConstMatMap<S>(kernel.ptr(), geo.out_c, rows) * ConstMatMap<S>(cols_ptr, rows, cols_n);

  if (tracking({&input, &kernel})) {
    record(out, "conv2d", [in = input.node(), kn = kernel.node(), on = out.node(), cols, geo] {
      if (on->grad.empty()) return;
      const Index rows = geo.in_c * geo.k * geo.k;
      const Index cols_n = geo.ho * geo.wo;
      ConstMatMap<S> g(on->grad.data(), geo.out_c, cols_n);
      const S* cols_ptr = geo.pointwise() ? in->data.data() : cols->data();
      if (kn->requires_grad)
        MatMap<S>(kn->grad_buffer().data(), geo.out_c, rows).noalias() +=
            g * ConstMatMap<S>(cols_ptr, rows, cols_n).transpose();
      if (in->requires_grad) {
        if (geo.pointwise()) {
          MatMap<S>(in->grad_buffer().data(), rows, cols_n).noalias() +=
              ConstMatMap<S>(kn->data.data(), geo.out_c, rows).transpose() * g;
        } else {
          RowMat<S> gcols = ConstMatMap<S>(kn->data.data(), geo.out_c, rows).transpose() * g;
          col2im(gcols.data(), geo.in_c, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.ho, geo.wo,
                 in->grad_buffer().data());
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& input, const Tensor<S>& kernel, Index stride, Index padding) {
  require_rank(input.shape(), 3, "conv_transpose2d input");
  require_rank(kernel.shape(), 4, "conv_transpose2d kernel");
  if (kernel.dim(0) != input.dim(0))
    throw ShapeError("conv_transpose2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                     shape_str(input.shape()));
  if (kernel.dim(2) != kernel.dim(3)) throw ShapeError("conv_transpose2d: kernel must be square");
  if (stride < 1 || padding < 0) throw ShapeError("conv_transpose2d: invalid stride/padding");
  // Geometry of the forward conv this op is the adjoint of: out_c here is the
  // conv's input channel count.
  ConvGeometry geo{kernel.dim(1), 0, 0, input.dim(0), kernel.dim(2), stride, padding, input.dim(1), input.dim(2)};
  geo.h = (geo.ho - 1) * stride + geo.k - 2 * padding;
  geo.w = (geo.wo - 1) * stride + geo.k - 2 * padding;
  if (geo.h < 1 || geo.w < 1) throw ShapeError("conv_transpose2d: output extent < 1");
  const Index rows = geo.in_c * geo.k * geo.k;
  const Index cols_n = geo.ho * geo.wo;

  RowMat<S> cols = ConstMatMap<S>(kernel.ptr(), geo.out_c, rows).transpose() *
                   ConstMatMap<S>(input.ptr(), geo.out_c, cols_n);
  Tensor<S> out({geo.in_c, geo.h, geo.w});
  col2im(cols.data(), geo.in_c, geo.h, geo.w, geo.k, stride, padding, geo.ho, geo.wo, out.mutable_ptr());

  if (tracking({&input, &kernel})) {
    record(out, "conv_transpose2d", [in = input.node(), kn = kernel.node(), on = out.node(), geo] {
      if (on->grad.empty()) return;
      const Index rows = geo.in_c * geo.k * geo.k;
      const Index cols_n = geo.ho * geo.wo;
      RowMat<S> gcols(rows, cols_n);
      im2col(on->grad.data(), geo.in_c, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.ho, geo.wo, gcols.data());
      if (in->requires_grad)
        MatMap<S>(in->grad_buffer().data(), geo.out_c, cols_n).noalias() +=
            ConstMatMap<S>(kn->data.data(), geo.out_c, rows) * gcols;
      if (kn->requires_grad)
        MatMap<S>(kn->grad_buffer().data(), geo.out_c, rows).noalias() +=
            ConstMatMap<S>(in->data.data(), geo.out_c, cols_n) * gcols.transpose();
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor<S> out(x.shape());
  const S* px = x.ptr();
  S* po = out.mutable_ptr();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index in = 0; in < sp.inner; ++in) {
      const Index base = o * sp.extent * sp.inner + in;
      S mx = px[base];
      for (Index e = 1; e < sp.extent; ++e) mx = std::max(mx, px[base + e * sp.inner]);
      S total = 0;
      for (Index e = 0; e < sp.extent; ++e) {
        const S v = std::exp(px[base + e * sp.inner] - mx);
        po[base + e * sp.inner] = v;
        total += v;
      }
      for (Index e = 0; e < sp.extent; ++e) po[base + e * sp.inner] /= total;
    }
  if (tracking({&x})) {
    record(out, "softmax", [xn = x.node(), on = out.node(), sp] {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = xn->grad_buffer();
      const auto& g = on->grad;
      const auto& y = on->data;
      for (Index o = 0; o < sp.outer; ++o)
        for (Index in = 0; in < sp.inner; ++in) {
          const Index base = o * sp.extent * sp.inner + in;
          S dot = 0;
          for (Index e = 0; e < sp.extent; ++e) dot += g[base + e * sp.inner] * y[base + e * sp.inner];
          for (Index e = 0; e < sp.extent; ++e) {
            const Index j = base + e * sp.inner;
            gx[j] += y[j] * (g[j] - dot);
          }
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
  const Index d = x.dim(-1);
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  return normalize_chunks(x, gain, bias, x.size() / d, d, eps, Index{1}, d, "layer_norm");
}

template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, Index groups, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
  require_rank(x.shape(), 3, "group_norm");
  const Index c = x.dim(0);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                     " groups");
  if (gain.size() != c || bias.size() != c)
    throw ShapeError("group_norm: gain/bias must have " + std::to_string(c) + " entries");
  const Index plane = x.dim(1) * x.dim(2);
  return normalize_chunks(x, gain, bias, groups, (c / groups) * plane, eps, plane, c, "group_norm");
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary(x, "relu", [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr S inv_sqrt2 = S(1) / std::numbers::sqrt2_v<S>;
  constexpr S inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<S> * inv_sqrt2;
  return unary(
      x, "gelu", [](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); },
      [](S v, S) { return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(S(-0.5) * v * v); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary(
      x, "sigmoid",
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary(x, "exp", [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return unary(x, "log", [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return unary(x, "square", [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return unary(
      x, "clamp", [lo, hi](S v) { return std::clamp(v, lo, hi); },
      [lo, hi](S v, S) { return (v > lo && v < hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, Index factor) {
  require_rank(x.shape(), 3, "upsample_bilinear");
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index ho = h * factor, wo = w * factor;
  Taps ty = bilinear_taps(h, factor);
  Taps tx = bilinear_taps(w, factor);
  Tensor<S> out({c, ho, wo});
  const S* px = x.ptr();
  S* po = out.mutable_ptr();
  for (Index ch = 0; ch < c; ++ch) {
    const S* plane = px + ch * h * w;
    for (Index oy = 0; oy < ho; ++oy) {
      const S fy = S(ty.frac[oy]);
      const S* r0 = plane + ty.lo[oy] * w;
      const S* r1 = plane + ty.hi[oy] * w;
      S* dst = po + (ch * ho + oy) * wo;
      for (Index ox = 0; ox < wo; ++ox) {
        const S fx = S(tx.frac[ox]);
        const Index x0 = tx.lo[ox], x1 = tx.hi[ox];
        const S top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const S bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[ox] = top + fy * (bot - top);
      }
    }
  }
  if (tracking({&x})) {
    record(out, "upsample_bilinear", [xn = x.node(), on = out.node(), ty = std::move(ty), tx = std::move(tx), c, h,
                                      w, ho, wo] {
      if (on->grad.empty() || !xn->requires_grad) return;
      S* gx = xn->grad_buffer().data();
      const S* g = on->grad.data();
      for (Index ch = 0; ch < c; ++ch) {
        S* plane = gx + ch * h * w;
        for (Index oy = 0; oy < ho; ++oy) {
          const S fy = S(ty.frac[oy]);
          S* r0 = plane + ty.lo[oy] * w;
          S* r1 = plane + ty.hi[oy] * w;
          const S* src = g + (ch * ho + oy) * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const S fx = S(tx.frac[ox]);
            const Index x0 = tx.lo[ox], x1 = tx.hi[ox];
            const S gv = src[ox];
            r0[x0] += gv * (S(1) - fy) * (S(1) - fx);
            r0[x1] += gv * (S(1) - fy) * fx;
            r1[x0] += gv * fy * (S(1) - fx);
            r1[x1] += gv * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, Index window) {
  require_rank(x.shape(), 3, "max_pool2d");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window < 1 || h < window || w < window) throw ShapeError("max_pool2d: window larger than input");
  const Index ho = h / window, wo = w / window;
  Tensor<S> out({c, ho, wo});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const S* px = x.ptr();
  S* po = out.mutable_ptr();
  for (Index ch = 0; ch < c; ++ch)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        Index best = (ch * h + oy * window) * w + ox * window;
        for (Index dy = 0; dy < window; ++dy)
          for (Index dx = 0; dx < window; ++dx) {
            const Index j = (ch * h + oy * window + dy) * w + ox * window + dx;
            if (px[j] > px[best]) best = j;
          }
        const Index o = (ch * ho + oy) * wo + ox;
        po[o] = px[best];
        argmax[o] = best;
      }
  if (tracking({&x})) {
    record(out, "max_pool2d", [xn = x.node(), on = out.node(), argmax = std::move(argmax)] {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = xn->grad_buffer();
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += on->grad[o];
    });
  }
  return out;
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Index window) {
  require_rank(x.shape(), 3, "avg_pool2d");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window < 1 || h < window || w < window) throw ShapeError("avg_pool2d: window larger than input");
  const Index ho = h / window, wo = w / window;
  const S inv = S(1) / S(window * window);
  Tensor<S> out({c, ho, wo});
  const S* px = x.ptr();
  S* po = out.mutable_ptr();
  for (Index ch = 0; ch < c; ++ch)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        S acc = 0;
        for (Index dy = 0; dy < window; ++dy)
          for (Index dx = 0; dx < window; ++dx) acc += px[(ch * h + oy * window + dy) * w + ox * window + dx];
        po[(ch * ho + oy) * wo + ox] = acc * inv;
      }
  if (tracking({&x})) {
    record(out, "avg_pool2d", [xn = x.node(), on = out.node(), c, h, w, ho, wo, window, inv] {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = xn->grad_buffer();
      for (Index ch = 0; ch < c; ++ch)
        for (Index oy = 0; oy < ho; ++oy)
          for (Index ox = 0; ox < wo; ++ox) {
            const S gv = on->grad[(ch * ho + oy) * wo + ox] * inv;
            for (Index dy = 0; dy < window; ++dy)
              for (Index dx = 0; dx < window; ++dx) gx[(ch * h + oy * window + dy) * w + ox * window + dx] += gv;
          }
    });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<S> out(std::move(shape), std::vector<S>(x.data().begin(), x.data().end()));
  if (tracking({&x})) {
    record(out, "reshape", [xn = x.node(), on = out.node()] {
      if (on->grad.empty() || !xn->requires_grad) return;
      grad_of(xn) += ArrMap<S>(on->grad.data(), static_cast<Index>(on->grad.size()));
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_rank(x.shape(), 2, "transpose");
  const Index m = x.dim(0), n = x.dim(1);
  Tensor<S> out({n, m});
  MatMap<S>(out.mutable_ptr(), n, m) = ConstMatMap<S>(x.ptr(), m, n).transpose();
  if (tracking({&x})) {
    record(out, "transpose", [xn = x.node(), on = out.node(), m, n] {
      if (on->grad.empty() || !xn->requires_grad) return;
      MatMap<S>(xn->grad_buffer().data(), m, n) += ConstMatMap<S>(on->grad.data(), n, m).transpose();
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<Index>(first.size()));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<Index>(first.size()))
      throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
    for (Index d = 0; d < p.rank(); ++d)
      if (d != axis && p.shape()[d] != first[d])
        throw ShapeError("concat: shapes " + shape_str(first) + " and " + shape_str(p.shape()) + " differ off-axis");
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit osp = split_at(out_shape, axis);
  Tensor<S> out(out_shape);
  S* po = out.mutable_ptr();
  Index offset = 0;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    const Index block = p.shape()[axis] * osp.inner;
    for (Index o = 0; o < osp.outer; ++o)
      std::copy_n(p.ptr() + o * block, block, po + o * osp.extent * osp.inner + offset * osp.inner);
    offsets.push_back(offset);
    offset += p.shape()[axis];
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && active_tape<S>() != nullptr) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    record(out, "concat", [nodes = std::move(nodes), offsets = std::move(offsets), on = out.node(), osp, axis] {
      if (on->grad.empty()) return;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto& n = nodes[i];
        if (!n->requires_grad) continue;
        auto& gp = n->grad_buffer();
        const Index block = n->shape[axis] * osp.inner;
        for (Index o = 0; o < osp.outer; ++o) {
          const S* src = on->grad.data() + o * osp.extent * osp.inner + offsets[i] * osp.inner;
          for (Index j = 0; j < block; ++j) gp[o * block + j] += src[j];
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> stack(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  std::vector<Tensor<S>> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape())
      throw ShapeError("stack: shapes " + shape_str(parts.front().shape()) + " and " + shape_str(p.shape()) +
                       " differ");
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, Index axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank());
  if (start < 0 || length < 1 || start + length > x.shape()[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for " + shape_str(x.shape()));
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor<S> out(out_shape);
  const Index block = length * sp.inner;
  for (Index o = 0; o < sp.outer; ++o)
    std::copy_n(x.ptr() + o * sp.extent * sp.inner + start * sp.inner, block, out.mutable_ptr() + o * block);
  if (tracking({&x})) {
    record(out, "slice", [xn = x.node(), on = out.node(), sp, start, block] {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = xn->grad_buffer();
      for (Index o = 0; o < sp.outer; ++o) {
        S* dst = gx.data() + o * sp.extent * sp.inner + start * sp.inner;
        const S* src = on->grad.data() + o * block;
        for (Index j = 0; j < block; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.array().sum());
  if (tracking({&x})) {
    record(out, "sum", [xn = x.node(), on = out.node()] {
      if (on->grad.empty() || !xn->requires_grad) return;
      grad_of(xn) += on->grad[0];
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, Index axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  Tensor<S> out(out_shape);
  const S* px = x.ptr();
  S* po = out.mutable_ptr();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index e = 0; e < sp.extent; ++e) {
      const S* src = px + (o * sp.extent + e) * sp.inner;
      S* dst = po + o * sp.inner;
      for (Index in = 0; in < sp.inner; ++in) dst[in] += src[in];
    }
  if (tracking({&x})) {
    record(out, "sum_axis", [xn = x.node(), on = out.node(), sp] {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = xn->grad_buffer();
      for (Index o = 0; o < sp.outer; ++o)
        for (Index e = 0; e < sp.extent; ++e) {
          S* dst = gx.data() + (o * sp.extent + e) * sp.inner;
          const S* src = on->grad.data() + o * sp.inner;
          for (Index in = 0; in < sp.inner; ++in) dst[in] += src[in];
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / S(x.size()));
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, Index axis, bool keepdim) {
  const Index n = x.dim(axis);
  return scale(sum(x, axis, keepdim), S(1) / S(n));
}

#define VTU_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> scale(const Tensor<S>&, S);                                                \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                           \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, Index, Index);                  \
  template Tensor<S> conv_transpose2d(const Tensor<S>&, const Tensor<S>&, Index, Index);        \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                          \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);       \
  template Tensor<S> group_norm(const Tensor<S>&, Index, const Tensor<S>&, const Tensor<S>&, S); \
  template Tensor<S> relu(const Tensor<S>&);                                                    \
  template Tensor<S> gelu(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                 \
  template Tensor<S> exp(const Tensor<S>&);                                                     \
  template Tensor<S> log(const Tensor<S>&);                                                     \
  template Tensor<S> square(const Tensor<S>&);                                                  \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                             \
  template Tensor<S> upsample_bilinear(const Tensor<S>&, Index);                                \
  template Tensor<S> max_pool2d(const Tensor<S>&, Index);                                       \
  template Tensor<S> avg_pool2d(const Tensor<S>&, Index);                                       \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                          \
  template Tensor<S> transpose(const Tensor<S>&);                                               \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, Index);                              \
  template Tensor<S> stack(const std::vector<Tensor<S>>&);                                      \
  template Tensor<S> slice(const Tensor<S>&, Index, Index, Index);                              \
  template Tensor<S> sum(const Tensor<S>&);                                                     \
  template Tensor<S> sum(const Tensor<S>&, Index, bool);                                        \
  template Tensor<S> mean(const Tensor<S>&);                                                    \
  template Tensor<S> mean(const Tensor<S>&, Index, bool);

VTU_INSTANTIATE_OPS(float)
VTU_INSTANTIATE_OPS(double)

#undef VTU_INSTANTIATE_OPS

}  // namespace vtu
