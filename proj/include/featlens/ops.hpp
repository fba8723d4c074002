#pragma once

#include <algorithm>
#include <cmath>

#include "featlens/tensor.hpp"

namespace featlens {

// ---------------------------------------------------------------------------
// Dense kernels. Row-major throughout. The j-innermost loops are written so
// the compiler can vectorize them; accumulation order per output element is
// fixed, which keeps results bit-reproducible.
// ---------------------------------------------------------------------------
namespace detail {

// C[m x n] += A[m x k] * B[k x n]
template <typename S>
void matmul_acc(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k,
                int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + size_t(i) * k;
    S* crow = c + size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A^T (a is k x m) * B[k x n]
template <typename S>
void matmul_at_b_acc(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k,
                     int n) {
  for (int p = 0; p < k; ++p) {
    const S* arow = a + size_t(p) * m;
    const S* brow = b + size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const S av = arow[i];
      S* crow = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B^T (b is k x n)
template <typename S>
void matmul_a_bt_acc(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k,
                     int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + size_t(i) * n;
    S* crow = c + size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const S* brow = b + size_t(p) * n;
      S acc = S(0);
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

inline int conv_out_extent(int in, int pad, int k, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

// Patch gather: image (C,H,W) -> col (C*kh*kw, OH*OW).
template <typename S>
void im2col(const S* img, int c, int h, int w, int kh, int kw, int pad, int stride, int oh, int ow,
            S* col) {
  for (int ch = 0; ch < c; ++ch) {
    const S* plane = img + size_t(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        S* dst = col + size_t((ch * kh + ki) * kw + kj) * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) {
            for (int oj = 0; oj < ow; ++oj) *dst++ = S(0);
            continue;
          }
          const S* src = plane + size_t(ii) * w;
          for (int oj = 0; oj < ow; ++oj) {
            int jj = oj * stride - pad + kj;
            *dst++ = (jj >= 0 && jj < w) ? src[jj] : S(0);
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <typename S>
void col2im_acc(const S* col, int c, int h, int w, int kh, int kw, int pad, int stride, int oh,
                int ow, S* img) {
  for (int ch = 0; ch < c; ++ch) {
    S* plane = img + size_t(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const S* src = col + size_t((ch * kh + ki) * kw + kj) * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) {
            src += ow;
            continue;
          }
          S* dst = plane + size_t(ii) * w;
          for (int oj = 0; oj < ow; ++oj) {
            int jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < w) dst[jj] += src[oj];
          }
          src += ow;
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: input (B,C,H,W), kernel (O,C,kh,kw), bias (O). Patch gather followed
// by a matrix multiply per image.
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel, const TensorT<S>& bias,
                  int stride, int pad) {
  check(input.rank() == 4, "conv2d: input must be 4-D, got " + shape_str(input.shape()));
  check(kernel.rank() == 4, "conv2d: kernel must be 4-D, got " + shape_str(kernel.shape()));
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: pad must be >= 0");
  const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int o = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  check(kc == c, "conv2d: channel mismatch, input has " + std::to_string(c) + ", kernel expects " +
                     std::to_string(kc));
  check(bias.rank() == 1 && bias.dim(0) == o, "conv2d: bias must have one entry per out channel");
  const int oh = detail::conv_out_extent(h, pad, kh, stride);
  const int ow = detail::conv_out_extent(w, pad, kw, stride);
  check(oh >= 1 && ow >= 1, "conv2d: output spatial size underflows");

  const int ck = c * kh * kw;
  const int p = oh * ow;
  std::vector<S> out(size_t(b) * o * p);
  std::vector<S> col(size_t(ck) * p);
  const S* x = input.data().data();
  const S* kmat = kernel.data().data();
  const S* bi = bias.data().data();
  for (int n = 0; n < b; ++n) {
    detail::im2col(x + size_t(n) * c * h * w, c, h, w, kh, kw, pad, stride, oh, ow, col.data());
    S* y = out.data() + size_t(n) * o * p;
    for (int oc = 0; oc < o; ++oc) {
      S* row = y + size_t(oc) * p;
      std::fill(row, row + p, bi[oc]);
    }
    detail::matmul_acc(kmat, col.data(), y, o, ck, p);
  }

  auto in_node = input, k_node = kernel, b_node = bias;
  return make_op<S>(
      {b, o, oh, ow}, std::move(out), {input, kernel, bias}, [=](Node<S>& self) {
        const S* g = self.grad.data();
        std::vector<S> col(size_t(ck) * p);
        std::vector<S> gcol(size_t(ck) * p);
        const bool need_in = in_node.requires_grad();
        const bool need_k = k_node.requires_grad();
        const bool need_b = b_node.requires_grad();
        if (need_in) in_node.raw()->ensure_grad();
        if (need_k) k_node.raw()->ensure_grad();
        if (need_b) b_node.raw()->ensure_grad();
        for (int n = 0; n < b; ++n) {
          const S* gy = g + size_t(n) * o * p;
          if (need_k || need_in) {
            if (need_in) {
              std::fill(gcol.begin(), gcol.end(), S(0));
              detail::matmul_at_b_acc(kmat, gy, gcol.data(), ck, o, p);
              detail::col2im_acc(gcol.data(), c, h, w, kh, kw, pad, stride, oh, ow,
                                 in_node.raw()->grad.data() + size_t(n) * c * h * w);
            }
            if (need_k) {
              detail::im2col(x + size_t(n) * c * h * w, c, h, w, kh, kw, pad, stride, oh, ow,
                             col.data());
              detail::matmul_a_bt_acc(gy, col.data(), k_node.raw()->grad.data(), o, ck, p);
            }
          }
          if (need_b) {
            S* gb = b_node.raw()->grad.data();
            for (int oc = 0; oc < o; ++oc) {
              const S* row = gy + size_t(oc) * p;
              S acc = S(0);
              for (int j = 0; j < p; ++j) acc += row[j];
              gb[oc] += acc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// transposed_conv2d: input (B,C,H,W), kernel (C,O,kh,kw), no bias. The nominal
// output (H-1)*stride+kh is center-cropped or zero-padded to target_hw, which
// covers scaled feature maps whose sizes are not exact stride multiples.
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> transposed_conv2d(const TensorT<S>& input, const TensorT<S>& kernel, int stride,
                             int target_h, int target_w) {
  check(input.rank() == 4 && kernel.rank() == 4, "transposed_conv2d: 4-D tensors required");
  check(stride >= 1, "transposed_conv2d: stride must be >= 1");
  const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int kc = kernel.dim(0), o = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  check(kc == c, "transposed_conv2d: channel mismatch");
  const int nh = (h - 1) * stride + kh;
  const int nw = (w - 1) * stride + kw;
  check(std::abs(nh - target_h) <= std::max(kh, kw) && std::abs(nw - target_w) <= std::max(kh, kw),
        "transposed_conv2d: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
            " is more than a kernel extent away from nominal " + std::to_string(nh) + "x" +
            std::to_string(nw));

  // nominal row/col -> target row/col offset (crop when negative headroom)
  const int off_h = (nh - target_h) / 2;
  const int off_w = (nw - target_w) / 2;

  std::vector<S> out(size_t(b) * o * target_h * target_w, S(0));
  const S* x = input.data().data();
  const S* km = kernel.data().data();
  for (int n = 0; n < b; ++n) {
    const S* xi = x + size_t(n) * c * h * w;
    S* y = out.data() + size_t(n) * o * target_h * target_w;
    for (int ci = 0; ci < c; ++ci) {
      const S* plane = xi + size_t(ci) * h * w;
      for (int oc = 0; oc < o; ++oc) {
        const S* kplane = km + (size_t(ci) * o + oc) * kh * kw;
        S* yplane = y + size_t(oc) * target_h * target_w;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const S v = plane[size_t(i) * w + j];
            if (v == S(0)) continue;
            for (int ki = 0; ki < kh; ++ki) {
              const int ti = i * stride + ki - off_h;
              if (ti < 0 || ti >= target_h) continue;
              for (int kj = 0; kj < kw; ++kj) {
                const int tj = j * stride + kj - off_w;
                if (tj < 0 || tj >= target_w) continue;
                yplane[size_t(ti) * target_w + tj] += v * kplane[size_t(ki) * kw + kj];
              }
            }
          }
        }
      }
    }
  }

  auto in_node = input, k_node = kernel;
  return make_op<S>(
      {b, o, target_h, target_w}, std::move(out), {input, kernel}, [=](Node<S>& self) {
        const bool need_in = in_node.requires_grad();
        const bool need_k = k_node.requires_grad();
        if (need_in) in_node.raw()->ensure_grad();
        if (need_k) k_node.raw()->ensure_grad();
        for (int n = 0; n < b; ++n) {
          const S* gy = self.grad.data() + size_t(n) * o * target_h * target_w;
          const S* xi = x + size_t(n) * c * h * w;
          for (int ci = 0; ci < c; ++ci) {
            for (int oc = 0; oc < o; ++oc) {
              const S* kplane = km + (size_t(ci) * o + oc) * kh * kw;
              S* gk = need_k ? k_node.raw()->grad.data() + (size_t(ci) * o + oc) * kh * kw
                             : nullptr;
              const S* gyp = gy + size_t(oc) * target_h * target_w;
              for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                  const size_t xidx = size_t(ci) * h * w + size_t(i) * w + j;
                  S gacc = S(0);
                  for (int ki = 0; ki < kh; ++ki) {
                    const int ti = i * stride + ki - off_h;
                    if (ti < 0 || ti >= target_h) continue;
                    for (int kj = 0; kj < kw; ++kj) {
                      const int tj = j * stride + kj - off_w;
                      if (tj < 0 || tj >= target_w) continue;
                      const S go = gyp[size_t(ti) * target_w + tj];
                      gacc += go * kplane[size_t(ki) * kw + kj];
                      if (need_k) gk[size_t(ki) * kw + kj] += go * xi[xidx];
                    }
                  }
                  if (need_in)
                    in_node.raw()->grad[size_t(n) * c * h * w + xidx] += gacc;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// bilinear_resize: (B,C,H,W) -> (B,C,th,tw), align-corners-false sampling.
// ---------------------------------------------------------------------------
namespace detail {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<float> w1;  // weight of i1; weight of i0 is 1-w1
};

inline LerpAxis lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(size_t(out));
  ax.i1.resize(size_t(out));
  ax.w1.resize(size_t(out));
  const double scale = double(in) / double(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = in - 1;
    int lo = int(src);
    ax.i0[size_t(i)] = lo;
    ax.i1[size_t(i)] = std::min(lo + 1, in - 1);
    ax.w1[size_t(i)] = float(src - lo);
  }
  return ax;
}
}  // namespace detail

template <typename S>
TensorT<S> bilinear_resize(const TensorT<S>& input, int target_h, int target_w) {
  check(input.rank() == 4, "bilinear_resize: input must be 4-D");
  check(target_h >= 1 && target_w >= 1, "bilinear_resize: target extents must be >= 1");
  const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto ay = detail::lerp_axis(h, target_h);
  const auto ax = detail::lerp_axis(w, target_w);

  std::vector<S> out(size_t(b) * c * target_h * target_w);
  const S* x = input.data().data();
  for (int n = 0; n < b; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const S* plane = x + (size_t(n) * c + ch) * h * w;
      S* y = out.data() + (size_t(n) * c + ch) * target_h * target_w;
      for (int i = 0; i < target_h; ++i) {
        const S wy = S(ay.w1[size_t(i)]);
        const S* r0 = plane + size_t(ay.i0[size_t(i)]) * w;
        const S* r1 = plane + size_t(ay.i1[size_t(i)]) * w;
        for (int j = 0; j < target_w; ++j) {
          // lerp form: exact for equal endpoints, so constant maps stay constant
          const S wx = S(ax.w1[size_t(j)]);
          const S a0 = r0[ax.i0[size_t(j)]];
          const S b0 = r1[ax.i0[size_t(j)]];
          const S top = a0 + (r0[ax.i1[size_t(j)]] - a0) * wx;
          const S bot = b0 + (r1[ax.i1[size_t(j)]] - b0) * wx;
          *y++ = top + (bot - top) * wy;
        }
      }
    }
  }

  auto in_node = input;
  return make_op<S>(
      {b, c, target_h, target_w}, std::move(out), {input}, [=](Node<S>& self) {
        in_node.raw()->ensure_grad();
        S* gx = in_node.raw()->grad.data();
        const S* g = self.grad.data();
        for (int n = 0; n < b; ++n) {
          for (int ch = 0; ch < c; ++ch) {
            S* plane = gx + (size_t(n) * c + ch) * h * w;
            const S* gy = g + (size_t(n) * c + ch) * target_h * target_w;
            for (int i = 0; i < target_h; ++i) {
              const S wy = S(ay.w1[size_t(i)]);
              S* r0 = plane + size_t(ay.i0[size_t(i)]) * w;
              S* r1 = plane + size_t(ay.i1[size_t(i)]) * w;
              for (int j = 0; j < target_w; ++j) {
                const S wx = S(ax.w1[size_t(j)]);
                const S go = gy[size_t(i) * target_w + j];
                r0[ax.i0[size_t(j)]] += go * (S(1) - wy) * (S(1) - wx);
                r0[ax.i1[size_t(j)]] += go * (S(1) - wy) * wx;
                r1[ax.i0[size_t(j)]] += go * wy * (S(1) - wx);
                r1[ax.i1[size_t(j)]] += go * wy * wx;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
  std::vector<S> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  auto xn = x;
  return make_op<S>(x.shape(), std::move(out), {x}, [xn](Node<S>& self) {
    xn.raw()->ensure_grad();
    auto gx = xn.raw()->grad.data();
    const S* xv = xn.data().data();
    const S* g = self.grad.data();
    for (size_t i = 0; i < self.value.size(); ++i)
      if (xv[i] > S(0)) gx[i] += g[i];
  });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  std::vector<S> out(size_t(a.size()));
  const S* av = a.data().data();
  const S* bv = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a, bn = b;
  return make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](Node<S>& self) {
    for (auto& pn : {an, bn}) {
      if (!pn.requires_grad()) continue;
      pn.raw()->ensure_grad();
      S* g = pn.raw()->grad.data();
      const S* gs = self.grad.data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i];
    }
  });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<S> out(size_t(a.size()));
  const S* av = a.data().data();
  const S* bv = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a, bn = b;
  return make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](Node<S>& self) {
    const S* gs = self.grad.data();
    if (an.requires_grad()) {
      an.raw()->ensure_grad();
      S* g = an.raw()->grad.data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i];
    }
    if (bn.requires_grad()) {
      bn.raw()->ensure_grad();
      S* g = bn.raw()->grad.data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] -= gs[i];
    }
  });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<S> out(size_t(a.size()));
  const S* av = a.data().data();
  const S* bv = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a, bn = b;
  return make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](Node<S>& self) {
    const S* gs = self.grad.data();
    if (an.requires_grad()) {
      an.raw()->ensure_grad();
      S* g = an.raw()->grad.data();
      const S* bv2 = bn.data().data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i] * bv2[i];
    }
    if (bn.requires_grad()) {
      bn.raw()->ensure_grad();
      S* g = bn.raw()->grad.data();
      const S* av2 = an.data().data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i] * av2[i];
    }
  });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, double c) {
  std::vector<S> out(size_t(a.size()));
  const S* av = a.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * S(c);
  auto an = a;
  return make_op<S>(a.shape(), std::move(out), {a}, [an, c](Node<S>& self) {
    an.raw()->ensure_grad();
    S* g = an.raw()->grad.data();
    const S* gs = self.grad.data();
    for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i] * S(c);
  });
}

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  S acc = S(0);
  for (S v : a.data()) acc += v;
  auto an = a;
  return make_op<S>({1}, {acc}, {a}, [an](Node<S>& self) {
    an.raw()->ensure_grad();
    S* g = an.raw()->grad.data();
    const S gs = self.grad[0];
    for (size_t i = 0; i < size_t(an.size()); ++i) g[i] += gs;
  });
}

// Concatenation along axis 1; all other extents must agree.
template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& parts) {
  check(!parts.empty(), "concat_channels: empty operand list");
  const auto& first = parts[0].shape();
  check(first.size() >= 2, "concat_channels: operands must have rank >= 2");
  int total_c = 0;
  int64_t inner = 1;
  for (size_t i = 2; i < first.size(); ++i) inner *= first[i];
  for (const auto& p : parts) {
    check(p.rank() == int(first.size()), "concat_channels: rank mismatch");
    check(p.dim(0) == first[0], "concat_channels: batch mismatch");
    for (size_t i = 2; i < first.size(); ++i)
      check(p.shape()[i] == first[i], "concat_channels: trailing extent mismatch");
    total_c += p.dim(1);
  }
  Shape oshape = first;
  oshape[1] = total_c;
  const int b = first[0];
  std::vector<S> out(size_t(numel(oshape)));
  size_t coff = 0;
  for (const auto& p : parts) {
    const size_t pc = size_t(p.dim(1)) * size_t(inner);
    const S* src = p.data().data();
    for (int n = 0; n < b; ++n)
      std::copy(src + size_t(n) * pc, src + size_t(n + 1) * pc,
                out.data() + size_t(n) * total_c * inner + coff);
    coff += pc;
  }
  auto parts_copy = parts;
  return make_op<S>(oshape, std::move(out), parts, [parts_copy, b, inner, total_c](Node<S>& self) {
    size_t coff = 0;
    for (const auto& p : parts_copy) {
      const size_t pc = size_t(p.dim(1)) * size_t(inner);
      if (p.requires_grad()) {
        p.raw()->ensure_grad();
        S* g = p.raw()->grad.data();
        for (int n = 0; n < b; ++n) {
          const S* gs = self.grad.data() + size_t(n) * total_c * size_t(inner) + coff;
          for (size_t i = 0; i < pc; ++i) g[size_t(n) * pc + i] += gs[i];
        }
      }
      coff += pc;
    }
  });
}

// Channel slice [c0, c1) along axis 1; exact inverse of concat_channels.
template <typename S>
TensorT<S> slice_channels(const TensorT<S>& x, int c0, int c1) {
  check(x.rank() >= 2, "slice_channels: rank must be >= 2");
  check(0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_channels: bad channel range");
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const int b = x.dim(0), c = x.dim(1), nc = c1 - c0;
  Shape oshape = x.shape();
  oshape[1] = nc;
  std::vector<S> out(size_t(numel(oshape)));
  const S* src = x.data().data();
  for (int n = 0; n < b; ++n)
    std::copy(src + (size_t(n) * c + c0) * inner, src + (size_t(n) * c + c1) * inner,
              out.data() + size_t(n) * nc * inner);
  auto xn = x;
  return make_op<S>(oshape, std::move(out), {x}, [xn, b, c, c0, nc, inner](Node<S>& self) {
    xn.raw()->ensure_grad();
    S* g = xn.raw()->grad.data();
    for (int n = 0; n < b; ++n) {
      const S* gs = self.grad.data() + size_t(n) * nc * inner;
      S* dst = g + (size_t(n) * c + c0) * inner;
      for (size_t i = 0; i < size_t(nc) * size_t(inner); ++i) dst[i] += gs[i];
    }
  });
}

// Spatial crop of a 4-D tensor.
template <typename S>
TensorT<S> crop_spatial(const TensorT<S>& x, int y0, int x0, int ch, int cw) {
  check(x.rank() == 4, "crop_spatial: input must be 4-D");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(y0 >= 0 && x0 >= 0 && y0 + ch <= h && x0 + cw <= w, "crop_spatial: window out of range");
  std::vector<S> out(size_t(b) * c * ch * cw);
  const S* src = x.data().data();
  for (int n = 0; n < b; ++n)
    for (int k = 0; k < c; ++k) {
      const S* plane = src + (size_t(n) * c + k) * h * w;
      S* dst = out.data() + (size_t(n) * c + k) * ch * cw;
      for (int i = 0; i < ch; ++i)
        std::copy(plane + size_t(y0 + i) * w + x0, plane + size_t(y0 + i) * w + x0 + cw,
                  dst + size_t(i) * cw);
    }
  auto xn = x;
  return make_op<S>({b, c, ch, cw}, std::move(out), {x}, [=](Node<S>& self) {
    xn.raw()->ensure_grad();
    S* g = xn.raw()->grad.data();
    for (int n = 0; n < b; ++n)
      for (int k = 0; k < c; ++k) {
        S* plane = g + (size_t(n) * c + k) * h * w;
        const S* gs = self.grad.data() + (size_t(n) * c + k) * ch * cw;
        for (int i = 0; i < ch; ++i)
          for (int j = 0; j < cw; ++j) plane[size_t(y0 + i) * w + x0 + j] += gs[size_t(i) * cw + j];
      }
  });
}

// (B,C,H,W) -> (B,C) mean over the spatial extent.
template <typename S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
  check(x.rank() == 4, "global_avg_pool: input must be 4-D");
  const int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<S> out(size_t(b) * c);
  const S* src = x.data().data();
  for (int n = 0; n < b * c; ++n) {
    S acc = S(0);
    const S* p = src + size_t(n) * hw;
    for (int i = 0; i < hw; ++i) acc += p[i];
    out[size_t(n)] = acc / S(hw);
  }
  auto xn = x;
  return make_op<S>({b, c}, std::move(out), {x}, [xn, b, c, hw](Node<S>& self) {
    xn.raw()->ensure_grad();
    S* g = xn.raw()->grad.data();
    for (int n = 0; n < b * c; ++n) {
      const S gs = self.grad[size_t(n)] / S(hw);
      S* p = g + size_t(n) * hw;
      for (int i = 0; i < hw; ++i) p[i] += gs;
    }
  });
}

// x (B,D), weight (O,D), bias (O) -> (B,O)
template <typename S>
TensorT<S> fully_connected(const TensorT<S>& x, const TensorT<S>& weight, const TensorT<S>& bias) {
  check(x.rank() == 2 && weight.rank() == 2, "fully_connected: x and weight must be 2-D");
  const int b = x.dim(0), d = x.dim(1), o = weight.dim(0);
  check(weight.dim(1) == d, "fully_connected: weight expects " + std::to_string(weight.dim(1)) +
                                " inputs, got " + std::to_string(d));
  check(bias.rank() == 1 && bias.dim(0) == o, "fully_connected: bias size mismatch");
  std::vector<S> out(size_t(b) * o);
  const S* xv = x.data().data();
  const S* wv = weight.data().data();
  const S* bv = bias.data().data();
  for (int n = 0; n < b; ++n)
    for (int i = 0; i < o; ++i) {
      const S* xr = xv + size_t(n) * d;
      const S* wr = wv + size_t(i) * d;
      S acc = bv[i];
      for (int j = 0; j < d; ++j) acc += xr[j] * wr[j];
      out[size_t(n) * o + i] = acc;
    }
  auto xn = x, wn = weight, bn = bias;
  return make_op<S>({b, o}, std::move(out), {x, weight, bias}, [=](Node<S>& self) {
    const S* g = self.grad.data();
    if (xn.requires_grad()) {
      xn.raw()->ensure_grad();
      detail::matmul_acc(g, wv, xn.raw()->grad.data(), b, o, d);
    }
    if (wn.requires_grad()) {
      wn.raw()->ensure_grad();
      detail::matmul_at_b_acc(g, xv, wn.raw()->grad.data(), o, b, d);
    }
    if (bn.requires_grad()) {
      bn.raw()->ensure_grad();
      S* gb = bn.raw()->grad.data();
      for (int n = 0; n < b; ++n)
        for (int i = 0; i < o; ++i) gb[i] += g[size_t(n) * o + i];
    }
  });
}

// Row-wise softmax over the last axis of a 2-D tensor.
template <typename S>
TensorT<S> softmax(const TensorT<S>& x) {
  check(x.rank() == 2, "softmax: input must be 2-D");
  const int b = x.dim(0), c = x.dim(1);
  std::vector<S> out(size_t(b) * c);
  const S* xv = x.data().data();
  for (int n = 0; n < b; ++n) {
    const S* r = xv + size_t(n) * c;
    S mx = r[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, r[i]);
    S z = S(0);
    for (int i = 0; i < c; ++i) {
      const S e = std::exp(r[i] - mx);
      out[size_t(n) * c + i] = e;
      z += e;
    }
    for (int i = 0; i < c; ++i) out[size_t(n) * c + i] /= z;
  }
  auto xn = x;
  return make_op<S>({b, c}, std::move(out), {x}, [xn, b, c](Node<S>& self) {
    xn.raw()->ensure_grad();
    S* gx = xn.raw()->grad.data();
    const S* s = self.value.data();
    const S* g = self.grad.data();
    for (int n = 0; n < b; ++n) {
      const S* sr = s + size_t(n) * c;
      const S* gr = g + size_t(n) * c;
      S dot = S(0);
      for (int i = 0; i < c; ++i) dot += sr[i] * gr[i];
      for (int i = 0; i < c; ++i) gx[size_t(n) * c + i] += sr[i] * (gr[i] - dot);
    }
  });
}

// Mean cross entropy over the batch; log-softmax applied internally.
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "cross_entropy: logits must be 2-D");
  const int b = logits.dim(0), c = logits.dim(1);
  check(int(labels.size()) == b, "cross_entropy: label count mismatch");
  for (int l : labels)
    check(l >= 0 && l < c, "cross_entropy: label " + std::to_string(l) + " out of range [0," +
                               std::to_string(c) + ")");
  const S* xv = logits.data().data();
  std::vector<S> probs(size_t(b) * c);
  S loss = S(0);
  for (int n = 0; n < b; ++n) {
    const S* r = xv + size_t(n) * c;
    S mx = r[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, r[i]);
    S z = S(0);
    for (int i = 0; i < c; ++i) z += std::exp(r[i] - mx);
    const S logz = std::log(z) + mx;
    for (int i = 0; i < c; ++i) probs[size_t(n) * c + i] = std::exp(r[i] - logz);
    loss += logz - r[labels[size_t(n)]];
  }
  loss /= S(b);
  auto xn = logits;
  return make_op<S>({1}, {loss}, {logits}, [xn, probs = std::move(probs), labels, b,
                                            c](Node<S>& self) {
    xn.raw()->ensure_grad();
    S* g = xn.raw()->grad.data();
    const S gs = self.grad[0] / S(b);
    for (int n = 0; n < b; ++n)
      for (int i = 0; i < c; ++i) {
        S v = probs[size_t(n) * c + i];
        if (i == labels[size_t(n)]) v -= S(1);
        g[size_t(n) * c + i] += gs * v;
      }
  });
}

// Elementwise logistic; used for the scaling lens mixing weight.
template <typename S>
TensorT<S> logistic(const TensorT<S>& x) {
  std::vector<S> out(size_t(x.size()));
  const S* xv = x.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-xv[i]));
  auto xn = x;
  return make_op<S>(x.shape(), std::move(out), {x}, [xn](Node<S>& self) {
    xn.raw()->ensure_grad();
    S* g = xn.raw()->grad.data();
    const S* s = self.value.data();
    const S* gs = self.grad.data();
    for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i] * s[i] * (S(1) - s[i]);
  });
}

// s*a + (1-s)*b with scalar s; the convex mix behind w1/w2 of the scaling lens.
template <typename S>
TensorT<S> convex_mix(const TensorT<S>& a, const TensorT<S>& b, const TensorT<S>& s) {
  check(a.shape() == b.shape(), "convex_mix: operand shape mismatch");
  check(s.size() == 1, "convex_mix: mixing weight must be scalar");
  const S sv = s.data()[0];
  std::vector<S> out(size_t(a.size()));
  const S* av = a.data().data();
  const S* bv = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = sv * av[i] + (S(1) - sv) * bv[i];
  auto an = a, bn = b, sn = s;
  return make_op<S>(a.shape(), std::move(out), {a, b, s}, [an, bn, sn, sv](Node<S>& self) {
    const S* gs = self.grad.data();
    if (an.requires_grad()) {
      an.raw()->ensure_grad();
      S* g = an.raw()->grad.data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i] * sv;
    }
    if (bn.requires_grad()) {
      bn.raw()->ensure_grad();
      S* g = bn.raw()->grad.data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += gs[i] * (S(1) - sv);
    }
    if (sn.requires_grad()) {
      sn.raw()->ensure_grad();
      const S* av2 = an.data().data();
      const S* bv2 = bn.data().data();
      S acc = S(0);
      for (size_t i = 0; i < self.value.size(); ++i) acc += gs[i] * (av2[i] - bv2[i]);
      sn.raw()->grad[0] += acc;
    }
  });
}

}  // namespace featlens
