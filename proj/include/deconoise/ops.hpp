#pragma once

#include <algorithm>
#include <cstring>
#include <memory>
#include <vector>

#include "deconoise/blas.hpp"
#include "deconoise/tensor.hpp"

namespace deconoise {

enum class PadMode { zero, reflect };

namespace detail {

// Symmetric reflection with the edge sample repeated: indices map as
// ... c b a | a b c | c b a ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// Pads one image of `c` channels into dst laid out c x (h+2py) x (w+2px).
template <class T>
void pad_channels(const T* src, T* dst, int c, int h, int w, int py, int px,
                  PadMode mode) {
  const int ph = h + 2 * py, pw = w + 2 * px;
  for (int ch = 0; ch < c; ++ch) {
    const T* s = src + static_cast<std::size_t>(ch) * h * w;
    T* d = dst + static_cast<std::size_t>(ch) * ph * pw;
    for (int yy = 0; yy < ph; ++yy, d += pw) {
      const int sy = yy - py;
      if (mode == PadMode::zero) {
        if (sy < 0 || sy >= h) {
          std::fill(d, d + pw, T(0));
          continue;
        }
        std::fill(d, d + px, T(0));
        std::memcpy(d + px, s + static_cast<std::size_t>(sy) * w,
                    sizeof(T) * static_cast<std::size_t>(w));
        std::fill(d + px + w, d + pw, T(0));
      } else {
        const T* row = s + static_cast<std::size_t>(reflect_index(sy, h)) * w;
        for (int xx = 0; xx < px; ++xx) d[xx] = row[reflect_index(xx - px, w)];
        std::memcpy(d + px, row, sizeof(T) * static_cast<std::size_t>(w));
        for (int xx = px + w; xx < pw; ++xx)
          d[xx] = row[reflect_index(xx - px, w)];
      }
    }
  }
}

// col has K = c*kh*kw rows of h*w columns; row (ch,ky,kx) is the padded image
// shifted by (ky,kx), so the convolution becomes a single GEMM.
template <class T>
void im2col(const T* padded, T* col, int c, int h, int w, int kh, int kw) {
  const int pw = w + kw - 1;  // padded row pitch (px = kw/2 each side)
  const int ph = h + kh - 1;
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + (static_cast<std::size_t>(ch) * kh * kw +
                        static_cast<std::size_t>(ky) * kw + kx) *
                           h * w;
        const T* base =
            padded + (static_cast<std::size_t>(ch) * ph + ky) * pw + kx;
        for (int y = 0; y < h; ++y)
          std::memcpy(row + static_cast<std::size_t>(y) * w,
                      base + static_cast<std::size_t>(y) * pw,
                      sizeof(T) * static_cast<std::size_t>(w));
      }
}

template <class T>
void col2im_add(const T* col, T* padded, int c, int h, int w, int kh, int kw) {
  const int pw = w + kw - 1;
  const int ph = h + kh - 1;
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ch) * kh * kw +
                              static_cast<std::size_t>(ky) * kw + kx) *
                                 h * w;
        T* base = padded + (static_cast<std::size_t>(ch) * ph + ky) * pw + kx;
        for (int y = 0; y < h; ++y) {
          T* dst = base + static_cast<std::size_t>(y) * pw;
          const T* s = row + static_cast<std::size_t>(y) * w;
          for (int x = 0; x < w; ++x) dst[x] += s[x];
        }
      }
}

// Accumulates a padded-size gradient back onto the h x w source grid.
template <class T>
void fold_padding_add(const T* padded, T* dst, int c, int h, int w, int py,
                      int px, PadMode mode) {
  const int ph = h + 2 * py, pw = w + 2 * px;
  for (int ch = 0; ch < c; ++ch) {
    const T* p = padded + static_cast<std::size_t>(ch) * ph * pw;
    T* d = dst + static_cast<std::size_t>(ch) * h * w;
    if (mode == PadMode::zero) {
      for (int y = 0; y < h; ++y) {
        const T* s = p + (static_cast<std::size_t>(y) + py) * pw + px;
        T* row = d + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) row[x] += s[x];
      }
    } else {
      for (int yy = 0; yy < ph; ++yy) {
        const int sy = reflect_index(yy - py, h);
        const T* s = p + static_cast<std::size_t>(yy) * pw;
        T* row = d + static_cast<std::size_t>(sy) * w;
        for (int xx = 0; xx < pw; ++xx) row[reflect_index(xx - px, w)] += s[xx];
      }
    }
  }
}

}  // namespace detail

// "Same" 2-D convolution (cross-correlation), differentiable w.r.t. input,
// weight and bias. input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout].
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input,
                 const Tensor<T>& weight, const Tensor<T>& bias,
                 PadMode padding) {
  detail::require(input.shape().size() == 4, "conv2d: input must be 4-D, got ",
                  shape_str(input.shape()));
  detail::require(weight.shape().size() == 4,
                  "conv2d: weight must be 4-D, got ",
                  shape_str(weight.shape()));
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  detail::require(weight.dim(1) == cin,
                  "conv2d: channel mismatch between input ",
                  shape_str(input.shape()), " and weight ",
                  shape_str(weight.shape()));
  detail::require(kh % 2 == 1 && kw % 2 == 1,
                  "conv2d: kernel dims must be odd, got ",
                  shape_str(weight.shape()));
  detail::require(h >= 1 && w >= 1, "conv2d: empty spatial dims ",
                  shape_str(input.shape()));
  detail::require(bias.shape().size() == 1 && bias.dim(0) == cout,
                  "conv2d: bias must have shape [", cout, "], got ",
                  shape_str(bias.shape()));

  const int py = kh / 2, px = kw / 2;
  const int k = cin * kh * kw;
  const int hw = h * w;
  const std::size_t in_stride = static_cast<std::size_t>(cin) * hw;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * hw;
  const bool identity_col = (kh == 1 && kw == 1);

  auto out = Tensor<T>::zeros({n, cout, h, w});
  // Per-image column matrices are kept for the weight-gradient GEMM.
  auto cols = std::make_shared<std::vector<std::vector<T>>>();
  if (!identity_col) cols->resize(static_cast<std::size_t>(n));

  std::vector<T> padded;
  if (!identity_col)
    padded.resize(static_cast<std::size_t>(cin) * (h + 2 * py) * (w + 2 * px));

  for (int i = 0; i < n; ++i) {
    const T* src = input.value().data() + i * in_stride;
    const T* col = src;
    if (!identity_col) {
      auto& c = (*cols)[static_cast<std::size_t>(i)];
      c.resize(static_cast<std::size_t>(k) * hw);
      detail::pad_channels(src, padded.data(), cin, h, w, py, px, padding);
      detail::im2col(padded.data(), c.data(), cin, h, w, kh, kw);
      col = c.data();
    }
    T* dst = out.value().data() + i * out_stride;
    detail::gemm<T>(CblasNoTrans, CblasNoTrans, cout, hw, k, T(1),
                    weight.value().data(), k, col, hw, T(0), dst, hw);
    for (int c = 0; c < cout; ++c) {
      const T b = bias.value()[static_cast<std::size_t>(c)];
      T* row = dst + static_cast<std::size_t>(c) * hw;
      for (int j = 0; j < hw; ++j) row[j] += b;
    }
  }

  const bool in_rg = input.requires_grad();
  const bool w_rg = weight.requires_grad();
  const bool b_rg = bias.requires_grad();
  if (!(in_rg || w_rg || b_rg)) return out;
  out.set_requires_grad(true);

  auto in_d = input.data();
  auto w_d = weight.data();
  auto b_d = bias.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    std::vector<T> dcol, dpad;
    if (in_rg) {
      in_d->ensure_grad();
      if (!identity_col) {
        dcol.resize(static_cast<std::size_t>(k) * hw);
        dpad.resize(static_cast<std::size_t>(cin) * (h + 2 * py) *
                    (w + 2 * px));
      }
    }
    if (w_rg) w_d->ensure_grad();
    if (b_rg) b_d->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const T* dy = out_d->grad.data() + i * out_stride;
      const T* col = identity_col
                         ? in_d->value.data() + i * in_stride
                         : (*cols)[static_cast<std::size_t>(i)].data();
      if (b_rg) {
        for (int c = 0; c < cout; ++c) {
          const T* row = dy + static_cast<std::size_t>(c) * hw;
          T s = 0;
          for (int j = 0; j < hw; ++j) s += row[j];
          b_d->grad[static_cast<std::size_t>(c)] += s;
        }
      }
      if (w_rg)
        detail::gemm<T>(CblasNoTrans, CblasTrans, cout, k, hw, T(1), dy, hw,
                        col, hw, T(1), w_d->grad.data(), k);
      if (in_rg) {
        T* dx = in_d->grad.data() + i * in_stride;
        if (identity_col) {
          // 1x1 kernel: columns are the input itself.
          std::vector<T> tmp(static_cast<std::size_t>(k) * hw);
          detail::gemm<T>(CblasTrans, CblasNoTrans, k, hw, cout, T(1),
                          w_d->value.data(), k, dy, hw, T(0), tmp.data(), hw);
          for (std::size_t j = 0; j < tmp.size(); ++j) dx[j] += tmp[j];
        } else {
          detail::gemm<T>(CblasTrans, CblasNoTrans, k, hw, cout, T(1),
                          w_d->value.data(), k, dy, hw, T(0), dcol.data(), hw);
          std::fill(dpad.begin(), dpad.end(), T(0));
          detail::col2im_add(dcol.data(), dpad.data(), cin, h, w, kh, kw);
          detail::fold_padding_add(dpad.data(), dx, cin, h, w, py, px,
                                   padding);
        }
      }
    }
    if (!identity_col) cols->clear();
  });
  return out;
}

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  auto out = Tensor<T>::zeros(input.shape());
  const auto& v = input.value();
  auto& o = out.value();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = v[i] > T(0) ? v[i] : T(0);
  if (!input.requires_grad()) return out;
  out.set_requires_grad(true);
  auto in_d = input.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    in_d->ensure_grad();
    for (std::size_t i = 0; i < in_d->value.size(); ++i)
      if (in_d->value[i] > T(0)) in_d->grad[i] += out_d->grad[i];
  });
  return out;
}

// 2x2 non-overlapping max pooling. Gradient goes to the first row-major
// maximum of each window.
template <class T>
Tensor<T> maxpool2(Tape<T>& tape, const Tensor<T>& input) {
  detail::require(input.shape().size() == 4, "maxpool2: input must be 4-D");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  detail::require(h % 2 == 0 && w % 2 == 0,
                  "maxpool2: spatial dims must be even, got ",
                  shape_str(input.shape()));
  const int oh = h / 2, ow = w / 2;
  auto out = Tensor<T>::zeros({n, c, oh, ow});
  auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
  const auto& v = input.value();
  auto& o = out.value();
  std::size_t oi = 0;
  for (int img = 0; img < n * c; ++img) {
    const std::size_t base = static_cast<std::size_t>(img) * h * w;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x, ++oi) {
        std::int64_t best = static_cast<std::int64_t>(
            base + static_cast<std::size_t>(2 * y) * w + 2 * x);
        T bv = v[static_cast<std::size_t>(best)];
        const std::int64_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::int64_t idx : cand)
          if (v[static_cast<std::size_t>(idx)] > bv) {
            bv = v[static_cast<std::size_t>(idx)];
            best = idx;
          }
        o[oi] = bv;
        (*arg)[oi] = best;
      }
  }
  if (!input.requires_grad()) return out;
  out.set_requires_grad(true);
  auto in_d = input.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    in_d->ensure_grad();
    for (std::size_t i = 0; i < arg->size(); ++i)
      in_d->grad[static_cast<std::size_t>((*arg)[i])] += out_d->grad[i];
  });
  return out;
}

// Nearest-neighbor 2x upsampling; backward sums the four replica gradients.
template <class T>
Tensor<T> upsample_nearest2(Tape<T>& tape, const Tensor<T>& input) {
  detail::require(input.shape().size() == 4,
                  "upsample_nearest2: input must be 4-D");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  auto out = Tensor<T>::zeros({n, c, 2 * h, 2 * w});
  const auto& v = input.value();
  auto& o = out.value();
  for (int img = 0; img < n * c; ++img) {
    const T* s = v.data() + static_cast<std::size_t>(img) * h * w;
    T* d = o.data() + static_cast<std::size_t>(img) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      T* r0 = d + static_cast<std::size_t>(2 * y) * 2 * w;
      T* r1 = r0 + 2 * w;
      for (int x = 0; x < w; ++x) {
        const T val = s[static_cast<std::size_t>(y) * w + x];
        r0[2 * x] = r0[2 * x + 1] = r1[2 * x] = r1[2 * x + 1] = val;
      }
    }
  }
  if (!input.requires_grad()) return out;
  out.set_requires_grad(true);
  auto in_d = input.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    in_d->ensure_grad();
    for (int img = 0; img < n * c; ++img) {
      T* ds = in_d->grad.data() + static_cast<std::size_t>(img) * h * w;
      const T* dd = out_d->grad.data() + static_cast<std::size_t>(img) * 4 * h * w;
      for (int y = 0; y < h; ++y) {
        const T* r0 = dd + static_cast<std::size_t>(2 * y) * 2 * w;
        const T* r1 = r0 + 2 * w;
        for (int x = 0; x < w; ++x)
          ds[static_cast<std::size_t>(y) * w + x] +=
              r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
      }
    }
  });
  return out;
}

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a,
                          const Tensor<T>& b) {
  detail::require(a.shape().size() == 4 && b.shape().size() == 4,
                  "concat_channels: inputs must be 4-D");
  detail::require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                      a.dim(3) == b.dim(3),
                  "concat_channels: spatial mismatch between ",
                  shape_str(a.shape()), " and ", shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2),
            w = a.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  auto out = Tensor<T>::zeros({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    T* dst = out.value().data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
    std::memcpy(dst, a.value().data() + static_cast<std::size_t>(i) * ca * hw,
                sizeof(T) * ca * hw);
    std::memcpy(dst + ca * hw,
                b.value().data() + static_cast<std::size_t>(i) * cb * hw,
                sizeof(T) * cb * hw);
  }
  const bool a_rg = a.requires_grad(), b_rg = b.requires_grad();
  if (!(a_rg || b_rg)) return out;
  out.set_requires_grad(true);
  auto a_d = a.data();
  auto b_d = b.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    if (a_rg) a_d->ensure_grad();
    if (b_rg) b_d->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const T* g = out_d->grad.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
      if (a_rg) {
        T* da = a_d->grad.data() + static_cast<std::size_t>(i) * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) da[j] += g[j];
      }
      if (b_rg) {
        T* db = b_d->grad.data() + static_cast<std::size_t>(i) * cb * hw;
        const T* gb = g + ca * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) db[j] += gb[j];
      }
    }
  });
  return out;
}

// y = scale * x + shift with fixed scalars (de-standardization).
template <class T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& x, T scale, T shift) {
  auto out = Tensor<T>::zeros(x.shape());
  const auto& v = x.value();
  auto& o = out.value();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = scale * v[i] + shift;
  if (!x.requires_grad()) return out;
  out.set_requires_grad(true);
  auto in_d = x.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    in_d->ensure_grad();
    for (std::size_t i = 0; i < in_d->grad.size(); ++i)
      in_d->grad[i] += scale * out_d->grad[i];
  });
  return out;
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch ",
                  shape_str(a.shape()), " vs ", shape_str(b.shape()));
  auto out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.value().size(); ++i)
    out.value()[i] = a.value()[i] + b.value()[i];
  const bool a_rg = a.requires_grad(), b_rg = b.requires_grad();
  if (!(a_rg || b_rg)) return out;
  out.set_requires_grad(true);
  auto a_d = a.data();
  auto b_d = b.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    if (a_rg) {
      a_d->ensure_grad();
      for (std::size_t i = 0; i < a_d->grad.size(); ++i)
        a_d->grad[i] += out_d->grad[i];
    }
    if (b_rg) {
      b_d->ensure_grad();
      for (std::size_t i = 0; i < b_d->grad.size(); ++i)
        b_d->grad[i] += out_d->grad[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch ",
                  shape_str(a.shape()), " vs ", shape_str(b.shape()));
  auto out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.value().size(); ++i)
    out.value()[i] = a.value()[i] * b.value()[i];
  const bool a_rg = a.requires_grad(), b_rg = b.requires_grad();
  if (!(a_rg || b_rg)) return out;
  out.set_requires_grad(true);
  auto a_d = a.data();
  auto b_d = b.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    if (a_rg) {
      a_d->ensure_grad();
      for (std::size_t i = 0; i < a_d->grad.size(); ++i)
        a_d->grad[i] += b_d->value[i] * out_d->grad[i];
    }
    if (b_rg) {
      b_d->ensure_grad();
      for (std::size_t i = 0; i < b_d->grad.size(); ++i)
        b_d->grad[i] += a_d->value[i] * out_d->grad[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T c) {
  return affine(tape, x, c, T(0));
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T s = 0;
  for (T v : x.value()) s += v;
  auto out = Tensor<T>::scalar(s);
  if (!x.requires_grad()) return out;
  out.set_requires_grad(true);
  auto in_d = x.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    in_d->ensure_grad();
    const T g = out_d->grad[0];
    for (std::size_t i = 0; i < in_d->grad.size(); ++i) in_d->grad[i] += g;
  });
  return out;
}

// Mean squared error over an explicit subset of flat positions:
// (1/m) * sum_j (pred[idx_j] - target_j)^2.
template <class T>
Tensor<T> masked_mse(Tape<T>& tape, const Tensor<T>& pred,
                     const std::vector<std::int64_t>& indices,
                     const std::vector<T>& targets) {
  detail::require(!indices.empty(), "masked_mse: empty mask");
  detail::require(indices.size() == targets.size(),
                  "masked_mse: ", indices.size(), " indices vs ",
                  targets.size(), " targets");
  const T inv_m = T(1) / static_cast<T>(indices.size());
  T acc = 0;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const T d = pred.value()[static_cast<std::size_t>(indices[j])] - targets[j];
    acc += d * d;
  }
  auto out = Tensor<T>::scalar(acc * inv_m);
  if (!pred.requires_grad()) return out;
  out.set_requires_grad(true);
  auto p_d = pred.data();
  auto out_d = out.data();
  auto idx = std::make_shared<std::vector<std::int64_t>>(indices);
  auto tgt = std::make_shared<std::vector<T>>(targets);
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    p_d->ensure_grad();
    const T g = out_d->grad[0] * T(2) * inv_m;
    for (std::size_t j = 0; j < idx->size(); ++j) {
      const std::size_t i = static_cast<std::size_t>((*idx)[j]);
      p_d->grad[i] += g * (p_d->value[i] - (*tgt)[j]);
    }
  });
  return out;
}

// Mean of the negative part: (1/n) * sum_i max(0, -x_i).
template <class T>
Tensor<T> mean_negative_part(Tape<T>& tape, const Tensor<T>& x) {
  const T inv_n = T(1) / static_cast<T>(x.size());
  T acc = 0;
  for (T v : x.value())
    if (v < T(0)) acc -= v;
  auto out = Tensor<T>::scalar(acc * inv_n);
  if (!x.requires_grad()) return out;
  out.set_requires_grad(true);
  auto in_d = x.data();
  auto out_d = out.data();
  tape.record([=]() {
    if (out_d->grad.empty()) return;
    in_d->ensure_grad();
    const T g = out_d->grad[0] * inv_n;
    for (std::size_t i = 0; i < in_d->value.size(); ++i)
      if (in_d->value[i] < T(0)) in_d->grad[i] -= g;
  });
  return out;
}

}  // namespace deconoise
