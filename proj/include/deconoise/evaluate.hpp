#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "deconoise/model.hpp"
#include "deconoise/training.hpp"

namespace deconoise {

// 10*log10(range^2 / MSE), range = max(gt) - min(gt), MSE accumulated in
// 64-bit. Exact equality yields the +inf sentinel.
inline double psnr(const Image& pred, const Image& gt) {
  detail::require(pred.height == gt.height && pred.width == gt.width,
                  "psnr: shape mismatch ", pred.height, "x", pred.width,
                  " vs ", gt.height, "x", gt.width);
  detail::require(!gt.pixels.empty(), "psnr: empty image");
  float lo = gt.pixels[0], hi = gt.pixels[0];
  for (float v : gt.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = static_cast<double>(hi) - lo;
  detail::require(range > 0, "psnr: ground truth has zero range");
  double mse = 0;
  for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
    const double d = static_cast<double>(pred.pixels[i]) - gt.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(gt.pixels.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / mse);
}

inline double negative_fraction(const Image& img) {
  if (img.pixels.empty()) return 0.0;
  std::size_t neg = 0;
  for (float v : img.pixels)
    if (v < 0.0f) ++neg;
  return static_cast<double>(neg) / static_cast<double>(img.pixels.size());
}

struct DenoiseResult {
  Image s_hat;  // denoised estimate
  Image z_hat;  // deconvolved estimate
};

namespace detail {

inline Image reflect_pad_to_multiple(const Image& img, int mult, int& top,
                                     int& left) {
  const int dh = (mult - img.height % mult) % mult;
  const int dw = (mult - img.width % mult) % mult;
  top = dh / 2;
  left = dw / 2;
  if (dh == 0 && dw == 0) return img;
  Image out(img.height + dh, img.width + dw);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      out.at(r, c) = img.at(reflect_index(r - top, img.height),
                            reflect_index(c - left, img.width));
  return out;
}

inline Image crop(const Image& img, int top, int left, int h, int w) {
  Image out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(r, c) = img.at(top + r, left + c);
  return out;
}

}  // namespace detail

// Full-image inference, no masking. Inputs not divisible by 8 are
// reflect-padded (split evenly, extra pixel at bottom/right) and cropped back.
inline DenoiseResult denoise(const Checkpoint& ck, const Image& img) {
  int top = 0, left = 0;
  const Image padded = detail::reflect_pad_to_multiple(img, 8, top, left);
  Tape<float> tape;
  auto x = image_to_tensor(padded);
  auto out = forward(tape, x, ck.params, ck.config);
  DenoiseResult res;
  res.s_hat = detail::crop(tensor_to_image(out.s_hat), top, left, img.height,
                           img.width);
  res.z_hat = detail::crop(tensor_to_image(out.z_hat), top, left, img.height,
                           img.width);
  return res;
}

// The "smoothed baseline": run a PSF-free model, then convolve its output
// with the PSF. Feeding a PSF-bearing model here would convolve twice.
inline Image baseline_n2v_conv(const Checkpoint& ck, const PsfKernel& psf,
                               const Image& img) {
  detail::require(!ck.config.psf,
                  "baseline_n2v_conv: checkpoint already applies a PSF; "
                  "refusing to convolve twice");
  return convolve_psf(denoise(ck, img).s_hat, psf);
}

// Horizontal montage with each panel normalized to [0,1] independently and a
// 2 px separator, for PGM export.
inline Image montage_row(const std::vector<Image>& panels, int sep = 2) {
  detail::require(!panels.empty(), "montage_row: no panels");
  const int h = panels[0].height;
  int w_total = 0;
  for (const auto& p : panels) {
    detail::require(p.height == h, "montage_row: mixed panel heights");
    w_total += p.width;
  }
  w_total += sep * static_cast<int>(panels.size() - 1);
  Image out(h, w_total);
  int x0 = 0;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const auto& p = panels[i];
    float lo = p.pixels[0], hi = p.pixels[0];
    for (float v : p.pixels) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float range = hi - lo;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < p.width; ++c)
        out.at(r, x0 + c) = range > 0 ? (p.at(r, c) - lo) / range : 0.0f;
    x0 += p.width + sep;
  }
  return out;
}

}  // namespace deconoise
