#pragma once

#include <cmath>
#include <vector>

#include "deconoise/image.hpp"
#include "deconoise/ops.hpp"

namespace deconoise {

struct PsfKernel {
  int size = 1;             // odd spatial extent
  float sigma = 0.0f;       // standard deviation in pixel widths (metadata)
  std::vector<float> weights;  // size x size, sums to 1

  float at(int r, int c) const {
    return weights[static_cast<std::size_t>(r) * size + c];
  }
};

// Default support: 2*ceil(3*sigma)+1 captures essentially all Gaussian mass.
inline int psf_default_size(float sigma) {
  if (sigma <= 0.0f) return 1;
  const int half = static_cast<int>(std::ceil(3.0 * static_cast<double>(sigma)));
  return std::max(2 * half + 1, 3);
}

inline PsfKernel gaussian_psf(float sigma, int size) {
  detail::require(size % 2 == 1, "gaussian_psf: size must be odd, got ", size);
  detail::require(size >= 1, "gaussian_psf: size must be >= 1, got ", size);
  detail::require(sigma >= 0.0f, "gaussian_psf: sigma must be >= 0, got ", sigma);
  PsfKernel k;
  k.size = size;
  k.sigma = sigma;
  k.weights.assign(static_cast<std::size_t>(size) * size, 0.0f);
  const int c = size / 2;
  if (sigma == 0.0f) {
    k.weights[static_cast<std::size_t>(c) * size + c] = 1.0f;
    return k;
  }
  const double inv = 1.0 / (2.0 * static_cast<double>(sigma) * sigma);
  std::vector<double> w(k.weights.size());
  double total = 0.0;
  for (int r = 0; r < size; ++r)
    for (int col = 0; col < size; ++col) {
      const double d2 = static_cast<double>((r - c) * (r - c) + (col - c) * (col - c));
      const double v = std::exp(-d2 * inv);
      w[static_cast<std::size_t>(r) * size + col] = v;
      total += v;
    }
  for (std::size_t i = 0; i < w.size(); ++i)
    k.weights[i] = static_cast<float>(w[i] / total);
  return k;
}

inline bool is_delta(const PsfKernel& k) {
  const int c = k.size / 2;
  for (int r = 0; r < k.size; ++r)
    for (int col = 0; col < k.size; ++col) {
      const float expect = (r == c && col == c) ? 1.0f : 0.0f;
      if (k.at(r, col) != expect) return false;
    }
  return true;
}

// Direct-summation "same" convolution of an image with a point-symmetric
// kernel (so correlation and convolution coincide).
inline Image convolve_psf(const Image& img, const PsfKernel& psf,
                          PadMode padding = PadMode::reflect) {
  detail::require(img.height >= psf.size && img.width >= psf.size,
                  "convolve_psf: image ", img.height, "x", img.width,
                  " smaller than kernel size ", psf.size);
  if (is_delta(psf)) return img;
  Image out(img.height, img.width);
  const int half = psf.size / 2;
  const bool reflect = padding == PadMode::reflect;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < psf.size; ++ky) {
        int sy = y + ky - half;
        if (reflect)
          sy = detail::reflect_index(sy, img.height);
        else if (sy < 0 || sy >= img.height)
          continue;
        for (int kx = 0; kx < psf.size; ++kx) {
          int sx = x + kx - half;
          if (reflect)
            sx = detail::reflect_index(sx, img.width);
          else if (sx < 0 || sx >= img.width)
            continue;
          acc += static_cast<double>(psf.at(ky, kx)) * img.at(sy, sx);
        }
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace deconoise
