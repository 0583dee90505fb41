#pragma once

#include <cmath>
#include <vector>

#include "deconoise/image.hpp"
#include "deconoise/rng.hpp"

namespace deconoise {

enum class PhantomKind { blobs, strokes, text_like };

inline PhantomKind parse_phantom_kind(const std::string& s) {
  if (s == "blobs") return PhantomKind::blobs;
  if (s == "strokes") return PhantomKind::strokes;
  if (s == "text_like") return PhantomKind::text_like;
  detail::require(false, "unknown phantom kind '", s,
                  "' (expected blobs, strokes or text_like)");
  return PhantomKind::blobs;
}

inline std::string format_phantom_kind(PhantomKind k) {
  switch (k) {
    case PhantomKind::blobs: return "blobs";
    case PhantomKind::strokes: return "strokes";
    case PhantomKind::text_like: return "text_like";
  }
  return "blobs";
}

namespace detail {

constexpr float kForeground = 255.0f;

inline void draw_segment(Image& img, double x0, double y0, double x1,
                         double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const int steps =
      1 + static_cast<int>(std::ceil(std::max(std::fabs(dx), std::fabs(dy))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * dx));
    const int y = static_cast<int>(std::lround(y0 + t * dy));
    if (x >= 0 && x < img.width && y >= 0 && y < img.height)
      img.at(y, x) = kForeground;
  }
}

// Sparse hard disks, radius 1-3 px, ~6% target coverage.
inline Phantom phantom_blobs(int size, RandomStream& rng) {
  Phantom img(size, size);
  const double area = static_cast<double>(size) * size;
  const double mean_disk = M_PI * (27.0 - 1.0) / 6.0;  // pi * E[r^2], r~U[1,3]
  const int n_disks = std::max(1, static_cast<int>(std::lround(area * 0.06 / mean_disk)));
  for (int d = 0; d < n_disks; ++d) {
    const double cx = rng.uniform() * size;
    const double cy = rng.uniform() * size;
    const double r = 1.0 + 2.0 * rng.uniform();
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)) - 1);
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + r)) + 1);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)) - 1);
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + r)) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
        if (ddx * ddx + ddy * ddy <= r * r) img.at(y, x) = kForeground;
      }
  }
  return img;
}

// Random 1-px polylines.
inline Phantom phantom_strokes(int size, RandomStream& rng) {
  Phantom img(size, size);
  const int n_lines = 6 + rng.uniform_int(10);
  for (int l = 0; l < n_lines; ++l) {
    double x = rng.uniform() * size;
    double y = rng.uniform() * size;
    const int segments = 3 + rng.uniform_int(4);
    for (int s = 0; s < segments; ++s) {
      const double angle = rng.uniform() * 2.0 * M_PI;
      const double len = 5.0 + rng.uniform() * 15.0;
      const double nx = x + len * std::cos(angle);
      const double ny = y + len * std::sin(angle);
      draw_segment(img, x, y, nx, ny);
      x = nx;
      y = ny;
    }
  }
  return img;
}

// Rows of glyph-like stroke compositions, emulating rendered text.
inline Phantom phantom_text_like(int size, RandomStream& rng) {
  Phantom img(size, size);
  const int margin = 4;
  const int line_height = 12;
  for (int y0 = margin; y0 + 10 <= size - margin; y0 += line_height) {
    int x0 = margin;
    while (x0 + 8 <= size - margin) {
      const int gw = 5 + rng.uniform_int(4);
      const int gh = 7 + rng.uniform_int(3);
      if (rng.uniform() < 0.15) {  // word gap
        x0 += gw + 2;
        continue;
      }
      const int strokes = 2 + rng.uniform_int(3);
      for (int s = 0; s < strokes; ++s) {
        const int shape = rng.uniform_int(4);
        double ax = x0 + rng.uniform() * gw;
        double ay = y0 + rng.uniform() * gh;
        double bx = ax, by = ay;
        switch (shape) {
          case 0:  // horizontal bar
            ax = x0;
            bx = x0 + gw - 1;
            by = ay;
            break;
          case 1:  // vertical bar
            ay = y0;
            by = y0 + gh - 1;
            bx = ax;
            break;
          case 2:  // diagonal
            bx = x0 + rng.uniform() * gw;
            by = y0 + rng.uniform() * gh;
            break;
          default:  // short tick
            bx = ax + (rng.uniform() - 0.5) * 4.0;
            by = ay + (rng.uniform() - 0.5) * 4.0;
            break;
        }
        draw_segment(img, ax, ay, bx, by);
      }
      x0 += gw + 2;
    }
  }
  return img;
}

}  // namespace detail

// Deterministic per-image generation: image i draws from its own stream
// seeded with (seed + i), so images are independent of list position.
inline Phantom generate_phantom(PhantomKind kind, int size, std::uint64_t seed) {
  detail::require(size >= 64, "phantom size must be >= 64, got ", size);
  RandomStream rng(seed, "data");
  switch (kind) {
    case PhantomKind::blobs: return detail::phantom_blobs(size, rng);
    case PhantomKind::strokes: return detail::phantom_strokes(size, rng);
    case PhantomKind::text_like: return detail::phantom_text_like(size, rng);
  }
  return Phantom(size, size);
}

inline std::vector<Phantom> generate_phantoms(PhantomKind kind, int n, int size,
                                              std::uint64_t seed) {
  std::vector<Phantom> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(generate_phantom(kind, size, seed + static_cast<std::uint64_t>(i)));
  return out;
}

}  // namespace deconoise
