#pragma once

#include <string>

#include "deconoise/image.hpp"
#include "deconoise/rng.hpp"
#include "deconoise/text.hpp"

namespace deconoise {

enum class NoiseKind { none, gaussian, poisson_gaussian };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  float gauss_sigma = 0.0f;
  float poisson_scale = 0.0f;
};

// Grammar: "none" | "gauss:SIGMA" | "pg:SCALE,SIGMA".
inline NoiseSpec parse_noise_spec(const std::string& s) {
  NoiseSpec spec;
  if (s == "none") return spec;
  if (s.rfind("gauss:", 0) == 0) {
    spec.kind = NoiseKind::gaussian;
    spec.gauss_sigma =
        static_cast<float>(detail::parse_float(s.substr(6), "noise sigma"));
    detail::require(spec.gauss_sigma >= 0.0f,
                    "noise spec: sigma must be >= 0, got ", s);
    return spec;
  }
  if (s.rfind("pg:", 0) == 0) {
    auto parts = detail::split(s.substr(3), ',');
    detail::require(parts.size() == 2,
                    "noise spec: expected pg:SCALE,SIGMA, got '", s, "'");
    spec.kind = NoiseKind::poisson_gaussian;
    spec.poisson_scale =
        static_cast<float>(detail::parse_float(parts[0], "poisson scale"));
    spec.gauss_sigma =
        static_cast<float>(detail::parse_float(parts[1], "noise sigma"));
    detail::require(spec.poisson_scale > 0.0f && spec.gauss_sigma >= 0.0f,
                    "noise spec: bad parameters in '", s, "'");
    return spec;
  }
  detail::require(false, "noise spec: unknown kind in '", s,
                  "' (expected none, gauss:SIGMA or pg:SCALE,SIGMA)");
  return spec;
}

inline std::string format_noise_spec(const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::none:
      return "none";
    case NoiseKind::gaussian:
      return "gauss:" + detail::fmt_float(spec.gauss_sigma);
    case NoiseKind::poisson_gaussian:
      return "pg:" + detail::fmt_float(spec.poisson_scale) + "," +
             detail::fmt_float(spec.gauss_sigma);
  }
  return "none";
}

// Per-pixel independent zero-centered noise; deterministic for a fixed seed.
// Poisson rates below zero are clamped to zero; the count of clamped pixels is
// reported through `clamped` when provided.
inline Image add_noise(const Image& signal, const NoiseSpec& spec,
                       std::uint64_t seed, std::int64_t* clamped = nullptr) {
  if (clamped) *clamped = 0;
  Image out = signal;
  if (spec.kind == NoiseKind::none) return out;
  RandomStream rng(seed, "noise");
  if (spec.kind == NoiseKind::gaussian) {
    const double sigma = spec.gauss_sigma;
    for (auto& v : out.pixels)
      v = static_cast<float>(v + sigma * rng.gaussian());
    return out;
  }
  const double scale = spec.poisson_scale;
  const double sigma = spec.gauss_sigma;
  for (auto& v : out.pixels) {
    double rate = v / scale;
    if (rate < 0.0) {
      rate = 0.0;
      if (clamped) ++*clamped;
    }
    v = static_cast<float>(scale * static_cast<double>(rng.poisson(rate)) +
                           sigma * rng.gaussian());
  }
  return out;
}

}  // namespace deconoise
