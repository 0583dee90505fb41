#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deconoise/noise.hpp"
#include "deconoise/phantoms.hpp"
#include "deconoise/psf.hpp"
#include "deconoise/text.hpp"

namespace deconoise {

struct DatasetManifest {
  std::string dir;
  PhantomKind kind = PhantomKind::text_like;
  int n_train = 0;
  int n_val = 0;
  int size = 0;
  float psf_sigma = 0.0f;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  std::vector<std::string> train_phantom, train_signal, train_noisy;
  std::vector<std::string> val_phantom, val_signal, val_noisy;

  std::string path(const std::string& name) const {
    return (std::filesystem::path(dir) / name).string();
  }
};

namespace detail {

inline std::string indexed_name(const char* prefix, int i, const char* role) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.%s.ntf", prefix, i, role);
  return buf;
}

}  // namespace detail

inline void save_manifest(const DatasetManifest& m) {
  std::string out;
  out += "kind=" + format_phantom_kind(m.kind) + "\n";
  out += "n_train=" + std::to_string(m.n_train) + "\n";
  out += "n_val=" + std::to_string(m.n_val) + "\n";
  out += "size=" + std::to_string(m.size) + "\n";
  out += "psf_sigma=" + detail::fmt_float(m.psf_sigma) + "\n";
  out += "noise=" + format_noise_spec(m.noise) + "\n";
  out += "seed=" + std::to_string(m.seed) + "\n";
  auto list = [&out](const char* key, const std::vector<std::string>& names) {
    for (const auto& n : names) out += std::string(key) + "=" + n + "\n";
  };
  list("train_phantom", m.train_phantom);
  list("train_signal", m.train_signal);
  list("train_noisy", m.train_noisy);
  list("val_phantom", m.val_phantom);
  list("val_signal", m.val_signal);
  list("val_noisy", m.val_noisy);
  const std::string path = m.path("manifest.txt");
  std::ofstream f(path, std::ios::trunc);
  detail::require(f.good(), path, ": cannot open for writing");
  f << out;
  f.close();
  detail::require(f.good(), path, ": write failed");
}

inline DatasetManifest load_manifest(const std::string& dir) {
  DatasetManifest m;
  m.dir = dir;
  const std::string path = m.path("manifest.txt");
  std::ifstream f(path);
  detail::require(f.good(), path, ": cannot open");
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    detail::require(eq != std::string::npos, path, ":", lineno,
                    ": expected key=value, got '", line, "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "kind") m.kind = parse_phantom_kind(val);
    else if (key == "n_train") m.n_train = static_cast<int>(detail::parse_int(val, key));
    else if (key == "n_val") m.n_val = static_cast<int>(detail::parse_int(val, key));
    else if (key == "size") m.size = static_cast<int>(detail::parse_int(val, key));
    else if (key == "psf_sigma") m.psf_sigma = static_cast<float>(detail::parse_float(val, key));
    else if (key == "noise") m.noise = parse_noise_spec(val);
    else if (key == "seed") m.seed = static_cast<std::uint64_t>(detail::parse_int(val, key));
    else if (key == "train_phantom") m.train_phantom.push_back(val);
    else if (key == "train_signal") m.train_signal.push_back(val);
    else if (key == "train_noisy") m.train_noisy.push_back(val);
    else if (key == "val_phantom") m.val_phantom.push_back(val);
    else if (key == "val_signal") m.val_signal.push_back(val);
    else if (key == "val_noisy") m.val_noisy.push_back(val);
    else detail::require(false, path, ":", lineno, ": unknown key '", key, "'");
  }
  detail::require(static_cast<int>(m.train_noisy.size()) == m.n_train, path,
                  ": n_train=", m.n_train, " but ", m.train_noisy.size(),
                  " train_noisy entries");
  detail::require(static_cast<int>(m.val_noisy.size()) == m.n_val, path,
                  ": n_val=", m.n_val, " but ", m.val_noisy.size(),
                  " val_noisy entries");
  auto exists = [&m](const std::vector<std::string>& names) {
    for (const auto& n : names)
      detail::require(std::filesystem::exists(m.path(n)),
                      "manifest lists missing file ", m.path(n));
  };
  exists(m.train_phantom); exists(m.train_signal); exists(m.train_noisy);
  exists(m.val_phantom); exists(m.val_signal); exists(m.val_noisy);
  return m;
}

// Writes phantom (pre-blur truth), signal (blurred truth) and noisy
// observation per image, plus the manifest. Per-image seeds are seed+index
// with validation images continuing the index range, so splits are disjoint
// in content as well as in files.
inline DatasetManifest synthesize_dataset(PhantomKind kind, int n_train,
                                          int n_val, int size, float psf_sigma,
                                          const NoiseSpec& noise,
                                          const std::string& out_dir,
                                          std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.dir = out_dir;
  m.kind = kind;
  m.n_train = n_train;
  m.n_val = n_val;
  m.size = size;
  m.psf_sigma = psf_sigma;
  m.noise = noise;
  m.seed = seed;
  const PsfKernel psf = gaussian_psf(psf_sigma, psf_default_size(psf_sigma));
  auto emit = [&](const char* prefix, int local, int global,
                  std::vector<std::string>& phantoms,
                  std::vector<std::string>& signals,
                  std::vector<std::string>& noisies) {
    const std::uint64_t img_seed = seed + static_cast<std::uint64_t>(global);
    const Phantom z = generate_phantom(kind, size, img_seed);
    const Image s = convolve_psf(z, psf);
    const Image x = add_noise(s, noise, img_seed);
    const std::string pn = detail::indexed_name(prefix, local, "phantom");
    const std::string sn = detail::indexed_name(prefix, local, "signal");
    const std::string xn = detail::indexed_name(prefix, local, "noisy");
    save_image(m.path(pn), z);
    save_image(m.path(sn), s);
    save_image(m.path(xn), x);
    phantoms.push_back(pn);
    signals.push_back(sn);
    noisies.push_back(xn);
  };
  for (int i = 0; i < n_train; ++i)
    emit("train", i, i, m.train_phantom, m.train_signal, m.train_noisy);
  for (int j = 0; j < n_val; ++j)
    emit("val", j, n_train + j, m.val_phantom, m.val_signal, m.val_noisy);
  save_manifest(m);
  return m;
}

inline std::vector<Image> load_images(const DatasetManifest& m,
                                      const std::vector<std::string>& names) {
  std::vector<Image> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(load_image(m.path(n)));
  return out;
}

}  // namespace deconoise
