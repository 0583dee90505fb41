#pragma once

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deconoise/image.hpp"
#include "deconoise/ops.hpp"
#include "deconoise/psf.hpp"
#include "deconoise/rng.hpp"

namespace deconoise {

// Depth-3 U-Net, 1 input channel, encoder widths 64/128/256, 256-wide bottom,
// decoder widths 128/64/64, linear 1x1 head. Tensor order here is the
// checkpoint order and the parameter-init draw order.
inline const std::vector<std::pair<std::string, Shape>>& unet_layout() {
  static const std::vector<std::pair<std::string, Shape>> layout = [] {
    std::vector<std::pair<std::string, Shape>> v;
    auto conv = [&v](const std::string& name, int cout, int cin, int k) {
      v.emplace_back(name + ".weight", Shape{cout, cin, k, k});
      v.emplace_back(name + ".bias", Shape{cout});
    };
    conv("enc1.conv1", 64, 1, 3);
    conv("enc1.conv2", 64, 64, 3);
    conv("enc2.conv1", 128, 64, 3);
    conv("enc2.conv2", 128, 128, 3);
    conv("enc3.conv1", 256, 128, 3);
    conv("enc3.conv2", 256, 256, 3);
    conv("bottleneck.conv1", 256, 256, 3);
    conv("bottleneck.conv2", 256, 256, 3);
    conv("dec1.conv1", 128, 512, 3);
    conv("dec1.conv2", 128, 128, 3);
    conv("dec2.conv1", 64, 256, 3);
    conv("dec2.conv2", 64, 64, 3);
    conv("dec3.conv1", 64, 128, 3);
    conv("dec3.conv2", 64, 64, 3);
    conv("head", 1, 64, 1);
    return v;
  }();
  return layout;
}

template <class T>
struct UNetParams {
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  const Tensor<T>& at(std::size_t i) const { return tensors[i].second; }
  Tensor<T>& at(std::size_t i) { return tensors[i].second; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }
  void set_requires_grad(bool rg) {
    for (auto& [name, t] : tensors) t.set_requires_grad(rg);
  }
  void zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
  }
};

template <class T>
UNetParams<double> params_to_double(const UNetParams<T>& p) {
  UNetParams<double> out;
  out.tensors.reserve(p.tensors.size());
  for (const auto& [name, t] : p.tensors) {
    auto d = to_double(t);
    d.set_requires_grad(t.requires_grad());
    out.tensors.emplace_back(name, d);
  }
  return out;
}

// He-scaled init: conv weights ~ N(0, 2/fan_in), biases zero.
inline UNetParams<float> init_params(std::uint64_t seed) {
  RandomStream rng(seed, "init");
  UNetParams<float> p;
  for (const auto& [name, shape] : unet_layout()) {
    auto t = Tensor<float>::zeros(shape);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
      const double scale = std::sqrt(2.0 / fan_in);
      for (auto& v : t.value())
        v = static_cast<float>(rng.gaussian() * scale);
    }
    p.tensors.emplace_back(name, t);
  }
  return p;
}

struct ModelConfig {
  std::optional<PsfKernel> psf;  // none selects the plain blind-spot baseline
  float mean = 0.0f;             // input standardization stats
  float stdev = 1.0f;
};

template <class T>
struct ModelOutput {
  Tensor<T> z_hat;  // pre-convolution estimate (deconvolved)
  Tensor<T> s_hat;  // post-convolution estimate (denoised)
};

template <class T>
ModelOutput<T> forward(Tape<T>& tape, const Tensor<T>& x,
                       const UNetParams<T>& p, const ModelConfig& config) {
  detail::require(x.shape().size() == 4 && x.dim(1) == 1,
                  "forward: input must be [N,1,H,W], got ",
                  shape_str(x.shape()));
  detail::require(x.dim(2) % 8 == 0 && x.dim(3) % 8 == 0,
                  "forward: patch dims must be divisible by 8 (three 2x "
                  "down/up levels), got ",
                  x.dim(2), "x", x.dim(3));
  detail::require(config.stdev > 0.0f, "forward: config std must be > 0, got ",
                  config.stdev);
  detail::require(p.tensors.size() == unet_layout().size(),
                  "forward: expected ", unet_layout().size(),
                  " parameter tensors, got ", p.tensors.size());

  const T inv_std = T(1) / static_cast<T>(config.stdev);
  const T mean = static_cast<T>(config.mean);
  auto c = [&](const Tensor<T>& in, std::size_t i) {
    return conv2d(tape, in, p.at(i), p.at(i + 1), PadMode::zero);
  };

  auto xs = affine(tape, x, inv_std, -mean * inv_std);
  auto e1 = relu(tape, c(xs, 0));
  e1 = relu(tape, c(e1, 2));
  auto e2 = relu(tape, c(maxpool2(tape, e1), 4));
  e2 = relu(tape, c(e2, 6));
  auto e3 = relu(tape, c(maxpool2(tape, e2), 8));
  e3 = relu(tape, c(e3, 10));
  auto bottom = relu(tape, c(maxpool2(tape, e3), 12));
  bottom = relu(tape, c(bottom, 14));
  auto d1 = relu(tape, c(concat_channels(tape, upsample_nearest2(tape, bottom), e3), 16));
  d1 = relu(tape, c(d1, 18));
  auto d2 = relu(tape, c(concat_channels(tape, upsample_nearest2(tape, d1), e2), 20));
  d2 = relu(tape, c(d2, 22));
  auto d3 = relu(tape, c(concat_channels(tape, upsample_nearest2(tape, d2), e1), 24));
  d3 = relu(tape, c(d3, 26));
  auto u = conv2d(tape, d3, p.at(28), p.at(29), PadMode::zero);

  ModelOutput<T> out;
  out.z_hat = affine(tape, u, static_cast<T>(config.stdev), mean);
  out.s_hat = out.z_hat;
  if (config.psf && !is_delta(*config.psf)) {
    const int k = config.psf->size;
    auto kw = Tensor<T>::zeros({1, 1, k, k});
    for (std::size_t i = 0; i < config.psf->weights.size(); ++i)
      kw.value()[i] = static_cast<T>(config.psf->weights[i]);
    auto kb = Tensor<T>::zeros({1});
    out.s_hat = conv2d(tape, out.z_hat, kw, kb, PadMode::reflect);
  }
  return out;
}

namespace detail {

inline std::string hexfloat(float v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", static_cast<double>(v));
  return buf;
}

inline float parse_hexfloat(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  require(end && *end == '\0', "checkpoint key ", key,
          ": cannot parse float from '", s, "'");
  return v;
}

}  // namespace detail

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

struct Checkpoint {
  UNetParams<float> params;
  ModelConfig config;
  ConfigEcho extra;  // training-config echo, preserved verbatim
};

// Checkpoint format: magic "DCKP", u32 version, length-prefixed key=value
// pairs, then named tensors in the raw tensor format.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path,
                            const UNetParams<float>& params,
                            const ModelConfig& config,
                            const ConfigEcho& extra = {}) {
  std::string buf;
  buf.append("DCKP", 4);
  detail::put_u32(buf, kCheckpointVersion);

  ConfigEcho entries;
  if (config.psf) {
    entries.emplace_back("psf", "gaussian");
    entries.emplace_back("psf_sigma", detail::hexfloat(config.psf->sigma));
    entries.emplace_back("psf_size", std::to_string(config.psf->size));
  } else {
    entries.emplace_back("psf", "none");
  }
  entries.emplace_back("mean", detail::hexfloat(config.mean));
  entries.emplace_back("std", detail::hexfloat(config.stdev));
  for (const auto& e : extra) entries.push_back(e);

  detail::put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [k, v] : entries) {
    detail::put_u32(buf, static_cast<std::uint32_t>(k.size()));
    buf += k;
    detail::put_u32(buf, static_cast<std::uint32_t>(v.size()));
    buf += v;
  }

  const std::uint32_t n_tensors =
      static_cast<std::uint32_t>(params.tensors.size()) + (config.psf ? 1 : 0);
  detail::put_u32(buf, n_tensors);
  auto put_named = [&buf](const std::string& name, const Shape& shape,
                          const std::vector<float>& data) {
    detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    encode_tensor(buf, shape, data);
  };
  for (const auto& [name, t] : params.tensors)
    put_named(name, t.shape(), t.value());
  if (config.psf)
    put_named("psf", {config.psf->size, config.psf->size},
              config.psf->weights);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    detail::require(out.good(), tmp, ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.close();
    detail::require(out.good(), tmp, ": write failed");
  }
  detail::require(std::rename(tmp.c_str(), path.c_str()) == 0,
                  path, ": rename from temp file failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(in.good(), path, ": cannot open");
  detail::ByteReader r(in, path);
  char magic[4];
  r.read(magic, 4);
  detail::require(std::memcmp(magic, "DCKP", 4) == 0, path,
                  ": bad checkpoint magic at byte 0");
  const std::uint32_t version = r.u32();
  detail::require(version == kCheckpointVersion, path,
                  ": unsupported checkpoint version ", version, " (expected ",
                  kCheckpointVersion, ")");

  auto read_str = [&r](std::size_t limit) {
    const std::uint32_t n = r.u32();
    detail::require(n <= limit, r.context(), ": implausible string length ", n,
                    " at byte ", r.offset() - 4);
    std::string s(n, '\0');
    if (n) r.read(s.data(), n);
    return s;
  };

  ConfigEcho entries;
  const std::uint32_t n_entries = r.u32();
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    std::string k = read_str(1 << 12);
    std::string v = read_str(1 << 16);
    entries.emplace_back(std::move(k), std::move(v));
  }
  auto lookup = [&entries](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : entries)
      if (k == key) return v;
    detail::require(false, "checkpoint missing config key '", key, "'");
    static const std::string empty;
    return empty;
  };

  Checkpoint ck;
  const std::string psf_kind = lookup("psf");
  ck.config.mean = detail::parse_hexfloat(lookup("mean"), "mean");
  ck.config.stdev = detail::parse_hexfloat(lookup("std"), "std");

  const std::uint32_t n_tensors = r.u32();
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> raw;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = read_str(1 << 12);
    Shape shape;
    std::vector<float> data;
    try {
      decode_tensor(r, shape, data);
    } catch (const std::exception& e) {
      detail::require(false, path, ": corrupt tensor '", name, "': ",
                      e.what());
    }
    raw.emplace_back(std::move(name), std::make_pair(std::move(shape),
                                                     std::move(data)));
  }

  auto take = [&raw, &path](const std::string& name)
      -> std::pair<Shape, std::vector<float>>& {
    for (auto& [n, payload] : raw)
      if (n == name) return payload;
    detail::require(false, path, ": checkpoint missing tensor '", name, "'");
    static std::pair<Shape, std::vector<float>> empty;
    return empty;
  };

  for (const auto& [name, shape] : unet_layout()) {
    auto& [got_shape, data] = take(name);
    detail::require(got_shape == shape, path, ": tensor '", name,
                    "' has shape ", shape_str(got_shape), ", expected ",
                    shape_str(shape));
    auto t = Tensor<float>::zeros(shape);
    t.value() = data;
    ck.params.tensors.emplace_back(name, t);
  }

  if (psf_kind == "gaussian") {
    PsfKernel k;
    k.sigma = detail::parse_hexfloat(lookup("psf_sigma"), "psf_sigma");
    k.size = static_cast<int>(std::strtol(lookup("psf_size").c_str(), nullptr, 10));
    auto& [shape, data] = take("psf");
    detail::require(shape == Shape{k.size, k.size}, path,
                    ": tensor 'psf' has shape ", shape_str(shape),
                    ", expected [", k.size, ",", k.size, "]");
    k.weights = data;
    ck.config.psf = std::move(k);
  } else {
    detail::require(psf_kind == "none", path, ": unknown psf kind '",
                    psf_kind, "'");
  }

  const char* reserved[] = {"psf", "psf_sigma", "psf_size", "mean", "std"};
  for (auto& [k, v] : entries) {
    bool skip = false;
    for (const char* rk : reserved) skip = skip || k == rk;
    if (!skip) ck.extra.emplace_back(k, v);
  }
  return ck;
}

}  // namespace deconoise
