#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "deconoise/dataset.hpp"
#include "deconoise/model.hpp"

namespace deconoise {

struct TrainConfig {
  double lr = 0.001;
  int epochs = 200;
  int steps_per_epoch = 10;
  int batch = 1;
  int virtual_batch = 20;
  int patch = 96;
  double mask_rate = 0.03125;
  double lambda_pos = 1.0;
  std::optional<float> psf_sigma = 1.0f;  // nullopt: no PSF layer (plain blind-spot)
  std::uint64_t seed = 0;
  int mask_neighborhood = 5;
};

inline void validate_config(const TrainConfig& c) {
  detail::require(c.lr > 0 && c.epochs >= 0 && c.steps_per_epoch > 0 &&
                      c.batch == 1 && c.virtual_batch > 0 && c.patch > 0,
                  "train config: lr/epochs/steps/virtual_batch/patch must be "
                  "positive, batch must be 1");
  detail::require(c.mask_rate > 0 && c.mask_rate <= 0.5,
                  "train config: mask_rate must be in (0, 0.5], got ",
                  c.mask_rate);
  detail::require(c.patch % 8 == 0,
                  "train config: patch must be divisible by 8, got ", c.patch);
  detail::require(c.mask_neighborhood >= 3 && c.mask_neighborhood % 2 == 1,
                  "train config: mask neighborhood must be odd and >= 3, got ",
                  c.mask_neighborhood);
  if (c.psf_sigma)
    detail::require(*c.psf_sigma >= 0.0f,
                    "train config: psf sigma must be >= 0, got ", *c.psf_sigma);
}

struct MaskBatch {
  Image patch;  // network input, replacements applied
  std::vector<std::pair<int, int>> coords;          // masked (row, col)
  std::vector<float> targets;                       // original values at coords
  std::vector<float> replacement_values;
  std::vector<std::pair<int, int>> source_offsets;  // replacement source - coord
};

// Uniform source image, uniform top-left corner. Draw order: image, row, col.
inline Image sample_patch(const std::vector<Image>& pool,
                          const std::vector<std::string>& names, int patch,
                          RandomStream& rng) {
  detail::require(!pool.empty(), "sample_patch: empty image pool");
  const int pick = rng.uniform_int(static_cast<int>(pool.size()));
  const Image& src = pool[static_cast<std::size_t>(pick)];
  detail::require(
      src.height >= patch && src.width >= patch, "sample_patch: image ",
      pick < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(pick)] : "?",
      " is ", src.height, "x", src.width, ", smaller than patch ", patch);
  const int r0 = rng.uniform_int(src.height - patch + 1);
  const int c0 = rng.uniform_int(src.width - patch + 1);
  Image out(patch, patch);
  for (int r = 0; r < patch; ++r)
    for (int c = 0; c < patch; ++c) out.at(r, c) = src.at(r0 + r, c0 + c);
  return out;
}

// Blind-spot masking: floor(rate*area) distinct pixels; each is overwritten
// with the value of a uniformly chosen *other* pixel from its clipped
// neighborhood window. Replacement values are read from the original patch,
// never from already-replaced pixels, and never from the center itself.
inline MaskBatch apply_mask(const Image& patch, double mask_rate,
                            int neighborhood, RandomStream& rng) {
  detail::require(neighborhood >= 3 && neighborhood % 2 == 1,
                  "apply_mask: neighborhood must be odd and >= 3, got ",
                  neighborhood);
  const int h = patch.height, w = patch.width;
  const int area = h * w;
  const int m = static_cast<int>(std::floor(mask_rate * area));
  detail::require(m >= 1, "apply_mask: mask_rate ", mask_rate,
                  " selects zero pixels on a ", h, "x", w, " patch");

  MaskBatch out;
  out.patch = patch;
  out.coords.reserve(static_cast<std::size_t>(m));
  out.targets.reserve(static_cast<std::size_t>(m));
  out.replacement_values.reserve(static_cast<std::size_t>(m));
  out.source_offsets.reserve(static_cast<std::size_t>(m));

  // Partial Fisher-Yates: the first m entries are a uniform sample without
  // replacement.
  std::vector<int> idx(static_cast<std::size_t>(area));
  std::iota(idx.begin(), idx.end(), 0);
  for (int j = 0; j < m; ++j) {
    const int k = j + rng.uniform_int(area - j);
    std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(k)]);
    const int flat = idx[static_cast<std::size_t>(j)];
    out.coords.emplace_back(flat / w, flat % w);
  }

  const int half = neighborhood / 2;
  for (const auto& [r, c] : out.coords) {
    const int r0 = std::max(0, r - half), r1 = std::min(h - 1, r + half);
    const int c0 = std::max(0, c - half), c1 = std::min(w - 1, c + half);
    const int cols = c1 - c0 + 1;
    const int cells = (r1 - r0 + 1) * cols;
    const int center = (r - r0) * cols + (c - c0);
    int pick = rng.uniform_int(cells - 1);
    if (pick >= center) ++pick;  // skip the center cell
    const int sr = r0 + pick / cols;
    const int sc = c0 + pick % cols;
    out.targets.push_back(patch.at(r, c));
    out.replacement_values.push_back(patch.at(sr, sc));
    out.source_offsets.emplace_back(sr - r, sc - c);
  }
  for (std::size_t j = 0; j < out.coords.size(); ++j)
    out.patch.at(out.coords[j].first, out.coords[j].second) =
        out.replacement_values[j];
  return out;
}

// (1/|M|) sum over masked coords of (s_hat - x)^2, plus
// lambda * mean(max(0, -z_hat)) over all pixels. lambda == 0 builds no
// penalty node at all, keeping that path identical to a model without it.
//
// Both terms are measured in standardized units (residuals and z_hat divided
// by stdev; the penalty keeps its zero point so it still punishes physically
// negative values). This makes the loss invariant under joint intensity
// rescaling of data and stats, and puts lambda = 1 on a scale where the
// penalty actually competes with the data term regardless of intensity range.
template <class T>
Tensor<T> training_loss(Tape<T>& tape, const Tensor<T>& s_hat,
                        const Tensor<T>& z_hat, const MaskBatch& mask,
                        T lambda, T stdev = T(1)) {
  detail::require(!mask.coords.empty(), "training_loss: empty mask");
  detail::require(s_hat.shape().size() == 4 && s_hat.dim(0) == 1 &&
                      s_hat.dim(1) == 1 &&
                      s_hat.dim(2) == mask.patch.height &&
                      s_hat.dim(3) == mask.patch.width,
                  "training_loss: prediction shape ", shape_str(s_hat.shape()),
                  " does not match patch ", mask.patch.height, "x",
                  mask.patch.width);
  const int w = mask.patch.width;
  std::vector<std::int64_t> flat;
  std::vector<T> targets;
  flat.reserve(mask.coords.size());
  targets.reserve(mask.coords.size());
  for (std::size_t j = 0; j < mask.coords.size(); ++j) {
    flat.push_back(static_cast<std::int64_t>(mask.coords[j].first) * w +
                   mask.coords[j].second);
    targets.push_back(static_cast<T>(mask.targets[j]));
  }
  detail::require(stdev > T(0), "training_loss: stdev must be > 0");
  auto mse = masked_mse(tape, s_hat, flat, targets);
  if (stdev != T(1)) mse = scale(tape, mse, T(1) / (stdev * stdev));
  if (lambda == T(0)) return mse;
  auto penalty = mean_negative_part(tape, z_hat);
  return add(tape, mse, scale(tape, penalty, lambda / stdev));
}

template <class T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  long step_count() const { return steps_; }

  void step(UNetParams<T>& params) {
    if (m_.empty()) {
      for (const auto& [name, t] : params.tensors) {
        m_.emplace_back(t.size(), T(0));
        v_.emplace_back(t.size(), T(0));
      }
    }
    ++steps_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    const T c1 = T(1) - static_cast<T>(std::pow(beta1_, static_cast<double>(steps_)));
    const T c2 = T(1) - static_cast<T>(std::pow(beta2_, static_cast<double>(steps_)));
    for (std::size_t p = 0; p < params.tensors.size(); ++p) {
      auto& [name, t] = params.tensors[p];
      auto& val = t.value();
      auto& g = t.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < val.size(); ++i) {
        detail::require(std::isfinite(g[i]), "adam_step: non-finite gradient in '",
                        name, "' at step ", steps_);
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mh = m[i] / c1;
        const T vh = v[i] / c2;
        val[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double wall_seconds = 0;
};

struct TrainResult {
  UNetParams<float> final_params;
  UNetParams<float> best_params;
  int best_epoch = 0;  // 0 when no validation was run
  ModelConfig model;
  std::vector<EpochRecord> history;
};

namespace detail {

inline UNetParams<float> clone_params(const UNetParams<float>& p) {
  UNetParams<float> out;
  out.tensors.reserve(p.tensors.size());
  for (const auto& [name, t] : p.tensors) {
    auto c = Tensor<float>::zeros(t.shape());
    c.value() = t.value();
    out.tensors.emplace_back(name, c);
  }
  return out;
}

}  // namespace detail

// Mean/population-std over every noisy training pixel; the standardization
// stats baked into the model config.
inline std::pair<float, float> input_stats(const std::vector<Image>& images) {
  double sum = 0, sum2 = 0;
  std::size_t n = 0;
  for (const auto& img : images)
    for (float v : img.pixels) {
      sum += v;
      sum2 += static_cast<double>(v) * v;
      ++n;
    }
  detail::require(n > 0, "input_stats: no pixels");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(sum2 / static_cast<double>(n) - mean * mean, 0.0);
  const double sd = std::sqrt(var);
  detail::require(sd > 0, "input_stats: constant input (std would be 0)");
  return {static_cast<float>(mean), static_cast<float>(sd)};
}

inline constexpr int kValPatches = 20;

// One full training run. Per optimizer step: virtual_batch patches are
// sampled, masked, and their loss gradients accumulated (each scaled by
// 1/virtual_batch), then a single Adam update is applied. Validation loss is
// the same masked loss on a fixed set of patches drawn once up front.
inline TrainResult train(
    const DatasetManifest& manifest, const TrainConfig& cfg,
    const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  validate_config(cfg);
  const auto t_start = std::chrono::steady_clock::now();

  const std::vector<Image> pool = load_images(manifest, manifest.train_noisy);
  detail::require(!pool.empty(), "train: dataset has no training images");
  for (std::size_t i = 0; i < pool.size(); ++i)
    detail::require(pool[i].height >= cfg.patch && pool[i].width >= cfg.patch,
                    "train: image ", manifest.train_noisy[i], " is ",
                    pool[i].height, "x", pool[i].width,
                    ", smaller than patch ", cfg.patch);

  TrainResult result;
  const auto [mean, sd] = input_stats(pool);
  result.model.mean = mean;
  result.model.stdev = sd;
  if (cfg.psf_sigma)
    result.model.psf =
        gaussian_psf(*cfg.psf_sigma, psf_default_size(*cfg.psf_sigma));

  auto params = init_params(cfg.seed);
  params.set_requires_grad(true);
  Adam<float> adam(cfg.lr);

  RandomStream data_rng(cfg.seed, "data");
  RandomStream mask_rng(cfg.seed, "mask");

  // Fixed validation patches (empty when the dataset has no val split).
  std::vector<MaskBatch> val_set;
  if (manifest.n_val > 0) {
    const std::vector<Image> val_pool = load_images(manifest, manifest.val_noisy);
    for (std::size_t i = 0; i < val_pool.size(); ++i)
      detail::require(val_pool[i].height >= cfg.patch &&
                          val_pool[i].width >= cfg.patch,
                      "train: image ", manifest.val_noisy[i], " is smaller than patch ",
                      cfg.patch);
    RandomStream val_rng(cfg.seed, "val");
    for (int i = 0; i < kValPatches; ++i) {
      Image p = sample_patch(val_pool, manifest.val_noisy, cfg.patch, val_rng);
      val_set.push_back(
          apply_mask(p, cfg.mask_rate, cfg.mask_neighborhood, val_rng));
    }
  }

  const float lambda = static_cast<float>(cfg.lambda_pos);
  const float inv_vb = 1.0f / static_cast<float>(cfg.virtual_batch);
  double best_val = std::numeric_limits<double>::infinity();
  result.best_epoch = 0;

  auto patch_to_tensor = [](const Image& p) {
    auto t = Tensor<float>::zeros({1, 1, p.height, p.width});
    t.value() = p.pixels;
    return t;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      params.zero_grad();
      double step_loss = 0;
      for (int b = 0; b < cfg.virtual_batch; ++b) {
        Image p = sample_patch(pool, manifest.train_noisy, cfg.patch, data_rng);
        MaskBatch mb =
            apply_mask(p, cfg.mask_rate, cfg.mask_neighborhood, mask_rng);
        Tape<float> tape;
        auto x = patch_to_tensor(mb.patch);
        auto out = forward(tape, x, params, result.model);
        auto loss = training_loss(tape, out.s_hat, out.z_hat, mb, lambda, result.model.stdev);
        step_loss += static_cast<double>(loss.item());
        tape.backward(scale(tape, loss, inv_vb));
      }
      adam.step(params);
      epoch_loss += step_loss / cfg.virtual_batch;
    }
    epoch_loss /= cfg.steps_per_epoch;

    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val_set.empty()) {
      params.set_requires_grad(false);
      double acc = 0;
      for (const auto& mb : val_set) {
        Tape<float> tape;
        auto x = patch_to_tensor(mb.patch);
        auto out = forward(tape, x, params, result.model);
        auto loss = training_loss(tape, out.s_hat, out.z_hat, mb, lambda, result.model.stdev);
        acc += static_cast<double>(loss.item());
      }
      params.set_requires_grad(true);
      val_loss = acc / static_cast<double>(val_set.size());
      if (val_loss < best_val) {
        best_val = val_loss;
        result.best_epoch = epoch;
        result.best_params = detail::clone_params(params);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss;
    rec.val_loss = val_loss;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  params.set_requires_grad(false);
  result.final_params = std::move(params);
  if (result.best_epoch == 0)
    result.best_params = detail::clone_params(result.final_params);
  return result;
}

// ---- run directory orchestration ----------------------------------------

inline ConfigEcho train_config_echo(const std::string& data_dir,
                                    const TrainConfig& cfg, int threads) {
  ConfigEcho e;
  e.emplace_back("data", data_dir);
  e.emplace_back("psf_sigma",
                 cfg.psf_sigma ? detail::fmt_float(*cfg.psf_sigma) : "none");
  e.emplace_back("lambda", detail::fmt_float(cfg.lambda_pos));
  e.emplace_back("epochs", std::to_string(cfg.epochs));
  e.emplace_back("steps", std::to_string(cfg.steps_per_epoch));
  e.emplace_back("virtual_batch", std::to_string(cfg.virtual_batch));
  e.emplace_back("patch", std::to_string(cfg.patch));
  e.emplace_back("mask_rate", detail::fmt_float(cfg.mask_rate));
  e.emplace_back("lr", detail::fmt_float(cfg.lr));
  e.emplace_back("seed", std::to_string(cfg.seed));
  e.emplace_back("threads", std::to_string(threads));
  return e;
}

inline std::string echo_to_text(const ConfigEcho& e) {
  std::string out;
  for (const auto& [k, v] : e) out += k + "=" + v + "\n";
  return out;
}

inline ConfigEcho parse_echo_text(const std::string& text) {
  ConfigEcho e;
  for (const auto& line : detail::split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    detail::require(eq != std::string::npos,
                    "config echo: expected key=value, got '", line, "'");
    e.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return e;
}

struct RunPaths {
  std::string dir;
  std::string config() const { return dir + "/config.txt"; }
  std::string metrics() const { return dir + "/metrics.csv"; }
  std::string best() const { return dir + "/checkpoint_best.dckp"; }
  std::string final() const { return dir + "/checkpoint_final.dckp"; }
};

// A run directory is complete when its config echo matches and the final
// checkpoint exists; completed runs can be reused instead of retrained.
inline bool run_is_complete(const RunPaths& rp, const std::string& echo_text) {
  namespace fs = std::filesystem;
  if (!fs::exists(rp.config()) || !fs::exists(rp.final()) ||
      !fs::exists(rp.best()))
    return false;
  std::ifstream f(rp.config());
  std::string existing((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  return existing == echo_text;
}

// Trains into a run directory: config echo first, metrics streamed per epoch,
// best + final checkpoints written atomically. Re-running over an existing
// directory with a different config is a hard error.
inline TrainResult run_training(const DatasetManifest& manifest,
                                const TrainConfig& cfg, const RunPaths& rp,
                                int threads = 1) {
  namespace fs = std::filesystem;
  fs::create_directories(rp.dir);
  const std::string echo_text = echo_to_text(train_config_echo(manifest.dir, cfg, threads));
  if (fs::exists(rp.config())) {
    std::ifstream f(rp.config());
    std::string existing((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
    detail::require(existing == echo_text, rp.config(),
                    ": existing config does not match the requested run; "
                    "refusing to overwrite");
  } else {
    std::ofstream f(rp.config(), std::ios::trunc);
    detail::require(f.good(), rp.config(), ": cannot open for writing");
    f << echo_text;
    f.close();
    detail::require(f.good(), rp.config(), ": write failed");
  }

  std::ofstream csv(rp.metrics(), std::ios::trunc);
  detail::require(csv.good(), rp.metrics(), ": cannot open for writing");
  csv << "epoch,train_loss,val_loss,wall_seconds\n";
  csv.flush();

  auto result = train(manifest, cfg, [&csv](const EpochRecord& r) {
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_seconds);
    csv << r.epoch << "," << detail::fmt_float(r.train_loss) << ","
        << detail::fmt_float(r.val_loss) << "," << wall << "\n";
    csv.flush();
  });
  csv.close();

  const ConfigEcho extra = train_config_echo(manifest.dir, cfg, threads);
  save_checkpoint(rp.best(), result.best_params, result.model, extra);
  save_checkpoint(rp.final(), result.final_params, result.model, extra);
  return result;
}

}  // namespace deconoise
