#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "deconoise/evaluate.hpp"

namespace deconoise {

struct ExperimentRow {
  std::string experiment;
  std::string method;     // ours | ours_no_pos | n2v | n2v_conv | noisy_input
  std::string psf_sigma;  // formatted sigma or "none"
  long long seed = 0;
  double psnr_db = 0;
  double negative_fraction = 0;
  double wall_seconds = 0;
};

inline std::string experiment_csv_text(const std::vector<ExperimentRow>& rows) {
  std::string out =
      "# psnr range convention: per-image ground-truth max minus min\n"
      "experiment,method,psf_sigma,seed,psnr_db,negative_fraction,wall_seconds\n";
  for (const auto& r : rows) {
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_seconds);
    out += r.experiment + "," + r.method + "," + r.psf_sigma + "," +
           std::to_string(r.seed) + "," + detail::fmt_float(r.psnr_db) + "," +
           detail::fmt_float(r.negative_fraction) + "," + wall + "\n";
  }
  return out;
}

inline void write_experiment_csv(const std::string& path,
                                 const std::vector<ExperimentRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  detail::require(f.good(), path, ": cannot open for writing");
  f << experiment_csv_text(rows);
  f.close();
  detail::require(f.good(), path, ": write failed");
}

struct RunnerContext {
  DatasetManifest manifest;
  TrainConfig base;      // patch/epochs/lr/... shared by every run
  std::string run_root;  // training run directories live here
  int threads = 1;
};

// Canonical run-directory name, shared between experiments so equivalent
// runs are trained once and reused.
inline RunPaths run_paths_for(const std::string& root,
                              const std::optional<float>& psf_sigma,
                              double lambda, std::uint64_t seed) {
  const std::string sig = psf_sigma ? detail::fmt_float(*psf_sigma) : "none";
  RunPaths rp;
  rp.dir = root + "/run_psf" + sig + "_lam" + detail::fmt_float(lambda) +
           "_seed" + std::to_string(seed);
  return rp;
}

namespace detail {

inline double last_wall_seconds(const std::string& metrics_csv) {
  std::ifstream f(metrics_csv);
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty() && line.find("epoch") != 0) last = line;
  if (last.empty()) return 0.0;
  const auto cells = split(last, ',');
  if (cells.size() != 4) return 0.0;
  return std::strtod(cells[3].c_str(), nullptr);
}

}  // namespace detail

struct TrainedRun {
  RunPaths paths;
  Checkpoint best;
  double train_wall_seconds = 0;
  bool reused = false;
};

// Train unless the directory already holds a completed run with the exact
// same config echo.
inline TrainedRun ensure_run(const RunnerContext& ctx, const TrainConfig& cfg) {
  TrainedRun out;
  out.paths = run_paths_for(ctx.run_root, cfg.psf_sigma, cfg.lambda_pos, cfg.seed);
  const std::string echo =
      echo_to_text(train_config_echo(ctx.manifest.dir, cfg, ctx.threads));
  if (run_is_complete(out.paths, echo)) {
    out.reused = true;
    out.train_wall_seconds = detail::last_wall_seconds(out.paths.metrics());
  } else {
    auto result = run_training(ctx.manifest, cfg, out.paths, ctx.threads);
    out.train_wall_seconds =
        result.history.empty() ? 0.0 : result.history.back().wall_seconds;
  }
  out.best = load_checkpoint(out.paths.best());
  return out;
}

struct EvalSummary {
  double mean_psnr = 0;
  double mean_negative_fraction = 0;
};

// Mean PSNR of the denoised estimate against the ground-truth signal over the
// validation images; PSNRs are averaged in dB with per-image ranges.
inline EvalSummary evaluate_checkpoint(const Checkpoint& ck,
                                       const DatasetManifest& m) {
  detail::require(m.n_val > 0, "evaluate: dataset has no validation images");
  EvalSummary s;
  for (int i = 0; i < m.n_val; ++i) {
    const Image noisy = load_image(m.path(m.val_noisy[static_cast<std::size_t>(i)]));
    const Image gt = load_image(m.path(m.val_signal[static_cast<std::size_t>(i)]));
    const DenoiseResult r = denoise(ck, noisy);
    s.mean_psnr += psnr(r.s_hat, gt);
    s.mean_negative_fraction += negative_fraction(r.z_hat);
  }
  s.mean_psnr /= m.n_val;
  s.mean_negative_fraction /= m.n_val;
  return s;
}

inline EvalSummary evaluate_n2v_conv(const Checkpoint& n2v_ck,
                                     const PsfKernel& psf,
                                     const DatasetManifest& m) {
  detail::require(m.n_val > 0, "evaluate: dataset has no validation images");
  EvalSummary s;
  for (int i = 0; i < m.n_val; ++i) {
    const Image noisy = load_image(m.path(m.val_noisy[static_cast<std::size_t>(i)]));
    const Image gt = load_image(m.path(m.val_signal[static_cast<std::size_t>(i)]));
    const Image smoothed = baseline_n2v_conv(n2v_ck, psf, noisy);
    s.mean_psnr += psnr(smoothed, gt);
    s.mean_negative_fraction += negative_fraction(smoothed);
  }
  s.mean_psnr /= m.n_val;
  s.mean_negative_fraction /= m.n_val;
  return s;
}

inline EvalSummary evaluate_noisy_input(const DatasetManifest& m) {
  detail::require(m.n_val > 0, "evaluate: dataset has no validation images");
  EvalSummary s;
  for (int i = 0; i < m.n_val; ++i) {
    const Image noisy = load_image(m.path(m.val_noisy[static_cast<std::size_t>(i)]));
    const Image gt = load_image(m.path(m.val_signal[static_cast<std::size_t>(i)]));
    s.mean_psnr += psnr(noisy, gt);
    s.mean_negative_fraction += negative_fraction(noisy);
  }
  s.mean_psnr /= m.n_val;
  s.mean_negative_fraction /= m.n_val;
  return s;
}

inline void write_montages(const Checkpoint& ck, const DatasetManifest& m,
                           const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < m.n_val; ++i) {
    const Image noisy = load_image(m.path(m.val_noisy[static_cast<std::size_t>(i)]));
    const Image gt = load_image(m.path(m.val_signal[static_cast<std::size_t>(i)]));
    const DenoiseResult r = denoise(ck, noisy);
    char name[64];
    std::snprintf(name, sizeof name, "val_%03d.pgm", i);
    save_pgm16((std::filesystem::path(out_dir) / name).string(),
               montage_row({noisy, r.s_hat, r.z_hat, gt}));
  }
}

// Trains and evaluates ours (lambda 1), ours without the positivity term,
// the PSF-free baseline, and its PSF-smoothed variant, per seed, plus the
// noisy-input reference rows.
inline std::vector<ExperimentRow> run_comparison(
    const RunnerContext& ctx, const std::vector<std::uint64_t>& seeds,
    const std::string& out_csv) {
  detail::require(ctx.base.psf_sigma.has_value(),
                  "run_comparison: base config must carry the PSF sigma");
  const float sigma = *ctx.base.psf_sigma;
  const std::string sigma_txt = detail::fmt_float(sigma);
  const PsfKernel psf = gaussian_psf(sigma, psf_default_size(sigma));
  std::vector<ExperimentRow> rows;

  const EvalSummary noisy = evaluate_noisy_input(ctx.manifest);
  for (std::uint64_t seed : seeds)
    rows.push_back({"comparison", "noisy_input", "none",
                    static_cast<long long>(seed), noisy.mean_psnr,
                    noisy.mean_negative_fraction, 0.0});

  for (std::uint64_t seed : seeds) {
    TrainConfig ours_cfg = ctx.base;
    ours_cfg.seed = seed;
    ours_cfg.lambda_pos = 1.0;
    TrainConfig nopos_cfg = ours_cfg;
    nopos_cfg.lambda_pos = 0.0;
    TrainConfig n2v_cfg = ours_cfg;
    n2v_cfg.lambda_pos = 0.0;
    n2v_cfg.psf_sigma.reset();

    const TrainedRun ours = ensure_run(ctx, ours_cfg);
    EvalSummary s = evaluate_checkpoint(ours.best, ctx.manifest);
    rows.push_back({"comparison", "ours", sigma_txt,
                    static_cast<long long>(seed), s.mean_psnr,
                    s.mean_negative_fraction, ours.train_wall_seconds});
    write_montages(ours.best, ctx.manifest, ours.paths.dir + "/montages");

    const TrainedRun nopos = ensure_run(ctx, nopos_cfg);
    s = evaluate_checkpoint(nopos.best, ctx.manifest);
    rows.push_back({"comparison", "ours_no_pos", sigma_txt,
                    static_cast<long long>(seed), s.mean_psnr,
                    s.mean_negative_fraction, nopos.train_wall_seconds});

    const TrainedRun n2v = ensure_run(ctx, n2v_cfg);
    s = evaluate_checkpoint(n2v.best, ctx.manifest);
    rows.push_back({"comparison", "n2v", "none", static_cast<long long>(seed),
                    s.mean_psnr, s.mean_negative_fraction,
                    n2v.train_wall_seconds});

    s = evaluate_n2v_conv(n2v.best, psf, ctx.manifest);
    rows.push_back({"comparison", "n2v_conv", sigma_txt,
                    static_cast<long long>(seed), s.mean_psnr,
                    s.mean_negative_fraction, 0.0});
  }
  write_experiment_csv(out_csv, rows);
  return rows;
}

inline std::vector<ExperimentRow> run_positivity_ablation(
    const RunnerContext& ctx, const std::vector<std::uint64_t>& seeds,
    const std::string& out_csv) {
  detail::require(ctx.base.psf_sigma.has_value(),
                  "run_positivity_ablation: base config must carry the PSF sigma");
  const std::string sigma_txt = detail::fmt_float(*ctx.base.psf_sigma);
  std::vector<ExperimentRow> rows;
  for (std::uint64_t seed : seeds) {
    for (double lambda : {1.0, 0.0}) {
      TrainConfig cfg = ctx.base;
      cfg.seed = seed;
      cfg.lambda_pos = lambda;
      const TrainedRun run = ensure_run(ctx, cfg);
      const EvalSummary s = evaluate_checkpoint(run.best, ctx.manifest);
      rows.push_back({"positivity_ablation",
                      lambda == 0.0 ? "ours_no_pos" : "ours", sigma_txt,
                      static_cast<long long>(seed), s.mean_psnr,
                      s.mean_negative_fraction, run.train_wall_seconds});
    }
  }
  write_experiment_csv(out_csv, rows);
  return rows;
}

// One training per (sigma, seed); sigma is the PSF assumed by the model, the
// dataset stays fixed.
inline std::vector<ExperimentRow> run_psf_sweep(
    const RunnerContext& ctx, const std::vector<float>& sigmas,
    const std::vector<std::uint64_t>& seeds, const std::string& out_csv) {
  std::vector<ExperimentRow> rows;
  for (float sigma : sigmas) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = ctx.base;
      cfg.seed = seed;
      cfg.psf_sigma = sigma;
      const TrainedRun run = ensure_run(ctx, cfg);
      const EvalSummary s = evaluate_checkpoint(run.best, ctx.manifest);
      rows.push_back({"psf_sweep", "ours", detail::fmt_float(sigma),
                      static_cast<long long>(seed), s.mean_psnr,
                      s.mean_negative_fraction, run.train_wall_seconds});
    }
  }
  write_experiment_csv(out_csv, rows);
  return rows;
}

}  // namespace deconoise
