#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deconoise/deconoise.hpp"

namespace dn = deconoise;
namespace fs = std::filesystem;

namespace {

int resolve_threads(int flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("DECONOISE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<int>(v);
  }
  return 1;
}

std::optional<float> parse_psf_sigma(const std::string& s) {
  if (s == "none") return std::nullopt;
  const float v = static_cast<float>(dn::detail::parse_float(s, "--psf-sigma"));
  dn::detail::require(v >= 0.0f, "--psf-sigma: must be >= 0 or none, got ", s);
  return v;
}

std::vector<float> parse_float_list(const std::string& s, const char* what) {
  std::vector<float> out;
  for (const auto& part : dn::detail::split(s, ','))
    out.push_back(static_cast<float>(dn::detail::parse_float(part, what)));
  dn::detail::require(!out.empty(), what, ": empty list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : dn::detail::split(s, ','))
    out.push_back(static_cast<std::uint64_t>(dn::detail::parse_int(part, "--seeds")));
  dn::detail::require(!out.empty(), "--seeds: empty list");
  return out;
}

std::string runs_root_for(const std::string& out_csv) {
  const fs::path p = fs::path(out_csv).parent_path();
  return ((p.empty() ? fs::path(".") : p) / "runs").string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised denoising with an explicit PSF layer"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Synthesize a phantom/signal/noisy dataset");
  std::string gen_out, gen_kind = "text_like", gen_noise = "gauss:100";
  int gen_ntrain = 200, gen_nval = 20, gen_size = 128;
  double gen_psf_sigma = 1.0;
  std::int64_t gen_seed = 0;
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--kind", gen_kind);
  gen->add_option("--n-train", gen_ntrain);
  gen->add_option("--n-val", gen_nval);
  gen->add_option("--size", gen_size);
  gen->add_option("--psf-sigma", gen_psf_sigma);
  gen->add_option("--noise", gen_noise);
  gen->add_option("--seed", gen_seed);

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a generated dataset");
  std::string tr_data, tr_out, tr_psf = "1";
  double tr_lambda = 1.0, tr_mask_rate = 0.03125, tr_lr = 0.001;
  int tr_epochs = 200, tr_steps = 10, tr_vbatch = 20, tr_patch = 96, tr_threads = 1;
  std::int64_t tr_seed = 0;
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--psf-sigma", tr_psf);
  tr->add_option("--lambda", tr_lambda);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--steps", tr_steps);
  tr->add_option("--virtual-batch", tr_vbatch);
  tr->add_option("--patch", tr_patch);
  tr->add_option("--mask-rate", tr_mask_rate);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--seed", tr_seed);
  auto* tr_threads_opt = tr->add_option("--threads", tr_threads);

  // denoise
  auto* de = app.add_subcommand("denoise", "Run inference on a single image");
  std::string de_model, de_in, de_out_s, de_out_z;
  bool de_pgm = false;
  de->add_option("--model", de_model)->required();
  de->add_option("--in", de_in)->required();
  de->add_option("--out-denoised", de_out_s)->required();
  de->add_option("--out-deconv", de_out_z)->required();
  de->add_flag("--pgm", de_pgm);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "PSNR of a prediction, or evaluate a run directory");
  std::string ev_pred, ev_gt, ev_run, ev_data;
  ev->add_option("--pred", ev_pred);
  ev->add_option("--gt", ev_gt);
  ev->add_option("--run", ev_run);
  ev->add_option("--data", ev_data);

  // sweep-psf
  auto* sw = app.add_subcommand("sweep-psf", "Train over a list of assumed PSF sigmas");
  std::string sw_data, sw_sigmas, sw_seeds, sw_out;
  sw->add_option("--data", sw_data)->required();
  sw->add_option("--sigmas", sw_sigmas)->required();
  sw->add_option("--seeds", sw_seeds)->required();
  sw->add_option("--out", sw_out)->required();

  // ablate-positivity
  auto* ab = app.add_subcommand("ablate-positivity", "Compare lambda=1 vs lambda=0 runs");
  std::string ab_data, ab_seeds, ab_out;
  ab->add_option("--data", ab_data)->required();
  ab->add_option("--seeds", ab_seeds)->required();
  ab->add_option("--out", ab_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      auto m = dn::synthesize_dataset(
          dn::parse_phantom_kind(gen_kind), gen_ntrain, gen_nval, gen_size,
          static_cast<float>(gen_psf_sigma), dn::parse_noise_spec(gen_noise),
          gen_out, static_cast<std::uint64_t>(gen_seed));
      std::printf("wrote %d train + %d val image triples to %s\n", m.n_train,
                  m.n_val, m.dir.c_str());
    } else if (*tr) {
      const int threads = resolve_threads(tr_threads, !tr_threads_opt->empty());
      dn::set_compute_threads(threads);
      dn::TrainConfig cfg;
      cfg.lr = tr_lr;
      cfg.epochs = tr_epochs;
      cfg.steps_per_epoch = tr_steps;
      cfg.virtual_batch = tr_vbatch;
      cfg.patch = tr_patch;
      cfg.mask_rate = tr_mask_rate;
      cfg.lambda_pos = tr_lambda;
      cfg.psf_sigma = parse_psf_sigma(tr_psf);
      cfg.seed = static_cast<std::uint64_t>(tr_seed);
      const auto manifest = dn::load_manifest(tr_data);
      dn::RunPaths rp;
      rp.dir = tr_out;
      const auto result = dn::run_training(manifest, cfg, rp, threads);
      if (result.history.empty()) {
        std::printf("wrote initialization checkpoints to %s\n", tr_out.c_str());
      } else {
        const auto& last = result.history.back();
        std::printf(
            "trained %d epochs; final train_loss=%g val_loss=%g (best epoch "
            "%d); checkpoints in %s\n",
            static_cast<int>(result.history.size()), last.train_loss,
            last.val_loss, result.best_epoch, tr_out.c_str());
      }
    } else if (*de) {
      dn::set_compute_threads(resolve_threads(1, false));
      const auto ck = dn::load_checkpoint(de_model);
      const auto img = dn::load_image(de_in);
      const auto res = dn::denoise(ck, img);
      if (de_pgm) {
        dn::save_pgm16(de_out_s, res.s_hat);
        dn::save_pgm16(de_out_z, res.z_hat);
      } else {
        dn::save_image(de_out_s, res.s_hat);
        dn::save_image(de_out_z, res.z_hat);
      }
      std::printf("wrote %s and %s\n", de_out_s.c_str(), de_out_z.c_str());
    } else if (*ev) {
      const bool pair_form = !ev_pred.empty() || !ev_gt.empty();
      const bool run_form = !ev_run.empty() || !ev_data.empty();
      if (pair_form == run_form || (pair_form && (ev_pred.empty() || ev_gt.empty())) ||
          (run_form && (ev_run.empty() || ev_data.empty()))) {
        std::cerr << "error: evaluate needs either --pred and --gt, or --run and --data\n\n"
                  << app.help();
        return 2;
      }
      if (pair_form) {
        const double db = dn::psnr(dn::load_image(ev_pred), dn::load_image(ev_gt));
        std::printf("psnr_db=%s\n", dn::detail::fmt_float(db).c_str());
      } else {
        dn::set_compute_threads(resolve_threads(1, false));
        const auto manifest = dn::load_manifest(ev_data);
        dn::RunPaths rp;
        rp.dir = ev_run;
        const auto ck = dn::load_checkpoint(rp.best());
        const auto summary = dn::evaluate_checkpoint(ck, manifest);
        dn::write_montages(ck, manifest, ev_run + "/montages");
        std::string csv = "image,psnr_db,negative_fraction\n";
        for (int i = 0; i < manifest.n_val; ++i) {
          const auto noisy = dn::load_image(
              manifest.path(manifest.val_noisy[static_cast<std::size_t>(i)]));
          const auto gt = dn::load_image(
              manifest.path(manifest.val_signal[static_cast<std::size_t>(i)]));
          const auto r = dn::denoise(ck, noisy);
          csv += manifest.val_noisy[static_cast<std::size_t>(i)] + "," +
                 dn::detail::fmt_float(dn::psnr(r.s_hat, gt)) + "," +
                 dn::detail::fmt_float(dn::negative_fraction(r.z_hat)) + "\n";
        }
        std::ofstream f(ev_run + "/eval.csv", std::ios::trunc);
        dn::detail::require(f.good(), ev_run, "/eval.csv: cannot open for writing");
        f << csv;
        f.close();
        std::printf("mean_psnr_db=%s mean_negative_fraction=%s\n",
                    dn::detail::fmt_float(summary.mean_psnr).c_str(),
                    dn::detail::fmt_float(summary.mean_negative_fraction).c_str());
      }
    } else if (*sw) {
      dn::set_compute_threads(resolve_threads(1, false));
      dn::RunnerContext ctx;
      ctx.manifest = dn::load_manifest(sw_data);
      ctx.run_root = runs_root_for(sw_out);
      const auto rows = dn::run_psf_sweep(ctx, parse_float_list(sw_sigmas, "--sigmas"),
                                          parse_seed_list(sw_seeds), sw_out);
      std::printf("wrote %zu rows to %s\n", rows.size(), sw_out.c_str());
    } else if (*ab) {
      dn::set_compute_threads(resolve_threads(1, false));
      dn::RunnerContext ctx;
      ctx.manifest = dn::load_manifest(ab_data);
      ctx.base.psf_sigma = ctx.manifest.psf_sigma;
      ctx.run_root = runs_root_for(ab_out);
      const auto rows = dn::run_positivity_ablation(ctx, parse_seed_list(ab_seeds), ab_out);
      std::printf("wrote %zu rows to %s\n", rows.size(), ab_out.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
