#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "catch2/catch_amalgamated.hpp"
#include "deconoise/deconoise.hpp"

using namespace deconoise;
namespace fs = std::filesystem;

namespace {

const std::string& cli_path() {
  static const std::string p = [] {
#ifdef DECONOISE_CLI_PATH
    return std::string(DECONOISE_CLI_PATH);
#else
    const char* env = std::getenv("DECONOISE_CLI_PATH");
    REQUIRE(env != nullptr);
    return std::string(env);
#endif
  }();
  return p;
}

fs::path fresh_dir(const char* name) {
  fs::path p = fs::path("tmp_test_artifacts") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

struct CmdResult {
  int code = -1;
  std::string out;  // stdout and stderr combined
};

CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  fs::create_directories("tmp_test_artifacts");
  const std::string cap =
      "tmp_test_artifacts/cli_capture_" + std::to_string(counter++) + ".txt";
  std::string cmd;
  if (!env_prefix.empty()) cmd += env_prefix + " ";
  cmd += cli_path() + " " + args + " > " + cap + " 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = slurp(cap);
  return r;
}

// One 96x96 dataset shared by the cases below; regenerated per process run.
const DatasetManifest& shared_dataset() {
  static const DatasetManifest m = [] {
    const fs::path dir = fs::absolute(fresh_dir("cli_data96"));
    const CmdResult r = run_cli(
        "generate --out " + dir.string() +
        " --kind blobs --n-train 2 --n-val 1 --size 96 --psf-sigma 1 "
        "--noise gauss:20 --seed 3");
    REQUIRE(r.code == 0);
    return load_manifest(dir.string());
  }();
  return m;
}

}  // namespace

TEST_CASE("help exits zero and lists the subcommands") {
  const CmdResult r = run_cli("--help");
  CHECK(r.code == 0);
  for (const char* verb : {"generate", "train", "denoise", "evaluate",
                           "sweep-psf", "ablate-positivity"})
    CHECK(r.out.find(verb) != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli("").code == 2);
  const CmdResult unknown = run_cli("train --data x --out y --frobnicate");
  CHECK(unknown.code == 2);
  CHECK(unknown.out.find("error:") != std::string::npos);
  CHECK(unknown.out.find("generate") != std::string::npos);  // usage text
  CHECK(run_cli("generate").code == 2);                      // missing --out
  CHECK(run_cli("sweep-psf --data x --sigmas 1 --seeds 0").code == 2);
}

TEST_CASE("runtime failures exit with code 1") {
  const CmdResult r = run_cli(
      "denoise --model no_such_file.dckp --in also_missing.ntf "
      "--out-denoised a.ntf --out-deconv b.ntf");
  CHECK(r.code == 1);
  CHECK(r.out.find("error:") != std::string::npos);

  const fs::path out = fs::absolute(fresh_dir("cli_bad_seeds")) / "rows.csv";
  const CmdResult ab = run_cli("ablate-positivity --data " +
                               shared_dataset().dir + " --seeds x --out " +
                               out.string());
  CHECK(ab.code == 1);
  CHECK(ab.out.find("error:") != std::string::npos);
}

TEST_CASE("generate accepts empty splits") {
  const fs::path dir = fs::absolute(fresh_dir("cli_empty_data"));
  const CmdResult r = run_cli("generate --out " + dir.string() +
                              " --kind blobs --n-train 0 --n-val 0 --size 64 "
                              "--psf-sigma 1 --noise none --seed 0");
  CHECK(r.code == 0);
  CHECK(r.out.find("wrote 0 train + 0 val") != std::string::npos);
  const DatasetManifest m = load_manifest(dir.string());
  CHECK(m.n_train == 0);
  CHECK(m.n_val == 0);
}

TEST_CASE("train with zero epochs echoes the default config byte-for-byte") {
  const DatasetManifest& m = shared_dataset();
  const fs::path out = fs::absolute(fresh_dir("cli_run_defaults"));
  const CmdResult r = run_cli("train --data " + m.dir + " --out " +
                              out.string() + " --epochs 0");
  CHECK(r.code == 0);
  CHECK(r.out.find("wrote initialization checkpoints") != std::string::npos);

  const std::string golden = "data=" + m.dir +
                             "\n"
                             "psf_sigma=1\n"
                             "lambda=1\n"
                             "epochs=0\n"
                             "steps=10\n"
                             "virtual_batch=20\n"
                             "patch=96\n"
                             "mask_rate=0.03125\n"
                             "lr=0.001\n"
                             "seed=0\n"
                             "threads=1\n";
  CHECK(slurp((out / "config.txt").string()) == golden);
  CHECK(slurp((out / "metrics.csv").string()) ==
        "epoch,train_loss,val_loss,wall_seconds\n");
  CHECK(fs::exists(out / "checkpoint_best.dckp"));
  CHECK(fs::exists(out / "checkpoint_final.dckp"));

  // same directory, different flags: hard error, nothing clobbered
  const CmdResult clash = run_cli("train --data " + m.dir + " --out " +
                                  out.string() + " --epochs 0 --lr 0.002");
  CHECK(clash.code == 1);
  CHECK(clash.out.find("refusing to overwrite") != std::string::npos);
  CHECK(slurp((out / "config.txt").string()) == golden);
}

TEST_CASE("train echoes the baseline form and the threads fallback") {
  const DatasetManifest& m = shared_dataset();
  const fs::path out = fs::absolute(fresh_dir("cli_run_n2v"));
  const CmdResult r =
      run_cli("train --data " + m.dir + " --out " + out.string() +
                  " --epochs 0 --psf-sigma none --lambda 0 --seed 5",
              "DECONOISE_THREADS=2");
  CHECK(r.code == 0);
  const std::string echo = slurp((out / "config.txt").string());
  CHECK(echo.find("psf_sigma=none\n") != std::string::npos);
  CHECK(echo.find("lambda=0\n") != std::string::npos);
  CHECK(echo.find("seed=5\n") != std::string::npos);
  CHECK(echo.find("threads=2\n") != std::string::npos);

  // an explicit --threads beats the environment
  const fs::path out2 = fs::absolute(fresh_dir("cli_run_threads_flag"));
  const CmdResult r2 =
      run_cli("train --data " + m.dir + " --out " + out2.string() +
                  " --epochs 0 --threads 1",
              "DECONOISE_THREADS=2");
  CHECK(r2.code == 0);
  CHECK(slurp((out2 / "config.txt").string()).find("threads=1\n") !=
        std::string::npos);
}

TEST_CASE("denoise writes both estimates matching the library") {
  const DatasetManifest& m = shared_dataset();
  const fs::path run = fs::absolute(fresh_dir("cli_run_denoise"));
  REQUIRE(run_cli("train --data " + m.dir + " --out " + run.string() +
                  " --epochs 0")
              .code == 0);
  const std::string model = (run / "checkpoint_final.dckp").string();
  const std::string in = m.path(m.val_noisy[0]);
  const fs::path out = fs::absolute(fresh_dir("cli_denoise_out"));
  const std::string s_path = (out / "s.ntf").string();
  const std::string z_path = (out / "z.ntf").string();
  const CmdResult r = run_cli("denoise --model " + model + " --in " + in +
                              " --out-denoised " + s_path + " --out-deconv " +
                              z_path);
  CHECK(r.code == 0);

  const Checkpoint ck = load_checkpoint(model);
  const DenoiseResult want = denoise(ck, load_image(in));
  CHECK(load_image(s_path).pixels == want.s_hat.pixels);
  CHECK(load_image(z_path).pixels == want.z_hat.pixels);

  const std::string sp = (out / "s.pgm").string();
  const std::string zp = (out / "z.pgm").string();
  REQUIRE(run_cli("denoise --model " + model + " --in " + in +
                  " --out-denoised " + sp + " --out-deconv " + zp + " --pgm")
              .code == 0);
  CHECK(slurp(sp).rfind("P5\n96 96\n65535\n", 0) == 0);
  CHECK(slurp(zp).rfind("P5\n96 96\n65535\n", 0) == 0);
}

TEST_CASE("evaluate computes a pair PSNR and a run summary") {
  const DatasetManifest& m = shared_dataset();

  const std::string pred = m.path(m.val_noisy[0]);
  const std::string gt = m.path(m.val_signal[0]);
  const CmdResult pair = run_cli("evaluate --pred " + pred + " --gt " + gt);
  CHECK(pair.code == 0);
  const double want_db = psnr(load_image(pred), load_image(gt));
  CHECK(pair.out == "psnr_db=" + detail::fmt_float(want_db) + "\n");

  const fs::path run = fs::absolute(fresh_dir("cli_run_eval"));
  REQUIRE(run_cli("train --data " + m.dir + " --out " + run.string() +
                  " --epochs 0")
              .code == 0);
  const CmdResult ev =
      run_cli("evaluate --run " + run.string() + " --data " + m.dir);
  CHECK(ev.code == 0);
  const Checkpoint ck = load_checkpoint((run / "checkpoint_best.dckp").string());
  const EvalSummary s = evaluate_checkpoint(ck, m);
  CHECK(ev.out == "mean_psnr_db=" + detail::fmt_float(s.mean_psnr) +
                      " mean_negative_fraction=" +
                      detail::fmt_float(s.mean_negative_fraction) + "\n");
  const std::string csv = slurp((run / "eval.csv").string());
  CHECK(csv.rfind("image,psnr_db,negative_fraction\n", 0) == 0);
  CHECK(csv.find(m.val_noisy[0]) != std::string::npos);
  CHECK(fs::exists(run / "montages" / "val_000.pgm"));

  // the two flag forms are mutually exclusive and both required in full
  CHECK(run_cli("evaluate --pred " + pred).code == 2);
  CHECK(run_cli("evaluate --pred " + pred + " --gt " + gt + " --run " +
                run.string() + " --data " + m.dir)
            .code == 2);
  CHECK(run_cli("evaluate").code == 2);
}
