#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "catch2/catch_amalgamated.hpp"
#include "deconoise/dataset.hpp"
#include "deconoise/evaluate.hpp"
#include "deconoise/noise.hpp"
#include "deconoise/phantoms.hpp"
#include "deconoise/psf.hpp"

using namespace deconoise;
namespace fs = std::filesystem;

namespace {

// Independent reflection fold for the oracle (iterative, not the closed form
// the implementation uses).
int reflect_fold(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

Image conv_oracle(const Image& img, const PsfKernel& psf) {
  Image out(img.height, img.width);
  const int half = psf.size / 2;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double acc = 0;
      for (int kr = 0; kr < psf.size; ++kr)
        for (int kc = 0; kc < psf.size; ++kc) {
          const int sr = reflect_fold(r + kr - half, img.height);
          const int sc = reflect_fold(c + kc - half, img.width);
          acc += static_cast<double>(psf.at(kr, kc)) * img.at(sr, sc);
        }
      out.at(r, c) = static_cast<float>(acc);
    }
  return out;
}

Image random_image(int h, int w, std::uint64_t seed, float lo = 0.0f,
                   float hi = 255.0f) {
  RandomStream rng(seed, "data");
  Image img(h, w);
  for (auto& v : img.pixels)
    v = lo + static_cast<float>(rng.uniform()) * (hi - lo);
  return img;
}

fs::path fresh_dir(const char* name) {
  fs::path p = fs::path("tmp_test_artifacts") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("gaussian_psf with sigma 0 is the delta kernel") {
  auto k = gaussian_psf(0.0f, 5);
  REQUIRE(k.size == 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(k.at(r, c) == ((r == 2 && c == 2) ? 1.0f : 0.0f));
  CHECK(is_delta(k));
}

TEST_CASE("gaussian_psf is symmetric, non-negative, and normalized") {
  auto k = gaussian_psf(1.0f, 5);
  double sum = 0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      CHECK(k.at(r, c) >= 0.0f);
      CHECK(k.at(r, c) == k.at(c, r));           // transpose
      CHECK(k.at(r, c) == k.at(4 - r, c));       // vertical flip
      CHECK(k.at(r, c) == k.at(r, 4 - c));       // horizontal flip
      CHECK(k.at(r, c) == k.at(4 - c, 4 - r));   // 90 degree rotation
      sum += k.at(r, c);
    }
  CHECK(sum == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("gaussian_psf center weight matches direct evaluation") {
  auto k = gaussian_psf(1.0f, 5);
  double norm = 0;
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx)
      norm += std::exp(-(dx * dx + dy * dy) / 2.0);
  CHECK(k.at(2, 2) == Catch::Approx(1.0 / norm).margin(1e-6));
}

TEST_CASE("gaussian_psf rejects even sizes") {
  CHECK_THROWS_WITH(gaussian_psf(1.0f, 4),
                    Catch::Matchers::ContainsSubstring("odd"));
}

TEST_CASE("psf_default_size covers three standard deviations") {
  CHECK(psf_default_size(0.0f) == 1);
  CHECK(psf_default_size(0.1f) == 3);
  CHECK(psf_default_size(1.0f) == 7);
  CHECK(psf_default_size(1.5f) == 11);
  CHECK(psf_default_size(2.0f) == 13);
}

TEST_CASE("convolve_psf with a delta kernel returns the image unchanged") {
  auto img = random_image(9, 13, 42);
  auto out = convolve_psf(img, gaussian_psf(0.0f, 5));
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("convolve_psf preserves constant images") {
  Image img(12, 12);
  for (auto& v : img.pixels) v = 7.5f;
  auto out = convolve_psf(img, gaussian_psf(1.2f, 7));
  for (float v : out.pixels) CHECK(v == Catch::Approx(7.5f).margin(1e-5));
}

TEST_CASE("convolve_psf matches the quadruple-loop oracle") {
  auto img = random_image(16, 16, 7);
  auto psf = gaussian_psf(1.0f, 5);
  auto got = convolve_psf(img, psf);
  auto ref = conv_oracle(img, psf);
  for (std::size_t i = 0; i < ref.pixels.size(); ++i)
    CHECK(got.pixels[i] == Catch::Approx(ref.pixels[i]).margin(1e-5));
}

TEST_CASE("convolve_psf preserves total mass of zero-border images") {
  Image img = generate_phantom(PhantomKind::blobs, 64, 3);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (r < 6 || r >= 58 || c < 6 || c >= 58) img.at(r, c) = 0.0f;
  double before = 0, after = 0;
  auto out = convolve_psf(img, gaussian_psf(1.0f, 5));
  for (float v : img.pixels) before += v;
  for (float v : out.pixels) after += v;
  REQUIRE(before > 0);
  CHECK(std::abs(after - before) / before < 1e-4);
}

TEST_CASE("convolve_psf commutes with constant offsets") {
  auto img = random_image(16, 16, 9);
  Image shifted = img;
  for (auto& v : shifted.pixels) v += 11.0f;
  auto psf = gaussian_psf(1.0f, 5);
  auto a = convolve_psf(shifted, psf);
  auto b = convolve_psf(img, psf);
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    CHECK(a.pixels[i] == Catch::Approx(b.pixels[i] + 11.0f).margin(1e-5));
}

TEST_CASE("add_noise with kind none returns the input") {
  auto img = random_image(8, 8, 1);
  NoiseSpec spec;
  auto out = add_noise(img, spec, 5);
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("gaussian noise is zero-centered with the requested sigma") {
  Image img(512, 512);
  for (auto& v : img.pixels) v = 100.0f;
  NoiseSpec spec;
  spec.kind = NoiseKind::gaussian;
  spec.gauss_sigma = 20.0f;
  auto out = add_noise(img, spec, 77);
  double sum = 0, sq = 0;
  const double n = static_cast<double>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out.pixels[i] - img.pixels[i];
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 3.0 * 20.0 / 512.0);  // 3 sigma of the sample mean
  CHECK(std::abs(stddev - 20.0) < 0.02 * 20.0);
  // Zero-centering at the 4 sigma / sqrt(n) level over >= 1e5 pixels.
  CHECK(std::abs(mean) < 4.0 * 20.0 / std::sqrt(n));
}

TEST_CASE("add_noise is deterministic for a fixed seed") {
  auto img = random_image(16, 16, 2);
  NoiseSpec spec;
  spec.kind = NoiseKind::gaussian;
  spec.gauss_sigma = 70.0f;
  auto a = add_noise(img, spec, 123);
  auto b = add_noise(img, spec, 123);
  CHECK(a.pixels == b.pixels);
  auto c = add_noise(img, spec, 124);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("poisson path clamps negative rates and counts them") {
  Image img(4, 4);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.pixels[i] = (i < 5) ? -50.0f : 200.0f;
  NoiseSpec spec;
  spec.kind = NoiseKind::poisson_gaussian;
  spec.poisson_scale = 2.0f;
  spec.gauss_sigma = 1.0f;
  std::int64_t clamped = -1;
  auto out = add_noise(img, spec, 9, &clamped);
  CHECK(clamped == 5);
  auto again = add_noise(img, spec, 9);
  CHECK(out.pixels == again.pixels);
}

TEST_CASE("noise spec grammar round-trips") {
  CHECK(format_noise_spec(parse_noise_spec("none")) == "none");
  CHECK(format_noise_spec(parse_noise_spec("gauss:100")) == "gauss:100");
  CHECK(format_noise_spec(parse_noise_spec("pg:2,5")) == "pg:2,5");
  CHECK_THROWS(parse_noise_spec("salt:1"));
  CHECK_THROWS(parse_noise_spec("gauss:"));
}

TEST_CASE("generate_phantoms with n 0 yields an empty list") {
  CHECK(generate_phantoms(PhantomKind::blobs, 0, 64, 1).empty());
}

TEST_CASE("phantom pixels stay within display range") {
  for (auto kind :
       {PhantomKind::blobs, PhantomKind::strokes, PhantomKind::text_like}) {
    for (const auto& p : generate_phantoms(kind, 5, 64, 3)) {
      float lo = 1e9f, hi = -1e9f;
      for (float v : p.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      CHECK(lo >= 0.0f);
      CHECK(hi <= 255.0f);
      CHECK(hi > 0.0f);  // something was drawn
    }
  }
}

TEST_CASE("blob phantoms keep a sparse foreground") {
  double fg = 0;
  const auto ps = generate_phantoms(PhantomKind::blobs, 100, 64, 11);
  for (const auto& p : ps) {
    int on = 0;
    for (float v : p.pixels)
      if (v > 127.0f) ++on;
    fg += static_cast<double>(on) / static_cast<double>(p.size());
  }
  fg /= static_cast<double>(ps.size());
  CHECK(fg > 0.01);
  CHECK(fg < 0.20);
}

TEST_CASE("phantom list entries derive per-image seeds") {
  auto list = generate_phantoms(PhantomKind::text_like, 3, 64, 40);
  auto third = generate_phantom(PhantomKind::text_like, 64, 42);
  CHECK(list[2].pixels == third.pixels);
  CHECK(list[0].pixels != list[1].pixels);
}

TEST_CASE("generate_phantom rejects sizes below 64") {
  CHECK_THROWS(generate_phantom(PhantomKind::blobs, 32, 0));
}

TEST_CASE("raw tensor files round-trip bit-exactly") {
  auto dir = fresh_dir("ntf_roundtrip");
  auto img = random_image(17, 9, 5, -3.0f, 900.0f);
  img.pixels[3] = -0.0f;
  const auto path = (dir / "img.ntf").string();
  save_image(path, img);
  auto back = load_image(path);
  REQUIRE(back.height == 17);
  REQUIRE(back.width == 9);
  CHECK(std::memcmp(back.pixels.data(), img.pixels.data(),
                    4 * img.size()) == 0);
}

TEST_CASE("raw tensor header lays out magic then dims") {
  auto dir = fresh_dir("ntf_header");
  Image img(128, 128);
  const auto path = (dir / "img.ntf").string();
  save_image(path, img);
  std::ifstream in(path, std::ios::binary);
  char buf[16];
  in.read(buf, 16);
  REQUIRE(in.good());
  CHECK(std::memcmp(buf, "NTF1", 4) == 0);
  auto u32_at = [&](int off) {
    std::uint32_t v;
    std::memcpy(&v, buf + off, 4);
    return v;
  };
  CHECK(u32_at(4) == 2);    // ndim
  CHECK(u32_at(8) == 128);  // rows
  CHECK(u32_at(12) == 128);
}

TEST_CASE("corrupt tensor files fail with a byte offset") {
  auto dir = fresh_dir("ntf_corrupt");
  const auto path = (dir / "img.ntf").string();
  save_image(path, random_image(8, 8, 6));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("JUNK", 4);
  }
  CHECK_THROWS_WITH(load_image(path),
                    Catch::Matchers::ContainsSubstring("magic") &&
                        Catch::Matchers::ContainsSubstring("byte 0"));

  save_image(path, random_image(8, 8, 6));
  fs::resize_file(path, 20);  // cut inside the payload
  CHECK_THROWS_WITH(load_image(path),
                    Catch::Matchers::ContainsSubstring("truncated at byte"));
}

TEST_CASE("pgm export maps the value range to 16-bit full scale") {
  auto dir = fresh_dir("pgm");
  Image img(1, 2);
  img.pixels = {0.0f, 100.0f};
  const auto path = (dir / "img.pgm").string();
  save_pgm16(path, img);
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  CHECK(header == "P5");
  std::getline(in, header);
  CHECK(header == "2 1");
  std::getline(in, header);
  CHECK(header == "65535");
  unsigned char px[4];
  in.read(reinterpret_cast<char*>(px), 4);
  REQUIRE(in.good());
  CHECK((px[0] == 0 && px[1] == 0));          // min -> 0, big-endian
  CHECK((px[2] == 0xff && px[3] == 0xff));    // max -> 65535

  Image flat(2, 2);
  for (auto& v : flat.pixels) v = 42.0f;
  const auto cpath = (dir / "const.pgm").string();
  save_pgm16(cpath, flat);
  std::ifstream cin_(cpath, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(cin_)),
                  std::istreambuf_iterator<char>());
  const auto payload = all.substr(all.size() - 8);
  for (char b : payload) CHECK(b == 0);  // zero range maps everything to 0
}

TEST_CASE("synthesize_dataset writes one triple per image plus a manifest") {
  auto dir = fresh_dir("ds_count");
  NoiseSpec noise;
  noise.kind = NoiseKind::gaussian;
  noise.gauss_sigma = 100.0f;
  auto m = synthesize_dataset(PhantomKind::text_like, 4, 2, 64, 1.0f, noise,
                              dir.string(), 0);
  CHECK(m.train_noisy.size() == 4);
  CHECK(m.val_noisy.size() == 2);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ntf") ++files;
  CHECK(files == 18);  // phantom + signal + noisy for each of 6 images

  auto loaded = load_manifest(dir.string());
  CHECK(loaded.n_train == 4);
  CHECK(loaded.n_val == 2);
  CHECK(loaded.train_noisy == m.train_noisy);
  CHECK(loaded.psf_sigma == 1.0f);
  CHECK(format_noise_spec(loaded.noise) == "gauss:100");

  // Splits never share files.
  for (const auto& t : m.train_noisy)
    for (const auto& v : m.val_noisy) CHECK(t != v);
}

TEST_CASE("synthesize_dataset with noise none copies the signal") {
  auto dir = fresh_dir("ds_none");
  NoiseSpec noise;
  auto m = synthesize_dataset(PhantomKind::blobs, 1, 1, 64, 1.0f, noise,
                              dir.string(), 3);
  auto sig = load_image(m.path(m.train_signal[0]));
  auto noisy = load_image(m.path(m.train_noisy[0]));
  CHECK(sig.pixels == noisy.pixels);
}

TEST_CASE("injected noise variance shows up in the measured psnr") {
  auto dir = fresh_dir("ds_psnr");
  NoiseSpec noise;
  noise.kind = NoiseKind::gaussian;
  noise.gauss_sigma = 100.0f;
  auto m = synthesize_dataset(PhantomKind::text_like, 1, 1, 128, 1.0f, noise,
                              dir.string(), 1);
  auto sig = load_image(m.path(m.val_signal[0]));
  auto noisy = load_image(m.path(m.val_noisy[0]));
  float lo = sig.pixels[0], hi = sig.pixels[0];
  for (float v : sig.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double expected =
      10.0 * std::log10(static_cast<double>(hi - lo) * (hi - lo) / 1e4);
  CHECK(psnr(noisy, sig) == Catch::Approx(expected).margin(0.25));
}

TEST_CASE("manifest round-trips through its text form") {
  auto dir = fresh_dir("manifest_rt");
  NoiseSpec noise;
  noise.kind = NoiseKind::poisson_gaussian;
  noise.poisson_scale = 2.0f;
  noise.gauss_sigma = 5.0f;
  auto m = synthesize_dataset(PhantomKind::strokes, 2, 1, 64, 0.5f, noise,
                              dir.string(), 9);
  auto back = load_manifest(dir.string());
  CHECK(back.size == 64);
  CHECK(back.seed == 9);
  CHECK(back.psf_sigma == 0.5f);
  CHECK(format_phantom_kind(back.kind) == "strokes");
  CHECK(back.train_signal == m.train_signal);
  CHECK(back.val_phantom == m.val_phantom);
}

TEST_CASE("load_manifest rejects a missing listed file") {
  auto dir = fresh_dir("manifest_missing");
  NoiseSpec noise;
  auto m = synthesize_dataset(PhantomKind::blobs, 1, 1, 64, 1.0f, noise,
                              dir.string(), 2);
  fs::remove(m.path(m.train_noisy[0]));
  CHECK_THROWS_WITH(load_manifest(dir.string()),
                    Catch::Matchers::ContainsSubstring(m.train_noisy[0]));
}
