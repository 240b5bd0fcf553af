// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lensless/datasetgen.hpp"
#include "lensless/diffusion.hpp"
#include "lensless/enhance.hpp"
#include "lensless/gradcheck_suite.hpp"
#include "lensless/metrics.hpp"
#include "lensless/optics.hpp"
#include "lensless/pipeline.hpp"
#include "lensless/recon.hpp"
#include "lensless/rng.hpp"
#include "lensless/sensor.hpp"
#include "lensless/wavelet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lensless;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path work_dir = "acceptance_work";
  std::size_t train_steps = 4000;
  bool skip_repeat = false;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
}

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

bool within(double value, double target, double rel) { return std::abs(value / target - 1.0) < rel; }

// ---------------------------------------------------------------------------

Outcome autodiff_suite() {
  const auto results = run_gradcheck_suite(1e-4, 1e-5);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed) failed += " " + r.name;
  }
  Outcome o;
  o.pass = failed.empty() && !results.empty();
  o.detail = fmt("%zu checks, max rel err %.2e (%s)", results.size(), worst, worst_name.c_str());
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

Outcome wavelet_suite() {
  Rng rng(2);
  double worst_roundtrip = 0.0, worst_parseval = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Tensor x = rng.normal_tensor({64, 64});
    const WaveletPyramid p = dwt2_multi(x, 2);
    worst_roundtrip = std::max(worst_roundtrip, max_abs_diff(idwt2_multi(p), x));
    double energy = dot(p.coarse(), p.coarse());
    for (const auto& level : p.levels) energy += dot(level.lh, level.lh) + dot(level.hl, level.hl) + dot(level.hh, level.hh);
    const double e0 = dot(x, x);
    worst_parseval = std::max(worst_parseval, std::abs(energy - e0) / e0);
  }
  return {worst_roundtrip < 1e-10 && worst_parseval < 1e-12,
          fmt("round-trip max err %.2e, Parseval rel err %.2e over 100 images", worst_roundtrip, worst_parseval)};
}

Outcome sensor_statistics(const fs::path& dir) {
  const SensorParams p;
  const double x = 0.5;
  Rng rng(3);
  const Tensor capture = simulate_capture(Tensor({1000, 1000}, x), p, rng);
  const Moments m = moments(capture.data());
  const double expected = expected_adu(x, p);

  SensorParams sigma_only = p;
  Rng noise_rng(4);
  const Tensor read = add_read_noise(Tensor({1000, 1000}, 0.0), sigma_only, noise_rng);
  const double sd = std::sqrt(moments(read.data()).var);

  save_llt1(dir / "capture.llt1", capture);
  save_llt1(dir / "read_noise.llt1", read);
  write_json(dir / "sensor.json", {{"mean_adu", m.mean}, {"expected_adu", expected}, {"read_noise_std", sd}});
  return {within(m.mean, expected, 0.01) && within(sd, p.read_noise_std, 0.01),
          fmt("mean %.3f ADU vs analytic %.3f, read-noise std %.4f vs %.2f", m.mean, expected, sd, p.read_noise_std)};
}

// Smooth test image with a zero border as wide as the PSF support.
Tensor bordered_scene(Rng& rng, std::size_t channels, std::size_t n, std::size_t border) {
  Tensor x({channels, n, n}, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double a = rng.uniform(), b = rng.uniform(), f = 1.0 + 3.0 * rng.uniform();
    for (std::size_t r = border; r + border < n; ++r)
      for (std::size_t col = border; col + border < n; ++col) {
        const double u = static_cast<double>(r) / n, v = static_cast<double>(col) / n;
        x[(c * n + r) * n + col] = 0.5 + 0.3 * std::sin(f * u + a) * std::cos(f * v + b) + 0.1 * rng.uniform();
      }
  }
  return x;
}

Outcome wiener_correctness(const fs::path& dir) {
  Rng rng(5);
  const Tensor x = bordered_scene(rng, 3, 64, 3);
  const Psf psf = gaussian_psf(5, 0.7);
  WienerConfig w;
  w.lambda = 1e-6;
  const Tensor xhat = wiener_deconv(convolve_fft(x, psf), psf, w);
  const double p = psnr(xhat, x);

  w.lambda = 0.0;
  const Tensor b = rng.normal_tensor({3, 64, 64});
  const Tensor id = wiener_deconv(b, delta_psf(1), w);
  const double identity_err = max_abs_diff(id, b);

  save_llt1(dir / "wiener.llt1", xhat);
  save_llt1(dir / "identity.llt1", id);
  return {p > 40.0 && identity_err < 1e-12,
          fmt("PSNR %.2f dB at lambda 1e-6, delta-PSF identity max err %.1e", p, identity_err)};
}

Outcome admm_baseline(const fs::path& dir) {
  Rng rng(6);
  const Tensor x = bordered_scene(rng, 1, 32, 3);
  const Psf psf = gaussian_psf(5, 0.8);
  const Tensor b = convolve_fft(x, psf);
  const AdmmResult r = admm_reconstruct(b, psf, AdmmConfig{});
  WienerConfig w;
  w.lambda = 1e-10;
  const double p = psnr(r.image, wiener_deconv(b, psf, w));
  std::size_t increases = 0;
  for (std::size_t k = 5; k + 1 < r.residuals.size(); ++k)
    if (r.residuals[k + 1] > r.residuals[k] * (1.0 + 1e-12)) ++increases;

  save_llt1(dir / "admm.llt1", r.image);
  write_json(dir / "admm.json", {{"psnr_vs_oracle", p}, {"residuals", r.residuals}});
  return {r.residuals.size() == 100 && p > 30.0 && increases == 0,
          fmt("%zu iterations, PSNR %.2f dB vs oracle, residual increases after it. 5: %zu", r.residuals.size(), p,
              increases)};
}

// E[eps | x_t] for scalar data x0 ~ N(m, v).
NoisePredictor gaussian_oracle(const DiffusionSchedule& s, double m, double v) {
  return [&s, m, v](const Tensor& x, const Tensor&, std::size_t t) {
    const double ab = s.alpha_bar[t];
    Tensor out(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = std::sqrt(1.0 - ab) * (x[i] - std::sqrt(ab) * m) / (ab * v + 1.0 - ab);
    return out;
  };
}

// Composed affine map x_T -> x_0 of the deterministic sampler under the oracle.
std::pair<double, double> ddim_affine_map(const DiffusionSchedule& s, std::size_t steps, double m, double v) {
  double a = 1.0, b = 0.0;
  for (std::size_t i = steps; i >= 1; --i) {
    const std::size_t t = i * s.T / steps, p = (i - 1) * s.T / steps;
    const double A = s.alpha_bar[t], P = s.alpha_bar[p];
    const double c = std::sqrt(1 - A) / (A * v + 1 - A);
    const double x0a = (1 - std::sqrt(1 - A) * c) / std::sqrt(A), x0b = std::sqrt(1 - A) * c * m;
    const double na = std::sqrt(P) * x0a + std::sqrt(1 - P) * c;
    const double nb = std::sqrt(P) * x0b - std::sqrt(1 - P) * c * std::sqrt(A) * m;
    a *= na;
    b = na * b + nb;
  }
  return {a, b};
}

Tensor marginal_draws(const DiffusionSchedule& s, double m, double v, std::size_t n, Rng& rng) {
  const double ab = s.alpha_bar[s.T];
  Tensor x = rng.normal_tensor({n}) * std::sqrt(ab * v + 1 - ab);
  for (double& e : x.data()) e += std::sqrt(ab) * m;
  return x;
}

Outcome diffusion_math(const fs::path& dir) {
  const DiffusionSchedule s = make_schedule(200);
  bool ok = s.posterior_var[1] == 0.0;

  long double prod = 1.0L;
  for (std::size_t t = 1; t <= s.T; ++t) prod *= 1.0L - static_cast<long double>(s.beta[t]);
  const double ab_err = std::abs(s.alpha_bar[s.T] - static_cast<double>(prod));
  ok = ok && ab_err < 1e-14;

  Rng rng(7);
  const Tensor xq = q_sample(Tensor({100000}, 0.7), 100, rng.normal_tensor({100000}), s);
  const Moments mq = moments(xq.data());
  const double q_mean = mq.mean / (0.7 * std::sqrt(s.alpha_bar[100]));
  const double q_sd = std::sqrt(mq.var / (1 - s.alpha_bar[100]));
  ok = ok && within(q_mean, 1.0, 0.02) && within(q_sd, 1.0, 0.02);

  const double m = 1.0;
  Rng ddpm_rng(8);
  const Tensor x_ddpm = ddpm_sample(gaussian_oracle(s, m, 1.0), Tensor(), marginal_draws(s, m, 1.0, 2000, ddpm_rng), s,
                                    &ddpm_rng);
  const Moments md = moments(x_ddpm.data());
  ok = ok && within(md.mean, m, 0.05) && within(md.var, 1.0, 0.05);

  const double v = 0.25;
  Rng ddim_rng(9);
  const Tensor x_ddim = ddim_sample(gaussian_oracle(s, m, v), Tensor(), marginal_draws(s, m, v, 2000, ddim_rng), s);
  const Moments mi = moments(x_ddim.data());
  const auto [a, b] = ddim_affine_map(s, 10, m, v);
  const double ab = s.alpha_bar[s.T];
  const double discrete_var = a * a * (ab * v + 1 - ab);
  ok = ok && within(mi.mean, m, 0.05) && within(mi.var, discrete_var, 0.05);

  save_llt1(dir / "ddpm.llt1", x_ddpm);
  save_llt1(dir / "ddim.llt1", x_ddim);
  return {ok, fmt("alpha_bar_T err %.1e; q_sample mean/sd ratios %.4f/%.4f; DDPM mean %.4f var %.4f (target 1, 1); "
                  "DDIM-10 mean %.4f var %.4f vs discretized %.4f (data var %.2f)",
                  ab_err, q_mean, q_sd, md.mean, md.var, mi.mean, mi.var, discrete_var, v)};
}

// Toy setup shared by criteria 7 and 8.
constexpr double kToyLambda = 0.1;

WienerConfig toy_wiener() {
  WienerConfig w;
  w.lambda = kToyLambda;
  return w;
}

Stage2Config toy_stage2_config() {
  Stage2Config c;
  c.hf_levels = {1, 2};
  c.eps.hidden = 16;
  c.eps.max_window = 4;
  c.hf.max_window = 8;
  return c;
}

Outcome toy_trend(const fs::path& dir, const Options& opt) {
  DatasetConfig dc;
  dc.seed = 42;
  dc.train_count = 200;
  const DatasetManifest manifest =
      build_dataset(toy_corpus(220, 16, 2024), random_mask_psf(7, 0.3, 5), dir / "toy", dc);

  const Stage1Set train = stage1_split(manifest, dir / "toy", "train", toy_wiener());
  const Stage1Set test = stage1_split(manifest, dir / "toy", "test", toy_wiener());

  Stage2TrainConfig tc;
  tc.steps = opt.train_steps;
  tc.batch_size = 8;
  tc.adam.learning_rate = 2e-3;
  tc.ema_rate = 0.999;
  tc.seed = 3;
  tc.recon_every = 10;
  Stopwatch clock;
  const Stage2TrainResult trained = train_stage2(init_stage2(toy_stage2_config(), 1), train.examples, tc);
  const double train_s = clock.seconds();
  save_checkpoint(dir / "checkpoint", trained.model);

  const EvalReport r1 = evaluate_stage1(test, {{"stage", "1"}});
  const EvalReport r2 = evaluate_stage2(test, trained.model, {{"stage", "2"}});
  {
    std::ofstream(dir / "stage1_eval.json", std::ios::binary) << report_to_json(r1);
    std::ofstream(dir / "stage2_eval.json", std::ios::binary) << report_to_json(r2);
  }
  write_json(dir / "train_losses.json", trained.losses);
  return {test.ids.size() == 20 && train.ids.size() == 200 && train_s <= 1800.0 &&
              r2.mean_psnr >= r1.mean_psnr + 2.0,
          fmt("%zu train / %zu test, %zu steps in %.0f s; stage1 %.2f dB (SSIM %.3f), stage2 %.2f dB (SSIM %.3f)",
              train.ids.size(), test.ids.size(), opt.train_steps, train_s, r1.mean_psnr, r1.mean_ssim, r2.mean_psnr,
              r2.mean_ssim)};
}

// Reads the dataset and checkpoint written by toy_trend into the sibling c7.
Outcome exposure_trend(const fs::path& dir) {
  const fs::path toy = dir.parent_path() / "c7";
  const DatasetManifest manifest = load_manifest(toy / "toy" / "manifest.json");
  const Stage2Model model = load_checkpoint(toy / "checkpoint");
  const std::vector<ExposurePoint> sweep = sweep_exposure(manifest, toy / "toy", {0.3, 0.5, 0.7}, toy_wiener(), &model);

  json rows = json::array();
  std::vector<double> p2;
  std::string s1_text;
  for (const auto& pt : sweep) {
    p2.push_back(pt.stage2->mean_psnr);
    rows.push_back({{"exposure_s", pt.exposure_s},
                    {"stage1_psnr", pt.stage1.mean_psnr},
                    {"stage2_psnr", pt.stage2->mean_psnr},
                    {"stage2_ssim", pt.stage2->mean_ssim}});
    s1_text += fmt(" %.2f", pt.stage1.mean_psnr);
  }
  write_json(dir / "exposure_sweep.json", rows);
  const bool monotone = p2[0] <= p2[1] && p2[1] <= p2[2];
  const double gap = p2[2] - p2[0];
  return {monotone && gap < 1.5, fmt("stage2 PSNR at 0.3/0.5/0.7 s: %.2f %.2f %.2f dB, gap %.2f dB (stage1:%s)", p2[0],
                                     p2[1], p2[2], gap, s1_text.c_str())};
}

std::vector<fs::path> sorted_files(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  return files;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome compare_trees(const fs::path& a, const fs::path& b) {
  const auto fa = sorted_files(a), fb = sorted_files(b);
  if (fa != fb) return {false, fmt("file lists differ (%zu vs %zu files)", fa.size(), fb.size())};
  std::size_t bytes = 0;
  for (const auto& f : fa) {
    const std::string x = slurp(a / f), y = slurp(b / f);
    if (x != y) return {false, "differs: " + f.string()};
    bytes += x.size();
  }
  return {true, fmt("%zu artifacts, %zu bytes identical", fa.size(), bytes)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome(const fs::path&)> run;
};

void report(int id, const char* name, const Outcome& o, double seconds, double budget_s) {
  const bool in_time = budget_s <= 0 || seconds < budget_s;
  std::string detail = o.detail;
  if (!in_time) detail += fmt("; over the %.0f s budget", budget_s);
  std::printf("[%s] criterion %d %s: %s (%.1f s)\n", o.pass && in_time ? "PASS" : "FAIL", id, name, detail.c_str(),
              seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Acceptance checks"};
  app.add_option("--work-dir", opt.work_dir, "Directory for generated artifacts");
  app.add_option("--train-steps", opt.train_steps, "Stage-2 training steps for the toy run");
  app.add_flag("--skip-repeat", opt.skip_repeat, "Skip the repeated run of the determinism check");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(opt.work_dir);
  fs::create_directories(opt.work_dir);

  const std::vector<Criterion> repeatable = {
      {3, "sensor statistics", 30, sensor_statistics},
      {4, "Wiener correctness", 5, wiener_correctness},
      {5, "ADMM baseline", 60, admm_baseline},
      {6, "diffusion math", 120, diffusion_math},
      {7, "toy end-to-end trend", 0, [&](const fs::path& d) { return toy_trend(d, opt); }},
      {8, "exposure robustness", 600, exposure_trend},
  };
  auto run_set = [&](const fs::path& dir, bool print) {
    bool ok = true;
    for (const auto& c : repeatable) {
      const fs::path sub = dir / ("c" + std::to_string(c.id));
      fs::create_directories(sub);
      Stopwatch clock;
      Outcome o;
      try {
        o = c.run(sub);
      } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
      }
      if (print) report(c.id, c.name, o, clock.seconds(), c.budget_s);
      ok = ok && o.pass && (c.budget_s <= 0 || clock.seconds() < c.budget_s || !print);
    }
    return ok;
  };

  bool all = true;
  {
    Stopwatch clock;
    const Outcome o = autodiff_suite();
    report(1, "autodiff gradient checks", o, clock.seconds(), 60);
    all = all && o.pass && clock.seconds() < 60;
  }
  {
    Stopwatch clock;
    const Outcome o = wavelet_suite();
    report(2, "wavelet round trip", o, clock.seconds(), 10);
    all = all && o.pass && clock.seconds() < 10;
  }
  all = run_set(opt.work_dir / "run1", true) && all;

  Stopwatch clock;
  Outcome det;
  if (opt.skip_repeat) {
    det = {false, "skipped"};
  } else {
    run_set(opt.work_dir / "run2", false);
    det = compare_trees(opt.work_dir / "run1", opt.work_dir / "run2");
  }
  report(9, "determinism", det, clock.seconds(), 0);
  all = all && det.pass;

  std::printf("%s\n", all ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
