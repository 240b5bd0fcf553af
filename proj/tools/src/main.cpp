#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lensless/datasetgen.hpp"
#include "lensless/diffusion.hpp"
#include "lensless/enhance.hpp"
#include "lensless/errors.hpp"
#include "lensless/gradcheck_suite.hpp"
#include "lensless/image_io.hpp"
#include "lensless/metrics.hpp"
#include "lensless/pipeline.hpp"
#include "lensless/recon.hpp"
#include "lensless/wavelet.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace lensless;
using lensless::cli::RunConfig;
using lensless::cli::UsageError;

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  RunConfig resolve() const {
    RunConfig c;
    if (!file.empty()) c.load_file(file);
    for (const auto& s : sets) c.set(s);
    return c;
  }
};

void add_config_flags(CLI::App* sub, ConfigFlags& flags, const RunConfig& defaults) {
  sub->add_option("--config", flags.file, "JSON config file");
  sub->add_option("--set", flags.sets, "override a config key (key=value), repeatable");
  sub->footer(defaults.describe());
}

void emit(const Json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out, std::ios::binary);
  if (!f) throw DataError("cannot write " + out);
  f << text;
}

Json report_json(const EvalReport& r) { return Json::parse(report_to_json(r)); }

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("bad number '" + tok + "' in list");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

Tensor ensure_chw(Tensor t) {
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  if (t.rank() != 3) throw DataError("expected an [C,H,W] image, got " + shape_to_string(t.shape()));
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  const RunConfig defaults;
  CLI::App app{"Low-light lensless imaging toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // make-toy
  ConfigFlags toy_cfg;
  std::size_t toy_count = 220, toy_size = 16;
  std::uint64_t toy_seed = 2024;
  std::string toy_out, toy_format = "llt1";
  auto* make_toy = app.add_subcommand("make-toy", "write synthetic gradient-and-blob scenes");
  make_toy->add_option("--count", toy_count, "number of scenes");
  make_toy->add_option("--size", toy_size, "side length in pixels");
  make_toy->add_option("--seed", toy_seed, "corpus seed");
  make_toy->add_option("--format", toy_format, "llt1 or png")->check(CLI::IsMember({"llt1", "png"}));
  make_toy->add_option("--out", toy_out, "output directory")->required();

  // make-psf
  std::string psf_kind = "mask", psf_out;
  std::size_t psf_size = 7;
  double psf_density = 0.3, psf_sigma = 1.0;
  std::uint64_t psf_seed = 5;
  auto* make_psf = app.add_subcommand("make-psf", "write a synthetic PSF");
  make_psf->add_option("--kind", psf_kind, "mask, gaussian or delta")->check(CLI::IsMember({"mask", "gaussian", "delta"}));
  make_psf->add_option("--size", psf_size, "kernel side length");
  make_psf->add_option("--density", psf_density, "open fraction of a mask");
  make_psf->add_option("--sigma", psf_sigma, "gaussian sigma");
  make_psf->add_option("--seed", psf_seed, "mask seed");
  make_psf->add_option("--out", psf_out, "output .llt1 or .png")->required();

  // datagen
  ConfigFlags gen_cfg;
  std::string gen_src, gen_psf, gen_out;
  std::optional<double> gen_exposure;
  std::optional<std::uint64_t> gen_seed;
  auto* datagen = app.add_subcommand("datagen", "synthesize a paired low-light dataset");
  datagen->add_option("--src", gen_src, "directory of PNG/LLT1 scenes")->required();
  datagen->add_option("--psf", gen_psf, "PSF file")->required();
  datagen->add_option("--exposure", gen_exposure, "exposure time in seconds");
  datagen->add_option("--seed", gen_seed, "dataset seed");
  datagen->add_option("--out", gen_out, "output directory")->required();
  add_config_flags(datagen, gen_cfg, defaults);

  // reconstruct
  ConfigFlags rec_cfg;
  std::string rec_method = "wiener", rec_psf, rec_in, rec_out;
  std::optional<double> rec_lambda, rec_exposure;
  std::optional<std::size_t> rec_iters;
  bool rec_normalized = false;
  auto* reconstruct = app.add_subcommand("reconstruct", "stage-1 reconstruction of one capture");
  reconstruct->add_option("--method", rec_method, "wiener or admm")->check(CLI::IsMember({"wiener", "admm"}));
  reconstruct->add_option("--lambda", rec_lambda, "Wiener regularizer");
  reconstruct->add_option("--iters", rec_iters, "ADMM iterations");
  reconstruct->add_option("--exposure", rec_exposure, "exposure time of the capture in seconds");
  reconstruct->add_flag("--normalized", rec_normalized, "input is already in intensity units");
  reconstruct->add_option("--psf", rec_psf, "PSF file")->required();
  reconstruct->add_option("--in", rec_in, "capture (.llt1 ADU or .png)")->required();
  reconstruct->add_option("--out", rec_out, "output image")->required();
  add_config_flags(reconstruct, rec_cfg, defaults);

  // train
  ConfigFlags train_cfg;
  std::string train_manifest, train_out, train_log;
  auto* train = app.add_subcommand("train", "train the stage-2 networks on a dataset");
  train->add_option("--manifest", train_manifest, "dataset manifest.json")->required();
  train->add_option("--out", train_out, "checkpoint directory")->required();
  train->add_option("--log", train_log, "per-step loss log (JSON)");
  add_config_flags(train, train_cfg, defaults);

  // sample
  std::string sample_ckpt, sample_in, sample_out;
  std::optional<std::size_t> sample_steps;
  std::optional<std::uint64_t> sample_seed;
  auto* sample = app.add_subcommand("sample", "draw the LL band for a stage-1 image");
  sample->add_option("--ckpt", sample_ckpt, "checkpoint directory")->required();
  sample->add_option("--in", sample_in, "stage-1 image")->required();
  sample->add_option("--steps", sample_steps, "implicit sampling steps");
  sample->add_option("--seed", sample_seed, "initial noise seed");
  sample->add_option("--out", sample_out, "output .llt1")->required();

  // enhance
  std::string enh_in, enh_ckpt, enh_out, enh_gt;
  auto* enhance = app.add_subcommand("enhance", "stage-2 refinement of a stage-1 image");
  enhance->add_option("--in", enh_in, "stage-1 image (.llt1 or .png)")->required();
  enhance->add_option("--ckpt", enh_ckpt, "checkpoint directory")->required();
  enhance->add_option("--out", enh_out, "output image")->required();
  enhance->add_option("--gt", enh_gt, "ground truth; writes <out>.json with per-stage metrics");

  // eval
  std::string eval_manifest, eval_pred, eval_out;
  auto* eval = app.add_subcommand("eval", "score predictions against a dataset's test split");
  eval->add_option("--manifest", eval_manifest, "dataset manifest.json")->required();
  eval->add_option("--pred", eval_pred, "directory with <id>.llt1 or <id>.png")->required();
  eval->add_option("--out", eval_out, "report path (stdout when omitted)");

  // gradcheck
  bool gc_all = false;
  std::string gc_only, gc_out;
  double gc_tol = 1e-4, gc_h = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_flag("--all", gc_all, "run every check");
  gradcheck->add_option("--only", gc_only, "run one named check");
  gradcheck->add_option("--tol", gc_tol, "max relative error");
  gradcheck->add_option("--step", gc_h, "finite-difference step");
  gradcheck->add_option("--out", gc_out, "report path (stdout when omitted)");

  // schedule-dump
  std::size_t sd_T = 200;
  double sd_b0 = 1e-4, sd_b1 = 0.02;
  std::string sd_out;
  auto* schedule_dump = app.add_subcommand("schedule-dump", "print the diffusion schedule");
  schedule_dump->add_option("--T", sd_T, "diffusion steps");
  schedule_dump->add_option("--beta-start", sd_b0, "first beta");
  schedule_dump->add_option("--beta-end", sd_b1, "last beta");
  schedule_dump->add_option("--out", sd_out, "output path (stdout when omitted)");

  // sweep-exposure
  ConfigFlags sweep_cfg;
  std::string sw_manifest, sw_ckpt, sw_out, sw_factors = "0.3,0.5,0.7";
  auto* sweep = app.add_subcommand("sweep-exposure", "test-split scores across exposure times");
  sweep->add_option("--manifest", sw_manifest, "dataset manifest.json")->required();
  sweep->add_option("--factors", sw_factors, "comma-separated exposure times in seconds");
  sweep->add_option("--ckpt", sw_ckpt, "stage-2 checkpoint; stage 1 only when omitted");
  sweep->add_option("--out", sw_out, "output path (stdout when omitted)");
  add_config_flags(sweep, sweep_cfg, defaults);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*make_toy) {
      fs::create_directories(toy_out);
      Json files = Json::array();
      for (const auto& [id, scene] : toy_corpus(toy_count, toy_size, toy_seed)) {
        const fs::path p = fs::path(toy_out) / (id + "." + toy_format);
        save_image(p, scene);
        files.push_back(p.filename().string());
      }
      emit(Json{{"count", toy_count}, {"size", toy_size}, {"seed", toy_seed}, {"files", files}}, "");
    } else if (*make_psf) {
      Psf psf = psf_kind == "mask"       ? random_mask_psf(psf_size, psf_density, psf_seed)
                : psf_kind == "gaussian" ? gaussian_psf(psf_size, psf_sigma)
                                         : delta_psf(psf_size);
      if (fs::path(psf_out).extension() == ".png") {
        const double peak = max_abs(psf.kernel());
        write_png(psf_out, psf.kernel() * (1.0 / peak), 16);
      } else {
        save_llt1(psf_out, psf.kernel());
      }
      emit(Json{{"kind", psf_kind}, {"size", psf_size}, {"out", psf_out}}, "");
    } else if (*datagen) {
      RunConfig cfg = gen_cfg.resolve();
      if (gen_exposure) cfg.set("capture.exposure_s=" + std::to_string(*gen_exposure));
      if (gen_seed) cfg.set("dataset.seed=" + std::to_string(*gen_seed));
      const DatasetManifest m = build_dataset(fs::path(gen_src), load_psf(gen_psf), gen_out, cfg.dataset());
      std::size_t n_train = 0;
      for (const auto& it : m.items) n_train += it.split == "train";
      emit(Json{{"manifest", (fs::path(gen_out) / "manifest.json").string()},
                {"items", m.items.size()},
                {"train", n_train},
                {"test", m.items.size() - n_train}},
           "");
    } else if (*reconstruct) {
      RunConfig cfg = rec_cfg.resolve();
      const Psf psf = load_psf(rec_psf);
      Tensor b = fs::path(rec_in).extension() == ".png" ? load_image(rec_in) : ensure_chw(load_llt1(rec_in));
      if (!rec_normalized) {
        const double t = rec_exposure.value_or(cfg.number("capture.exposure_s"));
        b = normalize_capture(b, cfg.sensor().with_exposure(t, cfg.number("capture.reference_exposure_s")));
      }
      Json summary{{"method", rec_method}};
      Tensor x;
      if (rec_method == "wiener") {
        WienerConfig w = cfg.wiener();
        if (rec_lambda) w.lambda = *rec_lambda;
        x = wiener_deconv(b, psf, w);
        summary["lambda"] = w.lambda;
      } else {
        AdmmConfig a = cfg.admm();
        if (rec_iters) a.iterations = *rec_iters;
        const AdmmResult r = admm_reconstruct(b, psf, a);
        x = r.image;
        summary["iterations"] = a.iterations;
        summary["residuals"] = r.residuals;
      }
      save_image(rec_out, x);
      summary["out"] = rec_out;
      emit(summary, "");
    } else if (*train) {
      RunConfig cfg = train_cfg.resolve();
      const fs::path root = fs::path(train_manifest).parent_path();
      const DatasetManifest m = load_manifest(train_manifest);
      const Stage1Set set = stage1_split(m, root, "train", cfg.wiener());
      Stage2TrainConfig tc = cfg.train();
      Json log = Json::array();
      tc.on_step = [&](std::size_t step, double l1, double l2, double l3) {
        log.push_back({{"step", step}, {"l1", l1}, {"l2", l2}, {"l3", l3}});
      };
      const Stage2TrainResult r =
          train_stage2(init_stage2(cfg.stage2(), cfg.seed("stage2.init_seed")), set.examples, tc);
      save_checkpoint(train_out, r.model);
      if (!train_log.empty()) emit(log, train_log);
      emit(Json{{"checkpoint", train_out},
                {"examples", set.examples.size()},
                {"steps", tc.steps},
                {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()},
                {"config", cfg.to_json()}},
           "");
    } else if (*sample) {
      Stage2Model model = load_checkpoint(sample_ckpt);
      if (sample_steps) model.config.ddim_steps = *sample_steps;
      if (sample_seed) model.config.sample_seed = *sample_seed;
      const NoisePredictor pred = bind_predictor(eps_predictor(model.config.eps), model.params.extract("eps."));
      const Tensor ll = sample_ll(ensure_chw(load_image(sample_in)), model.config, pred);
      save_llt1(sample_out, ll);
      emit(Json{{"out", sample_out}, {"shape", ll.shape()}, {"steps", model.config.ddim_steps}}, "");
    } else if (*enhance) {
      const Stage2Model model = load_checkpoint(enh_ckpt);
      const Tensor x1 = ensure_chw(load_image(enh_in));
      const Tensor x2 = stage2(x1, model);
      save_image(enh_out, x2);
      Json summary{{"out", enh_out}};
      if (!enh_gt.empty()) {
        const Tensor gt = ensure_chw(load_image(enh_gt));
        const EvalEntry a = evaluate_pair("stage1", x1, gt), b = evaluate_pair("stage2", x2, gt);
        Json side{{"stage1", {{"psnr", a.psnr}, {"ssim", a.ssim}}}, {"stage2", {{"psnr", b.psnr}, {"ssim", b.ssim}}}};
        emit(side, enh_out + ".json");
        summary["metrics"] = side;
      }
      emit(summary, "");
    } else if (*eval) {
      emit(report_json(evaluate_pairs(eval_manifest, eval_pred)), eval_out);
    } else if (*gradcheck) {
      if (!gc_all && gc_only.empty()) throw UsageError("gradcheck: pass --all or --only <name>");
      Json rows = Json::array();
      bool ok = true;
      std::size_t matched = 0;
      for (const GradCheckResult& r : run_gradcheck_suite(gc_tol, gc_h)) {
        if (!gc_all && r.name != gc_only) continue;
        ++matched;
        ok = ok && r.passed;
        rows.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"coordinates", r.coordinates},
                        {"passed", r.passed}});
      }
      if (matched == 0) throw UsageError("gradcheck: no check named '" + gc_only + "'");
      emit(Json{{"tolerance", gc_tol}, {"h", gc_h}, {"passed", ok}, {"checks", rows}}, gc_out);
      if (!ok) {
        std::cerr << "lensless: gradient check failed\n";
        return 3;
      }
    } else if (*schedule_dump) {
      const DiffusionSchedule s = make_schedule(sd_T, sd_b0, sd_b1);
      Json rows = Json::array();
      for (std::size_t t = 1; t <= s.T; ++t) {
        rows.push_back({{"t", t}, {"beta", s.beta[t]}, {"alpha", s.alpha[t]}, {"alpha_bar", s.alpha_bar[t]},
                        {"posterior_var", s.posterior_var[t]}});
      }
      emit(rows, sd_out);
    } else if (*sweep) {
      RunConfig cfg = sweep_cfg.resolve();
      const std::vector<double> times = parse_list(sw_factors);
      std::optional<Stage2Model> model;
      if (!sw_ckpt.empty()) model = load_checkpoint(sw_ckpt);
      const auto points = sweep_exposure(load_manifest(sw_manifest), fs::path(sw_manifest).parent_path(), times,
                                         cfg.wiener(), model ? &*model : nullptr);
      Json out = Json::array();
      for (const ExposurePoint& p : points) {
        Json j{{"exposure_s", p.exposure_s}, {"stage1", report_json(p.stage1)}};
        if (p.stage2) j["stage2"] = report_json(*p.stage2);
        out.push_back(std::move(j));
      }
      emit(out, sw_out);
    }
  } catch (const UsageError& e) {
    std::cerr << "lensless: usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "lensless: usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "lensless: numerical error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "lensless: data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lensless: data error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
