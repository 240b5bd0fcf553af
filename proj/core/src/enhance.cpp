#include "lensless/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "lensless/errors.hpp"
#include "lensless/wavelet.hpp"

namespace lensless {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

Tensor stage1(const Tensor& capture, const Psf& psf, const SensorParams& sensor, double exposure_s,
              double reference_exposure_s, const WienerConfig& wiener) {
  const Tensor y = normalize_capture(capture, sensor.with_exposure(exposure_s, reference_exposure_s));
  Tensor x = wiener_deconv(y, psf, wiener);
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

void LossConfig::validate() const {
  const double w[] = {w1, w2, w3, w4, w5};
  bool any = false;
  for (double v : w) {
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    any = any || v > 0.0;
  }
  if (!any) throw std::invalid_argument("at least one loss weight must be positive");
}

Var loss_recon(Var x_hat, Var x, const LossConfig& c, const BoundParams& perceptual) {
  Var total = ad::scale(ad::mean(ad::abs(ad::sub(x_hat, x))), c.w1);
  if (c.w2 > 0.0) {
    const Var s = ssim(x_hat, x, c.ssim);
    total = ad::add(total, ad::scale(ad::add_scalar(ad::scale(s, -1.0), 1.0), c.w2));
  }
  if (c.w3 > 0.0) {
    const PerceptualFeatures a = perceptual_features(perceptual, x_hat);
    const PerceptualFeatures b = perceptual_features(perceptual, x);
    const Var d = ad::add(ad::mean(ad::square(ad::sub(a.f2, b.f2))), ad::mean(ad::square(ad::sub(a.f4, b.f4))));
    total = ad::add(total, ad::scale(d, c.w3));
  }
  return total;
}

Var loss_hf(Var hf_hat, Var hf, const LossConfig& c) {
  const Shape& s = hf_hat.value().shape();
  if (s.size() != 4 || s != hf.value().shape()) {
    throw std::invalid_argument("loss_hf: expected matching [N,C,H,W] inputs");
  }
  const Var r = ad::sub(hf_hat, hf);
  Var total = ad::scale(ad::mean(ad::square(r)), c.w4);
  if (c.w5 > 0.0) {
    const std::size_t h = s[2], w = s[3];
    Var tv;
    if (w > 1) {
      tv = ad::mean(ad::abs(ad::sub(ad::crop2d(r, 0, 1, h, w - 1), ad::crop2d(r, 0, 0, h, w - 1))));
    }
    if (h > 1) {
      const Var v = ad::mean(ad::abs(ad::sub(ad::crop2d(r, 1, 0, h - 1, w), ad::crop2d(r, 0, 0, h - 1, w))));
      tv = tv.valid() ? ad::add(tv, v) : v;
    }
    if (tv.valid()) total = ad::add(total, ad::scale(tv, c.w5));
  }
  return total;
}

Var loss_total(Var l1, Var l2, Var l3) { return ad::add(ad::add(l1, l2), l3); }

void Stage2Config::validate() const {
  if (levels < 1 || levels > 4) throw std::invalid_argument("stage2: levels must lie in [1, 4]");
  for (std::size_t l : hf_levels) {
    if (l < 1 || l > levels) throw std::invalid_argument("stage2: HF level " + std::to_string(l) + " out of range");
  }
  if (!(ll_scale > 0.0)) throw std::invalid_argument("stage2: ll_scale must be positive");
  if (ddim_steps < 1 || ddim_steps > T) throw std::invalid_argument("stage2: ddim steps must lie in [1, T]");
  eps.validate();
  hf.validate();
}

namespace {

std::string hf_prefix(std::size_t level) { return "hf.l" + std::to_string(level) + "."; }

// (LH, HL, HH) of a [C,h,w] subband set as [1,3C,h,w].
Tensor stack_details(const SubbandSet& s) {
  const Tensor& lh = s.lh;
  std::vector<double> data;
  data.reserve(3 * lh.size());
  for (const Tensor* t : {&s.lh, &s.hl, &s.hh}) data.insert(data.end(), t->values().begin(), t->values().end());
  return Tensor({1, 3 * lh.dim(0), lh.dim(1), lh.dim(2)}, std::move(data));
}

void unstack_details(const Tensor& bands, SubbandSet& s) {
  const std::size_t n = s.lh.size();
  if (bands.size() != 3 * n) throw std::invalid_argument("HF refiner changed the band shape");
  Tensor* dst[] = {&s.lh, &s.hl, &s.hh};
  for (std::size_t b = 0; b < 3; ++b)
    std::copy(bands.values().begin() + static_cast<std::ptrdiff_t>(b * n),
              bands.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * n), dst[b]->data().begin());
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out = x;
  for (double& v : out.data()) v = v * scale + shift;
  return out;
}

}  // namespace

Stage2Model init_stage2(const Stage2Config& config, std::uint64_t seed) {
  config.validate();
  Stage2Model m{config, {}};
  Rng rng(seed);
  m.params.merge(init_eps_net(config.eps, rng).prefixed("eps."));
  for (std::size_t l : config.hf_levels) m.params.merge(init_hf_net(config.hf, rng).prefixed(hf_prefix(l)));
  return m;
}

TapePredictor eps_predictor(const EpsNetConfig& config) {
  return [config](const BoundParams& p, Var x_t, Var cond, std::span<const std::size_t> t) {
    return eps_net_forward(config, p, x_t, cond, t);
  };
}

namespace {

void check_stage2_input(const Tensor& x_init, const Stage2Config& config) {
  config.validate();
  if (x_init.rank() != 3) throw std::invalid_argument("stage2: expected [C,H,W] input");
  if (!x_init.all_finite()) throw NumericalError("stage2: non-finite input");
}

Tensor sample_coarse(const Tensor& coarse, const Stage2Config& config, const NoisePredictor& ll_predictor) {
  const Tensor cond = affine(coarse, 1.0 / config.ll_scale, -config.ll_offset / config.ll_scale);
  Rng rng(config.sample_seed);
  const Tensor x_T = rng.normal_tensor(cond.shape());
  DdimOptions opts;
  opts.steps = config.ddim_steps;
  return affine(ddim_sample(ll_predictor, cond, x_T, config.schedule(), opts), config.ll_scale, config.ll_offset);
}

}  // namespace

Tensor sample_ll(const Tensor& x_init, const Stage2Config& config, const NoisePredictor& ll_predictor) {
  check_stage2_input(x_init, config);
  return sample_coarse(dwt2_multi(x_init, config.levels).coarse(), config, ll_predictor);
}

Tensor stage2_apply(const Tensor& x_init, const Stage2Config& config, const NoisePredictor& ll_predictor,
                    const HfRefiner& hf) {
  check_stage2_input(x_init, config);
  WaveletPyramid pyr = dwt2_multi(x_init, config.levels);
  pyr.levels.back().ll = sample_coarse(pyr.coarse(), config, ll_predictor);
  for (std::size_t l : config.hf_levels) {
    SubbandSet& s = pyr.levels[l - 1];
    unstack_details(hf(l, stack_details(s)), s);
  }
  Tensor out = idwt2_multi(pyr);
  if (!out.all_finite()) throw NumericalError("stage2: non-finite output");
  return out;
}

Tensor stage2(const Tensor& x_init, const Stage2Model& model) {
  const Stage2Config& c = model.config;
  const NoisePredictor ll = bind_predictor(eps_predictor(c.eps), model.params.extract("eps."));
  const HfRefiner hf = [&](std::size_t level, const Tensor& bands) {
    Tape tape;
    tape.set_grad_enabled(false);
    BoundParams p(tape, model.params, false);
    return hf_net_forward(c.hf, p.scoped(hf_prefix(level)), tape.constant(bands)).value();
  };
  return stage2_apply(x_init, c, ll, hf);
}

namespace {

struct Prepared {
  Tensor cond, x0, target;
  std::vector<Tensor> details_in, details_gt;  // index l-1, each [3C,h,w]
};

Tensor drop_batch(const Tensor& t) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  return t.reshaped(std::move(s));
}

}  // namespace

Stage2TrainResult train_stage2(Stage2Model init, std::span<const Stage2Example> data,
                               const Stage2TrainConfig& config) {
  const Stage2Config sc = init.config;
  sc.validate();
  config.loss.validate();
  if (data.empty()) throw DataError("train_stage2: empty dataset");
  if (config.batch_size < 1) throw std::invalid_argument("train_stage2: batch_size must be >= 1");
  const std::size_t factor = std::size_t{1} << sc.levels;
  std::vector<Prepared> prepared;
  for (const Stage2Example& ex : data) {
    if (ex.stage1.shape() != ex.target.shape() || ex.stage1.rank() != 3 ||
        ex.stage1.shape() != data[0].stage1.shape()) {
      throw DataError("train_stage2: examples must share one [C,H,W] shape");
    }
    if (ex.stage1.dim(1) % factor != 0 || ex.stage1.dim(2) % factor != 0) {
      throw DataError("train_stage2: image dims must be divisible by " + std::to_string(factor));
    }
    const WaveletPyramid ps = dwt2_multi(ex.stage1, sc.levels);
    const WaveletPyramid pt = dwt2_multi(ex.target, sc.levels);
    Prepared p;
    p.cond = affine(ps.coarse(), 1.0 / sc.ll_scale, -sc.ll_offset / sc.ll_scale);
    p.x0 = affine(pt.coarse(), 1.0 / sc.ll_scale, -sc.ll_offset / sc.ll_scale);
    p.target = ex.target;
    for (std::size_t l = 0; l < sc.levels; ++l) {
      p.details_in.push_back(drop_batch(stack_details(ps.levels[l])));
      p.details_gt.push_back(drop_batch(stack_details(pt.levels[l])));
    }
    prepared.push_back(std::move(p));
  }

  const DiffusionSchedule sched = sc.schedule();
  const TapePredictor predictor = eps_predictor(sc.eps);
  const ParamSet perceptual = init_perceptual(config.loss.perceptual);
  Stage2TrainResult result;
  result.raw = std::move(init);
  ParamSet& params = result.raw.params;
  Adam adam(config.adam, params);
  Ema ema(config.ema_rate, params);
  Rng rng(config.seed);
  result.losses.reserve(config.steps);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<const Prepared*> batch;
    std::vector<std::size_t> ts;
    std::vector<Tensor> noises;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      batch.push_back(&prepared[rng.below(prepared.size())]);
      ts.push_back(1 + rng.below(sched.T));
      noises.push_back(rng.normal_tensor(batch.back()->x0.shape()));
    }
    auto gather = [&](auto member) {
      std::vector<Tensor> items;
      for (const Prepared* p : batch) items.push_back(member(*p));
      return stack_batch(items);
    };
    const bool with_recon = config.recon_every > 0 && step % config.recon_every == 0;
    Tensor x_T;
    if (with_recon) {
      Shape shape{batch.size()};
      shape.insert(shape.end(), batch[0]->x0.shape().begin(), batch[0]->x0.shape().end());
      x_T = rng.normal_tensor(shape);
    }

    Tape tape;
    BoundParams bound(tape, params, true);
    BoundParams fixed(tape, perceptual, false);
    const BoundParams eps_params = bound.scoped("eps.");
    const Var cond = tape.constant(gather([](const Prepared& p) { return p.cond; }));
    const Var l1 = epsilon_loss(predictor, eps_params, tape.constant(gather([](const Prepared& p) { return p.x0; })),
                                cond, tape.constant(stack_batch(noises)), ts, sched);
    Var total = l1;
    double l2_value = 0.0, l3_value = 0.0;

    std::vector<Var> details(sc.levels);
    Var l3;
    for (std::size_t l : sc.hf_levels) {
      const Var in = tape.constant(gather([l](const Prepared& p) { return p.details_in[l - 1]; }));
      const Var gt = tape.constant(gather([l](const Prepared& p) { return p.details_gt[l - 1]; }));
      details[l - 1] = hf_net_forward(sc.hf, bound.scoped(hf_prefix(l)), in);
      const Var term = loss_hf(details[l - 1], gt, config.loss);
      l3 = l3.valid() ? ad::add(l3, term) : term;
    }
    if (l3.valid()) {
      l3 = ad::scale(l3, 1.0 / static_cast<double>(sc.hf_levels.size()));
      l3_value = l3.value().item();
      total = ad::add(total, l3);
    }
    if (with_recon) {
      const Var ll_n = ddim_rollout(predictor, eps_params, tape.constant(x_T), cond, sched, sc.ddim_steps);
      Var approx = ad::add_scalar(ad::scale(ll_n, sc.ll_scale), sc.ll_offset);
      for (std::size_t l = sc.levels; l >= 1; --l) {
        Var d = details[l - 1];
        if (!d.valid()) d = tape.constant(gather([l](const Prepared& p) { return p.details_in[l - 1]; }));
        approx = ad::idwt2(ad::concat_channels({approx, d}));
      }
      const Var l2 = loss_recon(approx, tape.constant(gather([](const Prepared& p) { return p.target; })),
                                config.loss, fixed);
      l2_value = l2.value().item();
      total = ad::add(total, l2);
    }
    const double value = total.value().item();
    if (!std::isfinite(value)) {
      throw NumericalError("train_stage2: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(total);
    adam.step(params, bound.gradients());
    ema.update(params);
    result.losses.push_back(value);
    if (config.on_step) config.on_step(step, l1.value().item(), l2_value, l3_value);
  }
  result.model = Stage2Model{result.raw.config, ema.shadow()};
  return result;
}

namespace {

Json config_to_json(const Stage2Config& c) {
  Json j;
  j["levels"] = c.levels;
  j["hf_levels"] = c.hf_levels;
  j["ll_offset"] = c.ll_offset;
  j["ll_scale"] = c.ll_scale;
  j["T"] = c.T;
  j["beta_start"] = c.beta_start;
  j["beta_end"] = c.beta_end;
  j["ddim_steps"] = c.ddim_steps;
  j["sample_seed"] = c.sample_seed;
  j["eps"] = {{"image_channels", c.eps.image_channels}, {"cond_channels", c.eps.cond_channels},
              {"time_channels", c.eps.time_channels},   {"hidden", c.eps.hidden},
              {"attn_dim", c.eps.attn_dim},             {"max_window", c.eps.max_window}};
  j["hf"] = {{"features", c.hf.features}, {"max_window", c.hf.max_window}};
  return j;
}

Stage2Config config_from_json(const Json& j) {
  Stage2Config c;
  c.levels = j.at("levels").get<std::size_t>();
  c.hf_levels = j.at("hf_levels").get<std::vector<std::size_t>>();
  c.ll_offset = j.at("ll_offset").get<double>();
  c.ll_scale = j.at("ll_scale").get<double>();
  c.T = j.at("T").get<std::size_t>();
  c.beta_start = j.at("beta_start").get<double>();
  c.beta_end = j.at("beta_end").get<double>();
  c.ddim_steps = j.at("ddim_steps").get<std::size_t>();
  c.sample_seed = j.at("sample_seed").get<std::uint64_t>();
  const Json& e = j.at("eps");
  c.eps.image_channels = e.at("image_channels").get<std::size_t>();
  c.eps.cond_channels = e.at("cond_channels").get<std::size_t>();
  c.eps.time_channels = e.at("time_channels").get<std::size_t>();
  c.eps.hidden = e.at("hidden").get<std::size_t>();
  c.eps.attn_dim = e.at("attn_dim").get<std::size_t>();
  c.eps.max_window = e.at("max_window").get<std::size_t>();
  const Json& h = j.at("hf");
  c.hf.features = h.at("features").get<std::size_t>();
  c.hf.max_window = h.at("max_window").get<std::size_t>();
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Stage2Model& model) {
  fs::create_directories(dir);
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw DataError("cannot write " + (dir / "params.bin").string());
  Json tensors = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.params.entries()) {
    const auto bytes = encode_llt1(t);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes.size()}});
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    offset += bytes.size();
  }
  if (!bin) throw DataError("failed writing checkpoint parameters");
  Json j;
  j["format"] = "lensless-checkpoint";
  j["version"] = 1;
  j["config"] = config_to_json(model.config);
  j["tensors"] = std::move(tensors);
  std::ofstream man(dir / "manifest.json", std::ios::binary);
  if (!man) throw DataError("cannot write " + (dir / "manifest.json").string());
  man << j.dump(2) << '\n';
}

Stage2Model load_checkpoint(const fs::path& dir) {
  std::ifstream man(dir / "manifest.json", std::ios::binary);
  if (!man) throw DataError("missing checkpoint: " + (dir / "manifest.json").string());
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw DataError("missing checkpoint: " + (dir / "params.bin").string());
  std::ostringstream raw;
  raw << bin.rdbuf();
  const std::string blob = raw.str();
  try {
    const Json j = Json::parse(man);
    if (j.at("format").get<std::string>() != "lensless-checkpoint" || j.at("version").get<int>() != 1) {
      throw DataError("unsupported checkpoint format in " + dir.string());
    }
    Stage2Model m;
    m.config = config_from_json(j.at("config"));
    for (const Json& t : j.at("tensors")) {
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto bytes = t.at("bytes").get<std::uint64_t>();
      if (offset + bytes > blob.size()) throw DataError("checkpoint parameters truncated");
      std::istringstream in(blob.substr(offset, bytes));
      Tensor value = read_llt1(in);
      if (value.shape() != t.at("shape").get<Shape>()) {
        throw DataError("checkpoint tensor " + t.at("name").get<std::string>() + " has inconsistent shape");
      }
      m.params.add(t.at("name").get<std::string>(), std::move(value));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace lensless
