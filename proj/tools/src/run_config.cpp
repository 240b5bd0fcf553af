#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace lensless::cli {

using Json = nlohmann::ordered_json;

RunConfig::RunConfig() {
  const SensorParams s;
  declare("sensor.photon_scale", s.photon_scale, "photons per unit intensity (K)");
  declare("sensor.quantum_efficiency", s.quantum_efficiency, "quantum efficiency");
  declare("sensor.read_noise_std", s.read_noise_std, "read noise std in electrons");
  declare("sensor.adc_gain", s.adc_gain, "ADU per electron");
  declare("sensor.adc_baseline", s.adc_baseline, "black level in ADU");
  declare("sensor.bit_depth", s.bit_depth, "ADC bit depth");

  const CaptureSettings c;
  declare("capture.exposure_s", c.exposure_s, "exposure time in seconds");
  declare("capture.reference_exposure_s", c.reference_exposure_s, "exposure at which K applies");
  declare("capture.noise", c.noise, "simulate sensor noise");

  const DatasetConfig d;
  declare("dataset.seed", d.seed, "dataset seed");
  declare("dataset.train_fraction", d.train_fraction, "fraction of items in the train split");
  declare("dataset.train_count", 0, "train items; 0 uses train_fraction");

  const WienerConfig w;
  declare("wiener.lambda", w.lambda, "Wiener regularizer");
  declare("wiener.per_channel", w.per_channel, "one PSF plane per colour channel");

  const AdmmConfig a;
  declare("admm.iterations", a.iterations, "ADMM iterations");
  declare("admm.rho", a.rho, "ADMM penalty");
  declare("admm.prior", "nonneg", "nonneg or tv");
  declare("admm.tv_weight", a.tv_weight, "TV weight");

  const Stage2Config e;
  declare("stage2.levels", e.levels, "wavelet levels");
  std::string hf;
  for (std::size_t l : e.hf_levels) hf += (hf.empty() ? "" : ",") + std::to_string(l);
  declare("stage2.hf_levels", hf, "comma-separated levels refined by the HF network");
  declare("stage2.ll_offset", e.ll_offset, "LL latent offset");
  declare("stage2.ll_scale", e.ll_scale, "LL latent scale");
  declare("stage2.T", e.T, "diffusion steps");
  declare("stage2.beta_start", e.beta_start, "first beta");
  declare("stage2.beta_end", e.beta_end, "last beta");
  declare("stage2.ddim_steps", e.ddim_steps, "implicit sampling steps");
  declare("stage2.sample_seed", e.sample_seed, "seed of the initial sampling noise");
  declare("stage2.eps.hidden", e.eps.hidden, "noise predictor width");
  declare("stage2.eps.attn_dim", e.eps.attn_dim, "noise predictor attention width");
  declare("stage2.eps.time_channels", e.eps.time_channels, "time embedding channels");
  declare("stage2.eps.max_window", e.eps.max_window, "attention window limit");
  declare("stage2.hf.features", e.hf.features, "HF network width");
  declare("stage2.hf.max_window", e.hf.max_window, "HF attention window limit");
  declare("stage2.init_seed", 1, "parameter initialization seed");

  const Stage2TrainConfig t;
  declare("train.steps", t.steps, "optimizer steps");
  declare("train.batch_size", t.batch_size, "batch size");
  declare("train.lr", t.adam.learning_rate, "Adam learning rate");
  declare("train.decay_factor", t.adam.decay_factor, "learning rate decay factor");
  declare("train.decay_every", t.adam.decay_every, "decay period in steps; 0 disables");
  declare("train.ema_rate", t.ema_rate, "EMA rate");
  declare("train.recon_every", t.recon_every, "rollout loss period; 0 disables");
  declare("train.seed", t.seed, "training seed");

  const LossConfig l;
  declare("loss.w1", l.w1, "MAE weight");
  declare("loss.w2", l.w2, "1 - SSIM weight");
  declare("loss.w3", l.w3, "feature distance weight");
  declare("loss.w4", l.w4, "HF MSE weight");
  declare("loss.w5", l.w5, "HF TV weight");
  declare("loss.perceptual_seed", l.perceptual.seed, "feature extractor seed");
}

void RunConfig::declare(const std::string& key, Json value, std::string help) {
  entries_[key] = Entry{std::move(value), std::move(help)};
}

void RunConfig::assign(const std::string& key, Json value) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw UsageError("unknown config key '" + key + "'");
  Json& slot = it->second.value;
  const bool ok = (slot.is_boolean() && value.is_boolean()) || (slot.is_string() && value.is_string()) ||
                  (slot.is_number_float() && value.is_number()) ||
                  (slot.is_number_integer() && value.is_number_integer() && value.get<long long>() >= 0);
  if (!ok) throw UsageError("bad value for '" + key + "': " + value.dump());
  slot = slot.is_number_float() ? Json(value.get<double>()) : std::move(value);
}

void RunConfig::flatten(const Json& node, const std::string& prefix) {
  for (const auto& [k, v] : node.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, key);
    } else {
      assign(key, v);
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  flatten(j, "");
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw UsageError("expected key=value, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded() || value.is_object() || value.is_array() || value.is_null()) value = raw;
  assign(key, std::move(value));
}

const Json& RunConfig::at(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw std::logic_error("undeclared config key " + key);
  return it->second.value;
}

double RunConfig::number(const std::string& key) const { return at(key).get<double>(); }
std::size_t RunConfig::count(const std::string& key) const { return at(key).get<std::size_t>(); }
std::uint64_t RunConfig::seed(const std::string& key) const { return at(key).get<std::uint64_t>(); }
bool RunConfig::flag(const std::string& key) const { return at(key).get<bool>(); }
std::string RunConfig::text(const std::string& key) const { return at(key).get<std::string>(); }

std::string RunConfig::describe() const {
  std::ostringstream out;
  out << "Config keys (set with --config <file.json> or --set key=value):\n";
  for (const auto& [key, e] : entries_) out << "  " << key << " = " << e.value.dump() << "  " << e.help << "\n";
  return out.str();
}

Json RunConfig::to_json() const {
  Json j = Json::object();
  for (const auto& [key, e] : entries_) j[key] = e.value;
  return j;
}

SensorParams RunConfig::sensor() const {
  SensorParams s;
  s.photon_scale = number("sensor.photon_scale");
  s.quantum_efficiency = number("sensor.quantum_efficiency");
  s.read_noise_std = number("sensor.read_noise_std");
  s.adc_gain = number("sensor.adc_gain");
  s.adc_baseline = number("sensor.adc_baseline");
  s.bit_depth = static_cast<int>(count("sensor.bit_depth"));
  s.validate();
  return s;
}

CaptureSettings RunConfig::capture() const {
  CaptureSettings c;
  c.sensor = sensor();
  c.exposure_s = number("capture.exposure_s");
  c.reference_exposure_s = number("capture.reference_exposure_s");
  c.noise = flag("capture.noise");
  c.exposure_factor();
  return c;
}

DatasetConfig RunConfig::dataset() const {
  DatasetConfig d;
  d.capture = capture();
  d.seed = seed("dataset.seed");
  d.train_fraction = number("dataset.train_fraction");
  if (count("dataset.train_count") > 0) d.train_count = count("dataset.train_count");
  return d;
}

WienerConfig RunConfig::wiener() const {
  WienerConfig w;
  w.lambda = number("wiener.lambda");
  w.per_channel = flag("wiener.per_channel");
  return w;
}

AdmmConfig RunConfig::admm() const {
  AdmmConfig a;
  a.iterations = count("admm.iterations");
  a.rho = number("admm.rho");
  const std::string prior = text("admm.prior");
  if (prior == "nonneg") {
    a.prior = AdmmPrior::Nonnegativity;
  } else if (prior == "tv") {
    a.prior = AdmmPrior::TotalVariation;
  } else {
    throw UsageError("admm.prior must be nonneg or tv");
  }
  a.tv_weight = number("admm.tv_weight");
  a.validate();
  return a;
}

Stage2Config RunConfig::stage2() const {
  Stage2Config c;
  c.levels = count("stage2.levels");
  c.hf_levels.clear();
  std::istringstream levels(text("stage2.hf_levels"));
  for (std::string tok; std::getline(levels, tok, ',');) {
    if (tok.empty()) continue;
    try {
      c.hf_levels.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw UsageError("stage2.hf_levels: bad level '" + tok + "'");
    }
  }
  c.ll_offset = number("stage2.ll_offset");
  c.ll_scale = number("stage2.ll_scale");
  c.T = count("stage2.T");
  c.beta_start = number("stage2.beta_start");
  c.beta_end = number("stage2.beta_end");
  c.ddim_steps = count("stage2.ddim_steps");
  c.sample_seed = seed("stage2.sample_seed");
  c.eps.hidden = count("stage2.eps.hidden");
  c.eps.attn_dim = count("stage2.eps.attn_dim");
  c.eps.time_channels = count("stage2.eps.time_channels");
  c.eps.max_window = count("stage2.eps.max_window");
  c.hf.features = count("stage2.hf.features");
  c.hf.max_window = count("stage2.hf.max_window");
  c.validate();
  return c;
}

Stage2TrainConfig RunConfig::train() const {
  Stage2TrainConfig t;
  t.steps = count("train.steps");
  t.batch_size = count("train.batch_size");
  t.adam.learning_rate = number("train.lr");
  t.adam.decay_factor = number("train.decay_factor");
  t.adam.decay_every = count("train.decay_every");
  t.ema_rate = number("train.ema_rate");
  t.recon_every = count("train.recon_every");
  t.seed = seed("train.seed");
  t.loss.w1 = number("loss.w1");
  t.loss.w2 = number("loss.w2");
  t.loss.w3 = number("loss.w3");
  t.loss.w4 = number("loss.w4");
  t.loss.w5 = number("loss.w5");
  t.loss.perceptual.seed = seed("loss.perceptual_seed");
  t.loss.validate();
  return t;
}

}  // namespace lensless::cli
