#include "lensless/datasetgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "lensless/errors.hpp"
#include "lensless/image_io.hpp"
#include "lensless/rng.hpp"

namespace lensless {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

void DatasetManifest::validate(const fs::path& root) const {
  std::set<std::string> ids;
  for (const DatasetItem& item : items) {
    if (!ids.insert(item.id).second) throw DataError("manifest: duplicate id " + item.id);
    if (item.split != "train" && item.split != "test") {
      throw DataError("manifest: item " + item.id + " has unknown split '" + item.split + "'");
    }
    for (const std::string& p : {item.scene, item.measurement}) {
      if (!fs::exists(root / p)) throw DataError("manifest: missing file " + (root / p).string());
    }
  }
  if (!psf.empty() && !fs::exists(root / psf)) throw DataError("manifest: missing PSF " + psf);
}

std::string manifest_to_json(const DatasetManifest& m) {
  Json j;
  j["version"] = m.version;
  j["psf"] = m.psf;
  j["reference_exposure_s"] = m.reference_exposure_s;
  j["noise"] = m.noise;
  j["sensor"] = {{"k", m.sensor.photon_scale},
                 {"qe", m.sensor.quantum_efficiency},
                 {"read_std", m.sensor.read_noise_std},
                 {"adu", m.sensor.adc_gain},
                 {"baseline", m.sensor.adc_baseline},
                 {"bits", m.sensor.bit_depth},
                 {"poisson_crossover", m.sensor.poisson_crossover}};
  Json items = Json::array();
  for (const DatasetItem& it : m.items) {
    items.push_back({{"id", it.id},
                     {"split", it.split},
                     {"scene", it.scene},
                     {"measurement", it.measurement},
                     {"exposure_s", it.exposure_s},
                     {"seed", it.seed}});
  }
  j["items"] = std::move(items);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw DataError("manifest: unsupported version " + std::to_string(m.version));
    m.psf = j.at("psf").get<std::string>();
    m.reference_exposure_s = j.at("reference_exposure_s").get<double>();
    m.noise = j.at("noise").get<bool>();
    const Json& s = j.at("sensor");
    m.sensor.photon_scale = s.at("k").get<double>();
    m.sensor.quantum_efficiency = s.at("qe").get<double>();
    m.sensor.read_noise_std = s.at("read_std").get<double>();
    m.sensor.adc_gain = s.at("adu").get<double>();
    m.sensor.adc_baseline = s.at("baseline").get<double>();
    m.sensor.bit_depth = s.at("bits").get<int>();
    m.sensor.poisson_crossover = s.at("poisson_crossover").get<double>();
    m.sensor.validate();
    for (const Json& it : j.at("items")) {
      DatasetItem item;
      item.id = it.at("id").get<std::string>();
      item.split = it.at("split").get<std::string>();
      item.scene = it.at("scene").get<std::string>();
      item.measurement = it.at("measurement").get<std::string>();
      item.exposure_s = it.at("exposure_s").get<double>();
      item.seed = it.at("seed").get<std::uint64_t>();
      m.items.push_back(std::move(item));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << manifest_to_json(manifest);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

Tensor darken(const Tensor& scene, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) {
    throw std::invalid_argument("darken: factor must lie in (0, 1], got " + std::to_string(factor));
  }
  return scene * factor;
}

double CaptureSettings::exposure_factor() const {
  if (!(exposure_s > 0.0) || !(reference_exposure_s > 0.0)) {
    throw std::invalid_argument("exposure times must be positive");
  }
  return exposure_s / reference_exposure_s;
}

Tensor synthesize_pair(const Tensor& scene, const Psf& psf, const CaptureSettings& settings,
                       std::uint64_t seed) {
  settings.sensor.validate();
  Tensor y = convolve_fft(darken(scene, settings.exposure_factor()), psf);
  for (double& v : y.data()) v = std::clamp(v, 0.0, 1.0);
  if (!settings.noise) {
    for (double& v : y.data()) v = expected_adu(v, settings.sensor);
    return y;
  }
  Rng rng(seed);
  return simulate_capture(y, settings.sensor, rng);
}

std::uint64_t id_hash(const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return mix_seed(h);
}

std::uint64_t item_seed(std::uint64_t seed, const std::string& id) {
  return mix_seed(seed ^ id_hash(id));
}

std::map<std::string, std::string> assign_splits(const std::vector<std::string>& ids,
                                                 const DatasetConfig& config) {
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw DataError("dataset: duplicate scene ids");
  }
  std::stable_sort(order.begin(), order.end(), [](const std::string& a, const std::string& b) {
    return id_hash(a) < id_hash(b);
  });
  std::size_t n_train;
  if (config.train_count) {
    n_train = *config.train_count;
  } else {
    if (!(config.train_fraction >= 0.0 && config.train_fraction <= 1.0)) {
      throw std::invalid_argument("dataset: train fraction must lie in [0, 1]");
    }
    n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(order.size())));
  }
  if (n_train > order.size()) throw DataError("dataset: more training items requested than scenes");
  std::map<std::string, std::string> split;
  for (std::size_t i = 0; i < order.size(); ++i) split[order[i]] = i < n_train ? "train" : "test";
  return split;
}

DatasetManifest build_dataset(const std::map<std::string, Tensor>& scenes, const Psf& psf,
                              const fs::path& out_dir, const DatasetConfig& config) {
  if (scenes.empty()) throw DataError("dataset: no scenes");
  fs::create_directories(out_dir / "scenes");
  fs::create_directories(out_dir / "measurements");
  std::vector<std::string> ids;
  for (const auto& [id, _] : scenes) ids.push_back(id);
  const auto split = assign_splits(ids, config);

  DatasetManifest m;
  m.psf = "psf.llt1";
  m.sensor = config.capture.sensor;
  m.reference_exposure_s = config.capture.reference_exposure_s;
  m.noise = config.capture.noise;
  save_llt1(out_dir / m.psf, psf.kernel());
  for (const auto& [id, scene] : scenes) {
    DatasetItem item;
    item.id = id;
    item.split = split.at(id);
    item.scene = "scenes/" + id + ".llt1";
    item.measurement = "measurements/" + id + ".llt1";
    item.exposure_s = config.capture.exposure_s;
    item.seed = item_seed(config.seed, id);
    save_llt1(out_dir / item.scene, scene);
    save_llt1(out_dir / item.measurement, synthesize_pair(scene, psf, config.capture, item.seed));
    m.items.push_back(std::move(item));
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

DatasetManifest build_dataset(const fs::path& src_dir, const Psf& psf, const fs::path& out_dir,
                              const DatasetConfig& config) {
  if (!fs::is_directory(src_dir)) throw DataError("not a directory: " + src_dir.string());
  std::map<std::string, Tensor> scenes;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(src_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".PNG" || ext == ".llt1") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    const std::string id = f.stem().string();
    if (scenes.count(id)) throw DataError("dataset: duplicate scene id " + id);
    scenes.emplace(id, load_image(f));
  }
  return build_dataset(scenes, psf, out_dir, config);
}

Tensor regenerate_measurement(const DatasetManifest& manifest, const DatasetItem& item,
                              const fs::path& root) {
  const Psf psf = Psf::from_tensor(load_llt1(root / manifest.psf));
  CaptureSettings settings{manifest.sensor, item.exposure_s, manifest.reference_exposure_s, manifest.noise};
  return synthesize_pair(load_image(root / item.scene), psf, settings, item.seed);
}

Tensor toy_scene(std::size_t size, std::uint64_t seed) {
  if (size == 0) throw std::invalid_argument("toy_scene: size must be positive");
  Rng rng(seed);
  const double angle = 2.0 * std::numbers::pi * rng.uniform();
  const double dx = std::cos(angle), dy = std::sin(angle);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = 0.1 + 0.4 * rng.uniform();
    c1[c] = 0.3 + 0.5 * rng.uniform();
  }
  struct Blob {
    double r, c, sigma, color[3];
  };
  const std::size_t n_blobs = 1 + rng.below(3);
  std::vector<Blob> blobs(n_blobs);
  const double s = static_cast<double>(size);
  for (Blob& b : blobs) {
    b.r = s * (0.2 + 0.6 * rng.uniform());
    b.c = s * (0.2 + 0.6 * rng.uniform());
    b.sigma = s * (0.06 + 0.12 * rng.uniform());
    for (double& v : b.color) v = 0.6 * rng.uniform() - 0.2;
  }
  Tensor out({3, size, size}, 0.0);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const double u = ((static_cast<double>(c) / s - 0.5) * dx + (static_cast<double>(r) / s - 0.5) * dy) + 0.5;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = c0[ch] + (c1[ch] - c0[ch]) * u;
        for (const Blob& b : blobs) {
          const double d2 = (static_cast<double>(r) - b.r) * (static_cast<double>(r) - b.r) +
                            (static_cast<double>(c) - b.c) * (static_cast<double>(c) - b.c);
          v += b.color[ch] * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
        out[(ch * size + r) * size + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  return out;
}

std::map<std::string, Tensor> toy_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::map<std::string, Tensor> scenes;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy_%04zu", i);
    scenes.emplace(id, toy_scene(size, mix_seed(seed + i)));
  }
  return scenes;
}

}  // namespace lensless
