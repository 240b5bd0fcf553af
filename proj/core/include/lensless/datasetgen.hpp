#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lensless/optics.hpp"
#include "lensless/sensor.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

struct DatasetItem {
  std::string id;
  std::string split;        // "train" or "test"
  std::string scene;        // path relative to the manifest directory
  std::string measurement;  // path relative to the manifest directory
  double exposure_s = 0.7;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int version = 1;
  std::string psf;  // path relative to the manifest directory
  SensorParams sensor;
  double reference_exposure_s = 0.7;
  bool noise = true;
  std::vector<DatasetItem> items;

  /// Unique ids and existing files (relative to `root`).
  void validate(const std::filesystem::path& root) const;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Linear intensity scaling by factor in (0, 1].
Tensor darken(const Tensor& scene, double factor);

struct CaptureSettings {
  SensorParams sensor;
  double exposure_s = 0.7;
  double reference_exposure_s = 0.7;
  /// When false the capture is the noiseless expected ADU d*eta*K*y + b_l.
  bool noise = true;

  double exposure_factor() const;
};

/// convolve_fft(darken(scene, t / t_ref)) clamped to [0, 1], then the sensor
/// chain with an Rng seeded by `seed`.
Tensor synthesize_pair(const Tensor& scene, const Psf& psf, const CaptureSettings& settings,
                       std::uint64_t seed);

/// Stable 64-bit hash of an id (FNV-1a followed by a SplitMix64 finalizer).
std::uint64_t id_hash(const std::string& id);
/// Seed of item `id` in a run seeded with `seed`.
std::uint64_t item_seed(std::uint64_t seed, const std::string& id);

struct DatasetConfig {
  CaptureSettings capture;
  std::uint64_t seed = 42;
  double train_fraction = 0.9;
  /// Overrides train_fraction when set.
  std::optional<std::size_t> train_count;
};

/// Ids ordered by id_hash; the first n_train are the training split.
std::map<std::string, std::string> assign_splits(const std::vector<std::string>& ids,
                                                 const DatasetConfig& config);

/// Writes scenes/<id>.llt1, measurements/<id>.llt1, psf.llt1 and
/// manifest.json under out_dir.
DatasetManifest build_dataset(const std::map<std::string, Tensor>& scenes, const Psf& psf,
                              const std::filesystem::path& out_dir, const DatasetConfig& config);
/// Loads every PNG/LLT1 file of src_dir (id = file stem) and builds the dataset.
DatasetManifest build_dataset(const std::filesystem::path& src_dir, const Psf& psf,
                              const std::filesystem::path& out_dir, const DatasetConfig& config);

/// Recomputes the measurement of one manifest item from its scene and seed.
Tensor regenerate_measurement(const DatasetManifest& manifest, const DatasetItem& item,
                              const std::filesystem::path& root);

/// Smooth synthetic RGB scenes [3,size,size]: a linear colour gradient plus
/// a few Gaussian blobs, clamped to [0, 1].
Tensor toy_scene(std::size_t size, std::uint64_t seed);
std::map<std::string, Tensor> toy_corpus(std::size_t count, std::size_t size, std::uint64_t seed);

}  // namespace lensless
