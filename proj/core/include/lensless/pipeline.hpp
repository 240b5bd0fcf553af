#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lensless/datasetgen.hpp"
#include "lensless/enhance.hpp"
#include "lensless/metrics.hpp"
#include "lensless/recon.hpp"

namespace lensless {

/// Stage-1 reconstructions of one dataset split, paired with their scenes.
struct Stage1Set {
  std::vector<std::string> ids;
  std::vector<Stage2Example> examples;
};

/// Runs stage 1 on every item of `split` ("train", "test" or "" for all).
/// With `exposure_s` the measurements are re-synthesized at that exposure
/// from each item's scene and seed instead of being read from disk.
Stage1Set stage1_split(const DatasetManifest& manifest, const std::filesystem::path& root,
                       const std::string& split, const WienerConfig& wiener,
                       std::optional<double> exposure_s = std::nullopt);

EvalReport evaluate_stage1(const Stage1Set& set, std::map<std::string, std::string> config = {});
EvalReport evaluate_stage2(const Stage1Set& set, const Stage2Model& model,
                           std::map<std::string, std::string> config = {});

struct ExposurePoint {
  double exposure_s = 0.0;
  EvalReport stage1;
  std::optional<EvalReport> stage2;
};

/// Test-split scores at each exposure time; stage 2 only when a model is given.
std::vector<ExposurePoint> sweep_exposure(const DatasetManifest& manifest, const std::filesystem::path& root,
                                          const std::vector<double>& exposures_s, const WienerConfig& wiener,
                                          const Stage2Model* model);

}  // namespace lensless
