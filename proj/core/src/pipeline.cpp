#include "lensless/pipeline.hpp"

#include <sstream>

#include "lensless/errors.hpp"
#include "lensless/image_io.hpp"

namespace lensless {

namespace fs = std::filesystem;

Stage1Set stage1_split(const DatasetManifest& manifest, const fs::path& root, const std::string& split,
                       const WienerConfig& wiener, std::optional<double> exposure_s) {
  const Psf psf = load_psf(root / manifest.psf);
  Stage1Set set;
  for (const DatasetItem& item : manifest.items) {
    if (!split.empty() && item.split != split) continue;
    const Tensor scene = load_image(root / item.scene);
    const double t = exposure_s.value_or(item.exposure_s);
    Tensor capture;
    if (exposure_s) {
      CaptureSettings settings{manifest.sensor, t, manifest.reference_exposure_s, manifest.noise};
      capture = synthesize_pair(scene, psf, settings, item.seed);
    } else {
      capture = load_llt1(root / item.measurement);
    }
    set.ids.push_back(item.id);
    set.examples.push_back(
        {stage1(capture, psf, manifest.sensor, t, manifest.reference_exposure_s, wiener), scene});
  }
  if (set.ids.empty()) throw DataError("no items in split '" + split + "'");
  return set;
}

EvalReport evaluate_stage1(const Stage1Set& set, std::map<std::string, std::string> config) {
  std::vector<EvalEntry> entries;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    entries.push_back(evaluate_pair(set.ids[i], set.examples[i].stage1, set.examples[i].target));
  }
  return make_report(std::move(entries), std::move(config));
}

EvalReport evaluate_stage2(const Stage1Set& set, const Stage2Model& model, std::map<std::string, std::string> config) {
  std::vector<EvalEntry> entries;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    entries.push_back(evaluate_pair(set.ids[i], stage2(set.examples[i].stage1, model), set.examples[i].target));
  }
  return make_report(std::move(entries), std::move(config));
}

std::vector<ExposurePoint> sweep_exposure(const DatasetManifest& manifest, const fs::path& root,
                                          const std::vector<double>& exposures_s, const WienerConfig& wiener,
                                          const Stage2Model* model) {
  std::vector<ExposurePoint> out;
  for (double t : exposures_s) {
    std::ostringstream label;
    label << t;
    const Stage1Set set = stage1_split(manifest, root, "test", wiener, t);
    ExposurePoint p;
    p.exposure_s = t;
    p.stage1 = evaluate_stage1(set, {{"stage", "1"}, {"exposure_s", label.str()}});
    if (model) p.stage2 = evaluate_stage2(set, *model, {{"stage", "2"}, {"exposure_s", label.str()}});
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace lensless
