#include "lensless/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "lensless/datasetgen.hpp"
#include "lensless/errors.hpp"
#include "lensless/image_io.hpp"

namespace lensless {

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

Tensor ssim_window(const SsimConfig& config, std::size_t rows, std::size_t cols) {
  std::size_t size = std::min({config.window, rows, cols});
  if (size % 2 == 0) --size;
  if (size == 0) throw std::invalid_argument("ssim: empty image");
  std::vector<double> g(size);
  const double c = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * config.sigma * config.sigma));
  }
  Tensor w({size, size}, 0.0);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) total += (w[i * size + j] = g[i] * g[j]);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] /= total;
  return w;
}

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& config) {
  if (a.shape() != b.shape()) {
    throw DataError("ssim: dims mismatch " + shape_to_string(a.shape()) + " vs " +
                    shape_to_string(b.shape()));
  }
  if (a.rank() != 2 && a.rank() != 3) throw std::invalid_argument("ssim: expected [H,W] or [C,H,W]");
  const std::size_t channels = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t rows = a.dim(a.rank() - 2), cols = a.dim(a.rank() - 1);
  const Tensor w = ssim_window(config, rows, cols);
  const std::size_t k = w.dim(0);
  const double c1 = std::pow(config.k1 * config.data_range, 2);
  const double c2 = std::pow(config.k2 * config.data_range, 2);
  const std::size_t orows = rows - k + 1, ocols = cols - k + 1;
  double total = 0.0;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* x = a.data().data() + ch * rows * cols;
    const double* y = b.data().data() + ch * rows * cols;
    double acc = 0.0;
    for (std::size_t r = 0; r < orows; ++r)
      for (std::size_t c = 0; c < ocols; ++c) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double wt = w[i * k + j];
            const double xv = x[(r + i) * cols + c + j], yv = y[(r + i) * cols + c + j];
            mx += wt * xv;
            my += wt * yv;
            sxx += wt * xv * xv;
            syy += wt * yv * yv;
            sxy += wt * xv * yv;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    total += acc / static_cast<double>(orows * ocols);
  }
  return total / static_cast<double>(channels);
}

Var ssim(Var a, Var b, const SsimConfig& config) {
  const Shape& s = a.value().shape();
  if (s != b.value().shape()) {
    throw DataError("ssim: dims mismatch " + shape_to_string(s) + " vs " +
                    shape_to_string(b.value().shape()));
  }
  if (s.size() != 4) throw std::invalid_argument("ssim: expected [N,C,H,W]");
  const Tensor w = ssim_window(config, s[2], s[3]);
  const std::size_t k = w.dim(0);
  Tensor kernel({s[1], k, k}, 0.0);
  for (std::size_t c = 0; c < s[1]; ++c) std::copy(w.values().begin(), w.values().end(), kernel.data().begin() + static_cast<std::ptrdiff_t>(c * k * k));
  Tape& tape = *a.tape();
  const Var g = tape.constant(std::move(kernel));
  const double c1 = std::pow(config.k1 * config.data_range, 2);
  const double c2 = std::pow(config.k2 * config.data_range, 2);
  auto blur = [&](Var v) { return ad::depthwise_conv2d(v, g); };
  const Var mx = blur(a), my = blur(b);
  const Var mx2 = ad::square(mx), my2 = ad::square(my), mxy = ad::mul(mx, my);
  const Var vx = ad::sub(blur(ad::square(a)), mx2);
  const Var vy = ad::sub(blur(ad::square(b)), my2);
  const Var cov = ad::sub(blur(ad::mul(a, b)), mxy);
  const Var num = ad::mul(ad::add_scalar(ad::scale(mxy, 2.0), c1), ad::add_scalar(ad::scale(cov, 2.0), c2));
  const Var den = ad::mul(ad::add_scalar(ad::add(mx2, my2), c1), ad::add_scalar(ad::add(vx, vy), c2));
  return ad::mean(ad::div(num, den));
}

EvalEntry evaluate_pair(std::string id, const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DataError(id + ": prediction shape " + shape_to_string(prediction.shape()) +
                    " differs from target " + shape_to_string(target.shape()));
  }
  return {std::move(id), mse(prediction, target), psnr(prediction, target), ssim(prediction, target)};
}

EvalReport make_report(std::vector<EvalEntry> entries, std::map<std::string, std::string> config) {
  std::sort(entries.begin(), entries.end(), [](const EvalEntry& x, const EvalEntry& y) { return x.id < y.id; });
  EvalReport r;
  r.items = std::move(entries);
  r.config = std::move(config);
  if (!r.items.empty()) {
    for (const EvalEntry& e : r.items) {
      r.mean_mse += e.mse;
      r.mean_psnr += e.psnr;
      r.mean_ssim += e.ssim;
    }
    const double n = static_cast<double>(r.items.size());
    r.mean_mse /= n;
    r.mean_psnr /= n;
    r.mean_ssim /= n;
  }
  return r;
}

namespace {

nlohmann::ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["count"] = report.items.size();
  j["mean"] = {{"mse", report.mean_mse},
               {"psnr", number_or_inf(report.mean_psnr)},
               {"ssim", report.mean_ssim}};
  auto items = nlohmann::ordered_json::array();
  for (const EvalEntry& e : report.items) {
    items.push_back({{"id", e.id}, {"mse", e.mse}, {"psnr", number_or_inf(e.psnr)}, {"ssim", e.ssim}});
  }
  j["items"] = std::move(items);
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  j["config"] = std::move(cfg);
  return j.dump(2) + "\n";
}

EvalReport evaluate_pairs(const std::filesystem::path& manifest_path, const std::filesystem::path& pred_dir) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::filesystem::path root = manifest_path.parent_path();
  std::vector<EvalEntry> entries;
  for (const DatasetItem& item : manifest.items) {
    if (item.split != "test") continue;
    std::filesystem::path pred = pred_dir / (item.id + ".llt1");
    if (!std::filesystem::exists(pred)) pred = pred_dir / (item.id + ".png");
    if (!std::filesystem::exists(pred)) throw DataError("missing prediction for " + item.id + " in " + pred_dir.string());
    entries.push_back(evaluate_pair(item.id, load_image(pred), load_image(root / item.scene)));
  }
  if (entries.empty()) throw DataError("manifest has no test items");
  return make_report(std::move(entries), {{"manifest", manifest_path.filename().string()}});
}

}  // namespace lensless
