#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

double mse(const Tensor& a, const Tensor& b);
/// 10 log10(peak^2 / mse); +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct SsimConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Normalized 2D Gaussian window. For images smaller than the configured
/// window the size is reduced to the largest odd value that fits.
Tensor ssim_window(const SsimConfig& config, std::size_t rows, std::size_t cols);

/// Mean local SSIM over valid window positions, computed per channel of
/// [H,W] or [C,H,W] images and averaged.
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& config = {});

/// Same quantity on the tape for [N,C,H,W] inputs, averaged over N and C.
Var ssim(Var a, Var b, const SsimConfig& config = {});

struct EvalEntry {
  std::string id;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalEntry> items;
  double mean_mse = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::map<std::string, std::string> config;
};

EvalEntry evaluate_pair(std::string id, const Tensor& prediction, const Tensor& target);
/// Sorts entries by id and fills the means.
EvalReport make_report(std::vector<EvalEntry> entries, std::map<std::string, std::string> config = {});
/// Stable JSON rendering; infinite PSNR is written as the string "inf".
std::string report_to_json(const EvalReport& report);

/// Scores <pred_dir>/<id>.{llt1,png} against the scene of every test item
/// in a dataset manifest.
EvalReport evaluate_pairs(const std::filesystem::path& manifest, const std::filesystem::path& pred_dir);

}  // namespace lensless
