#include "lensless/wavelet.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "lensless/errors.hpp"

namespace lensless {
namespace {

// Analysis of one even-sized plane into four quarter planes.
void analyze(const double* src, std::size_t rows, std::size_t cols, double* ll, double* lh,
             double* hl, double* hh) {
  const std::size_t hc = cols / 2;
  for (std::size_t r = 0; r < rows / 2; ++r) {
    for (std::size_t c = 0; c < hc; ++c) {
      const double a = src[(2 * r) * cols + 2 * c];
      const double b = src[(2 * r) * cols + 2 * c + 1];
      const double cc = src[(2 * r + 1) * cols + 2 * c];
      const double d = src[(2 * r + 1) * cols + 2 * c + 1];
      const std::size_t i = r * hc + c;
      ll[i] = 0.5 * (a + b + cc + d);
      lh[i] = 0.5 * (a + b - cc - d);
      hl[i] = 0.5 * (a - b + cc - d);
      hh[i] = 0.5 * (a - b - cc + d);
    }
  }
}

void synthesize(const double* ll, const double* lh, const double* hl, const double* hh,
                std::size_t rows, std::size_t cols, double* dst) {
  const std::size_t hc = cols / 2;
  for (std::size_t r = 0; r < rows / 2; ++r) {
    for (std::size_t c = 0; c < hc; ++c) {
      const std::size_t i = r * hc + c;
      dst[(2 * r) * cols + 2 * c] = 0.5 * (ll[i] + lh[i] + hl[i] + hh[i]);
      dst[(2 * r) * cols + 2 * c + 1] = 0.5 * (ll[i] + lh[i] - hl[i] - hh[i]);
      dst[(2 * r + 1) * cols + 2 * c] = 0.5 * (ll[i] - lh[i] + hl[i] - hh[i]);
      dst[(2 * r + 1) * cols + 2 * c + 1] = 0.5 * (ll[i] - lh[i] - hl[i] + hh[i]);
    }
  }
}

Shape with_spatial(const Tensor& like, std::size_t rows, std::size_t cols) {
  if (like.rank() == 2) return {rows, cols};
  return {like.dim(0), rows, cols};
}

}  // namespace

SubbandSet dwt2(const Tensor& image) {
  if (image.empty()) throw DataError("dwt2: empty input");
  if (image.rank() != 2 && image.rank() != 3) {
    throw std::invalid_argument("dwt2: expected [H,W] or [C,H,W], got " +
                                shape_to_string(image.shape()));
  }
  const std::size_t channels = image.rank() == 3 ? image.dim(0) : 1;
  const std::size_t rows = image.dim(image.rank() - 2), cols = image.dim(image.rank() - 1);
  SubbandSet out;
  out.padded_rows = rows % 2 != 0;
  out.padded_cols = cols % 2 != 0;
  const std::size_t pr = rows + (out.padded_rows ? 1 : 0);
  const std::size_t pc = cols + (out.padded_cols ? 1 : 0);
  const Shape band_shape = with_spatial(image, pr / 2, pc / 2);
  out.ll = out.lh = out.hl = out.hh = Tensor(band_shape, 0.0);
  const std::size_t band = (pr / 2) * (pc / 2);
  std::vector<double> plane(pr * pc);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* src = image.data().data() + ch * rows * cols;
    for (std::size_t r = 0; r < pr; ++r) {
      const std::size_t sr = std::min(r, rows - 1);
      for (std::size_t c = 0; c < pc; ++c) plane[r * pc + c] = src[sr * cols + std::min(c, cols - 1)];
    }
    analyze(plane.data(), pr, pc, out.ll.data().data() + ch * band, out.lh.data().data() + ch * band,
            out.hl.data().data() + ch * band, out.hh.data().data() + ch * band);
  }
  return out;
}

Tensor idwt2(const SubbandSet& bands) {
  const Tensor& ll = bands.ll;
  if (ll.empty()) throw DataError("idwt2: empty subbands");
  for (const Tensor* t : {&bands.lh, &bands.hl, &bands.hh}) {
    if (t->shape() != ll.shape()) {
      throw DataError("idwt2: subband shapes disagree: " + shape_to_string(ll.shape()) + " vs " +
                      shape_to_string(t->shape()));
    }
  }
  if (ll.rank() != 2 && ll.rank() != 3) throw std::invalid_argument("idwt2: bad subband rank");
  const std::size_t channels = ll.rank() == 3 ? ll.dim(0) : 1;
  const std::size_t hr = ll.dim(ll.rank() - 2), hc = ll.dim(ll.rank() - 1);
  const std::size_t pr = 2 * hr, pc = 2 * hc;
  if ((bands.padded_rows && pr < 2) || (bands.padded_cols && pc < 2)) {
    throw DataError("idwt2: inconsistent padding metadata");
  }
  const std::size_t rows = pr - (bands.padded_rows ? 1 : 0);
  const std::size_t cols = pc - (bands.padded_cols ? 1 : 0);
  Tensor out(with_spatial(ll, rows, cols), 0.0);
  const std::size_t band = hr * hc;
  std::vector<double> plane(pr * pc);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    synthesize(ll.data().data() + ch * band, bands.lh.data().data() + ch * band,
               bands.hl.data().data() + ch * band, bands.hh.data().data() + ch * band, pr, pc,
               plane.data());
    double* dst = out.data().data() + ch * rows * cols;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] = plane[r * pc + c];
  }
  return out;
}

WaveletPyramid dwt2_multi(const Tensor& image, std::size_t levels) {
  if (levels < 1) throw std::invalid_argument("dwt2_multi: levels must be >= 1");
  WaveletPyramid p;
  p.levels.reserve(levels);
  for (std::size_t l = 1; l <= levels; ++l) {
    SubbandSet s = dwt2(l == 1 ? image : p.levels.back().ll);
    s.level = l;
    p.levels.push_back(std::move(s));
  }
  return p;
}

Tensor idwt2_multi(const WaveletPyramid& pyramid) {
  if (pyramid.levels.empty()) throw DataError("idwt2_multi: empty pyramid");
  Tensor approx = pyramid.coarse();
  for (std::size_t l = pyramid.levels.size(); l-- > 0;) {
    SubbandSet s = pyramid.levels[l];
    s.ll = std::move(approx);
    approx = idwt2(s);
  }
  return approx;
}

void save_subbands(const std::filesystem::path& stem, const SubbandSet& bands) {
  const std::string base = stem.string();
  save_llt1(base + "_LL.llt1", bands.ll);
  save_llt1(base + "_LH.llt1", bands.lh);
  save_llt1(base + "_HL.llt1", bands.hl);
  save_llt1(base + "_HH.llt1", bands.hh);
  nlohmann::ordered_json meta;
  meta["level"] = bands.level;
  meta["padded_rows"] = bands.padded_rows;
  meta["padded_cols"] = bands.padded_cols;
  std::ofstream out(base + ".json", std::ios::binary);
  if (!out) throw DataError("cannot write " + base + ".json");
  out << meta.dump(2) << '\n';
}

SubbandSet load_subbands(const std::filesystem::path& stem) {
  const std::string base = stem.string();
  std::ifstream in(base + ".json", std::ios::binary);
  if (!in) throw DataError("cannot read " + base + ".json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(base + ".json: " + e.what());
  }
  SubbandSet s;
  s.level = meta.value("level", std::size_t{1});
  s.padded_rows = meta.value("padded_rows", false);
  s.padded_cols = meta.value("padded_cols", false);
  s.ll = load_llt1(base + "_LL.llt1");
  s.lh = load_llt1(base + "_LH.llt1");
  s.hl = load_llt1(base + "_HL.llt1");
  s.hh = load_llt1(base + "_HH.llt1");
  return s;
}

namespace {

void check_nchw_even(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw std::invalid_argument(std::string(op) + ": expected [N,C,H,W]");
  if (t.dim(2) % 2 != 0 || t.dim(3) % 2 != 0) {
    throw std::invalid_argument(std::string(op) + ": spatial dims must be even, got " +
                                shape_to_string(t.shape()));
  }
}

// [N,C,H,W] -> [N,4C,H/2,W/2]
Tensor analyze_nchw(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t band = (h / 2) * (w / 2);
  Tensor out({n, 4 * c, h / 2, w / 2}, 0.0);
  double* o = out.data().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = x.data().data() + (b * c + ch) * h * w;
      double* base = o + b * 4 * c * band;
      analyze(src, h, w, base + ch * band, base + (c + ch) * band, base + (2 * c + ch) * band,
              base + (3 * c + ch) * band);
    }
  return out;
}

Tensor synthesize_nchw(const Tensor& s) {
  if (s.rank() != 4 || s.dim(1) % 4 != 0) {
    throw std::invalid_argument("idwt2: expected [N,4C,h,w], got " + shape_to_string(s.shape()));
  }
  const std::size_t n = s.dim(0), c = s.dim(1) / 4, hh = s.dim(2), hw = s.dim(3);
  const std::size_t band = hh * hw;
  Tensor out({n, c, 2 * hh, 2 * hw}, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* base = s.data().data() + b * 4 * c * band;
      synthesize(base + ch * band, base + (c + ch) * band, base + (2 * c + ch) * band,
                 base + (3 * c + ch) * band, 2 * hh, 2 * hw,
                 out.data().data() + (b * c + ch) * 4 * band);
    }
  return out;
}

void accumulate(Tensor* slot, const Tensor& g) {
  if (!slot) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

}  // namespace

namespace ad {

Var dwt2(Var input) {
  check_nchw_even(input.value(), "ad::dwt2");
  Tape& tape = *input.tape();
  // Orthonormal: the adjoint of analysis is synthesis.
  return tape.record(analyze_nchw(input.value()), {input},
                     [input](Tape& t, const Tensor& g) { accumulate(t.grad_slot(input), synthesize_nchw(g)); });
}

Var idwt2(Var bands) {
  Tape& tape = *bands.tape();
  return tape.record(synthesize_nchw(bands.value()), {bands},
                     [bands](Tape& t, const Tensor& g) { accumulate(t.grad_slot(bands), analyze_nchw(g)); });
}

}  // namespace ad

}  // namespace lensless
