#include "bunet/synth.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "bunet/mask.hpp"
#include "bunet/rng.hpp"

namespace bunet {

namespace {

struct Ellipse {
  double cy, cx, a, b, theta, contrast;
  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = dx * c + dy * s;  // rotate into the ellipse frame
    const double v = -dx * s + dy * c;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

// Smooth low-frequency background: a coarse lattice of random node values,
// bilinearly interpolated over the full image.
void fill_background(SplitMix64& rng, int size, std::vector<float>& img) {
  constexpr int kNodes = 9;  // 8 lattice cells per axis regardless of size
  double nodes[kNodes][kNodes];
  for (auto& row : nodes)
    for (double& v : row) v = rng.uniform(0.2, 0.5);
  const double scale = static_cast<double>(kNodes - 1) / (size - 1);
  for (int y = 0; y < size; ++y) {
    const double ty = y * scale;
    int y0 = static_cast<int>(ty);
    if (y0 > kNodes - 2) y0 = kNodes - 2;
    const double fy = ty - y0;
    for (int x = 0; x < size; ++x) {
      const double tx = x * scale;
      int x0 = static_cast<int>(tx);
      if (x0 > kNodes - 2) x0 = kNodes - 2;
      const double fx = tx - x0;
      const double v = (1 - fy) * ((1 - fx) * nodes[y0][x0] + fx * nodes[y0][x0 + 1]) +
                       fy * ((1 - fx) * nodes[y0 + 1][x0] + fx * nodes[y0 + 1][x0 + 1]);
      img[static_cast<std::size_t>(y) * size + x] = static_cast<float>(v);
    }
  }
}

// Separable box blur with edge clamping; each output is the mean of the
// in-bounds window.
void box_blur(std::vector<float>& f, int size, int radius) {
  if (radius <= 0) return;
  std::vector<float> tmp(f.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float acc = 0;
      int cnt = 0;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < size) {
          acc += f[static_cast<std::size_t>(y) * size + xx];
          ++cnt;
        }
      }
      tmp[static_cast<std::size_t>(y) * size + x] = acc / cnt;
    }
  for (int x = 0; x < size; ++x)
    for (int y = 0; y < size; ++y) {
      float acc = 0;
      int cnt = 0;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < size) {
          acc += tmp[static_cast<std::size_t>(yy) * size + x];
          ++cnt;
        }
      }
      f[static_cast<std::size_t>(y) * size + x] = acc / cnt;
    }
}

}  // namespace

std::vector<Sample> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.count);
  const int S = cfg.size;
  const std::size_t npix = static_cast<std::size_t>(S) * S;

  for (int idx = 0; idx < cfg.count; ++idx) {
    SplitMix64 rng(cfg.seed ^ static_cast<std::uint64_t>(idx));
    std::vector<float> img(npix), field(npix);
    std::vector<std::uint8_t> mask(npix);

    bool accepted = false;
    for (int attempt = 0; attempt < 10000 && !accepted; ++attempt) {
      fill_background(rng, S, img);

      const int nblobs = rng.uniform_int(cfg.blob_min, cfg.blob_max);
      std::vector<Ellipse> blobs(nblobs);
      for (Ellipse& e : blobs) {
        e.cy = rng.uniform(0.25, 0.75) * S;
        e.cx = rng.uniform(0.25, 0.75) * S;
        e.a = rng.uniform(0.04, 0.20) * S;  // semi-axes: diameters 8-40% of size
        e.b = rng.uniform(0.04, 0.20) * S;
        e.theta = rng.uniform(0.0, 3.14159265358979323846);
        e.contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
      }

      std::fill(field.begin(), field.end(), 0.0f);
      std::fill(mask.begin(), mask.end(), 0);
      std::int64_t mask_count = 0;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          float dark = 0;
          for (const Ellipse& e : blobs)
            if (e.contains(y, x) && e.contrast > dark) dark = static_cast<float>(e.contrast);
          if (dark > 0) {
            field[static_cast<std::size_t>(y) * S + x] = dark;
            mask[static_cast<std::size_t>(y) * S + x] = 1;
            ++mask_count;
          }
        }

      const double frac = static_cast<double>(mask_count) / static_cast<double>(npix);
      if (frac <= 0.005 || frac >= 0.6) continue;

      // Soften the lesion boundary, then darken the background by the field.
      box_blur(field, S, cfg.blur_radius);
      for (std::size_t i = 0; i < npix; ++i) img[i] -= field[i];

      // Contrast floor, measured before speckle.
      double mean_in = 0, mean_out = 0;
      for (std::size_t i = 0; i < npix; ++i)
        (mask[i] ? mean_in : mean_out) += img[i];
      mean_in /= static_cast<double>(mask_count);
      mean_out /= static_cast<double>(npix - mask_count);
      if (std::abs(mean_in - mean_out) < 0.05) continue;

      accepted = true;
    }
    if (!accepted)
      fail("synth_generate: could not draw an acceptable sample for index " +
           std::to_string(idx) + "; loosen the config");

    // Multiplicative speckle, then clamp to [0,1].
    for (std::size_t i = 0; i < npix; ++i) {
      double v = img[i] * (1.0 + cfg.speckle_strength * rng.normal());
      img[i] = static_cast<float>(v < 0 ? 0 : (v > 1 ? 1 : v));
    }

    Sample s;
    char name[16];
    std::snprintf(name, sizeof name, "s%05d", idx);
    s.id = name;
    s.image = Tensor<float>::of(Shape::nchw(1, 1, S, S), std::vector<float>(img));
    s.mask = Tensor<float>(Shape::nchw(1, 1, S, S));
    for (std::size_t i = 0; i < npix; ++i) s.mask.data()[i] = mask[i] ? 1.0f : 0.0f;
    s.boundary = extract_boundary(s.mask);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bunet
