#include "dosepred/augment.hpp"

#include <algorithm>
#include <cmath>

namespace dosepred {

AugmentParams sample_augment_params(RandomStream& rng) {
  AugmentParams a;
  for (int ax = 0; ax < 3; ++ax) a.flip[static_cast<std::size_t>(ax)] = rng.bernoulli(0.5);
  a.apply_shear = rng.bernoulli(0.2);
  if (a.apply_shear)
    for (int i = 0; i < 3; ++i)
      a.shear[static_cast<std::size_t>(i)] = rng.uniform(-0.1, 0.1);
  a.apply_zoom = rng.bernoulli(0.5);
  if (a.apply_zoom) a.zoom = rng.uniform(0.9, 1.3);
  a.apply_smooth = rng.bernoulli(0.2);
  if (a.apply_smooth) a.smooth_sigma = rng.uniform(0.25, 1.5);
  a.apply_contrast = rng.bernoulli(0.2);
  if (a.apply_contrast) a.contrast_gamma = rng.uniform(0.5, 2.0);
  return a;
}

Grid3 flip_grid(const Grid3& g, const std::array<bool, 3>& axes) {
  Grid3 out(g.shape);
  const int h = g.shape[0], w = g.shape[1], d = g.shape[2];
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < d; ++k)
        out.at(axes[0] ? h - 1 - i : i, axes[1] ? w - 1 - j : j,
               axes[2] ? d - 1 - k : k) = g.at(i, j, k);
  return out;
}

namespace {

// Nearest-neighbor resample under an affine map about the volume center:
// out(p) = in(M * (p - c) + c), zero outside the grid.
Grid3 resample_affine(const Grid3& g, const std::array<std::array<double, 3>, 3>& m) {
  Grid3 out(g.shape);
  const int h = g.shape[0], w = g.shape[1], d = g.shape[2];
  const double ci = (h - 1) * 0.5, cj = (w - 1) * 0.5, ck = (d - 1) * 0.5;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < d; ++k) {
        const double ri = i - ci, rj = j - cj, rk = k - ck;
        const double si = m[0][0] * ri + m[0][1] * rj + m[0][2] * rk + ci;
        const double sj = m[1][0] * ri + m[1][1] * rj + m[1][2] * rk + cj;
        const double sk = m[2][0] * ri + m[2][1] * rj + m[2][2] * rk + ck;
        const long ni = std::lround(si), nj = std::lround(sj), nk = std::lround(sk);
        if (ni < 0 || ni >= h || nj < 0 || nj >= w || nk < 0 || nk >= d) continue;
        out.at(i, j, k) = g.at(static_cast<int>(ni), static_cast<int>(nj),
                               static_cast<int>(nk));
      }
  return out;
}

std::array<std::array<double, 3>, 3> invert3(
    const std::array<std::array<double, 3>, 3>& a) {
  const double det =
      a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
      a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
      a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  const double id = 1.0 / det;
  std::array<std::array<double, 3>, 3> r;
  r[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * id;
  r[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * id;
  r[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * id;
  r[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * id;
  r[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * id;
  r[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * id;
  r[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * id;
  r[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * id;
  r[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * id;
  return r;
}

}  // namespace

Grid3 shear_grid(const Grid3& g, const std::array<double, 3>& shear) {
  const std::array<std::array<double, 3>, 3> fwd = {{{1.0, shear[0], shear[1]},
                                                     {0.0, 1.0, shear[2]},
                                                     {0.0, 0.0, 1.0}}};
  return resample_affine(g, invert3(fwd));
}

Grid3 zoom_grid(const Grid3& g, double factor) {
  const double inv = 1.0 / factor;
  const std::array<std::array<double, 3>, 3> m = {
      {{inv, 0.0, 0.0}, {0.0, inv, 0.0}, {0.0, 0.0, inv}}};
  return resample_affine(g, m);
}

Grid3 gaussian_smooth(const Grid3& g, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    kernel[static_cast<std::size_t>(t + radius)] =
        std::exp(-0.5 * t * t / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(t + radius)];
  }
  for (double& k : kernel) k /= ksum;

  // separable passes with edge replication
  Grid3 cur = g;
  const int h = g.shape[0], w = g.shape[1], d = g.shape[2];
  for (int axis = 0; axis < 3; ++axis) {
    Grid3 next(g.shape);
    const int ext[3] = {h, w, d};
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < d; ++k) {
          double s = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            int ii = i, jj = j, kk = k;
            int* coord = axis == 0 ? &ii : axis == 1 ? &jj : &kk;
            *coord = std::clamp(*coord + t, 0, ext[axis] - 1);
            s += kernel[static_cast<std::size_t>(t + radius)] * cur.at(ii, jj, kk);
          }
          next.at(i, j, k) = s;
        }
    cur = std::move(next);
  }
  return cur;
}

Grid3 adjust_contrast(const Grid3& g, double gamma) {
  const auto [mn_it, mx_it] = std::minmax_element(g.v.begin(), g.v.end());
  const double mn = *mn_it, mx = *mx_it;
  const double range = mx - mn;
  if (range == 0.0) return g;
  Grid3 out(g.shape);
  for (std::size_t i = 0; i < g.v.size(); ++i)
    out.v[i] = std::pow((g.v[i] - mn) / range, gamma) * range + mn;
  return out;
}

PreparedPatient apply_augment(const PreparedPatient& p, const AugmentParams& a) {
  PreparedPatient out = p;
  auto geometric = [&](Grid3& g) {
    if (a.flip[0] || a.flip[1] || a.flip[2]) g = flip_grid(g, a.flip);
    if (a.apply_shear) g = shear_grid(g, a.shear);
    if (a.apply_zoom) g = zoom_grid(g, a.zoom);
  };
  geometric(out.ct.g);
  geometric(out.dose_gt);
  geometric(out.possible_dose_mask);
  for (auto& [name, g] : out.structures) geometric(g);
  if (a.apply_smooth) out.ct.g = gaussian_smooth(out.ct.g, a.smooth_sigma);
  if (a.apply_contrast) out.ct.g = adjust_contrast(out.ct.g, a.contrast_gamma);
  return out;
}

PreparedPatient augment(const PreparedPatient& p, std::uint64_t seed) {
  RandomStream rng(seed);
  return apply_augment(p, sample_augment_params(rng));
}

}  // namespace dosepred
