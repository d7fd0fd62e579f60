#pragma once

// Analytic derivative of a loss between a warped one-hot map and a target,
// taken through the bilinear sampler with respect to the homography.
//
// For destination pixel p the sampler reads the source at q = G p with
// G = H^-1, (u, v) = (q.x / q.z, q.y / q.z). Since dG = -G dH G,
//
//   dL/dH = -G^T * sum_p (dL/dq_p) q_p^T .
//
// Bilinear weights use their one-sided derivative at cell boundaries.

#include <array>
#include <cmath>
#include <vector>

#include "topocal/geometry.hpp"
#include "topocal/loss.hpp"
#include "topocal/raster.hpp"

namespace topocal::raster {

struct WarpGradient {
  double loss = 0.0;
  Param8 gradient{};  // d loss / d (first 8 entries of the normalized H)
};

struct MatrixGradient {
  double loss = 0.0;
  Mat3 d_h = Mat3::Zero();  // d loss / d H, all nine entries of H as given
};

// Value and matrix gradient of `obj` evaluated at warp_onehot(src, h).
inline MatrixGradient loss_matrix_gradient(const OneHotMap& src, const OneHotMap& target,
                                           const Homography& h, const loss::Objective& obj) {
  if (src.class_count() != target.class_count())
    throw InvalidInput("source and target class counts differ");
  const InverseMapping map(h);
  const int w = target.width(), ht = target.height(), nc = src.class_count();
  const auto bg = background_onehot(nc);

  struct Sample {
    bool valid = false;
    Vec3 q;
    double fx = 0.0, fy = 0.0;
    std::array<const double*, 4> k{};
  };
  // Per-thread scratch reused across calls.
  thread_local std::vector<Sample> samples;
  thread_local OneHotMap warped;
  thread_local std::vector<double> d_warped;
  samples.assign(static_cast<std::size_t>(w) * ht, Sample{});
  if (warped.width() != w || warped.height() != ht || warped.class_count() != nc)
    warped = OneHotMap(w, ht, nc);
  for (int y = 0; y < ht; ++y)
    for (int x = 0; x < w; ++x) {
      Sample& s = samples[static_cast<std::size_t>(y) * w + x];
      double* o = warped.pixel(x, y);
      double u, v;
      s.q = map.preimage(x, y);
      if (!map.source(s.q, u, v) || !detail::in_range(u, v)) {
        std::copy(bg.begin(), bg.end(), o);
        continue;
      }
      s.valid = true;
      const BilinearSample cell = bilinear_cell(u, v);
      s.k = bilinear_corners(src, cell, bg.data());
      s.fx = cell.fx;
      s.fy = cell.fy;
      const double fx = s.fx, fy = s.fy;
      const auto& k = s.k;
      for (int c = 0; c < nc; ++c)
        o[c] = (1 - fx) * (1 - fy) * k[0][c] + fx * (1 - fy) * k[1][c] +
               (1 - fx) * fy * k[2][c] + fx * fy * k[3][c];
    }

  MatrixGradient out;
  out.loss = loss::evaluate_with_gradient(warped, target, obj, d_warped);

  Mat3 acc = Mat3::Zero();
  for (int y = 0; y < ht; ++y)
    for (int x = 0; x < w; ++x) {
      const Sample& s = samples[static_cast<std::size_t>(y) * w + x];
      if (!s.valid) continue;
      const double* g = d_warped.data() + (static_cast<std::size_t>(y) * w + x) * nc;
      const auto& k = s.k;
      const double fx = s.fx, fy = s.fy;
      double gu = 0.0, gv = 0.0;
      for (int c = 0; c < nc; ++c) {
        if (g[c] == 0.0) continue;
        gu += g[c] * ((1 - fy) * (k[1][c] - k[0][c]) + fy * (k[3][c] - k[2][c]));
        gv += g[c] * ((1 - fx) * (k[2][c] - k[0][c]) + fx * (k[3][c] - k[1][c]));
      }
      if (gu == 0.0 && gv == 0.0) continue;
      const double iz = 1.0 / s.q.z();
      const Vec3 gq(gu * iz, gv * iz, -(gu * s.q.x() + gv * s.q.y()) * iz * iz);
      acc.noalias() += gq * s.q.transpose();
    }
  out.d_h = -map.inverse().transpose() * acc;
  return out;
}

// Loss and gradient with respect to the 8-parameter form of h (h33 = 1).
inline WarpGradient loss_gradient(const OneHotMap& src, const OneHotMap& target,
                                  const Homography& h, const loss::Objective& obj) {
  const Homography n = h.normalized() ? h : geometry::normalize(h);
  const MatrixGradient mg = loss_matrix_gradient(src, target, n, obj);
  WarpGradient out;
  out.loss = mg.loss;
  for (int k = 0; k < 8; ++k) out.gradient[k] = mg.d_h(k / 3, k % 3);
  return out;
}

}  // namespace topocal::raster
