#pragma once

// Pixel losses on one-hot maps and the patch-neighborhood topological loss.
//
// The topological loss splits both maps into a sqrt(N) x sqrt(N) grid. Each
// patch pays its own base loss plus alpha times the excess over beta of every
// patch in its 3x3 neighborhood (itself included unless disabled):
//
//   L_patch(i, j) = B(i, j) + alpha * sum_{k,l in -1..1} max(0, B(i+k, j+l) - beta)
//   L_top         = (1 / N) * sum_{i,j} L_patch(i, j)
//
// Neighbors outside the grid contribute nothing.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topocal/error.hpp"
#include "topocal/raster.hpp"

namespace topocal::loss {

inline constexpr double kDiceEpsilon = 1e-6;

enum class Base { mse, dice };

struct TopoLossConfig {
  double alpha = 0.3;
  double beta = 0.3;
  int patch_count = 16;  // N, a perfect square
  Base base = Base::mse;
  bool include_center = true;  // (k, l) = (0, 0) inside the neighbor sum

  int side() const {
    const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patch_count))));
    return s;
  }

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidParameter("alpha must be >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidParameter("beta must be >= 0");
    if (patch_count < 1 || side() * side() != patch_count)
      throw InvalidInput("patch count must be a perfect square >= 1, got " +
                         std::to_string(patch_count));
  }
};

// Which loss an optimizer or matcher evaluates.
enum class Kind { mse, dice, top_mse, top_dice };

struct Objective {
  Kind kind = Kind::top_mse;
  TopoLossConfig topo;  // alpha/beta/N; `base` is derived from `kind`

  bool topological() const { return kind == Kind::top_mse || kind == Kind::top_dice; }
  Base base() const { return (kind == Kind::dice || kind == Kind::top_dice) ? Base::dice : Base::mse; }
  TopoLossConfig topo_config() const {
    TopoLossConfig c = topo;
    c.base = base();
    return c;
  }
};

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::mse: return "mse";
    case Kind::dice: return "dice";
    case Kind::top_mse: return "topmse";
    case Kind::top_dice: return "topdice";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  if (s == "mse") return Kind::mse;
  if (s == "dice") return Kind::dice;
  if (s == "topmse") return Kind::top_mse;
  if (s == "topdice") return Kind::top_dice;
  throw InvalidSpec("unknown loss '" + s + "' (expected mse, dice, topmse or topdice)");
}

inline Objective objective(Kind kind, TopoLossConfig topo = {}) { return {kind, topo}; }

// ---------------------------------------------------------------------------
// Patch layout

struct Rect {
  int x0, y0, x1, y1;  // half-open
  int area() const { return (x1 - x0) * (y1 - y0); }
};

// sqrt(N) x sqrt(N) partition. Every patch has floor(dim / side) pixels per
// axis except the last row/column, which takes the remainder.
struct PatchGrid {
  int side = 1;
  std::vector<int> x_edges;  // side + 1 entries
  std::vector<int> y_edges;

  // Patch (i, j): row i, column j.
  Rect patch(int i, int j) const { return {x_edges[j], y_edges[i], x_edges[j + 1], y_edges[i + 1]}; }
  int count() const { return side * side; }
};

inline PatchGrid split_patches(int width, int height, int patch_count) {
  TopoLossConfig probe;
  probe.patch_count = patch_count;
  probe.validate();
  const int side = probe.side();
  if (side > width || side > height)
    throw InvalidInput("map " + std::to_string(width) + "x" + std::to_string(height) +
                       " is too small for " + std::to_string(patch_count) + " patches");
  PatchGrid g;
  g.side = side;
  const int pw = width / side, ph = height / side;
  for (int k = 0; k < side; ++k) {
    g.x_edges.push_back(k * pw);
    g.y_edges.push_back(k * ph);
  }
  g.x_edges.push_back(width);
  g.y_edges.push_back(height);
  return g;
}

inline PatchGrid split_patches(const OneHotMap& m, int patch_count) {
  return split_patches(m.width(), m.height(), patch_count);
}

// ---------------------------------------------------------------------------
// Base losses over a region

namespace detail {

inline void require_same_shape(const OneHotMap& a, const OneHotMap& b) {
  if (!a.same_shape(b)) throw InvalidInput("loss inputs differ in shape or class count");
}

inline double mse_region(const OneHotMap& a, const OneHotMap& b, const Rect& r) {
  const int nc = a.class_count();
  double sum = 0.0;
  for (int y = r.y0; y < r.y1; ++y) {
    const double* pa = a.pixel(r.x0, y);
    const double* pb = b.pixel(r.x0, y);
    const int n = (r.x1 - r.x0) * nc;
    for (int k = 0; k < n; ++k) {
      const double d = pa[k] - pb[k];
      sum += d * d;
    }
  }
  return sum / (static_cast<double>(r.area()) * nc);
}

// Adds weight * d(mse_region)/d(a) to grad (same layout as a).
inline void mse_region_grad(const OneHotMap& a, const OneHotMap& b, const Rect& r, double weight,
                            std::vector<double>& grad) {
  const int nc = a.class_count();
  const double scale = 2.0 * weight / (static_cast<double>(r.area()) * nc);
  for (int y = r.y0; y < r.y1; ++y) {
    const std::size_t base = (static_cast<std::size_t>(y) * a.width() + r.x0) * nc;
    const int n = (r.x1 - r.x0) * nc;
    for (int k = 0; k < n; ++k) grad[base + k] += scale * (a.data()[base + k] - b.data()[base + k]);
  }
}

struct DiceSums {
  std::vector<double> ab, aa, bb;
};

inline DiceSums dice_sums(const OneHotMap& a, const OneHotMap& b, const Rect& r) {
  const int nc = a.class_count();
  DiceSums s{std::vector<double>(nc, 0.0), std::vector<double>(nc, 0.0),
             std::vector<double>(nc, 0.0)};
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const double* pa = a.pixel(x, y);
      const double* pb = b.pixel(x, y);
      for (int c = 0; c < nc; ++c) {
        s.ab[c] += pa[c] * pb[c];
        s.aa[c] += pa[c] * pa[c];
        s.bb[c] += pb[c] * pb[c];
      }
    }
  return s;
}

inline double dice_from_sums(const DiceSums& s) {
  const std::size_t nc = s.ab.size();
  double sum = 0.0;
  for (std::size_t c = 0; c < nc; ++c)
    sum += 1.0 - (2.0 * s.ab[c] + kDiceEpsilon) / (s.aa[c] + s.bb[c] + kDiceEpsilon);
  return sum / static_cast<double>(nc);
}

inline double dice_region(const OneHotMap& a, const OneHotMap& b, const Rect& r) {
  return dice_from_sums(dice_sums(a, b, r));
}

inline void dice_region_grad(const OneHotMap& a, const OneHotMap& b, const Rect& r, double weight,
                             std::vector<double>& grad) {
  const int nc = a.class_count();
  const DiceSums s = dice_sums(a, b, r);
  // d/da of -(1/C) * (2 ab + eps) / (aa + bb + eps)
  std::vector<double> k_b(nc), k_a(nc);
  for (int c = 0; c < nc; ++c) {
    const double num = 2.0 * s.ab[c] + kDiceEpsilon;
    const double den = s.aa[c] + s.bb[c] + kDiceEpsilon;
    k_b[c] = -weight * 2.0 / (den * nc);
    k_a[c] = weight * 2.0 * num / (den * den * nc);
  }
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * a.width() + x) * nc;
      for (int c = 0; c < nc; ++c)
        grad[base + c] += k_b[c] * b.data()[base + c] + k_a[c] * a.data()[base + c];
    }
}

inline double base_region(Base base, const OneHotMap& a, const OneHotMap& b, const Rect& r) {
  return base == Base::mse ? mse_region(a, b, r) : dice_region(a, b, r);
}

inline void base_region_grad(Base base, const OneHotMap& a, const OneHotMap& b, const Rect& r,
                             double weight, std::vector<double>& grad) {
  if (base == Base::mse)
    mse_region_grad(a, b, r, weight, grad);
  else
    dice_region_grad(a, b, r, weight, grad);
}

inline Rect full_rect(const OneHotMap& m) { return {0, 0, m.width(), m.height()}; }

}  // namespace detail

// Mean over all pixels and channels of the squared difference.
inline double mse(const OneHotMap& a, const OneHotMap& b) {
  detail::require_same_shape(a, b);
  return detail::mse_region(a, b, detail::full_rect(a));
}

// Soft Dice loss averaged over channels, smoothed by kDiceEpsilon.
inline double dice(const OneHotMap& a, const OneHotMap& b) {
  detail::require_same_shape(a, b);
  return detail::dice_region(a, b, detail::full_rect(a));
}

// Base loss of every patch, row-major over (i, j).
struct PatchLosses {
  int side = 1;
  std::vector<double> values;
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * side + j]; }
};

inline PatchLosses patch_base_losses(const OneHotMap& pred, const OneHotMap& gt,
                                     const PatchGrid& grid, Base base) {
  detail::require_same_shape(pred, gt);
  PatchLosses out;
  out.side = grid.side;
  out.values.reserve(grid.count());
  for (int i = 0; i < grid.side; ++i)
    for (int j = 0; j < grid.side; ++j)
      out.values.push_back(detail::base_region(base, pred, gt, grid.patch(i, j)));
  return out;
}

inline double patch_loss(const PatchLosses& losses, int i, int j, const TopoLossConfig& cfg) {
  const int n = losses.side;
  if (i < 0 || j < 0 || i >= n || j >= n)
    throw InvalidInput("patch index (" + std::to_string(i) + ", " + std::to_string(j) +
                       ") outside a " + std::to_string(n) + "x" + std::to_string(n) + " grid");
  double excess = 0.0;
  for (int k = -1; k <= 1; ++k)
    for (int l = -1; l <= 1; ++l) {
      if (k == 0 && l == 0 && !cfg.include_center) continue;
      const int ii = i + k, jj = j + l;
      if (ii < 0 || jj < 0 || ii >= n || jj >= n) continue;
      excess += std::max(0.0, losses.at(ii, jj) - cfg.beta);
    }
  return losses.at(i, j) + cfg.alpha * excess;
}

inline double patch_loss(const OneHotMap& pred, const OneHotMap& gt, const PatchGrid& grid, int i,
                         int j, const TopoLossConfig& cfg) {
  return patch_loss(patch_base_losses(pred, gt, grid, cfg.base), i, j, cfg);
}

inline double topo_loss(const PatchLosses& losses, const TopoLossConfig& cfg) {
  double sum = 0.0;
  for (int i = 0; i < losses.side; ++i)
    for (int j = 0; j < losses.side; ++j) sum += patch_loss(losses, i, j, cfg);
  return sum / static_cast<double>(losses.side * losses.side);
}

inline double topo_loss(const OneHotMap& pred, const OneHotMap& gt, const TopoLossConfig& cfg) {
  cfg.validate();
  detail::require_same_shape(pred, gt);
  const PatchGrid grid = split_patches(pred, cfg.patch_count);
  return topo_loss(patch_base_losses(pred, gt, grid, cfg.base), cfg);
}

inline double evaluate(const OneHotMap& pred, const OneHotMap& gt, const Objective& obj) {
  switch (obj.kind) {
    case Kind::mse: return mse(pred, gt);
    case Kind::dice: return dice(pred, gt);
    default: return topo_loss(pred, gt, obj.topo_config());
  }
}

// Loss value plus its derivative with respect to every entry of `pred`.
// The max(0, .) kink takes subgradient 0.
inline double evaluate_with_gradient(const OneHotMap& pred, const OneHotMap& gt,
                                     const Objective& obj, std::vector<double>& grad) {
  detail::require_same_shape(pred, gt);
  grad.assign(pred.data().size(), 0.0);
  if (!obj.topological()) {
    const Rect all = detail::full_rect(pred);
    detail::base_region_grad(obj.base(), pred, gt, all, 1.0, grad);
    return detail::base_region(obj.base(), pred, gt, all);
  }
  const TopoLossConfig cfg = obj.topo_config();
  cfg.validate();
  const PatchGrid grid = split_patches(pred, cfg.patch_count);
  const PatchLosses losses = patch_base_losses(pred, gt, grid, cfg.base);
  const int n = grid.side;
  const double inv_n = 1.0 / static_cast<double>(grid.count());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      // Patch (i, j) enters its own center term once and the thresholded sum
      // of every in-grid cell whose neighborhood contains it.
      double weight = 1.0;
      if (losses.at(i, j) > cfg.beta) {
        int neighbors = 0;
        for (int k = -1; k <= 1; ++k)
          for (int l = -1; l <= 1; ++l) {
            if (k == 0 && l == 0 && !cfg.include_center) continue;
            const int ii = i + k, jj = j + l;
            if (ii >= 0 && jj >= 0 && ii < n && jj < n) ++neighbors;
          }
        weight += cfg.alpha * neighbors;
      }
      detail::base_region_grad(cfg.base, pred, gt, grid.patch(i, j), weight * inv_n, grad);
    }
  return topo_loss(losses, cfg);
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const TopoLossConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha},
                     {"beta", c.beta},
                     {"patch_count", c.patch_count},
                     {"base", c.base == Base::mse ? "mse" : "dice"},
                     {"include_center", c.include_center}};
}

inline void from_json(const nlohmann::json& j, TopoLossConfig& c) {
  c = TopoLossConfig{};
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.patch_count = j.value("patch_count", c.patch_count);
  const std::string base = j.value("base", std::string("mse"));
  if (base != "mse" && base != "dice") throw InvalidSpec("unknown base loss '" + base + "'");
  c.base = base == "mse" ? Base::mse : Base::dice;
  c.include_center = j.value("include_center", c.include_center);
  c.validate();
}

}  // namespace topocal::loss
