#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "topocal/error.hpp"
#include "topocal/geometry.hpp"

namespace topocal::raster {

inline constexpr int kDefaultClassCount = 4;
inline constexpr std::uint8_t kBackground = 0;

// Class-label raster, row-major. Class 0 is background.
class SemanticMap {
 public:
  SemanticMap() = default;
  SemanticMap(int width, int height, int class_count = kDefaultClassCount,
              std::uint8_t fill = kBackground)
      : width_(width), height_(height), class_count_(class_count) {
    if (width <= 0 || height <= 0) throw InvalidInput("semantic map dimensions must be positive");
    if (class_count < 1 || class_count > 256) throw InvalidInput("class count must be in [1, 256]");
    if (fill >= class_count) throw InvalidInput("fill label out of range");
    labels_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  SemanticMap(int width, int height, int class_count, std::vector<std::uint8_t> labels)
      : SemanticMap(width, height, class_count) {
    if (labels.size() != labels_.size()) throw InvalidInput("label buffer has the wrong size");
    for (auto l : labels)
      if (l >= class_count)
        throw InvalidInput("label " + std::to_string(l) + " outside [0, " +
                           std::to_string(class_count) + ")");
    labels_ = std::move(labels);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int class_count() const { return class_count_; }
  std::size_t size() const { return labels_.size(); }

  std::uint8_t at(int x, int y) const { return labels_[index(x, y)]; }
  void set(int x, int y, std::uint8_t label) {
    if (label >= class_count_) throw InvalidInput("label out of range");
    labels_[index(x, y)] = label;
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  const std::vector<std::uint8_t>& labels() const { return labels_; }

  friend bool operator==(const SemanticMap&, const SemanticMap&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  int class_count_ = kDefaultClassCount;
  std::vector<std::uint8_t> labels_;
};

// Per-pixel class weights, interleaved: weights[(y * width + x) * classes + c].
class OneHotMap {
 public:
  OneHotMap() = default;
  OneHotMap(int width, int height, int class_count)
      : width_(width), height_(height), class_count_(class_count) {
    if (width <= 0 || height <= 0) throw InvalidInput("one-hot map dimensions must be positive");
    if (class_count < 1) throw InvalidInput("class count must be positive");
    weights_.assign(static_cast<std::size_t>(width) * height * class_count, 0.0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int class_count() const { return class_count_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double* pixel(int x, int y) {
    return weights_.data() + (static_cast<std::size_t>(y) * width_ + x) * class_count_;
  }
  const double* pixel(int x, int y) const {
    return weights_.data() + (static_cast<std::size_t>(y) * width_ + x) * class_count_;
  }
  double at(int x, int y, int c) const { return pixel(x, y)[c]; }

  std::vector<double>& data() { return weights_; }
  const std::vector<double>& data() const { return weights_; }

  bool same_shape(const OneHotMap& o) const {
    return width_ == o.width_ && height_ == o.height_ && class_count_ == o.class_count_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int class_count_ = 0;
  std::vector<double> weights_;
};

inline OneHotMap to_onehot(const SemanticMap& m) {
  OneHotMap o(m.width(), m.height(), m.class_count());
  const int c = m.class_count();
  auto& w = o.data();
  for (std::size_t i = 0; i < m.size(); ++i) w[i * c + m.labels()[i]] = 1.0;
  return o;
}

// Argmax per pixel; ties go to the lowest class id.
inline SemanticMap from_onehot(const OneHotMap& o) {
  SemanticMap m(o.width(), o.height(), o.class_count());
  for (int y = 0; y < o.height(); ++y)
    for (int x = 0; x < o.width(); ++x) {
      const double* p = o.pixel(x, y);
      int best = 0;
      for (int c = 1; c < o.class_count(); ++c)
        if (p[c] > p[best]) best = c;
      m.set(x, y, static_cast<std::uint8_t>(best));
    }
  return m;
}

// Destination-to-source mapping shared by the samplers. A destination pixel
// is sampled at its center; pixels whose ray misses the ground plane in front
// of the camera (or lands on the horizon) see background.
//
// The front-side test relies on the orientation of H: a homography produced
// by a camera above the ground has det(H) > 0 in this library's frames, so a
// pixel sees the plane iff w * det(H) > 0 for its pre-image (u, v, w).
class InverseMapping {
 public:
  explicit InverseMapping(const Homography& h) {
    if (geometry::is_degenerate(h.matrix()))
      throw DegenerateHomography("cannot warp with a singular homography");
    inverse_ = h.matrix().inverse();
    orientation_ = h.matrix().determinant() > 0.0 ? 1.0 : -1.0;
  }

  const Mat3& inverse() const { return inverse_; }

  // Homogeneous pre-image of the center of destination pixel (x, y).
  Vec3 preimage(int x, int y) const { return inverse_ * Vec3(x + 0.5, y + 0.5, 1.0); }

  // Source coordinates (u, v); false when the pixel sees no ground.
  bool source(const Vec3& q, double& u, double& v) const {
    if (!(q.z() * orientation_ > 0.0)) return false;
    u = q.x() / q.z();
    v = q.y() / q.z();
    return std::isfinite(u) && std::isfinite(v);
  }

 private:
  Mat3 inverse_;
  double orientation_ = 1.0;
};

namespace detail {
// Far enough outside any raster that integer conversion stays safe.
inline constexpr double kCoordLimit = 1e9;
inline bool in_range(double u, double v) {
  return std::abs(u) < kCoordLimit && std::abs(v) < kCoordLimit;
}
}  // namespace detail

// Nearest-neighbor inverse warp of a label map; out-of-bounds is background.
inline SemanticMap warp_labels(const SemanticMap& src, const Homography& h, int out_width,
                               int out_height) {
  const InverseMapping map(h);
  SemanticMap out(out_width, out_height, src.class_count());
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x) {
      double u, v;
      if (!map.source(map.preimage(x, y), u, v) || !detail::in_range(u, v)) continue;
      const int i = static_cast<int>(std::floor(u));
      const int j = static_cast<int>(std::floor(v));
      if (src.contains(i, j)) out.set(x, y, src.at(i, j));
    }
  return out;
}

// One bilinear sample in pixel-index space (a, b) = (u - 0.5, v - 0.5).
// Writes class weights to `out`; neighbors outside the raster read as pure
// background.
struct BilinearSample {
  int i0 = 0, j0 = 0;
  double fx = 0.0, fy = 0.0;
};

inline BilinearSample bilinear_cell(double u, double v) {
  const double a = u - 0.5, b = v - 0.5;
  BilinearSample s;
  const double fa = std::floor(a), fb = std::floor(b);
  s.i0 = static_cast<int>(fa);
  s.j0 = static_cast<int>(fb);
  s.fx = a - fa;
  s.fy = b - fb;
  return s;
}

// Pointers to the four neighbors' weights; background one-hot for outsiders.
inline std::array<const double*, 4> bilinear_corners(const OneHotMap& src, const BilinearSample& s,
                                                     const double* background) {
  auto corner = [&](int i, int j) -> const double* {
    if (i < 0 || j < 0 || i >= src.width() || j >= src.height()) return background;
    return src.pixel(i, j);
  };
  return {corner(s.i0, s.j0), corner(s.i0 + 1, s.j0), corner(s.i0, s.j0 + 1),
          corner(s.i0 + 1, s.j0 + 1)};
}

inline std::vector<double> background_onehot(int class_count) {
  std::vector<double> bg(class_count, 0.0);
  bg[kBackground] = 1.0;
  return bg;
}

// Bilinear inverse warp of each class channel.
inline OneHotMap warp_onehot(const OneHotMap& src, const Homography& h, int out_width,
                             int out_height) {
  const InverseMapping map(h);
  const int nc = src.class_count();
  const auto bg = background_onehot(nc);
  OneHotMap out(out_width, out_height, nc);
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x) {
      double* o = out.pixel(x, y);
      double u, v;
      if (!map.source(map.preimage(x, y), u, v) || !detail::in_range(u, v)) {
        std::copy(bg.begin(), bg.end(), o);
        continue;
      }
      const BilinearSample s = bilinear_cell(u, v);
      const auto k = bilinear_corners(src, s, bg.data());
      const double w00 = (1 - s.fx) * (1 - s.fy), w10 = s.fx * (1 - s.fy);
      const double w01 = (1 - s.fx) * s.fy, w11 = s.fx * s.fy;
      for (int c = 0; c < nc; ++c)
        o[c] = w00 * k[0][c] + w10 * k[1][c] + w01 * k[2][c] + w11 * k[3][c];
    }
  return out;
}

struct IouResult {
  std::vector<std::optional<double>> per_class;  // nullopt: class absent from both maps
  double mean = 1.0;             // mean in the requested mode
  double mean_foreground = 1.0;  // background excluded
  double mean_all = 1.0;         // background included
};

// Per-class intersection over union. Classes absent from both maps do not
// enter the mean; with no class present at all the mean is 1.
inline IouResult iou(const SemanticMap& pred, const SemanticMap& gt,
                     bool include_background = false) {
  if (pred.width() != gt.width() || pred.height() != gt.height() ||
      pred.class_count() != gt.class_count())
    throw InvalidInput("IoU inputs differ in shape or class count");
  const int nc = pred.class_count();
  std::vector<std::size_t> inter(nc, 0), uni(nc, 0);
  const auto& a = pred.labels();
  const auto& b = gt.labels();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      ++inter[a[i]];
      ++uni[a[i]];
    } else {
      ++uni[a[i]];
      ++uni[b[i]];
    }
  }
  IouResult r;
  r.per_class.resize(nc);
  double sum_fg = 0.0, sum_all = 0.0;
  int n_fg = 0, n_all = 0;
  for (int c = 0; c < nc; ++c) {
    if (uni[c] == 0) continue;
    const double v = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    r.per_class[c] = v;
    sum_all += v;
    ++n_all;
    if (c != kBackground) {
      sum_fg += v;
      ++n_fg;
    }
  }
  r.mean_foreground = n_fg > 0 ? sum_fg / n_fg : 1.0;
  r.mean_all = n_all > 0 ? sum_all / n_all : 1.0;
  r.mean = include_background ? r.mean_all : r.mean_foreground;
  return r;
}

}  // namespace topocal::raster

namespace topocal {
using raster::OneHotMap;
using raster::SemanticMap;
}  // namespace topocal
