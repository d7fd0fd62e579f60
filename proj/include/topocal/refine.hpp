#pragma once

// Refinement of a matched template homography H_k by descent on the relative
// transform H_bar, with H = H_k * H_bar.
//
// The optimizer works on z in R^8 through the output-frame correction
//
//   H(z) = N^-1 (I + D(z)) N H_k,   D(z) = [z0 z1 z2; z3 z4 z5; z6 z7 0],
//
// where N centers the output raster and scales it by 2 / diagonal, so every
// coordinate of z moves pixels by amounts of the same order. H_bar(z) is
// H_k^-1 H(z) and starts at the identity.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "topocal/error.hpp"
#include "topocal/geometry.hpp"
#include "topocal/loss.hpp"
#include "topocal/raster.hpp"
#include "topocal/warp_gradient.hpp"

namespace topocal::refine {

struct RefineConfig {
  loss::Objective objective;  // Top-MSE by default
  int max_iters = 200;
  double initial_step = 1e-2;
  double step_shrink = 0.5;
  double step_grow = 2.0;
  double max_step = 0.25;
  double min_step = 1e-9;
  double grad_tolerance = 1e-7;
  double loss_tolerance = 1e-9;
  std::array<bool, 8> active{true, true, true, true, true, true, true, true};

  void validate() const {
    if (max_iters < 1) throw InvalidParameter("max_iters must be >= 1");
    if (!(initial_step > 0.0)) throw InvalidParameter("initial_step must be > 0");
    if (!(step_shrink > 0.0 && step_shrink < 1.0))
      throw InvalidParameter("step_shrink must lie in (0, 1)");
    if (!(step_grow >= 1.0)) throw InvalidParameter("step_grow must be >= 1");
    if (!(grad_tolerance > 0.0) || !(loss_tolerance > 0.0))
      throw InvalidParameter("tolerances must be > 0");
    if (!(min_step > 0.0) || !(max_step >= initial_step))
      throw InvalidParameter("need 0 < min_step and max_step >= initial_step");
    objective.topo.validate();
  }
};

struct RefineResult {
  Homography h;      // compose(H_k, h_bar)
  Homography h_bar;  // relative transform
  std::array<double, 8> z{};
  std::vector<double> trajectory;  // objective at the start and after each accepted step
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;

  double initial_loss() const { return trajectory.front(); }
  double final_loss() const { return trajectory.back(); }
};

// Output-frame conditioning matrix N.
inline Mat3 conditioning(int width, int height) {
  const double s = 2.0 / std::hypot(static_cast<double>(width), static_cast<double>(height));
  Mat3 n;
  n << s, 0, -s * 0.5 * width,  //
      0, s, -s * 0.5 * height,  //
      0, 0, 1;
  return n;
}

inline Mat3 correction(const std::array<double, 8>& z) {
  Mat3 a;
  a << 1 + z[0], z[1], z[2],  //
      z[3], 1 + z[4], z[5],   //
      z[6], z[7], 1;
  return a;
}

class Refiner {
 public:
  Refiner(const OneHotMap& birdseye, const OneHotMap& query, const Homography& h_k,
          const RefineConfig& cfg)
      : birdseye_(birdseye), query_(query), h_k_(h_k.matrix()), cfg_(cfg) {
    cfg_.validate();
    if (birdseye.class_count() != query.class_count())
      throw InvalidInput("bird's-eye and query maps differ in class count");
    if (geometry::is_degenerate(h_k_)) throw DegenerateHomography("matched homography is singular");
    n_ = conditioning(query.width(), query.height());
    n_inv_ = n_.inverse();
    nh_ = n_ * h_k_;
  }

  Mat3 homography_at(const std::array<double, 8>& z) const { return n_inv_ * correction(z) * nh_; }

  double loss_at(const std::array<double, 8>& z) const {
    const Homography h(homography_at(z));
    const OneHotMap warped = raster::warp_onehot(birdseye_, h, query_.width(), query_.height());
    return loss::evaluate(warped, query_, cfg_.objective);
  }

  // Objective and gradient with respect to z (inactive entries zeroed).
  double loss_and_gradient(const std::array<double, 8>& z, std::array<double, 8>& g) const {
    const raster::MatrixGradient mg = raster::loss_matrix_gradient(
        birdseye_, query_, Homography(homography_at(z)), cfg_.objective);
    const Mat3 da = n_inv_.transpose() * mg.d_h * nh_.transpose();
    for (int k = 0; k < 8; ++k) g[k] = cfg_.active[k] ? da(k / 3, k % 3) : 0.0;
    return mg.loss;
  }

  // Descent state, resumable across calls to advance().
  struct State {
    std::array<double, 8> z{};
    std::array<double, 8> g{};
    double loss = 0.0;
    double step = 0.0;
    std::vector<double> trajectory;
    int iterations = 0;
    bool converged = false;
    std::string stop_reason;
  };

  State start() const {
    State s;
    s.loss = loss_and_gradient(s.z, s.g);
    s.trajectory.push_back(s.loss);
    s.step = cfg_.initial_step;
    return s;
  }

  // Runs up to `budget` more iterations (never past max_iters in total).
  void advance(State& s, int budget) const {
    const int limit = std::min(cfg_.max_iters, s.iterations + budget);
    while (!s.converged) {
      const double gnorm = norm(s.g);
      if (gnorm < cfg_.grad_tolerance) {
        s.converged = true;
        s.stop_reason = "gradient below tolerance";
        break;
      }
      if (s.iterations >= limit) {
        s.stop_reason = "iteration limit";
        break;
      }
      ++s.iterations;
      bool accepted = false;
      while (s.step >= cfg_.min_step) {
        std::array<double, 8> trial = s.z;
        for (int k = 0; k < 8; ++k) trial[k] -= s.step * s.g[k] / gnorm;
        double trial_loss;
        try {
          if (geometry::is_degenerate(homography_at(trial)))
            throw DegenerateHomography("trial step is singular");
          trial_loss = loss_at(trial);
        } catch (const DegenerateHomography&) {
          s.step *= cfg_.step_shrink;
          continue;
        }
        if (trial_loss < s.loss) {
          const double gain = s.loss - trial_loss;
          s.z = trial;
          s.loss = loss_and_gradient(trial, s.g);
          s.trajectory.push_back(trial_loss);
          accepted = true;
          s.step = std::min(s.step * cfg_.step_grow, cfg_.max_step);
          if (gain < cfg_.loss_tolerance) {
            s.converged = true;
            s.stop_reason = "improvement below tolerance";
          }
          break;
        }
        s.step *= cfg_.step_shrink;
      }
      if (!accepted) {
        s.converged = true;
        s.stop_reason = "no descent step above min_step";
      }
    }
  }

  RefineResult finish(const State& s) const {
    RefineResult r;
    r.z = s.z;
    r.trajectory = s.trajectory;
    r.iterations = s.iterations;
    r.converged = s.converged;
    r.stop_reason = s.stop_reason;
    const bool moved = std::any_of(s.z.begin(), s.z.end(), [](double v) { return v != 0.0; });
    r.h_bar = moved ? geometry::normalize(Homography(h_k_.inverse() * homography_at(s.z)))
                    : Homography::identity();
    r.h = geometry::compose(Homography(h_k_), r.h_bar);
    return r;
  }

  RefineResult run() const {
    State s = start();
    advance(s, cfg_.max_iters);
    return finish(s);
  }

 private:
  static double norm(const std::array<double, 8>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }

  const OneHotMap& birdseye_;
  const OneHotMap& query_;
  Mat3 h_k_;
  RefineConfig cfg_;
  Mat3 n_, n_inv_, nh_;
};

inline RefineResult refine(const OneHotMap& query, const OneHotMap& birdseye,
                           const Homography& h_k, const RefineConfig& cfg = {}) {
  return Refiner(birdseye, query, h_k, cfg).run();
}

inline RefineResult refine(const SemanticMap& query, const SemanticMap& birdseye,
                           const Homography& h_k, const RefineConfig& cfg = {}) {
  const OneHotMap q = raster::to_onehot(query), b = raster::to_onehot(birdseye);
  return refine(q, b, h_k, cfg);
}

// Refinement from several starting homographies, e.g. the top-k matches.
// Every start first runs `screen_iters` iterations; the `keep` lowest-loss
// starts then continue to max_iters and the lowest final loss wins (ties go
// to the earlier start).
struct MultiStartConfig {
  int screen_iters = 40;
  int keep = 2;
};

struct MultiStartResult {
  RefineResult best;
  std::size_t start_index = 0;
  std::vector<double> screened_losses;  // per start, after screening
};

inline MultiStartResult refine_multi(const OneHotMap& query, const OneHotMap& birdseye,
                                     const std::vector<Homography>& starts,
                                     const RefineConfig& cfg = {},
                                     const MultiStartConfig& ms = {}) {
  if (starts.empty()) throw InvalidInput("multi-start refinement needs at least one start");
  if (ms.keep < 1 || ms.screen_iters < 0) throw InvalidParameter("invalid multi-start config");
  std::vector<Refiner> refiners;
  std::vector<Refiner::State> states;
  refiners.reserve(starts.size());
  for (const auto& h : starts) {
    refiners.emplace_back(birdseye, query, h, cfg);
    states.push_back(refiners.back().start());
    refiners.back().advance(states.back(), ms.screen_iters);
  }
  MultiStartResult out;
  std::vector<std::size_t> order(starts.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
    out.screened_losses.push_back(states[i].loss);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return states[a].loss < states[b].loss; });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(ms.keep)));
  std::sort(order.begin(), order.end());
  std::size_t best = order.front();
  for (std::size_t i : order) {
    refiners[i].advance(states[i], cfg.max_iters);
    if (states[i].loss < states[best].loss) best = i;
  }
  out.start_index = best;
  out.best = refiners[best].finish(states[best]);
  return out;
}

// IoU of the bird's-eye map warped by `h` against the query ground truth.
inline raster::IouResult evaluate_estimate(const Homography& h, const SemanticMap& birdseye,
                                           const SemanticMap& query_gt,
                                           bool include_background = false) {
  return raster::iou(raster::warp_labels(birdseye, h, query_gt.width(), query_gt.height()),
                     query_gt, include_background);
}

inline raster::IouResult evaluate_estimate(const RefineResult& r, const SemanticMap& birdseye,
                                           const SemanticMap& query_gt,
                                           bool include_background = false) {
  return evaluate_estimate(r.h, birdseye, query_gt, include_background);
}

inline void to_json(nlohmann::json& j, const RefineConfig& c) {
  j = nlohmann::json{{"loss", loss::to_string(c.objective.kind)},
                     {"topo", c.objective.topo},
                     {"max_iters", c.max_iters},
                     {"initial_step", c.initial_step},
                     {"step_shrink", c.step_shrink},
                     {"step_grow", c.step_grow},
                     {"max_step", c.max_step},
                     {"min_step", c.min_step},
                     {"grad_tolerance", c.grad_tolerance},
                     {"loss_tolerance", c.loss_tolerance}};
}

inline void from_json(const nlohmann::json& j, RefineConfig& c) {
  c = RefineConfig{};
  if (j.contains("loss")) c.objective.kind = loss::kind_from_string(j.at("loss").get<std::string>());
  if (j.contains("topo")) c.objective.topo = j.at("topo").get<loss::TopoLossConfig>();
  c.max_iters = j.value("max_iters", c.max_iters);
  c.initial_step = j.value("initial_step", c.initial_step);
  c.step_shrink = j.value("step_shrink", c.step_shrink);
  c.step_grow = j.value("step_grow", c.step_grow);
  c.max_step = j.value("max_step", c.max_step);
  c.min_step = j.value("min_step", c.min_step);
  c.grad_tolerance = j.value("grad_tolerance", c.grad_tolerance);
  c.loss_tolerance = j.value("loss_tolerance", c.loss_tolerance);
  try {
    c.validate();
  } catch (const InvalidParameter& e) {
    throw InvalidSpec(std::string("refine config: ") + e.what());
  }
}

inline void to_json(nlohmann::json& j, const RefineResult& r) {
  j = nlohmann::json{{"homography", r.h},           {"relative", r.h_bar},
                     {"trajectory", r.trajectory},  {"iterations", r.iterations},
                     {"converged", r.converged},    {"stop_reason", r.stop_reason}};
}

}  // namespace topocal::refine
