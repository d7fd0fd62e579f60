// Draws the bundled bird's-eye scenes, their sampling grids and the loss
// discrimination fixture under an output directory (default: data/).
//
//   make_scenes [--out <dir>]

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "topocal/datagen.hpp"
#include "topocal/png_io.hpp"
#include "topocal/raster.hpp"

namespace fs = std::filesystem;
using topocal::SemanticMap;

namespace {

constexpr std::uint8_t kRoad = 1, kTerrain = 2, kBike = 3;
constexpr int kSize = 256;

class Canvas {
 public:
  explicit Canvas(int w = kSize, int h = kSize) : map_(w, h) {}

  void fill_where(std::uint8_t c, const std::function<bool(double, double)>& inside) {
    for (int y = 0; y < map_.height(); ++y)
      for (int x = 0; x < map_.width(); ++x)
        if (inside(x + 0.5, y + 0.5)) map_.set(x, y, c);
  }

  void rect(std::uint8_t c, double x0, double y0, double x1, double y1) {
    fill_where(c, [=](double x, double y) { return x >= x0 && x < x1 && y >= y0 && y < y1; });
  }

  void disc(std::uint8_t c, double cx, double cy, double r) {
    fill_where(c, [=](double x, double y) { return std::hypot(x - cx, y - cy) < r; });
  }

  void ring(std::uint8_t c, double cx, double cy, double r0, double r1) {
    fill_where(c, [=](double x, double y) {
      const double d = std::hypot(x - cx, y - cy);
      return d >= r0 && d < r1;
    });
  }

  // Band of the given width around the segment (x0, y0)-(x1, y1), square ends.
  void band(std::uint8_t c, double x0, double y0, double x1, double y1, double width) {
    const double dx = x1 - x0, dy = y1 - y0, len = std::hypot(dx, dy);
    const double ux = dx / len, uy = dy / len;
    fill_where(c, [=](double x, double y) {
      const double t = (x - x0) * ux + (y - y0) * uy;
      const double n = -(x - x0) * uy + (y - y0) * ux;
      return t >= 0 && t <= len && std::abs(n) < 0.5 * width;
    });
  }

  // Band through (cx, cy) at `deg` degrees spanning the whole canvas.
  void ray(std::uint8_t c, double cx, double cy, double deg, double width, double from = -400,
           double to = 400) {
    const double a = deg * M_PI / 180.0;
    band(c, cx + from * std::cos(a), cy + from * std::sin(a), cx + to * std::cos(a),
         cy + to * std::sin(a), width);
  }

  const SemanticMap& map() const { return map_; }

 private:
  SemanticMap map_;
};

SemanticMap crossroads() {
  Canvas c;
  c.rect(kTerrain, 0, 0, 96, 96);
  c.rect(kTerrain, 170, 180, 256, 256);
  c.rect(kTerrain, 160, 0, 256, 70);
  c.ray(kBike, 128, 128, 0, 6, -400, 400);
  c.band(kBike, 0, 88, 256, 88, 6);
  c.band(kBike, 170, 0, 170, 256, 6);
  c.ray(kRoad, 128, 128, 0, 36);
  c.ray(kRoad, 128, 128, 90, 36);
  return c.map();
}

SemanticMap t_junction() {
  Canvas c;
  c.rect(kTerrain, 0, 120, 110, 256);
  c.disc(kTerrain, 200, 40, 45);
  c.band(kRoad, 0, 96, 256, 96, 40);
  c.band(kRoad, 140, 96, 140, 256, 34);
  c.band(kBike, 168, 116, 168, 256, 7);
  c.band(kBike, 0, 126, 256, 126, 7);
  c.band(kBike, 0, 66, 256, 66, 7);
  return c.map();
}

SemanticMap three_way() {
  Canvas c;
  c.disc(kTerrain, 60, 200, 70);
  c.rect(kTerrain, 150, 0, 256, 80);
  for (double a : {-90.0, 30.0, 150.0}) c.band(kRoad, 128, 128, 128 + 300 * std::cos(a * M_PI / 180),
                                               128 + 300 * std::sin(a * M_PI / 180), 38);
  c.band(kBike, 0, 20, 256, 240, 7);
  c.disc(kRoad, 128, 128, 30);
  return c.map();
}

SemanticMap roundabout() {
  Canvas c;
  c.rect(kTerrain, 0, 0, 80, 80);
  c.rect(kTerrain, 190, 190, 256, 256);
  for (double a : {0.0, 90.0, 180.0, 270.0})
    c.band(kRoad, 128, 128, 128 + 300 * std::cos(a * M_PI / 180),
           128 + 300 * std::sin(a * M_PI / 180), 32);
  c.ring(kBike, 128, 128, 74, 81);
  c.ring(kRoad, 128, 128, 38, 70);
  c.disc(kTerrain, 128, 128, 38);
  return c.map();
}

SemanticMap skewed_cross() {
  Canvas c;
  c.rect(kTerrain, 0, 170, 256, 256);
  c.disc(kTerrain, 40, 40, 55);
  c.ray(kRoad, 128, 128, 25, 36);
  c.ray(kRoad, 128, 128, 105, 30);
  c.ray(kBike, 150, 80, 25, 6);
  c.ray(kBike, 100, 128, 105, 6);
  return c.map();
}

SemanticMap soccer_field() {
  // Field (terrain) with line markings (road class) on a background surround.
  Canvas c;
  const double x0 = 18, x1 = 238, y0 = 55, y1 = 201, lw = 2.5;
  c.rect(kTerrain, x0 - 6, y0 - 6, x1 + 6, y1 + 6);
  auto line = [&](double ax, double ay, double bx, double by) { c.band(kRoad, ax, ay, bx, by, lw); };
  line(x0, y0, x1, y0);
  line(x0, y1, x1, y1);
  line(x0, y0, x0, y1);
  line(x1, y0, x1, y1);
  line(128, y0, 128, y1);
  c.ring(kRoad, 128, 128, 20, 20 + lw);
  for (double gx : {x0, x1}) {
    const double s = gx == x0 ? 1 : -1;
    line(gx, 128 - 40, gx + s * 36, 128 - 40);
    line(gx, 128 + 40, gx + s * 36, 128 + 40);
    line(gx + s * 36, 128 - 40, gx + s * 36, 128 + 40);
    line(gx, 128 - 18, gx + s * 12, 128 - 18);
    line(gx, 128 + 18, gx + s * 12, 128 + 18);
    line(gx + s * 12, 128 - 18, gx + s * 12, 128 + 18);
  }
  c.disc(kRoad, 128, 128, 2);
  return c.map();
}

nlohmann::json axis(double lo, double hi, double step) {
  return {{"min", lo}, {"max", hi}, {"step", step}};
}

// Desk-scale intersection grid: a camera near the scene center looking down
// at it from a few tens of units.
nlohmann::json intersection_grid() {
  return {{"pan_deg", axis(-180, 180, 15)},   {"tilt_deg", axis(-60, -40, 5)},
          {"focal_px", axis(40, 64, 6)},      {"x_units", axis(120, 136, 4)},
          {"y_units", axis(120, 136, 4)},     {"z_units", axis(40, 55, 5)},
          {"sample_count", 40000},            {"seed", 7},
          {"output", {{"width", 64}, {"height", 64}}},
          {"min_foreground", 0.05}};
}

void write_scene(const fs::path& dir, const std::string& name, const SemanticMap& m) {
  const fs::path png = dir / (name + ".png");
  topocal::io::write_semantic_png(png, m);
  topocal::io::MapMetadata meta;
  if (name == "soccer_field") {
    meta.class_names = {"background", "markings", "field", "unused"};
    meta.units_per_pixel = 0.5;
  }
  topocal::io::write_metadata(png, meta);
}

// Pixel-similar, topology-different pair against one ground truth: the first
// prediction concentrates its errors in one interior block, the second spreads
// the same number of wrong pixels evenly over the map.
void write_fixture(const fs::path& dir) {
  constexpr int kDim = 64;
  SemanticMap gt(kDim, kDim);
  for (int y = 0; y < kDim; ++y)
    for (int x = 0; x < kDim; ++x) gt.set(x, y, (x / 16 + y / 16) % 2 == 0 ? kRoad : kTerrain);
  auto flip = [](std::uint8_t l) { return l == kRoad ? kTerrain : kRoad; };

  SemanticMap concentrated = gt;
  for (int y = 16; y < 32; ++y)
    for (int x = 16; x < 32; ++x) concentrated.set(x, y, flip(gt.at(x, y)));

  SemanticMap spread = gt;
  int flipped = 0;
  for (int y = 0; y < kDim; y += 4)
    for (int x = 0; x < kDim; x += 4) {
      spread.set(x, y, flip(gt.at(x, y)));
      ++flipped;
    }
  if (flipped != 16 * 16) std::fprintf(stderr, "fixture: unexpected flip count %d\n", flipped);

  topocal::io::write_semantic_png(dir / "discrimination_gt.png", gt);
  topocal::io::write_semantic_png(dir / "discrimination_concentrated.png", concentrated);
  topocal::io::write_semantic_png(dir / "discrimination_spread.png", spread);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Draw the bundled bird's-eye scenes, grids and fixtures"};
  std::string out = "data";
  app.add_option("--out", out, "output directory");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root(out);
    fs::create_directories(root / "scenes");
    fs::create_directories(root / "grids");
    fs::create_directories(root / "fixtures");

    const std::vector<std::pair<std::string, SemanticMap>> scenes = {
        {"intersection_1", crossroads()},  {"intersection_2", t_junction()},
        {"intersection_3", three_way()},   {"intersection_4", roundabout()},
        {"intersection_5", skewed_cross()}};
    for (const auto& [name, m] : scenes) write_scene(root / "scenes", name, m);
    write_scene(root / "scenes", "soccer_field", soccer_field());

    topocal::io::write_json_file(root / "grids" / "intersections_desk.json", intersection_grid());

    // Full-scale grids, cardinalities 5,712 and 907,500 with inclusive ends.
    topocal::io::write_json_file(
        root / "grids" / "soccer_full.json",
        {{"pan_deg", axis(-25, 25, 1)}, {"tilt_deg", axis(-15, 0, 1)}, {"focal_px", axis(500, 800, 50)},
         {"x_units", 64},               {"y_units", -30},               {"z_units", 15},
         {"sample_count", 4500},        {"seed", 1},                    {"output", {{"width", 256}, {"height", 144}}}});
    topocal::io::write_json_file(
        root / "grids" / "intersections_full.json",
        {{"pan_deg", axis(-180, 180, 15)}, {"tilt_deg", axis(-20, 0, 5)}, {"focal_px", axis(50, 500, 50)},
         {"x_units", axis(600, 700, 10)},  {"y_units", axis(900, 1000, 10)}, {"z_units", axis(50, 100, 10)},
         {"sample_count", 200000},         {"seed", 1},                     {"output", {{"width", 256}, {"height", 256}}}});

    write_fixture(root / "fixtures");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "make_scenes: %s\n", e.what());
    return 3;
  }
  return 0;
}
