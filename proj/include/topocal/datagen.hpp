#pragma once

// Synthetic datasets: camera-parameter grids, their cartesian enumeration and
// seeded subsampling, rendering of the bird's-eye map through each camera,
// and train/test/dictionary manifests.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topocal/error.hpp"
#include "topocal/geometry.hpp"
#include "topocal/parallel.hpp"
#include "topocal/png_io.hpp"
#include "topocal/random.hpp"
#include "topocal/raster.hpp"

namespace topocal::datagen {

namespace fs = std::filesystem;
using geometry::ViewConfig;

inline constexpr const char* kManifestFormat = "topocal.manifest";
inline constexpr int kManifestVersion = 1;
inline constexpr const char* kGeneratorVersion = "topocal-datagen 1.0";
inline constexpr std::uint64_t kEnumerateLimit = 100'000'000;

// Inclusive range min, min + step, ... up to max.
struct AxisRange {
  double min = 0.0;
  double max = 0.0;
  double step = 1.0;

  std::uint64_t count() const {
    return static_cast<std::uint64_t>(std::floor((max - min) / step + 1e-9)) + 1;
  }
  double value(std::uint64_t i) const { return min + static_cast<double>(i) * step; }

  void validate(const std::string& name) const {
    if (!std::isfinite(min) || !std::isfinite(max) || !std::isfinite(step))
      throw InvalidSpec("axis '" + name + "' has non-finite bounds");
    if (!(step > 0.0)) throw InvalidSpec("axis '" + name + "' needs step > 0");
    if (min > max) throw InvalidSpec("axis '" + name + "' is empty (min > max)");
  }

  static AxisRange point(double v) { return {v, v, 1.0}; }
};

// Sampling grid over (pan, tilt, focal, x, y, z), enumerated
// lexicographically with pan varying slowest.
struct GridSpec {
  AxisRange pan, tilt, focal, x, y, z;
  std::optional<std::uint64_t> sample_count;  // nullopt: the whole grid
  std::uint64_t seed = 0;
  // Rendering recipe carried alongside the grid.
  int output_width = 64;
  int output_height = 64;
  double min_foreground = 0.0;  // reject views with a smaller non-background fraction

  static constexpr const char* kAxisNames[6] = {"pan_deg",  "tilt_deg", "focal_px",
                                                "x_units", "y_units", "z_units"};

  const AxisRange& axis(int k) const {
    const AxisRange* a[6] = {&pan, &tilt, &focal, &x, &y, &z};
    return *a[k];
  }

  std::uint64_t cardinality() const {
    std::uint64_t n = 1;
    for (int k = 0; k < 6; ++k) n *= axis(k).count();
    return n;
  }

  void validate() const {
    for (int k = 0; k < 6; ++k) axis(k).validate(kAxisNames[k]);
    if (sample_count && *sample_count > cardinality())
      throw InvalidSpec("sample_count " + std::to_string(*sample_count) +
                        " exceeds the grid cardinality " + std::to_string(cardinality()));
    if (sample_count && *sample_count == 0) throw InvalidSpec("sample_count must be positive");
    if (output_width <= 0 || output_height <= 0) throw InvalidSpec("output size must be positive");
    if (!(min_foreground >= 0.0 && min_foreground <= 1.0))
      throw InvalidSpec("min_foreground must lie in [0, 1]");
  }

  // Grid point at lexicographic position `index`.
  CameraParams at(std::uint64_t index) const {
    double v[6];
    for (int k = 5; k >= 0; --k) {
      const std::uint64_t n = axis(k).count();
      v[k] = axis(k).value(index % n);
      index /= n;
    }
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
};

inline void to_json(nlohmann::json& j, const AxisRange& a) {
  j = nlohmann::json{{"min", a.min}, {"max", a.max}, {"step", a.step}};
}

inline void from_json(const nlohmann::json& j, AxisRange& a) {
  if (j.is_number()) {
    a = AxisRange::point(j.get<double>());
    return;
  }
  if (!j.is_object()) throw InvalidSpec("grid axis must be a number or {min, max, step}");
  a.min = j.at("min").get<double>();
  a.max = j.at("max").get<double>();
  a.step = j.value("step", 1.0);
}

inline void to_json(nlohmann::json& j, const GridSpec& g) {
  j = nlohmann::json::object();
  for (int k = 0; k < 6; ++k) j[GridSpec::kAxisNames[k]] = g.axis(k);
  j["sample_count"] = g.sample_count ? nlohmann::json(*g.sample_count) : nlohmann::json("all");
  j["seed"] = g.seed;
  j["output"] = {{"width", g.output_width}, {"height", g.output_height}};
  j["min_foreground"] = g.min_foreground;
}

inline void from_json(const nlohmann::json& j, GridSpec& g) {
  try {
    g = GridSpec{};
    AxisRange* a[6] = {&g.pan, &g.tilt, &g.focal, &g.x, &g.y, &g.z};
    for (int k = 0; k < 6; ++k) {
      const char* name = GridSpec::kAxisNames[k];
      if (!j.contains(name)) throw InvalidSpec(std::string("grid is missing axis '") + name + "'");
      *a[k] = j.at(name).get<AxisRange>();
    }
    if (j.contains("sample_count")) {
      const auto& s = j.at("sample_count");
      if (s.is_string()) {
        if (s.get<std::string>() != "all")
          throw InvalidSpec("sample_count must be an integer or \"all\"");
      } else {
        g.sample_count = s.get<std::uint64_t>();
      }
    }
    g.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("output")) {
      g.output_width = j.at("output").value("width", g.output_width);
      g.output_height = j.at("output").value("height", g.output_height);
    }
    g.min_foreground = j.value("min_foreground", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed grid spec: ") + e.what());
  }
  g.validate();
}

inline std::vector<CameraParams> enumerate_grid(const GridSpec& spec) {
  spec.validate();
  const std::uint64_t n = spec.cardinality();
  if (n > kEnumerateLimit)
    throw InvalidSpec("grid of " + std::to_string(n) + " points is too large to enumerate");
  std::vector<CameraParams> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(spec.at(i));
  return out;
}

// Grid indices of a seeded uniform sample without replacement, ascending.
inline std::vector<std::uint64_t> sample_grid_indices(const GridSpec& spec) {
  spec.validate();
  const std::uint64_t n = spec.cardinality();
  const std::uint64_t count = spec.sample_count.value_or(n);
  Rng rng(derive_seed(spec.seed, "grid"));
  return rng.sample_indices(n, count);
}

inline std::vector<CameraParams> sample_grid(const GridSpec& spec) {
  std::vector<CameraParams> out;
  for (auto i : sample_grid_indices(spec)) out.push_back(spec.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

enum class Split { train, test, dictionary };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::dictionary: return "dictionary";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "dictionary") return Split::dictionary;
  throw InvalidInput("unknown split '" + s + "'");
}

struct SplitCounts {
  std::uint64_t train = 3000;
  std::uint64_t test = 500;
  std::uint64_t dictionary = 1000;

  std::uint64_t total() const { return train + test + dictionary; }
  std::uint64_t of(Split s) const {
    return s == Split::train ? train : s == Split::test ? test : dictionary;
  }
};

// Where a mixed-dictionary entry came from.
struct Origin {
  std::string manifest;
  int id = 0;
};

struct ManifestEntry {
  int id = 0;
  Split split = Split::train;
  std::string source;  // id of the bird's-eye map the view was rendered from
  CameraParams camera;
  Homography homography;
  fs::path map_path;  // resolved; stored relative to the manifest directory
  std::optional<Origin> origin;
};

struct DatasetManifest {
  std::string source;        // bird's-eye map id
  fs::path birdseye_path;    // resolved
  std::uint64_t seed = 0;
  std::string generator = kGeneratorVersion;
  nlohmann::json grid;       // grid as given
  ViewConfig view;
  SplitCounts splits;
  std::vector<ManifestEntry> entries;
  nlohmann::json skipped = nlohmann::json::array();
  nlohmann::json mix;        // null unless the dictionary was mixed

  std::vector<const ManifestEntry*> split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  const ManifestEntry& entry(int id) const {
    for (const auto& e : entries)
      if (e.id == id) return e;
    throw InvalidInput("manifest has no entry " + std::to_string(id));
  }
};

namespace detail {

inline std::string portable_relative(const fs::path& target, const fs::path& base) {
  const fs::path rel = fs::weakly_canonical(target).lexically_relative(fs::weakly_canonical(base));
  return (rel.empty() ? target : rel).generic_string();
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const DatasetManifest& m, const fs::path& manifest_dir) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j{{"id", e.id},
                     {"split", to_string(e.split)},
                     {"source", e.source},
                     {"camera", e.camera},
                     {"homography", e.homography},
                     {"map", detail::portable_relative(e.map_path, manifest_dir)}};
    if (e.origin) j["origin"] = {{"manifest", e.origin->manifest}, {"id", e.origin->id}};
    entries.push_back(std::move(j));
  }
  return nlohmann::json{
      {"format", kManifestFormat},
      {"version", kManifestVersion},
      {"generator", m.generator},
      {"source", m.source},
      {"birdseye", detail::portable_relative(m.birdseye_path, manifest_dir)},
      {"seed", m.seed},
      {"grid", m.grid},
      {"view",
       {{"width", m.view.width}, {"height", m.view.height}, {"units_per_pixel", m.view.units_per_pixel}}},
      {"splits", {{"train", m.splits.train}, {"test", m.splits.test}, {"dictionary", m.splits.dictionary}}},
      {"entries", entries},
      {"skipped", m.skipped},
      {"mix", m.mix}};
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  io::write_json_file(path, manifest_to_json(m, path.parent_path().empty() ? fs::path(".")
                                                                             : path.parent_path()));
}

inline DatasetManifest load_manifest(const fs::path& path) {
  const nlohmann::json j = io::read_json_file(path);
  const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  DatasetManifest m;
  try {
    if (j.value("format", std::string()) != kManifestFormat)
      throw InvalidSpec("'" + path.string() + "' is not a topocal manifest");
    m.generator = j.at("generator").get<std::string>();
    m.source = j.at("source").get<std::string>();
    m.birdseye_path = dir / j.at("birdseye").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.grid = j.value("grid", nlohmann::json());
    const auto& v = j.at("view");
    m.view.width = v.at("width").get<int>();
    m.view.height = v.at("height").get<int>();
    m.view.units_per_pixel = v.at("units_per_pixel").get<double>();
    const auto& s = j.at("splits");
    m.splits = {s.at("train").get<std::uint64_t>(), s.at("test").get<std::uint64_t>(),
                s.at("dictionary").get<std::uint64_t>()};
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.id = je.at("id").get<int>();
      e.split = split_from_string(je.at("split").get<std::string>());
      e.source = je.at("source").get<std::string>();
      e.camera = je.at("camera").get<CameraParams>();
      e.homography = je.at("homography").get<Homography>();
      e.map_path = dir / je.at("map").get<std::string>();
      if (je.contains("origin"))
        e.origin = Origin{je["origin"].at("manifest").get<std::string>(),
                          je["origin"].at("id").get<int>()};
      m.entries.push_back(std::move(e));
    }
    m.skipped = j.value("skipped", nlohmann::json::array());
    m.mix = j.value("mix", nlohmann::json());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec("malformed manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Generation

struct GenerateOptions {
  SplitCounts splits;
  std::uint64_t seed = 0;  // split assignment
  unsigned threads = 0;
  std::function<void(const std::string&)> log;  // skipped samples, one line each
};

inline double foreground_fraction(const SemanticMap& m) {
  std::size_t n = 0;
  for (auto l : m.labels()) n += l != raster::kBackground;
  return static_cast<double>(n) / static_cast<double>(m.size());
}

// Renders the views, writes `<out_dir>/maps/<id>.png`, a copy of the
// bird's-eye map and `<out_dir>/manifest.json`. Returns the manifest.
inline DatasetManifest generate_dataset(const SemanticMap& birdseye, const io::MapMetadata& meta,
                                        const std::string& source_id, const GridSpec& spec,
                                        const GenerateOptions& opt, const fs::path& out_dir) {
  spec.validate();
  ViewConfig view;
  view.width = spec.output_width;
  view.height = spec.output_height;
  view.units_per_pixel = meta.units_per_pixel;

  std::vector<std::uint64_t> pool = sample_grid_indices(spec);
  if (opt.splits.total() > pool.size())
    throw InvalidSpec("requested " + std::to_string(opt.splits.total()) + " samples but the grid yields only " +
                      std::to_string(pool.size()));
  Rng rng(derive_seed(opt.seed, "splits"));
  rng.shuffle(pool);

  DatasetManifest m;
  m.source = source_id;
  m.seed = opt.seed;
  m.grid = spec;
  m.view = view;
  m.splits = opt.splits;

  // Walk the shuffled pool, replacing rejected samples with the next ones.
  const Split order[3] = {Split::train, Split::test, Split::dictionary};
  std::vector<SemanticMap> maps;
  std::size_t cursor = 0;
  int id = 0;
  for (Split s : order) {
    for (std::uint64_t k = 0; k < opt.splits.of(s); ++k) {
      for (;;) {
        if (cursor >= pool.size())
          throw InvalidSpec("grid ran out of usable samples after " + std::to_string(id) +
                            " entries (" + std::to_string(m.skipped.size()) + " skipped)");
        const CameraParams cam = spec.at(pool[cursor++]);
        std::string reason;
        try {
          const Homography h = geometry::homography_from_params(cam, view);
          SemanticMap rendered = raster::warp_labels(birdseye, h, view.width, view.height);
          if (foreground_fraction(rendered) < spec.min_foreground) {
            reason = "view below min_foreground";
          } else {
            ManifestEntry e;
            e.id = id++;
            e.split = s;
            e.source = source_id;
            e.camera = cam;
            e.homography = h;
            char name[32];
            std::snprintf(name, sizeof name, "maps/%06d.png", e.id);
            e.map_path = out_dir / name;
            m.entries.push_back(std::move(e));
            maps.push_back(std::move(rendered));
            break;
          }
        } catch (const DegenerateHomography& err) {
          reason = err.what();
        }
        m.skipped.push_back({{"camera", cam}, {"reason", reason}});
        if (opt.log)
          opt.log("skipped camera " + nlohmann::json(cam).dump() + ": " + reason);
      }
    }
  }

  fs::create_directories(out_dir / "maps");
  m.birdseye_path = out_dir / "birdseye.png";
  io::write_semantic_png(m.birdseye_path, birdseye);
  io::write_metadata(m.birdseye_path, meta);
  parallel_for(maps.size(), opt.threads,
               [&](std::size_t i) { io::write_semantic_png(m.entries[i].map_path, maps[i]); });
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

// Keeps base's train and test entries and replaces its dictionary with
// `count` entries drawn uniformly from the donors' dictionaries.
inline DatasetManifest mix_dictionaries(const DatasetManifest& base,
                                        const std::vector<DatasetManifest>& donors,
                                        const std::vector<std::string>& donor_names,
                                        std::uint64_t count, std::uint64_t seed) {
  if (donors.empty()) throw InvalidSpec("mixing needs at least one donor manifest");
  std::vector<std::pair<std::size_t, const ManifestEntry*>> candidates;
  for (std::size_t d = 0; d < donors.size(); ++d)
    for (const ManifestEntry* e : donors[d].split(Split::dictionary)) candidates.emplace_back(d, e);
  if (count > candidates.size())
    throw InvalidSpec("donors hold " + std::to_string(candidates.size()) +
                      " dictionary entries, fewer than the requested " + std::to_string(count));

  DatasetManifest m = base;
  m.entries.clear();
  int next_id = 0;
  for (const auto& e : base.entries)
    if (e.split != Split::dictionary) {
      m.entries.push_back(e);
      next_id = std::max(next_id, e.id + 1);
    }
  Rng rng(derive_seed(seed, "mix"));
  for (auto idx : rng.sample_indices(candidates.size(), count)) {
    const auto& [d, src] = candidates[idx];
    ManifestEntry e = *src;
    e.id = next_id++;
    e.origin = Origin{d < donor_names.size() ? donor_names[d] : donors[d].source, src->id};
    m.entries.push_back(std::move(e));
  }
  m.splits.dictionary = count;
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t d = 0; d < donors.size(); ++d)
    names.push_back(d < donor_names.size() ? donor_names[d] : donors[d].source);
  m.mix = {{"donors", names}, {"count", count}, {"seed", seed}};
  return m;
}

}  // namespace topocal::datagen
