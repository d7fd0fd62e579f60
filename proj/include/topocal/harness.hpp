#pragma once

// Experiment protocol: match every selected test query against the
// dictionary, refine from the match under each configured loss, and score the
// matched and refined homographies by IoU. Results go to report.json and a
// versioned records.csv.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topocal/datagen.hpp"
#include "topocal/error.hpp"
#include "topocal/loss.hpp"
#include "topocal/matching.hpp"
#include "topocal/parallel.hpp"
#include "topocal/png_io.hpp"
#include "topocal/random.hpp"
#include "topocal/raster.hpp"
#include "topocal/refine.hpp"

namespace topocal::harness {

namespace fs = std::filesystem;

inline constexpr const char* kReportFormat = "topocal.report";
inline constexpr int kReportVersion = 1;
inline constexpr const char* kRecordsHeader = "# topocal-records v1";

// Dataset recipe regenerated for every cycle.
struct GenerateRecipe {
  fs::path birdseye;
  fs::path grid;
  datagen::SplitCounts splits;
};

struct ExperimentConfig {
  fs::path manifest;                      // used when `generate` is absent
  std::optional<GenerateRecipe> generate;
  matching::Metric metric = matching::Metric::top_mse;
  std::vector<loss::Kind> losses = {loss::Kind::top_mse};
  refine::RefineConfig refine;
  std::size_t multi_start = 1;            // top-k starts; 1 = matched template only
  refine::MultiStartConfig multi_start_cfg;
  std::size_t query_count = 100;
  std::uint64_t seed = 0;
  int cycles = 2;
  unsigned threads = 0;
  fs::path output;
  std::optional<std::uint64_t> mixed_dictionary_size;
  nlohmann::json echo;                    // config as given

  void validate() const {
    if (!generate && manifest.empty()) throw InvalidSpec("config needs a manifest or a generate block");
    if (losses.empty()) throw InvalidSpec("config needs at least one loss");
    if (cycles < 1) throw InvalidSpec("cycles must be >= 1");
    if (query_count < 1) throw InvalidSpec("query_count must be >= 1");
    if (multi_start < 1) throw InvalidSpec("multi_start must be >= 1");
    if (output.empty()) throw InvalidSpec("config needs an output directory");
  }
};

// Relative paths inside a config resolve against the config file's directory.
inline ExperimentConfig parse_config(const nlohmann::json& j, const fs::path& base_dir = ".") {
  ExperimentConfig c;
  auto path_of = [&](const nlohmann::json& v) {
    const fs::path p(v.get<std::string>());
    return p.is_absolute() ? p : base_dir / p;
  };
  try {
    c.echo = j;
    if (j.contains("manifest")) c.manifest = path_of(j.at("manifest"));
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      GenerateRecipe r;
      r.birdseye = path_of(g.at("birdseye"));
      r.grid = path_of(g.at("grid"));
      if (g.contains("splits")) {
        const auto& s = g.at("splits");
        r.splits = {s.value("train", std::uint64_t{3000}), s.value("test", std::uint64_t{500}),
                    s.value("dictionary", std::uint64_t{1000})};
      }
      c.generate = r;
    }
    c.metric = matching::metric_from_string(j.value("metric", std::string("topmse")));
    if (j.contains("losses")) {
      c.losses.clear();
      for (const auto& l : j.at("losses")) c.losses.push_back(loss::kind_from_string(l.get<std::string>()));
    } else if (j.contains("loss")) {
      c.losses = {loss::kind_from_string(j.at("loss").get<std::string>())};
    }
    if (j.contains("refine")) c.refine = j.at("refine").get<refine::RefineConfig>();
    if (j.contains("multi_start") && !j.at("multi_start").is_null()) {
      const auto& m = j.at("multi_start");
      c.multi_start = m.value("k", std::size_t{1});
      c.multi_start_cfg.screen_iters = m.value("screen_iters", c.multi_start_cfg.screen_iters);
      c.multi_start_cfg.keep = m.value("keep", c.multi_start_cfg.keep);
    }
    c.query_count = j.value("query_count", c.query_count);
    c.seed = j.value("seed", c.seed);
    c.cycles = j.value("cycles", c.cycles);
    c.threads = j.value("threads", c.threads);
    if (j.contains("output")) c.output = path_of(j.at("output"));
    if (j.contains("mixed_dictionary_size"))
      c.mixed_dictionary_size = j.at("mixed_dictionary_size").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  return parse_config(io::read_json_file(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Records and aggregates

struct QueryRecord {
  int cycle = 0;
  loss::Kind loss = loss::Kind::top_mse;
  int query_id = 0;
  int match_id = -1;
  double match_score = std::numeric_limits<double>::quiet_NaN();
  int start_id = -1;  // dictionary entry the winning refinement started from
  double pre_iou = std::numeric_limits<double>::quiet_NaN();
  double post_iou = std::numeric_limits<double>::quiet_NaN();
  double pre_iou_all = std::numeric_limits<double>::quiet_NaN();
  double post_iou_all = std::numeric_limits<double>::quiet_NaN();
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct Aggregate {
  std::size_t count = 0;
  std::size_t errors = 0;
  double mean_pre_iou = 0.0;
  double mean_post_iou = 0.0;
  double median_pre_iou = 0.0;
  double median_post_iou = 0.0;
  double improvement_rate = 0.0;  // share of queries with post > pre
  double mean_iterations = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Aggregates over the successful records, summed in record order.
inline Aggregate aggregate(const std::vector<const QueryRecord*>& records) {
  Aggregate a;
  std::vector<double> pre, post;
  std::size_t improved = 0;
  double iters = 0.0;
  for (const QueryRecord* r : records) {
    if (!r->ok()) {
      ++a.errors;
      continue;
    }
    pre.push_back(r->pre_iou);
    post.push_back(r->post_iou);
    improved += r->post_iou > r->pre_iou;
    iters += r->iterations;
  }
  a.count = pre.size();
  if (a.count == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    a.mean_pre_iou = a.mean_post_iou = a.median_pre_iou = a.median_post_iou = nan;
    a.improvement_rate = a.mean_iterations = nan;
    return a;
  }
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < a.count; ++i) {
    sp += pre[i];
    sq += post[i];
  }
  const double n = static_cast<double>(a.count);
  a.mean_pre_iou = sp / n;
  a.mean_post_iou = sq / n;
  a.median_pre_iou = median(pre);
  a.median_post_iou = median(post);
  a.improvement_rate = static_cast<double>(improved) / n;
  a.mean_iterations = iters / n;
  return a;
}

namespace detail {

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const Aggregate& a) {
  using detail::number_or_null;
  j = nlohmann::json{{"count", a.count},
                     {"errors", a.errors},
                     {"mean_pre_iou", number_or_null(a.mean_pre_iou)},
                     {"mean_post_iou", number_or_null(a.mean_post_iou)},
                     {"median_pre_iou", number_or_null(a.median_pre_iou)},
                     {"median_post_iou", number_or_null(a.median_post_iou)},
                     {"improvement_rate", number_or_null(a.improvement_rate)},
                     {"mean_iterations", number_or_null(a.mean_iterations)}};
}

inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kRecordColumns =
    "cycle,loss,query_id,match_id,match_score,start_id,pre_iou,post_iou,pre_iou_all,"
    "post_iou_all,initial_loss,final_loss,iterations,converged,error";

inline std::string records_csv(const std::vector<QueryRecord>& records) {
  std::ostringstream out;
  out << kRecordsHeader << "\n" << kRecordColumns << "\n";
  for (const auto& r : records) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.cycle << ',' << loss::to_string(r.loss) << ',' << r.query_id << ',' << r.match_id << ','
        << format_double(r.match_score) << ',' << r.start_id << ',' << format_double(r.pre_iou)
        << ',' << format_double(r.post_iou) << ',' << format_double(r.pre_iou_all) << ','
        << format_double(r.post_iou_all) << ',' << format_double(r.initial_loss) << ','
        << format_double(r.final_loss) << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
        << ',' << err << "\n";
  }
  return out.str();
}

// Parses records_csv output back into records.
inline std::vector<QueryRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader)
    throw InvalidInput("records file lacks the '" + std::string(kRecordsHeader) + "' header");
  if (!std::getline(in, line) || line != kRecordColumns)
    throw InvalidInput("records file has unexpected columns");
  std::vector<QueryRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 15) throw InvalidInput("records row has " + std::to_string(f.size()) + " fields");
    auto num = [](const std::string& s) {
      return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    QueryRecord r;
    r.cycle = std::stoi(f[0]);
    r.loss = loss::kind_from_string(f[1]);
    r.query_id = std::stoi(f[2]);
    r.match_id = std::stoi(f[3]);
    r.match_score = num(f[4]);
    r.start_id = std::stoi(f[5]);
    r.pre_iou = num(f[6]);
    r.post_iou = num(f[7]);
    r.pre_iou_all = num(f[8]);
    r.post_iou_all = num(f[9]);
    r.initial_loss = num(f[10]);
    r.final_loss = num(f[11]);
    r.iterations = std::stoi(f[12]);
    r.converged = f[13] == "1";
    r.error = f[14];
    out.push_back(std::move(r));
  }
  return out;
}

struct ExperimentReport {
  std::vector<QueryRecord> records;  // cycle-major, then loss, then query order
  nlohmann::json config;
  nlohmann::json mixed;              // null for same-scene dictionaries
  std::vector<loss::Kind> losses;
  int cycles = 0;
  double wall_clock_seconds = 0.0;
  unsigned threads = 1;

  std::vector<const QueryRecord*> select(std::optional<loss::Kind> kind,
                                         std::optional<int> cycle = std::nullopt) const {
    std::vector<const QueryRecord*> out;
    for (const auto& r : records)
      if ((!kind || r.loss == *kind) && (!cycle || r.cycle == *cycle)) out.push_back(&r);
    return out;
  }

  Aggregate aggregate_for(loss::Kind kind) const { return aggregate(select(kind)); }
};

inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (auto kind : r.losses) {
    nlohmann::json cycles = nlohmann::json::array();
    for (int c = 0; c < r.cycles; ++c)
      cycles.push_back({{"cycle", c}, {"aggregate", aggregate(r.select(kind, c))}});
    runs.push_back({{"loss", loss::to_string(kind)},
                    {"aggregate", aggregate(r.select(kind))},
                    {"cycles", cycles}});
  }
  return nlohmann::json{{"format", kReportFormat},
                        {"version", kReportVersion},
                        {"config", r.config},
                        {"mixed", r.mixed},
                        {"runs", runs},
                        {"records", "records.csv"},
                        {"record_count", r.records.size()},
                        {"threads", r.threads},
                        {"wall_clock_seconds", r.wall_clock_seconds}};
}

inline void write_report(const ExperimentReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_json_file(dir / "report.json", report_to_json(r));
  io::write_text_file(dir / "records.csv", records_csv(r.records));
}

// ---------------------------------------------------------------------------
// Running

namespace detail {

inline std::string error_tag(const std::exception& e) {
  const char* kind = "error";
  if (dynamic_cast<const DegenerateHomography*>(&e)) kind = "degenerate-homography";
  else if (dynamic_cast<const EmptyDictionary*>(&e)) kind = "empty-dictionary";
  else if (dynamic_cast<const InvalidInput*>(&e)) kind = "invalid-input";
  else if (dynamic_cast<const IoError*>(&e)) kind = "io";
  return std::string(kind) + ": " + e.what();
}

struct Query {
  int id = 0;
  SemanticMap map;
};

}  // namespace detail

// Test queries of a cycle: a seeded subset of the test split, in id order.
inline std::vector<const datagen::ManifestEntry*> select_queries(const datagen::DatasetManifest& m,
                                                                 std::size_t count,
                                                                 std::uint64_t seed) {
  const auto test = m.split(datagen::Split::test);
  if (count > test.size())
    throw InvalidSpec("query_count " + std::to_string(count) + " exceeds the test split (" +
                      std::to_string(test.size()) + ")");
  Rng rng(seed);
  std::vector<const datagen::ManifestEntry*> out;
  for (auto i : rng.sample_indices(test.size(), count)) out.push_back(test[i]);
  return out;
}

// One cycle over a loaded dataset. Matching is shared by all losses.
inline std::vector<QueryRecord> run_cycle(const ExperimentConfig& cfg,
                                          const datagen::DatasetManifest& manifest, int cycle,
                                          std::uint64_t cycle_seed) {
  const SemanticMap birdseye = io::read_semantic_png(manifest.birdseye_path);
  const OneHotMap birdseye_onehot = raster::to_onehot(birdseye);
  const matching::Dictionary dict = matching::load_dictionary(manifest);
  const auto entries = select_queries(manifest, cfg.query_count, derive_seed(cycle_seed, "queries"));

  std::vector<detail::Query> queries;
  for (const auto* e : entries) queries.push_back({e->id, io::read_semantic_png(e->map_path)});

  const std::size_t nl = cfg.losses.size();
  std::vector<QueryRecord> slots(queries.size() * nl);
  matching::MatchOptions mo;
  mo.metric = cfg.metric;
  mo.topo = cfg.refine.objective.topo;
  mo.threads = 1;

  parallel_for(queries.size(), cfg.threads, [&](std::size_t qi) {
    const detail::Query& q = queries[qi];
    for (std::size_t li = 0; li < nl; ++li) {
      QueryRecord& r = slots[qi * nl + li];
      r.cycle = cycle;
      r.loss = cfg.losses[li];
      r.query_id = q.id;
    }
    std::vector<matching::MatchResult> top;
    try {
      top = matching::match_topk(q.map, dict, mo, cfg.multi_start);
    } catch (const std::exception& e) {
      for (std::size_t li = 0; li < nl; ++li) slots[qi * nl + li].error = detail::error_tag(e);
      return;
    }
    const OneHotMap q1 = raster::to_onehot(q.map);
    const Homography& h_match = dict.by_id(top.front().id).homography;
    std::vector<Homography> starts;
    for (const auto& t : top) starts.push_back(dict.by_id(t.id).homography);
    for (std::size_t li = 0; li < nl; ++li) {
      QueryRecord& r = slots[qi * nl + li];
      r.match_id = top.front().id;
      r.match_score = top.front().score;
      try {
        const raster::IouResult pre = refine::evaluate_estimate(h_match, birdseye, q.map);
        r.pre_iou = pre.mean_foreground;
        r.pre_iou_all = pre.mean_all;
        refine::RefineConfig rc = cfg.refine;
        rc.objective.kind = cfg.losses[li];
        refine::RefineResult res;
        if (starts.size() == 1) {
          res = refine::refine(q1, birdseye_onehot, h_match, rc);
          r.start_id = top.front().id;
        } else {
          const auto ms = refine::refine_multi(q1, birdseye_onehot, starts, rc, cfg.multi_start_cfg);
          res = ms.best;
          r.start_id = top[ms.start_index].id;
        }
        const raster::IouResult post = refine::evaluate_estimate(res, birdseye, q.map);
        r.post_iou = post.mean_foreground;
        r.post_iou_all = post.mean_all;
        r.initial_loss = res.initial_loss();
        r.final_loss = res.final_loss();
        r.iterations = res.iterations;
        r.converged = res.converged;
      } catch (const std::exception& e) {
        r.error = detail::error_tag(e);
      }
    }
  });
  // Cycle-major, then loss, then query order.
  std::vector<QueryRecord> out;
  out.reserve(slots.size());
  for (std::size_t li = 0; li < nl; ++li)
    for (std::size_t qi = 0; qi < queries.size(); ++qi) out.push_back(std::move(slots[qi * nl + li]));
  return out;
}

// Dataset for a cycle: regenerated from the recipe or loaded from disk.
inline datagen::DatasetManifest cycle_dataset(const ExperimentConfig& cfg, int cycle,
                                              std::uint64_t cycle_seed) {
  if (!cfg.generate) return datagen::load_manifest(cfg.manifest);
  const GenerateRecipe& g = *cfg.generate;
  datagen::GridSpec spec = io::read_json_file(g.grid).get<datagen::GridSpec>();
  spec.seed = derive_seed(cycle_seed, "grid");
  datagen::GenerateOptions opt;
  opt.splits = g.splits;
  opt.seed = derive_seed(cycle_seed, "splits");
  opt.threads = cfg.threads;
  const SemanticMap bird = io::read_semantic_png(g.birdseye);
  return datagen::generate_dataset(bird, io::read_metadata(g.birdseye), g.birdseye.stem().string(),
                                   spec, opt, cfg.output / ("cycle_" + std::to_string(cycle)));
}

using DatasetTransform = std::function<datagen::DatasetManifest(datagen::DatasetManifest, int cycle,
                                                                std::uint64_t cycle_seed)>;

inline ExperimentReport run_with(const ExperimentConfig& cfg, const DatasetTransform& transform,
                                 nlohmann::json mixed) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.config = cfg.echo;
  report.mixed = std::move(mixed);
  report.losses = cfg.losses;
  report.cycles = cfg.cycles;
  report.threads = resolve_threads(cfg.threads);
  for (int c = 0; c < cfg.cycles; ++c) {
    const std::uint64_t cycle_seed = derive_seed(cfg.seed, "cycle", static_cast<std::uint64_t>(c));
    datagen::DatasetManifest m = cycle_dataset(cfg, c, cycle_seed);
    if (transform) m = transform(std::move(m), c, cycle_seed);
    auto records = run_cycle(cfg, m, c, cycle_seed);
    for (auto& r : records) report.records.push_back(std::move(r));
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_report(report, cfg.output);
  return report;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  return run_with(cfg, nullptr, nullptr);
}

// As run_experiment, with every cycle's dictionary replaced by a seeded draw
// from the donors' dictionaries.
inline ExperimentReport run_mixed(const ExperimentConfig& cfg,
                                  const std::vector<fs::path>& donor_paths) {
  if (donor_paths.empty()) throw InvalidSpec("evaluate-mixed needs at least one donor manifest");
  std::vector<datagen::DatasetManifest> donors;
  std::vector<std::string> names;
  for (const auto& p : donor_paths) {
    donors.push_back(datagen::load_manifest(p));
    names.push_back(donors.back().source);
  }
  nlohmann::json mixed{{"donors", names}};
  auto transform = [&](datagen::DatasetManifest m, int, std::uint64_t cycle_seed) {
    const std::uint64_t count = cfg.mixed_dictionary_size.value_or(m.splits.dictionary);
    return datagen::mix_dictionaries(m, donors, names, count, derive_seed(cycle_seed, "mix"));
  };
  mixed["dictionary_size"] = cfg.mixed_dictionary_size ? nlohmann::json(*cfg.mixed_dictionary_size)
                                                       : nlohmann::json("base");
  return run_with(cfg, transform, mixed);
}

// ---------------------------------------------------------------------------
// Overlay rendering

inline constexpr double kOverlayAlpha = 0.5;
inline constexpr int kLegendHeight = 12;

// Warped bird's-eye classes blended over the query map, with a legend strip
// of the class colors along the bottom.
inline io::RgbImage overlay_image(const SemanticMap& birdseye, const Homography& h,
                                  const SemanticMap& query) {
  const SemanticMap warped = raster::warp_labels(birdseye, h, query.width(), query.height());
  io::RgbImage img(query.width(), query.height() + kLegendHeight);
  for (int y = 0; y < query.height(); ++y)
    for (int x = 0; x < query.width(); ++x) {
      const io::Rgb a = io::kPalette.at(query.at(x, y));
      const io::Rgb b = io::kPalette.at(warped.at(x, y));
      std::uint8_t* p = img.at(x, y);
      auto mix = [](std::uint8_t u, std::uint8_t v) {
        return static_cast<std::uint8_t>(std::lround((1.0 - kOverlayAlpha) * u + kOverlayAlpha * v));
      };
      p[0] = mix(a.r, b.r);
      p[1] = mix(a.g, b.g);
      p[2] = mix(a.b, b.b);
    }
  const int classes = query.class_count();
  for (int y = query.height(); y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const int c = std::min(classes - 1, x * classes / img.width);
      const bool divider = y == query.height();
      const io::Rgb col = divider ? io::Rgb{255, 255, 255} : io::kPalette.at(c);
      std::uint8_t* p = img.at(x, y);
      p[0] = col.r;
      p[1] = col.g;
      p[2] = col.b;
    }
  return img;
}

inline void render_overlay(const SemanticMap& birdseye, const Homography& h,
                           const SemanticMap& query, const fs::path& out) {
  io::write_rgb_png(out, overlay_image(birdseye, h, query));
}

}  // namespace topocal::harness
