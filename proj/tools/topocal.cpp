// topocal command-line interface.
//
// Exit codes: 0 success, 2 configuration or input error, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "topocal/topocal.hpp"

namespace fs = std::filesystem;
using namespace topocal;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

int cmd_generate(const fs::path& map, const fs::path& grid, const datagen::SplitCounts& splits,
                 const fs::path& out, std::uint64_t seed, unsigned threads) {
  const SemanticMap bird = io::read_semantic_png(map);
  const datagen::GridSpec spec = io::read_json_file(grid).get<datagen::GridSpec>();
  datagen::GenerateOptions opt;
  opt.splits = splits;
  opt.seed = seed;
  opt.threads = threads;
  opt.log = [](const std::string& line) { std::cerr << "skipped: " << line << "\n"; };
  const auto m = datagen::generate_dataset(bird, io::read_metadata(map), map.stem().string(), spec,
                                           opt, out);
  std::cout << nlohmann::json{{"manifest", (out / "manifest.json").string()},
                              {"entries", m.entries.size()},
                              {"skipped", m.skipped.size()}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

matching::Dictionary dictionary_from(const fs::path& manifest) {
  return matching::load_dictionary(datagen::load_manifest(manifest));
}

int cmd_match(const fs::path& query, const fs::path& manifest, const std::string& metric,
              std::size_t topk, unsigned threads) {
  matching::MatchOptions mo;
  mo.metric = matching::metric_from_string(metric);
  mo.threads = threads;
  const SemanticMap q = io::read_semantic_png(query);
  const auto dict = dictionary_from(manifest);
  if (topk == 0) {
    std::cout << nlohmann::json(matching::match(q, dict, mo)).dump(2) << "\n";
  } else {
    std::cout << nlohmann::json(matching::match_topk(q, dict, mo, topk)).dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_refine(const fs::path& query, const fs::path& birdseye, const fs::path& manifest,
               const std::string& metric, const std::string& loss_name, std::size_t starts,
               int max_iters, const fs::path& out, unsigned threads) {
  matching::MatchOptions mo;
  mo.metric = matching::metric_from_string(metric);
  mo.threads = threads;
  refine::RefineConfig rc;
  rc.objective.kind = loss::kind_from_string(loss_name);
  rc.max_iters = max_iters;
  rc.validate();

  const SemanticMap q = io::read_semantic_png(query);
  const SemanticMap bird = io::read_semantic_png(birdseye);
  const auto dict = dictionary_from(manifest);
  const auto top = matching::match_topk(q, dict, mo, starts);
  std::vector<Homography> hs;
  for (const auto& t : top) hs.push_back(dict.by_id(t.id).homography);
  const OneHotMap q1 = raster::to_onehot(q), b1 = raster::to_onehot(bird);
  const auto ms = refine::refine_multi(q1, b1, hs, rc);
  const auto& res = ms.best;

  nlohmann::json j{{"query", query.string()},
                   {"match", top.front()},
                   {"start", top[ms.start_index]},
                   {"config", rc},
                   {"initial_loss", res.initial_loss()},
                   {"final_loss", res.final_loss()},
                   {"result", res},
                   {"homography", res.h}};
  io::write_json_file(out, j);
  std::cout << nlohmann::json{{"out", out.string()},
                              {"initial_loss", res.initial_loss()},
                              {"final_loss", res.final_loss()}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

void print_summary(const harness::ExperimentReport& r, const fs::path& out) {
  nlohmann::json runs = nlohmann::json::array();
  for (auto kind : r.losses)
    runs.push_back({{"loss", loss::to_string(kind)}, {"aggregate", r.aggregate_for(kind)}});
  std::cout << nlohmann::json{{"report", (out / "report.json").string()}, {"runs", runs}}.dump(2)
            << "\n";
}

int cmd_evaluate(const fs::path& config, const std::vector<fs::path>& donors, bool mixed) {
  const auto cfg = harness::load_config(config);
  const auto report = mixed ? harness::run_mixed(cfg, donors) : harness::run_experiment(cfg);
  print_summary(report, cfg.output);
  return kExitOk;
}

// Accepts {"matrix": [...]} or any object with a "homography" member holding one.
Homography homography_from_file(const fs::path& path) {
  const nlohmann::json j = io::read_json_file(path);
  try {
    if (j.contains("matrix")) return j.get<Homography>();
    if (j.contains("homography")) return j.at("homography").get<Homography>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec("'" + path.string() + "': " + e.what());
  }
  throw InvalidSpec("'" + path.string() + "' holds no homography");
}

int cmd_render(const fs::path& birdseye, const fs::path& h, const fs::path& query, const fs::path& out) {
  harness::render_overlay(io::read_semantic_png(birdseye), homography_from_file(h),
                          io::read_semantic_png(query), out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera calibration by template matching and homography refinement"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all cores)");

  std::string map, grid, out_dir;
  std::uint64_t seed = 0;
  datagen::SplitCounts splits{3000, 500, 1000};
  auto* gen = app.add_subcommand("generate", "sample a dataset from a bird's-eye map");
  gen->add_option("--map", map, "bird's-eye semantic PNG")->required();
  gen->add_option("--grid", grid, "camera grid JSON")->required();
  gen->add_option("--train", splits.train, "train split size");
  gen->add_option("--test", splits.test, "test split size");
  gen->add_option("--dict", splits.dictionary, "dictionary split size");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "split seed");

  std::string query, dict, metric = "topmse";
  std::size_t topk = 0;
  auto* match = app.add_subcommand("match", "find the nearest dictionary templates");
  match->add_option("--query", query, "query semantic PNG")->required();
  match->add_option("--dict", dict, "dataset manifest")->required();
  match->add_option("--metric", metric, "mse or topmse");
  match->add_option("--topk", topk, "report the k best matches as an array");

  std::string birdseye, loss_name = "topmse", out_file;
  std::size_t starts = 1;
  int max_iters = refine::RefineConfig{}.max_iters;
  auto* ref = app.add_subcommand("refine", "match a query and refine the homography");
  ref->add_option("--query", query, "query semantic PNG")->required();
  ref->add_option("--birdseye", birdseye, "bird's-eye semantic PNG")->required();
  ref->add_option("--dict", dict, "dataset manifest")->required();
  ref->add_option("--metric", metric, "matching metric: mse or topmse");
  ref->add_option("--loss", loss_name, "refinement loss: topmse, mse, topdice or dice");
  ref->add_option("--starts", starts, "refine from the k best matches");
  ref->add_option("--max-iters", max_iters, "iteration budget");
  ref->add_option("--out", out_file, "result JSON")->required();

  std::string config;
  std::vector<std::string> donors;
  auto* eval = app.add_subcommand("evaluate", "run an experiment config");
  eval->add_option("--config", config, "experiment config JSON")->required();
  auto* mixed = app.add_subcommand("evaluate-mixed", "run with a dictionary drawn from other scenes");
  mixed->add_option("--config", config, "experiment config JSON")->required();
  mixed->add_option("--donors", donors, "donor manifests")->required()->expected(1, -1);

  std::string h_file;
  auto* render = app.add_subcommand("render", "overlay a warped bird's-eye map on a query");
  render->set_help_flag("--help", "print this help message and exit");
  render->add_option("--birdseye", birdseye, "bird's-eye semantic PNG")->required();
  render->add_option("--h", h_file, "homography JSON")->required();
  render->add_option("--query", query, "query semantic PNG")->required();
  render->add_option("--out", out_file, "output RGB PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(map, grid, splits, out_dir, seed, threads);
    if (*match) return cmd_match(query, dict, metric, topk, threads);
    if (*ref) return cmd_refine(query, birdseye, dict, metric, loss_name, starts, max_iters, out_file, threads);
    if (*eval) return cmd_evaluate(config, {}, false);
    if (*mixed) return cmd_evaluate(config, std::vector<fs::path>(donors.begin(), donors.end()), true);
    if (*render) return cmd_render(birdseye, h_file, query, out_file);
  } catch (const IoError& e) {
    std::cerr << "topocal: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "topocal: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "topocal: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "topocal: malformed JSON: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
