#pragma once

// Exhaustive nearest-template search: score the query against every dictionary
// template and keep the minimizer, ties going to the lowest entry id.

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topocal/datagen.hpp"
#include "topocal/error.hpp"
#include "topocal/loss.hpp"
#include "topocal/parallel.hpp"
#include "topocal/png_io.hpp"
#include "topocal/raster.hpp"

namespace topocal::matching {

enum class Metric { mse, top_mse };

inline std::string to_string(Metric m) { return m == Metric::mse ? "mse" : "topmse"; }

inline Metric metric_from_string(const std::string& s) {
  if (s == "mse") return Metric::mse;
  if (s == "topmse") return Metric::top_mse;
  throw InvalidSpec("unknown metric '" + s + "' (expected mse or topmse)");
}

inline loss::Objective metric_objective(Metric m, const loss::TopoLossConfig& topo = {}) {
  return loss::objective(m == Metric::mse ? loss::Kind::mse : loss::Kind::top_mse, topo);
}

struct DictionaryEntry {
  int id = 0;
  SemanticMap tmpl;
  OneHotMap onehot;
  Homography homography;
};

class Dictionary {
 public:
  Dictionary() = default;

  void add(int id, SemanticMap tmpl, const Homography& h) {
    if (!entries_.empty()) {
      const SemanticMap& first = entries_.front().tmpl;
      if (tmpl.width() != first.width() || tmpl.height() != first.height() ||
          tmpl.class_count() != first.class_count())
        throw InvalidInput("dictionary templates must share size and class count");
    }
    for (const auto& e : entries_)
      if (e.id == id) throw InvalidInput("duplicate dictionary id " + std::to_string(id));
    OneHotMap o = raster::to_onehot(tmpl);
    entries_.push_back({id, std::move(tmpl), std::move(o), h});
  }

  const std::vector<DictionaryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const DictionaryEntry& by_id(int id) const {
    for (const auto& e : entries_)
      if (e.id == id) return e;
    throw InvalidInput("dictionary has no entry " + std::to_string(id));
  }

 private:
  std::vector<DictionaryEntry> entries_;
};

// Dictionary split of a manifest, templates read from disk.
inline Dictionary load_dictionary(const datagen::DatasetManifest& m) {
  Dictionary d;
  for (const auto* e : m.split(datagen::Split::dictionary))
    d.add(e->id, io::read_semantic_png(e->map_path), e->homography);
  return d;
}

struct MatchResult {
  int id = 0;
  double score = 0.0;
  Metric metric = Metric::top_mse;
};

inline void to_json(nlohmann::json& j, const MatchResult& r) {
  j = nlohmann::json{{"id", r.id}, {"score", r.score}, {"metric", to_string(r.metric)}};
}

struct MatchOptions {
  Metric metric = Metric::top_mse;
  loss::TopoLossConfig topo;
  unsigned threads = 1;
};

// Score of every entry, in dictionary order.
inline std::vector<double> score_all(const SemanticMap& query, const Dictionary& dict,
                                     const MatchOptions& opt) {
  if (dict.empty()) throw EmptyDictionary("cannot match against an empty dictionary");
  const auto& first = dict.entries().front().tmpl;
  if (query.width() != first.width() || query.height() != first.height() ||
      query.class_count() != first.class_count())
    throw InvalidInput("query is " + std::to_string(query.width()) + "x" +
                       std::to_string(query.height()) + " but templates are " +
                       std::to_string(first.width()) + "x" + std::to_string(first.height()));
  const OneHotMap q = raster::to_onehot(query);
  const loss::Objective obj = metric_objective(opt.metric, opt.topo);
  std::vector<double> scores(dict.size());
  parallel_for(dict.size(), opt.threads,
               [&](std::size_t i) { scores[i] = loss::evaluate(q, dict.entries()[i].onehot, obj); });
  return scores;
}

// The k best entries by ascending score, ties by ascending id.
inline std::vector<MatchResult> match_topk(const SemanticMap& query, const Dictionary& dict,
                                           const MatchOptions& opt, std::size_t k) {
  if (k < 1) throw InvalidParameter("top-k needs k >= 1");
  const std::vector<double> scores = score_all(query, dict, opt);
  std::vector<MatchResult> all;
  all.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    all.push_back({dict.entries()[i].id, scores[i], opt.metric});
  std::sort(all.begin(), all.end(), [](const MatchResult& a, const MatchResult& b) {
    return a.score != b.score ? a.score < b.score : a.id < b.id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

inline MatchResult match(const SemanticMap& query, const Dictionary& dict,
                         const MatchOptions& opt = {}) {
  const std::vector<double> scores = score_all(query, dict, opt);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const auto& e = dict.entries();
    if (scores[i] < scores[best] || (scores[i] == scores[best] && e[i].id < e[best].id)) best = i;
  }
  return {dict.entries()[best].id, scores[best], opt.metric};
}

}  // namespace topocal::matching
