#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "qdup/corpus.hpp"
#include "qdup/preprocess.hpp"
#include "qdup/question_gen.hpp"
#include "qdup/random.hpp"
#include "qdup/ranking_eval.hpp"
#include "qdup/scorer.hpp"
#include "qdup/synthetic.hpp"
#include "qdup/trainset.hpp"

namespace qdup {

// ---------------------------------------------------------------------------
// Held-out evaluation tasks from duplicate links

struct EvalSplit {
  std::vector<RankingTask> tasks;
  std::set<PostId> excluded;  // queries, their duplicates and all distractors
};

struct EvalSplitOptions {
  std::size_t queries = 100;
  std::size_t distractors = 200;
  std::size_t candidates = 21;  // per task, relevant included; 0 = whole distractor pool
  std::uint64_t seed = 0;
};

// Queries are the source side of sampled duplicate links, the target side is
// the relevant candidate; distractors come from questions unrelated to any
// query. Candidate order is shuffled per task.
inline EvalSplit make_eval_split(const Corpus& corpus, const ProcessedSet& processed, const EvalSplitOptions& opt) {
  std::vector<DuplicateLink> links;
  for (const auto& l : corpus.duplicates())
    if (processed.count(l.source_id) && processed.count(l.target_id)) links.push_back(l);
  std::sort(links.begin(), links.end(), [&](const DuplicateLink& a, const DuplicateLink& b) {
    return std::pair(mix_key(opt.seed, detail::pair_key(a.source_id, a.target_id)), a) <
           std::pair(mix_key(opt.seed, detail::pair_key(b.source_id, b.target_id)), b);
  });
  EvalSplit out;
  std::vector<DuplicateLink> chosen;
  std::set<PostId> used;
  for (const auto& l : links) {
    if (chosen.size() == opt.queries) break;
    if (used.count(l.source_id) || used.count(l.target_id)) continue;
    used.insert(l.source_id);
    used.insert(l.target_id);
    chosen.push_back(l);
  }
  if (chosen.empty()) throw MetricError("no usable duplicate links for evaluation");

  // Anything linked to an evaluation question cannot serve as a distractor.
  std::set<PostId> blocked = used;
  for (const auto& l : corpus.duplicates())
    if (used.count(l.source_id) || used.count(l.target_id)) {
      blocked.insert(l.source_id);
      blocked.insert(l.target_id);
    }
  std::vector<PostId> pool;
  for (const auto& [id, pq] : processed)
    if (!blocked.count(id)) pool.push_back(id);
  std::sort(pool.begin(), pool.end(), [&](PostId a, PostId b) {
    return std::pair(mix_key(opt.seed ^ 0xd15ULL, a), a) < std::pair(mix_key(opt.seed ^ 0xd15ULL, b), b);
  });
  if (pool.size() > opt.distractors) pool.resize(opt.distractors);
  if (pool.empty()) throw MetricError("no distractors available for evaluation");

  out.excluded = used;
  out.excluded.insert(pool.begin(), pool.end());
  for (const auto& l : chosen) {
    RankingTask t;
    t.query_id = std::to_string(l.source_id);
    t.query = processed.at(l.source_id).question_text();
    KeyedRng rng(opt.seed, l.source_id);
    std::vector<PostId> ds = pool;
    const std::size_t want = opt.candidates == 0 ? ds.size() : std::min(ds.size(), opt.candidates - 1);
    for (std::size_t i = 0; i < want; ++i) std::swap(ds[i], ds[i + rng.below(ds.size() - i)]);
    ds.resize(want);
    t.candidates.push_back({std::to_string(l.target_id), processed.at(l.target_id).question_text(), true});
    for (PostId d : ds) t.candidates.push_back({std::to_string(d), processed.at(d).question_text(), false});
    for (std::size_t i = t.candidates.size(); i > 1; --i) std::swap(t.candidates[i - 1], t.candidates[rng.below(i)]);
    out.tasks.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: flat `key = value` lines, '#' comments, lists comma-separated.

class ManifestError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentManifest {
  std::string site = "site";
  std::filesystem::path corpus;              // corpus directory, or empty with synthetic_questions set
  std::optional<std::size_t> synthetic_questions;
  std::optional<std::filesystem::path> qg_source;
  std::vector<std::string> strategies;
  std::vector<Scale> scales = {Scale::all()};
  std::optional<std::size_t> base_size;
  std::vector<std::uint64_t> seeds;
  std::uint32_t neg_ratio = 20;
  std::size_t dim = 100;
  TrainConfig train;
  MetricSelection metrics = MetricSelection::parse("p@1,p@5,map,mrr,auc@0.05");
  EvalSplitOptions eval;
  std::size_t workers = 1;
  bool save_models = false;
  std::filesystem::path out;
  std::uint64_t hash = 0;
  std::string text;

  std::string hash_hex() const { return hex64(hash); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t b = 0;
  while (b <= s.size()) {
    const std::size_t e = std::min(s.find(',', b), s.size());
    std::string item = trim(s.substr(b, e - b));
    if (!item.empty()) out.push_back(std::move(item));
    b = e + 1;
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size())
    throw ManifestError("manifest: '" + key + "' expects a non-negative integer");
  return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const std::exception&) {
    throw ManifestError("manifest: '" + key + "' expects a number");
  }
}

inline bool is_model_free(std::string_view strategy) {
  return strategy == "untrained" || strategy.rfind("baseline:", 0) == 0;
}

inline void check_strategy(const std::string& s) {
  if (s == "untrained") return;
  if (s.rfind("baseline:", 0) == 0) {
    parse_baseline(std::string_view(s).substr(9));
    return;
  }
  parse_strategy(s);
}

}  // namespace detail

inline ExperimentManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {}) {
  ExperimentManifest m;
  m.text = std::string(text);
  m.hash = fnv1a64(text);
  std::set<std::string> seen;
  std::size_t b = 0, line_no = 0;
  auto resolve = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  while (b <= text.size()) {
    const std::size_t e = std::min(text.find('\n', b), text.size());
    std::string line = detail::trim(text.substr(b, e - b));
    b = e + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ManifestError("manifest line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string v = detail::trim(std::string_view(line).substr(eq + 1));
    if (!seen.insert(key).second) throw ManifestError("manifest: duplicate key '" + key + "'");
    try {
      if (key == "site") m.site = v;
      else if (key == "corpus") {
        if (v.rfind("synthetic:", 0) == 0) m.synthetic_questions = detail::parse_uint(key, v.substr(10));
        else m.corpus = resolve(v);
      } else if (key == "qg_source") m.qg_source = resolve(v);
      else if (key == "strategies") {
        m.strategies = detail::split_list(v);
        for (const auto& s : m.strategies) detail::check_strategy(s);
      } else if (key == "scales") {
        m.scales.clear();
        for (const auto& s : detail::split_list(v)) m.scales.push_back(Scale::parse(s));
      } else if (key == "base_size") m.base_size = detail::parse_uint(key, v);
      else if (key == "seeds") {
        for (const auto& s : detail::split_list(v)) m.seeds.push_back(detail::parse_uint(key, s));
      } else if (key == "neg_ratio") m.neg_ratio = static_cast<std::uint32_t>(detail::parse_uint(key, v));
      else if (key == "dim") m.dim = detail::parse_uint(key, v);
      else if (key == "margin") m.train.margin = detail::parse_real(key, v);
      else if (key == "lr") m.train.learning_rate = detail::parse_real(key, v);
      else if (key == "epochs") m.train.epochs = static_cast<std::uint32_t>(detail::parse_uint(key, v));
      else if (key == "batch_size") m.train.batch_size = static_cast<std::uint32_t>(detail::parse_uint(key, v));
      else if (key == "weighting") m.train.weighting = parse_weighting(v);
      else if (key == "metrics") m.metrics = MetricSelection::parse(v);
      else if (key == "eval_queries") m.eval.queries = detail::parse_uint(key, v);
      else if (key == "eval_distractors") m.eval.distractors = detail::parse_uint(key, v);
      else if (key == "eval_candidates") m.eval.candidates = detail::parse_uint(key, v);
      else if (key == "eval_seed") m.eval.seed = detail::parse_uint(key, v);
      else if (key == "workers") m.workers = detail::parse_uint(key, v);
      else if (key == "save_models") m.save_models = v == "true" || v == "1" || v == "yes";
      else if (key == "out") m.out = resolve(v);
      else throw ManifestError("manifest: unknown key '" + key + "'");
    } catch (const ManifestError&) {
      throw;
    } catch (const std::exception& ex) {
      throw ManifestError("manifest: bad value for '" + key + "': " + ex.what());
    }
  }
  if (m.corpus.empty() && !m.synthetic_questions) throw ManifestError("manifest: 'corpus' is required");
  if (m.strategies.empty()) throw ManifestError("manifest: 'strategies' is required");
  if (m.seeds.empty()) throw ManifestError("manifest: 'seeds' must list at least one seed");
  if (m.scales.empty()) throw ManifestError("manifest: 'scales' must not be empty");
  if (m.workers == 0) m.workers = 1;
  if (m.dim < 2) throw ManifestError("manifest: 'dim' must be at least 2");
  try {
    m.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline ExperimentManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_manifest(ss.str(), file.parent_path());
  if (m.out.empty()) m.out = file.parent_path() / (file.stem().string() + ".out");
  return m;
}

// ---------------------------------------------------------------------------
// Running

enum class CellStatus { kOk, kUnavailable, kFailed };

inline std::string_view to_string(CellStatus s) {
  switch (s) {
    case CellStatus::kOk: return "ok";
    case CellStatus::kUnavailable: return "unavailable";
    case CellStatus::kFailed: return "failed";
  }
  return "?";
}

struct CellResult {
  std::string strategy;
  std::string scale;  // "-" for model-free rows
  std::uint64_t seed = 0;
  CellStatus status = CellStatus::kFailed;
  std::string message;
  std::optional<EvalReport> report;
  std::vector<double> loss;
  std::size_t positives = 0;
  std::size_t instances = 0;

  std::string row() const { return scale == "-" ? strategy : strategy + " " + scale; }
  std::string dir_name() const {
    std::string s = strategy + "_" + (scale == "-" ? std::string("na") : scale) + "_s" + std::to_string(seed);
    for (char& c : s)
      if (c == ':' || c == '+' || c == '/') c = '-';
    return s;
  }
};

struct ScalingRow {
  std::string strategy;
  std::string scale;
  std::string metric;
  double mean = 0;
  double sd = 0;
  std::size_t n = 0;
};

struct RunResult {
  std::vector<CellResult> cells;
  std::vector<ScalingRow> scaling;
  std::string summary;
  bool all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.status == CellStatus::kOk; });
  }
};

// Everything the cells share: one preprocessing pass, one evaluation split,
// one fitted generator.
struct PreparedData {
  Corpus corpus;
  ProcessedSet processed;
  EvalSplit split;
  TermStats stats;  // over non-held-out question texts
  std::optional<std::map<PostId, Tokens>> generated;
  std::string generator_error;
  std::size_t default_base = 0;
};

struct RunOptions {
  std::function<void(const std::string&)> progress;
};

namespace detail {

inline std::vector<std::string> metric_names(const MetricSelection& ms) {
  std::vector<std::string> out;
  for (auto k : ms.precision_ks) out.push_back("p@" + std::to_string(k));
  if (ms.map) out.push_back("map");
  if (ms.mrr) out.push_back("mrr");
  if (ms.auc_cap) out.push_back(metric_label_auc(*ms.auc_cap));
  return out;
}

inline std::vector<double> metric_values(const EvalReport& r) {
  std::vector<double> out;
  for (const auto& [k, v] : r.precision) out.push_back(v);
  if (r.metrics.map) out.push_back(r.map);
  if (r.metrics.mrr) out.push_back(r.mrr);
  if (r.auc) out.push_back(r.auc->second);
  return out;
}

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0, 0};
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0};
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size() - 1))};
}

inline std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

}  // namespace detail

inline PreparedData prepare(const ExperimentManifest& m, const RunOptions& ro = {}) {
  auto say = [&](const std::string& s) {
    if (ro.progress) ro.progress(s);
  };
  PreparedData d;
  if (m.synthetic_questions) {
    SyntheticSpec spec;
    spec.questions = *m.synthetic_questions;
    spec.duplicate_pairs = std::min(spec.duplicate_pairs, spec.questions / 4);
    spec.site = m.site;
    d.corpus = make_synthetic_corpus(spec).corpus;
  } else {
    if (!std::filesystem::is_directory(m.corpus)) throw ManifestError("corpus directory not found: " + m.corpus.string());
    d.corpus = load_corpus(m.corpus);
  }
  if (m.qg_source && !std::filesystem::is_directory(*m.qg_source))
    throw ManifestError("qg_source directory not found: " + m.qg_source->string());
  say("preprocessing " + std::to_string(d.corpus.questions().size()) + " questions");
  d.processed = preprocess(d.corpus, FilterMode::kDedup).processed;
  d.split = make_eval_split(d.corpus, d.processed, m.eval);
  say("evaluation: " + std::to_string(d.split.tasks.size()) + " queries, " + std::to_string(d.split.excluded.size()) +
      " held-out questions");
  for (const auto& [id, pq] : d.processed)
    if (!d.split.excluded.count(id)) d.stats.add_document(pq.question_text());
  BuildOptions held_out;
  held_out.excluded = d.split.excluded;
  for (const auto& l : d.corpus.duplicates())
    if (detail::usable(held_out, d.processed, l.source_id) && detail::usable(held_out, d.processed, l.target_id))
      ++d.default_base;

  const bool wants_qg = std::any_of(m.strategies.begin(), m.strategies.end(), [](const std::string& s) {
    return s == "dqg" || s == "DQG" || s == "combined" || s == "DQG+WSTB";
  });
  if (wants_qg) {
    try {
      const Corpus source = m.qg_source ? load_corpus(*m.qg_source) : d.corpus;
      auto qg = preprocess(source, FilterMode::kQuestionGeneration).processed;
      if (!m.qg_source)
        for (PostId id : d.split.excluded) qg.erase(id);
      FitOptions fo;
      fo.seed = m.seeds.front();
      fo.source_site = m.qg_source ? source.site() : d.corpus.site();
      say("fitting title generator on " + std::to_string(qg.size()) + " questions");
      const auto gen = fit_generator(qg, fo);
      d.generated = generate_all(gen, d.processed);
    } catch (const std::exception& e) {
      d.generator_error = e.what();
    }
  }
  return d;
}

inline CellResult run_cell(const ExperimentManifest& m, const PreparedData& d, const std::string& strategy, const Scale* scale,
                           std::uint64_t seed, const std::filesystem::path& dir) {
  CellResult c;
  c.strategy = strategy;
  c.scale = scale ? scale->str() : "-";
  c.seed = seed;
  EvalOptions eo;
  eo.metrics = m.metrics;
  const std::string header = "manifest " + m.hash_hex();
  try {
    std::optional<EmbeddingModel> model;
    if (strategy == "untrained") {
      model = EmbeddingModel::create(d.stats, m.dim, seed, m.train.weighting);
      c.report = evaluate([&](auto a, auto b) { return model->score(a, b); }, d.split.tasks, eo);
    } else if (strategy.rfind("baseline:", 0) == 0) {
      const Baseline kind = parse_baseline(std::string_view(strategy).substr(9));
      c.report = evaluate([&](auto a, auto b) { return baseline_score(kind, a, b, d.stats); }, d.split.tasks, eo);
    } else {
      const Strategy st = parse_strategy(strategy);
      BuildOptions bo;
      bo.negatives_per_positive = m.neg_ratio;
      bo.seed = seed;
      bo.scale = *scale;
      bo.base_size = m.base_size ? m.base_size : (d.default_base > 0 ? std::optional<std::size_t>(d.default_base) : std::nullopt);
      bo.excluded = d.split.excluded;
      TrainingSet ts;
      try {
        switch (st) {
          case Strategy::kSupervised: ts = build_supervised(d.corpus, d.processed, bo); break;
          case Strategy::kWsQa: ts = build_wsqa(d.corpus, d.processed, bo); break;
          case Strategy::kWsTb: ts = build_wstb(d.corpus, d.processed, bo); break;
          case Strategy::kDqg:
          case Strategy::kCombined:
            if (!d.generated) throw BuildError("DQG strategy unavailable: " + d.generator_error);
            ts = build_dqg(d.corpus, d.processed, *d.generated, bo);
            if (st == Strategy::kCombined) ts = combine(ts, build_wstb(d.corpus, d.processed, bo));
            break;
        }
      } catch (const BuildError& e) {
        c.status = CellStatus::kUnavailable;
        c.message = e.what();
        return c;
      }
      c.positives = ts.positives;
      c.instances = ts.instances.size();
      detail::write_text(dir / "trainset.manifest.json", [&] {
        auto j = trainset_manifest(ts);
        j["manifest_hash"] = m.hash_hex();
        return j.dump(2) + "\n";
      }());
      TrainConfig cfg = m.train;
      cfg.seed = seed;
      model = EmbeddingModel::create(ts, m.dim, seed, cfg.weighting);
      c.loss = train(*model, ts, cfg).epoch_loss;
      std::ostringstream loss;
      loss << "# " << header << "\nepoch\tloss\n";
      for (std::size_t i = 0; i < c.loss.size(); ++i) loss << i + 1 << '\t' << format_double(c.loss[i]) << '\n';
      detail::write_text(dir / "loss.tsv", loss.str());
      if (m.save_models) save_model(*model, dir / "model.bin");
      c.report = evaluate([&](auto a, auto b) { return model->score(a, b); }, d.split.tasks, eo);
    }
    write_report(*c.report, dir / "report.txt", {header, "strategy " + c.strategy, "scale " + c.scale,
                                                 "seed " + std::to_string(seed)});
    c.status = CellStatus::kOk;
  } catch (const std::exception& e) {
    c.status = CellStatus::kFailed;
    c.message = e.what();
  }
  return c;
}

// Rows: strategy x scale in manifest order; columns: metric means over
// successful seeds ("-" when none succeeded).
inline std::string render_summary(const ExperimentManifest& m, const std::vector<CellResult>& cells) {
  const auto names = detail::metric_names(m.metrics);
  std::ostringstream os;
  os << "# manifest " << m.hash_hex() << "\n# site " << m.site << "\n";
  os << "strategy";
  for (const auto& n : names) os << '\t' << n;
  os << "\tseeds_ok\n";
  std::vector<std::string> rows;
  for (const auto& c : cells)
    if (std::find(rows.begin(), rows.end(), c.row()) == rows.end()) rows.push_back(c.row());
  for (const auto& row : rows) {
    std::vector<std::vector<double>> vals(names.size());
    std::size_t ok = 0, total = 0;
    for (const auto& c : cells) {
      if (c.row() != row) continue;
      ++total;
      if (c.status != CellStatus::kOk) continue;
      ++ok;
      const auto v = detail::metric_values(*c.report);
      for (std::size_t i = 0; i < v.size(); ++i) vals[i].push_back(v[i]);
    }
    os << row;
    for (const auto& v : vals) os << '\t' << (v.empty() ? std::string("-") : detail::fixed4(detail::mean_sd(v).first));
    os << '\t' << ok << '/' << total << '\n';
  }
  bool header = false;
  for (const auto& c : cells) {
    if (c.status == CellStatus::kOk) continue;
    if (!header) os << "# failures\n";
    header = true;
    os << "# " << c.dir_name() << ' ' << to_string(c.status) << ": " << c.message << '\n';
  }
  return os.str();
}

// (strategy, multiplier, metric) -> mean and sample standard deviation over
// seeds; only trained strategies with a multiplier scale contribute.
inline std::vector<ScalingRow> scaling_curve(const ExperimentManifest& m, const std::vector<CellResult>& cells) {
  const auto names = detail::metric_names(m.metrics);
  std::vector<ScalingRow> out;
  for (const auto& strategy : m.strategies) {
    if (detail::is_model_free(strategy)) continue;
    for (const auto& scale : m.scales) {
      if (!scale.multiplier) continue;
      std::vector<std::vector<double>> vals(names.size());
      for (const auto& c : cells) {
        if (c.strategy != strategy || c.scale != scale.str() || c.status != CellStatus::kOk) continue;
        const auto v = detail::metric_values(*c.report);
        for (std::size_t i = 0; i < v.size(); ++i) vals[i].push_back(v[i]);
      }
      for (std::size_t i = 0; i < names.size(); ++i) {
        const auto [mean, sd] = detail::mean_sd(vals[i]);
        out.push_back({strategy, scale.str(), names[i], mean, sd, vals[i].size()});
      }
    }
  }
  return out;
}

inline std::string render_scaling(const ExperimentManifest& m, const std::vector<ScalingRow>& rows) {
  std::ostringstream os;
  os << "# manifest " << m.hash_hex() << "\nstrategy\tmultiplier\tmetric\tmean\tsd\tn\n";
  for (const auto& r : rows)
    os << r.strategy << '\t' << r.scale << '\t' << r.metric << '\t' << format_double(r.mean) << '\t' << format_double(r.sd)
       << '\t' << r.n << '\n';
  return os.str();
}

// Executes every (strategy, scale, seed) cell; model-free strategies run once
// per seed. Output lands in `m.out`.
inline RunResult run_experiment(const ExperimentManifest& m, const RunOptions& ro = {}) {
  namespace fs = std::filesystem;
  const PreparedData d = prepare(m, ro);
  fs::create_directories(m.out / "cells");
  detail::write_text(m.out / "manifest.txt", "# manifest " + m.hash_hex() + "\n" + m.text);
  {
    std::ofstream tasks(m.out / "eval_tasks.jsonl", std::ios::binary);
    ordered_json h;
    h["format"] = "qdup-tasks";
    h["manifest_hash"] = m.hash_hex();
    tasks << dump_line(h) << '\n';
    for (const auto& t : d.split.tasks) tasks << dump_line(to_json(t)) << '\n';
  }

  struct Job {
    std::string strategy;
    std::optional<Scale> scale;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& s : m.strategies) {
    if (detail::is_model_free(s)) {
      for (auto seed : m.seeds) jobs.push_back({s, std::nullopt, seed});
      continue;
    }
    for (const auto& sc : m.scales)
      for (auto seed : m.seeds) jobs.push_back({s, sc, seed});
  }

  RunResult result;
  result.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& j = jobs[i];
      CellResult probe;
      probe.strategy = j.strategy;
      probe.scale = j.scale ? j.scale->str() : "-";
      probe.seed = j.seed;
      const fs::path dir = m.out / "cells" / probe.dir_name();
      fs::create_directories(dir);
      auto c = run_cell(m, d, j.strategy, j.scale ? &*j.scale : nullptr, j.seed, dir);
      ordered_json st;
      st["manifest_hash"] = m.hash_hex();
      st["status"] = to_string(c.status);
      st["message"] = c.message;
      st["positives"] = c.positives;
      st["instances"] = c.instances;
      detail::write_text(dir / "status.json", st.dump(2) + "\n");
      if (ro.progress) {
        std::lock_guard lock(log_mu);
        ro.progress("cell " + probe.dir_name() + ": " + std::string(to_string(c.status)) +
                    (c.message.empty() ? "" : " (" + c.message + ")"));
      }
      result.cells[i] = std::move(c);
    }
  };
  const std::size_t n_threads = std::min(m.workers, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back([&worker] { worker(); });
    for (auto& t : pool) t.join();
  }

  result.summary = render_summary(m, result.cells);
  result.scaling = scaling_curve(m, result.cells);
  detail::write_text(m.out / "summary.tsv", result.summary);
  detail::write_text(m.out / "scaling.tsv", render_scaling(m, result.scaling));
  return result;
}

}  // namespace qdup
