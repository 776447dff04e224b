#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qdup/corpus.hpp"
#include "qdup/text.hpp"

namespace qdup {

class MetricError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// (# relevant among the first min(k, n)) / k.
inline double precision_at_k(std::span<const bool> ranked, std::size_t k) {
  if (k == 0) throw std::invalid_argument("precision_at_k: k must be >= 1");
  const std::size_t n = std::min(k, ranked.size());
  const auto hits = std::count(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), true);
  return static_cast<double>(hits) / static_cast<double>(k);
}

// Mean of precision at each relevant position; 0 when nothing is relevant.
inline double average_precision(std::span<const bool> ranked) {
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!ranked[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

inline double reciprocal_rank(std::span<const bool> ranked) {
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (ranked[i]) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

struct ScoredLabel {
  double score = 0;
  bool positive = false;
};

// Area under the ROC curve for FPR in [0, fpr_cap], divided by fpr_cap.
// Equal scores form one threshold step (a diagonal segment).
inline double auc_at(std::span<const ScoredLabel> pairs, double fpr_cap) {
  if (!(fpr_cap > 0 && fpr_cap <= 1)) throw std::invalid_argument("auc_at: fpr cap must lie in (0, 1]");
  std::size_t pos = 0, neg = 0;
  for (const auto& p : pairs) {
    if (std::isnan(p.score)) throw MetricError("auc_at: NaN score");
    (p.positive ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw MetricError("auc_at: undefined without both positives and negatives");

  std::vector<ScoredLabel> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });

  double area = 0, fpr = 0, tpr = 0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].positive ? tp : fp) += 1;
      ++j;
    }
    const double nf = static_cast<double>(fp) / static_cast<double>(neg);
    const double nt = static_cast<double>(tp) / static_cast<double>(pos);
    if (nf >= fpr_cap) {
      const double t_cap = nf == fpr ? nt : tpr + (nt - tpr) * (fpr_cap - fpr) / (nf - fpr);
      area += (fpr_cap - fpr) * (tpr + t_cap) / 2;
      return std::clamp(area / fpr_cap, 0.0, 1.0);
    }
    area += (nf - fpr) * (tpr + nt) / 2;
    fpr = nf;
    tpr = nt;
    i = j;
  }
  return std::clamp(area / fpr_cap, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Tasks

struct RankingCandidate {
  std::string id;
  Tokens text;
  bool relevant = false;
};

struct RankingTask {
  std::string query_id;
  Tokens query;
  std::vector<RankingCandidate> candidates;
};

using PairScorer = std::function<double(std::span<const Token>, std::span<const Token>)>;

// Candidate indices by descending score; ties keep candidate order.
inline std::vector<std::size_t> rank_candidates(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct MetricSelection {
  std::vector<std::size_t> precision_ks;  // e.g. {1, 5}
  bool map = false;
  bool mrr = false;
  std::optional<double> auc_cap;

  static MetricSelection all() { return {{1, 5}, true, true, 0.05}; }

  // Comma-separated: p@K, map, mrr, auc@CAP.
  static MetricSelection parse(std::string_view spec) {
    MetricSelection m;
    std::size_t b = 0;
    while (b <= spec.size()) {
      const std::size_t e = std::min(spec.find(',', b), spec.size());
      std::string item;
      for (char c : spec.substr(b, e - b))
        if (!std::isspace(static_cast<unsigned char>(c))) item += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      b = e + 1;
      if (item.empty()) continue;
      if (item == "map") {
        m.map = true;
      } else if (item == "mrr") {
        m.mrr = true;
      } else if (item.rfind("p@", 0) == 0) {
        const std::size_t k = std::stoul(item.substr(2));
        if (k == 0) throw std::invalid_argument("p@k needs k >= 1");
        if (std::find(m.precision_ks.begin(), m.precision_ks.end(), k) == m.precision_ks.end()) m.precision_ks.push_back(k);
      } else if (item.rfind("auc@", 0) == 0) {
        const double cap = parse_double(std::string_view(item).substr(4));
        if (!(cap > 0 && cap <= 1)) throw std::invalid_argument("auc cap must lie in (0, 1]");
        m.auc_cap = cap;
      } else {
        throw std::invalid_argument("unknown metric: " + item);
      }
    }
    if (m.precision_ks.empty() && !m.map && !m.mrr && !m.auc_cap) throw std::invalid_argument("no metrics selected");
    std::sort(m.precision_ks.begin(), m.precision_ks.end());
    return m;
  }
};

struct EvalOptions {
  MetricSelection metrics = MetricSelection::all();
  bool per_query_auc = false;  // mean of per-task AUC instead of pooled pairs
};

struct QueryRow {
  std::string query_id;
  std::size_t candidates = 0;
  std::size_t relevant = 0;
  std::vector<double> precision;  // aligned with MetricSelection::precision_ks
  double ap = 0;
  double rr = 0;
  std::optional<double> auc;
};

struct EvalReport {
  MetricSelection metrics;
  std::vector<std::pair<std::size_t, double>> precision;  // (k, mean P@k)
  double map = 0;
  double mrr = 0;
  std::optional<std::pair<double, double>> auc;  // (cap, value)
  bool per_query_auc = false;
  std::size_t n_queries = 0;
  std::size_t zero_relevant_queries = 0;
  std::vector<QueryRow> per_query;

  std::optional<double> precision_at(std::size_t k) const {
    for (const auto& [kk, v] : precision)
      if (kk == k) return v;
    return std::nullopt;
  }
};

namespace detail {

// Sum in sorted order so the total does not depend on task order.
inline double stable_mean(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace detail

inline EvalReport evaluate(const PairScorer& scorer, std::span<const RankingTask> tasks, const EvalOptions& opt = {}) {
  if (tasks.empty()) throw MetricError("evaluate: no tasks");
  const auto& ms = opt.metrics;
  EvalReport rep;
  rep.metrics = ms;
  rep.per_query_auc = opt.per_query_auc;
  rep.n_queries = tasks.size();

  std::vector<std::vector<double>> p_values(ms.precision_ks.size());
  std::vector<double> ap_values, rr_values, auc_values;
  std::vector<ScoredLabel> pooled;
  for (const auto& task : tasks) {
    if (task.candidates.empty()) throw MetricError("task " + task.query_id + ": no candidates");
    std::vector<double> scores;
    scores.reserve(task.candidates.size());
    for (const auto& c : task.candidates) {
      const double s = scorer(task.query, c.text);
      if (std::isnan(s)) throw MetricError("task " + task.query_id + ": scorer returned NaN");
      scores.push_back(s);
    }
    const auto order = rank_candidates(scores);
    auto flags = std::make_unique<bool[]>(order.size());
    QueryRow row;
    row.query_id = task.query_id;
    row.candidates = order.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
      flags[i] = task.candidates[order[i]].relevant;
      row.relevant += flags[i] ? 1 : 0;
    }
    const std::span<const bool> f(flags.get(), order.size());
    if (row.relevant == 0) ++rep.zero_relevant_queries;
    for (std::size_t i = 0; i < ms.precision_ks.size(); ++i) {
      row.precision.push_back(precision_at_k(f, ms.precision_ks[i]));
      p_values[i].push_back(row.precision.back());
    }
    row.ap = average_precision(f);
    row.rr = reciprocal_rank(f);
    ap_values.push_back(row.ap);
    rr_values.push_back(row.rr);
    if (ms.auc_cap) {
      std::vector<ScoredLabel> local;
      for (std::size_t i = 0; i < scores.size(); ++i) local.push_back({scores[i], task.candidates[i].relevant});
      if (row.relevant > 0 && row.relevant < row.candidates) {
        row.auc = auc_at(local, *ms.auc_cap);
        auc_values.push_back(*row.auc);
      }
      pooled.insert(pooled.end(), local.begin(), local.end());
    }
    rep.per_query.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < ms.precision_ks.size(); ++i)
    rep.precision.emplace_back(ms.precision_ks[i], detail::stable_mean(p_values[i]));
  rep.map = detail::stable_mean(ap_values);
  rep.mrr = detail::stable_mean(rr_values);
  if (ms.auc_cap) {
    if (opt.per_query_auc) {
      if (auc_values.empty()) throw MetricError("per-query AUC undefined: no task has both relevant and irrelevant candidates");
      rep.auc = std::make_pair(*ms.auc_cap, detail::stable_mean(auc_values));
    } else {
      try {
        rep.auc = std::make_pair(*ms.auc_cap, auc_at(pooled, *ms.auc_cap));
      } catch (const MetricError& e) {
        throw MetricError(std::string("pooled AUC over all tasks: ") + e.what());
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Task file: one JSON object per line
//   {"query_id": "...", "query": "raw text" | "tokens": [...],
//    "candidates": [{"id": "...", "text": "..." | "tokens": [...], "relevant": 0|1}, ...]}

namespace detail {

inline Tokens text_field(const ordered_json& j) {
  if (j.contains("tokens")) return j.at("tokens").get<Tokens>();
  if (j.contains("query")) return tokenize(j.at("query").get<std::string>());
  if (j.contains("text")) return tokenize(j.at("text").get<std::string>());
  throw MetricError("task record lacks text");
}

inline std::string id_field(const ordered_json& j, std::string_view name) {
  const auto& v = j.at(std::string(name));
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace detail

inline ordered_json to_json(const RankingTask& t) {
  ordered_json j;
  j["query_id"] = t.query_id;
  j["tokens"] = t.query;
  ordered_json cs = ordered_json::array();
  for (const auto& c : t.candidates) {
    ordered_json cj;
    cj["id"] = c.id;
    cj["tokens"] = c.text;
    cj["relevant"] = c.relevant ? 1 : 0;
    cs.push_back(std::move(cj));
  }
  j["candidates"] = std::move(cs);
  return j;
}

inline RankingTask task_from_json(const ordered_json& j) {
  RankingTask t;
  t.query_id = detail::id_field(j, "query_id");
  t.query = detail::text_field(j);
  for (const auto& cj : j.at("candidates")) {
    RankingCandidate c;
    c.id = detail::id_field(cj, "id");
    c.text = cj.contains("tokens") ? cj.at("tokens").get<Tokens>() : tokenize(cj.at("text").get<std::string>());
    const auto& r = cj.at("relevant");
    c.relevant = r.is_boolean() ? r.get<bool>() : r.get<int>() != 0;
    t.candidates.push_back(std::move(c));
  }
  if (t.candidates.empty()) throw MetricError("task " + t.query_id + ": no candidates");
  return t;
}

inline void save_tasks(std::span<const RankingTask> tasks, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  for (const auto& t : tasks) out << dump_line(to_json(t)) << '\n';
  if (!out) throw MetricError("failed writing " + file.string());
}

inline std::vector<RankingTask> load_tasks(const std::filesystem::path& file) {
  std::vector<RankingTask> out;
  for_each_json_line(file, [&](const ordered_json& j) {
    if (j.contains("format")) return;  // header record
    out.push_back(task_from_json(j));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering

inline std::string metric_label_auc(double cap) { return "auc@" + format_double(cap); }

inline ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["n_queries"] = r.n_queries;
  j["zero_relevant_queries"] = r.zero_relevant_queries;
  j["zero_relevant_policy"] = "counted as 0";
  j["tie_break"] = "candidate index";
  ordered_json m;
  for (const auto& [k, v] : r.precision) m["p@" + std::to_string(k)] = v;
  if (r.metrics.map) m["map"] = r.map;
  if (r.metrics.mrr) m["mrr"] = r.mrr;
  if (r.auc) m[metric_label_auc(r.auc->first)] = r.auc->second;
  j["metrics"] = std::move(m);
  j["auc_mode"] = r.per_query_auc ? "per-query" : "pooled";
  ordered_json rows = ordered_json::array();
  for (const auto& q : r.per_query) {
    ordered_json row;
    row["query_id"] = q.query_id;
    row["candidates"] = q.candidates;
    row["relevant"] = q.relevant;
    for (std::size_t i = 0; i < q.precision.size(); ++i) row["p@" + std::to_string(r.metrics.precision_ks[i])] = q.precision[i];
    row["ap"] = q.ap;
    row["rr"] = q.rr;
    if (q.auc) row["auc"] = *q.auc;
    rows.push_back(std::move(row));
  }
  j["per_query"] = std::move(rows);
  return j;
}

// Named-field table, one metric per line.
inline std::string render_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "metric\tvalue\n";
  for (const auto& [k, v] : r.precision) os << "p@" << k << '\t' << v << '\n';
  if (r.metrics.map) os << "map\t" << r.map << '\n';
  if (r.metrics.mrr) os << "mrr\t" << r.mrr << '\n';
  if (r.auc) os << metric_label_auc(r.auc->first) << '\t' << r.auc->second << '\n';
  os << "queries\t" << r.n_queries << '\n';
  return os.str();
}

// Writes `<out>` (table) and `<out>.json` (record); header lines prefixed '#'.
inline void write_report(const EvalReport& r, const std::filesystem::path& out, const std::vector<std::string>& header = {}) {
  {
    std::ofstream t(out, std::ios::binary);
    for (const auto& h : header) t << "# " << h << '\n';
    t << render_table(r);
    if (!t) throw MetricError("failed writing " + out.string());
  }
  std::ofstream js(out.string() + ".json", std::ios::binary);
  auto j = to_json(r);
  if (!header.empty()) {
    ordered_json wrapped;
    wrapped["header"] = header;
    for (auto& [k, v] : j.items()) wrapped[k] = v;
    j = std::move(wrapped);
  }
  js << j.dump(2) << '\n';
  if (!js) throw MetricError("failed writing " + out.string() + ".json");
}

}  // namespace qdup
