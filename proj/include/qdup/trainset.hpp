#pragma once

#include <algorithm>
#include <cstdint>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "qdup/corpus.hpp"
#include "qdup/preprocess.hpp"
#include "qdup/question_gen.hpp"
#include "qdup/random.hpp"
#include "qdup/text.hpp"

namespace qdup {

enum class Strategy { kSupervised, kWsQa, kWsTb, kDqg, kCombined };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kSupervised: return "SUP";
    case Strategy::kWsQa: return "WSQA";
    case Strategy::kWsTb: return "WSTB";
    case Strategy::kDqg: return "DQG";
    case Strategy::kCombined: return "DQG+WSTB";
  }
  return "?";
}

// Accepts both the record tags (SUP, WSQA, ...) and the CLI names (sup,
// wsqa, wstb, dqg, combined).
inline Strategy parse_strategy(std::string_view s) {
  if (s == "SUP" || s == "sup") return Strategy::kSupervised;
  if (s == "WSQA" || s == "wsqa") return Strategy::kWsQa;
  if (s == "WSTB" || s == "wstb") return Strategy::kWsTb;
  if (s == "DQG" || s == "dqg") return Strategy::kDqg;
  if (s == "DQG+WSTB" || s == "combined") return Strategy::kCombined;
  throw std::invalid_argument("unknown strategy: " + std::string(s));
}

struct LabeledInstance {
  Tokens left;
  Tokens right;
  int label = 1;
  Strategy strategy = Strategy::kWsTb;
  PostId left_source = 0;
  PostId right_source = 0;

  bool operator==(const LabeledInstance&) const = default;
};

// Multiplier of the base (supervised train split) size, or the full pool.
struct Scale {
  std::optional<std::uint32_t> multiplier;  // nullopt = all

  static Scale all() { return {}; }
  static Scale times(std::uint32_t m) { return {m}; }

  static Scale parse(std::string_view s) {
    if (s == "all") return all();
    std::string digits(s);
    if (!digits.empty() && (digits.back() == 'x' || digits.back() == 'X')) digits.pop_back();
    std::uint32_t v = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (digits.empty() || ec != std::errc{} || end != digits.data() + digits.size() || v == 0)
      throw std::invalid_argument("bad scale: " + std::string(s));
    return times(v);
  }

  std::string str() const { return multiplier ? std::to_string(*multiplier) + "x" : "all"; }
  bool operator==(const Scale&) const = default;
};

struct TrainingSet {
  std::vector<LabeledInstance> instances;
  Strategy strategy = Strategy::kWsTb;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::uint32_t negatives_per_positive = 20;
  Scale scale;
  std::uint64_t seed = 0;
  std::size_t pool_size = 0;  // eligible positives before scaling
  std::size_t skipped = 0;    // e.g. empty generations for DQG

  bool operator==(const TrainingSet&) const = default;
};

struct BuildOptions {
  std::uint32_t negatives_per_positive = 20;
  std::uint64_t seed = 0;
  Scale scale = Scale::all();
  // Size of "1x"; required for non-"all" scales.
  std::optional<std::size_t> base_size;
  // Evaluation queries and candidates: never used as positives or as
  // negative partners.
  std::set<PostId> excluded;
};

class BuildError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct PositiveItem {
  std::uint64_t key = 0;
  PostId left_id = 0;
  PostId right_id = 0;
  PostId anchor = 0;       // question the left side belongs to
  PostId right_owner = 0;  // question the right side belongs to
  Tokens left;
  Tokens right;
};

struct Partner {
  PostId owner = 0;  // question the text belongs to
  PostId source = 0;  // record id written to the origin field
  Tokens text;
};

using LinkSet = std::set<std::pair<PostId, PostId>>;

inline LinkSet undirected_links(const Corpus& corpus) {
  LinkSet out;
  for (const auto& l : corpus.duplicates()) out.insert(std::minmax(l.source_id, l.target_id));
  return out;
}

inline bool linked(const LinkSet& links, PostId a, PostId b) { return links.count(std::minmax(a, b)) > 0; }

// Shared positive-pool / negative-sampling machinery. Positives are ordered
// by a seed-keyed hash and the first n kept, so 1x ⊆ 2x ⊆ ... ⊆ all. Each
// positive's negatives come from a stream keyed by (seed, key) and depend
// neither on the scale nor on the other positives.
inline TrainingSet assemble(Strategy strategy, std::vector<PositiveItem> pool, const std::vector<Partner>& partners,
                            const LinkSet& links, const BuildOptions& opt, std::size_t skipped) {
  if (opt.negatives_per_positive == 0) throw BuildError("negatives_per_positive must be positive");

  std::sort(pool.begin(), pool.end(), [](const PositiveItem& a, const PositiveItem& b) { return a.key < b.key; });
  std::set<std::pair<Tokens, Tokens>> positive_pairs;
  std::vector<PositiveItem> unique;
  unique.reserve(pool.size());
  for (auto& item : pool)
    if (positive_pairs.emplace(item.left, item.right).second) unique.push_back(std::move(item));

  std::vector<std::size_t> order(unique.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = mix_key(opt.seed, unique[a].key), hb = mix_key(opt.seed, unique[b].key);
    return ha != hb ? ha < hb : unique[a].key < unique[b].key;
  });
  std::size_t take = order.size();
  if (opt.scale.multiplier) {
    if (!opt.base_size) throw BuildError("scale " + opt.scale.str() + " needs a base size");
    take = static_cast<std::size_t>(*opt.scale.multiplier) * *opt.base_size;
    if (take > order.size())
      throw BuildError("insufficient positive pool for " + std::string(to_string(strategy)) + " at scale " +
                       opt.scale.str() + ": requested " + std::to_string(take) + ", available " +
                       std::to_string(order.size()));
  }
  order.resize(take);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return unique[a].key < unique[b].key; });

  TrainingSet ts;
  ts.strategy = strategy;
  ts.negatives_per_positive = opt.negatives_per_positive;
  ts.scale = opt.scale;
  ts.seed = opt.seed;
  ts.pool_size = unique.size();
  ts.skipped = skipped;
  const std::size_t k = opt.negatives_per_positive;
  ts.instances.reserve(take * (k + 1));

  for (std::size_t idx : order) {
    const PositiveItem& item = unique[idx];
    auto eligible = [&](const Partner& p) {
      if (p.owner == item.anchor || p.owner == item.right_owner) return false;
      if (linked(links, item.anchor, p.owner)) return false;
      return positive_pairs.count({item.left, p.text}) == 0;
    };
    KeyedRng rng(opt.seed, item.key);
    std::vector<std::size_t> chosen;
    // Rejection sampling is uniform over eligible partners; fall back to an
    // explicit list when eligibility is rare.
    std::size_t attempts = 0;
    const std::size_t max_attempts = 64 * k + 256;
    std::vector<std::size_t> explicit_list;
    bool use_list = false;
    while (chosen.size() < k) {
      std::size_t cand = 0;
      if (!use_list) {
        if (partners.empty() || ++attempts > max_attempts) {
          use_list = true;
          for (std::size_t i = 0; i < partners.size(); ++i)
            if (eligible(partners[i])) explicit_list.push_back(i);
          if (explicit_list.empty())
            throw BuildError("no eligible negative partner for instance " + std::to_string(item.left_id));
          continue;
        }
        cand = rng.below(partners.size());
        if (!eligible(partners[cand])) continue;
      } else {
        cand = explicit_list[rng.below(explicit_list.size())];
      }
      // Distinct partners per positive while enough exist.
      const bool repeat = std::find(chosen.begin(), chosen.end(), cand) != chosen.end();
      if (repeat && !use_list) continue;
      if (repeat && use_list && explicit_list.size() > chosen.size()) continue;
      chosen.push_back(cand);
    }
    ts.instances.push_back({item.left, item.right, 1, strategy, item.left_id, item.right_id});
    for (std::size_t c : chosen)
      ts.instances.push_back({item.left, partners[c].text, -1, strategy, item.left_id, partners[c].source});
  }
  ts.positives = take;
  ts.negatives = take * k;
  return ts;
}

inline bool usable(const BuildOptions& opt, const ProcessedSet& processed, PostId id) {
  return processed.count(id) && !opt.excluded.count(id);
}

inline std::uint64_t pair_key(PostId a, PostId b) { return splitmix64(a * 0x9e3779b97f4a7c15ULL ^ b); }

}  // namespace detail

// Labeled duplicates: (q, q~) with question text = title ⊕ selected
// paragraph; negatives pair q with random unrelated questions.
inline TrainingSet build_supervised(const Corpus& corpus, const ProcessedSet& processed, const BuildOptions& opt) {
  const auto links = detail::undirected_links(corpus);
  std::vector<detail::PositiveItem> pool;
  std::size_t skipped = 0;
  for (const auto& l : corpus.duplicates()) {
    if (!detail::usable(opt, processed, l.source_id) || !detail::usable(opt, processed, l.target_id)) {
      ++skipped;
      continue;
    }
    pool.push_back({detail::pair_key(l.source_id, l.target_id), l.source_id, l.target_id, l.source_id, l.target_id,
                    processed.at(l.source_id).question_text(), processed.at(l.target_id).question_text()});
  }
  if (pool.empty()) throw BuildError("supervised strategy unavailable: corpus has no usable duplicate links");
  std::vector<detail::Partner> partners;
  for (const auto& [id, pq] : processed)
    if (!opt.excluded.count(id)) partners.push_back({id, id, pq.question_text()});
  return detail::assemble(Strategy::kSupervised, std::move(pool), partners, links, opt, skipped);
}

// Question and its accepted answer; negatives are accepted answers of
// other questions.
inline TrainingSet build_wsqa(const Corpus& corpus, const ProcessedSet& processed, const BuildOptions& opt) {
  const auto links = detail::undirected_links(corpus);
  std::vector<detail::PositiveItem> pool;
  std::vector<detail::Partner> partners;
  std::size_t skipped = 0;
  for (const auto& [id, pq] : processed) {
    if (opt.excluded.count(id)) continue;
    const Question* q = corpus.question(id);
    const Answer* a = q ? corpus.accepted_answer(*q) : nullptr;
    if (a == nullptr) continue;
    Tokens answer = tokenize(a->body_text);
    if (answer.empty()) {
      ++skipped;
      continue;
    }
    pool.push_back({id, id, a->id, id, id, pq.question_text(), answer});
    partners.push_back({id, a->id, std::move(answer)});
  }
  if (pool.empty()) throw BuildError("WS-QA strategy unavailable: no accepted answers");
  return detail::assemble(Strategy::kWsQa, std::move(pool), partners, links, opt, skipped);
}

// (title, selected paragraph) of the same question; negatives pair the
// title with another question's selected paragraph.
inline TrainingSet build_wstb(const Corpus& corpus, const ProcessedSet& processed, const BuildOptions& opt) {
  const auto links = detail::undirected_links(corpus);
  std::vector<detail::PositiveItem> pool;
  std::vector<detail::Partner> partners;
  for (const auto& [id, pq] : processed) {
    if (opt.excluded.count(id) || pq.title_tokens.empty()) continue;
    Tokens body = pq.selected().tokens();
    pool.push_back({id, id, id, id, id, pq.title_tokens, body});
    partners.push_back({id, id, std::move(body)});
  }
  if (pool.empty()) throw BuildError("WS-TB strategy unavailable: no processed questions");
  return detail::assemble(Strategy::kWsTb, std::move(pool), partners, links, opt, 0);
}

// (title, generated title); questions whose generation is empty are
// skipped and counted.
inline TrainingSet build_dqg(const Corpus& corpus, const ProcessedSet& processed, const std::map<PostId, Tokens>& generated,
                             const BuildOptions& opt) {
  const auto links = detail::undirected_links(corpus);
  std::vector<detail::PositiveItem> pool;
  std::vector<detail::Partner> partners;
  std::size_t skipped = 0;
  for (const auto& [id, pq] : processed) {
    if (opt.excluded.count(id) || pq.title_tokens.empty()) continue;
    const auto it = generated.find(id);
    if (it == generated.end() || it->second.empty()) {
      ++skipped;
      continue;
    }
    pool.push_back({id, id, id, id, id, pq.title_tokens, it->second});
    partners.push_back({id, id, it->second});
  }
  if (pool.empty()) throw BuildError("DQG strategy unavailable: no non-empty generations");
  return detail::assemble(Strategy::kDqg, std::move(pool), partners, links, opt, skipped);
}

inline std::map<PostId, Tokens> generate_all(const TitleGenerator& gen, const ProcessedSet& processed) {
  std::map<PostId, Tokens> out;
  for (const auto& [id, pq] : processed) out.emplace(id, generate(gen, pq));
  return out;
}

// Generated titles: one {"id", "tokens"} record per line.
inline void save_generated(const std::map<PostId, Tokens>& generated, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  for (const auto& [id, t] : generated) {
    ordered_json j;
    j["id"] = id;
    j["tokens"] = t;
    out << dump_line(j) << '\n';
  }
  if (!out) throw BuildError("failed writing " + file.string());
}

inline std::map<PostId, Tokens> load_generated(const std::filesystem::path& file) {
  std::map<PostId, Tokens> out;
  for_each_json_line(file, [&](const ordered_json& j) { out[j.at("id").get<PostId>()] = j.at("tokens").get<Tokens>(); });
  return out;
}

inline TrainingSet build_dqg(const Corpus& corpus, const ProcessedSet& processed, const TitleGenerator& gen,
                             const BuildOptions& opt) {
  return build_dqg(corpus, processed, generate_all(gen, processed), opt);
}

// Concatenates two sets under the DQG+WSTB tag, dropping identical
// instances and negatives that coincide with a positive pair.
inline TrainingSet combine(const TrainingSet& a, const TrainingSet& b) {
  TrainingSet out;
  out.strategy = Strategy::kCombined;
  out.negatives_per_positive = a.negatives_per_positive;
  out.scale = a.scale;
  out.seed = a.seed;
  out.pool_size = a.pool_size + b.pool_size;
  out.skipped = a.skipped + b.skipped;
  std::set<std::pair<Tokens, Tokens>> positives;
  for (const auto* ts : {&a, &b})
    for (const auto& inst : ts->instances)
      if (inst.label > 0) positives.emplace(inst.left, inst.right);
  std::set<std::tuple<Tokens, Tokens, int>> seen;
  for (const auto* ts : {&a, &b}) {
    for (auto inst : ts->instances) {
      if (inst.label < 0 && positives.count({inst.left, inst.right})) continue;
      if (!seen.emplace(inst.left, inst.right, inst.label).second) continue;
      inst.strategy = Strategy::kCombined;
      (inst.label > 0 ? out.positives : out.negatives) += 1;
      out.instances.push_back(std::move(inst));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: header line + one instance per line, plus a manifest.

inline ordered_json trainset_manifest(const TrainingSet& ts) {
  ordered_json m;
  m["format"] = "qdup-trainset";
  m["version"] = 1;
  m["strategy"] = to_string(ts.strategy);
  m["seed"] = ts.seed;
  m["negatives_per_positive"] = ts.negatives_per_positive;
  m["scale"] = ts.scale.str();
  m["positives"] = ts.positives;
  m["negatives"] = ts.negatives;
  m["pool_size"] = ts.pool_size;
  m["skipped"] = ts.skipped;
  return m;
}

inline void save_trainset(const TrainingSet& ts, const std::filesystem::path& file, const ordered_json& header_extra = {}) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  ordered_json header = trainset_manifest(ts);
  if (header_extra.is_object())
    for (const auto& [k, v] : header_extra.items()) header[k] = v;
  {
    std::ofstream out(file, std::ios::binary);
    out << dump_line(header) << '\n';
    for (const auto& inst : ts.instances) {
      ordered_json j;
      j["left"] = join(inst.left);
      j["right"] = join(inst.right);
      j["label"] = inst.label;
      j["strategy"] = to_string(inst.strategy);
      j["origin"] = {inst.left_source, inst.right_source};
      out << dump_line(j) << '\n';
    }
    if (!out) throw BuildError("failed writing " + file.string());
  }
  std::ofstream man(file.string() + ".manifest.json", std::ios::binary);
  man << header.dump(2) << '\n';
}

inline TrainingSet load_trainset(const std::filesystem::path& file) {
  TrainingSet ts;
  bool header = true;
  for_each_json_line(file, [&](const ordered_json& j) {
    if (header) {
      if (j.value("format", "") != "qdup-trainset") throw BuildError("not a training-set file: " + file.string());
      ts.strategy = parse_strategy(j.at("strategy").get<std::string>());
      ts.seed = j.at("seed").get<std::uint64_t>();
      ts.negatives_per_positive = j.at("negatives_per_positive").get<std::uint32_t>();
      ts.scale = Scale::parse(j.at("scale").get<std::string>());
      ts.positives = j.at("positives").get<std::size_t>();
      ts.negatives = j.at("negatives").get<std::size_t>();
      ts.pool_size = j.at("pool_size").get<std::size_t>();
      ts.skipped = j.at("skipped").get<std::size_t>();
      header = false;
      return;
    }
    LabeledInstance inst;
    inst.left = split_ws(j.at("left").get<std::string>());
    inst.right = split_ws(j.at("right").get<std::string>());
    inst.label = j.at("label").get<int>();
    inst.strategy = parse_strategy(j.at("strategy").get<std::string>());
    inst.left_source = j.at("origin").at(0).get<PostId>();
    inst.right_source = j.at("origin").at(1).get<PostId>();
    if (inst.label != 1 && inst.label != -1) throw BuildError("instance label must be +1 or -1");
    ts.instances.push_back(std::move(inst));
  });
  if (header) throw BuildError("empty training-set file: " + file.string());
  return ts;
}

}  // namespace qdup
