#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qdup/random.hpp"
#include "qdup/term_stats.hpp"
#include "qdup/text.hpp"
#include "qdup/trainset.hpp"

namespace qdup {

enum class Weighting { kUniform, kIdf };

inline std::string_view to_string(Weighting w) { return w == Weighting::kIdf ? "idf" : "uniform"; }

inline Weighting parse_weighting(std::string_view s) {
  if (s == "idf") return Weighting::kIdf;
  if (s == "uniform") return Weighting::kUniform;
  throw std::invalid_argument("unknown weighting: " + std::string(s));
}

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 0.05;
  std::uint32_t epochs = 10;
  std::uint32_t batch_size = 32;
  std::uint64_t seed = 0;
  Weighting weighting = Weighting::kIdf;

  void validate() const {
    if (!(margin > 0 && margin < 2)) throw std::invalid_argument("margin must lie in (0, 2)");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  }
};

class ModelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token-weighted mean of learned embeddings, L2-normalized; questions are
// compared by cosine. Unknown tokens contribute nothing.
class EmbeddingModel {
 public:
  inline static constexpr double kInitRange = 0.1;

  EmbeddingModel() = default;

  // Vocabulary and IDF from `stats`; each row is drawn uniformly from
  // [-0.1, 0.1] by a stream keyed on (seed, token), so a token's initial
  // vector does not depend on the rest of the vocabulary.
  static EmbeddingModel create(const TermStats& stats, std::size_t dim, std::uint64_t seed, Weighting weighting) {
    if (dim < 2) throw ModelError("embedding width must be at least 2");
    EmbeddingModel m;
    m.dim_ = dim;
    m.seed_ = seed;
    m.weighting_ = weighting;
    const std::size_t n = stats.vocabulary_size();
    m.tokens_.reserve(n);
    m.idf_.reserve(n);
    m.matrix_.resize(n * dim);
    for (std::uint32_t i = 0; i < n; ++i) {
      m.tokens_.push_back(stats.term(i));
      m.idf_.push_back(stats.idf(i));
      m.index_.emplace(stats.term(i), i);
      KeyedRng rng(seed, fnv1a64(stats.term(i)));
      for (std::size_t j = 0; j < dim; ++j) m.matrix_[i * dim + j] = (2.0 * rng.uniform() - 1.0) * kInitRange;
    }
    return m;
  }

  // Vocabulary fitted on the distinct texts of a training set.
  static EmbeddingModel create(const TrainingSet& ts, std::size_t dim, std::uint64_t seed, Weighting weighting) {
    TermStats stats;
    std::set<Tokens> seen;
    for (const auto& inst : ts.instances)
      for (const Tokens* t : {&inst.left, &inst.right})
        if (seen.insert(*t).second) stats.add_document(*t);
    return create(stats, dim, seed, weighting);
  }

  std::size_t dim() const { return dim_; }
  std::size_t vocabulary_size() const { return tokens_.size(); }
  std::uint64_t seed() const { return seed_; }
  Weighting weighting() const { return weighting_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<double>& idf() const { return idf_; }
  std::span<double> matrix() { return matrix_; }
  std::span<const double> matrix() const { return matrix_; }
  std::span<double> row(std::uint32_t i) { return std::span<double>(matrix_).subspan(i * dim_, dim_); }
  std::span<const double> row(std::uint32_t i) const { return std::span<const double>(matrix_).subspan(i * dim_, dim_); }

  std::optional<std::uint32_t> index(const std::string& token) const {
    const auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Sparse bag: (row, weight / total weight) for known tokens.
  std::vector<std::pair<std::uint32_t, double>> bag(std::span<const Token> text) const {
    std::map<std::uint32_t, double> acc;
    double total = 0;
    for (const auto& t : text) {
      if (t == kSeparator) continue;
      const auto it = index_.find(t);
      if (it == index_.end()) continue;
      const double w = weighting_ == Weighting::kIdf ? idf_[it->second] : 1.0;
      acc[it->second] += w;
      total += w;
    }
    std::vector<std::pair<std::uint32_t, double>> out(acc.begin(), acc.end());
    if (total > 0)
      for (auto& [r, w] : out) w /= total;
    return out;
  }

  // Unnormalized weighted mean.
  std::vector<double> mean(const std::vector<std::pair<std::uint32_t, double>>& bag) const {
    std::vector<double> v(dim_, 0.0);
    for (const auto& [r, w] : bag) {
      const auto e = row(r);
      for (std::size_t j = 0; j < dim_; ++j) v[j] += w * e[j];
    }
    return v;
  }

  std::vector<double> encode(std::span<const Token> text) const {
    auto v = mean(bag(text));
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0) return std::vector<double>(dim_, 0.0);
    for (double& x : v) x /= n;
    return v;
  }

  double score(std::span<const Token> a, std::span<const Token> b) const {
    const auto ea = encode(a), eb = encode(b);
    double s = 0;
    for (std::size_t j = 0; j < dim_; ++j) s += ea[j] * eb[j];
    return std::clamp(s, -1.0, 1.0);
  }

  bool operator==(const EmbeddingModel& o) const {
    return dim_ == o.dim_ && seed_ == o.seed_ && weighting_ == o.weighting_ && tokens_ == o.tokens_ &&
           idf_ == o.idf_ && matrix_ == o.matrix_;
  }

  friend EmbeddingModel load_model(const std::filesystem::path& file);

 private:
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  Weighting weighting_ = Weighting::kIdf;
  std::vector<std::string> tokens_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<double> matrix_;  // row-major |V| x dim
};

inline std::vector<double> encode(const EmbeddingModel& m, std::span<const Token> text) { return m.encode(text); }
inline double score(const EmbeddingModel& m, std::span<const Token> a, std::span<const Token> b) {
  return m.score(a, b);
}

// ---------------------------------------------------------------------------
// Hinge loss on (query, positive, negative) triples

struct Triple {
  Tokens query;
  Tokens positive;
  Tokens negative;
};

// Each positive instance paired with every negative that shares its left
// text, in order of first appearance.
inline std::vector<Triple> make_triples(const TrainingSet& ts) {
  std::map<Tokens, std::size_t> group_of;
  std::vector<std::pair<std::vector<const Tokens*>, std::vector<const Tokens*>>> groups;
  std::vector<const Tokens*> group_left;
  for (const auto& inst : ts.instances) {
    const auto [it, inserted] = group_of.try_emplace(inst.left, groups.size());
    if (inserted) {
      groups.emplace_back();
      group_left.push_back(&it->first);
    }
    auto& g = groups[it->second];
    (inst.label > 0 ? g.first : g.second).push_back(&inst.right);
  }
  std::vector<Triple> out;
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (const Tokens* p : groups[i].first)
      for (const Tokens* n : groups[i].second) out.push_back({*group_left[i], *p, *n});
  return out;
}

namespace detail {

using Bag = std::vector<std::pair<std::uint32_t, double>>;

struct Encoded {
  std::vector<double> v;  // unnormalized mean
  std::vector<double> e;  // normalized
  double norm = 0;
};

inline Encoded encode_bag(const EmbeddingModel& m, const Bag& bag) {
  Encoded out;
  out.v = m.mean(bag);
  double n = 0;
  for (double x : out.v) n += x * x;
  out.norm = std::sqrt(n);
  out.e = out.v;
  if (out.norm > 0)
    for (double& x : out.e) x /= out.norm;
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

// Adds scale * d cos(a, b) / d v_a into `out` (length dim).
inline void add_cos_grad(const Encoded& a, const Encoded& b, double cos_ab, double scale, std::vector<double>& out) {
  if (a.norm == 0 || b.norm == 0) return;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += scale * (b.e[j] - cos_ab * a.e[j]) / a.norm;
}

struct TripleGrad {
  double loss = 0;
  // Gradient of the loss w.r.t. the unnormalized mean vectors.
  std::vector<double> dq, dp, dn;
};

inline TripleGrad triple_grad(const EmbeddingModel& m, const Bag& q, const Bag& p, const Bag& n, double margin) {
  const Encoded eq = encode_bag(m, q), ep = encode_bag(m, p), en = encode_bag(m, n);
  const double sp = eq.norm > 0 && ep.norm > 0 ? dot(eq.e, ep.e) : 0.0;
  const double sn = eq.norm > 0 && en.norm > 0 ? dot(eq.e, en.e) : 0.0;
  TripleGrad g;
  g.loss = std::max(0.0, margin - sp + sn);
  const std::size_t d = m.dim();
  g.dq.assign(d, 0.0);
  g.dp.assign(d, 0.0);
  g.dn.assign(d, 0.0);
  if (g.loss <= 0) return g;
  add_cos_grad(eq, ep, sp, -1.0, g.dq);
  add_cos_grad(eq, en, sn, +1.0, g.dq);
  add_cos_grad(ep, eq, sp, -1.0, g.dp);
  add_cos_grad(en, eq, sn, +1.0, g.dn);
  return g;
}

inline void scatter(const Bag& bag, const std::vector<double>& dv, double scale,
                    std::map<std::uint32_t, std::vector<double>>& rows, std::size_t dim) {
  for (const auto& [r, w] : bag) {
    auto& acc = rows[r];
    if (acc.empty()) acc.assign(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) acc[j] += scale * w * dv[j];
  }
}

}  // namespace detail

inline double triple_loss(const EmbeddingModel& m, const Triple& t, double margin) {
  return std::max(0.0, margin - m.score(t.query, t.positive) + m.score(t.query, t.negative));
}

struct TrainResult {
  std::vector<double> epoch_loss;
  std::size_t triples = 0;
};

// Mini-batch gradient descent on the mean hinge loss
// max(0, margin - cos(q, p+) + cos(q, p-)). Triples are shuffled per epoch
// by a stream keyed on (seed, epoch); gradients are summed in a fixed order.
inline TrainResult train(EmbeddingModel& model, const TrainingSet& ts, const TrainConfig& cfg) {
  cfg.validate();
  const auto triples = make_triples(ts);
  if (triples.empty()) throw ModelError("training set yields no (query, positive, negative) triples");

  std::map<Tokens, std::size_t> text_ids;
  std::vector<detail::Bag> bags;
  auto bag_id = [&](const Tokens& t) {
    const auto [it, inserted] = text_ids.try_emplace(t, bags.size());
    if (inserted) bags.push_back(model.bag(t));
    return it->second;
  };
  std::vector<std::array<std::size_t, 3>> idx;
  idx.reserve(triples.size());
  for (const auto& t : triples) idx.push_back({bag_id(t.query), bag_id(t.positive), bag_id(t.negative)});

  TrainResult result;
  result.triples = triples.size();
  const std::size_t d = model.dim();
  std::vector<std::size_t> order(idx.size());
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    KeyedRng rng(cfg.seed, 0x7472'6169'6eULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::map<std::uint32_t, std::vector<double>> grad;
      for (std::size_t b = start; b < end; ++b) {
        const auto& [q, p, n] = idx[order[b]];
        const auto g = detail::triple_grad(model, bags[q], bags[p], bags[n], cfg.margin);
        loss_sum += g.loss;
        if (g.loss <= 0) continue;
        detail::scatter(bags[q], g.dq, 1.0, grad, d);
        detail::scatter(bags[p], g.dp, 1.0, grad, d);
        detail::scatter(bags[n], g.dn, 1.0, grad, d);
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (const auto& [r, gr] : grad) {
        auto row = model.row(r);
        for (std::size_t j = 0; j < d; ++j) row[j] -= step * gr[j];
      }
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle for the trainer's gradient

struct GradientCheck {
  double max_relative_error = 0;
  std::size_t entries = 0;
};

// Analytic gradient of one triple's hinge loss w.r.t. every touched
// embedding entry, compared against central differences with step h.
// Returns nullopt (skip) when the loss is zero or sits on the hinge, or an
// encoding is the zero vector. `analytic_scale` multiplies the analytic
// gradient; values other than 1 exist to prove the check can fail.
inline std::optional<GradientCheck> gradient_check(const EmbeddingModel& model, const Triple& t, const TrainConfig& cfg,
                                                   double h = 1e-5, double analytic_scale = 1.0) {
  const auto q = model.bag(t.query), p = model.bag(t.positive), n = model.bag(t.negative);
  if (q.empty() || p.empty() || n.empty()) return std::nullopt;
  const auto g = detail::triple_grad(model, q, p, n, cfg.margin);
  if (!(g.loss > 1e-7)) return std::nullopt;
  const std::size_t d = model.dim();
  std::map<std::uint32_t, std::vector<double>> analytic;
  detail::scatter(q, g.dq, analytic_scale, analytic, d);
  detail::scatter(p, g.dp, analytic_scale, analytic, d);
  detail::scatter(n, g.dn, analytic_scale, analytic, d);

  EmbeddingModel probe = model;
  auto loss_raw = [&]() {
    const auto eq = detail::encode_bag(probe, q), ep = detail::encode_bag(probe, p), en = detail::encode_bag(probe, n);
    return cfg.margin - detail::dot(eq.e, ep.e) + detail::dot(eq.e, en.e);
  };
  GradientCheck out;
  for (const auto& [r, ga] : analytic) {
    auto row = probe.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double saved = row[j];
      row[j] = saved + h;
      const double up = loss_raw();
      row[j] = saved - h;
      const double down = loss_raw();
      row[j] = saved;
      // Perturbation crossing the hinge makes the difference meaningless.
      if (up <= 0 || down <= 0) return std::nullopt;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(ga[j] - numeric) / std::max(std::abs(numeric), 1e-6);
      out.max_relative_error = std::max(out.max_relative_error, rel);
      ++out.entries;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Untrained lexical baselines

enum class Baseline { kJaccard, kTfidfCosine, kBm25 };

inline std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::kJaccard: return "jaccard";
    case Baseline::kTfidfCosine: return "tfidf-cos";
    case Baseline::kBm25: return "bm25";
  }
  return "?";
}

inline Baseline parse_baseline(std::string_view s) {
  if (s == "jaccard") return Baseline::kJaccard;
  if (s == "tfidf-cos" || s == "tfidf") return Baseline::kTfidfCosine;
  if (s == "bm25") return Baseline::kBm25;
  throw std::invalid_argument("unknown baseline: " + std::string(s));
}

inline double jaccard(std::span<const Token> a, std::span<const Token> b) {
  std::set<std::string_view> sa, sb;
  for (const auto& t : a)
    if (t != kSeparator) sa.insert(t);
  for (const auto& t : b)
    if (t != kSeparator) sb.insert(t);
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;

// `query` scored against `doc`.
inline double bm25(std::span<const Token> query, std::span<const Token> doc, const TermStats& stats) {
  std::unordered_map<std::string_view, double> tf;
  double len = 0;
  for (const auto& t : doc) {
    if (t == kSeparator) continue;
    tf[t] += 1;
    len += 1;
  }
  const double avg = std::max(stats.average_length(), 1e-9);
  std::set<std::string_view> terms;
  for (const auto& t : query)
    if (t != kSeparator) terms.insert(t);
  double s = 0;
  for (const auto& t : terms) {
    const auto it = tf.find(t);
    if (it == tf.end()) continue;
    const auto idx = stats.index(std::string(t));
    if (!idx) continue;
    const double f = it->second;
    s += stats.bm25_idf(*idx) * f * (kBm25K1 + 1) / (f + kBm25K1 * (1 - kBm25B + kBm25B * len / avg));
  }
  return s;
}

inline double baseline_score(Baseline kind, std::span<const Token> a, std::span<const Token> b, const TermStats& stats) {
  switch (kind) {
    case Baseline::kJaccard: return jaccard(a, b);
    case Baseline::kTfidfCosine: return cosine(stats.tfidf(a), stats.tfidf(b));
    case Baseline::kBm25: return bm25(a, b, stats);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Model file: text header, vocabulary lines, then a little-endian block of
// |V| * dim doubles in row-major order.

inline void save_model(const EmbeddingModel& m, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  out << "qdup-embedding-model 1\n";
  out << "dim " << m.dim() << '\n';
  out << "seed " << m.seed() << '\n';
  out << "weighting " << to_string(m.weighting()) << '\n';
  out << "vocab_size " << m.vocabulary_size() << '\n';
  for (std::size_t i = 0; i < m.vocabulary_size(); ++i) out << m.tokens()[i] << '\t' << format_double(m.idf()[i]) << '\n';
  const auto mat = m.matrix();
  out << "matrix_bytes " << mat.size() * sizeof(double) << '\n';
  for (double x : mat) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    char bytes[8];
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
    out.write(bytes, 8);
  }
  if (!out) throw ModelError("failed writing " + file.string());
}

inline EmbeddingModel load_model(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ModelError("cannot open " + file.string());
  std::string line;
  auto field = [&](std::string_view name) -> std::string {
    if (!std::getline(in, line)) throw ModelError("model file: missing field '" + std::string(name) + "'");
    const std::string prefix = std::string(name) + " ";
    if (line.rfind(prefix, 0) != 0) throw ModelError("model file: expected field '" + std::string(name) + "'");
    return line.substr(prefix.size());
  };
  if (!std::getline(in, line) || line != "qdup-embedding-model 1") throw ModelError("not an embedding model file");
  EmbeddingModel m;
  m.dim_ = std::stoul(field("dim"));
  m.seed_ = std::stoull(field("seed"));
  m.weighting_ = parse_weighting(field("weighting"));
  const std::size_t n = std::stoul(field("vocab_size"));
  if (m.dim_ < 2) throw ModelError("model file: dim must be at least 2");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ModelError("model file: truncated vocabulary");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ModelError("model file: bad vocabulary row");
    m.tokens_.push_back(line.substr(0, tab));
    m.idf_.push_back(parse_double(std::string_view(line).substr(tab + 1)));
    m.index_.emplace(m.tokens_.back(), static_cast<std::uint32_t>(i));
  }
  const std::size_t bytes = std::stoull(field("matrix_bytes"));
  if (bytes != n * m.dim_ * sizeof(double)) throw ModelError("model file: matrix size mismatch");
  m.matrix_.resize(n * m.dim_);
  for (double& x : m.matrix_) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw ModelError("model file: truncated matrix");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    x = std::bit_cast<double>(bits);
    if (!std::isfinite(x)) throw ModelError("model file: non-finite embedding entry");
  }
  return m;
}

}  // namespace qdup
