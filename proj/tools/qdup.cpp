// qdup: command-line front end for the duplicate-question pipeline.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qdup/qdup.hpp"

namespace fs = std::filesystem;
using namespace qdup;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = not given
  std::string log_level = "info";
};

// Writes the excluded ids into the header so `build` can keep them out of training.
void write_tasks(const EvalSplit& split, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  ordered_json h;
  h["format"] = "qdup-tasks";
  h["excluded"] = split.excluded;
  out << dump_line(h) << '\n';
  for (const auto& t : split.tasks) out << dump_line(to_json(t)) << '\n';
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

std::set<PostId> excluded_from_tasks(const fs::path& file) {
  std::set<PostId> out;
  for_each_json_line(file, [&](const ordered_json& j) {
    if (j.contains("excluded")) out = j.at("excluded").get<std::set<PostId>>();
  });
  return out;
}

ProcessedSet processed_for(const std::optional<fs::path>& processed_dir, const Corpus& corpus) {
  if (processed_dir) return load_processed(*processed_dir);
  spdlog::info("no --processed given; preprocessing {} questions", corpus.questions().size());
  return preprocess(corpus, FilterMode::kDedup).processed;
}

// Pairs file: one "left<TAB>right" line per pair, raw text.
std::vector<std::pair<Tokens, Tokens>> load_pairs(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::vector<std::pair<Tokens, Tokens>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(file.string() + ":" + std::to_string(n) + ": expected left<TAB>right");
    out.emplace_back(tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1)));
  }
  return out;
}

TermStats stats_from_tasks(const std::vector<RankingTask>& tasks) {
  std::set<Tokens> seen;
  TermStats st;
  auto add = [&](const Tokens& t) {
    if (seen.insert(t).second) st.add_document(t);
  };
  for (const auto& t : tasks) {
    add(t.query);
    for (const auto& c : t.candidates) add(c.text);
  }
  return st;
}

void print_generation(const GenerationReport& r) {
  std::cout << "questions\t" << r.questions << "\nbleu\t" << format_double(r.corpus_bleu) << "\nempty_rate\t"
            << format_double(r.empty_rate) << "\nexact_match_rate\t" << format_double(r.exact_match_rate)
            << "\nmean_length\t" << format_double(r.mean_length) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qdup: duplicate question detection with weak supervision"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--workers", g.workers, "Concurrent experiment cells");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic forum dump");
  SyntheticSpec sspec;
  fs::path synth_out;
  bool synth_corpus = false;
  synth->add_option("--questions", sspec.questions, "Number of questions");
  synth->add_option("--duplicate-pairs", sspec.duplicate_pairs, "Planted duplicate pairs");
  synth->add_option("--site", sspec.site, "Site tag");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_flag("--corpus", synth_corpus, "Write a corpus directory instead of Posts.xml/PostLinks.xml");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a data dump into a corpus directory");
  fs::path posts_file, ingest_out;
  std::optional<fs::path> links_file;
  std::string site;
  ingest->add_option("--posts", posts_file, "Posts.xml")->required()->check(CLI::ExistingFile);
  ingest->add_option("--postlinks", links_file, "PostLinks.xml")->check(CLI::ExistingFile);
  ingest->add_option("--site", site, "Site tag")->required();
  ingest->add_option("--out", ingest_out, "Corpus directory")->required();

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Filter questions and select paragraphs");
  fs::path prep_corpus, prep_out;
  std::string prep_mode = "dedup";
  prep->add_option("--corpus", prep_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--mode", prep_mode, "dedup or qg")->check(CLI::IsMember({"dedup", "qg"}));
  prep->add_option("--out", prep_out, "Output directory")->required();

  // tasks
  auto* tasks_cmd = app.add_subcommand("tasks", "Hold out evaluation tasks from duplicate links");
  fs::path tasks_corpus, tasks_out;
  std::optional<fs::path> tasks_processed;
  EvalSplitOptions split_opt;
  tasks_cmd->add_option("--corpus", tasks_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  tasks_cmd->add_option("--processed", tasks_processed, "Preprocessed directory")->check(CLI::ExistingDirectory);
  tasks_cmd->add_option("--queries", split_opt.queries, "Number of queries");
  tasks_cmd->add_option("--distractors", split_opt.distractors, "Distractor pool size");
  tasks_cmd->add_option("--candidates", split_opt.candidates, "Candidates per task, 0 = whole pool");
  tasks_cmd->add_option("--out", tasks_out, "Task file")->required();

  // qg
  auto* qg = app.add_subcommand("qg", "Title generation");
  qg->require_subcommand(1);
  auto* qg_fit = qg->add_subcommand("fit", "Fit the extractive generator");
  fs::path qg_source, qg_model_out;
  FitOptions fit_opt;
  qg_fit->add_option("--source", qg_source, "Preprocessed directory (qg mode)")->required()->check(CLI::ExistingDirectory);
  qg_fit->add_option("--max-fit", fit_opt.max_fit_questions, "Questions used for fitting");
  qg_fit->add_option("--out", qg_model_out, "Model file")->required();
  auto* qg_apply = qg->add_subcommand("apply", "Generate titles for a processed set");
  fs::path qg_model, qg_target, qg_apply_out;
  qg_apply->add_option("--model", qg_model, "Model file")->required()->check(CLI::ExistingFile);
  qg_apply->add_option("--target", qg_target, "Preprocessed directory")->required()->check(CLI::ExistingDirectory);
  qg_apply->add_option("--out", qg_apply_out, "Generated titles file")->required();
  auto* qg_eval = qg->add_subcommand("eval", "BLEU and leakage report on held-out questions");
  fs::path qg_heldout;
  qg_eval->add_option("--model", qg_model, "Model file")->required()->check(CLI::ExistingFile);
  qg_eval->add_option("--heldout", qg_heldout, "Preprocessed directory")->required()->check(CLI::ExistingDirectory);

  // build
  auto* build = app.add_subcommand("build", "Build a training set");
  fs::path build_corpus, build_out;
  std::optional<fs::path> build_processed, build_generated, build_exclude;
  std::string build_strategy = "wstb", build_scale = "all";
  std::optional<std::size_t> build_base;
  std::uint32_t neg_ratio = 20;
  build->add_option("--corpus", build_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  build->add_option("--processed", build_processed, "Preprocessed directory")->check(CLI::ExistingDirectory);
  build->add_option("--strategy", build_strategy, "sup, wsqa, wstb, dqg or combined");
  build->add_option("--scale", build_scale, "Multiplier such as 1x, 4x, or all");
  build->add_option("--base-size", build_base, "Size of 1x (default: usable duplicate links)");
  build->add_option("--neg-ratio", neg_ratio, "Negatives per positive");
  build->add_option("--generated", build_generated, "Generated titles (dqg, combined)")->check(CLI::ExistingFile);
  build->add_option("--exclude-tasks", build_exclude, "Task file whose questions stay out of training")->check(CLI::ExistingFile);
  build->add_option("--out", build_out, "Training-set file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the embedding scorer");
  fs::path train_set, train_out;
  TrainConfig cfg;
  std::size_t dim = 100;
  std::string weighting = "idf";
  train_cmd->add_option("--trainset", train_set, "Training-set file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dim", dim, "Embedding size");
  train_cmd->add_option("--margin", cfg.margin, "Hinge margin");
  train_cmd->add_option("--lr", cfg.learning_rate, "Learning rate");
  train_cmd->add_option("--epochs", cfg.epochs, "Epochs");
  train_cmd->add_option("--batch-size", cfg.batch_size, "Mini-batch size");
  train_cmd->add_option("--weighting", weighting, "idf or uniform")->check(CLI::IsMember({"idf", "uniform"}));
  train_cmd->add_option("--out", train_out, "Model file")->required();

  // score
  auto* score_cmd = app.add_subcommand("score", "Score text pairs");
  fs::path score_model, score_pairs;
  score_cmd->add_option("--model", score_model, "Model file")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--pairs", score_pairs, "left<TAB>right lines")->required()->check(CLI::ExistingFile);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Rank evaluation tasks");
  std::string eval_model, eval_metrics = "p@1,p@5,map,mrr,auc@0.05";
  fs::path eval_tasks, eval_out;
  bool per_query_auc = false;
  eval_cmd->add_option("--model", eval_model, "Model file or baseline:NAME")->required();
  eval_cmd->add_option("--tasks", eval_tasks, "Task file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--metrics", eval_metrics, "Comma-separated metrics");
  eval_cmd->add_flag("--per-query-auc", per_query_auc, "Average per-task AUC instead of pooling");
  eval_cmd->add_option("--out", eval_out, "Report file");

  // overlap
  auto* overlap_cmd = app.add_subcommand("overlap", "Lexical overlap of positive pairs");
  fs::path ov_set, ov_corpus, ov_out;
  overlap_cmd->add_option("--trainset", ov_set, "Training-set file")->required()->check(CLI::ExistingFile);
  overlap_cmd->add_option("--corpus", ov_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  overlap_cmd->add_option("--out", ov_out, "Report file")->required();

  // experiment
  auto* exp = app.add_subcommand("experiment", "Manifest-driven experiment");
  exp->require_subcommand(1);
  auto* exp_run = exp->add_subcommand("run", "Run every cell of a manifest");
  fs::path manifest_file;
  std::optional<fs::path> exp_out;
  exp_run->add_option("manifest", manifest_file, "Manifest file")->required()->check(CLI::ExistingFile);
  exp_run->add_option("--out", exp_out, "Output directory (overrides the manifest)");

  CLI11_PARSE(app, argc, argv);

  auto logger = spdlog::stderr_color_mt("qdup");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    if (*synth) {
      sspec.seed = g.seed;
      const auto syn = make_synthetic_corpus(sspec);
      if (synth_corpus) save_corpus(syn.corpus, synth_out);
      else write_dump_xml(syn.corpus, synth_out);
      spdlog::info("wrote {} questions, {} duplicate links to {}", syn.corpus.questions().size(),
                   syn.corpus.duplicates().size(), synth_out.string());
    } else if (*ingest) {
      const auto r = ingest_dump(posts_file, links_file, site);
      ordered_json extra;
      extra["posts"] = {{"rows", r.posts.total_rows},       {"questions", r.posts.questions}, {"answers", r.posts.answers},
                        {"ignored", r.posts.ignored},       {"skipped", r.posts.skipped}};
      extra["postlinks"] = {{"rows", r.links.total_rows},         {"duplicates", r.links.duplicates},
                            {"other_links", r.links.other_links}, {"self_links", r.links.self_links},
                            {"skipped", r.links.skipped}};
      save_corpus(r.corpus, ingest_out, extra);
      for (const auto& e : r.posts.row_errors) spdlog::warn("{}", e);
      const auto& s = r.corpus.seal_report();
      std::cout << "questions\t" << r.corpus.questions().size() << "\nanswers\t" << r.corpus.answers().size()
                << "\nduplicate_links\t" << r.corpus.duplicates().size() << "\nskipped_rows\t" << r.posts.skipped
                << "\ndangling_links\t" << s.dangling_links << "\nrepeated_links\t" << s.repeated_links
                << "\norphan_answers\t" << s.orphan_answers << '\n';
    } else if (*prep) {
      const auto corpus = load_corpus(prep_corpus);
      const auto r = preprocess(corpus, parse_filter_mode(prep_mode));
      save_processed(r, prep_out);
      std::cout << "total\t" << r.report.total << "\nkept\t" << r.report.kept << "\ndiscard_rate\t"
                << format_double(r.report.discard_rate()) << '\n';
      for (const auto& [reason, n] : r.report.discarded) std::cout << "discarded:" << reason << '\t' << n << '\n';
    } else if (*tasks_cmd) {
      const auto corpus = load_corpus(tasks_corpus);
      const auto processed = processed_for(tasks_processed, corpus);
      split_opt.seed = g.seed;
      const auto split = make_eval_split(corpus, processed, split_opt);
      write_tasks(split, tasks_out);
      spdlog::info("{} tasks, {} held-out questions", split.tasks.size(), split.excluded.size());
    } else if (*qg_fit) {
      fit_opt.seed = g.seed;
      const auto source = load_processed(qg_source);
      const auto gen = fit_generator(source, fit_opt);
      save_generator(gen, qg_model_out);
      spdlog::info("fitted on {} questions", std::min(source.size(), fit_opt.max_fit_questions));
    } else if (*qg_apply) {
      const auto gen = load_generator(qg_model);
      const auto generated = generate_all(gen, load_processed(qg_target));
      save_generated(generated, qg_apply_out);
      std::size_t empty = 0;
      for (const auto& [id, t] : generated) empty += t.empty();
      spdlog::info("{} titles generated, {} empty", generated.size(), empty);
    } else if (*qg_eval) {
      const auto gen = load_generator(qg_model);
      const auto held = load_processed(qg_heldout);
      const auto rep = leakage_check(gen, pointers(held));
      print_generation(rep.generation);
      std::cout << "leakage\t" << (rep.passed ? "pass" : "fail") << '\n';
      for (const auto& f : rep.failures) std::cout << "leakage_failure\t" << f << '\n';
      if (!rep.passed) return 3;
    } else if (*build) {
      const auto corpus = load_corpus(build_corpus);
      const auto processed = processed_for(build_processed, corpus);
      BuildOptions bo;
      bo.negatives_per_positive = neg_ratio;
      bo.seed = g.seed;
      bo.scale = Scale::parse(build_scale);
      if (build_exclude) bo.excluded = excluded_from_tasks(*build_exclude);
      if (build_base) {
        bo.base_size = *build_base;
      } else {
        std::size_t n = 0;
        for (const auto& l : corpus.duplicates())
          n += processed.count(l.source_id) && processed.count(l.target_id) && !bo.excluded.count(l.source_id) &&
               !bo.excluded.count(l.target_id);
        if (n > 0) bo.base_size = n;
      }
      const Strategy st = parse_strategy(build_strategy);
      TrainingSet ts;
      switch (st) {
        case Strategy::kSupervised: ts = build_supervised(corpus, processed, bo); break;
        case Strategy::kWsQa: ts = build_wsqa(corpus, processed, bo); break;
        case Strategy::kWsTb: ts = build_wstb(corpus, processed, bo); break;
        case Strategy::kDqg:
        case Strategy::kCombined: {
          if (!build_generated) throw std::runtime_error("--generated is required for " + build_strategy);
          ts = build_dqg(corpus, processed, load_generated(*build_generated), bo);
          if (st == Strategy::kCombined) ts = combine(ts, build_wstb(corpus, processed, bo));
          break;
        }
      }
      save_trainset(ts, build_out);
      std::cout << "positives\t" << ts.positives << "\nnegatives\t" << ts.negatives << "\npool\t" << ts.pool_size
                << "\nskipped\t" << ts.skipped << '\n';
    } else if (*train_cmd) {
      const auto ts = load_trainset(train_set);
      cfg.seed = g.seed;
      cfg.weighting = parse_weighting(weighting);
      auto model = EmbeddingModel::create(ts, dim, g.seed, cfg.weighting);
      const auto r = train(model, ts, cfg);
      save_model(model, train_out);
      for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) spdlog::info("epoch {} loss {}", i + 1, format_double(r.epoch_loss[i]));
      std::cout << "triples\t" << r.triples << "\nfinal_loss\t"
                << (r.epoch_loss.empty() ? std::string("-") : format_double(r.epoch_loss.back())) << '\n';
    } else if (*score_cmd) {
      const auto model = load_model(score_model);
      for (const auto& [a, b] : load_pairs(score_pairs)) std::cout << format_double(model.score(a, b)) << '\n';
    } else if (*eval_cmd) {
      const auto tasks = load_tasks(eval_tasks);
      EvalOptions eo;
      eo.metrics = MetricSelection::parse(eval_metrics);
      eo.per_query_auc = per_query_auc;
      EvalReport rep;
      if (eval_model.rfind("baseline:", 0) == 0) {
        const Baseline kind = parse_baseline(std::string_view(eval_model).substr(9));
        const auto stats = stats_from_tasks(tasks);
        rep = evaluate([&](auto a, auto b) { return baseline_score(kind, a, b, stats); }, tasks, eo);
      } else {
        const auto model = load_model(eval_model);
        rep = evaluate([&](auto a, auto b) { return model.score(a, b); }, tasks, eo);
      }
      std::cout << render_table(rep);
      if (!eval_out.empty()) write_report(rep, eval_out, {"model " + eval_model, "tasks " + eval_tasks.string()});
    } else if (*overlap_cmd) {
      const auto ts = load_trainset(ov_set);
      const auto corpus = load_corpus(ov_corpus);
      const auto rep = analyze(ts, fit_overlap_stats(corpus), &corpus);
      std::cout << render_table(rep);
      write_overlap(rep, ov_out, {"trainset " + ov_set.string(), "corpus " + ov_corpus.string()});
    } else if (*exp_run) {
      auto m = load_manifest(manifest_file);
      if (exp_out) m.out = *exp_out;
      if (g.workers > 0) m.workers = g.workers;
      RunOptions ro;
      ro.progress = [](const std::string& s) { spdlog::info("{}", s); };
      const auto r = run_experiment(m, ro);
      std::cout << r.summary;
      if (!r.all_ok()) {
        spdlog::warn("some cells did not succeed; see {}", (m.out / "summary.tsv").string());
        return 2;
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
