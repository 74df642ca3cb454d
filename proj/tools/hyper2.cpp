// hyper2 command-line interface.
//
// Subcommands:
//   prepare            convert raw fact files into a canonical dataset dir
//   train              train a model on a prepared dataset
//   eval               filtered-ranking evaluation of a checkpoint
//   export-embeddings  dump per-entity coordinates, origin distance, degree
//   bench              evaluation-time accounting
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_set>

#include <CLI11.hpp>
#include <json.hpp>

#include "hyper2/checkpoint.hpp"
#include "hyper2/config.hpp"
#include "hyper2/eval.hpp"
#include "hyper2/graph.hpp"
#include "hyper2/model.hpp"
#include "hyper2/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PrepareArgs {
  std::string train_path, valid_path, test_path;
  std::string format = "tsv";  // tsv | jsonl
  std::string out_dir;
  std::string literal_list;
  bool filter_literals = false;
  bool keep_literals = false;
};

hyper2::LiteralPredicate make_literal_predicate(
    const std::string& literal_list_path,
    std::shared_ptr<std::unordered_set<std::string>> record_literals) {
  auto explicit_list = std::make_shared<std::unordered_set<std::string>>();
  const bool have_list = !literal_list_path.empty();
  if (have_list) {
    std::ifstream in(literal_list_path);
    if (!in) throw hyper2::data_error("cannot open literal list: " + literal_list_path);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      explicit_list->insert(line);
    }
  }
  return [have_list, explicit_list, record_literals](const std::string& v) {
    if (record_literals && record_literals->count(v)) return true;
    if (have_list) return explicit_list->count(v) > 0;  // list overrides the pattern
    return hyper2::is_default_literal(v);
  };
}

json split_counts_json(const std::vector<hyper2::RawFact>& facts) {
  const hyper2::SplitCounts c = hyper2::count_split(facts);
  return {{"binary", c.binary},
          {"nary", c.nary},
          {"overall", c.overall()},
          {"nary_share", c.nary_share()}};
}

int cmd_prepare(const PrepareArgs& args) {
  hyper2::RawDataset raw;
  auto record_literals = std::make_shared<std::unordered_set<std::string>>();

  auto load_split = [&](const std::string& path) -> std::vector<hyper2::RawFact> {
    if (path.empty()) return {};
    if (args.format == "tsv") return hyper2::load_fact_file(path);
    if (args.format == "jsonl") {
      std::vector<hyper2::RawFact> facts;
      for (auto& rec : hyper2::load_role_value_file(path)) {
        for (auto& lit : rec.literals) record_literals->insert(lit);
        facts.push_back(std::move(rec.fact));
      }
      return facts;
    }
    throw hyper2::config_error("unknown format: " + args.format + " (expected tsv|jsonl)");
  };

  raw.train = load_split(args.train_path);
  raw.valid = load_split(args.valid_path);
  raw.test = load_split(args.test_path);
  raw.has_valid = !args.valid_path.empty();
  if (raw.train.empty()) throw hyper2::data_error("prepare: empty or missing training split");

  // literal filtering defaults on for role-value input, off for token lines
  bool filter = args.format == "jsonl";
  if (args.filter_literals) filter = true;
  if (args.keep_literals) filter = false;

  hyper2::FilterStats stats;
  if (filter) {
    auto pred = make_literal_predicate(args.literal_list, record_literals);
    raw = hyper2::filter_literals(raw, pred, &stats);
  }

  hyper2::Vocabulary vocab = hyper2::build_vocab(raw);

  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);
  hyper2::write_fact_file(out / "train.txt", raw.train);
  if (raw.has_valid) hyper2::write_fact_file(out / "valid.txt", raw.valid);
  if (!args.test_path.empty()) hyper2::write_fact_file(out / "test.txt", raw.test);
  {
    std::ofstream ents(out / "entities.txt");
    for (const auto& e : vocab.entities) ents << e << '\n';
    std::ofstream rels(out / "relations.txt");
    for (const auto& r : vocab.relations) rels << r << '\n';
  }

  json report;
  report["splits"]["train"] = split_counts_json(raw.train);
  if (raw.has_valid) report["splits"]["valid"] = split_counts_json(raw.valid);
  if (!args.test_path.empty()) report["splits"]["test"] = split_counts_json(raw.test);
  report["vocab"] = {{"entities", vocab.num_entities()}, {"relations", vocab.num_relations()}};
  report["filter"] = {{"enabled", filter},
                      {"facts_in", stats.facts_in},
                      {"facts_out", stats.facts_out},
                      {"dropped_primary_literal", stats.dropped_primary_literal},
                      {"affiliated_values_removed", stats.affiliated_values_removed}};
  std::ofstream rep(out / "report.json");
  rep << report.dump(2) << '\n';

  std::cout << report.dump(2) << '\n';
  return 0;
}

struct TrainArgs {
  std::string config_file;
  std::string resume_path;
  std::vector<std::string> overrides;  // key=value pairs collected from flags
};

hyper2::RunConfig resolve_config(const std::string& config_file,
                                 const std::vector<std::string>& overrides) {
  hyper2::RunConfig cfg;
  if (!config_file.empty()) hyper2::load_config_file(cfg, config_file);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw hyper2::config_error("expected key=value: " + kv);
    hyper2::set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int cmd_train(const TrainArgs& args) {
  hyper2::RunConfig cfg = resolve_config(args.config_file, args.overrides);
  if (cfg.data_dir.empty()) throw hyper2::config_error("train: data_dir is required");
  cfg.train.check();

  hyper2::Dataset data = hyper2::load_dataset_dir(cfg.data_dir);
  hyper2::add_reciprocals(data);

  hyper2::Rng rng(cfg.train.seed);
  hyper2::ModelParams params;
  int32_t first_epoch = 1;
  int64_t epochs_done = 0;

  if (!args.resume_path.empty()) {
    hyper2::Checkpoint ckpt = hyper2::load_checkpoint(args.resume_path);
    hyper2::require_vocab_match(data.vocab, ckpt.vocab);
    params = std::move(ckpt.params);
    cfg.score = ckpt.score_cfg;
    rng.restore(ckpt.rng_state);
    epochs_done = ckpt.epochs_done;
    first_epoch = static_cast<int32_t>(epochs_done) + 1;
    std::cout << "resuming at epoch " << first_epoch << " from " << args.resume_path << '\n';
  } else {
    params = hyper2::init_params(rng, cfg.dim, data.vocab.num_entities(),
                                 data.vocab.num_relations(), hyper2::Curvature(cfg.curvature));
  }

  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  std::ofstream log(out / "train.log",
                    first_epoch > 1 ? std::ios::app : std::ios::trunc);
  if (!log) throw hyper2::data_error("cannot open training log in " + cfg.out_dir);

  hyper2::FitResult fit_result =
      hyper2::fit(data, params, cfg.train, cfg.score, rng, &log, first_epoch);

  hyper2::Checkpoint ckpt;
  ckpt.params = fit_result.best_params ? std::move(*fit_result.best_params) : std::move(params);
  ckpt.vocab = data.vocab;
  ckpt.train_cfg = cfg.train;
  ckpt.score_cfg = cfg.score;
  ckpt.rng_state = rng.state();
  if (fit_result.best_val_mrr) ckpt.best_val_mrr = *fit_result.best_val_mrr;
  ckpt.epochs_done = fit_result.epochs_run;
  hyper2::save_checkpoint(out / "checkpoint.bin", ckpt);

  std::cout << "trained " << (fit_result.epochs_run - first_epoch + 1) << " epoch(s)";
  if (fit_result.stopped_early) std::cout << " (early stop)";
  if (fit_result.best_val_mrr) std::cout << ", best validation MRR " << *fit_result.best_val_mrr;
  std::cout << "\ncheckpoint: " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint_path, data_dir, out_dir = "out";
  std::string tasks = "head,tail,relation,affiliated";
  std::string tie = "strict";
  bool bench = false;
};

int cmd_eval(const EvalArgs& args) {
  hyper2::Checkpoint ckpt = hyper2::load_checkpoint(args.checkpoint_path);
  hyper2::Dataset data = hyper2::load_dataset_dir(args.data_dir);
  hyper2::require_vocab_match(data.vocab, ckpt.vocab);
  if (data.test.empty()) throw hyper2::data_error("eval: dataset has no test split");

  const std::vector<hyper2::Task> tasks = hyper2::parse_task_list(args.tasks);
  const hyper2::TiePolicy tie = hyper2::tie_policy_from_string(args.tie);

  hyper2::MetricReport report = hyper2::evaluate(data.test, ckpt.vocab, data.known,
                                                 ckpt.params, ckpt.score_cfg, tasks, tie);

  json j = report.to_json();
  j["meta"] = {{"checkpoint", args.checkpoint_path},
               {"data_dir", args.data_dir},
               {"tie_policy", args.tie},
               {"tasks", args.tasks}};
  if (args.bench) {
    hyper2::BenchReport b = hyper2::bench_eval_time(data.test, ckpt.vocab, data.known,
                                                    ckpt.params, ckpt.score_cfg);
    j["bench"] = {{"per_fact_seconds", b.per_fact_seconds},
                  {"predicted_seconds", b.predicted_seconds},
                  {"measured_seconds", b.measured_seconds},
                  {"ratio", b.ratio},
                  {"arity_sum", b.arity_sum},
                  {"n_entities", b.n_entities}};
  }

  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);
  {
    std::ofstream jf(out / "report.json");
    jf << j.dump(2) << '\n';
  }
  {
    std::ofstream tf(out / "report.txt");
    tf << report.to_table();
  }
  std::cout << report.to_table();
  if (args.bench)
    std::cout << "bench: t=" << j["bench"]["per_fact_seconds"].get<double>()
              << "s/fact, predicted=" << j["bench"]["predicted_seconds"].get<double>()
              << "s, measured=" << j["bench"]["measured_seconds"].get<double>()
              << "s, ratio=" << j["bench"]["ratio"].get<double>() << '\n';
  return 0;
}

struct ExportArgs {
  std::string checkpoint_path, data_dir, out_path = "embeddings.tsv";
};

int cmd_export(const ExportArgs& args) {
  hyper2::Checkpoint ckpt = hyper2::load_checkpoint(args.checkpoint_path);
  hyper2::Dataset data = hyper2::load_dataset_dir(args.data_dir);
  hyper2::require_vocab_match(data.vocab, ckpt.vocab);

  // degree over the training graph as stored on disk (no reciprocal mirrors)
  std::vector<int64_t> degree(ckpt.vocab.num_entities(), 0);
  for (const hyper2::Fact& f : data.train) {
    ++degree[f.head];
    ++degree[f.tail];
    for (int32_t a : f.affiliated) ++degree[a];
  }

  std::ofstream out(args.out_path);
  if (!out) throw hyper2::data_error("cannot write " + args.out_path);
  out << "id\tname\tdegree\tdist_origin";
  for (int32_t i = 0; i < ckpt.params.dim; ++i) out << "\tc" << i;
  out << '\n';
  out.precision(17);
  const hyper2::BallPoint o = hyper2::origin(ckpt.params.dim);
  for (int32_t e = 0; e < ckpt.vocab.num_entities(); ++e) {
    const hyper2::BallPoint pt = ckpt.params.entity_point(e);
    out << e << '\t' << ckpt.vocab.entities[e] << '\t' << degree[e] << '\t'
        << hyper2::distance(o, pt, ckpt.params.curv);
    for (double c : pt.coords) out << '\t' << c;
    out << '\n';
  }
  std::cout << "wrote " << ckpt.vocab.num_entities() << " rows to " << args.out_path << '\n';
  return 0;
}

struct BenchArgs {
  std::string checkpoint_path, data_dir, out_path;
};

int cmd_bench(const BenchArgs& args) {
  hyper2::Checkpoint ckpt = hyper2::load_checkpoint(args.checkpoint_path);
  hyper2::Dataset data = hyper2::load_dataset_dir(args.data_dir);
  hyper2::require_vocab_match(data.vocab, ckpt.vocab);
  if (data.test.empty()) throw hyper2::data_error("bench: dataset has no test split");

  hyper2::BenchReport b = hyper2::bench_eval_time(data.test, ckpt.vocab, data.known,
                                                  ckpt.params, ckpt.score_cfg);
  json j = {{"per_fact_seconds", b.per_fact_seconds},
            {"predicted_seconds", b.predicted_seconds},
            {"measured_seconds", b.measured_seconds},
            {"ratio", b.ratio},
            {"arity_sum", b.arity_sum},
            {"n_entities", b.n_entities}};
  if (!args.out_path.empty()) {
    std::ofstream out(args.out_path);
    out << j.dump(2) << '\n';
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperbolic embeddings for hyper-relational knowledge graphs"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "build a canonical dataset directory");
  prepare->add_option("--train", prep.train_path, "training fact file")->required();
  prepare->add_option("--valid", prep.valid_path, "validation fact file");
  prepare->add_option("--test", prep.test_path, "test fact file");
  prepare->add_option("--format", prep.format, "input format: tsv|jsonl (default tsv)");
  prepare->add_option("--out", prep.out_dir, "output dataset directory")->required();
  prepare->add_option("--literal-list", prep.literal_list,
                      "file of values to treat as literals (overrides the built-in pattern)");
  prepare->add_flag("--filter-literals", prep.filter_literals,
                    "force literal filtering on (default for jsonl)");
  prepare->add_flag("--keep-literals", prep.keep_literals, "force literal filtering off");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", train_args.config_file, "key = value config file");
  train->add_option("--resume", train_args.resume_path, "checkpoint to resume from");
  auto add_override = [&](const char* flag, const char* key, const char* help) {
    train->add_option_function<std::string>(
        flag,
        [&train_args, key](const std::string& v) {
          train_args.overrides.push_back(std::string(key) + "=" + v);
        },
        help);
  };
  add_override("--data", "data_dir", "prepared dataset directory");
  add_override("--out", "out_dir", "output directory (checkpoint + log)");
  add_override("--preset", "preset", "jf17k|wikipeople hyperparameter preset");
  add_override("--dim", "dim", "embedding dimension (default 50)");
  add_override("--curvature", "curvature", "ball curvature K (default 1)");
  add_override("--eta", "eta", "learning rate (default 30)");
  add_override("--beta", "beta", "batch size (default 128)");
  add_override("--nneg", "nneg", "negatives per positive (default 100)");
  add_override("--epochs", "nepoch", "max epochs (default 800)");
  add_override("--patience", "patience", "non-improving validations tolerated (default 3)");
  add_override("--eval-every", "eval_every", "epochs between validations (default 10)");
  add_override("--seed", "seed", "RNG seed (default 1)");
  add_override("--workers", "workers", "gradient workers (default 1; >1 is not bit-reproducible)");
  add_override("--neg-mode", "neg_mode", "corruption positions: all|entity_only");
  add_override("--scoring-variant", "scoring_variant",
               "full|no_diag|no_offset|diag_both|swapped");
  add_override("--agg-combine", "agg_combine", "addition|concatenation");
  add_override("--agg-reduce", "agg_reduce", "min|max|mean");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "filtered-ranking evaluation");
  eval->add_option("--checkpoint", eval_args.checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", eval_args.data_dir, "prepared dataset directory")->required();
  eval->add_option("--out", eval_args.out_dir, "output directory (default out)");
  eval->add_option("--tasks", eval_args.tasks, "comma list of head,tail,relation,affiliated");
  eval->add_option("--tie", eval_args.tie, "tie policy: strict|mean (default strict)");
  eval->add_flag("--bench", eval_args.bench, "include evaluation-time accounting");

  ExportArgs export_args;
  auto* exp = app.add_subcommand("export-embeddings",
                                 "dump entity coordinates, origin distance and degree");
  exp->add_option("--checkpoint", export_args.checkpoint_path, "checkpoint file")->required();
  exp->add_option("--data", export_args.data_dir, "prepared dataset directory")->required();
  exp->add_option("--out", export_args.out_path, "output TSV path (default embeddings.tsv)");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "evaluation-time accounting");
  bench->add_option("--checkpoint", bench_args.checkpoint_path, "checkpoint file")->required();
  bench->add_option("--data", bench_args.data_dir, "prepared dataset directory")->required();
  bench->add_option("--out", bench_args.out_path, "optional JSON output path");

  try {
    app.parse(argc, argv);
    if (prepare->parsed()) return cmd_prepare(prep);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (exp->parsed()) return cmd_export(export_args);
    if (bench->parsed()) return cmd_bench(bench_args);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const hyper2::config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const hyper2::data_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const hyper2::numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
