#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hyper2/ball.hpp"
#include "hyper2/checkpoint.hpp"
#include "hyper2/config.hpp"
#include "hyper2/graph.hpp"
#include "test_util.hpp"

using namespace hyper2;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HYPER2_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hyper2_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_synth_dataset(const fs::path& dir, int n_entities, int n_relations, int n_facts,
                         uint64_t seed) {
  RawDataset raw = testutil::synth_kg(n_entities, n_relations, n_facts, 4, seed);
  // carve a small test split off the back
  const std::size_t n_test = raw.train.size() / 5;
  raw.test.assign(raw.train.end() - n_test, raw.train.end());
  raw.train.resize(raw.train.size() - n_test);
  fs::create_directories(dir);
  write_fact_file(dir / "train.txt", raw.train);
  write_fact_file(dir / "test.txt", raw.test);
}

}  // namespace

TEST_CASE("RunConfig: defaults and presets match the documented settings") {
  RunConfig cfg;
  CHECK(cfg.dim == 50);
  CHECK(cfg.curvature == 1.0);
  CHECK(cfg.train.eta == 30.0);
  CHECK(cfg.train.beta == 128);
  CHECK(cfg.train.nneg == 100);
  CHECK(cfg.train.nepoch == 800);

  apply_preset(cfg, "wikipeople");
  CHECK(cfg.train.eta == 80.0);
  CHECK(cfg.train.nepoch == 400);
  CHECK(cfg.train.beta == 128);  // unchanged
  CHECK(cfg.train.nneg == 100);

  apply_preset(cfg, "jf17k");
  CHECK(cfg.train.eta == 30.0);
  CHECK(cfg.train.nepoch == 800);

  CHECK_THROWS_AS(apply_preset(cfg, "nope"), config_error);
}

TEST_CASE("RunConfig: key parsing, unknown keys rejected") {
  RunConfig cfg;
  set_config_key(cfg, "eta", "2.5");
  set_config_key(cfg, "dim", "10");
  set_config_key(cfg, "scoring_variant", "no_diag");
  set_config_key(cfg, "agg_reduce", "mean");
  set_config_key(cfg, "neg_mode", "entity_only");
  set_config_key(cfg, "tie_policy", "mean");
  CHECK(cfg.train.eta == 2.5);
  CHECK(cfg.dim == 10);
  CHECK(cfg.score.variant == ScoringVariant::no_diag);
  CHECK(cfg.score.reduce == AggReduce::mean);
  CHECK(cfg.train.neg_mode == NegativeMode::entity_only);
  CHECK(cfg.tie == TiePolicy::mean_of_ties);

  CHECK_THROWS_AS(set_config_key(cfg, "not_a_key", "1"), config_error);
  CHECK_THROWS_AS(set_config_key(cfg, "eta", "fast"), config_error);
  CHECK_THROWS_AS(set_config_key(cfg, "dim", "3.5"), config_error);
  CHECK_THROWS_AS(set_config_key(cfg, "scoring_variant", "bogus"), config_error);
}

TEST_CASE("RunConfig: file parsing with comments") {
  const fs::path dir = fresh_dir("config");
  const fs::path file = dir / "run.cfg";
  {
    std::ofstream out(file);
    out << "# a comment\n\n eta = 7.5 \ndim=12\npreset = wikipeople\n";
  }
  RunConfig cfg;
  load_config_file(cfg, file);
  // keys apply in file order; the preset line came last and reset eta to 80
  CHECK(cfg.train.eta == 80.0);
  CHECK(cfg.dim == 12);

  {
    std::ofstream out(file);
    out << "eta 7.5\n";
  }
  RunConfig cfg2;
  CHECK_THROWS_AS(load_config_file(cfg2, file), config_error);
  fs::remove_all(dir);
}

TEST_CASE("parse_task_list") {
  const auto tasks = parse_task_list("head,tail,affiliated");
  REQUIRE(tasks.size() == 3);
  CHECK(tasks[0] == Task::head);
  CHECK(tasks[2] == Task::affiliated);
  CHECK_THROWS_AS(parse_task_list("head,bogus"), config_error);
}

TEST_CASE("cli: prepare is idempotent on token files") {
  const fs::path dir = fresh_dir("prepare");
  write_synth_dataset(dir / "raw", 12, 3, 40, 91);

  const fs::path out1 = dir / "prep1";
  const fs::path out2 = dir / "prep2";
  REQUIRE(run_cli("prepare --train " + (dir / "raw/train.txt").string() + " --test " +
                  (dir / "raw/test.txt").string() + " --out " + out1.string()) == 0);
  // preparing the prepared output again yields identical files
  REQUIRE(run_cli("prepare --train " + (out1 / "train.txt").string() + " --test " +
                  (out1 / "test.txt").string() + " --out " + out2.string()) == 0);
  for (const char* f : {"train.txt", "test.txt", "entities.txt", "relations.txt"})
    CHECK(slurp(out1 / f) == slurp(out2 / f));

  const json report = json::parse(slurp(out1 / "report.json"));
  CHECK(report["splits"]["train"]["overall"].get<int>() == 32);
  CHECK(report["splits"]["test"]["overall"].get<int>() == 8);
  CHECK(report["filter"]["enabled"].get<bool>() == false);
  fs::remove_all(dir);
}

TEST_CASE("cli: prepare jsonl converts role-value records and filters literals") {
  const fs::path dir = fresh_dir("jsonl");
  {
    std::ofstream out(dir / "train.jsonl");
    out << R"({"head":"h1","relation":"r","tail":"t1","pairs":[["role","a1"],["when","1999-01-02"]]})"
        << "\n";
    out << R"({"head":"h2","relation":"r","tail":"42"})" << "\n";
    out << R"({"head":"h3","relation":"r","tail":"t3","pairs":[["x","special"]],"literals":["special"]})"
        << "\n";
  }
  const fs::path out = dir / "prep";
  REQUIRE(run_cli("prepare --format jsonl --train " + (dir / "train.jsonl").string() +
                  " --out " + out.string()) == 0);
  const auto facts = load_fact_file(out / "train.txt");
  REQUIRE(facts.size() == 2);  // the literal-tail record was dropped
  CHECK(facts[0].to_line() == "r h1 t1 a1");      // date literal removed
  CHECK(facts[1].to_line() == "r h3 t3");         // per-record literal removed
  const json report = json::parse(slurp(out / "report.json"));
  CHECK(report["filter"]["enabled"].get<bool>() == true);
  CHECK(report["filter"]["dropped_primary_literal"].get<int>() == 1);
  CHECK(report["filter"]["affiliated_values_removed"].get<int>() == 2);

  // --keep-literals turns filtering off
  const fs::path keep = dir / "keep";
  REQUIRE(run_cli("prepare --format jsonl --train " + (dir / "train.jsonl").string() +
                  " --keep-literals --out " + keep.string()) == 0);
  CHECK(load_fact_file(keep / "train.txt").size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("cli: train, eval, export, bench round trip") {
  const fs::path dir = fresh_dir("e2e");
  write_synth_dataset(dir / "data", 15, 3, 50, 92);

  const std::string data = (dir / "data").string();
  const std::string out = (dir / "run").string();
  REQUIRE(run_cli("train --data " + data + " --out " + out +
                  " --dim 6 --eta 5 --beta 16 --nneg 4 --epochs 8 --seed 3") == 0);
  CHECK(fs::exists(dir / "run/checkpoint.bin"));
  CHECK(fs::exists(dir / "run/train.log"));

  // 8 log lines, tab separated
  {
    std::istringstream log(slurp(dir / "run/train.log"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      ++lines;
      CHECK(line.find('\t') != std::string::npos);
    }
    CHECK(lines == 8);
  }

  const std::string ckpt = (dir / "run/checkpoint.bin").string();
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --out " + out +
                  " --bench") == 0);
  const json report = json::parse(slurp(dir / "run/report.json"));
  for (const char* task : {"head", "tail", "head_tail", "relation", "affiliated"}) {
    REQUIRE(report.contains(task));
    for (const char* split : {"overall", "binary", "nary"}) {
      REQUIRE(report[task].contains(split));
      for (const char* metric : {"mrr", "hits1", "hits3", "hits10", "count"})
        CHECK(report[task][split].contains(metric));
    }
  }
  CHECK(report["bench"]["per_fact_seconds"].get<double>() > 0.0);
  CHECK(fs::exists(dir / "run/report.txt"));

  // export: row count and the origin-distance column
  const std::string emb = (dir / "run/embeddings.tsv").string();
  REQUIRE(run_cli("export-embeddings --checkpoint " + ckpt + " --data " + data + " --out " +
                  emb) == 0);
  {
    std::istringstream tsv(slurp(emb));
    std::string header;
    std::getline(tsv, header);
    CHECK(header.rfind("id\tname\tdegree\tdist_origin", 0) == 0);
    const Checkpoint loaded = load_checkpoint(ckpt);
    std::string line;
    int rows = 0;
    while (std::getline(tsv, line)) {
      std::istringstream fields(line);
      int id;
      std::string name;
      long degree;
      double dist;
      fields >> id >> name >> degree >> dist;
      const double expect = distance(origin(loaded.params.dim),
                                     loaded.params.entity_point(id), loaded.params.curv);
      CHECK(dist == doctest::Approx(expect).epsilon(1e-12));
      CHECK(degree >= 0);
      ++rows;
    }
    CHECK(rows == loaded.vocab.num_entities());
  }

  REQUIRE(run_cli("bench --checkpoint " + ckpt + " --data " + data + " --out " +
                  (dir / "bench.json").string()) == 0);
  const json bench = json::parse(slurp(dir / "bench.json"));
  CHECK(bench["measured_seconds"].get<double>() > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("cli: resume continues epoch numbering") {
  const fs::path dir = fresh_dir("resume");
  write_synth_dataset(dir / "data", 10, 2, 30, 93);
  const std::string data = (dir / "data").string();
  const std::string out = (dir / "run").string();
  const std::string common = " --dim 4 --eta 2 --beta 8 --nneg 2 --seed 5";

  REQUIRE(run_cli("train --data " + data + " --out " + out + common + " --epochs 3") == 0);
  REQUIRE(run_cli("train --data " + data + " --out " + out + common + " --epochs 6" +
                  " --resume " + (dir / "run/checkpoint.bin").string()) == 0);

  std::istringstream log(slurp(dir / "run/train.log"));
  std::string line;
  std::vector<int> epochs;
  while (std::getline(log, line)) {
    std::istringstream fields(line);
    int e;
    fields >> e;
    epochs.push_back(e);
  }
  CHECK(epochs == std::vector<int>{1, 2, 3, 4, 5, 6});
  fs::remove_all(dir);
}

TEST_CASE("cli: flags override config-file values") {
  const fs::path dir = fresh_dir("precedence");
  write_synth_dataset(dir / "data", 8, 2, 20, 96);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "data_dir = " << (dir / "data").string() << "\n"
        << "out_dir = " << (dir / "run").string() << "\n"
        << "dim = 4\neta = 1\nbeta = 8\nnneg = 2\nnepoch = 2\nseed = 9\n";
  }
  REQUIRE(run_cli("train --config " + (dir / "run.cfg").string() + " --eta 2.5") == 0);
  const Checkpoint ckpt = load_checkpoint(dir / "run/checkpoint.bin");
  CHECK(ckpt.train_cfg.eta == 2.5);  // flag beat the file
  CHECK(ckpt.train_cfg.beta == 8);   // file value kept
  CHECK(ckpt.params.dim == 4);
  CHECK(ckpt.epochs_done == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: exit codes follow the error taxonomy") {
  const fs::path dir = fresh_dir("exits");

  // usage error: unknown subcommand / missing required option
  CHECK(run_cli("not-a-command") != 0);
  CHECK(run_cli("prepare --out " + (dir / "x").string()) != 0);

  // config error -> 1
  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "unknown_key = 1\n";
  }
  CHECK(run_cli("train --config " + (dir / "bad.cfg").string()) == 1);

  // data error -> 2: missing dataset directory
  CHECK(run_cli("train --data " + (dir / "nowhere").string() + " --out " +
                (dir / "o").string()) == 2);

  // data error -> 2: malformed fact line (arity < 2)
  fs::create_directories(dir / "badset");
  {
    std::ofstream f(dir / "badset/train.txt");
    f << "lonely_relation single_entity\n";
  }
  CHECK(run_cli("train --data " + (dir / "badset").string() + " --out " +
                (dir / "o2").string()) == 2);

  // data error -> 2: checkpoint missing
  CHECK(run_cli("eval --checkpoint " + (dir / "none.bin").string() + " --data " +
                (dir / "badset").string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("trained embeddings pull high-degree entities toward the origin") {
  // hub/leaf KG: a few hub entities participate in most facts, leaves in
  // one to seven; after training, degree and origin distance should be
  // negatively rank-correlated
  RawDataset raw;
  {
    Rng rng(11);
    for (int l = 0; l < 40; ++l) {
      const int n_f = 1 + l % 7;
      for (int f = 0; f < n_f; ++f) {
        RawFact rf;
        rf.relation = "r" + std::to_string(rng.below(3));
        rf.head = "hub" + std::to_string(rng.below(4));
        rf.tail = "leaf" + std::to_string(l);
        if (rng.below(2)) rf.affiliated.push_back("hub" + std::to_string(rng.below(4)));
        raw.train.push_back(std::move(rf));
      }
    }
  }
  Dataset data = make_dataset(raw);
  const std::vector<Fact> base = data.train;
  add_reciprocals(data);

  TrainConfig tc;
  tc.eta = 8.0;
  tc.beta = 32;
  tc.nneg = 5;
  tc.nepoch = 80;
  tc.seed = 3;
  Rng rng(tc.seed);
  ModelParams p =
      init_params(rng, 8, data.vocab.num_entities(), data.vocab.num_relations(), Curvature{});
  fit(data, p, tc, ScoreConfig{}, rng);

  std::vector<double> degree(data.vocab.num_entities(), 0.0);
  std::vector<double> dist(data.vocab.num_entities(), 0.0);
  for (const Fact& f : base) {
    degree[f.head] += 1;
    degree[f.tail] += 1;
    for (int32_t a : f.affiliated) degree[a] += 1;
  }
  const BallPoint o = origin(p.dim);
  for (int32_t e = 0; e < data.vocab.num_entities(); ++e)
    dist[e] = distance(o, p.entity_point(e), p.curv);

  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = double(i);
    return r;
  };
  const std::vector<double> ra = ranks(degree), rb = ranks(dist);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= ra.size();
  mb /= rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  const double spearman = num / std::sqrt(da * db);
  MESSAGE("spearman(degree, origin distance) = ", spearman);
  CHECK(spearman < -0.3);
}

TEST_CASE("cli: vocabulary mismatch between checkpoint and dataset is exit 2") {
  const fs::path dir = fresh_dir("vocab_mismatch");
  write_synth_dataset(dir / "data_a", 10, 2, 30, 94);
  write_synth_dataset(dir / "data_b", 12, 2, 30, 95);
  const std::string out = (dir / "run").string();
  REQUIRE(run_cli("train --data " + (dir / "data_a").string() + " --out " + out +
                  " --dim 4 --eta 2 --beta 8 --nneg 2 --epochs 2 --seed 7") == 0);
  CHECK(run_cli("eval --checkpoint " + (dir / "run/checkpoint.bin").string() + " --data " +
                (dir / "data_b").string()) == 2);
  fs::remove_all(dir);
}
