#pragma once

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyper2/graph.hpp"
#include "hyper2/model.hpp"

// Filtered-ranking evaluation: substitute every entity (or relation) at the
// queried position, cancel candidates that are known true facts elsewhere in
// train/valid/test, score the survivors and record the rank of the true
// fact. Metrics are MRR and Hits@{1,3,10}, split binary / n-ary / overall.

namespace hyper2 {

enum class Task : uint8_t { head, tail, relation, affiliated };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::head: return "head";
    case Task::tail: return "tail";
    case Task::relation: return "relation";
    case Task::affiliated: return "affiliated";
  }
  return "?";
}

inline Task task_from_string(const std::string& s) {
  for (auto t : {Task::head, Task::tail, Task::relation, Task::affiliated})
    if (s == to_string(t)) return t;
  throw config_error("unknown task: " + s);
}

// strict_greater counts only strictly better candidates (optimistic on
// ties); mean_of_ties places the true fact in the middle of its tie group.
enum class TiePolicy : uint8_t { strict_greater, mean_of_ties };

inline const char* to_string(TiePolicy p) {
  return p == TiePolicy::strict_greater ? "strict" : "mean";
}
inline TiePolicy tie_policy_from_string(const std::string& s) {
  if (s == "strict") return TiePolicy::strict_greater;
  if (s == "mean") return TiePolicy::mean_of_ties;
  throw config_error("unknown tie policy: " + s + " (expected strict|mean)");
}

struct RankResult {
  Task task;
  int arity = 2;
  // >= 1; half-integers can occur under the mean_of_ties policy
  double rank = 1.0;
  bool reciprocal_used = false;  // head/tail queries score directly, so false
};

struct MetricBucket {
  double mrr = 0.0;
  double hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  int64_t count = 0;
};

namespace detail {

struct MetricAccum {
  double rr_sum = 0.0;
  int64_t h1 = 0, h3 = 0, h10 = 0, n = 0;

  void add(double rank) {
    rr_sum += 1.0 / rank;
    if (rank <= 1.0) ++h1;
    if (rank <= 3.0) ++h3;
    if (rank <= 10.0) ++h10;
    ++n;
  }

  MetricBucket finalize() const {
    MetricBucket b;
    b.count = n;
    if (n > 0) {
      b.mrr = rr_sum / n;
      b.hits1 = double(h1) / n;
      b.hits3 = double(h3) / n;
      b.hits10 = double(h10) / n;
    }
    return b;
  }
};

}  // namespace detail

// task name -> split name ("binary" | "nary" | "overall") -> bucket.
// "head_tail" merges the head and tail query streams, the usual reporting
// convention for entity prediction.
struct MetricReport {
  std::map<std::string, std::map<std::string, MetricBucket>> buckets;

  const MetricBucket& at(const std::string& task, const std::string& split) const {
    return buckets.at(task).at(split);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [task, splits] : buckets) {
      for (const auto& [split, b] : splits) {
        j[task][split] = {{"mrr", b.mrr},     {"hits1", b.hits1}, {"hits3", b.hits3},
                          {"hits10", b.hits10}, {"count", b.count}};
      }
    }
    return j;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(12) << "task" << std::setw(9) << "split" << std::right
       << std::setw(9) << "MRR" << std::setw(9) << "H@1" << std::setw(9) << "H@3"
       << std::setw(9) << "H@10" << std::setw(10) << "queries" << '\n';
    for (const auto& [task, splits] : buckets) {
      for (const char* split : {"overall", "binary", "nary"}) {
        auto it = splits.find(split);
        if (it == splits.end()) continue;
        const MetricBucket& b = it->second;
        os << std::left << std::setw(12) << task << std::setw(9) << split << std::right
           << std::fixed << std::setprecision(4) << std::setw(9) << b.mrr << std::setw(9)
           << b.hits1 << std::setw(9) << b.hits3 << std::setw(9) << b.hits10
           << std::setw(10) << b.count << '\n';
      }
    }
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Single-query ranking

// `aff_slot` selects the affiliated position for Task::affiliated and is
// ignored otherwise. Candidates substitute every entity in E (every base
// relation in R for the relation task; reciprocal relations are a training
// augmentation, not test vocabulary), known true facts are cancelled, and
// the rank counts candidates scoring strictly above the true fact.
inline RankResult rank_query(const Fact& fact, Task task, int aff_slot,
                             const ModelParams& params, const ScoreConfig& cfg,
                             const Vocabulary& vocab, const KnownFacts& known,
                             TiePolicy tie = TiePolicy::strict_greater) {
  const double true_score = score(fact, params, cfg);
  int64_t greater = 0, ties = 0;

  Fact cand = fact;
  auto consider = [&](const Fact& c) {
    if (known.contains(c)) return;  // leaked true fact, cancelled
    const double s = score(c, params, cfg);
    if (s > true_score)
      ++greater;
    else if (s == true_score)
      ++ties;
  };

  switch (task) {
    case Task::head:
      for (int32_t e = 0; e < vocab.num_entities(); ++e) {
        if (e == fact.head) continue;
        cand.head = e;
        consider(cand);
      }
      break;
    case Task::tail:
      for (int32_t e = 0; e < vocab.num_entities(); ++e) {
        if (e == fact.tail) continue;
        cand.tail = e;
        consider(cand);
      }
      break;
    case Task::relation: {
      const int32_t n_rel =
          vocab.has_reciprocals ? vocab.n_base_relations : vocab.num_relations();
      for (int32_t r = 0; r < n_rel; ++r) {
        if (r == fact.relation) continue;
        cand.relation = r;
        consider(cand);
      }
      break;
    }
    case Task::affiliated: {
      if (aff_slot < 0 || aff_slot >= static_cast<int>(fact.affiliated.size()))
        throw std::invalid_argument("rank_query: affiliated slot out of range");
      const int32_t orig = fact.affiliated[aff_slot];
      for (int32_t e = 0; e < vocab.num_entities(); ++e) {
        if (e == orig) continue;
        cand.affiliated[aff_slot] = e;
        consider(cand);
      }
      break;
    }
  }

  RankResult r;
  r.task = task;
  r.arity = fact.arity();
  r.rank = tie == TiePolicy::strict_greater ? double(1 + greater)
                                            : 1.0 + greater + 0.5 * double(ties);
  return r;
}

// ---------------------------------------------------------------------------
// Full evaluation

inline MetricReport evaluate(std::span<const Fact> queries, const Vocabulary& vocab,
                             const KnownFacts& known, const ModelParams& params,
                             const ScoreConfig& cfg, std::span<const Task> tasks,
                             TiePolicy tie = TiePolicy::strict_greater,
                             std::vector<RankResult>* collect = nullptr) {
  std::map<std::string, std::array<detail::MetricAccum, 3>> accums;  // [overall, binary, nary]
  auto record = [&](const std::string& name, const RankResult& r) {
    auto& acc = accums[name];
    acc[0].add(r.rank);
    acc[r.arity == 2 ? 1 : 2].add(r.rank);
  };
  auto run = [&](const Fact& f, Task task, int slot) {
    RankResult r = rank_query(f, task, slot, params, cfg, vocab, known, tie);
    record(to_string(r.task), r);
    if (r.task == Task::head || r.task == Task::tail) record("head_tail", r);
    if (collect) collect->push_back(r);
  };

  for (const Fact& f : queries) {
    for (Task task : tasks) {
      switch (task) {
        case Task::head:
        case Task::tail:
        case Task::relation:
          run(f, task, -1);
          break;
        case Task::affiliated:
          for (int slot = 0; slot < static_cast<int>(f.affiliated.size()); ++slot)
            run(f, Task::affiliated, slot);
          break;
      }
    }
  }

  MetricReport report;
  for (const auto& [name, acc] : accums) {
    report.buckets[name]["overall"] = acc[0].finalize();
    report.buckets[name]["binary"] = acc[1].finalize();
    report.buckets[name]["nary"] = acc[2].finalize();
  }
  return report;
}

// Head/tail MRR over the overall split; the quantity watched during
// validation-based early stopping.
inline double head_tail_mrr(std::span<const Fact> queries, const Vocabulary& vocab,
                            const KnownFacts& known, const ModelParams& params,
                            const ScoreConfig& cfg) {
  const Task tasks[] = {Task::head, Task::tail};
  MetricReport r = evaluate(queries, vocab, known, params, cfg, tasks);
  return r.at("head_tail", "overall").mrr;
}

// ---------------------------------------------------------------------------
// Evaluation-time accounting
//
// Entity prediction over a test set costs one forward pass per candidate:
//   T = t * sum_i arity(fact_i) * n_e
// with t the single-fact forward time. bench measures t, predicts T, runs
// the actual entity-position evaluation and reports both plus their ratio.

struct BenchReport {
  double per_fact_seconds = 0.0;   // measured t
  double predicted_seconds = 0.0;  // T from the accounting formula
  double measured_seconds = 0.0;   // wall time of the entity-task evaluation
  double ratio = 0.0;              // measured / predicted
  uint64_t arity_sum = 0;          // sum of test-fact arities
  uint64_t n_entities = 0;
};

inline BenchReport bench_eval_time(std::span<const Fact> test_facts,
                                   const Vocabulary& vocab, const KnownFacts& known,
                                   const ModelParams& params, const ScoreConfig& cfg,
                                   int timing_passes = 3) {
  using clock = std::chrono::steady_clock;
  BenchReport rep;
  rep.n_entities = static_cast<uint64_t>(vocab.num_entities());
  for (const Fact& f : test_facts) rep.arity_sum += static_cast<uint64_t>(f.arity());

  // measure t: average single-fact forward time
  volatile double sink = 0.0;
  const auto t0 = clock::now();
  uint64_t forwards = 0;
  for (int pass = 0; pass < timing_passes; ++pass) {
    for (const Fact& f : test_facts) {
      sink = sink + score(f, params, cfg);
      ++forwards;
    }
  }
  const auto t1 = clock::now();
  rep.per_fact_seconds =
      std::chrono::duration<double>(t1 - t0).count() / std::max<uint64_t>(1, forwards);

  rep.predicted_seconds =
      rep.per_fact_seconds * static_cast<double>(rep.arity_sum) * static_cast<double>(rep.n_entities);

  const Task entity_tasks[] = {Task::head, Task::tail, Task::affiliated};
  const auto t2 = clock::now();
  evaluate(test_facts, vocab, known, params, cfg, entity_tasks);
  const auto t3 = clock::now();
  rep.measured_seconds = std::chrono::duration<double>(t3 - t2).count();
  rep.ratio = rep.predicted_seconds > 0.0 ? rep.measured_seconds / rep.predicted_seconds : 0.0;
  return rep;
}

}  // namespace hyper2
