#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "hyper2/eval.hpp"
#include "hyper2/grad.hpp"
#include "hyper2/model.hpp"
#include "hyper2/rng.hpp"

// Training loop: shuffled mini-batches of positives, nneg uniform
// corruptions per positive, binary cross-entropy over sigmoid scores,
// RSGD updates for ball-resident tables and plain SGD for diagonals and
// biases. Deterministic for a fixed (seed, config, data) in single-worker
// mode.

namespace hyper2 {

// Which positions a corruption may hit: the relation slot plus every entity
// slot, or entity slots only.
enum class NegativeMode : uint8_t { all, entity_only };

inline const char* to_string(NegativeMode m) {
  return m == NegativeMode::all ? "all" : "entity_only";
}
inline NegativeMode negative_mode_from_string(const std::string& s) {
  if (s == "all") return NegativeMode::all;
  if (s == "entity_only") return NegativeMode::entity_only;
  throw config_error("unknown negative sampling mode: " + s);
}

struct TrainConfig {
  double eta = 30.0;   // learning rate, shared by RSGD and SGD groups
  int32_t beta = 128;  // batch size (positives per batch)
  int32_t nneg = 100;  // negatives per positive
  int32_t nepoch = 800;
  int32_t patience = 3;     // consecutive non-improving validations tolerated
  int32_t eval_every = 10;  // epochs between validations
  uint64_t seed = 1;
  NegativeMode neg_mode = NegativeMode::all;
  int32_t workers = 1;
  bool validate_ball = false;  // re-check the ball constraint after every step

  void check() const {
    if (!(eta > 0.0)) throw config_error("eta must be > 0");
    if (beta < 1) throw config_error("beta must be >= 1");
    if (nneg < 1) throw config_error("nneg must be >= 1");
    if (nepoch < 0) throw config_error("nepoch must be >= 0");
    if (workers < 1) throw config_error("workers must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Negative sampling

// One corruption per negative: pick a position uniformly over
// {relation} u {head, tail, each affiliated slot} (entity slots only in
// entity_only mode), then resample a replacement until it differs from the
// original token. Every negative differs from its positive in exactly one
// position.
inline std::vector<Fact> negative_sample(const Fact& fact, int32_t nneg,
                                         const Vocabulary& vocab, Rng& rng,
                                         NegativeMode mode = NegativeMode::all) {
  const int64_t n_ent = vocab.num_entities();
  const int64_t n_rel = vocab.num_relations();
  if (n_ent < 2) throw data_error("negative_sample: need at least 2 entities to corrupt");
  if (mode == NegativeMode::all && n_rel < 2)
    throw data_error("negative_sample: need at least 2 relations to corrupt");

  const int arity = fact.arity();
  const int positions = (mode == NegativeMode::all ? 1 : 0) + arity;
  std::vector<Fact> out;
  out.reserve(nneg);
  for (int32_t j = 0; j < nneg; ++j) {
    Fact neg = fact;
    int pos = static_cast<int>(rng.below(positions));
    if (mode == NegativeMode::entity_only) ++pos;  // skip the relation slot
    if (pos == 0) {
      int32_t r;
      do {
        r = static_cast<int32_t>(rng.below(n_rel));
      } while (r == fact.relation);
      neg.relation = r;
    } else {
      int32_t* slot = pos == 1   ? &neg.head
                      : pos == 2 ? &neg.tail
                                 : &neg.affiliated[pos - 3];
      const int32_t orig = *slot;
      int32_t e;
      do {
        e = static_cast<int32_t>(rng.below(n_ent));
      } while (e == orig);
      *slot = e;
    }
    out.push_back(std::move(neg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and update steps

// -(1/N) sum_m [ y log p + (1-y) log(1-p) ], p = sigmoid(score) clamped to
// [kProbEps, 1-kProbEps].
inline double bce_loss(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("bce_loss: scores/labels length mismatch");
  if (scores.empty()) throw std::invalid_argument("bce_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double p = 1.0 / (1.0 + std::exp(-scores[i]));
    if (p < Tape::kProbEps) p = Tape::kProbEps;
    if (p > 1.0 - Tape::kProbEps) p = 1.0 - Tape::kProbEps;
    sum += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(scores.size());
}

// theta <- exp_theta(-eta * grad_E / lambda_theta^2), then projected.
inline void rsgd_step(std::span<double> param, std::span<const double> euclid_grad,
                      double eta, Curvature K) {
  Vec rg = riemannian_rescale(euclid_grad, param, K);
  for (double& g : rg) g *= -eta;
  BallPoint x{Vec(param.begin(), param.end())};
  BallPoint next = exp_map(x, TangentVec{std::move(rg)}, K);
  std::copy(next.coords.begin(), next.coords.end(), param.begin());
}

// theta <- theta - eta * grad_E.
inline void sgd_step(std::span<double> param, std::span<const double> grad, double eta) {
  require_same_dim(param, grad, "sgd_step");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= eta * grad[i];
}

// ---------------------------------------------------------------------------
// Scoring on the tape

// Builds the forward score of one fact on the tape, mirroring model::score.
// Leaves are cached per parameter row, so a row touched by several facts in
// a batch appears once and its gradient accumulates through fan-out.
class TapeScorer {
 public:
  TapeScorer(Tape& tape, const ModelParams& params, const ScoreConfig& cfg)
      : t_(tape), p_(params), cfg_(cfg) {}

  int score_node(const Fact& f) {
    p_.check_relation(f.relation);
    p_.check_entity(f.head);
    p_.check_entity(f.tail);
    for (int32_t a : f.affiliated) p_.check_entity(a);

    const Curvature K = p_.curv;
    int eh = entity(f.head);
    int et = entity(f.tail);
    int hh, th;
    if (f.affiliated.empty()) {
      hh = eh;
      th = et;
    } else {
      const int log_h = tape_log0(t_, eh, K);
      const int log_t = tape_log0(t_, et, K);
      std::vector<int> head_in, tail_in;
      if (cfg_.combine == AggCombine::addition) {
        for (int32_t a : f.affiliated) {
          const int log_a = tape_log0(t_, entity(a), K);
          head_in.push_back(t_.vadd(log_h, log_a));
          tail_in.push_back(t_.vadd(log_t, log_a));
        }
      } else {
        head_in.push_back(log_h);
        tail_in.push_back(log_t);
        for (int32_t a : f.affiliated) {
          const int log_a = tape_log0(t_, entity(a), K);
          head_in.push_back(log_a);
          tail_in.push_back(log_a);
        }
      }
      const ReduceOp op = cfg_.reduce == AggReduce::min   ? ReduceOp::min
                          : cfg_.reduce == AggReduce::max ? ReduceOp::max
                                                          : ReduceOp::mean;
      hh = tape_exp0(t_, t_.reduce(head_in, op), K);
      th = tape_exp0(t_, t_.reduce(tail_in, op), K);
    }

    int lhs = -1, rhs = -1;
    switch (cfg_.variant) {
      case ScoringVariant::full:
        lhs = tape_mobius_matvec_diag(t_, diag_head(f.relation), hh, K);
        rhs = tape_mobius_add(t_, th, rel(f.relation), K);
        break;
      case ScoringVariant::no_diag:
        lhs = hh;
        rhs = tape_mobius_add(t_, th, rel(f.relation), K);
        break;
      case ScoringVariant::no_offset:
        lhs = tape_mobius_matvec_diag(t_, diag_head(f.relation), hh, K);
        rhs = th;
        break;
      case ScoringVariant::diag_both:
        lhs = tape_mobius_matvec_diag(t_, diag_head(f.relation), hh, K);
        rhs = tape_mobius_add(t_, tape_mobius_matvec_diag(t_, diag_tail(f.relation), th, K),
                              rel(f.relation), K);
        break;
      case ScoringVariant::swapped:
        lhs = tape_mobius_add(t_, hh, rel(f.relation), K);
        rhs = tape_mobius_matvec_diag(t_, diag_tail(f.relation), th, K);
        break;
    }
    const int d2 = tape_distance_sq(t_, lhs, rhs, K);
    return t_.sadd(t_.sadd(t_.sneg(d2), bias_head(f.head)), bias_tail(f.tail));
  }

  // Mean BCE over (facts, labels); N is the normalizer, which a caller
  // splitting a batch across workers sets to the full batch size.
  int loss_node(std::span<const Fact> facts, std::span<const uint8_t> labels,
                std::size_t normalizer) {
    if (facts.size() != labels.size())
      throw std::invalid_argument("loss_node: facts/labels length mismatch");
    if (facts.empty()) throw std::invalid_argument("loss_node: empty batch");
    std::vector<int> terms;
    terms.reserve(facts.size());
    for (std::size_t i = 0; i < facts.size(); ++i) {
      const int s = score_node(facts[i]);
      const int logp = labels[i] ? t_.slogsigmoid(s) : t_.slogsigmoid(t_.sneg(s));
      terms.push_back(t_.sneg(logp));
    }
    return t_.smulc(t_.ssum(terms), 1.0 / static_cast<double>(normalizer));
  }

  // Training-loop accumulation: the BCE of each positive's group (the
  // positive plus its negatives, N = group size) is computed separately;
  // the batch loss averages the group losses over `normalizer` groups, so a
  // caller splitting a batch across workers passes the full group count.
  // For uniform group sizes this equals the plain mean over every scored
  // fact in the batch.
  int grouped_loss_node(std::span<const Fact> facts, std::span<const uint8_t> labels,
                        std::span<const int32_t> group_sizes, std::size_t normalizer) {
    std::vector<int> group_losses;
    group_losses.reserve(group_sizes.size());
    std::size_t off = 0;
    for (int32_t gs : group_sizes) {
      group_losses.push_back(
          loss_node(facts.subspan(off, gs), labels.subspan(off, gs), gs));
      off += gs;
    }
    if (off != facts.size())
      throw std::invalid_argument("grouped_loss_node: group sizes do not cover the batch");
    return t_.smulc(t_.ssum(group_losses), 1.0 / static_cast<double>(normalizer));
  }

 private:
  int entity(int32_t id) { return cached(ParamTable::entity_emb, id, p_.entity_row(id)); }
  int rel(int32_t id) { return cached(ParamTable::rel_emb, id, p_.rel_row(id)); }
  int diag_head(int32_t id) {
    return cached(ParamTable::rel_diag_head, id, p_.diag_head_row(id));
  }
  int diag_tail(int32_t id) {
    return cached(ParamTable::rel_diag_tail, id, p_.diag_tail_row(id));
  }
  int bias_head(int32_t id) {
    return cached_scalar(ParamTable::bias_head, id, p_.bias_head[id]);
  }
  int bias_tail(int32_t id) {
    return cached_scalar(ParamTable::bias_tail, id, p_.bias_tail[id]);
  }

  int cached(ParamTable table, int32_t row, std::span<const double> value) {
    auto [it, fresh] = cache_.try_emplace(slot_key(table, row), -1);
    if (fresh) it->second = t_.leaf(value, ParamSlot{table, row});
    return it->second;
  }
  int cached_scalar(ParamTable table, int32_t row, double value) {
    auto [it, fresh] = cache_.try_emplace(slot_key(table, row), -1);
    if (fresh) it->second = t_.leaf_scalar(value, ParamSlot{table, row});
    return it->second;
  }

  Tape& t_;
  const ModelParams& p_;
  const ScoreConfig cfg_;  // by value; callers often pass temporaries
  std::unordered_map<uint64_t, int> cache_;
};

// ---------------------------------------------------------------------------
// Fit

struct EpochStats {
  int32_t epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
  std::optional<double> val_mrr;
};

struct FitResult {
  std::vector<EpochStats> log;
  int32_t epochs_run = 0;
  bool stopped_early = false;
  std::optional<double> best_val_mrr;
  std::optional<ModelParams> best_params;  // set when validation ran
};

namespace detail {

inline void apply_gradients(ModelParams& p, const GradientStore& store, double eta,
                            bool validate_ball) {
  const Curvature K = p.curv;
  store.for_each([&](ParamTable table, int32_t row, const Vec& g) {
    switch (table) {
      case ParamTable::entity_emb:
        rsgd_step(p.entity_row(row), g, eta, K);
        break;
      case ParamTable::rel_emb:
        rsgd_step(p.rel_row(row), g, eta, K);
        break;
      case ParamTable::rel_diag_head:
        sgd_step(p.diag_head_row(row), g, eta);
        break;
      case ParamTable::rel_diag_tail:
        sgd_step(p.diag_tail_row(row), g, eta);
        break;
      case ParamTable::bias_head:
        sgd_step({&p.bias_head[row], 1}, g, eta);
        break;
      case ParamTable::bias_tail:
        sgd_step({&p.bias_tail[row], 1}, g, eta);
        break;
      case ParamTable::none:
        break;
    }
  });
  if (validate_ball) {
    const double bound = (1.0 - kBallMargin) * (1.0 - kBallMargin);
    store.for_each([&](ParamTable table, int32_t row, const Vec&) {
      if (table != ParamTable::entity_emb && table != ParamTable::rel_emb) return;
      auto r = table == ParamTable::entity_emb ? p.entity_row(row) : p.rel_row(row);
      if (K.k * sq_norm(r) > bound + 1e-15)
        throw numeric_error("ball constraint violated after update (table " +
                            std::to_string(int(table)) + ", row " + std::to_string(row) + ")");
    });
  }
}

inline void throw_nonfinite_loss(int32_t epoch, std::size_t batch_index,
                                 std::span<const Fact> facts, const ModelParams& p,
                                 const ScoreConfig& cfg) {
  for (const Fact& f : facts) {
    const double s = score(f, p, cfg);
    if (!std::isfinite(s)) {
      throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index) + ", fact (r=" +
                          std::to_string(f.relation) + ", h=" + std::to_string(f.head) +
                          ", t=" + std::to_string(f.tail) + ", n=" +
                          std::to_string(f.arity()) + ")");
    }
  }
  throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                      std::to_string(batch_index));
}

}  // namespace detail

// Runs the full loop on `data.train` (reciprocals expected to be added
// already). Writes one tab-separated line per epoch to `log_stream` when
// given: epoch, mean loss, elapsed seconds, and validation MRR on the
// epochs where it was computed. `first_epoch` continues numbering when
// resuming from a checkpoint.
inline FitResult fit(const Dataset& data, ModelParams& params, const TrainConfig& tc,
                     const ScoreConfig& sc, Rng& rng, std::ostream* log_stream = nullptr,
                     int32_t first_epoch = 1) {
  tc.check();
  if (data.train.empty()) throw data_error("fit: empty training split");

  FitResult result;
  std::vector<int32_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int32_t>(i);

  double best = -1.0;
  int32_t bad_validations = 0;

  std::vector<Fact> facts;
  std::vector<uint8_t> labels;
  std::vector<int32_t> group_sizes;  // one group per positive: 1 + nneg facts
  std::vector<Tape> tapes(std::max<int32_t>(1, tc.workers));

  for (int32_t epoch = first_epoch; epoch <= tc.nepoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);

    double loss_sum = 0.0;  // sum of per-positive group losses
    std::size_t group_count = 0;
    std::size_t batch_index = 0;

    for (std::size_t start = 0; start < order.size(); start += tc.beta, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + tc.beta);
      facts.clear();
      labels.clear();
      group_sizes.clear();
      for (std::size_t i = start; i < stop; ++i) {
        const Fact& pos = data.train[order[i]];
        facts.push_back(pos);
        labels.push_back(1);
        for (Fact& neg : negative_sample(pos, tc.nneg, data.vocab, rng, tc.neg_mode)) {
          facts.push_back(std::move(neg));
          labels.push_back(0);
        }
        group_sizes.push_back(1 + tc.nneg);
      }

      GradientStore store;
      double batch_loss = 0.0;  // mean group loss over this batch
      if (tc.workers <= 1) {
        Tape& tape = tapes[0];
        tape.reset();
        TapeScorer scorer(tape, params, sc);
        const int loss =
            scorer.grouped_loss_node(facts, labels, group_sizes, group_sizes.size());
        batch_loss = tape.scalar(loss);
        if (!std::isfinite(batch_loss))
          detail::throw_nonfinite_loss(epoch, batch_index, facts, params, sc);
        tape.backward(loss, store);
      } else {
        // Fan out whole groups; each worker owns a tape, stores merge in
        // worker order after joining. Every chunk loss carries the full
        // batch normalizer, so the chunk losses and gradients sum to the
        // single-tape result.
        const std::size_t n_groups = group_sizes.size();
        const std::size_t per = (n_groups + tc.workers - 1) / tc.workers;
        std::vector<GradientStore> stores(tc.workers);
        std::vector<double> losses(tc.workers, 0.0);
        std::vector<std::thread> threads;
        for (int32_t w = 0; w < tc.workers; ++w) {
          const std::size_t glo = std::min(n_groups, w * per);
          const std::size_t ghi = std::min(n_groups, glo + per);
          if (glo >= ghi) continue;
          const std::size_t flo = glo * (1 + tc.nneg);
          const std::size_t fhi = ghi * (1 + tc.nneg);
          threads.emplace_back([&, w, glo, ghi, flo, fhi, n_groups] {
            Tape& tape = tapes[w];
            tape.reset();
            TapeScorer scorer(tape, params, sc);
            const int loss = scorer.grouped_loss_node(
                std::span<const Fact>(facts).subspan(flo, fhi - flo),
                std::span<const uint8_t>(labels).subspan(flo, fhi - flo),
                std::span<const int32_t>(group_sizes).subspan(glo, ghi - glo), n_groups);
            losses[w] = tape.scalar(loss);
            tape.backward(loss, stores[w]);
          });
        }
        for (auto& th : threads) th.join();
        for (int32_t w = 0; w < tc.workers; ++w) {
          batch_loss += losses[w];
          store.merge(stores[w]);
        }
        if (!std::isfinite(batch_loss))
          detail::throw_nonfinite_loss(epoch, batch_index, facts, params, sc);
      }

      detail::apply_gradients(params, store, tc.eta, tc.validate_ball);
      loss_sum += batch_loss * static_cast<double>(group_sizes.size());
      group_count += group_sizes.size();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(group_count);
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (data.has_valid && tc.eval_every > 0 && epoch % tc.eval_every == 0) {
      const double mrr =
          head_tail_mrr(data.valid, data.vocab, data.known, params, sc);
      stats.val_mrr = mrr;
      if (mrr > best) {
        best = mrr;
        bad_validations = 0;
        result.best_val_mrr = mrr;
        result.best_params = params;
      } else {
        ++bad_validations;
      }
    }

    if (log_stream) {
      (*log_stream) << stats.epoch << '\t' << stats.mean_loss << '\t' << stats.seconds;
      if (stats.val_mrr) (*log_stream) << '\t' << *stats.val_mrr;
      (*log_stream) << '\n';
      log_stream->flush();
    }
    result.log.push_back(stats);
    result.epochs_run = epoch;

    if (data.has_valid && tc.patience > 0 && bad_validations >= tc.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace hyper2
