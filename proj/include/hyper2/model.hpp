#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hyper2/ball.hpp"
#include "hyper2/graph.hpp"
#include "hyper2/rng.hpp"

// Model parameters and forward scoring: tangent-space aggregation of
// affiliated entities into the primary pair, then a bilinear-distance score
//   phi(F) = -d(exp_0(R_h . log_0(e_h)), e_t (+) r)^2 + b_h + b_t
// with configurable ablation variants for both stages.

namespace hyper2 {

enum class ScoringVariant : uint8_t {
  full,      // d(R_h (x) e_h, e_t (+) r)^2
  no_diag,   // d(e_h,         e_t (+) r)^2
  no_offset, // d(R_h (x) e_h, e_t)^2
  diag_both, // d(R_h (x) e_h, (R_t (x) e_t) (+) r)^2
  swapped,   // d(e_h (+) r,   R_t (x) e_t)^2
};

enum class AggCombine : uint8_t { addition, concatenation };
enum class AggReduce : uint8_t { min, max, mean };

struct ScoreConfig {
  ScoringVariant variant = ScoringVariant::full;
  AggCombine combine = AggCombine::addition;
  AggReduce reduce = AggReduce::min;
};

inline const char* to_string(ScoringVariant v) {
  switch (v) {
    case ScoringVariant::full: return "full";
    case ScoringVariant::no_diag: return "no_diag";
    case ScoringVariant::no_offset: return "no_offset";
    case ScoringVariant::diag_both: return "diag_both";
    case ScoringVariant::swapped: return "swapped";
  }
  return "?";
}
inline const char* to_string(AggCombine c) {
  return c == AggCombine::addition ? "addition" : "concatenation";
}
inline const char* to_string(AggReduce r) {
  switch (r) {
    case AggReduce::min: return "min";
    case AggReduce::max: return "max";
    case AggReduce::mean: return "mean";
  }
  return "?";
}

inline ScoringVariant scoring_variant_from_string(const std::string& s) {
  for (auto v : {ScoringVariant::full, ScoringVariant::no_diag, ScoringVariant::no_offset,
                 ScoringVariant::diag_both, ScoringVariant::swapped})
    if (s == to_string(v)) return v;
  throw config_error("unknown scoring variant: " + s);
}
inline AggCombine agg_combine_from_string(const std::string& s) {
  for (auto v : {AggCombine::addition, AggCombine::concatenation})
    if (s == to_string(v)) return v;
  throw config_error("unknown aggregation combine mode: " + s);
}
inline AggReduce agg_reduce_from_string(const std::string& s) {
  for (auto v : {AggReduce::min, AggReduce::max, AggReduce::mean})
    if (s == to_string(v)) return v;
  throw config_error("unknown aggregation reduce mode: " + s);
}

// ---------------------------------------------------------------------------
// Parameters

struct ModelParams {
  int32_t dim = 0;
  int32_t n_entities = 0;
  int32_t n_relations = 0;
  Curvature curv;

  Vec entity_emb;     // n_entities x dim, ball resident
  Vec rel_emb;        // n_relations x dim, ball resident (the offset r)
  Vec rel_diag_head;  // n_relations x dim (R_h)
  Vec rel_diag_tail;  // n_relations x dim (R_t; used by diag_both/swapped)
  Vec bias_head;      // n_entities
  Vec bias_tail;      // n_entities

  std::span<double> entity_row(int32_t i) {
    return {entity_emb.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<const double> entity_row(int32_t i) const {
    return {entity_emb.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<double> rel_row(int32_t i) {
    return {rel_emb.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<const double> rel_row(int32_t i) const {
    return {rel_emb.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<double> diag_head_row(int32_t i) {
    return {rel_diag_head.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<const double> diag_head_row(int32_t i) const {
    return {rel_diag_head.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<double> diag_tail_row(int32_t i) {
    return {rel_diag_tail.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
  std::span<const double> diag_tail_row(int32_t i) const {
    return {rel_diag_tail.data() + std::size_t(i) * dim, std::size_t(dim)};
  }

  BallPoint entity_point(int32_t i) const {
    auto r = entity_row(i);
    return BallPoint{Vec(r.begin(), r.end())};
  }
  BallPoint rel_point(int32_t i) const {
    auto r = rel_row(i);
    return BallPoint{Vec(r.begin(), r.end())};
  }

  void check_entity(int32_t i) const {
    if (i < 0 || i >= n_entities) throw data_error("entity id out of range: " + std::to_string(i));
  }
  void check_relation(int32_t i) const {
    if (i < 0 || i >= n_relations)
      throw data_error("relation id out of range: " + std::to_string(i));
  }
};

// Entity/relation rows start at 1e-3 * N(0,1) per coordinate (then ball
// projected, vacuous at that scale), diagonals uniform(-1, 1), biases zero.
// Draw order is fixed: entities, relations, head diagonals, tail diagonals.
inline ModelParams init_params(Rng& rng, int32_t dim, int32_t n_entities,
                               int32_t n_relations, Curvature K) {
  if (dim < 1) throw config_error("embedding dimension must be >= 1");
  ModelParams p;
  p.dim = dim;
  p.n_entities = n_entities;
  p.n_relations = n_relations;
  p.curv = K;
  p.entity_emb.resize(std::size_t(n_entities) * dim);
  p.rel_emb.resize(std::size_t(n_relations) * dim);
  p.rel_diag_head.resize(std::size_t(n_relations) * dim);
  p.rel_diag_tail.resize(std::size_t(n_relations) * dim);
  p.bias_head.assign(n_entities, 0.0);
  p.bias_tail.assign(n_entities, 0.0);

  for (double& c : p.entity_emb) c = 1e-3 * rng.normal();
  for (double& c : p.rel_emb) c = 1e-3 * rng.normal();
  for (int32_t i = 0; i < n_entities; ++i) {
    auto row = p.entity_row(i);
    BallPoint pt = project_to_ball(Vec(row.begin(), row.end()), K);
    std::copy(pt.coords.begin(), pt.coords.end(), row.begin());
  }
  for (int32_t i = 0; i < n_relations; ++i) {
    auto row = p.rel_row(i);
    BallPoint pt = project_to_ball(Vec(row.begin(), row.end()), K);
    std::copy(pt.coords.begin(), pt.coords.end(), row.begin());
  }
  for (double& c : p.rel_diag_head) c = rng.uniform(-1.0, 1.0);
  for (double& c : p.rel_diag_tail) c = rng.uniform(-1.0, 1.0);
  return p;
}

inline ModelParams init_params(uint64_t seed, int32_t dim, int32_t n_entities,
                               int32_t n_relations, Curvature K) {
  Rng rng(seed);
  return init_params(rng, dim, n_entities, n_relations, K);
}

// ---------------------------------------------------------------------------
// Aggregation

namespace detail {

// Per-coordinate reduce. Mean sums its inputs in sorted order so that the
// result is exactly invariant under permutations of the input list, like
// min/max already are.
inline double reduce_coord(std::span<const double> values, AggReduce kind) {
  switch (kind) {
    case AggReduce::min: {
      double best = values[0];
      for (double v : values.subspan(1))
        if (v < best) best = v;
      return best;
    }
    case AggReduce::max: {
      double best = values[0];
      for (double v : values.subspan(1))
        if (v > best) best = v;
      return best;
    }
    case AggReduce::mean: {
      std::vector<double> sorted(values.begin(), values.end());
      std::sort(sorted.begin(), sorted.end());
      double s = 0.0;
      for (double v : sorted) s += v;
      return s / static_cast<double>(sorted.size());
    }
  }
  return values[0];
}

inline Vec reduce_vectors(const std::vector<Vec>& inputs, AggReduce kind) {
  const std::size_t d = inputs.front().size();
  Vec out(d);
  std::vector<double> column(inputs.size());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < inputs.size(); ++j) column[j] = inputs[j][i];
    out[i] = reduce_coord(column, kind);
  }
  return out;
}

}  // namespace detail

// Folds affiliated-entity information into the primary pair on the tangent
// space at the origin:
//   addition:      reduce_i( log_0(e) + log_0(a_i) )
//   concatenation: reduce over { log_0(e) } u { log_0(a_i) }
// then maps back with exp_0. With no affiliated entities the pair passes
// through unchanged and the model reduces to the plain binary form.
inline std::pair<BallPoint, BallPoint> aggregate(const BallPoint& head,
                                                 const BallPoint& tail,
                                                 std::span<const BallPoint> affiliated,
                                                 const ScoreConfig& cfg, Curvature K) {
  if (affiliated.empty()) return {head, tail};
  for (const BallPoint& a : affiliated)
    require_same_dim(head.coords, a.coords, "aggregate");
  require_same_dim(head.coords, tail.coords, "aggregate");

  const TangentVec th = log_map_origin(head, K);
  const TangentVec tt = log_map_origin(tail, K);
  std::vector<Vec> head_inputs, tail_inputs;
  if (cfg.combine == AggCombine::addition) {
    for (const BallPoint& a : affiliated) {
      const TangentVec ta = log_map_origin(a, K);
      Vec h(th.coords.size()), t(tt.coords.size());
      for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = th.coords[i] + ta.coords[i];
        t[i] = tt.coords[i] + ta.coords[i];
      }
      head_inputs.push_back(std::move(h));
      tail_inputs.push_back(std::move(t));
    }
  } else {
    head_inputs.push_back(th.coords);
    tail_inputs.push_back(tt.coords);
    for (const BallPoint& a : affiliated) {
      const TangentVec ta = log_map_origin(a, K);
      head_inputs.push_back(ta.coords);
      tail_inputs.push_back(ta.coords);
    }
  }
  TangentVec hred{detail::reduce_vectors(head_inputs, cfg.reduce)};
  TangentVec tred{detail::reduce_vectors(tail_inputs, cfg.reduce)};
  return {exp_map_origin(hred, K), exp_map_origin(tred, K)};
}

// ---------------------------------------------------------------------------
// Scoring

inline double score(const Fact& f, const ModelParams& p, const ScoreConfig& cfg) {
  p.check_relation(f.relation);
  p.check_entity(f.head);
  p.check_entity(f.tail);
  for (int32_t a : f.affiliated) p.check_entity(a);

  const Curvature K = p.curv;
  std::vector<BallPoint> aff;
  aff.reserve(f.affiliated.size());
  for (int32_t a : f.affiliated) aff.push_back(p.entity_point(a));
  auto [eh, et] = aggregate(p.entity_point(f.head), p.entity_point(f.tail), aff, cfg, K);

  BallPoint lhs, rhs;
  switch (cfg.variant) {
    case ScoringVariant::full:
      lhs = mobius_matvec_diag(p.diag_head_row(f.relation), eh, K);
      rhs = mobius_add(et, p.rel_point(f.relation), K);
      break;
    case ScoringVariant::no_diag:
      lhs = std::move(eh);
      rhs = mobius_add(et, p.rel_point(f.relation), K);
      break;
    case ScoringVariant::no_offset:
      lhs = mobius_matvec_diag(p.diag_head_row(f.relation), eh, K);
      rhs = std::move(et);
      break;
    case ScoringVariant::diag_both:
      lhs = mobius_matvec_diag(p.diag_head_row(f.relation), eh, K);
      rhs = mobius_add(mobius_matvec_diag(p.diag_tail_row(f.relation), et, K),
                       p.rel_point(f.relation), K);
      break;
    case ScoringVariant::swapped:
      lhs = mobius_add(eh, p.rel_point(f.relation), K);
      rhs = mobius_matvec_diag(p.diag_tail_row(f.relation), et, K);
      break;
  }
  const double d = distance(lhs, rhs, K);
  return -(d * d) + p.bias_head[f.head] + p.bias_tail[f.tail];
}

}  // namespace hyper2
