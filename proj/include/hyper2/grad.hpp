#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "hyper2/ball.hpp"
#include "hyper2/common.hpp"

// Minimal reverse-mode differentiation over the vector primitives used in
// scoring: add/scale/element-wise multiply, min/max/mean reduction with a
// recorded selection mask, dot/norm, and the scalar chain (tanh, artanh,
// log-sigmoid, arithmetic). A Tape records one forward pass; backward()
// walks it once and accumulates Euclidean gradients per parameter slot.

namespace hyper2 {

enum class ParamTable : uint8_t {
  none = 0,
  entity_emb,
  rel_emb,
  rel_diag_head,
  rel_diag_tail,
  bias_head,
  bias_tail,
};

struct ParamSlot {
  ParamTable table = ParamTable::none;
  int32_t row = -1;
  bool bound() const { return table != ParamTable::none; }
};

inline uint64_t slot_key(ParamTable t, int32_t row) {
  return (uint64_t(uint8_t(t)) << 32) | uint32_t(row);
}
inline ParamTable slot_key_table(uint64_t key) { return ParamTable(uint8_t(key >> 32)); }
inline int32_t slot_key_row(uint64_t key) { return int32_t(uint32_t(key & 0xffffffffull)); }

// Sparse map (table, row) -> accumulated gradient. Only slots touched by the
// recorded batch appear; repeated touches add.
class GradientStore {
 public:
  Vec& accum(ParamTable t, int32_t row, std::size_t dim) {
    Vec& g = slots_[slot_key(t, row)];
    if (g.empty()) g.assign(dim, 0.0);
    return g;
  }

  const Vec* find(ParamTable t, int32_t row) const {
    auto it = slots_.find(slot_key(t, row));
    return it == slots_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }

  void merge(const GradientStore& other) {
    for (const auto& [key, g] : other.slots_) {
      Vec& mine = slots_[key];
      if (mine.empty()) mine.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
    }
  }

  template <typename Fn>  // Fn(ParamTable, int32_t row, const Vec&)
  void for_each(Fn&& fn) const {
    for (const auto& [key, g] : slots_) fn(slot_key_table(key), slot_key_row(key), g);
  }

 private:
  std::unordered_map<uint64_t, Vec> slots_;
};

enum class ReduceOp : uint8_t { min, max, mean };

class Tape {
  enum class Op : uint8_t {
    leaf,
    vadd, vneg, vmul, vscale,
    reduce_min, reduce_max, reduce_mean,
    dot, norm,
    sadd, ssub, smul, sdiv, sneg, ssquare,
    saddc, smulc,
    stanh, sartanh, slogsigmoid,
    ssum,
  };

  struct Node {
    Op op;
    int32_t a = -1, b = -1;
    double c = 0.0;  // constant operand or cached derivative factor
    ParamSlot slot;
    uint32_t val_off = 0;
    uint32_t len = 0;
    uint32_t list_off = 0, list_len = 0;
    uint32_t mask_off = 0;
  };

 public:
  static constexpr double kProbEps = 1e-12;  // sigmoid output clamp in the loss

  void reset() {
    nodes_.clear();
    vals_.clear();
    lists_.clear();
    masks_.clear();
  }

  std::size_t node_count() const { return nodes_.size(); }

  std::span<const double> value(int id) const {
    const Node& n = node(id);
    return {vals_.data() + n.val_off, n.len};
  }

  double scalar(int id) const {
    const Node& n = node(id);
    if (n.len != 1) throw std::invalid_argument("Tape::scalar: node is not a scalar");
    return vals_[n.val_off];
  }

  // -- leaves ---------------------------------------------------------------

  int leaf(std::span<const double> v, ParamSlot slot = {}) {
    int id = push(Op::leaf, static_cast<uint32_t>(v.size()));
    std::copy(v.begin(), v.end(), vals_.begin() + nodes_[id].val_off);
    nodes_[id].slot = slot;
    return id;
  }

  int leaf_scalar(double v, ParamSlot slot = {}) {
    int id = push(Op::leaf, 1);
    vals_[nodes_[id].val_off] = v;
    nodes_[id].slot = slot;
    return id;
  }

  // -- vector ops -------------------------------------------------------------

  int vadd(int a, int b) {
    check_same_dim(a, b, "vadd");
    int id = push(Op::vadd, node(a).len, a, b);
    auto va = value(a), vb = value(b);
    double* out = out_ptr(id);
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    return id;
  }

  int vneg(int a) {
    int id = push(Op::vneg, node(a).len, a);
    auto va = value(a);
    double* out = out_ptr(id);
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = -va[i];
    return id;
  }

  int vmul(int a, int b) {
    check_same_dim(a, b, "vmul");
    int id = push(Op::vmul, node(a).len, a, b);
    auto va = value(a), vb = value(b);
    double* out = out_ptr(id);
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
    return id;
  }

  // scalar node s times vector node v
  int vscale(int s, int v) {
    check_scalar(s, "vscale");
    int id = push(Op::vscale, node(v).len, s, v);
    const double sv = scalar_of(s);
    auto vv = value(v);
    double* out = out_ptr(id);
    for (std::size_t i = 0; i < vv.size(); ++i) out[i] = sv * vv[i];
    return id;
  }

  // Element-wise reduction over >= 1 same-dimension inputs. min/max record a
  // selection mask; ties route to the lowest list index so the subgradient
  // is never split. mean sums each coordinate in sorted order, making the
  // value exactly permutation invariant.
  int reduce(std::span<const int> inputs, ReduceOp kind) {
    if (inputs.empty()) throw std::invalid_argument("Tape::reduce: empty input list");
    const uint32_t d = node(inputs[0]).len;
    for (int in : inputs)
      if (node(in).len != d) throw std::invalid_argument("Tape::reduce: dimension mismatch");
    Op op = kind == ReduceOp::min   ? Op::reduce_min
            : kind == ReduceOp::max ? Op::reduce_max
                                    : Op::reduce_mean;
    int id = push(op, d);
    attach_list(id, inputs);
    Node& n = nodes_[id];
    double* out = vals_.data() + n.val_off;
    if (kind == ReduceOp::mean) {
      std::vector<double> column(inputs.size());
      for (uint32_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < inputs.size(); ++j)
          column[j] = vals_[node(inputs[j]).val_off + i];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out[i] = s / static_cast<double>(column.size());
      }
    } else {
      n.mask_off = static_cast<uint32_t>(masks_.size());
      masks_.resize(masks_.size() + d);
      const bool is_min = kind == ReduceOp::min;
      for (uint32_t i = 0; i < d; ++i) {
        int32_t best_j = 0;
        double best = vals_[node(inputs[0]).val_off + i];
        for (std::size_t j = 1; j < inputs.size(); ++j) {
          const double v = vals_[node(inputs[j]).val_off + i];
          if (is_min ? (v < best) : (v > best)) {
            best = v;
            best_j = static_cast<int32_t>(j);
          }
        }
        out[i] = best;
        masks_[n.mask_off + i] = best_j;
      }
    }
    return id;
  }

  std::span<const int32_t> reduce_mask(int id) const {
    const Node& n = node(id);
    if (n.op != Op::reduce_min && n.op != Op::reduce_max)
      throw std::invalid_argument("Tape::reduce_mask: node is not a min/max reduce");
    return {masks_.data() + n.mask_off, n.len};
  }

  // -- vector -> scalar -------------------------------------------------------

  int dot(int a, int b) {
    check_same_dim(a, b, "dot");
    int id = push(Op::dot, 1, a, b);
    vals_[nodes_[id].val_off] = hyper2::dot(value(a), value(b));
    return id;
  }

  // Euclidean norm; gradient is zero at (numerically) zero input.
  int norm(int a) {
    int id = push(Op::norm, 1, a);
    vals_[nodes_[id].val_off] = std::sqrt(sq_norm(value(a)));
    return id;
  }

  // -- scalar ops -------------------------------------------------------------

  int sadd(int a, int b) { return scalar_bin(Op::sadd, a, b, scalar_of(a) + scalar_of(b)); }
  int ssub(int a, int b) { return scalar_bin(Op::ssub, a, b, scalar_of(a) - scalar_of(b)); }
  int smul(int a, int b) { return scalar_bin(Op::smul, a, b, scalar_of(a) * scalar_of(b)); }
  int sdiv(int a, int b) { return scalar_bin(Op::sdiv, a, b, scalar_of(a) / scalar_of(b)); }

  int sneg(int a) { return scalar_un(Op::sneg, a, -scalar_of(a)); }
  int ssquare(int a) {
    const double v = scalar_of(a);
    return scalar_un(Op::ssquare, a, v * v);
  }

  int saddc(int a, double c) {
    int id = scalar_un(Op::saddc, a, scalar_of(a) + c);
    nodes_[id].c = c;
    return id;
  }
  int smulc(int a, double c) {
    int id = scalar_un(Op::smulc, a, scalar_of(a) * c);
    nodes_[id].c = c;
    return id;
  }

  int stanh(int a) { return scalar_un(Op::stanh, a, std::tanh(scalar_of(a))); }

  // artanh with the ball module's clamp; the derivative is zero beyond it
  int sartanh(int a) {
    const double t = scalar_of(a);
    int id = scalar_un(Op::sartanh, a, artanh_clamped(t));
    nodes_[id].c = std::abs(t) <= kArtanhMax ? 1.0 / (1.0 - t * t) : 0.0;
    return id;
  }

  // log(sigmoid(z)) with sigmoid clamped to [kProbEps, 1 - kProbEps];
  // derivative 1 - sigmoid(z) inside the clamp, zero outside
  int slogsigmoid(int a) {
    const double z = scalar_of(a);
    const double sig = 1.0 / (1.0 + std::exp(-z));
    double val = z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
    const double lo = std::log(kProbEps);
    const double hi = std::log1p(-kProbEps);
    double dfac = 1.0 - sig;
    if (val < lo) {
      val = lo;
      dfac = 0.0;
    } else if (val > hi) {
      val = hi;
      dfac = 0.0;
    }
    int id = scalar_un(Op::slogsigmoid, a, val);
    nodes_[id].c = dfac;
    return id;
  }

  int ssum(std::span<const int> inputs) {
    if (inputs.empty()) throw std::invalid_argument("Tape::ssum: empty input list");
    double s = 0.0;
    for (int in : inputs) {
      check_scalar(in, "ssum");
      s += scalar_of(in);
    }
    int id = push(Op::ssum, 1);
    attach_list(id, inputs);
    vals_[nodes_[id].val_off] = s;
    return id;
  }

  // -- backward ---------------------------------------------------------------

  // Seeds d(seed)/d(seed) = 1 and accumulates d(seed)/d(leaf) into `out` for
  // every slot-bound leaf at or below `seed` in the tape.
  void backward(int seed, GradientStore& out) const {
    const Node& seed_node = node(seed);
    if (seed_node.len != 1)
      throw std::invalid_argument("Tape::backward: seed must be a scalar node");
    grads_.assign(vals_.size(), 0.0);
    grads_[seed_node.val_off] = 1.0;

    for (int id = seed; id >= 0; --id) {
      const Node& n = nodes_[id];
      const double* g = grads_.data() + n.val_off;
      switch (n.op) {
        case Op::leaf:
          if (n.slot.bound()) {
            Vec& acc = out.accum(n.slot.table, n.slot.row, n.len);
            for (uint32_t i = 0; i < n.len; ++i) acc[i] += g[i];
          }
          break;
        case Op::vadd:
          for (uint32_t i = 0; i < n.len; ++i) {
            grad_at(n.a)[i] += g[i];
            grad_at(n.b)[i] += g[i];
          }
          break;
        case Op::vneg:
          for (uint32_t i = 0; i < n.len; ++i) grad_at(n.a)[i] -= g[i];
          break;
        case Op::vmul: {
          auto va = value(n.a), vb = value(n.b);
          for (uint32_t i = 0; i < n.len; ++i) {
            grad_at(n.a)[i] += g[i] * vb[i];
            grad_at(n.b)[i] += g[i] * va[i];
          }
          break;
        }
        case Op::vscale: {
          const double sv = vals_[node(n.a).val_off];
          auto vv = value(n.b);
          double gs = 0.0;
          for (uint32_t i = 0; i < n.len; ++i) {
            gs += g[i] * vv[i];
            grad_at(n.b)[i] += g[i] * sv;
          }
          grad_at(n.a)[0] += gs;
          break;
        }
        case Op::reduce_min:
        case Op::reduce_max:
          for (uint32_t i = 0; i < n.len; ++i) {
            const int32_t sel = masks_[n.mask_off + i];
            grad_at(lists_[n.list_off + sel])[i] += g[i];
          }
          break;
        case Op::reduce_mean: {
          const double inv = 1.0 / static_cast<double>(n.list_len);
          for (uint32_t j = 0; j < n.list_len; ++j) {
            double* gin = grad_at(lists_[n.list_off + j]);
            for (uint32_t i = 0; i < n.len; ++i) gin[i] += g[i] * inv;
          }
          break;
        }
        case Op::dot: {
          auto va = value(n.a), vb = value(n.b);
          for (std::size_t i = 0; i < va.size(); ++i) {
            grad_at(n.a)[i] += g[0] * vb[i];
            grad_at(n.b)[i] += g[0] * va[i];
          }
          break;
        }
        case Op::norm: {
          const double nv = vals_[n.val_off];
          if (nv >= kTinyNorm) {
            auto va = value(n.a);
            for (std::size_t i = 0; i < va.size(); ++i)
              grad_at(n.a)[i] += g[0] * va[i] / nv;
          }
          break;
        }
        case Op::sadd:
          grad_at(n.a)[0] += g[0];
          grad_at(n.b)[0] += g[0];
          break;
        case Op::ssub:
          grad_at(n.a)[0] += g[0];
          grad_at(n.b)[0] -= g[0];
          break;
        case Op::smul:
          grad_at(n.a)[0] += g[0] * vals_[node(n.b).val_off];
          grad_at(n.b)[0] += g[0] * vals_[node(n.a).val_off];
          break;
        case Op::sdiv: {
          const double av = vals_[node(n.a).val_off];
          const double bv = vals_[node(n.b).val_off];
          grad_at(n.a)[0] += g[0] / bv;
          grad_at(n.b)[0] -= g[0] * av / (bv * bv);
          break;
        }
        case Op::sneg:
          grad_at(n.a)[0] -= g[0];
          break;
        case Op::ssquare:
          grad_at(n.a)[0] += g[0] * 2.0 * vals_[node(n.a).val_off];
          break;
        case Op::saddc:
          grad_at(n.a)[0] += g[0];
          break;
        case Op::smulc:
          grad_at(n.a)[0] += g[0] * n.c;
          break;
        case Op::stanh: {
          const double t = vals_[n.val_off];
          grad_at(n.a)[0] += g[0] * (1.0 - t * t);
          break;
        }
        case Op::sartanh:
        case Op::slogsigmoid:
          grad_at(n.a)[0] += g[0] * n.c;
          break;
        case Op::ssum:
          for (uint32_t j = 0; j < n.list_len; ++j)
            grad_at(lists_[n.list_off + j])[0] += g[0];
          break;
      }
    }
  }

 private:
  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Tape: node id out of range");
    return nodes_[id];
  }

  double scalar_of(int id) const {
    check_scalar(id, "scalar operand");
    return vals_[node(id).val_off];
  }

  void check_scalar(int id, const char* what) const {
    if (node(id).len != 1)
      throw std::invalid_argument(std::string("Tape::") + what + ": expected a scalar node");
  }

  void check_same_dim(int a, int b, const char* what) const {
    if (node(a).len != node(b).len)
      throw std::invalid_argument(std::string("Tape::") + what + ": dimension mismatch");
  }

  double* out_ptr(int id) { return vals_.data() + nodes_[id].val_off; }
  double* grad_at(int id) const { return grads_.data() + nodes_[id].val_off; }

  int push(Op op, uint32_t len, int32_t a = -1, int32_t b = -1) {
    if (a != -1) node(a);  // bounds check; inputs always precede the new node
    if (b != -1) node(b);
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.val_off = static_cast<uint32_t>(vals_.size());
    n.len = len;
    vals_.resize(vals_.size() + len);
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void attach_list(int id, std::span<const int> inputs) {
    for (int in : inputs) node(in);
    nodes_[id].list_off = static_cast<uint32_t>(lists_.size());
    nodes_[id].list_len = static_cast<uint32_t>(inputs.size());
    for (int in : inputs) lists_.push_back(in);
  }

  int scalar_bin(Op op, int a, int b, double val) {
    check_scalar(a, "scalar op");
    check_scalar(b, "scalar op");
    int id = push(op, 1, a, b);
    vals_[nodes_[id].val_off] = val;
    return id;
  }

  int scalar_un(Op op, int a, double val) {
    check_scalar(a, "scalar op");
    int id = push(op, 1, a);
    vals_[nodes_[id].val_off] = val;
    return id;
  }

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  mutable std::vector<double> grads_;
  std::vector<int32_t> lists_;
  std::vector<int32_t> masks_;
};

// ---------------------------------------------------------------------------
// Tape composites for the ball operations (origin-based maps only; that is
// all the scoring pipeline uses)

inline int tape_mobius_add(Tape& t, int x, int y, Curvature K) {
  const double k = K.k;
  int xy = t.dot(x, y);
  int x2 = t.dot(x, x);
  int y2 = t.dot(y, y);
  int two_k_xy = t.smulc(xy, 2.0 * k);
  int cx = t.saddc(t.sadd(two_k_xy, t.smulc(y2, k)), 1.0);
  int cy = t.saddc(t.smulc(x2, -k), 1.0);
  int den = t.saddc(t.sadd(two_k_xy, t.smulc(t.smul(x2, y2), k * k)), 1.0);
  int ax = t.vscale(t.sdiv(cx, den), x);
  int by = t.vscale(t.sdiv(cy, den), y);
  return t.vadd(ax, by);
}

// exp_0(v) = tanh(sqrt(K)||v||) v / (sqrt(K)||v||); identity below the tiny
// norm cutoff, mirroring the direct kernel.
inline int tape_exp0(Tape& t, int v, Curvature K) {
  int n = t.norm(v);
  if (t.scalar(n) < kTinyNorm) return v;
  int arg = t.smulc(n, K.sqrt_k());
  int coef = t.sdiv(t.stanh(arg), arg);
  return t.vscale(coef, v);
}

inline int tape_log0(Tape& t, int y, Curvature K) {
  int n = t.norm(y);
  if (t.scalar(n) < kTinyNorm) return y;
  int arg = t.smulc(n, K.sqrt_k());
  int coef = t.sdiv(t.sartanh(arg), arg);
  return t.vscale(coef, y);
}

// Squared geodesic distance ((2/sqrt(K)) artanh(sqrt(K)||(-x) (+) y||))^2.
inline int tape_distance_sq(Tape& t, int x, int y, Curvature K) {
  int diff = tape_mobius_add(t, t.vneg(x), y, K);
  int nd = t.norm(diff);
  int at = t.sartanh(t.smulc(nd, K.sqrt_k()));
  int dist = t.smulc(at, 2.0 / K.sqrt_k());
  return t.ssquare(dist);
}

inline int tape_mobius_matvec_diag(Tape& t, int m, int x, Curvature K) {
  return tape_exp0(t, t.vmul(m, tape_log0(t, x, K)), K);
}

// ---------------------------------------------------------------------------
// Riemannian rescaling and the min-subgradient mask

// grad_R = grad_E / lambda_x^2 = grad_E * (1 - K||x||^2)^2 / 4.
inline Vec riemannian_rescale(std::span<const double> euclid_grad,
                              std::span<const double> x, Curvature K) {
  const double r = 1.0 - K.k * sq_norm(x);
  const double factor = r * r / 4.0;
  Vec out(euclid_grad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * euclid_grad[i];
  return out;
}

inline Vec riemannian_rescale(std::span<const double> euclid_grad, const BallPoint& x,
                              Curvature K) {
  return riemannian_rescale(euclid_grad, std::span<const double>(x.coords), K);
}

// Per coordinate, the index of the input the min routes its gradient to;
// exact ties go to the lowest index.
inline std::vector<int32_t> min_subgradient_mask(std::span<const Vec> inputs) {
  if (inputs.empty()) throw std::invalid_argument("min_subgradient_mask: empty input list");
  const std::size_t d = inputs[0].size();
  for (const Vec& v : inputs)
    if (v.size() != d) throw std::invalid_argument("min_subgradient_mask: dimension mismatch");
  std::vector<int32_t> mask(d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    double best = inputs[0][i];
    for (std::size_t j = 1; j < inputs.size(); ++j) {
      if (inputs[j][i] < best) {
        best = inputs[j][i];
        mask[i] = static_cast<int32_t>(j);
      }
    }
  }
  return mask;
}

}  // namespace hyper2
