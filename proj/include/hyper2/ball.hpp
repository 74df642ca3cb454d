#pragma once

#include <cmath>
#include <utility>

#include "hyper2/common.hpp"

// Poincare-ball kernel: Mobius addition, exp/log maps, geodesic distance,
// conformal factors and the boundary projection. All arithmetic is double
// precision; the clamps below keep artanh/tanh compositions finite near the
// boundary, where the raw formulas blow up.

namespace hyper2 {

// Margin kept between any stored point and the ball boundary: after
// projection, k * ||x||^2 <= (1 - kBallMargin)^2.
inline constexpr double kBallMargin = 1e-5;

// artanh arguments are clamped to [-kArtanhMax, kArtanhMax]; beyond the
// clamp the value (and any derivative taken through it) is constant.
inline constexpr double kArtanhMax = 1.0 - 1e-10;

// Norms below this are treated as exactly zero in the exp/log maps,
// removing the 0/0 the closed forms leave implicit.
inline constexpr double kTinyNorm = 1e-15;

// Curvature K > 0 of a ball of radius 1/sqrt(K).
struct Curvature {
  double k = 1.0;
  Curvature() = default;
  explicit Curvature(double value) : k(value) {
    if (!(value > 0.0) || !std::isfinite(value))
      throw config_error("curvature must be positive and finite");
  }
  double sqrt_k() const { return std::sqrt(k); }
};

// A point strictly inside the ball: k * ||coords||^2 < 1.
struct BallPoint {
  Vec coords;
  std::size_t dim() const { return coords.size(); }
};

// Tangent vector; the base point it is tangent at is tracked by the caller.
struct TangentVec {
  Vec coords;
  std::size_t dim() const { return coords.size(); }
};

inline double artanh_clamped(double t) {
  if (t > kArtanhMax) t = kArtanhMax;
  if (t < -kArtanhMax) t = -kArtanhMax;
  return std::atanh(t);
}

// lambda_x^K = 2 / (1 - K ||x||^2); equals 2 at the origin and grows toward
// the boundary. Reduces to 2 / (1 - ||x||^2) at K = 1.
inline double conformal_factor(const BallPoint& x, Curvature K) {
  return 2.0 / (1.0 - K.k * sq_norm(x.coords));
}

// Rescales x onto the ball of radius (1 - kBallMargin)/sqrt(K) if it lies
// outside that bound; points already inside are returned unchanged.
inline BallPoint project_to_ball(Vec x, Curvature K) {
  double n2 = 0.0;
  for (double c : x) {
    if (!std::isfinite(c)) throw numeric_error("project_to_ball: non-finite coordinate");
    n2 += c * c;
  }
  const double bound = 1.0 - kBallMargin;
  if (K.k * n2 > bound * bound) {
    const double scale = bound / (K.sqrt_k() * std::sqrt(n2));
    for (double& c : x) c *= scale;
  }
  return BallPoint{std::move(x)};
}

namespace detail {

// Mobius addition, no boundary projection:
//   x (+)_K y = ((1 + 2K<x,y> + K||y||^2) x + (1 - K||x||^2) y)
//             / (1 + 2K<x,y> + K^2 ||x||^2 ||y||^2)
inline Vec mobius_add_raw(std::span<const double> x, std::span<const double> y,
                          Curvature K) {
  require_same_dim(x, y, "mobius_add");
  const double k = K.k;
  const double xy = dot(x, y);
  const double x2 = sq_norm(x);
  const double y2 = sq_norm(y);
  const double cx = 1.0 + 2.0 * k * xy + k * y2;
  const double cy = 1.0 - k * x2;
  const double den = 1.0 + 2.0 * k * xy + k * k * x2 * y2;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (cx * x[i] + cy * y[i]) / den;
  return out;
}

inline Vec negated(std::span<const double> x) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
  return out;
}

}  // namespace detail

inline BallPoint mobius_add(const BallPoint& x, const BallPoint& y, Curvature K) {
  return project_to_ball(detail::mobius_add_raw(x.coords, y.coords, K), K);
}

// Geodesic distance d(x, y) = (2/sqrt(K)) artanh(sqrt(K) ||(-x) (+) y||).
// Computed on the unprojected Mobius difference so resolution near the
// boundary is not lost; the artanh clamp alone keeps it finite.
inline double distance(const BallPoint& x, const BallPoint& y, Curvature K) {
  const Vec diff = detail::mobius_add_raw(detail::negated(x.coords), y.coords, K);
  const double sk = K.sqrt_k();
  return 2.0 / sk * artanh_clamped(sk * std::sqrt(sq_norm(diff)));
}

inline BallPoint origin(std::size_t dim) { return BallPoint{Vec(dim, 0.0)}; }

// exp_x(v) = x (+) tanh(sqrt(K) lambda_x ||v|| / 2) v / (sqrt(K) ||v||).
// exp_x(0) = x.
inline BallPoint exp_map(const BallPoint& x, const TangentVec& v, Curvature K) {
  require_same_dim(x.coords, v.coords, "exp_map");
  const double nv = std::sqrt(sq_norm(v.coords));
  if (nv < kTinyNorm) return x;
  const double sk = K.sqrt_k();
  const double coef = std::tanh(sk * conformal_factor(x, K) * nv / 2.0) / (sk * nv);
  Vec second(v.coords.size());
  for (std::size_t i = 0; i < second.size(); ++i) second[i] = coef * v.coords[i];
  return project_to_ball(detail::mobius_add_raw(x.coords, second, K), K);
}

// log_x(y) = (2 / (sqrt(K) lambda_x)) artanh(sqrt(K) ||u||) u / ||u||,
// u = (-x) (+) y. Inverse of exp_x; log_x(x) = 0.
inline TangentVec log_map(const BallPoint& x, const BallPoint& y, Curvature K) {
  require_same_dim(x.coords, y.coords, "log_map");
  Vec diff = detail::mobius_add_raw(detail::negated(x.coords), y.coords, K);
  const double nd = std::sqrt(sq_norm(diff));
  if (nd < kTinyNorm) return TangentVec{Vec(x.dim(), 0.0)};
  const double sk = K.sqrt_k();
  const double coef = 2.0 / (sk * conformal_factor(x, K)) * artanh_clamped(sk * nd) / nd;
  for (double& c : diff) c *= coef;
  return TangentVec{std::move(diff)};
}

// At the origin the maps reduce to radial tanh/artanh scalings. The model
// only ever maps through the origin; the general-base forms above exist for
// the optimizer step and for tests.
inline BallPoint exp_map_origin(const TangentVec& v, Curvature K) {
  const double nv = std::sqrt(sq_norm(v.coords));
  if (nv < kTinyNorm) return origin(v.dim());
  const double sk = K.sqrt_k();
  const double coef = std::tanh(sk * nv) / (sk * nv);
  Vec out(v.coords.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coef * v.coords[i];
  return project_to_ball(std::move(out), K);
}

inline TangentVec log_map_origin(const BallPoint& y, Curvature K) {
  const double ny = std::sqrt(sq_norm(y.coords));
  if (ny < kTinyNorm) return TangentVec{Vec(y.dim(), 0.0)};
  const double sk = K.sqrt_k();
  const double coef = artanh_clamped(sk * ny) / (sk * ny);
  Vec out(y.coords.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coef * y.coords[i];
  return TangentVec{std::move(out)};
}

// Diagonal Mobius matrix-vector product: exp_0(m (*) log_0(x)) with (*) the
// element-wise product.
inline BallPoint mobius_matvec_diag(std::span<const double> m, const BallPoint& x,
                                    Curvature K) {
  require_same_dim(m, x.coords, "mobius_matvec_diag");
  TangentVec t = log_map_origin(x, K);
  for (std::size_t i = 0; i < t.coords.size(); ++i) t.coords[i] *= m[i];
  return exp_map_origin(t, K);
}

}  // namespace hyper2
