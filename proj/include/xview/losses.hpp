#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/ops.hpp"
#include "xview/tape.hpp"
#include "xview/tensor.hpp"

namespace xview {

enum class DistanceMode { euclidean, squared_euclidean };

// Smoothing added under the square root so the distance is differentiable at 0.
inline constexpr double kDistanceSmoothing = 1e-12;

struct LossConfig {
  double margin = 0.0;  // margin triplet loss only
  double alpha = 10.0;
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  DistanceMode distance = DistanceMode::euclidean;

  void validate() const {
    if (!(alpha > 0.0)) throw ParameterError("loss: alpha must be positive");
    if (margin < 0.0) throw ParameterError("loss: margin must be non-negative");
    if (lambda1 < 0.0 || lambda2 < 0.0 || !(lambda1 + lambda2 > 0.0)) {
      throw ParameterError("loss: lambdas must be non-negative with a positive sum");
    }
  }
};

// ---------------------------------------------------------------------------
// Scalar forms

inline double pair_distance(std::span<const double> f1, std::span<const double> f2,
                            DistanceMode mode = DistanceMode::euclidean) {
  if (f1.size() != f2.size()) {
    throw DimensionError("pair_distance: dims " + std::to_string(f1.size()) + " and " +
                         std::to_string(f2.size()));
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    const double d = f1[i] - f2[i];
    ss += d * d;
  }
  return mode == DistanceMode::euclidean ? std::sqrt(ss + kDistanceSmoothing) : ss;
}

// ln(1 + e^x) without overflow.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// d/dx softplus(x) = sigmoid(x).
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double triplet_loss(double dp, double dn, double margin) {
  const double v = (margin + dp) - dn;
  return v > 0.0 ? v : 0.0;
}

inline double soft_margin_loss(double dp, double dn) { return softplus(dp - dn); }

// ln(1 + e^{alpha (dp - dn)}), evaluated as softplus(alpha*dp - alpha*dn) so
// that it coincides bit-for-bit with soft_margin_loss on pre-scaled inputs.
inline double weighted_soft_margin_loss(double dp, double dn, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("weighted_soft_margin_loss: alpha must be positive");
  return softplus(alpha * dp - alpha * dn);
}

// ---------------------------------------------------------------------------
// Triplets

enum class Direction { query_to_ref, ref_to_query };

// For query_to_ref the anchor is query row `anchor`, the positive is reference
// row `positive` (== anchor) and the negative is reference row `negative`.
// ref_to_query swaps the roles of the two matrices.
struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
  Direction direction;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct TripletBatch {
  std::vector<Triplet> triples;
  std::size_t batch_size = 0;
};

inline TripletBatch enumerate_exhaustive_triplets(std::size_t batch_size) {
  if (batch_size < 2) throw ParameterError("exhaustive triplets need a batch of at least 2 pairs");
  TripletBatch out;
  out.batch_size = batch_size;
  out.triples.reserve(2 * batch_size * (batch_size - 1));
  for (Direction dir : {Direction::query_to_ref, Direction::ref_to_query})
    for (std::size_t i = 0; i < batch_size; ++i)
      for (std::size_t j = 0; j < batch_size; ++j)
        if (j != i) out.triples.push_back({i, i, j, dir});
  return out;
}

// dist[i][j] = d(query_i, ref_j). One triple per query anchor (row argmin off
// the diagonal) then one per reference anchor (column argmin). Ties -> lowest index.
inline TripletBatch mine_hard_negatives(const Tensor& dist) {
  if (dist.rank() != 2 || dist.dim(0) != dist.dim(1)) {
    throw DimensionError("mine_hard_negatives: expected a square matrix, got " + shape_str(dist.shape()));
  }
  const std::size_t B = dist.dim(0);
  if (B < 2) throw ParameterError("hard-negative mining needs a batch of at least 2 pairs");
  TripletBatch out;
  out.batch_size = B;
  out.triples.reserve(2 * B);
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < B; ++j)
      if (j != i && dist.at(i, j) < dist.at(i, best)) best = j;
    out.triples.push_back({i, i, best, Direction::query_to_ref});
  }
  for (std::size_t j = 0; j < B; ++j) {
    std::size_t best = j == 0 ? 1 : 0;
    for (std::size_t i = 0; i < B; ++i)
      if (i != j && dist.at(i, j) < dist.at(best, j)) best = i;
    out.triples.push_back({j, j, best, Direction::ref_to_query});
  }
  return out;
}

// Pairwise distances between the rows of two N x E / M x E matrices.
inline Tensor pairwise_distances(const Tensor& query, const Tensor& ref, DistanceMode mode = DistanceMode::euclidean) {
  if (query.rank() != 2 || ref.rank() != 2 || query.dim(1) != ref.dim(1)) {
    throw DimensionError("pairwise_distances: " + shape_str(query.shape()) + " vs " + shape_str(ref.shape()));
  }
  Tensor out({query.dim(0), ref.dim(0)});
  for (std::size_t i = 0; i < query.dim(0); ++i)
    for (std::size_t j = 0; j < ref.dim(0); ++j) out.at(i, j) = pair_distance(query.row(i), ref.row(j), mode);
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable forms

// Distance between two E-vectors (or 1 x E rows) as a tape op.
inline Var pair_distance(Tape& tape, Var f1, Var f2, DistanceMode mode = DistanceMode::euclidean) {
  const Tensor& a = tape.value(f1);
  const Tensor& b = tape.value(f2);
  if (a.size() != b.size()) {
    throw DimensionError("pair_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const double d = pair_distance(a.data(), b.data(), mode);
  return tape.record(Tensor::scalar(d), {f1, f2}, [f1, f2, d, mode](Tape& t, const Tensor& g) {
    const Tensor& a = t.value(f1);
    const Tensor& b = t.value(f2);
    const double coef = mode == DistanceMode::euclidean ? g[0] / d : 2.0 * g[0];
    Tensor* ga = t.grad_slot(f1);
    Tensor* gb = t.grad_slot(f2);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double v = coef * (a[i] - b[i]);
      if (ga) (*ga)[i] += v;
      if (gb) (*gb)[i] -= v;
    }
  });
}

// Mean weighted soft-margin loss over the triples. Row i of `query` pairs with
// row i of `ref`.
inline Var batch_loss(Tape& tape, Var query, Var ref, const TripletBatch& triplets, const LossConfig& cfg) {
  cfg.validate();
  if (triplets.triples.empty()) throw ParameterError("batch_loss: empty triplet set");
  const Tensor& q = tape.value(query);
  const Tensor& r = tape.value(ref);
  if (q.rank() != 2 || q.shape() != r.shape()) {
    throw DimensionError("batch_loss: query " + shape_str(q.shape()) + " and reference " +
                         shape_str(r.shape()) + " must be equal B x E matrices");
  }
  const std::size_t B = q.dim(0), E = q.dim(1);
  for (const Triplet& t : triplets.triples) {
    if (t.anchor >= B || t.positive >= B || t.negative >= B) {
      throw DimensionError("batch_loss: triplet index out of range for batch of " + std::to_string(B));
    }
  }
  // dist[i][j] = d(query_i, ref_j) covers both directions.
  auto dist = std::make_shared<Tensor>(pairwise_distances(q, r, cfg.distance));
  auto at = [&](const Triplet& t, std::size_t other) {
    return t.direction == Direction::query_to_ref ? dist->at(t.anchor, other) : dist->at(other, t.anchor);
  };
  const double inv_n = 1.0 / static_cast<double>(triplets.triples.size());
  double total = 0.0;
  for (const Triplet& t : triplets.triples) {
    total += softplus(cfg.alpha * at(t, t.positive) - cfg.alpha * at(t, t.negative));
  }
  const double loss = total * inv_n;

  auto triples = std::make_shared<std::vector<Triplet>>(triplets.triples);
  return tape.record(
      Tensor::scalar(loss), {query, ref}, [query, ref, dist, triples, cfg, inv_n, B, E](Tape& t, const Tensor& g) {
        // d loss / d dist[i][j]
        Tensor gd({B, B});
        for (const Triplet& tr : *triples) {
          const bool fwd = tr.direction == Direction::query_to_ref;
          const std::size_t pi = fwd ? tr.anchor : tr.positive, pj = fwd ? tr.positive : tr.anchor;
          const std::size_t ni = fwd ? tr.anchor : tr.negative, nj = fwd ? tr.negative : tr.anchor;
          const double s = sigmoid(cfg.alpha * dist->at(pi, pj) - cfg.alpha * dist->at(ni, nj));
          const double w = g[0] * inv_n * cfg.alpha * s;
          gd.at(pi, pj) += w;
          gd.at(ni, nj) -= w;
        }
        const Tensor& qv = t.value(query);
        const Tensor& rv = t.value(ref);
        Tensor* gq = t.grad_slot(query);
        Tensor* gr = t.grad_slot(ref);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t j = 0; j < B; ++j) {
            const double w = gd.at(i, j);
            if (w == 0.0) continue;
            const double coef = cfg.distance == DistanceMode::euclidean ? w / dist->at(i, j) : 2.0 * w;
            for (std::size_t e = 0; e < E; ++e) {
              const double v = coef * (qv[i * E + e] - rv[j * E + e]);
              if (gq) (*gq)[i * E + e] += v;
              if (gr) (*gr)[j * E + e] -= v;
            }
          }
      });
}

// lambda1 * L(ground, aerial) + lambda2 * L(synth, aerial); each term uses its
// own triplet set.
inline Var joint_loss(Tape& tape, Var ground, Var synth, Var aerial, const TripletBatch& ground_triplets,
                      const TripletBatch& synth_triplets, const LossConfig& cfg) {
  Var l1 = batch_loss(tape, ground, aerial, ground_triplets, cfg);
  Var l2 = batch_loss(tape, synth, aerial, synth_triplets, cfg);
  return add(tape, scale(tape, l1, cfg.lambda1), scale(tape, l2, cfg.lambda2));
}

inline Var joint_loss(Tape& tape, Var ground, Var synth, Var aerial, const LossConfig& cfg) {
  const std::size_t B = tape.value(ground).dim(0);
  const TripletBatch all = enumerate_exhaustive_triplets(B);
  return joint_loss(tape, ground, synth, aerial, all, all, cfg);
}

}  // namespace xview
