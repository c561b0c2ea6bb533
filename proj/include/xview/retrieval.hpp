#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xview/error.hpp"
#include "xview/losses.hpp"
#include "xview/tensor.hpp"

namespace xview {

// N x E embeddings with one identifier per row. N may be zero (an empty
// gallery is a valid file), which a Tensor cannot represent, so the values
// live in a flat vector.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<double> values)
      : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
    if (values_.size() != ids_.size() * dim_) {
      throw DimensionError("embedding matrix: " + std::to_string(values_.size()) + " values for " +
                           std::to_string(ids_.size()) + " rows of width " + std::to_string(dim_));
    }
    std::set<std::string> seen;
    for (const auto& id : ids_) {
      if (!seen.insert(id).second) throw DataError("embedding matrix: duplicate id '" + id + "'");
    }
  }

  EmbeddingMatrix(std::vector<std::string> ids, const Tensor& data)
      : EmbeddingMatrix(std::move(ids), data.rank() == 2 ? data.dim(1) : 0, data.values()) {
    if (data.rank() != 2) throw DimensionError("embedding matrix expects a 2-D tensor, got " + shape_str(data.shape()));
  }

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * dim_, dim_);
  }

  Tensor to_tensor() const {
    if (rows() == 0 || dim_ == 0) throw DimensionError("empty embedding matrix has no tensor form");
    return Tensor({rows(), dim_}, values_);
  }

  // Row index of an id, or -1.
  std::ptrdiff_t find(const std::string& id) const {
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

inline Tensor distance_matrix(const EmbeddingMatrix& q, const EmbeddingMatrix& r) {
  if (q.dim() != r.dim()) {
    throw DimensionError("distance_matrix: query width " + std::to_string(q.dim()) + " vs gallery width " +
                         std::to_string(r.dim()));
  }
  if (q.rows() == 0 || r.rows() == 0) throw DimensionError("distance_matrix: empty query or gallery");
  Tensor out({q.rows(), r.rows()});
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < r.rows(); ++j) out.at(i, j) = pair_distance(q.row(i), r.row(j));
  return out;
}

// Zero-based rank of reference `target` in row `i`: the number of references
// that sort before it (smaller distance, or equal distance and lower index).
inline std::size_t rank_of(const Tensor& dist, std::size_t i, std::size_t target) {
  const std::size_t M = dist.dim(1);
  const double d = dist.at(i, target);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < M; ++j) {
    const double v = dist.at(i, j);
    if (v < d || (v == d && j < target)) ++rank;
  }
  return rank;
}

// Closest reference per query row; ties go to the lower index.
inline std::vector<std::size_t> top1_indices(const Tensor& dist) {
  std::vector<std::size_t> out(dist.dim(0));
  for (std::size_t i = 0; i < dist.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < dist.dim(1); ++j)
      if (dist.at(i, j) < dist.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

inline void check_gt(const Tensor& dist, const std::vector<std::size_t>& gt) {
  if (dist.rank() != 2) throw DimensionError("recall: distance matrix must be 2-D");
  if (gt.size() != dist.dim(0)) {
    throw DimensionError("recall: " + std::to_string(gt.size()) + " ground-truth entries for " +
                         std::to_string(dist.dim(0)) + " queries");
  }
  for (std::size_t g : gt)
    if (g >= dist.dim(1)) throw DataError("recall: ground-truth reference index " + std::to_string(g) + " out of range");
}

// Fraction of queries whose true reference is among the K closest.
inline double recall_at_k(const Tensor& dist, const std::vector<std::size_t>& gt, std::size_t k) {
  check_gt(dist, gt);
  if (k < 1 || k > dist.dim(1)) {
    throw ParameterError("recall@K: K=" + std::to_string(k) + " outside [1, " + std::to_string(dist.dim(1)) + "]");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (rank_of(dist, i, gt[i]) < k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

// ceil(M / 100), at least 1.
constexpr std::size_t top_one_percent_k(std::size_t gallery_size) noexcept {
  const std::size_t k = (gallery_size + 99) / 100;
  return k < 1 ? 1 : k;
}

inline double top_one_percent(const Tensor& dist, const std::vector<std::size_t>& gt) {
  return recall_at_k(dist, gt, top_one_percent_k(dist.dim(1)));
}

struct RecallReport {
  std::map<std::size_t, double> recall_at;
  double top_one_percent = 0.0;
  std::size_t top_one_percent_k = 1;
  std::size_t gallery_size = 0;
};

// Ranks each query once and reads every K off the same ranks.
inline RecallReport recall_report(const Tensor& dist, const std::vector<std::size_t>& gt,
                                  const std::vector<std::size_t>& ks) {
  check_gt(dist, gt);
  const std::size_t M = dist.dim(1);
  RecallReport rep;
  rep.gallery_size = M;
  rep.top_one_percent_k = top_one_percent_k(M);
  std::vector<std::size_t> ranks(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) ranks[i] = rank_of(dist, i, gt[i]);
  auto frac = [&](std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t r : ranks) hits += r < k;
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
  };
  for (std::size_t k : ks) {
    if (k < 1 || k > M) throw ParameterError("recall@K: K=" + std::to_string(k) + " outside [1, " + std::to_string(M) + "]");
    rep.recall_at[k] = frac(k);
  }
  rep.top_one_percent = frac(rep.top_one_percent_k);
  return rep;
}

// Matches query ids to gallery ids. With an empty map each query is paired
// with the gallery row carrying the same id.
inline std::vector<std::size_t> resolve_ground_truth(const EmbeddingMatrix& query, const EmbeddingMatrix& gallery,
                                                     const std::map<std::string, std::string>& query_to_ref = {}) {
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < gallery.rows(); ++j) index[gallery.ids()[j]] = j;
  std::vector<std::size_t> gt;
  gt.reserve(query.rows());
  for (const auto& qid : query.ids()) {
    std::string target = qid;
    if (!query_to_ref.empty()) {
      auto it = query_to_ref.find(qid);
      if (it == query_to_ref.end()) throw DataError("no ground-truth entry for query '" + qid + "'");
      target = it->second;
    }
    auto it = index.find(target);
    if (it == index.end()) throw DataError("ground-truth reference '" + target + "' is not in the gallery");
    gt.push_back(it->second);
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Geo-localization

inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoSample {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
};

inline void validate_geo(const GeoSample& g) {
  if (!(g.lat >= -90.0 && g.lat <= 90.0) || !(g.lon >= -180.0 && g.lon <= 180.0)) {
    throw DataError("coordinates out of range for '" + g.id + "': (" + std::to_string(g.lat) + ", " +
                    std::to_string(g.lon) + ")");
  }
}

inline double haversine_m(const GeoSample& a, const GeoSample& b) {
  validate_geo(a);
  validate_geo(b);
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s1 = std::sin(dlat / 2.0), s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * rad) * std::cos(b.lat * rad) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

struct CurvePoint {
  double threshold_m;
  double accuracy;
};

// A query is localized at threshold t when its top-1 reference lies within t
// meters of the query's own position.
inline std::vector<CurvePoint> geolocalize_curve(const Tensor& dist, const std::vector<GeoSample>& query_geos,
                                                 const std::vector<GeoSample>& ref_geos,
                                                 const std::vector<double>& thresholds) {
  if (dist.rank() != 2 || query_geos.size() != dist.dim(0) || ref_geos.size() != dist.dim(1)) {
    throw DimensionError("geolocalize: distance matrix " + shape_str(dist.shape()) + " vs " +
                         std::to_string(query_geos.size()) + " query and " + std::to_string(ref_geos.size()) +
                         " reference positions");
  }
  const auto top1 = top1_indices(dist);
  std::vector<double> err(top1.size());
  for (std::size_t i = 0; i < top1.size(); ++i) err[i] = haversine_m(query_geos[i], ref_geos[top1[i]]);
  std::vector<CurvePoint> out;
  for (double t : thresholds) {
    if (!(t >= 0.0)) throw ParameterError("geolocalize: thresholds must be non-negative");
    std::size_t hits = 0;
    for (double e : err) hits += e <= t;
    out.push_back({t, static_cast<double>(hits) / static_cast<double>(err.size())});
  }
  return out;
}

// Looks up positions by id; a missing id is a data error naming it.
inline std::vector<GeoSample> lookup_geos(const std::vector<std::string>& ids,
                                          const std::map<std::string, GeoSample>& geo) {
  std::vector<GeoSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = geo.find(id);
    if (it == geo.end()) throw DataError("no geo position for id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV reports

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_recall_csv(const std::string& path, const std::vector<std::pair<std::size_t, double>>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "k,recall\n";
  for (const auto& [k, r] : rows) out << k << ',' << fixed6(r) << '\n';
}

inline void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "threshold_m,accuracy\n";
  for (const auto& p : rows) {
    // Integral thresholds print without decimals.
    if (p.threshold_m == std::floor(p.threshold_m) && p.threshold_m < 1e15)
      out << static_cast<long long>(p.threshold_m);
    else
      out << p.threshold_m;
    out << ',' << fixed6(p.accuracy) << '\n';
  }
}

}  // namespace xview
