#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/losses.hpp"
#include "xview/retrieval.hpp"
#include "xview/rng.hpp"

namespace xview {

// Seeded per-epoch permutation cut into consecutive batches of B; the tail of
// each epoch that does not fill a batch is dropped. Rows are distinct samples,
// so no batch can pair a sample with itself as a negative.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {
    if (batch < 2) throw ParameterError("batch size must be at least 2");
    if (batch > n) {
      throw DataError("batch size " + std::to_string(batch) + " exceeds the " + std::to_string(n) + " training pairs");
    }
  }

  std::vector<std::size_t> next() {
    if (order_.empty() || pos_ + batch_ > n_) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      CounterRng rng(derive_seed(seed_, epoch_++));
      shuffle_in_place(order_, rng);
      pos_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

  std::uint64_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

enum class Phase { exhaustive, hard_negative };

inline const char* phase_name(Phase p) { return p == Phase::exhaustive ? "exhaustive" : "hard_negative"; }

struct MetricRow {
  std::size_t step;
  double loss;
  Phase phase;
};

struct TrainLog {
  std::vector<MetricRow> rows;
  std::vector<std::pair<std::size_t, double>> train_recall;  // (step, recall@1 on a train subset)

  double first_loss() const { return rows.empty() ? 0.0 : rows.front().loss; }
  double last_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
  // Mean loss over the first / last `n` logged steps.
  double mean_head(std::size_t n) const { return mean_range(0, std::min(n, rows.size())); }
  double mean_tail(std::size_t n) const {
    const std::size_t k = std::min(n, rows.size());
    return mean_range(rows.size() - k, rows.size());
  }

 private:
  double mean_range(std::size_t a, std::size_t b) const {
    if (a >= b) return 0.0;
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += rows[i].loss;
    return s / static_cast<double>(b - a);
  }
};

inline void write_metrics_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "step,loss,phase\n";
  for (const auto& r : log.rows) out << r.step << ',' << fixed6(r.loss) << ',' << phase_name(r.phase) << '\n';
}

inline void require_finite_loss(double loss, std::size_t step) {
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
}

// Exhaustive triplets for the first `steps_exhaustive` steps, then hard
// negatives mined from the current batch distances.
inline TripletBatch triplets_for(Phase phase, const Tensor& query, const Tensor& ref, DistanceMode mode) {
  if (phase == Phase::exhaustive) return enumerate_exhaustive_triplets(query.dim(0));
  return mine_hard_negatives(pairwise_distances(query, ref, mode));
}

}  // namespace xview
