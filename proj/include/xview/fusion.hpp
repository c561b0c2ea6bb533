#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "xview/adam.hpp"
#include "xview/encoder.hpp"
#include "xview/error.hpp"
#include "xview/init.hpp"
#include "xview/losses.hpp"
#include "xview/ops.hpp"
#include "xview/retrieval.hpp"
#include "xview/schedule.hpp"
#include "xview/tape.hpp"

namespace xview {

// Two linear heads: fc_query maps [f_ground, f_synth] (2E) to E, fc_ref maps
// f_aerial (E) to E. No nonlinearity.
struct FusionModel {
  std::size_t embed_dim = 0;
  std::shared_ptr<ParamStore> store;

  ParamStore& params() { return *store; }
  const ParamStore& params() const { return *store; }
};

inline constexpr double kFusionInitStd = 0.005;

// Weights uniform on +-0.005*sqrt(3) (zero mean, std 0.005); biases zero.
inline FusionModel init_fusion(std::size_t embed_dim, std::uint64_t seed) {
  if (embed_dim < 1) throw ParameterError("fusion: embed_dim must be >= 1");
  FusionModel m{embed_dim, std::make_shared<ParamStore>()};
  const InitSpec spec = InitSpec::uniform_std(kFusionInitStd, seed);
  m.store->add("fc_query.weight", initialize({2 * embed_dim, embed_dim}, spec, "fc_query.weight"));
  m.store->add("fc_query.bias", Tensor({embed_dim}));
  m.store->add("fc_ref.weight", initialize({embed_dim, embed_dim}, spec, "fc_ref.weight"));
  m.store->add("fc_ref.bias", Tensor({embed_dim}));
  return m;
}

// Adopts the fusion.* tensors of a checkpoint-like store.
inline FusionModel fusion_from_store(std::shared_ptr<ParamStore> store) {
  if (!store->contains("fc_ref.weight")) throw CheckpointError("fusion parameters missing 'fc_ref.weight'");
  const std::size_t e = store->get("fc_ref.weight").value.dim(1);
  const std::pair<const char*, Shape> expected[] = {
      {"fc_query.weight", {2 * e, e}}, {"fc_query.bias", {e}}, {"fc_ref.weight", {e, e}}, {"fc_ref.bias", {e}}};
  for (const auto& [name, shape] : expected) {
    if (!store->contains(name)) throw CheckpointError(std::string("fusion parameters missing '") + name + "'");
    if (store->get(name).value.shape() != shape) {
      throw CheckpointError(std::string("fusion parameter '") + name + "' has shape " +
                            shape_str(store->get(name).value.shape()) + ", expected " + shape_str(shape));
    }
  }
  return FusionModel{e, std::move(store)};
}

namespace detail {

inline Var fusion_param(Tape& tape, FusionModel& m, const char* name, bool track) {
  Parameter& p = m.params().get(name);
  return track ? tape.parameter(p) : tape.constant(p.value);
}

inline void check_width(const Tensor& t, std::size_t e, const char* what) {
  if (t.rank() != 2 || t.dim(1) != e) {
    throw DimensionError(std::string(what) + ": expected N x " + std::to_string(e) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace detail

// f_g* = FC([f_ground, f_synth]); ground first.
inline Var fuse_query(Tape& tape, Var f_ground, Var f_synth, FusionModel& m, bool track = true) {
  const Tensor& g = tape.value(f_ground);
  const Tensor& s = tape.value(f_synth);
  detail::check_width(g, m.embed_dim, "fuse_query (ground)");
  detail::check_width(s, m.embed_dim, "fuse_query (synth)");
  if (g.dim(0) != s.dim(0)) throw DimensionError("fuse_query: " + shape_str(g.shape()) + " vs " + shape_str(s.shape()));
  Var x = concat(tape, {f_ground, f_synth});
  return linear(tape, x, detail::fusion_param(tape, m, "fc_query.weight", track),
                detail::fusion_param(tape, m, "fc_query.bias", track));
}

inline Var project_reference(Tape& tape, Var f_aerial, FusionModel& m, bool track = true) {
  detail::check_width(tape.value(f_aerial), m.embed_dim, "project_reference");
  return linear(tape, f_aerial, detail::fusion_param(tape, m, "fc_ref.weight", track),
                detail::fusion_param(tape, m, "fc_ref.bias", track));
}

inline Tensor fuse_query(const Tensor& f_ground, const Tensor& f_synth, const FusionModel& m) {
  detail::check_width(f_ground, m.embed_dim, "fuse_query (ground)");
  detail::check_width(f_synth, m.embed_dim, "fuse_query (synth)");
  if (f_ground.dim(0) != f_synth.dim(0)) {
    throw DimensionError("fuse_query: " + shape_str(f_ground.shape()) + " vs " + shape_str(f_synth.shape()));
  }
  Tape tape;
  Var x = concat(tape, {tape.constant(f_ground), tape.constant(f_synth)});
  return tape.value(linear(tape, x, tape.constant(m.params().get("fc_query.weight").value),
                           tape.constant(m.params().get("fc_query.bias").value)));
}

inline Tensor project_reference(const Tensor& f_aerial, const FusionModel& m) {
  detail::check_width(f_aerial, m.embed_dim, "project_reference");
  Tape tape;
  return tape.value(linear(tape, tape.constant(f_aerial), tape.constant(m.params().get("fc_ref.weight").value),
                           tape.constant(m.params().get("fc_ref.bias").value)));
}

struct FusionTrainConfig {
  std::size_t batch = 30;
  std::size_t steps_exhaustive = 0;
  std::size_t steps_hard_negative = 0;
  double lr = 1e-5;
  LossConfig loss;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // train-subset recall@1 every N steps; 0 = off
};

// Trains the heads on fixed (cached) embeddings of the frozen joint model.
// Only the fusion store changes.
inline TrainLog train_fusion_heads(FusionModel& m, const Tensor& f_ground, const Tensor& f_synth,
                                   const Tensor& f_aerial, const FusionTrainConfig& cfg) {
  detail::check_width(f_ground, m.embed_dim, "train_fusion (ground)");
  detail::check_width(f_synth, m.embed_dim, "train_fusion (synth)");
  detail::check_width(f_aerial, m.embed_dim, "train_fusion (aerial)");
  const std::size_t n = f_ground.dim(0);
  if (f_synth.dim(0) != n || f_aerial.dim(0) != n) throw DimensionError("train_fusion: embedding row counts differ");
  BatchSampler sampler(n, cfg.batch, derive_seed(cfg.seed, "fusion-sampler"));
  const AdamConfig adam{cfg.lr};
  TrainLog log;
  const std::size_t total = cfg.steps_exhaustive + cfg.steps_hard_negative;
  m.params().zero_grad();
  for (std::size_t step = 1; step <= total; ++step) {
    const Phase phase = step <= cfg.steps_exhaustive ? Phase::exhaustive : Phase::hard_negative;
    const auto idx = sampler.next();
    Tape tape;
    Var q = fuse_query(tape, tape.constant(gather_rows(f_ground, idx)), tape.constant(gather_rows(f_synth, idx)), m);
    Var r = project_reference(tape, tape.constant(gather_rows(f_aerial, idx)), m);
    const TripletBatch tb = triplets_for(phase, tape.value(q), tape.value(r), cfg.loss.distance);
    Var loss = batch_loss(tape, q, r, tb, cfg.loss);
    const double lv = tape.value(loss).item();
    require_finite_loss(lv, step);
    tape.backward(loss);
    adam_step(m.params(), adam);
    m.params().zero_grad();
    log.rows.push_back({step, lv, phase});
    if (cfg.eval_every && (step % cfg.eval_every == 0 || step == total)) {
      std::vector<std::size_t> head(std::min<std::size_t>(n, 100));
      for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
      const Tensor q = fuse_query(gather_rows(f_ground, head), gather_rows(f_synth, head), m);
      const Tensor r = project_reference(gather_rows(f_aerial, head), m);
      log.train_recall.emplace_back(step, recall_at_k(pairwise_distances(q, r), head, 1));
    }
  }
  return log;
}

}  // namespace xview
