#pragma once

#include <algorithm>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xview/adam.hpp"
#include "xview/config.hpp"
#include "xview/dataset.hpp"
#include "xview/encoder.hpp"
#include "xview/error.hpp"
#include "xview/fusion.hpp"
#include "xview/io.hpp"
#include "xview/losses.hpp"
#include "xview/retrieval.hpp"
#include "xview/schedule.hpp"

namespace xview {

// Which embedding a trained model produces for a split.
//   query:     ground (baseline-ga, joint), synthesized (baseline-synth),
//              fused ground+synthesized (fusion)
//   reference: aerial, projected for fusion
//   synth:     aerial encoder applied to synthesized images (joint, fusion)
enum class Role { query, reference, synth };

inline Role parse_role(const std::string& s) {
  if (s == "query") return Role::query;
  if (s == "reference") return Role::reference;
  if (s == "synth") return Role::synth;
  throw ConfigError("unknown role '" + s + "' (expected query, reference or synth)");
}

inline bool stage_needs_synth(Stage s) { return s != Stage::baseline_ga; }

// The model behind any stage: a two-stream pair, a joint pair, or a joint
// pair plus fusion heads.
struct StageModel {
  StageConfig cfg;
  std::optional<TwoStreamModel> two_stream;
  std::optional<JointModel> joint;
  std::optional<FusionModel> fusion;

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.stage = stage_name(cfg.stage);
    ck.seed = cfg.seed;
    ck.config_digest = cfg.config_digest;
    ck.config_text = to_text(cfg);
    if (two_stream) {
      ck.add_store("query.", two_stream->query.params());
      ck.add_store("reference.", two_stream->reference.params());
    }
    if (joint) {
      ck.add_store("ground.", joint->ground.params());
      ck.add_store("aerial.", joint->aerial.params());
    }
    if (fusion) ck.add_store("fusion.", fusion->params());
    return ck;
  }

  Tensor embed(Role role, const PairedData& d) const {
    auto need_synth = [&]() -> const Tensor& {
      if (!d.synth) throw DataError("sample '" + d.ids.front() + "' has no synthesized image");
      return *d.synth;
    };
    if (two_stream) {
      if (role == Role::reference) return two_stream->reference.encode_batched(d.aerial);
      if (role == Role::synth) throw ConfigError("two-stream models have no synth role");
      return two_stream->query.encode_batched(cfg.stage == Stage::baseline_synth ? need_synth() : d.ground);
    }
    if (!joint) throw StateError("empty model");
    if (!fusion) {
      switch (role) {
        case Role::query: return joint->ground.encode_batched(d.ground);
        case Role::reference: return joint->aerial.encode_batched(d.aerial);
        case Role::synth: return joint->aerial.encode_batched(need_synth());
      }
    }
    switch (role) {
      case Role::query:
        return fuse_query(joint->ground.encode_batched(d.ground), joint->aerial.encode_batched(need_synth()), *fusion);
      case Role::reference: return project_reference(joint->aerial.encode_batched(d.aerial), *fusion);
      case Role::synth: return joint->aerial.encode_batched(need_synth());
    }
    throw StateError("unreachable");
  }
};

namespace detail {

inline ImageShape query_shape(const StageConfig& c) {
  return c.stage == Stage::baseline_synth ? c.aerial_shape : c.ground_shape;
}

inline JointModel joint_from_checkpoint(const StageConfig& cfg, const Checkpoint& ck, const std::string& gp,
                                        const std::string& ap) {
  const EncoderConfig gcfg = encoder_config(cfg, cfg.ground_shape);
  const EncoderConfig acfg = encoder_config(cfg, cfg.aerial_shape);
  auto g = copy_compatible(gcfg, ck.extract(gp), "checkpoint (ground)");
  auto a = copy_compatible(acfg, ck.extract(ap), "checkpoint (aerial)");
  return JointModel{Encoder(gcfg, g, derive_seed(cfg.seed, "joint-ground-dropout")),
                    Encoder(acfg, a, derive_seed(cfg.seed, "joint-aerial-dropout"))};
}

}  // namespace detail

// Rebuilds a model from a checkpoint's stored config and tensors.
inline StageModel model_from_checkpoint(const Checkpoint& ck) {
  StageModel m;
  m.cfg = from_text(ck.config_text);
  m.cfg.config_digest = ck.config_digest;
  if (stage_name(m.cfg.stage) != ck.stage) throw CheckpointError("checkpoint stage tag disagrees with its config");
  if (!m.cfg.ground_shape.known() || !m.cfg.aerial_shape.known()) {
    throw CheckpointError("checkpoint config lacks the input shapes");
  }
  switch (m.cfg.stage) {
    case Stage::baseline_ga:
    case Stage::baseline_synth: {
      const EncoderConfig qcfg = encoder_config(m.cfg, detail::query_shape(m.cfg));
      const EncoderConfig rcfg = encoder_config(m.cfg, m.cfg.aerial_shape);
      auto q = copy_compatible(qcfg, ck.extract("query."), "checkpoint (query)");
      auto r = m.cfg.share_weights ? q : copy_compatible(rcfg, ck.extract("reference."), "checkpoint (reference)");
      const std::uint64_t s = derive_seed(m.cfg.seed, stage_name(m.cfg.stage));
      m.two_stream = TwoStreamModel{Encoder(qcfg, q, derive_seed(s, "query-dropout")),
                                    Encoder(rcfg, r, derive_seed(s, "reference-dropout")), m.cfg.share_weights};
      break;
    }
    case Stage::joint:
      m.joint = detail::joint_from_checkpoint(m.cfg, ck, "ground.", "aerial.");
      break;
    case Stage::fusion:
      m.joint = detail::joint_from_checkpoint(m.cfg, ck, "ground.", "aerial.");
      m.fusion = fusion_from_store(std::make_shared<ParamStore>(ck.extract("fusion.")));
      if (m.fusion->embed_dim != m.cfg.embed_dim) throw CheckpointError("fusion heads do not match embed_dim");
      break;
  }
  return m;
}

struct StageResult {
  StageModel model;
  TrainLog log;
  Checkpoint checkpoint() const { return model.to_checkpoint(); }
};

namespace detail {

using StepFn = std::function<Var(Tape&, const std::vector<std::size_t>&, Phase)>;
using RecallFn = std::function<double()>;

// Shared exhaustive -> hard-negative loop. `stores` may repeat (shared
// weights); each distinct store gets one Adam step per iteration.
inline TrainLog run_loop(const StageConfig& cfg, std::size_t n, std::vector<ParamStore*> stores, const StepFn& step_fn,
                         const RecallFn& recall_fn) {
  std::vector<ParamStore*> unique;
  for (ParamStore* s : stores)
    if (std::find(unique.begin(), unique.end(), s) == unique.end()) unique.push_back(s);
  BatchSampler sampler(n, cfg.batch, derive_seed(cfg.seed, "sampler-" + stage_name(cfg.stage)));
  const AdamConfig adam{cfg.lr};
  TrainLog log;
  for (ParamStore* s : unique) s->zero_grad();
  const std::size_t total = cfg.steps_exhaustive + cfg.steps_hard_negative;
  for (std::size_t step = 1; step <= total; ++step) {
    const Phase phase = step <= cfg.steps_exhaustive ? Phase::exhaustive : Phase::hard_negative;
    Tape tape;
    Var loss = step_fn(tape, sampler.next(), phase);
    const double lv = tape.value(loss).item();
    require_finite_loss(lv, step);
    tape.backward(loss);
    for (ParamStore* s : unique) {
      adam_step(*s, adam);
      s->zero_grad();
    }
    log.rows.push_back({step, lv, phase});
    if (cfg.eval_every && recall_fn && (step % cfg.eval_every == 0 || step == total)) {
      log.train_recall.emplace_back(step, recall_fn());
    }
  }
  return log;
}

inline double subset_recall1(const Tensor& q, const Tensor& r) {
  std::vector<std::size_t> gt(q.dim(0));
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = i;
  return recall_at_k(pairwise_distances(q, r), gt, 1);
}

inline std::vector<std::size_t> head_indices(std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(std::min(n, k));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

// Fusion heads on top of a frozen joint model. The extractor runs in eval mode
// and its embeddings are computed once; encoder weights are never touched.
inline TrainLog train_fusion(FusionModel& m, const JointModel& frozen, const PairedData& data,
                             const FusionTrainConfig& cfg) {
  if (data.size() == 0) throw DataError("no training pairs");
  if (!data.synth) throw DataError("sample '" + data.ids.front() + "' has no synthesized image");
  const Tensor fg = frozen.ground.encode_batched(data.ground);
  const Tensor fs = frozen.aerial.encode_batched(*data.synth);
  const Tensor fa = frozen.aerial.encode_batched(data.aerial);
  return train_fusion_heads(m, fg, fs, fa, cfg);
}

// Trains one stage on `data`. joint needs a baseline-ga checkpoint and fusion
// a joint checkpoint; baseline-synth, joint and fusion need synthesized images.
inline StageResult run_stage(StageConfig cfg, const PairedData& data, const std::optional<Checkpoint>& warm = std::nullopt) {
  cfg.validate();
  if (data.size() == 0) throw DataError("no training pairs");
  cfg.ground_shape = data.ground_shape();
  cfg.aerial_shape = data.aerial_shape();
  if (stage_needs_synth(cfg.stage) && !data.synth) {
    throw DataError("sample '" + data.ids.front() + "' has no synthesized image (stage " + stage_name(cfg.stage) + ")");
  }
  auto require_warm = [&](const char* tag) -> const Checkpoint& {
    if (!warm) {
      throw StageError(stage_name(cfg.stage) + " stage requires a " + tag + " checkpoint to warm-start from");
    }
    if (warm->stage != tag) {
      throw StageError(stage_name(cfg.stage) + " stage requires a " + tag + " checkpoint, got a '" + warm->stage + "' one");
    }
    if (warm->config_digest != cfg.config_digest) {
      throw CheckpointError("warm-start checkpoint was trained under a different config (digest mismatch)");
    }
    return *warm;
  };
  const auto eval_idx = detail::head_indices(data.size(), 100);

  StageResult res;
  res.model.cfg = cfg;
  switch (cfg.stage) {
    case Stage::baseline_ga:
    case Stage::baseline_synth: {
      const Tensor& q_imgs = cfg.stage == Stage::baseline_ga ? data.ground : *data.synth;
      auto model = build_two_stream(encoder_config(cfg, detail::query_shape(cfg)),
                                    encoder_config(cfg, cfg.aerial_shape), cfg.share_weights,
                                    derive_seed(cfg.seed, stage_name(cfg.stage)));
      auto step = [&](Tape& tape, const std::vector<std::size_t>& idx, Phase phase) {
        Var q = model.query.forward(tape, tape.constant(gather_rows(q_imgs, idx)), Mode::train);
        Var r = model.reference.forward(tape, tape.constant(gather_rows(data.aerial, idx)), Mode::train);
        const TripletBatch tb = triplets_for(phase, tape.value(q), tape.value(r), cfg.loss.distance);
        return batch_loss(tape, q, r, tb, cfg.loss);
      };
      auto recall = [&]() {
        return detail::subset_recall1(model.query.encode(gather_rows(q_imgs, eval_idx)),
                                      model.reference.encode(gather_rows(data.aerial, eval_idx)));
      };
      res.log = detail::run_loop(cfg, data.size(), model.stores(), step, recall);
      res.model.two_stream = std::move(model);
      break;
    }
    case Stage::joint: {
      const Checkpoint& ck = require_warm("baseline-ga");
      JointModel model = detail::joint_from_checkpoint(cfg, ck, "query.", cfg.share_weights ? "query." : "reference.");
      const Tensor& synth = *data.synth;
      auto step = [&](Tape& tape, const std::vector<std::size_t>& idx, Phase phase) {
        Var g = model.ground.forward(tape, tape.constant(gather_rows(data.ground, idx)), Mode::train);
        Var s = model.aerial.forward(tape, tape.constant(gather_rows(synth, idx)), Mode::train);
        Var a = model.aerial.forward(tape, tape.constant(gather_rows(data.aerial, idx)), Mode::train);
        const TripletBatch tg = triplets_for(phase, tape.value(g), tape.value(a), cfg.loss.distance);
        const TripletBatch ts = triplets_for(phase, tape.value(s), tape.value(a), cfg.loss.distance);
        return joint_loss(tape, g, s, a, tg, ts, cfg.loss);
      };
      auto recall = [&]() {
        return detail::subset_recall1(model.ground.encode(gather_rows(data.ground, eval_idx)),
                                      model.aerial.encode(gather_rows(data.aerial, eval_idx)));
      };
      res.log = detail::run_loop(cfg, data.size(), model.stores(), step, recall);
      res.model.joint = std::move(model);
      break;
    }
    case Stage::fusion: {
      const Checkpoint& ck = require_warm("joint");
      JointModel frozen = detail::joint_from_checkpoint(cfg, ck, "ground.", "aerial.");
      FusionModel fusion = init_fusion(cfg.embed_dim, derive_seed(cfg.seed, "fusion"));
      FusionTrainConfig fc{cfg.batch, cfg.steps_exhaustive, cfg.steps_hard_negative, cfg.lr, cfg.loss, cfg.seed,
                           cfg.eval_every};
      res.log = train_fusion(fusion, frozen, data, fc);
      res.model.joint = std::move(frozen);
      res.model.fusion = std::move(fusion);
      break;
    }
  }
  return res;
}

// Held-out top-1 of a model's (query, reference) embeddings, matched by row.
inline RecallReport evaluate(const StageModel& m, const PairedData& test, const std::vector<std::size_t>& ks = {1}) {
  const Tensor q = m.embed(Role::query, test);
  const Tensor r = m.embed(Role::reference, test);
  std::vector<std::size_t> gt(test.size());
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = i;
  return recall_report(pairwise_distances(q, r), gt, ks);
}

}  // namespace xview
