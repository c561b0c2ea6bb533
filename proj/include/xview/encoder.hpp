#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/init.hpp"
#include "xview/ops.hpp"
#include "xview/rng.hpp"
#include "xview/tape.hpp"
#include "xview/tensor.hpp"

namespace xview {

struct ConvBlock {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 0;

  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

// Layer stack for one view. Blocks are conv -> ReLU, with dropout after the
// last `dropout_blocks` of them; `tap_layers` are the (0-based) blocks whose
// post-dropout maps feed the embedding FC.
struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::vector<ConvBlock> conv_blocks;
  std::vector<std::size_t> tap_layers;
  std::size_t dropout_blocks = 3;
  double dropout_p = 0.5;
  std::size_t embed_dim = 64;
  bool multiscale = true;
  bool use_gap = false;
  bool normalize = false;
  InitSpec init = InitSpec::xavier(0);

  // Four blocks, channels 16/32/32/64, 3x3 stride 2, taps on the last three.
  static EncoderConfig toy(std::size_t channels, std::size_t height, std::size_t width,
                           std::size_t embed_dim = 64, std::size_t padding = 1) {
    EncoderConfig cfg;
    cfg.in_channels = channels;
    cfg.in_height = height;
    cfg.in_width = width;
    for (std::size_t c : {16, 32, 32, 64}) cfg.conv_blocks.push_back({c, 3, 2, padding});
    cfg.tap_layers = {1, 2, 3};
    cfg.embed_dim = embed_dim;
    return cfg;
  }

  // Eight 4x4 stride-2 blocks (padding 1), taps on the last three; needs
  // inputs of at least 256 px per side.
  static EncoderConfig full_depth(std::size_t channels, std::size_t height, std::size_t width,
                                  std::size_t embed_dim = 1000) {
    EncoderConfig cfg;
    cfg.in_channels = channels;
    cfg.in_height = height;
    cfg.in_width = width;
    for (std::size_t c : {64, 128, 256, 512, 512, 512, 512, 512}) cfg.conv_blocks.push_back({c, 4, 2, 1});
    cfg.tap_layers = {5, 6, 7};
    cfg.embed_dim = embed_dim;
    return cfg;
  }

  // Single-scale ablation: only the last block is tapped.
  EncoderConfig single_scale() const {
    EncoderConfig cfg = *this;
    cfg.multiscale = false;
    cfg.tap_layers = {conv_blocks.size() - 1};
    return cfg;
  }

  // Fields that determine parameter shapes.
  bool structurally_equal(const EncoderConfig& o) const {
    return in_channels == o.in_channels && in_height == o.in_height && in_width == o.in_width &&
           conv_blocks == o.conv_blocks && tap_layers == o.tap_layers && embed_dim == o.embed_dim &&
           multiscale == o.multiscale && use_gap == o.use_gap;
  }
};

// Output shape (C, H, W) of every block for a config; validates the stack.
inline std::vector<Shape> block_shapes(const EncoderConfig& cfg) {
  if (cfg.conv_blocks.empty()) throw ConfigError("encoder: at least one conv block is required");
  if (cfg.embed_dim < 1) throw ConfigError("encoder: embed_dim must be >= 1");
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) throw ParameterError("encoder: dropout p must lie in [0, 1)");
  if (cfg.tap_layers.empty()) throw ConfigError("encoder: at least one tap layer is required");
  for (std::size_t t : cfg.tap_layers) {
    if (t >= cfg.conv_blocks.size()) {
      throw ConfigError("encoder: tap layer " + std::to_string(t) + " is not a valid block index");
    }
  }
  if (!std::is_sorted(cfg.tap_layers.begin(), cfg.tap_layers.end()) ||
      std::adjacent_find(cfg.tap_layers.begin(), cfg.tap_layers.end()) != cfg.tap_layers.end()) {
    throw ConfigError("encoder: tap layers must be strictly increasing");
  }
  if (!cfg.multiscale &&
      (cfg.tap_layers.size() != 1 || cfg.tap_layers.front() != cfg.conv_blocks.size() - 1)) {
    throw ConfigError("encoder: single-scale mode taps exactly the last block");
  }
  std::vector<Shape> shapes;
  std::size_t c = cfg.in_channels, h = cfg.in_height, w = cfg.in_width;
  for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
    const ConvBlock& b = cfg.conv_blocks[i];
    if (b.stride == 0 || b.kernel == 0 || b.out_channels == 0) {
      throw ConfigError("encoder: block " + std::to_string(i) + " has a zero-sized parameter");
    }
    if (h + 2 * b.padding < b.kernel || w + 2 * b.padding < b.kernel) {
      throw DimensionError("encoder: input " + std::to_string(h) + "x" + std::to_string(w) +
                           " too small for block " + std::to_string(i) + " (kernel " +
                           std::to_string(b.kernel) + ")");
    }
    h = conv_output_size(h, b.kernel, b.stride, b.padding);
    w = conv_output_size(w, b.kernel, b.stride, b.padding);
    c = b.out_channels;
    shapes.push_back({c, h, w});
  }
  return shapes;
}

// Width of the concatenated tap features feeding the FC.
inline std::size_t fc_input_dim(const EncoderConfig& cfg) {
  const auto shapes = block_shapes(cfg);
  std::size_t total = 0;
  for (std::size_t t : cfg.tap_layers) total += cfg.use_gap ? shapes[t][0] : shape_numel(shapes[t]);
  return total;
}

// Adds the encoder's parameters to `store`. Every tensor is seeded by its own
// name, so conv weights do not depend on tap/GAP settings.
inline void init_encoder_params(const EncoderConfig& cfg, ParamStore& store) {
  const auto shapes = block_shapes(cfg);
  std::size_t c_in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
    const ConvBlock& b = cfg.conv_blocks[i];
    const std::string prefix = "conv" + std::to_string(i);
    store.add(prefix + ".weight", initialize({b.out_channels, c_in, b.kernel, b.kernel}, cfg.init, prefix + ".weight"));
    store.add(prefix + ".bias", Tensor({b.out_channels}));
    c_in = b.out_channels;
  }
  store.add("fc.weight", initialize({fc_input_dim(cfg), cfg.embed_dim}, cfg.init, "fc.weight"));
  store.add("fc.bias", Tensor({cfg.embed_dim}));
}

class Encoder {
 public:
  Encoder(EncoderConfig cfg, std::shared_ptr<ParamStore> store, std::uint64_t dropout_seed)
      : cfg_(std::move(cfg)), store_(std::move(store)) {
    shapes_ = block_shapes(cfg_);
    fc_in_ = xview::fc_input_dim(cfg_);
    const std::size_t n = cfg_.conv_blocks.size();
    const std::size_t first_dropout = n > cfg_.dropout_blocks ? n - cfg_.dropout_blocks : 0;
    for (std::size_t i = first_dropout; i < n; ++i) {
      sites_.push_back({derive_seed(dropout_seed, "dropout" + std::to_string(i)), 0, false});
    }
    first_dropout_ = first_dropout;
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return *store_; }
  const ParamStore& params() const noexcept { return *store_; }
  const std::shared_ptr<ParamStore>& shared_params() const noexcept { return store_; }
  std::size_t fc_input_dim() const noexcept { return fc_in_; }
  const std::vector<Shape>& block_output_shapes() const noexcept { return shapes_; }

  // Replays the same dropout masks on every call (for gradient checks).
  void freeze_dropout(bool frozen) {
    for (auto& s : sites_) s.frozen = frozen;
  }

  // images: N x C x H x W -> N x embed_dim. Train mode consumes dropout masks.
  Var forward(Tape& tape, Var images, Mode mode) { return run(tape, images, mode, true); }

  // Eval-mode embedding; a pure function of (weights, input).
  Tensor encode(const Tensor& images) const {
    Tape tape;
    Var out = run(tape, tape.constant(images), Mode::eval, false);
    return tape.value(out);
  }

  Tensor encode(const Tensor& images, Mode mode) {
    Tape tape;
    Var out = forward(tape, tape.constant(images), mode);
    return tape.value(out);
  }

  // Eval-mode embedding in chunks of `chunk` rows, concatenated in input order.
  Tensor encode_batched(const Tensor& images, std::size_t chunk = 64) const {
    std::vector<Tensor> parts;
    const std::size_t n = images.dim(0);
    for (std::size_t start = 0; start < n; start += chunk) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
      parts.push_back(encode(gather_rows(images, idx)));
    }
    return concat_rows(parts);
  }

 private:
  // Eval mode never touches the dropout sites. Without `track_params` the
  // weights enter the tape as constants and no reverse pass is recorded.
  Var run(Tape& tape, Var images, Mode mode, bool track_params) const {
    auto param = [&](const std::string& name) {
      Parameter& p = store_->get(name);
      return track_params ? tape.parameter(p) : tape.constant(p.value);
    };
    const Tensor& x = tape.value(images);
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.in_height || x.dim(3) != cfg_.in_width) {
      throw DimensionError("encoder expects N x " + std::to_string(cfg_.in_channels) + " x " +
                           std::to_string(cfg_.in_height) + " x " + std::to_string(cfg_.in_width) +
                           " input, got " + shape_str(x.shape()));
    }
    std::vector<Var> taps;
    Var h = images;
    for (std::size_t i = 0; i < cfg_.conv_blocks.size(); ++i) {
      const ConvBlock& b = cfg_.conv_blocks[i];
      const std::string prefix = "conv" + std::to_string(i);
      Var w = param(prefix + ".weight");
      Var bias = param(prefix + ".bias");
      h = relu(tape, conv2d(tape, h, w, bias, {b.stride, b.padding}));
      if (i >= first_dropout_) h = dropout(tape, h, cfg_.dropout_p, mode, sites_[i - first_dropout_]);
      if (std::find(cfg_.tap_layers.begin(), cfg_.tap_layers.end(), i) != cfg_.tap_layers.end()) {
        taps.push_back(cfg_.use_gap ? gap(tape, h) : flatten(tape, h));
      }
    }
    Var features = taps.size() == 1 ? taps.front() : concat(tape, taps);
    Var out = linear(tape, features, param("fc.weight"), param("fc.bias"));
    return cfg_.normalize ? l2_normalize_rows(tape, out) : out;
  }

  EncoderConfig cfg_;
  std::shared_ptr<ParamStore> store_;
  std::vector<Shape> shapes_;
  std::size_t fc_in_ = 0;
  std::size_t first_dropout_ = 0;
  mutable std::vector<DropoutSite> sites_;
};

inline Encoder build_encoder(const EncoderConfig& cfg, std::uint64_t dropout_seed = 0) {
  auto store = std::make_shared<ParamStore>();
  init_encoder_params(cfg, *store);
  return Encoder(cfg, std::move(store), dropout_seed ? dropout_seed : derive_seed(cfg.init.seed, "dropout"));
}

// Deep copy of values into a fresh store (optimizer state reset).
inline std::shared_ptr<ParamStore> clone_values(const ParamStore& src) {
  auto out = std::make_shared<ParamStore>();
  for (const auto& [name, p] : src) out->add(name, p.value);
  return out;
}

// Query-side and reference-side encoders trained on image pairs. For the
// (ground, aerial) baseline the query encoder sees ground panoramas; for the
// (synthesized, aerial) baseline it sees synthesized aerial images.
struct TwoStreamModel {
  Encoder query;
  Encoder reference;
  bool share_cross_view_weights = false;

  std::vector<ParamStore*> stores() {
    if (share_cross_view_weights) return {&query.params()};
    return {&query.params(), &reference.params()};
  }
  std::size_t parameter_count() const {
    return share_cross_view_weights ? query.params().scalar_count()
                                    : query.params().scalar_count() + reference.params().scalar_count();
  }
};

inline TwoStreamModel build_two_stream(EncoderConfig cfg_query, EncoderConfig cfg_ref, bool share,
                                       std::uint64_t seed) {
  cfg_query.init.seed = derive_seed(seed, "query");
  cfg_ref.init.seed = derive_seed(seed, "reference");
  if (share) {
    if (!cfg_query.structurally_equal(cfg_ref)) {
      throw ConfigError("weight sharing requires structurally identical query and reference encoders");
    }
    auto store = std::make_shared<ParamStore>();
    init_encoder_params(cfg_query, *store);
    return TwoStreamModel{Encoder(cfg_query, store, derive_seed(seed, "query-dropout")),
                          Encoder(cfg_ref, store, derive_seed(seed, "reference-dropout")), true};
  }
  return TwoStreamModel{build_encoder(cfg_query, derive_seed(seed, "query-dropout")),
                        build_encoder(cfg_ref, derive_seed(seed, "reference-dropout")), false};
}

// Ground encoder plus one aerial encoder applied to both real and synthesized
// aerial images, so f_synth and f_aerial always come from the same weights.
struct JointModel {
  Encoder ground;
  Encoder aerial;

  std::vector<ParamStore*> stores() { return {&ground.params(), &aerial.params()}; }
};

// Copies `src` into a fresh store shaped by `cfg`, failing on the first
// parameter whose name or shape does not line up.
inline std::shared_ptr<ParamStore> copy_compatible(const EncoderConfig& cfg, const ParamStore& src,
                                                   const std::string& what) {
  ParamStore expected;
  init_encoder_params(cfg, expected);
  auto out = std::make_shared<ParamStore>();
  for (const auto& [name, p] : expected) {
    if (!src.contains(name)) throw CheckpointError(what + ": missing parameter '" + name + "'");
    const Tensor& v = src.get(name).value;
    if (v.shape() != p.value.shape()) {
      throw CheckpointError(what + ": parameter '" + name + "' has shape " + shape_str(v.shape()) +
                            ", expected " + shape_str(p.value.shape()));
    }
    out->add(name, v);
  }
  for (const auto& [name, _] : src) {
    if (!expected.contains(name)) throw CheckpointError(what + ": unexpected parameter '" + name + "'");
  }
  return out;
}

// Joint model initialized from a trained (ground, aerial) two-stream model.
// Values are copied; Adam moments and step counters start fresh.
inline JointModel warm_start_joint(const TwoStreamModel& source, const EncoderConfig& ground_cfg,
                                   const EncoderConfig& aerial_cfg, std::uint64_t seed) {
  auto g = copy_compatible(ground_cfg, source.query.params(), "warm start (ground)");
  auto a = copy_compatible(aerial_cfg, source.reference.params(), "warm start (aerial)");
  return JointModel{Encoder(ground_cfg, g, derive_seed(seed, "ground-dropout")),
                    Encoder(aerial_cfg, a, derive_seed(seed, "aerial-dropout"))};
}

inline JointModel warm_start_joint(const TwoStreamModel& source, std::uint64_t seed) {
  return warm_start_joint(source, source.query.config(), source.reference.config(), seed);
}

}  // namespace xview
