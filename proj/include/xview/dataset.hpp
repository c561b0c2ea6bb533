#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "xview/canny.hpp"
#include "xview/config.hpp"
#include "xview/encoder.hpp"
#include "xview/error.hpp"
#include "xview/image.hpp"
#include "xview/manifest.hpp"
#include "xview/retrieval.hpp"
#include "xview/rng.hpp"
#include "xview/synthproxy.hpp"
#include "xview/tensor.hpp"

namespace xview {

// Aligned image batches for one split: row i of every tensor is sample ids[i].
struct PairedData {
  std::vector<std::string> ids;
  Tensor ground;                // N x C x Hg x Wg
  Tensor aerial;                // N x C x Ha x Wa
  std::optional<Tensor> synth;  // N x C x Ha x Wa
  std::vector<GeoSample> geo;   // empty when the split has no positions

  std::size_t size() const noexcept { return ids.size(); }

  static ImageShape shape_of(const Tensor& t) { return {t.dim(1), t.dim(2), t.dim(3)}; }
  ImageShape ground_shape() const { return shape_of(ground); }
  ImageShape aerial_shape() const { return shape_of(aerial); }

  // Ground and aerial columns exchanged (aerial-to-ground retrieval). The
  // synthesized column is dropped because it depends on the direction.
  PairedData swapped() const {
    PairedData out{ids, aerial, ground, std::nullopt, geo};
    return out;
  }
};

namespace detail {

inline Tensor stack_images(const std::vector<Tensor>& imgs) {
  std::vector<Tensor> rows;
  rows.reserve(imgs.size());
  for (const auto& t : imgs) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    rows.push_back(t.reshaped(s));
  }
  return concat_rows(rows);
}

inline Tensor prepare(const Tensor& rgb, bool edgemap) { return edgemap ? with_edgemap(rgb) : rgb; }

}  // namespace detail

// Reads every image of a manifest. `need_synth` requires the synthesized
// column for each row.
inline PairedData load_pairs(const Manifest& m, bool need_synth, bool edgemap) {
  if (m.rows.empty()) throw DataError("manifest has no rows");
  PairedData d;
  std::vector<Tensor> g, a, s;
  for (const auto& r : m.rows) {
    d.ids.push_back(r.id);
    g.push_back(detail::prepare(read_rgb(m.resolve(r.ground).string()), edgemap));
    a.push_back(detail::prepare(read_rgb(m.resolve(r.aerial).string()), edgemap));
    if (need_synth) {
      if (r.synth.empty()) throw DataError("sample '" + r.id + "' has no synthesized image");
      s.push_back(detail::prepare(read_rgb(m.resolve(r.synth).string()), edgemap));
    }
    if (r.lat) d.geo.push_back({r.id, *r.lat, *r.lon});
  }
  auto check_same = [&](const std::vector<Tensor>& v, const char* what) {
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i].shape() != v[0].shape()) {
        throw DataError(std::string(what) + " image of '" + m.rows[i].id + "' is " + shape_str(v[i].shape()) +
                        ", expected " + shape_str(v[0].shape()));
      }
  };
  check_same(g, "ground");
  check_same(a, "aerial");
  check_same(s, "synthesized");
  d.ground = detail::stack_images(g);
  d.aerial = detail::stack_images(a);
  if (need_synth) {
    if (s[0].shape() != a[0].shape()) throw DataError("synthesized images must have the aerial image shape");
    d.synth = detail::stack_images(s);
  }
  return d;
}

// Fills d.synth from (ground, aerial) with the proxy, quantized to 8 bits
// exactly as a round trip through image files would.
inline void synthesize_pairs(PairedData& d, const ProxyConfig& cfg) {
  Tensor out(d.aerial.shape());
  const std::size_t n = d.size();
  const std::size_t gs = d.ground.size() / n, as = d.aerial.size() / n;
  const Shape g_shape{d.ground.dim(1), d.ground.dim(2), d.ground.dim(3)};
  const Shape a_shape{d.aerial.dim(1), d.aerial.dim(2), d.aerial.dim(3)};
  for (std::size_t i = 0; i < n; ++i) {
    Tensor g(g_shape, std::vector<double>(d.ground.data().begin() + i * gs, d.ground.data().begin() + (i + 1) * gs));
    Tensor a(a_shape, std::vector<double>(d.aerial.data().begin() + i * as, d.aerial.data().begin() + (i + 1) * as));
    const Tensor s = proxy_synthesize(g, a, cfg, fnv1a64(d.ids[i]));
    for (std::size_t k = 0; k < as; ++k) out[i * as + k] = quantize8(s[k]);
  }
  d.synth = std::move(out);
}

// Writes a synthesized image per manifest row under `out_dir/synth/` and
// returns the manifest (relative to `out_dir`) with the synth column filled.
inline Manifest materialize_synth(const Manifest& m, const ProxyConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "synth");
  Manifest out = m;
  out.base_dir = out_dir;
  const fs::path abs_out = fs::absolute(out_dir);
  for (auto& r : out.rows) {
    const Tensor g = read_rgb(m.resolve(r.ground).string());
    const Tensor a = read_rgb(m.resolve(r.aerial).string());
    const Tensor s = proxy_synthesize(g, a, cfg, fnv1a64(r.id));
    const fs::path rel = fs::path("synth") / (r.id + ".ppm");
    write_rgb((out_dir / rel).string(), s);
    auto relocate = [&](const std::string& p) {
      return fs::relative(fs::absolute(m.resolve(p)), abs_out).generic_string();
    };
    r.ground = relocate(r.ground);
    r.aerial = relocate(r.aerial);
    r.synth = rel.generic_string();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SyntheticSpec {
  std::size_t clusters = 3;
  std::size_t per_cluster = 100;      // training pairs per cluster
  std::size_t test_per_cluster = 20;  // held-out pairs per cluster
  std::size_t latent_dims = 8;
  std::size_t complementary_dims = 4;  // rendered into the aerial view only
  double noise = 0.5;
  double gain = 0.25;
  std::size_t ground_height = 8, ground_width = 32;
  std::size_t aerial_height = 16, aerial_width = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (clusters < 2) throw ConfigError("synthetic data needs at least 2 clusters");
    if (per_cluster < 1) throw ConfigError("synthetic data needs at least 1 sample per cluster");
    if (latent_dims < 1) throw ConfigError("latent_dims must be >= 1");
    if (complementary_dims >= latent_dims) {
      throw ConfigError("complementary dims (" + std::to_string(complementary_dims) +
                        ") must leave at least one latent dimension visible from the ground");
    }
    if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
    for (auto [h, w, name] : {std::tuple{ground_height, ground_width, "ground"},
                              std::tuple{aerial_height, aerial_width, "aerial"}}) {
      // Both views must pass the toy encoder and leave Canny an interior.
      if (h < 8 || w < 8) {
        throw ConfigError(std::string(name) + " images of " + std::to_string(h) + "x" + std::to_string(w) +
                          " are too small (need at least 8x8)");
      }
      try {
        block_shapes(EncoderConfig::toy(3, h, w));
      } catch (const DimensionError& e) {
        throw ConfigError(std::string(name) + " image size too small for the encoder: " + e.what());
      }
    }
  }
};

struct SyntheticDataset {
  PairedData train;
  PairedData test;
};

namespace detail {

// One low-frequency cosine per (view, latent dim, channel).
struct Pattern {
  double fy, fx, phase, amp;
};

inline std::vector<Pattern> make_patterns(const SyntheticSpec& s, const char* view) {
  std::vector<Pattern> out;
  for (std::size_t k = 0; k < s.latent_dims; ++k)
    for (std::size_t c = 0; c < 3; ++c) {
      CounterRng rng(derive_seed(s.seed, std::string("pattern-") + view + "-" + std::to_string(k) + "-" + std::to_string(c)));
      Pattern p;
      p.fy = static_cast<double>(rng.below(3));
      p.fx = static_cast<double>(rng.below(4));
      if (p.fx == 0 && p.fy == 0) p.fx = 1;
      p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      p.amp = rng.uniform(-1.0, 1.0);
      out.push_back(p);
    }
  return out;
}

inline Tensor render(const SyntheticSpec& s, const std::vector<Pattern>& pats, const std::vector<double>& z,
                     std::size_t visible_dims, std::size_t H, std::size_t W, CounterRng& pixel_rng) {
  Tensor img({3, H, W});
  const double pixel_noise = 0.05 * s.noise;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0.5;
        for (std::size_t k = 0; k < visible_dims; ++k) {
          const Pattern& p = pats[k * 3 + c];
          const double arg = 2.0 * std::numbers::pi * (p.fx * static_cast<double>(x) / static_cast<double>(W) +
                                                       p.fy * static_cast<double>(y) / static_cast<double>(H)) +
                             p.phase;
          v += s.gain * z[k] * p.amp * std::cos(arg);
        }
        if (pixel_noise > 0.0) v += pixel_rng.normal(0.0, pixel_noise);
        img[(c * H + y) * W + x] = quantize8(v);
      }
  return img;
}

inline std::string sample_id(const char* split, std::size_t c, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-c%zu-%04zu", split, c, i);
  return buf;
}

}  // namespace detail

// Each sample's latent vector is its cluster prototype plus noise-scaled
// jitter. Both views render it through fixed seeded cosine patterns; the last
// `complementary_dims` latent dimensions reach only the aerial view. Pixels
// are 8-bit quantized so files and memory agree.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& s) {
  s.validate();
  const auto gp = detail::make_patterns(s, "ground");
  const auto ap = detail::make_patterns(s, "aerial");
  const std::size_t visible = s.latent_dims - s.complementary_dims;
  std::vector<std::vector<double>> protos(s.clusters, std::vector<double>(s.latent_dims));
  for (std::size_t c = 0; c < s.clusters; ++c) {
    CounterRng rng(derive_seed(s.seed, "prototype-" + std::to_string(c)));
    for (double& v : protos[c]) v = rng.normal();
  }
  auto build = [&](const char* split, std::size_t count, std::size_t index_offset) {
    PairedData d;
    std::vector<Tensor> g, a;
    for (std::size_t c = 0; c < s.clusters; ++c) {
      const double lat0 = 28.5 + 0.01 * static_cast<double>(c), lon0 = -81.4;
      const double spacing = 10.0 * static_cast<double>(c + 1);
      for (std::size_t i = 0; i < count; ++i) {
        const std::string id = detail::sample_id(split, c, i);
        CounterRng rng(derive_seed(s.seed, "sample-" + id));
        std::vector<double> z = protos[c];
        for (double& v : z) v += s.noise * rng.normal();
        CounterRng g_rng(derive_seed(s.seed, "ground-pixels-" + id));
        CounterRng a_rng(derive_seed(s.seed, "aerial-pixels-" + id));
        g.push_back(detail::render(s, gp, z, visible, s.ground_height, s.ground_width, g_rng));
        a.push_back(detail::render(s, ap, z, s.latent_dims, s.aerial_height, s.aerial_width, a_rng));
        // Grid position; train and test share one grid per cluster.
        const std::size_t slot = index_offset + i;
        const double north = static_cast<double>(slot / 10) * spacing;
        const double east = static_cast<double>(slot % 10) * spacing;
        const double lat = lat0 + north / 111195.0;
        const double lon = lon0 + east / (111195.0 * std::cos(lat0 * std::numbers::pi / 180.0));
        d.ids.push_back(id);
        d.geo.push_back({id, lat, lon});
      }
    }
    d.ground = detail::stack_images(g);
    d.aerial = detail::stack_images(a);
    return d;
  };
  SyntheticDataset out;
  out.train = build("train", s.per_cluster, 0);
  out.test = build("test", s.test_per_cluster, s.per_cluster);
  return out;
}

// Writes DIR/train.csv, DIR/test.csv and DIR/images/*.ppm.
inline void write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  auto write_split = [&](const PairedData& d, const char* name) {
    Manifest m;
    m.base_dir = dir;
    const std::size_t n = d.size();
    const std::size_t gs = d.ground.size() / n, as = d.aerial.size() / n;
    const Shape g_shape{d.ground.dim(1), d.ground.dim(2), d.ground.dim(3)};
    const Shape a_shape{d.aerial.dim(1), d.aerial.dim(2), d.aerial.dim(3)};
    for (std::size_t i = 0; i < n; ++i) {
      ManifestRow r;
      r.id = d.ids[i];
      r.ground = "images/" + r.id + "_ground.ppm";
      r.aerial = "images/" + r.id + "_aerial.ppm";
      write_rgb((dir / r.ground).string(),
                Tensor(g_shape, std::vector<double>(d.ground.data().begin() + i * gs, d.ground.data().begin() + (i + 1) * gs)));
      write_rgb((dir / r.aerial).string(),
                Tensor(a_shape, std::vector<double>(d.aerial.data().begin() + i * as, d.aerial.data().begin() + (i + 1) * as)));
      r.lat = d.geo[i].lat;
      r.lon = d.geo[i].lon;
      m.rows.push_back(std::move(r));
    }
    write_manifest((dir / (std::string(name) + ".csv")).string(), m);
  };
  write_split(ds.train, "train");
  write_split(ds.test, "test");
}

}  // namespace xview
