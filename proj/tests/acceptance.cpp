// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [AC1 AC7 ...]   (no arguments = all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "canny_oracle.hpp"
#include "xview/gradcheck.hpp"
#include "xview/xview.hpp"

using namespace xview;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) note << "; ";
      note << "FAILED " << what;
      pass = false;
    }
  }
};

struct Criterion {
  const char* id;
  const char* title;
  double limit_s;
  std::function<void(Outcome&)> run;
};

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t({r, c});
  CounterRng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Tensor t(std::move(s));
  CounterRng rng(seed);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// ---------------------------------------------------------------------------

void ac1(Outcome& o) {
  o.require(enumerate_exhaustive_triplets(30).triples.size() == 1740, "B=30 -> 1740");
  o.require(enumerate_exhaustive_triplets(24).triples.size() == 1104, "B=24 -> 1104");
  for (std::size_t b = 2; b <= 40; ++b) {
    const auto tb = enumerate_exhaustive_triplets(b);
    std::set<std::tuple<std::size_t, std::size_t, int>> uniq;
    bool clean = true;
    for (const auto& t : tb.triples) {
      clean &= t.anchor == t.positive && t.negative != t.anchor;
      uniq.insert({t.anchor, t.negative, static_cast<int>(t.direction)});
    }
    o.require(tb.triples.size() == 2 * b * (b - 1) && uniq.size() == tb.triples.size() && clean,
              "2B(B-1) distinct triples at B=" + std::to_string(b));
  }
  o.note << "B=30: 1740, B=24: 1104, B=2..40 match 2B(B-1)";
}

void ac2(Outcome& o) {
  CounterRng rng(2024);
  double worst_ln2 = 0;
  for (int i = 0; i < 1000; ++i) {
    const double d = rng.uniform(0.0, 50.0);
    worst_ln2 = std::max(worst_ln2, std::abs(weighted_soft_margin_loss(d, d, 10.0) - std::log(2.0)));
  }
  o.require(worst_ln2 <= 1e-12, "ln2 identity (err " + std::to_string(worst_ln2) + ")");
  std::size_t alpha_mismatch = 0, hinge_mismatch = 0;
  for (int i = 0; i < 10000; ++i) {
    const double dp = rng.uniform(0.0, 5.0), dn = rng.uniform(0.0, 5.0), m = rng.uniform(0.0, 2.0);
    alpha_mismatch += weighted_soft_margin_loss(dp, dn, 1.0) != soft_margin_loss(dp, dn);
    hinge_mismatch += (triplet_loss(dp, dn, m) == 0.0) != (dn >= dp + m);
  }
  o.require(alpha_mismatch == 0, std::to_string(alpha_mismatch) + " alpha=1 mismatches");
  o.require(hinge_mismatch == 0, std::to_string(hinge_mismatch) + " hinge zero-set mismatches");
  o.note << "ln2 err " << worst_ln2 << ", alpha=1 exact on 1e4, hinge zero set exact on 1e4";
}

double check(Outcome& o, const std::string& what, std::vector<ParamStore*> stores, const Fragment& f) {
  const auto r = finite_diff_check(stores, f);
  o.require(r.max_rel_error < 1e-4, what + " rel err " + std::to_string(r.max_rel_error) + " at " + r.worst_parameter);
  return r.max_rel_error;
}

void ac3(Outcome& o) {
  double worst = 0;
  // Fixed random readout so every output entry gets a distinct gradient.
  auto readout = [](Tape& t, Var h, std::uint64_t seed) {
    if (t.value(h).rank() != 2) h = flatten(t, h);
    const std::size_t d = t.value(h).dim(1);
    Var y = linear(t, h, t.constant(random_matrix(d, 3, seed)), t.constant(Tensor({3})));
    return sum(t, y);
  };
  {
    ParamStore s;
    s.add("x", random_matrix(3, 5, 1));
    s.add("w", random_matrix(5, 4, 2));
    s.add("b", random_tensor({4}, 3));
    worst = std::max(worst, check(o, "linear", {&s}, [&](Tape& t) {
      return readout(t, linear(t, t.parameter(s.get("x")), t.parameter(s.get("w")), t.parameter(s.get("b"))), 4);
    }));
  }
  for (Conv2dOptions opt : {Conv2dOptions{1, 0}, Conv2dOptions{2, 1}}) {
    ParamStore s;
    s.add("x", random_tensor({2, 2, 6, 6}, 5));
    s.add("k", random_tensor({3, 2, 3, 3}, 6));
    s.add("b", random_tensor({3}, 7));
    worst = std::max(worst, check(o, "conv2d", {&s}, [&](Tape& t) {
      return readout(t, conv2d(t, t.parameter(s.get("x")), t.parameter(s.get("k")), t.parameter(s.get("b")), opt), 8);
    }));
  }
  {
    ParamStore s;
    Tensor x = random_tensor({2, 3, 4, 4}, 9);
    for (double& v : x.data()) v += v >= 0 ? 0.05 : -0.05;  // keep clear of the kink
    s.add("x", x);
    DropoutSite site{11, 0, true};
    worst = std::max(worst, check(o, "relu", {&s}, [&](Tape& t) { return readout(t, relu(t, t.parameter(s.get("x"))), 10); }));
    worst = std::max(worst, check(o, "dropout", {&s}, [&](Tape& t) {
      return readout(t, dropout(t, t.parameter(s.get("x")), 0.5, Mode::train, site), 12);
    }));
    worst = std::max(worst, check(o, "gap", {&s}, [&](Tape& t) { return readout(t, gap(t, t.parameter(s.get("x"))), 13); }));
    worst = std::max(worst, check(o, "flatten", {&s}, [&](Tape& t) { return readout(t, flatten(t, t.parameter(s.get("x"))), 14); }));
  }
  {
    ParamStore s;
    s.add("a", random_matrix(3, 2, 15));
    s.add("b", random_matrix(3, 4, 16));
    worst = std::max(worst, check(o, "concat", {&s}, [&](Tape& t) {
      return readout(t, concat(t, {t.parameter(s.get("a")), t.parameter(s.get("b"))}), 17);
    }));
    worst = std::max(worst, check(o, "l2_normalize_rows", {&s}, [&](Tape& t) {
      return readout(t, l2_normalize_rows(t, t.parameter(s.get("b"))), 18);
    }));
  }
  {
    EncoderConfig cfg = EncoderConfig::toy(3, 8, 8, 4);
    cfg.init.seed = 19;
    Encoder enc = build_encoder(cfg);
    enc.freeze_dropout(true);
    const Tensor x = random_tensor({2, 3, 8, 8}, 20);
    worst = std::max(worst, check(o, "encoder", {&enc.params()}, [&](Tape& t) {
      return readout(t, enc.forward(t, t.constant(x), Mode::train), 21);
    }));
  }
  {
    ParamStore s;
    s.add("q", random_matrix(4, 5, 22));
    s.add("r", random_matrix(4, 5, 23));
    const LossConfig cfg;
    worst = std::max(worst, check(o, "batch_loss B=4", {&s}, [&](Tape& t) {
      return batch_loss(t, t.parameter(s.get("q")), t.parameter(s.get("r")), enumerate_exhaustive_triplets(4), cfg);
    }));
  }
  {
    ParamStore s;
    s.add("g", random_matrix(4, 3, 24));
    s.add("s", random_matrix(4, 3, 25));
    s.add("a", random_matrix(4, 3, 26));
    LossConfig cfg;
    cfg.lambda1 = 10.0;
    cfg.lambda2 = 1.0;
    worst = std::max(worst, check(o, "joint_loss", {&s}, [&](Tape& t) {
      return joint_loss(t, t.parameter(s.get("g")), t.parameter(s.get("s")), t.parameter(s.get("a")), cfg);
    }));
  }
  {
    // Fusion heads end to end on top of frozen encoders.
    Encoder ge = build_encoder(EncoderConfig::toy(3, 8, 16, 6), 27), ae = build_encoder(EncoderConfig::toy(3, 8, 8, 6), 28);
    const Tensor fg = ge.encode(random_tensor({4, 3, 8, 16}, 29));
    const Tensor fs = ae.encode(random_tensor({4, 3, 8, 8}, 30));
    const Tensor fa = ae.encode(random_tensor({4, 3, 8, 8}, 31));
    FusionModel m = init_fusion(6, 32);
    m.params().get("fc_query.weight").value = random_matrix(12, 6, 33);
    m.params().get("fc_ref.weight").value = random_matrix(6, 6, 34);
    LossConfig cfg;
    cfg.alpha = 2.0;
    worst = std::max(worst, check(o, "fusion head", {&m.params()}, [&](Tape& t) {
      Var q = fuse_query(t, t.constant(fg), t.constant(fs), m);
      Var r = project_reference(t, t.constant(fa), m);
      return batch_loss(t, q, r, enumerate_exhaustive_triplets(4), cfg);
    }));
  }
  o.note << "worst relative error " << worst << " over 13 checks";
}

double oracle_recall(const Tensor& d, const std::vector<std::size_t>& gt, std::size_t k) {
  const std::size_t M = d.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.at(i, a) < d.at(i, b); });
    hits += std::find(order.begin(), order.begin() + static_cast<long>(k), gt[i]) != order.begin() + static_cast<long>(k);
  }
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

void ac4(Outcome& o) {
  o.require(top_one_percent_k(200) == 2, "M=200 -> K=2");
  std::size_t compared = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tensor d = random_matrix(200, 200, 400 + s, 0.0, 10.0);
    if (s % 2) for (double& v : d.data()) v = std::floor(v * 2.0);  // heavy ties
    CounterRng rng(500 + s);
    std::vector<std::size_t> gt(200);
    for (auto& g : gt) g = rng.below(200);
    for (std::size_t k : {1, 5, 10}) {
      o.require(recall_at_k(d, gt, k) == oracle_recall(d, gt, k), "recall@" + std::to_string(k) + " seed " + std::to_string(s));
      ++compared;
    }
    o.require(top_one_percent(d, gt) == oracle_recall(d, gt, 2), "top-1% seed " + std::to_string(s));
    ++compared;
  }
  o.note << compared << " exact comparisons on 20 matrices (10 with ties)";
}

void ac5(Outcome& o) {
  std::size_t batches = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Tensor d = random_matrix(30, 30, 700 + s, 0.0, 5.0);
    if (s % 5 == 0) for (double& v : d.data()) v = std::round(v);  // ties
    // Exhaustive argmin: first minimal negative in enumeration order.
    std::vector<Triplet> expect;
    const auto ex = enumerate_exhaustive_triplets(30);
    for (Direction dir : {Direction::query_to_ref, Direction::ref_to_query})
      for (std::size_t a = 0; a < 30; ++a) {
        const Triplet* best = nullptr;
        double bd = 0;
        for (const auto& t : ex.triples) {
          if (t.direction != dir || t.anchor != a) continue;
          const double v = dir == Direction::query_to_ref ? d.at(a, t.negative) : d.at(t.negative, a);
          if (!best || v < bd) best = &t, bd = v;
        }
        expect.push_back(*best);
      }
    o.require(mine_hard_negatives(d).triples == expect, "batch " + std::to_string(s));
    ++batches;
  }
  o.note << batches << " batches of 30x30 identical to the exhaustive argmin";
}

void ac6(Outcome& o) {
  o.require(canny(GrayImage(32, 32, 0.6)).count() == 0, "constant image has edges");
  const std::size_t n = 64, boundary = 32;  // step between columns 31 and 32
  GrayImage step(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = boundary; x < n; ++x) step.at(y, x) = 1.0;
  const EdgeMap e = canny(step);
  std::size_t rows = 0, far = 0;
  for (std::size_t y = 0; y < n; ++y) {
    bool any = false;
    for (std::size_t x = 0; x < n; ++x)
      if (e.at(y, x)) {
        any = true;
        far += std::abs(static_cast<double>(x) - (static_cast<double>(boundary) - 0.5)) > 1.0;
      }
    rows += any;
  }
  o.require(far == 0, std::to_string(far) + " edge pixels more than 1 px from the boundary");
  o.require(rows * 10 >= n * 9, "only " + std::to_string(rows) + "/" + std::to_string(n) + " rows marked");
  double min_iou = 1.0;
  for (int s = 0; s < 5; ++s) {
    const GrayImage img = oracle::scene(s);
    const double iou = oracle::iou(canny(img), oracle::opencv_canny(img));
    min_iou = std::min(min_iou, iou);
    o.require(iou >= 0.9, "scene " + std::to_string(s) + " IoU " + fmt(iou));
  }
  o.note << "step rows marked " << rows << "/" << n << ", min IoU vs OpenCV " << fmt(min_iou);
}

void ac9(Outcome& o) {
  const GeoSample a{"a", 10.0, 20.0}, b{"b", 11.0, 20.0};
  const double one_deg = haversine_m(a, b);
  o.require(std::abs(one_deg - 111195.0) <= 1.0, "1 degree = " + fmt(one_deg, 2));

  // Synthetic geo grid: test split positions, retrieval from raw pixels.
  SyntheticSpec spec;
  spec.seed = 3;
  const auto ds = generate_synthetic(spec);
  const std::size_t n = ds.test.size();
  const Tensor flat_g = ds.test.aerial.reshaped({n, ds.test.aerial.size() / n});
  Tensor noisy = flat_g;
  CounterRng rng(9);
  for (double& v : noisy.data()) v += 2.0 * rng.normal();  // enough noise that the curve is not flat
  std::vector<double> th;
  for (double t = 0; t <= 600; t += 5) th.push_back(t);
  const auto curve = geolocalize_curve(pairwise_distances(noisy, flat_g), ds.test.geo, ds.test.geo, th);
  bool mono = true;
  for (std::size_t i = 1; i < curve.size(); ++i) mono &= curve[i].accuracy >= curve[i - 1].accuracy;
  o.require(mono, "curve not monotone");

  // Hand-enumerated 20 samples: query i retrieves reference 7i mod 20, whose
  // position lies err[i] meters north of the query.
  const double err[20] = {0, 3, 7, 12, 30, 60, 150, 4, 9, 26, 49, 51, 99, 101, 0, 24, 4.5, 9.5, 24.5, 999};
  // <=5: 5  <=10: 8  <=25: 11  <=50: 14  <=100: 17  <=1000: 20
  const double expected[6] = {0.25, 0.40, 0.55, 0.70, 0.85, 1.0};
  const double m_per_deg = std::numbers::pi / 180.0 * kEarthRadiusM;
  std::vector<GeoSample> qg(20), rg(20);
  Tensor d({20, 20});
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t top = (i * 7) % 20;
    qg[i] = {"q" + std::to_string(i), static_cast<double>(i), 0.0};
    rg[top] = {"r" + std::to_string(top), static_cast<double>(i) + err[i] / m_per_deg, 0.0};
    for (std::size_t j = 0; j < 20; ++j) d.at(i, j) = j == top ? 0.1 : 1.0 + 0.1 * static_cast<double>((i + j) % 5);
  }
  const auto hand = geolocalize_curve(d, qg, rg, {5, 10, 25, 50, 100, 1000});
  for (std::size_t t = 0; t < 6; ++t)
    o.require(hand[t].accuracy == expected[t], "hand oracle at " + fmt(hand[t].threshold_m, 0) + " m");
  o.note << "1 deg = " << fmt(one_deg, 2) << " m, grid curve " << fmt(curve.front().accuracy, 3) << " -> "
         << fmt(curve.back().accuracy, 3) << " over " << th.size() << " thresholds, hand oracle exact";
}

// ---------------------------------------------------------------------------
// Benchmark schedule

ConfigFile benchmark_config() { return ConfigFile::load(XVIEW_SYNTHETIC_CFG); }

struct Bench {
  SyntheticDataset data;
  StageConfig cfg(Stage s) const { return c.resolve(s, seed); }
  ConfigFile c;
  std::uint64_t seed;
};

// Synthetic data with the proxy applied to both splits.
Bench make_bench(std::uint64_t seed, std::optional<double> fidelity = std::nullopt) {
  Bench b{{}, benchmark_config(), seed};
  SyntheticSpec spec;
  spec.seed = seed;
  b.data = generate_synthetic(spec);
  ProxyConfig p = b.cfg(Stage::baseline_synth).proxy;
  if (fidelity) p.fidelity = *fidelity;
  p.seed = derive_seed(seed, "proxy");
  synthesize_pairs(b.data.train, p);
  synthesize_pairs(b.data.test, p);
  return b;
}

void ac7(Outcome& o) {
  double sb = 0, sj = 0, sf = 0;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    const Bench b = make_bench(static_cast<std::uint64_t>(seed));
    const StageResult base = run_stage(b.cfg(Stage::baseline_ga), b.data.train);
    const StageResult joint = run_stage(b.cfg(Stage::joint), b.data.train, base.checkpoint());
    const StageResult fusion = run_stage(b.cfg(Stage::fusion), b.data.train, joint.checkpoint());
    const double rb = evaluate(base.model, b.data.test).recall_at.at(1);
    const double rj = evaluate(joint.model, b.data.test).recall_at.at(1);
    const double rf = evaluate(fusion.model, b.data.test).recall_at.at(1);
    std::printf("  AC7 seed %d: baseline %.4f joint %.4f fusion %.4f\n", seed, rb, rj, rf);
    std::fflush(stdout);
    sb += rb, sj += rj, sf += rf;
  }
  sb /= seeds, sj /= seeds, sf /= seeds;
  o.require(sf >= sj, "fusion < joint");
  o.require(sj >= sb, "joint < baseline");
  o.require(sj - sb >= 0.02, "joint - baseline < 2 points");
  o.note << "mean top-1 baseline " << fmt(sb) << ", joint " << fmt(sj) << ", fusion " << fmt(sf);
}

void ac8(Outcome& o) {
  const int seeds = 5;
  std::vector<double> means;
  for (double rho : {0.0, 0.5, 1.0}) {
    double acc = 0;
    for (int seed = 0; seed < seeds; ++seed) {
      const Bench b = make_bench(static_cast<std::uint64_t>(seed), rho);
      const StageResult r = run_stage(b.cfg(Stage::baseline_synth), b.data.train);
      acc += evaluate(r.model, b.data.test).top_one_percent;
    }
    means.push_back(acc / seeds);
    std::printf("  AC8 rho %.1f: mean top-1%% %.4f\n", rho, means.back());
    std::fflush(stdout);
  }
  o.require(means[1] >= means[0] && means[2] >= means[1], "not non-decreasing in rho");
  o.note << "top-1% at rho 0 / 0.5 / 1: " << fmt(means[0]) << " / " << fmt(means[1]) << " / " << fmt(means[2]);
}

std::vector<std::string> full_schedule(const Bench& b) {
  const StageResult ga = run_stage(b.cfg(Stage::baseline_ga), b.data.train);
  const StageResult synth = run_stage(b.cfg(Stage::baseline_synth), b.data.train);
  const StageResult joint = run_stage(b.cfg(Stage::joint), b.data.train, ga.checkpoint());
  const StageResult fusion = run_stage(b.cfg(Stage::fusion), b.data.train, joint.checkpoint());
  std::vector<std::string> out;
  for (const StageResult* r : {&ga, &synth, &joint, &fusion}) out.push_back(encode_checkpoint(r->checkpoint()));
  return out;
}

void ac10(Outcome& o) {
  const Bench b = make_bench(7);
  const auto first = full_schedule(b);
  const auto second = full_schedule(b);
  const char* names[] = {"baseline-ga", "baseline-synth", "joint", "fusion"};
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    o.require(first[i] == second[i], std::string(names[i]) + " checkpoints differ");
    bytes += first[i].size();
  }

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "xview_acceptance";
  fs::create_directories(dir);
  // Checkpoint: load(save) keeps every float32 value, save(load) is byte-identical.
  const Checkpoint ck = decode_checkpoint(first[3]);
  save_checkpoint((dir / "fusion.xvmc").string(), ck);
  o.require(encode_checkpoint(load_checkpoint((dir / "fusion.xvmc").string())) == first[3], "checkpoint re-save differs");
  const StageModel model = model_from_checkpoint(ck);
  const Tensor q = model.embed(Role::query, b.data.test);
  const EmbeddingMatrix em(b.data.test.ids, q);
  save_embeddings((dir / "query.xvem").string(), em);
  const EmbeddingMatrix back = load_embeddings((dir / "query.xvem").string());
  bool exact32 = back.ids() == em.ids() && back.values().size() == em.values().size();
  double worst = 0;
  for (std::size_t i = 0; exact32 && i < em.values().size(); ++i) {
    exact32 &= back.values()[i] == static_cast<double>(static_cast<float>(em.values()[i]));
    worst = std::max(worst, std::abs(back.values()[i] - em.values()[i]) / std::max(std::abs(em.values()[i]), 1e-30));
  }
  o.require(exact32, "embedding round trip is not float32-exact");
  o.require(worst <= 6e-8, "embedding relative error " + std::to_string(worst));
  fs::remove_all(dir);
  o.note << "4 stages x 2 runs bit-identical (" << bytes << " checkpoint bytes), containers float32-exact (rel err "
         << worst << ")";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"AC1", "triplet count exactness", 1, ac1},
      {"AC2", "loss identities", 1, ac2},
      {"AC3", "gradient suite", 30, ac3},
      {"AC4", "recall oracle", 10, ac4},
      {"AC5", "hard-negative oracle", 5, ac5},
      {"AC6", "canny", 10, ac6},
      {"AC7", "qualitative ordering baseline <= joint <= fusion", 600, ac7},
      {"AC8", "proxy fidelity monotonicity", 600, ac8},
      {"AC9", "geo-localization", 5, ac9},
      {"AC10", "determinism and IO", 900, ac10},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < c.limit_s, "time limit " + fmt(c.limit_s, 0) + " s");
    failed += !o.pass;
    std::printf("%s %s %s: %s [%.2f s, limit %.0f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.title, o.note.str().c_str(),
                secs, c.limit_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
