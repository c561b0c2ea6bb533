#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "canny_oracle.hpp"
#include "xview/cli.hpp"
#include "xview/xview.hpp"

using namespace xview;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xview_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

struct Cli {
  int code;
  std::string out, err;
};

Cli cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

SyntheticSpec tiny_spec(std::uint64_t seed = 4) {
  SyntheticSpec s;
  s.per_cluster = 10;
  s.test_per_cluster = 4;
  s.seed = seed;
  return s;
}

// Small, quick settings shared by every training test.
const char* kTinyConfig =
    "steps_exhaustive = 3\n"
    "steps_hard_negative = 2\n"
    "batch = 6\n"
    "lr = 1e-3\n"
    "embed_dim = 8\n"
    "seed = 11\n"
    "proxy_fidelity = 0.6\n"
    "proxy_noise_std = 0.2\n";

const char* kTinyJoint = "[joint]\nbatch = 6\n";

StageConfig tiny_config(Stage s, const std::string& extra = "") {
  // `extra` lands after the global keys, before any section.
  return ConfigFile::parse(std::string(kTinyConfig) + extra + kTinyJoint).resolve(s);
}

PairedData tiny_train() {
  PairedData d = generate_synthetic(tiny_spec()).train;
  synthesize_pairs(d, tiny_config(Stage::baseline_synth).proxy);
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

TEST(Manifest, ValidTwoRows) {
  const auto dir = scratch("manifest_ok");
  write_text(dir / "g.ppm", "");
  write_text(dir / "a.ppm", "");
  write_text(dir / "train.csv", "id,ground,aerial,synth,lat,lon\nx,g.ppm,a.ppm,,1.5,2\ny,g.ppm,a.ppm,,3,4\n");
  const Manifest m = load_manifest((dir / "train.csv").string());
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(m.split, "train");
  EXPECT_TRUE(m.has_geo());
  EXPECT_FALSE(m.has_synth());
  EXPECT_EQ(m.geo_index().at("x").lat, 1.5);
}

TEST(Manifest, DuplicateIdNamesBothLines) {
  std::istringstream in("id,ground,aerial,synth,lat,lon\nx,g,a,,,\ny,g,a,,,\nx,g,a,,,\n");
  const std::string msg = error_of([&] { parse_manifest(in, "m.csv", "."); });
  EXPECT_NE(msg.find("'x'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("lines 2 and 4"), std::string::npos) << msg;
}

TEST(Manifest, PartialGeo) {
  std::istringstream one("id,ground,aerial,synth,lat,lon\nx,g,a,,1.0,\n");
  EXPECT_NE(error_of([&] { parse_manifest(one, "m.csv", "."); }).find("partial geo"), std::string::npos);
  std::istringstream mixed("id,ground,aerial,synth,lat,lon\nx,g,a,,1,2\ny,g,a,,,\n");
  EXPECT_NE(error_of([&] { parse_manifest(mixed, "m.csv", "."); }).find("partial geo"), std::string::npos);
}

TEST(Manifest, MalformedRowsCarryLineNumbers) {
  std::istringstream fields("id,ground,aerial,synth,lat,lon\nx,g,a,,,\ny,g,a\n");
  EXPECT_NE(error_of([&] { parse_manifest(fields, "m.csv", "."); }).find("m.csv:3"), std::string::npos);
  std::istringstream coord("id,ground,aerial,synth,lat,lon\nx,g,a,,north,2\n");
  EXPECT_NE(error_of([&] { parse_manifest(coord, "m.csv", "."); }).find("m.csv:2"), std::string::npos);
  std::istringstream header("id,ground\n");
  EXPECT_THROW(parse_manifest(header, "m.csv", "."), DataError);
}

TEST(Manifest, MissingFiles) {
  EXPECT_THROW(load_manifest("/nonexistent/xview.csv"), DataError);
  const auto dir = scratch("manifest_missing");
  write_text(dir / "m.csv", "id,ground,aerial,synth,lat,lon\nx,g.ppm,a.ppm,,,\n");
  EXPECT_NE(error_of([&] { load_manifest((dir / "m.csv").string()); }).find("g.ppm"), std::string::npos);
  EXPECT_EQ(load_manifest((dir / "m.csv").string(), false).size(), 1u);
}

// ---------------------------------------------------------------------------
// Embedding container

TEST(EmbeddingIO, RoundTripToFloat32) {
  CounterRng rng(5);
  std::vector<double> v(12);
  for (double& x : v) x = rng.normal() * 100.0;
  const EmbeddingMatrix m({"a", "bb", "c,c"}, 4, v);
  const auto dir = scratch("emb");
  save_embeddings((dir / "e.xvem").string(), m);
  const EmbeddingMatrix back = load_embeddings((dir / "e.xvem").string());
  EXPECT_EQ(back.ids(), m.ids());
  ASSERT_EQ(back.dim(), 4u);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(v[i])));
    EXPECT_LE(std::abs(back.values()[i] - v[i]), 1e-7 * std::abs(v[i]));
  }
  // Header layout: magic, N, E as little-endian u32.
  const std::string bytes = encode_embeddings(m);
  EXPECT_EQ(bytes.substr(0, 4), "XVEM");
  EXPECT_EQ(bytes.substr(4, 8), std::string("\x03\0\0\0\x04\0\0\0", 8));
}

TEST(EmbeddingIO, EmptyMatrix) {
  const EmbeddingMatrix m({}, 16, {});
  const EmbeddingMatrix back = decode_embeddings(encode_embeddings(m));
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.dim(), 16u);
}

TEST(EmbeddingIO, TruncationReportsByteCounts) {
  const EmbeddingMatrix m({"a", "b"}, 3, {1, 2, 3, 4, 5, 6});
  const std::string bytes = encode_embeddings(m);
  const std::string msg = error_of([&] { decode_embeddings(bytes.substr(0, bytes.size() - 5), "t.xvem"); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected " + std::to_string(bytes.size())), std::string::npos) << msg;
  EXPECT_NE(msg.find("file has " + std::to_string(bytes.size() - 5)), std::string::npos) << msg;
}

TEST(EmbeddingIO, BadMagicAndOverflow) {
  std::string bytes = encode_embeddings(EmbeddingMatrix({"a"}, 1, {1}));
  bytes[0] = 'Y';
  EXPECT_NE(error_of([&] { decode_embeddings(bytes); }).find("magic"), std::string::npos);
  // N = E = 0xffffffff with no payload: header claims far more than the file.
  const std::string huge = std::string("XVEM") + std::string(8, '\xff');
  EXPECT_THROW(decode_embeddings(huge), DataError);
}

// ---------------------------------------------------------------------------
// Checkpoint container

TEST(Checkpoint, RoundTripAndByteIdenticalResave) {
  Checkpoint ck;
  ck.stage = "joint";
  ck.seed = 42;
  ck.config_digest = 0x0123456789abcdefULL;
  ck.config_text = "stage = joint\n";
  CounterRng rng(1);
  Tensor w({3, 5});
  for (double& v : w.data()) v = rng.normal();
  ck.tensors["ground.w"] = w;
  ck.tensors["fusion.b"] = Tensor({2}, {0.1, -0.2});
  const auto dir = scratch("ckpt");
  const std::string p1 = (dir / "a.xvmc").string(), p2 = (dir / "b.xvmc").string();
  save_checkpoint(p1, ck);
  const Checkpoint back = load_checkpoint(p1);
  EXPECT_EQ(back.stage, "joint");
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.config_digest, ck.config_digest);
  EXPECT_EQ(back.config_text, ck.config_text);
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_EQ(back.tensors.at("ground.w").values()[i], static_cast<double>(static_cast<float>(w.values()[i])));
  save_checkpoint(p2, back);
  EXPECT_EQ(read_text(p1), read_text(p2));
}

TEST(Checkpoint, CorruptFiles) {
  Checkpoint ck;
  ck.stage = "baseline-ga";
  ck.tensors["query.w"] = Tensor({4, 4});
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_THROW(decode_checkpoint("XVEM" + bytes.substr(4)), CheckpointError);
  EXPECT_NE(error_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3)); }).find("truncated"),
            std::string::npos);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
  EXPECT_THROW(ck.extract("fusion."), CheckpointError);
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsCarryPublishedSettings) {
  const StageConfig ga = ConfigFile::parse("").resolve(Stage::baseline_ga);
  EXPECT_EQ(ga.batch, 30u);
  EXPECT_EQ(ga.lr, 1e-5);
  EXPECT_EQ(ga.dropout, 0.5);
  EXPECT_EQ(ga.loss.alpha, 10.0);
  EXPECT_EQ(ga.loss.lambda1, 10.0);
  EXPECT_EQ(ga.loss.lambda2, 1.0);
  EXPECT_EQ(ConfigFile::parse("").resolve(Stage::joint).batch, 24u);
  EXPECT_EQ(ConfigFile::parse("").resolve(Stage::fusion).batch, 30u);
}

TEST(Config, SectionsOverrideGlobals) {
  const ConfigFile cf = ConfigFile::parse("lr = 0.01  # global\nbatch = 8\n[fusion]\nlr = 0.5\n");
  EXPECT_EQ(cf.resolve(Stage::joint).lr, 0.01);
  EXPECT_EQ(cf.resolve(Stage::joint).batch, 8u);
  EXPECT_EQ(cf.resolve(Stage::fusion).lr, 0.5);
  EXPECT_EQ(cf.resolve(Stage::fusion, 99).seed, 99u);
  EXPECT_NE(cf.resolve(Stage::fusion, 99).config_digest, cf.resolve(Stage::fusion, 98).config_digest);
  EXPECT_EQ(cf.resolve(Stage::joint, 7).config_digest, cf.resolve(Stage::fusion, 7).config_digest);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of([] { ConfigFile::parse("lr = 1\nbogus = 2\n", "c.cfg"); }).find("c.cfg:2"), std::string::npos);
  EXPECT_NE(error_of([] { ConfigFile::parse("batch = x\n", "c.cfg"); }).find("c.cfg:1"), std::string::npos);
  EXPECT_THROW(ConfigFile::parse("[nope]\n"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("batch = 1\n").resolve(Stage::baseline_ga), ConfigError);
}

TEST(Config, TextRoundTrip) {
  StageConfig c = tiny_config(Stage::fusion, "proxy_complement_mask = 0;2\nmultiscale = false\n");
  c.ground_shape = {3, 8, 32};
  c.aerial_shape = {3, 16, 16};
  const StageConfig back = from_text(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.proxy.complement_mask, (std::set<std::size_t>{0, 2}));
  EXPECT_FALSE(back.multiscale);
  EXPECT_EQ(back.ground_shape.width, 32u);
}

TEST(Config, SeedFromEnvironment) {
  ::unsetenv("XVIEW_SEED");
  EXPECT_FALSE(seed_from_env().has_value());
  ::setenv("XVIEW_SEED", "1234", 1);
  EXPECT_EQ(seed_from_env(), 1234u);
  ::setenv("XVIEW_SEED", "-3", 1);
  EXPECT_THROW(seed_from_env(), ConfigError);
  ::unsetenv("XVIEW_SEED");
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

TEST(Synthetic, ByteIdenticalAcrossRuns) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  SyntheticSpec s = tiny_spec(9);
  write_synthetic(generate_synthetic(s), a);
  write_synthetic(generate_synthetic(s), b);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(read_text(e.path()), read_text(b / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_EQ(files, 2u + 2u * (30u + 12u));
  // Reloaded images equal the in-memory batch (8-bit quantized on both sides).
  const Manifest m = load_manifest((a / "test.csv").string());
  const PairedData d = load_pairs(m, false, false);
  EXPECT_EQ(d.ground, generate_synthetic(s).test.ground);
  EXPECT_EQ(d.geo.size(), 12u);
}

TEST(Synthetic, ZeroNoiseClustersAreIdentical) {
  SyntheticSpec s = tiny_spec();
  s.noise = 0.0;
  const auto ds = generate_synthetic(s);
  const Tensor& g = ds.train.ground;
  const std::size_t per = g.size() / g.dim(0);
  auto sample = [&](std::size_t i) {
    return std::vector<double>(g.values().begin() + i * per, g.values().begin() + (i + 1) * per);
  };
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 1; i < 10; ++i) EXPECT_EQ(sample(c * 10), sample(c * 10 + i));
  EXPECT_NE(sample(0), sample(10));
}

TEST(Synthetic, ComplementaryDimsReachOnlyAerial) {
  // Perturbing only the hidden latent directions: ground unchanged, aerial not.
  SyntheticSpec s = tiny_spec();
  s.noise = 0.0;
  const auto base = generate_synthetic(s);
  SyntheticSpec t = s;
  t.complementary_dims = 0;
  const auto all_visible = generate_synthetic(t);
  EXPECT_NE(base.train.ground, all_visible.train.ground);
  EXPECT_EQ(base.train.aerial, all_visible.train.aerial);
}

TEST(Synthetic, GeoGridSpacingScalesWithCluster) {
  const auto ds = generate_synthetic(tiny_spec());
  for (std::size_t c = 0; c < 3; ++c) {
    const double d = haversine_m(ds.train.geo[c * 10], ds.train.geo[c * 10 + 1]);
    EXPECT_NEAR(d, 10.0 * static_cast<double>(c + 1), 0.01);
  }
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s = tiny_spec();
  s.clusters = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = tiny_spec();
  s.complementary_dims = s.latent_dims;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = tiny_spec();
  s.ground_height = 4;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

// ---------------------------------------------------------------------------
// Sampler

TEST(BatchSampler, EpochCoversDistinctRows) {
  BatchSampler a(20, 6, 3), b(20, 6, 3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 3; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_EQ(std::set<std::size_t>(x.begin(), x.end()).size(), 6u);
    seen.insert(x.begin(), x.end());
  }
  EXPECT_EQ(seen.size(), 18u);
  a.next();  // tail of 2 dropped, new epoch
  EXPECT_EQ(a.epoch(), 2u);
  EXPECT_THROW(BatchSampler(5, 6, 0), DataError);
  EXPECT_THROW(BatchSampler(5, 1, 0), ParameterError);
}

// ---------------------------------------------------------------------------
// Staged training

TEST(RunStage, ZeroStepsEqualsInitialization) {
  const PairedData d = tiny_train();
  StageConfig cfg = tiny_config(Stage::baseline_ga, "steps_exhaustive = 0\nsteps_hard_negative = 0\n");
  const StageResult r = run_stage(cfg, d);
  EXPECT_TRUE(r.log.rows.empty());
  cfg.ground_shape = d.ground_shape();
  cfg.aerial_shape = d.aerial_shape();
  const TwoStreamModel init = build_two_stream(encoder_config(cfg, cfg.ground_shape), encoder_config(cfg, cfg.aerial_shape),
                                               false, derive_seed(cfg.seed, "baseline-ga"));
  Checkpoint expect;
  expect.add_store("query.", init.query.params());
  expect.add_store("reference.", init.reference.params());
  EXPECT_EQ(r.checkpoint().tensors, expect.tensors);
}

TEST(RunStage, JointZeroStepsCopiesWeights) {
  const PairedData d = tiny_train();
  const std::string zero = "[joint]\nsteps_exhaustive = 0\nsteps_hard_negative = 0\n";
  const Checkpoint base = run_stage(tiny_config(Stage::baseline_ga, zero), d).checkpoint();
  const Checkpoint joint = run_stage(tiny_config(Stage::joint, zero), d, base).checkpoint();
  std::size_t compared = 0;
  for (const auto& [name, t] : base.tensors) {
    const std::string rest = name.substr(name.find('.') + 1);
    const std::string jname = (name.rfind("query.", 0) == 0 ? "ground." : "aerial.") + rest;
    EXPECT_EQ(joint.tensors.at(jname), t) << name;
    ++compared;
  }
  EXPECT_EQ(compared, joint.tensors.size());
}

TEST(RunStage, BaselineLossDecreases) {
  SyntheticSpec spec = tiny_spec();
  spec.per_cluster = 100;
  const PairedData d = generate_synthetic(spec).train;
  const StageResult r = run_stage(
      tiny_config(Stage::baseline_ga, "batch = 30\nsteps_exhaustive = 150\nsteps_hard_negative = 10\neval_every = 80\n"), d);
  ASSERT_EQ(r.log.rows.size(), 160u);
  EXPECT_EQ(r.log.rows[149].phase, Phase::exhaustive);
  EXPECT_EQ(r.log.rows[150].phase, Phase::hard_negative);
  // Compared within the exhaustive phase; mined negatives give larger losses.
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += r.log.rows[i].loss;
    tail += r.log.rows[130 + i].loss;
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(r.log.train_recall.size(), 2u);
  EXPECT_EQ(r.log.train_recall.back().first, 160u);
}

TEST(RunStage, WarmStartRequirements) {
  const PairedData d = tiny_train();
  EXPECT_THROW(run_stage(tiny_config(Stage::joint), d), StageError);
  EXPECT_THROW(run_stage(tiny_config(Stage::fusion), d), StageError);
  const Checkpoint base = run_stage(tiny_config(Stage::baseline_ga), d).checkpoint();
  // Fusion needs a joint checkpoint, not a baseline one.
  EXPECT_THROW(run_stage(tiny_config(Stage::fusion), d, base), StageError);
  // Different effective seed -> different digest.
  EXPECT_THROW(run_stage(ConfigFile::parse(std::string(kTinyConfig) + kTinyJoint).resolve(Stage::joint, 12345), d, base), CheckpointError);
  PairedData no_synth = d;
  no_synth.synth.reset();
  EXPECT_NE(error_of([&] { run_stage(tiny_config(Stage::joint), no_synth, base); }).find(d.ids.front()),
            std::string::npos);
}

TEST(RunStage, NonFiniteLossAbortsWithStep) {
  const PairedData d = tiny_train();
  const std::string msg = error_of([&] { run_stage(tiny_config(Stage::baseline_ga, "lr = 1e300\n"), d); });
  EXPECT_NE(msg.find("non-finite loss at step"), std::string::npos) << msg;
}

TEST(RunStage, FusionTouchesOnlyHeads) {
  const PairedData d = tiny_train();
  const Checkpoint base = run_stage(tiny_config(Stage::baseline_ga), d).checkpoint();
  const Checkpoint joint = run_stage(tiny_config(Stage::joint), d, base).checkpoint();
  const StageResult f = run_stage(tiny_config(Stage::fusion), d, joint);
  const Checkpoint fck = f.checkpoint();
  for (const auto& [name, t] : joint.tensors) EXPECT_EQ(fck.tensors.at(name), t) << name;
  EXPECT_EQ(fck.tensors.size(), joint.tensors.size() + 4);
  EXPECT_EQ(fck.tensors.at("fusion.fc_query.weight").shape(), (Shape{16, 8}));
  EXPECT_EQ(f.log.rows.size(), 5u);
}

TEST(RunStage, CheckpointRebuildsSameEmbeddings) {
  const PairedData d = tiny_train();
  const Checkpoint base = run_stage(tiny_config(Stage::baseline_ga), d).checkpoint();
  const Checkpoint joint = run_stage(tiny_config(Stage::joint), d, base).checkpoint();
  const StageResult f = run_stage(tiny_config(Stage::fusion), d, joint);
  const StageModel back = model_from_checkpoint(decode_checkpoint(encode_checkpoint(f.checkpoint())));
  for (Role role : {Role::query, Role::reference, Role::synth}) {
    const Tensor a = f.model.embed(role, d), b = back.embed(role, d);
    ASSERT_EQ(a.shape(), b.shape());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    EXPECT_LT(worst, 1e-4);
  }
  EXPECT_EQ(encode_checkpoint(back.to_checkpoint()), encode_checkpoint(decode_checkpoint(encode_checkpoint(f.checkpoint()))));
  Checkpoint bad = f.checkpoint();
  bad.stage = "joint";
  EXPECT_THROW(model_from_checkpoint(bad), CheckpointError);
}

TEST(RunStage, BaselineSynthUsesSynthesizedQueries) {
  const PairedData d = tiny_train();
  const StageResult r = run_stage(tiny_config(Stage::baseline_synth), d);
  EXPECT_EQ(r.model.embed(Role::query, d).dim(0), d.size());
  PairedData no_synth = d;
  no_synth.synth.reset();
  EXPECT_THROW(r.model.embed(Role::query, no_synth), DataError);
  EXPECT_THROW(run_stage(tiny_config(Stage::baseline_synth), no_synth), DataError);
}

TEST(RunStage, RoleSwapRunsUnchanged) {
  // Aerial-to-ground: same code, columns exchanged.
  const PairedData d = tiny_train().swapped();
  EXPECT_EQ(d.ground_shape().height, 16u);
  const StageResult r = run_stage(tiny_config(Stage::baseline_ga), d);
  EXPECT_EQ(r.log.rows.size(), 5u);
  EXPECT_EQ(r.model.cfg.ground_shape.height, 16u);
  const auto rep = evaluate(r.model, d);
  EXPECT_GE(rep.recall_at.at(1), 0.0);
}

TEST(RunStage, Deterministic) {
  const PairedData d = tiny_train();
  const Checkpoint a = run_stage(tiny_config(Stage::baseline_ga), d).checkpoint();
  const Checkpoint b = run_stage(tiny_config(Stage::baseline_ga), d).checkpoint();
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
}

// ---------------------------------------------------------------------------
// CLI

TEST(Cli, UnknownSubcommandAndFlag) {
  EXPECT_EQ(cli({"bogus"}).code, 1);
  EXPECT_EQ(cli({"info", "--ckpt", "x", "--frobnicate"}).code, 1);
  EXPECT_EQ(cli({}).code, 1);
  const Cli c = cli({"eval"});
  EXPECT_EQ(c.code, 1);
  EXPECT_NE(c.err.find("--query"), std::string::npos);
}

TEST(Cli, BinaryExitCodes) {
  auto run = [](const std::string& args) {
    const int st = std::system((std::string(XVIEW_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("info --ckpt /nonexistent.xvmc"), 2);
}

TEST(Cli, EvalOnTenQueryToySet) {
  const auto dir = scratch("cli_eval");
  std::vector<std::string> ids;
  std::vector<double> q, g;
  for (int i = 0; i < 10; ++i) {
    ids.push_back("s" + std::to_string(i));
    // Query 7 sits closer to gallery 8 than to its own match.
    q.insert(q.end(), {static_cast<double>(i) + (i == 7 ? 0.7 : 0.0), 0.0});
    g.insert(g.end(), {static_cast<double>(i), 0.1});
  }
  save_embeddings((dir / "q.xvem").string(), EmbeddingMatrix(ids, 2, q));
  save_embeddings((dir / "g.xvem").string(), EmbeddingMatrix(ids, 2, g));
  const Cli c = cli({"eval", "--query", (dir / "q.xvem").string(), "--gallery", (dir / "g.xvem").string(), "--k", "1,10",
                     "--out", (dir / "r.csv").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("K\trecall"), std::string::npos);
  EXPECT_NE(c.out.find("top-1% (K=1)"), std::string::npos);
  EXPECT_EQ(read_text(dir / "r.csv"), "k,recall\n1,0.900000\n10,1.000000\n");

  write_text(dir / "gt.csv", "query_id,gallery_id\n");
  {
    std::ofstream gt(dir / "gt.csv", std::ios::app);
    for (int i = 0; i < 10; ++i) gt << "s" << i << ",s" << (i + 1) % 10 << '\n';
  }
  const Cli shifted = cli({"eval", "--query", (dir / "q.xvem").string(), "--gallery", (dir / "g.xvem").string(), "--gt",
                           (dir / "gt.csv").string(), "--k", "1", "--out", (dir / "s.csv").string()});
  ASSERT_EQ(shifted.code, 0) << shifted.err;
  EXPECT_EQ(read_text(dir / "s.csv"), "k,recall\n1,0.100000\n");
  EXPECT_EQ(cli({"eval", "--query", (dir / "q.xvem").string(), "--gallery", (dir / "g.xvem").string(), "--k", "11"}).code,
            2);
}

TEST(Cli, TrainJointWithoutWarmStart) {
  const Cli c = cli({"train", "--stage", "joint", "--config", "x.cfg", "--manifest", "m.csv", "--out", "o.xvmc"});
  EXPECT_EQ(c.code, 1);
  EXPECT_NE(c.err.find("--warm-start"), std::string::npos) << c.err;
  EXPECT_EQ(cli({"train", "--stage", "fusion", "--config", "x.cfg", "--manifest", "m.csv", "--out", "o.xvmc"}).code, 1);
}

TEST(Cli, CannyMatchesReferenceOracle) {
  const auto dir = scratch("cli_canny");
  const GrayImage img = oracle::scene(0);
  write_gray((dir / "step.pgm").string(), img);
  const Cli c = cli({"canny", "--in", (dir / "step.pgm").string(), "--out", (dir / "edges.pgm").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  const EdgeMap got = read_edges((dir / "edges.pgm").string());
  const EdgeMap want = oracle::opencv_canny(read_gray((dir / "step.pgm").string()));
  EXPECT_GT(want.count(), 0u);
  EXPECT_GE(oracle::iou(got, want), 0.9);
}

TEST(Cli, FullFlow) {
  const auto dir = scratch("cli_flow");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(cli({"gen-data", "--clusters", "3", "--per-cluster", "10", "--test-per-cluster", "4", "--out", data,
                 "--seed", "5"}).code, 0);
  write_text(dir / "run.cfg", std::string(kTinyConfig) + kTinyJoint);
  const std::string cfg = (dir / "run.cfg").string();
  const std::string train_before = read_text(fs::path(data) / "train.csv");

  // Materialize synthesized aerials once for every stage that needs them.
  for (const char* split : {"train", "test"}) {
    const Cli p = cli({"embed", "--stage", "proxy", "--config", cfg, "--manifest", data + "/" + split + ".csv", "--out",
                       (dir / "synth").string()});
    ASSERT_EQ(p.code, 0) << p.err;
  }
  const std::string tr = (dir / "synth/train.csv").string(), te = (dir / "synth/test.csv").string();
  const std::string synth_before = read_text(tr);
  EXPECT_TRUE(load_manifest(tr).has_synth());
  EXPECT_EQ(read_text(fs::path(data) / "train.csv"), train_before);

  auto train = [&](const std::string& stage, const std::string& warm) {
    std::vector<std::string> a{"train", "--stage", stage, "--config", cfg, "--manifest", tr, "--out",
                               (dir / (stage + ".xvmc")).string()};
    if (!warm.empty()) a.insert(a.end(), {"--warm-start", (dir / (warm + ".xvmc")).string()});
    const Cli c = cli(a);
    EXPECT_EQ(c.code, 0) << c.err;
  };
  train("baseline-ga", "");
  train("baseline-synth", "");
  train("joint", "baseline-ga");
  train("fusion", "joint");
  EXPECT_EQ(read_text(tr), synth_before);  // training never rewrites its inputs
  const std::string metrics = read_text(dir / "fusion.xvmc.metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "step,loss,phase");
  EXPECT_NE(metrics.find(",hard_negative\n"), std::string::npos);

  // Wrong warm-start kind: stage error, exit 1.
  EXPECT_EQ(cli({"train", "--stage", "fusion", "--config", cfg, "--manifest", tr, "--warm-start",
                 (dir / "baseline-ga.xvmc").string(), "--out", (dir / "x.xvmc").string()}).code, 1);
  // Different seed via the environment: digest mismatch, exit 2.
  ::setenv("XVIEW_SEED", "77", 1);
  EXPECT_EQ(cli({"train", "--stage", "joint", "--config", cfg, "--manifest", tr, "--warm-start",
                 (dir / "baseline-ga.xvmc").string(), "--out", (dir / "x.xvmc").string()}).code, 2);
  ::unsetenv("XVIEW_SEED");

  const std::string fusion = (dir / "fusion.xvmc").string();
  for (const char* role : {"query", "reference"}) {
    const Cli e = cli({"embed", "--stage", "encoder", "--ckpt", fusion, "--manifest", te, "--role", role, "--out",
                       (dir / (std::string(role) + ".xvem")).string()});
    ASSERT_EQ(e.code, 0) << e.err;
  }
  const EmbeddingMatrix q = load_embeddings((dir / "query.xvem").string());
  EXPECT_EQ(q.rows(), 12u);
  EXPECT_EQ(q.dim(), 8u);
  // Query embeddings need synthesized images: the plain manifest fails.
  EXPECT_EQ(cli({"embed", "--stage", "encoder", "--ckpt", fusion, "--manifest", data + "/test.csv", "--out",
                 (dir / "bad.xvem").string()}).code, 2);

  const Cli ev = cli({"eval", "--query", (dir / "query.xvem").string(), "--gallery", (dir / "reference.xvem").string(),
                      "--out", (dir / "recall.csv").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(read_text(dir / "recall.csv").substr(0, 9), "k,recall\n");

  const Cli loc = cli({"localize", "--query", (dir / "query.xvem").string(), "--gallery",
                       (dir / "reference.xvem").string(), "--manifest", te, "--out", (dir / "geo.csv").string()});
  ASSERT_EQ(loc.code, 0) << loc.err;
  std::istringstream geo(read_text(dir / "geo.csv"));
  std::string line;
  std::getline(geo, line);
  EXPECT_EQ(line, "threshold_m,accuracy");
  double prev = -1;
  int n = 0;
  while (std::getline(geo, line)) {
    const double acc = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(acc, prev);
    prev = acc;
    ++n;
  }
  EXPECT_EQ(n, 5);

  const auto before = fs::last_write_time(fusion);
  const Cli info = cli({"info", "--ckpt", fusion});
  ASSERT_EQ(info.code, 0) << info.err;
  EXPECT_NE(info.out.find("stage fusion"), std::string::npos);
  EXPECT_NE(info.out.find("fusion.fc_ref.weight [8x8]"), std::string::npos) << info.out;
  EXPECT_EQ(fs::last_write_time(fusion), before);
}
