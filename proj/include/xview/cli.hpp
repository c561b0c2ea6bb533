#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xview/canny.hpp"
#include "xview/config.hpp"
#include "xview/dataset.hpp"
#include "xview/error.hpp"
#include "xview/image.hpp"
#include "xview/io.hpp"
#include "xview/manifest.hpp"
#include "xview/retrieval.hpp"
#include "xview/training.hpp"

namespace xview {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

// Ground-truth file: CSV "query_id,gallery_id", header optional.
inline std::map<std::string, std::string> load_gt_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground-truth file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw DataError(path + ":" + std::to_string(lineno) + ": expected 'query_id,gallery_id'");
    if (lineno == 1 && f[0] == "query_id") continue;
    if (!out.emplace(trim(f[0]), trim(f[1])).second) {
      throw DataError(path + ":" + std::to_string(lineno) + ": duplicate query id '" + f[0] + "'");
    }
  }
  return out;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline bool role_needs_synth(Stage s, Role r) {
  if (r == Role::synth) return true;
  return r == Role::query && (s == Stage::baseline_synth || s == Stage::fusion);
}

struct CliState {
  // gen-data
  SyntheticSpec spec;
  std::string out;
  // canny
  std::string in;
  CannyParams canny;
  // embed / train
  std::string stage;
  std::string ckpt, manifest, config, warm_start, metrics, role = "query";
  bool with_edgemap = false;
  ProxyConfig proxy;
  std::string complement_mask;
  // eval / localize
  std::string query, gallery, gt;
  std::vector<std::size_t> ks{1, 10};
  std::vector<double> thresholds{5, 10, 25, 50, 100};
};

inline void cmd_gen_data(const CliState& s, std::ostream& out) {
  const SyntheticDataset ds = generate_synthetic(s.spec);
  write_synthetic(ds, s.out);
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test pairs to " << s.out << '\n';
}

inline void cmd_canny(const CliState& s, std::ostream& out) {
  const EdgeMap e = canny(read_gray(s.in), s.canny);
  write_edges(s.out, e);
  out << s.out << ": " << e.count() << " edge pixels\n";
}

inline ProxyConfig proxy_from(const CliState& s) {
  if (!s.config.empty()) {
    return ConfigFile::load(s.config).resolve(Stage::baseline_synth, seed_from_env()).proxy;
  }
  ProxyConfig p = s.proxy;
  for (const auto& v : split_list(s.complement_mask, ';')) p.complement_mask.insert(parse_uint("--complement-mask", v));
  if (auto env = seed_from_env()) p.seed = *env;
  p.validate();
  return p;
}

inline void cmd_embed(const CliState& s, std::ostream& out) {
  const Manifest m = load_manifest(s.manifest);
  if (s.stage == "proxy") {
    const ProxyConfig p = proxy_from(s);
    const Manifest synth = materialize_synth(m, p, s.out);
    const std::filesystem::path dest =
        std::filesystem::path(s.out) / ((m.split.empty() ? std::string("manifest") : m.split) + ".csv");
    write_manifest(dest.string(), synth);
    out << "synthesized " << synth.rows.size() << " images; manifest " << dest.string() << '\n';
    return;
  }
  if (s.stage != "encoder") throw ConfigError("embed --stage must be 'encoder' or 'proxy', got '" + s.stage + "'");
  if (s.ckpt.empty()) throw ConfigError("embed --stage encoder requires --ckpt");
  const StageModel model = model_from_checkpoint(load_checkpoint(s.ckpt));
  const Role role = parse_role(s.role);
  const PairedData d = load_pairs(m, role_needs_synth(model.cfg.stage, role), model.cfg.edgemap || s.with_edgemap);
  const EmbeddingMatrix e(d.ids, model.embed(role, d));
  save_embeddings(s.out, e);
  out << "embedded " << e.rows() << " x " << e.dim() << " (" << stage_name(model.cfg.stage) << ", " << s.role
      << ") -> " << s.out << '\n';
}

inline void cmd_train(const CliState& s, std::ostream& out) {
  const Stage st = parse_stage(s.stage);
  if (st == Stage::joint && s.warm_start.empty()) {
    throw StageError("train --stage joint requires --warm-start with a baseline-ga checkpoint");
  }
  if (st == Stage::fusion && s.warm_start.empty()) {
    throw StageError("train --stage fusion requires --warm-start with a joint checkpoint");
  }
  const StageConfig cfg = ConfigFile::load(s.config).resolve(st, seed_from_env());
  const Manifest m = load_manifest(s.manifest);
  const PairedData d = load_pairs(m, stage_needs_synth(st), cfg.edgemap);
  std::optional<Checkpoint> warm;
  if (!s.warm_start.empty()) warm = load_checkpoint(s.warm_start);
  const StageResult res = run_stage(cfg, d, warm);
  save_checkpoint(s.out, res.checkpoint());
  const std::string metrics = s.metrics.empty() ? s.out + ".metrics.csv" : s.metrics;
  write_metrics_csv(metrics, res.log);
  out << stage_name(st) << ": " << res.log.rows.size() << " steps";
  if (!res.log.rows.empty()) out << ", loss " << fixed6(res.log.first_loss()) << " -> " << fixed6(res.log.last_loss());
  out << '\n';
  for (const auto& [step, r] : res.log.train_recall) out << "  step " << step << " train recall@1 " << fixed6(r) << '\n';
  out << "checkpoint " << s.out << ", metrics " << metrics << '\n';
}

inline void cmd_eval(const CliState& s, std::ostream& out) {
  const EmbeddingMatrix q = load_embeddings(s.query);
  const EmbeddingMatrix g = load_embeddings(s.gallery);
  if (q.rows() == 0 || g.rows() == 0) throw DataError("eval needs non-empty query and gallery embeddings");
  const auto gt = resolve_ground_truth(q, g, s.gt.empty() ? std::map<std::string, std::string>{} : load_gt_map(s.gt));
  const RecallReport rep = recall_report(distance_matrix(q, g), gt, s.ks);
  std::vector<std::pair<std::size_t, double>> rows(rep.recall_at.begin(), rep.recall_at.end());
  out << "queries " << q.rows() << ", gallery " << rep.gallery_size << '\n';
  out << "K\trecall\n";
  for (const auto& [k, r] : rows) out << k << '\t' << fixed6(r) << '\n';
  out << "top-1% (K=" << rep.top_one_percent_k << ")\t" << fixed6(rep.top_one_percent) << '\n';
  if (!s.out.empty()) write_recall_csv(s.out, rows);
}

inline void cmd_localize(const CliState& s, std::ostream& out) {
  const EmbeddingMatrix q = load_embeddings(s.query);
  const EmbeddingMatrix g = load_embeddings(s.gallery);
  const Manifest m = load_manifest(s.manifest, false);
  if (!m.has_geo()) throw DataError("manifest '" + s.manifest + "' has no lat/lon columns");
  const auto index = m.geo_index();
  const auto curve =
      geolocalize_curve(distance_matrix(q, g), lookup_geos(q.ids(), index), lookup_geos(g.ids(), index), s.thresholds);
  out << "threshold_m\taccuracy\n";
  for (const auto& p : curve) out << p.threshold_m << '\t' << fixed6(p.accuracy) << '\n';
  if (!s.out.empty()) write_curve_csv(s.out, curve);
}

inline void cmd_info(const CliState& s, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(s.ckpt);
  out << "stage " << ck.stage << "\nseed " << ck.seed << "\nconfig digest " << hex64(ck.config_digest) << '\n';
  out << "tensors " << ck.tensors.size() << ", scalars " << ck.scalar_count() << '\n';
  for (const auto& [name, t] : ck.tensors) out << "  " << name << ' ' << shape_str(t.shape()) << '\n';
  out << "config:\n" << ck.config_text;
}

}  // namespace detail

// Runs one CLI invocation; args exclude the program name. Returns the exit
// code: 0 ok, 1 usage or stage-order error, 2 data/config error, 3 numeric abort.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cross-view image retrieval toolkit", "xview"};
  app.require_subcommand(1);
  detail::CliState s;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic paired benchmark");
  gen->add_option("--clusters", s.spec.clusters)->required();
  gen->add_option("--per-cluster", s.spec.per_cluster)->required();
  gen->add_option("--out", s.out)->required();
  gen->add_option("--seed", s.spec.seed)->required();
  gen->add_option("--complementary-dims", s.spec.complementary_dims)->capture_default_str();
  gen->add_option("--test-per-cluster", s.spec.test_per_cluster)->capture_default_str();
  gen->add_option("--latent-dims", s.spec.latent_dims)->capture_default_str();
  gen->add_option("--noise", s.spec.noise)->capture_default_str();

  auto* cny = app.add_subcommand("canny", "Canny edge map of an image");
  cny->add_option("--in", s.in)->required();
  cny->add_option("--out", s.out)->required();
  cny->add_option("--sigma", s.canny.sigma)->capture_default_str();
  cny->add_option("--low", s.canny.low)->capture_default_str();
  cny->add_option("--high", s.canny.high)->capture_default_str();

  auto* emb = app.add_subcommand("embed", "Embed a manifest with a checkpoint, or synthesize proxy images");
  emb->add_option("--stage", s.stage)->required()->check(CLI::IsMember({"encoder", "proxy"}));
  emb->add_option("--ckpt", s.ckpt);
  emb->add_option("--manifest", s.manifest)->required();
  emb->add_option("--out", s.out, "embedding file (encoder) or output directory (proxy)")->required();
  emb->add_flag("--with-edgemap", s.with_edgemap);
  emb->add_option("--role", s.role)->check(CLI::IsMember({"query", "reference", "synth"}))->capture_default_str();
  emb->add_option("--config", s.config, "take proxy settings from a config file");
  emb->add_option("--fidelity", s.proxy.fidelity)->capture_default_str();
  emb->add_option("--noise-std", s.proxy.noise_std)->capture_default_str();
  emb->add_option("--proxy-seed", s.proxy.seed)->capture_default_str();
  emb->add_option("--complement-mask", s.complement_mask, "';'-separated channel indices");

  auto* trn = app.add_subcommand("train", "Train one stage");
  trn->add_option("--stage", s.stage)
      ->required()
      ->check(CLI::IsMember({"baseline-ga", "baseline-synth", "joint", "fusion"}));
  trn->add_option("--config", s.config)->required();
  trn->add_option("--manifest", s.manifest)->required();
  trn->add_option("--warm-start", s.warm_start);
  trn->add_option("--out", s.out)->required();
  trn->add_option("--metrics", s.metrics, "metrics CSV (default: <out>.metrics.csv)");

  auto* evl = app.add_subcommand("eval", "Recall@K of query embeddings against a gallery");
  evl->add_option("--query", s.query)->required();
  evl->add_option("--gallery", s.gallery)->required();
  evl->add_option("--gt", s.gt, "CSV query_id,gallery_id (default: match identical ids)");
  evl->add_option("--k", s.ks)->delimiter(',')->capture_default_str();
  evl->add_option("--out", s.out);

  auto* loc = app.add_subcommand("localize", "Geo-localization accuracy curve");
  loc->add_option("--query", s.query)->required();
  loc->add_option("--gallery", s.gallery)->required();
  loc->add_option("--manifest", s.manifest)->required();
  loc->add_option("--thresholds", s.thresholds)->delimiter(',')->capture_default_str();
  loc->add_option("--out", s.out);

  auto* inf = app.add_subcommand("info", "Describe a checkpoint");
  inf->add_option("--ckpt", s.ckpt)->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) detail::cmd_gen_data(s, out);
    else if (*cny) detail::cmd_canny(s, out);
    else if (*emb) detail::cmd_embed(s, out);
    else if (*trn) detail::cmd_train(s, out);
    else if (*evl) detail::cmd_eval(s, out);
    else if (*loc) detail::cmd_localize(s, out);
    else if (*inf) detail::cmd_info(s, out);
    return kExitOk;
  } catch (const StageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace xview
