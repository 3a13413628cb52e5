#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "oracle.hpp"
#include "saot/tracker.hpp"

namespace saot {

namespace fs = std::filesystem;

namespace {

struct SaliencyFlags {
  std::size_t k = 48;
  double alpha = 0.5, lambda = 1.0, sigma_g = 2.0, beta = 0.8;
  std::size_t gcn_orders = 2;
  std::string variant = "saot";
  std::uint64_t seed = 0;
  CLI::Option* variant_opt = nullptr;
  CLI::Option* orders_opt = nullptr;
};

void add_model_flags(CLI::App* cmd, SaliencyFlags& f) {
  cmd->add_option("--seed", f.seed, "RNG seed");
  f.variant_opt = cmd->add_option("--variant", f.variant, "base|ppfm|pam|saot|dw_corr|pg_corr");
  cmd->add_option("--k", f.k, "number of saliencies K");
  cmd->add_option("--alpha", f.alpha, "concentration exponent");
  cmd->add_option("--lambda", f.lambda, "Gaussian prior weight");
  cmd->add_option("--sigma-g", f.sigma_g, "Gaussian prior std (grid units)");
  cmd->add_option("--beta", f.beta, "weight of the online filter response in fusion");
  f.orders_opt = cmd->add_option("--gcn-orders", f.gcn_orders, "polynomial order M of the GCN");
}

void apply_runtime_flags(TrackerConfig& cfg, const SaliencyFlags& f) {
  cfg.corr.saliency.k = f.k;
  cfg.corr.saliency.alpha = f.alpha;
  cfg.corr.saliency.lambda = f.lambda;
  cfg.corr.saliency.sigma_g = f.sigma_g;
  cfg.beta = f.beta;
  cfg.seed = f.seed;
}

fs::path manifest_path(const fs::path& in) { return fs::is_directory(in) ? in / "manifest.json" : in; }

std::size_t csv_columns(const std::vector<io::TrackRecord>& recs, std::size_t k) {
  for (const auto& r : recs) k = std::max(k, r.saliencies.size());
  return k;
}

int run_gen(std::uint64_t seed, const std::string& suite, std::size_t frames, const std::string& out) {
  auto cfg = synth::suite_config(synth::parse_suite(suite), seed);
  cfg.frames = frames;
  const auto seq = synth::gen_sequence(cfg);
  synth::write_sequence(out, seq);
  for (const auto& w : seq.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << seq.frames.size() << " frames to " << out << "\n";
  return 0;
}

Model model_for(const std::string& params, const SaliencyFlags& f) {
  Model m;
  if (!params.empty()) {
    m = load_model(params);
    if (f.variant_opt->count() && parse_variant(f.variant) != m.cfg.corr.variant)
      throw ValidationError(std::string("--variant ") + f.variant + " does not match the bundle's variant " +
                            variant_name(m.cfg.corr.variant));
    if (f.orders_opt->count() && f.gcn_orders != m.cfg.corr.gcn_orders)
      throw ValidationError("--gcn-orders does not match the bundle");
  } else {
    m.cfg.corr.variant = parse_variant(f.variant);
    m.cfg.corr.gcn_orders = f.gcn_orders;
    m.cfg.seed = f.seed;
    m.params = init_model_params<float>(m.cfg);
    std::cerr << "warning: no --params given, using untrained parameters\n";
  }
  apply_runtime_flags(m.cfg, f);
  m.cfg.validate();
  return m;
}

int run_track(const std::string& in, const std::string& params, const std::string& out, const SaliencyFlags& f) {
  const auto manifest = io::read_manifest(manifest_path(in));
  Model m = model_for(params, f);
  const auto res = track_sequence(manifest, m);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  io::write_track_csv(out, res.records, csv_columns(res.records, m.cfg.corr.saliency.k));
  std::cout << "wrote " << res.records.size() << " records to " << out << "\n";
  return 0;
}

int run_train(const TrainConfig& tc, TrackerConfig cfg, const SaliencyFlags& f, const std::string& out,
              std::string loss_csv) {
  cfg.corr.variant = parse_variant(f.variant);
  cfg.corr.gcn_orders = f.gcn_orders;
  apply_runtime_flags(cfg, f);
  if (tc.steps > 2000) std::cerr << "warning: more than 2000 steps requested\n";
  if (loss_csv.empty()) loss_csv = out + ".loss.csv";
  std::ofstream curve(loss_csv);
  if (!curve) throw IoError("cannot write loss curve " + loss_csv);
  curve << "step,loss,cls,reg,lr\n";
  const Model m = train_toy(tc, cfg, [&](const LossRecord& r) {
    curve << r.step << ',' << io::format_number(r.loss) << ',' << io::format_number(r.cls) << ','
          << io::format_number(r.reg) << ',' << io::format_number(r.lr) << '\n';
    if (r.step == 1 || r.step % 100 == 0 || r.step == tc.steps)
      std::cerr << "step " << r.step << " loss " << r.loss << "\n";
  });
  save_model(out, m);
  std::cout << "wrote " << out << " and " << loss_csv << "\n";
  return 0;
}

int run_grad_check(const SaliencyFlags& f) {
  const auto entries = grad_check_full(parse_variant(f.variant), f.seed);
  double worst = 0;
  for (const auto& e : entries) worst = std::max(worst, e.rel_err);
  std::cout << "checked " << entries.size() << " entries, worst relative error " << worst << "\n";
  return worst <= 1e-4 ? 0 : 1;
}

int run_eval(const std::string& in, const std::string& tracks, const std::string& out) {
  const auto manifest = io::read_manifest(manifest_path(in));
  const auto recs = io::read_track_csv(fs::path(tracks));
  const Metrics m = evaluate(recs, manifest);
  std::ostringstream csv;
  csv << "metric,value\n"
      << "frames," << m.iou.size() << "\n"
      << "mean_iou," << io::format_number(m.mean_iou) << "\n"
      << "success_auc," << io::format_number(m.success_auc) << "\n"
      << "precision," << io::format_number(m.precision) << "\n";
  for (std::size_t k = 0; k < m.success_curve.size(); ++k)
    csv << "success_iou_gt_" << io::format_number(static_cast<double>(k) / 20.0) << ','
        << io::format_number(m.success_curve[k]) << "\n";
  std::cout << csv.str();
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw IoError("cannot write " + out);
    os << csv.str();
  }
  return 0;
}

int run_saliency(const std::string& in, long frame, const std::string& out, const SaliencyFlags& f) {
  const auto manifest = io::read_manifest(manifest_path(in));
  const std::size_t ex = manifest.exemplar_frame_index;
  const std::size_t t = frame < 0 ? (ex + 1 < manifest.frames.size() ? ex + 1 : ex) : static_cast<std::size_t>(frame);
  if (t >= manifest.frames.size()) throw ValidationError("--frame out of range");
  SaliencyConfig sc;
  sc.k = f.k;
  sc.alpha = f.alpha;
  sc.lambda = f.lambda;
  sc.sigma_g = f.sigma_g;
  const auto fx = roi_pool_exemplar(io::read_tensor(manifest.frame_path(ex)), manifest.exemplar_box);
  const auto vol = build_similarity_volume(fx, io::read_tensor(manifest.frame_path(t)));
  const auto sal = select_saliencies(vol, sc);
  Tensor<float> map({vol.hx, vol.wx});
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<float>(sal.all_scores[i]);
  io::dump_pgm(map, out + ".pgm");
  std::ofstream os(out + ".csv");
  if (!os) throw IoError("cannot write " + out + ".csv");
  os << "u,v,score,selected,match_x,match_y\n";
  std::vector<int> rank(map.size(), -1);
  for (std::size_t k = 0; k < sal.px.size(); ++k) rank[sal.px[k].row * vol.wx + sal.px[k].col] = static_cast<int>(k);
  for (std::size_t i = 0; i < map.size(); ++i) {
    os << i / vol.wx << ',' << i % vol.wx << ',' << io::format_number(sal.all_scores[i]) << ',' << (rank[i] >= 0);
    if (rank[i] >= 0) os << ',' << sal.ps[rank[i]].col << ',' << sal.ps[rank[i]].row;
    else os << ",,";
    os << '\n';
  }
  std::cout << "wrote " << out << ".pgm and " << out << ".csv\n";
  return 0;
}

int run_oracle(std::uint64_t seed) {
  bool ok = true;
  for (const auto& s : oracle::run_suites(seed)) {
    std::printf("%-24s %s  cases=%zu worst=%.3g tol=%.3g\n", s.name.c_str(), s.pass ? "PASS" : "FAIL", s.cases,
                s.worst, s.tol);
    ok = ok && s.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Saliency-associated tracking on synthetic feature grids"};
  app.require_subcommand(1);

  std::uint64_t gen_seed = 0;
  std::string gen_suite = "rigid", gen_out;
  std::size_t gen_frames = 20;
  auto* gen = app.add_subcommand("gen", "generate a synthetic sequence");
  gen->add_option("--seed", gen_seed, "world seed");
  gen->add_option("--suite", gen_suite, "rigid|deform");
  gen->add_option("--frames", gen_frames, "number of frames");
  gen->add_option("--out", gen_out, "output directory")->required();

  SaliencyFlags track_flags;
  std::string track_in, track_params, track_out;
  auto* track = app.add_subcommand("track", "track a sequence and write a CSV of records");
  track->add_option("--in", track_in, "sequence directory or manifest path")->required();
  track->add_option("--params", track_params, "parameter bundle from `train`");
  track->add_option("--out", track_out, "output CSV")->required();
  add_model_flags(track, track_flags);

  SaliencyFlags train_flags;
  TrainConfig tc;
  TrackerConfig train_cfg;
  std::string train_out, loss_csv;
  bool grad_check = false;
  auto* train = app.add_subcommand("train", "train on synthetic worlds");
  add_model_flags(train, train_flags);
  train->add_option("--steps", tc.steps, "optimizer steps");
  train->add_option("--batch", tc.batch, "samples per step");
  train->add_option("--lr", tc.lr, "initial learning rate");
  train->add_option("--head-width", train_cfg.head_width, "head conv width");
  train->add_option("--d1", train_cfg.corr.d1, "first GCN width");
  train->add_option("--d2", train_cfg.corr.d2, "correlation map width");
  train->add_option("--d-e", train_cfg.corr.d_e, "edge MLP hidden width");
  train->add_option("--out", train_out, "output parameter bundle");
  train->add_option("--loss-csv", loss_csv, "loss curve CSV (default <out>.loss.csv)");
  train->add_flag("--grad-check", grad_check, "run the 64-bit finite-difference check instead of training");

  std::string eval_in, eval_tracks, eval_out;
  auto* ev = app.add_subcommand("eval", "score a track CSV against ground truth");
  ev->add_option("--in", eval_in, "sequence directory or manifest path")->required();
  ev->add_option("--tracks", eval_tracks, "track CSV")->required();
  ev->add_option("--out", eval_out, "metrics CSV");

  SaliencyFlags sal_flags;
  std::string sal_in, sal_out;
  long sal_frame = -1;
  auto* sal = app.add_subcommand("saliency", "dump the exemplar saliency map as PGM + CSV");
  sal->add_option("--in", sal_in, "sequence directory or manifest path")->required();
  sal->add_option("--frame", sal_frame, "search frame index (default: the frame after the exemplar)");
  sal->add_option("--out", sal_out, "output prefix")->required();
  add_model_flags(sal, sal_flags);

  std::uint64_t oracle_seed = 0;
  auto* orc = app.add_subcommand("oracle", "run brute-force equivalence suites");
  orc->add_option("--seed", oracle_seed, "seed for random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return run_gen(gen_seed, gen_suite, gen_frames, gen_out);
    if (*track) return run_track(track_in, track_params, track_out, track_flags);
    if (*train) {
      if (grad_check) return run_grad_check(train_flags);
      if (train_out.empty()) throw ValidationError("train needs --out");
      train_cfg.seed = train_flags.seed;
      tc.seed = train_flags.seed;
      return run_train(tc, train_cfg, train_flags, train_out, loss_csv);
    }
    if (*ev) return run_eval(eval_in, eval_tracks, eval_out);
    if (*sal) return run_saliency(sal_in, sal_frame, sal_out, sal_flags);
    if (*orc) return run_oracle(oracle_seed);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace saot
