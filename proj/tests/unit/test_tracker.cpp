#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracle.hpp"
#include "saot/tracker.hpp"
#include "tmpdir.hpp"

using namespace saot;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "saot");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::vector<Tensor<float>> frames_of(const synth::Sequence& seq) {
  std::vector<Tensor<float>> out;
  for (const auto& f : seq.frames) out.push_back(f.features);
  return out;
}

}  // namespace

TEST_CASE("search region") {
  TrackerConfig cfg;
  CHECK(search_side(Box{0, 0, 4, 4}, cfg) == 20);
  CHECK(search_side(Box{0, 0, 1, 1}, cfg) == 12);
  CHECK(search_side(Box{0, 0, 20, 20}, cfg) == 32);

  Tensor<float> frame({6, 6, 1});
  for (std::size_t i = 0; i < 36; ++i) frame[i] = static_cast<float>(i + 1);
  const auto crop = crop_search(frame, 0.0, 0.0, 4);
  // origin = lround(0 - 1.5), halves round away from zero
  CHECK(crop.origin_row == -2);
  CHECK(crop.origin_col == -2);
  CHECK(crop.features.at(0, 0, 0) == 0.f);
  CHECK(crop.features.at(1, 3, 0) == 0.f);
  CHECK(crop.features.at(2, 2, 0) == 1.f);
  CHECK(crop.features.at(3, 2, 0) == frame.at(1, 0, 0));
  const auto inside = crop_search(frame, 2.5, 2.5, 4);
  CHECK(inside.origin_row == 1);
  CHECK(inside.features.at(0, 0, 0) == frame.at(1, 1, 0));
}

TEST_CASE("metrics") {
  Rng rng(51);
  std::vector<Box> gt;
  for (int i = 0; i < 10; ++i) gt.push_back({rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 5), rng.uniform(1, 5)});
  SUBCASE("perfect predictions") {
    const auto m = evaluate(gt, gt);
    CHECK(m.mean_iou == 1.0);
    CHECK(m.success_auc == 1.0);
    CHECK(m.precision == 1.0);
  }
  SUBCASE("no overlap") {
    std::vector<Box> far;
    for (const auto& b : gt) far.push_back(b.translated(100, 100));
    const auto m = evaluate(far, gt);
    CHECK(m.mean_iou == 0.0);
    CHECK(m.success_auc == 0.0);
    CHECK(m.precision == 0.0);
  }
  SUBCASE("brute-force agreement") {
    for (int n = 0; n < 100; ++n) {
      std::vector<Box> pred;
      for (const auto& b : gt)
        pred.push_back(b.translated(rng.uniform(-3, 3), rng.uniform(-3, 3)));
      const std::vector<std::size_t> skip = {rng.below(10)};
      const auto m = evaluate(pred, gt, skip);
      const auto o = oracle::metrics(pred, gt, skip);
      CHECK(m.mean_iou == o.mean_iou);
      CHECK(m.success_auc == o.auc);
      CHECK(m.precision == o.precision);
      CHECK(m.iou == o.iou);
    }
  }
  CHECK_THROWS_AS(evaluate(gt, std::vector<Box>(gt.begin(), gt.begin() + 3)), ValidationError);
}

TEST_CASE("tracking is deterministic and reports every frame") {
  auto wc = synth::suite_config(synth::Suite::Deform, 5);
  wc.frames = 6;
  const auto seq = synth::gen_sequence(wc);
  TrackerConfig cfg;
  Model m{cfg, init_model_params<float>(cfg)};
  const auto a = track_frames(frames_of(seq), 0, seq.manifest.exemplar_box, m);
  const auto b = track_frames(frames_of(seq), 0, seq.manifest.exemplar_box, m);
  REQUIRE(a.records.size() == 6);
  CHECK(a.records == b.records);
  for (std::size_t t = 0; t < 6; ++t) {
    CHECK(a.records[t].frame == t);
    CHECK(box_within_grid(a.records[t].box, 24, 24));
  }
  CHECK(a.records[0].box == seq.manifest.exemplar_box);
  CHECK(a.records[3].saliencies.size() == cfg.corr.saliency.k);

  // An exemplar in the middle tracks both ways.
  const auto mid = track_frames(frames_of(seq), 3, seq.frames[3].gt_box, m);
  CHECK(mid.records[3].box == seq.frames[3].gt_box);
  CHECK(mid.records[0].frame == 0);
}

TEST_CASE("base variant heads read the search features directly") {
  TrackerConfig cfg;
  cfg.corr.variant = Variant::Base;
  const auto p = init_model_params<float>(cfg);
  for (const auto& [name, t] : p.entries()) CHECK(name.rfind("cls.", 0) + name.rfind("reg.", 0) != 2 * std::string::npos);
  CHECK(p.get("cls.k1").dim(2) == cfg.channels);
}

TEST_CASE("model bundles") {
  testing::TempDir dir("model");
  TrackerConfig cfg;
  cfg.corr.variant = Variant::Pam;
  cfg.corr.gcn_orders = 3;
  cfg.head_width = 8;
  Model m{cfg, init_model_params<float>(cfg)};
  save_model(dir / "m.bin", m);
  const Model back = load_model(dir / "m.bin");
  CHECK(back.params == m.params);
  CHECK(back.cfg.corr.variant == Variant::Pam);
  CHECK(back.cfg.corr.gcn_orders == 3);
  CHECK(back.cfg.head_width == 8);

  auto broken = m;
  broken.params.get("cls.k1") = Tensor<float>({1, 1, 1, 1});
  save_model(dir / "bad.bin", broken);
  CHECK_THROWS_AS(load_model(dir / "bad.bin"), ValidationError);
}

TEST_CASE("training") {
  TrainConfig tc;
  tc.steps = 1;
  tc.batch = 2;
  TrackerConfig cfg;
  cfg.corr.saliency.k = 16;
  const auto init = init_model_params<float>(cfg);
  const Model one = train_toy(tc, cfg);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < init.size(); ++i) changed += !(init.entries()[i].second == one.params.entries()[i].second);
  CHECK(changed == init.size());

  tc.steps = 0;
  CHECK_THROWS_AS(train_toy(tc, cfg), ValidationError);
}

TEST_CASE("full-loss gradient check") {
  const auto entries = grad_check_full(Variant::Saot, 3, 2);
  CHECK_FALSE(entries.empty());
  double worst = 0;
  for (const auto& e : entries) worst = std::max(worst, e.rel_err);
  CHECK(worst <= 1e-4);
}

TEST_CASE("training lowers the loss and tracks a static target") {
  TrainConfig tc;
  tc.steps = 500;
  TrackerConfig cfg;
  cfg.corr.variant = Variant::Base;
  std::vector<double> losses;
  const Model m = train_toy(tc, cfg, [&](const LossRecord& r) { losses.push_back(r.loss); });
  REQUIRE(losses.size() == 500);
  double tail = 0;
  for (std::size_t i = 480; i < 500; ++i) tail += losses[i] / 20;
  CHECK(tail < losses[0]);

  synth::WorldConfig wc;
  wc.seed = 77;
  const auto seq = synth::gen_sequence(wc);
  const auto res = track_frames(frames_of(seq), 0, seq.manifest.exemplar_box, m);
  CHECK(evaluate(res.records, seq.manifest).mean_iou >= 0.5);
}

TEST_CASE("command line") {
  testing::TempDir dir("cli");
  const std::string seq = (dir / "seq").string(), csv = (dir / "t.csv").string();
  CHECK(run_cli({"gen", "--seed", "7", "--frames", "5", "--out", seq}) == 0);
  CHECK(run_cli({"track", "--in", seq, "--variant", "saot", "--k", "8", "--out", csv}) == 0);
  const auto recs = io::read_track_csv(std::filesystem::path(csv));
  CHECK(recs.size() == 5);
  CHECK(recs[1].saliencies.size() == 8);
  CHECK(run_cli({"track", "--in", seq, "--variant", "dw_corr", "--out", (dir / "d.csv").string()}) == 0);
  CHECK(run_cli({"eval", "--in", seq, "--tracks", csv, "--out", (dir / "m.csv").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "m.csv"));
  CHECK(run_cli({"saliency", "--in", seq, "--out", (dir / "s").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "s.pgm"));

  CHECK(run_cli({"track", "--in", seq, "--bogus", "1", "--out", csv}) == 1);
  CHECK(run_cli({"track", "--in", seq, "--variant", "nope", "--out", csv}) == 1);
  CHECK(run_cli({"track", "--in", (dir / "missing").string(), "--out", csv}) == 2);
  CHECK(run_cli({"track", "--in", seq, "--beta", "2", "--out", csv}) == 1);
  CHECK(run_cli({}) == 1);
}
