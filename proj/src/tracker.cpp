#include "saot/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace saot {

using nlohmann::json;

void TrackerConfig::validate() const {
  corr.validate();
  filter.validate();
  if (!(beta >= 0 && beta <= 1)) throw ValidationError("beta must be in [0,1]");
  if (head_width < 1 || channels < 1) throw ValidationError("head width and channels must be >= 1");
  if (!(search_scale > 0) || min_search < 1 || max_search < min_search)
    throw ValidationError("invalid search-region settings");
}

template <typename T>
ParamSet<T> init_model_params(const TrackerConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).split(0x5A07);
  ParamSet<T> p;
  init_correlation_params(p, cfg.corr, cfg.channels, rng);
  init_head_params(p, cfg.corr.output_channels(cfg.channels), cfg.head_width, rng);
  return p;
}

json model_meta(const TrackerConfig& cfg) {
  return {{"variant", variant_name(cfg.corr.variant)},
          {"channels", cfg.channels},
          {"exemplar_size", cfg.corr.exemplar_size},
          {"gcn_orders", cfg.corr.gcn_orders},
          {"d_e", cfg.corr.d_e},
          {"d1", cfg.corr.d1},
          {"d2", cfg.corr.d2},
          {"act0", activation_name(cfg.corr.act0)},
          {"act1", activation_name(cfg.corr.act1)},
          {"head_width", cfg.head_width},
          {"k", cfg.corr.saliency.k},
          {"seed", cfg.seed}};
}

void apply_model_meta(TrackerConfig& cfg, const json& meta) {
  try {
    cfg.corr.variant = parse_variant(meta.at("variant").get<std::string>());
    cfg.channels = meta.at("channels").get<std::size_t>();
    cfg.corr.exemplar_size = meta.at("exemplar_size").get<std::size_t>();
    cfg.corr.gcn_orders = meta.at("gcn_orders").get<std::size_t>();
    cfg.corr.d_e = meta.at("d_e").get<std::size_t>();
    cfg.corr.d1 = meta.at("d1").get<std::size_t>();
    cfg.corr.d2 = meta.at("d2").get<std::size_t>();
    cfg.corr.act0 = parse_activation(meta.at("act0").get<std::string>());
    cfg.corr.act1 = parse_activation(meta.at("act1").get<std::string>());
    cfg.head_width = meta.at("head_width").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model bundle meta incomplete: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& m) {
  io::write_param_bundle(path, m.params, model_meta(m.cfg));
}

Model load_model(const std::filesystem::path& path) {
  json meta;
  Model m;
  m.params = io::read_param_bundle(path, &meta);
  apply_model_meta(m.cfg, meta);
  const auto expected = init_model_params<float>(m.cfg);
  if (expected.size() != m.params.size()) throw ValidationError("model bundle does not match its architecture");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected.entries()[i].first != m.params.entries()[i].first ||
        expected.entries()[i].second.shape() != m.params.entries()[i].second.shape())
      throw ValidationError("model bundle parameter '" + m.params.entries()[i].first + "' has the wrong name or shape");
  return m;
}

std::size_t search_side(const Box& prev, const TrackerConfig& cfg) {
  const double s = cfg.search_scale * std::sqrt(std::max(prev.area(), 1e-6));
  return static_cast<std::size_t>(
      std::clamp<long>(std::lround(s), static_cast<long>(cfg.min_search), static_cast<long>(cfg.max_search)));
}

SearchCrop crop_search(const Tensor<float>& frame, double cx, double cy, std::size_t side) {
  if (frame.rank() != 3) throw DimensionError("crop_search expects a [h,w,c] frame");
  const std::size_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  SearchCrop crop;
  crop.origin_row = std::lround(cy - (static_cast<double>(side) - 1) / 2);
  crop.origin_col = std::lround(cx - (static_cast<double>(side) - 1) / 2);
  crop.features = Tensor<float>({side, side, C});
  for (std::size_t i = 0; i < side; ++i) {
    const long r = crop.origin_row + static_cast<long>(i);
    if (r < 0 || r >= static_cast<long>(H)) continue;
    for (std::size_t j = 0; j < side; ++j) {
      const long q = crop.origin_col + static_cast<long>(j);
      if (q < 0 || q >= static_cast<long>(W)) continue;
      const float* src = &frame.at(static_cast<std::size_t>(r), static_cast<std::size_t>(q), 0);
      std::copy(src, src + C, &crop.features.at(i, j, 0));
    }
  }
  return crop;
}

namespace {

struct FrameOutput {
  SearchCrop crop;
  Tensor<float> corr;
  Tensor<float> p_o;
  Tensor<float> offsets;
  CorrelationTrace trace;
};

FrameOutput run_frame(const Tensor<float>& fx, const Tensor<float>& frame, const Box& prev, const Model& model,
                      const BoundParams<float>& bp) {
  FrameOutput out;
  out.crop = crop_search(frame, prev.cx(), prev.cy(), search_side(prev, model.cfg));
  const Var<float> corr = correlate(fx, out.crop.features, model.cfg.corr, bp, &out.trace);
  out.p_o = cls_head(corr, bp).value();
  out.offsets = reg_head(corr, bp).value();
  out.corr = corr.value();
  return out;
}

io::TrackRecord make_record(std::size_t t, const Box& box, double conf, const FrameOutput& fo) {
  io::TrackRecord rec;
  rec.frame = t;
  rec.box = box;
  rec.confidence = conf;
  const auto& sal = fo.trace.saliencies;
  for (std::size_t k = 0; k < sal.ps.size(); ++k)
    rec.saliencies.push_back({static_cast<double>(static_cast<long>(sal.ps[k].col) + fo.crop.origin_col),
                              static_cast<double>(static_cast<long>(sal.ps[k].row) + fo.crop.origin_row),
                              sal.values[k]});
  return rec;
}

}  // namespace

TrackResult track_frames(const std::vector<Tensor<float>>& frames, std::size_t exemplar_index, const Box& exemplar_box,
                         const Model& model) {
  const TrackerConfig& cfg = model.cfg;
  cfg.validate();
  if (frames.empty() || exemplar_index >= frames.size()) throw ValidationError("exemplar frame index out of range");
  for (std::size_t t = 0; t < frames.size(); ++t)
    if (frames[t].rank() != 3 || frames[t].dim(2) != cfg.channels)
      throw ValidationError("frame " + std::to_string(t) + " must be [h,w," + std::to_string(cfg.channels) + "]");
  const std::size_t H = frames[exemplar_index].dim(0), W = frames[exemplar_index].dim(1);
  const std::size_t es = cfg.corr.exemplar_size;
  const Tensor<float> fx = roi_pool_exemplar(frames[exemplar_index], exemplar_box, es, es);
  const BoundParams<float> bp(model.params, nullptr);

  TrackResult result;
  std::vector<io::TrackRecord> recs(frames.size());
  OnlineFilterState filter;
  {
    const FrameOutput fo = run_frame(fx, frames[exemplar_index], exemplar_box, model, bp);
    const Tensor<float> label =
        gaussian_label<float>(fo.crop.features.dim(0), fo.crop.features.dim(1),
                              exemplar_box.cx() - fo.crop.origin_col, exemplar_box.cy() - fo.crop.origin_row,
                              cfg.filter.label_sigma);
    online_filter_init(filter, fo.corr, label, cfg.filter);
    recs[exemplar_index] = make_record(exemplar_index, exemplar_box, 1.0, fo);
  }

  auto step = [&](std::size_t t, Box& prev) {
    const FrameOutput fo = run_frame(fx, frames[t], prev, model, bp);
    const Tensor<float> p_r = filter_response(filter, fo.corr);
    const Tensor<float> p_cls = fuse_response(p_r, fo.p_o, cfg.beta);
    const Decoded d = decode_box(p_cls, fo.offsets);
    Box box = clamp_box(d.box.translated(static_cast<double>(fo.crop.origin_col), static_cast<double>(fo.crop.origin_row)),
                        H, W, 0.5);
    if (fo.trace.degenerate_saliency) result.warnings.push_back("frame " + std::to_string(t) + ": all saliencies <= 0");
    const Tensor<float> label = gaussian_label<float>(fo.crop.features.dim(0), fo.crop.features.dim(1),
                                                      box.cx() - fo.crop.origin_col, box.cy() - fo.crop.origin_row,
                                                      cfg.filter.label_sigma);
    if (!online_filter_update(filter, fo.corr, label, cfg.filter))
      result.warnings.push_back("frame " + std::to_string(t) + ": non-finite features, filter update skipped");
    recs[t] = make_record(t, box, d.confidence, fo);
    prev = box;
  };

  Box prev = exemplar_box;
  for (std::size_t t = exemplar_index + 1; t < frames.size(); ++t) step(t, prev);
  prev = exemplar_box;
  for (std::size_t t = exemplar_index; t-- > 0;) step(t, prev);
  result.records = std::move(recs);
  return result;
}

TrackResult track_sequence(const io::SequenceManifest& manifest, const Model& model) {
  std::vector<Tensor<float>> frames;
  frames.reserve(manifest.frames.size());
  for (std::size_t t = 0; t < manifest.frames.size(); ++t) {
    try {
      frames.push_back(io::read_tensor(manifest.frame_path(t)));
    } catch (const IoError& e) {
      throw IoError("frame " + std::to_string(t) + ": " + e.what());
    }
  }
  return track_frames(frames, manifest.exemplar_frame_index, manifest.exemplar_box, model);
}

void TrainConfig::validate() const {
  if (steps < 1) throw ValidationError("train steps must be >= 1");
  if (batch < 1) throw ValidationError("batch size must be >= 1");
  if (!(lr > 0) || !(lr_final > 0)) throw ValidationError("learning rates must be > 0");
  if (weight_decay < 0 || cls_weight < 0 || reg_weight < 0 || !(pos_weight > 0))
    throw ValidationError("loss weights must be nonnegative");
  if (pool_worlds < 1) throw ValidationError("training pool needs at least one world");
}

SamplePool::SamplePool(const TrainConfig& tc, const TrackerConfig& cfg) : cfg_(cfg), shift_(tc.shift) {
  for (std::size_t i = 0; i < tc.pool_worlds; ++i) {
    auto wc = synth::suite_config(i % 2 ? synth::Suite::Deform : synth::Suite::Rigid, tc.world_seed_base + i);
    wc.channels = cfg.channels;
    worlds_.push_back(synth::gen_sequence(wc));
  }
}

TrainSample SamplePool::draw(Rng& rng) const {
  const auto& w = worlds_[rng.below(worlds_.size())];
  const std::size_t t = 1 + rng.below(w.frames.size() - 1);
  const std::size_t es = cfg_.corr.exemplar_size;
  TrainSample s;
  s.exemplar = roi_pool_exemplar(w.frames[0].features, w.frames[0].gt_box, es, es);
  const Box& gt = w.frames[t].gt_box;
  const Box& prev = w.frames[t - 1].gt_box;
  const double cx = gt.cx() + rng.uniform(-shift_, shift_);
  const double cy = gt.cy() + rng.uniform(-shift_, shift_);
  const SearchCrop crop = crop_search(w.frames[t].features, cx, cy, search_side(prev, cfg_));
  s.search = crop.features;
  s.gt = gt.translated(-static_cast<double>(crop.origin_col), -static_cast<double>(crop.origin_row));
  return s;
}

template <typename T>
LossTerms<T> sample_loss(const TrainSample& s, const TrackerConfig& cfg, const TrainConfig& tc,
                         const BoundParams<T>& p) {
  const Tensor<T> fx = s.exemplar.template cast<T>();
  const Tensor<T> fs = s.search.template cast<T>();
  const Var<T> corr = correlate(fx, fs, cfg.corr, p);
  const Var<T> p_o = cls_head(corr, p);
  const Var<T> off = reg_head(corr, p);
  const std::size_t h = fs.dim(0), w = fs.dim(1);
  const Tensor<T> labels = center_labels<T>(h, w, s.gt.cx(), s.gt.cy(), 1.5);
  std::vector<Location> pos;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      if (labels.at(i, j) > T{0}) pos.push_back({i, j});
  if (pos.empty()) {
    // nearest cell to an off-grid centre
    const std::size_t i = static_cast<std::size_t>(std::clamp<long>(std::lround(s.gt.cy()), 0, static_cast<long>(h) - 1));
    const std::size_t j = static_cast<std::size_t>(std::clamp<long>(std::lround(s.gt.cx()), 0, static_cast<long>(w) - 1));
    pos.push_back({i, j});
  }
  LossTerms<T> out;
  out.cls = bce_loss(p_o, labels, tc.pos_weight);
  out.reg = giou_loss_op(off, pos, s.gt);
  out.total = ad::add(ad::scale(out.cls, static_cast<T>(tc.cls_weight)), ad::scale(out.reg, static_cast<T>(tc.reg_weight)));
  return out;
}

Model train_toy(const TrainConfig& tc, const TrackerConfig& cfg, const std::function<void(const LossRecord&)>& on_step) {
  tc.validate();
  Model model;
  model.cfg = cfg;
  model.params = init_model_params<float>(cfg);
  const SamplePool pool(tc, cfg);
  Rng rng = Rng(tc.seed).split(0x7EA1);
  AdamState<float> state;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    const double frac = tc.steps > 1 ? static_cast<double>(step) / static_cast<double>(tc.steps - 1) : 0.0;
    const double lr = tc.lr * std::pow(tc.lr_final / tc.lr, frac);
    std::vector<Tensor<float>> grads;
    LossRecord rec;
    rec.step = step + 1;
    rec.lr = lr;
    for (std::size_t b = 0; b < tc.batch; ++b) {
      const TrainSample s = pool.draw(rng);
      GradTape<float> tape;
      const BoundParams<float> bp(model.params, &tape);
      const LossTerms<float> l = sample_loss(s, cfg, tc, bp);
      const double lv = l.total.value()[0];
      if (!std::isfinite(lv)) throw NumericError("non-finite loss at step " + std::to_string(step + 1));
      tape.backward(l.total);
      auto g = bp.grads();
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (std::size_t i = 0; i < grads.size(); ++i)
          for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g[i][j];
      }
      rec.loss += lv / tc.batch;
      rec.cls += l.cls.value()[0] / tc.batch;
      rec.reg += l.reg.value()[0] / tc.batch;
    }
    for (auto& g : grads)
      for (auto& v : g.data()) v /= static_cast<float>(tc.batch);
    adam_step(model.params, grads, state, lr, tc.weight_decay);
    if (on_step) on_step(rec);
  }
  return model;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

std::vector<GradCheckEntry> grad_check_full(Variant variant, std::uint64_t seed, std::size_t points, double step) {
  synth::WorldConfig wc;
  wc.height = wc.width = 12;
  wc.n_parts = 6;
  wc.part_spread = 1.5;
  wc.frames = 2;
  wc.motion.dx = 0.7;
  wc.n_distractors = 0;
  wc.seed = seed;
  const auto world = synth::gen_sequence(wc);

  TrackerConfig cfg;
  cfg.corr.variant = variant;
  cfg.corr.d_e = 6;
  cfg.corr.d1 = 8;
  cfg.corr.d2 = 8;
  cfg.corr.saliency.k = 16;
  cfg.head_width = 6;
  cfg.min_search = cfg.max_search = 12;
  cfg.seed = seed;
  TrainConfig tc;

  TrainSample s;
  s.exemplar = roi_pool_exemplar(world.frames[0].features, world.frames[0].gt_box, 8, 8);
  const Box& gt = world.frames[1].gt_box;
  const SearchCrop crop = crop_search(world.frames[1].features, gt.cx(), gt.cy(), 12);
  s.search = crop.features;
  s.gt = gt.translated(-static_cast<double>(crop.origin_col), -static_cast<double>(crop.origin_row));

  ParamSet<double> params = init_model_params<double>(cfg);
  // Perturb biases off zero so every path carries signal.
  Rng rng = Rng(seed).split(0x6C);
  for (auto& [name, t] : params.entries())
    for (auto& v : t.data()) v += rng.normal(0.0, 0.05);

  GradTape<double> tape;
  const BoundParams<double> bp(params, &tape);
  const auto loss = sample_loss(s, cfg, tc, bp);
  tape.backward(loss.total);
  const auto grads = bp.grads();

  auto eval = [&]() {
    const BoundParams<double> c(params, nullptr);
    return sample_loss(s, cfg, tc, c).total.value()[0];
  };
  std::vector<GradCheckEntry> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params.entries()[i];
    const std::size_t n = std::min(points, t.size());
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = n == t.size() ? k : rng.below(t.size());
      const double orig = t[idx];
      t[idx] = orig + step;
      const double lp = eval();
      t[idx] = orig - step;
      const double lm = eval();
      t[idx] = orig;
      GradCheckEntry e{name, idx, grads[i][idx], (lp - lm) / (2 * step), 0};
      e.rel_err = relative_error(e.analytic, e.numeric);
      out.push_back(e);
    }
  }
  return out;
}

Metrics evaluate(const std::vector<Box>& predictions, const std::vector<Box>& gt, const std::vector<std::size_t>& skip) {
  if (predictions.size() != gt.size())
    throw ValidationError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(gt.size()) + " ground-truth frames");
  Metrics m;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (std::find(skip.begin(), skip.end(), t) != skip.end()) continue;
    m.iou.push_back(iou(predictions[t], gt[t]));
    m.center_error.push_back(center_error(predictions[t], gt[t]));
  }
  const double n = static_cast<double>(m.iou.size());
  if (m.iou.empty()) return m;
  std::size_t close = 0;
  for (std::size_t i = 0; i < m.iou.size(); ++i) {
    m.mean_iou += m.iou[i];
    if (m.center_error[i] <= 2.0) ++close;
  }
  m.mean_iou /= n;
  m.success_curve.assign(20, 0.0);
  for (int k = 0; k < 20; ++k) {
    std::size_t hits = 0;
    for (double v : m.iou) hits += v > k / 20.0;
    m.success_curve[k] = static_cast<double>(hits) / n;
    m.success_auc += m.success_curve[k];
  }
  m.success_auc /= 20.0;
  m.precision = static_cast<double>(close) / n;
  return m;
}

Metrics evaluate(const std::vector<io::TrackRecord>& records, const io::SequenceManifest& manifest) {
  if (!manifest.gt_boxes) throw ValidationError("evaluate: manifest has no gt_boxes");
  if (records.size() != manifest.frames.size())
    throw ValidationError("evaluate: " + std::to_string(records.size()) + " records for " +
                          std::to_string(manifest.frames.size()) + " frames");
  std::vector<Box> pred(records.size());
  std::vector<bool> seen(records.size(), false);
  for (const auto& r : records) {
    if (r.frame >= pred.size() || seen[r.frame]) throw ValidationError("evaluate: records do not cover each frame once");
    pred[r.frame] = r.box;
    seen[r.frame] = true;
  }
  return evaluate(pred, *manifest.gt_boxes, {manifest.exemplar_frame_index});
}

template ParamSet<float> init_model_params<float>(const TrackerConfig&);
template ParamSet<double> init_model_params<double>(const TrackerConfig&);
template LossTerms<float> sample_loss<float>(const TrainSample&, const TrackerConfig&, const TrainConfig&,
                                             const BoundParams<float>&);
template LossTerms<double> sample_loss<double>(const TrainSample&, const TrackerConfig&, const TrainConfig&,
                                               const BoundParams<double>&);

}  // namespace saot
