#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "saot/association.hpp"
#include "saot/heads.hpp"
#include "saot/io.hpp"
#include "saot/synth.hpp"

namespace saot {

struct TrackerConfig {
  CorrelationConfig corr;
  FilterConfig filter;
  double beta = 0.8;
  std::size_t head_width = 32;
  std::size_t channels = 16;
  double search_scale = 5.0;  // crop side = scale * sqrt(box area)
  std::size_t min_search = 12;
  std::size_t max_search = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Model {
  TrackerConfig cfg;
  ParamSet<float> params;
};

template <typename T>
ParamSet<T> init_model_params(const TrackerConfig& cfg);

nlohmann::json model_meta(const TrackerConfig& cfg);
// Applies architecture fields stored in a bundle (variant, widths, channels).
void apply_model_meta(TrackerConfig& cfg, const nlohmann::json& meta);
void save_model(const std::filesystem::path& path, const Model& m);
Model load_model(const std::filesystem::path& path);

struct SearchCrop {
  Tensor<float> features;  // [L, L, c], zero outside the frame
  long origin_row = 0;
  long origin_col = 0;
};

std::size_t search_side(const Box& prev, const TrackerConfig& cfg);
SearchCrop crop_search(const Tensor<float>& frame, double cx, double cy, std::size_t side);

struct TrackResult {
  std::vector<io::TrackRecord> records;  // one per frame, in frame order
  std::vector<std::string> warnings;
};

TrackResult track_frames(const std::vector<Tensor<float>>& frames, std::size_t exemplar_index, const Box& exemplar_box,
                         const Model& model);
TrackResult track_sequence(const io::SequenceManifest& manifest, const Model& model);

struct TrainConfig {
  std::size_t steps = 600;
  std::size_t batch = 4;
  double lr = 1e-3;
  double lr_final = 8e-6;
  double weight_decay = 1e-4;
  double cls_weight = 1.0;
  double reg_weight = 1.0;
  double pos_weight = 8.0;
  double shift = 2.0;  // max search-centre perturbation, grid units
  std::size_t pool_worlds = 48;
  std::uint64_t world_seed_base = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0, cls = 0, reg = 0, lr = 0;
};

// One training sample: exemplar frame + box, search crop and its targets.
struct TrainSample {
  Tensor<float> exemplar;  // pooled [hx, wx, c]
  Tensor<float> search;    // crop [L, L, c]
  Box gt;                  // in crop coordinates
};

class SamplePool {
 public:
  SamplePool(const TrainConfig& tc, const TrackerConfig& cfg);
  TrainSample draw(Rng& rng) const;
  std::size_t size() const { return worlds_.size(); }

 private:
  TrackerConfig cfg_;
  double shift_;
  std::vector<synth::Sequence> worlds_;
};

template <typename T>
struct LossTerms {
  Var<T> total, cls, reg;
};

template <typename T>
LossTerms<T> sample_loss(const TrainSample& s, const TrackerConfig& cfg, const TrainConfig& tc,
                         const BoundParams<T>& p);

// Adam on the synthetic pool. `on_step` (optional) sees every loss record.
Model train_toy(const TrainConfig& tc, const TrackerConfig& cfg,
                const std::function<void(const LossRecord&)>& on_step = {});

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_err = 0;
};

// Full training loss in 64-bit on a 12x12 world: compares backprop with
// central differences at `points` random entries per parameter tensor.
std::vector<GradCheckEntry> grad_check_full(Variant variant, std::uint64_t seed, std::size_t points = 10,
                                            double step = 1e-5);
double relative_error(double analytic, double numeric);

struct Metrics {
  std::vector<double> iou;
  std::vector<double> center_error;
  std::vector<double> success_curve;  // success rate at thresholds k/20, k = 0..19
  double mean_iou = 0;
  double success_auc = 0;
  double precision = 0;
};

// Thresholds 0, 0.05, ..., 0.95; success counts IoU > threshold; precision
// counts centre error <= 2. Frames listed in `skip` are left out.
Metrics evaluate(const std::vector<Box>& predictions, const std::vector<Box>& gt,
                 const std::vector<std::size_t>& skip = {});
Metrics evaluate(const std::vector<io::TrackRecord>& records, const io::SequenceManifest& manifest);

int cli_main(int argc, char** argv);

}  // namespace saot
