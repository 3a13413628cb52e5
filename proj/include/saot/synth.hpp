#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saot/geometry.hpp"
#include "saot/io.hpp"
#include "saot/tensor.hpp"

namespace saot::synth {

struct Point {
  double x = 0;  // column
  double y = 0;  // row
  bool operator==(const Point&) const = default;
};

struct PartSpec {
  Point offset;                 // relative to the target centre at frame 0
  std::vector<double> feature;  // unit length, nonnegative, sparse support
  bool distinct = true;         // false: cloned into the background
};

struct Motion {
  double dx = 0;
  double dy = 0;
  double rotation = 0;    // radians per frame, about the part centroid
  double jitter_std = 0;  // i.i.d. per part and axis
};

struct Occlusion {
  std::size_t first_frame = 0;
  std::size_t last_frame = 0;  // inclusive
  double fraction = 0;         // share of parts hidden (rounded, at most n_parts - 1)
};

struct WorldConfig {
  std::size_t height = 24;
  std::size_t width = 24;
  std::size_t channels = 16;
  std::size_t frames = 20;
  std::size_t n_parts = 8;
  std::size_t n_duplicated_parts = 2;
  std::size_t clones_per_duplicate = 3;
  std::size_t clone_radius = 1;          // clones are (2r+1)^2 blobs
  std::size_t active_channels = 4;       // support size of part and clutter vectors
  double part_spread = 1.5;              // offsets uniform in [-spread, spread]^2
  double background_noise_std = 0.15;
  double clutter_probability = 0.3;
  double part_noise_std = 0.05;
  std::size_t n_distractors = 2;         // other multi-part objects with their own features
  double distractor_speed = 0.6;
  Motion motion;
  std::vector<Occlusion> occlusions;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FrameSample {
  Tensor<float> features;  // [h, w, c]
  Box gt_box;
  std::vector<Point> gt_part_positions;
  std::vector<std::size_t> occluded_part_ids;
};

struct Sequence {
  io::SequenceManifest manifest;
  std::vector<FrameSample> frames;
  std::vector<PartSpec> parts;
  std::vector<std::vector<GridPos>> clone_cells;  // per duplicated part
  std::vector<std::vector<Point>> distractor_positions;  // per frame, all distractor parts
  std::vector<std::string> warnings;
};

// Affine motion about `center`, then per-part jitter, then clamping into the
// grid. Returns true when any position had to be clamped.
bool deform_step(std::vector<Point>& positions, Point center, const Motion& motion, Rng& rng, std::size_t height,
                 std::size_t width);

// Tight box over the points padded by `pad`, clipped to the grid extent.
Box padded_box(const std::vector<Point>& points, double pad, std::size_t height, std::size_t width);

Sequence gen_sequence(const WorldConfig& cfg);

// Writes frame_NNN.tensor files and manifest.json into dir (created if needed).
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);

enum class Suite { Rigid, Deform };

Suite parse_suite(const std::string& name);
const char* suite_name(Suite s);

// Preset worlds used for training and held-out evaluation.
WorldConfig suite_config(Suite suite, std::uint64_t seed);

}  // namespace saot::synth
