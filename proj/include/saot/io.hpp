#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "saot/geometry.hpp"
#include "saot/params.hpp"
#include "saot/tensor.hpp"

namespace saot::io {

namespace fs = std::filesystem;

// Tensor file: one line of JSON
//   {"dtype":"f32","shape":[...],"layout":"row-major","endian":"little"}\n
// followed by exactly 4 * product(shape) bytes of little-endian float32.
std::string tensor_header(const Shape& shape);
void write_tensor(std::ostream& os, const Tensor<float>& t);
void write_tensor(const fs::path& path, const Tensor<float>& t);
// Reads one tensor record; `expect_eof` rejects trailing bytes.
Tensor<float> read_tensor(std::istream& is, bool expect_eof);
Tensor<float> read_tensor(const fs::path& path);
// Parses only the header line; used to validate manifests without loading payloads.
Shape read_tensor_shape(const fs::path& path);

// Parameter bundle: a JSON index line {"bundle":"saot-params","count":N,"meta":{...}}
// followed by N records of a name line and a tensor record.
void write_param_bundle(const fs::path& path, const ParamSet<float>& params, const nlohmann::json& meta);
ParamSet<float> read_param_bundle(const fs::path& path, nlohmann::json* meta = nullptr);

struct SequenceManifest {
  std::vector<std::string> frames;  // paths relative to base_dir unless absolute
  std::size_t exemplar_frame_index = 0;
  Box exemplar_box;
  std::optional<std::vector<Box>> gt_boxes;
  nlohmann::json meta = nlohmann::json::object();
  fs::path base_dir;  // directory holding manifest.json; not serialized

  fs::path frame_path(std::size_t i) const;
  bool operator==(const SequenceManifest& other) const {
    return frames == other.frames && exemplar_frame_index == other.exemplar_frame_index &&
           exemplar_box == other.exemplar_box && gt_boxes == other.gt_boxes && meta == other.meta;
  }
};

nlohmann::json manifest_to_json(const SequenceManifest& m);
// Structural validation only (no filesystem access).
SequenceManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const fs::path& path, const SequenceManifest& m);
// Parses, checks every frame file exists, and checks the exemplar box
// against the exemplar frame's extents.
SequenceManifest read_manifest(const fs::path& path);

struct SaliencyPoint {
  double x = 0;  // column, frame coordinates
  double y = 0;  // row, frame coordinates
  double value = 0;
  bool operator==(const SaliencyPoint&) const = default;
};

struct TrackRecord {
  std::size_t frame = 0;
  Box box;
  double confidence = 0;
  std::vector<SaliencyPoint> saliencies;  // empty for variants without mining
  bool operator==(const TrackRecord&) const = default;
};

// CSV columns: frame,x,y,w,h,conf then sx_i,sy_i,sval_i for i in [0, k).
// Records without saliencies leave those cells blank.
void write_track_csv(std::ostream& os, const std::vector<TrackRecord>& records, std::size_t k);
void write_track_csv(const fs::path& path, const std::vector<TrackRecord>& records, std::size_t k);
std::vector<TrackRecord> read_track_csv(std::istream& is);
std::vector<TrackRecord> read_track_csv(const fs::path& path);

// Linear min->0, max->255 scaling; a constant map becomes all 128.
std::vector<std::uint8_t> pgm_pixels(const Tensor<float>& map);
void dump_pgm(const Tensor<float>& map, const fs::path& path);

// Shortest round-trip decimal form.
std::string format_number(double v);

}  // namespace saot::io
