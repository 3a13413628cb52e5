#include "saot/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace saot::io {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxHeaderBytes = 4096;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path() && !fs::exists(path.parent_path()))
    throw IoError("directory does not exist: " + path.parent_path().string());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return is;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

std::string read_header_line(std::istream& is) {
  std::string line;
  char ch;
  while (is.get(ch)) {
    if (ch == '\n') return line;
    line.push_back(ch);
    if (line.size() > kMaxHeaderBytes) throw ParseError(ParseErrorKind::MalformedHeader, "tensor header too long");
  }
  if (line.empty()) throw ParseError(ParseErrorKind::Truncated, "missing tensor header");
  throw ParseError(ParseErrorKind::MalformedHeader, "tensor header not newline-terminated");
}

Shape parse_header(const std::string& line) {
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(ParseErrorKind::MalformedHeader, std::string("tensor header is not JSON: ") + e.what());
  }
  if (!h.is_object() || !h.contains("dtype") || !h.contains("shape"))
    throw ParseError(ParseErrorKind::MalformedHeader, "tensor header lacks dtype/shape");
  if (!h["dtype"].is_string()) throw ParseError(ParseErrorKind::MalformedHeader, "dtype must be a string");
  if (h["dtype"].get<std::string>() != "f32")
    throw ParseError(ParseErrorKind::DtypeMismatch, "unsupported dtype '" + h["dtype"].get<std::string>() + "'");
  if (h.value("layout", std::string()) != "row-major" || h.value("endian", std::string()) != "little")
    throw ParseError(ParseErrorKind::MalformedHeader, "layout must be row-major and endian little");
  const json& js = h["shape"];
  if (!js.is_array() || js.empty()) throw ParseError(ParseErrorKind::MalformedHeader, "shape must be a non-empty array");
  Shape shape;
  for (const auto& e : js) {
    if (!e.is_number_unsigned() || e.get<std::uint64_t>() == 0)
      throw ParseError(ParseErrorKind::MalformedHeader, "shape extents must be positive integers");
    shape.push_back(e.get<std::size_t>());
  }
  return shape;
}

Box box_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 4) throw ValidationError(std::string(what) + " must be [x,y,w,h]");
  for (const auto& e : j)
    if (!e.is_number()) throw ValidationError(std::string(what) + " must contain numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_number(const std::string& s, std::size_t line_no) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("track CSV line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("format_number failed");
  return std::string(buf, ptr);
}

std::string tensor_header(const Shape& shape) {
  std::string s = "{\"dtype\":\"f32\",\"shape\":[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(shape[i]);
  }
  s += "],\"layout\":\"row-major\",\"endian\":\"little\"}";
  return s;
}

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  os << tensor_header(t.shape()) << '\n';
  std::vector<std::uint32_t> raw(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) raw[i] = to_little(std::bit_cast<std::uint32_t>(t[i]));
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!os) throw IoError("tensor write failed");
}

void write_tensor(const fs::path& path, const Tensor<float>& t) {
  auto os = open_out(path);
  write_tensor(os, t);
}

Tensor<float> read_tensor(std::istream& is, bool expect_eof) {
  const Shape shape = parse_header(read_header_line(is));
  const std::size_t n = shape_product(shape);
  std::vector<std::uint32_t> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
  if (static_cast<std::size_t>(is.gcount()) != n * 4)
    throw ParseError(ParseErrorKind::Truncated, "tensor payload truncated: expected " + std::to_string(n * 4) +
                                                    " bytes, got " + std::to_string(is.gcount()));
  if (expect_eof && is.peek() != std::char_traits<char>::eof())
    throw ParseError(ParseErrorKind::TrailingData, "unexpected bytes after tensor payload");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(to_little(raw[i]));
  return Tensor<float>(shape, std::move(data));
}

Tensor<float> read_tensor(const fs::path& path) {
  auto is = open_in(path);
  return read_tensor(is, true);
}

Shape read_tensor_shape(const fs::path& path) {
  auto is = open_in(path);
  return parse_header(read_header_line(is));
}

void write_param_bundle(const fs::path& path, const ParamSet<float>& params, const json& meta) {
  auto os = open_out(path);
  json index = {{"bundle", "saot-params"}, {"count", params.size()}, {"meta", meta}};
  os << index.dump() << '\n';
  for (const auto& [name, t] : params.entries()) {
    os << name << '\n';
    write_tensor(os, t);
  }
}

ParamSet<float> read_param_bundle(const fs::path& path, json* meta) {
  auto is = open_in(path);
  json index;
  try {
    index = json::parse(read_header_line(is));
  } catch (const json::exception&) {
    throw ParseError(ParseErrorKind::MalformedHeader, "parameter bundle index is not JSON");
  }
  if (!index.is_object() || index.value("bundle", std::string()) != "saot-params" || !index.contains("count"))
    throw ParseError(ParseErrorKind::MalformedHeader, "not a parameter bundle: " + path.string());
  if (meta) *meta = index.value("meta", json::object());
  ParamSet<float> params;
  const std::size_t count = index["count"].get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    if (!std::getline(is, name) || name.empty())
      throw ParseError(ParseErrorKind::Truncated, "parameter bundle ended early");
    params.add(name, read_tensor(is, false));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw ParseError(ParseErrorKind::TrailingData, "unexpected bytes after parameter bundle");
  return params;
}

fs::path SequenceManifest::frame_path(std::size_t i) const {
  const fs::path p(frames.at(i));
  return p.is_absolute() ? p : base_dir / p;
}

json manifest_to_json(const SequenceManifest& m) {
  json j;
  j["frames"] = m.frames;
  j["exemplar_frame_index"] = m.exemplar_frame_index;
  j["exemplar_box"] = box_to_json(m.exemplar_box);
  if (m.gt_boxes) {
    json gt = json::array();
    for (const Box& b : *m.gt_boxes) gt.push_back(box_to_json(b));
    j["gt_boxes"] = gt;
  }
  j["meta"] = m.meta;
  return j;
}

SequenceManifest manifest_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("manifest must be a JSON object");
  SequenceManifest m;
  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty())
    throw ValidationError("manifest needs a non-empty 'frames' array");
  for (const auto& f : j["frames"]) {
    if (!f.is_string()) throw ValidationError("manifest frame entries must be strings");
    m.frames.push_back(f.get<std::string>());
  }
  if (!j.contains("exemplar_frame_index") || !j["exemplar_frame_index"].is_number_unsigned())
    throw ValidationError("manifest needs a non-negative integer 'exemplar_frame_index'");
  m.exemplar_frame_index = j["exemplar_frame_index"].get<std::size_t>();
  if (m.exemplar_frame_index >= m.frames.size()) throw ValidationError("exemplar_frame_index out of range");
  if (!j.contains("exemplar_box")) throw ValidationError("manifest needs 'exemplar_box'");
  m.exemplar_box = box_from_json(j["exemplar_box"], "exemplar_box");
  if (j.contains("gt_boxes") && !j["gt_boxes"].is_null()) {
    if (!j["gt_boxes"].is_array()) throw ValidationError("gt_boxes must be an array");
    std::vector<Box> gt;
    for (const auto& b : j["gt_boxes"]) gt.push_back(box_from_json(b, "gt_boxes entry"));
    if (gt.size() != m.frames.size()) throw ValidationError("gt_boxes length must equal frames length");
    m.gt_boxes = std::move(gt);
  }
  m.meta = j.value("meta", json::object());
  return m;
}

void write_manifest(const fs::path& path, const SequenceManifest& m) {
  auto os = open_out(path);
  os << manifest_to_json(m).dump(2) << '\n';
}

SequenceManifest read_manifest(const fs::path& path) {
  auto is = open_in(path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
  }
  SequenceManifest m = manifest_from_json(j);
  m.base_dir = path.parent_path();
  for (std::size_t i = 0; i < m.frames.size(); ++i)
    if (!fs::exists(m.frame_path(i)))
      throw IoError("manifest frame " + std::to_string(i) + " not found: " + m.frame_path(i).string());
  const Shape shape = read_tensor_shape(m.frame_path(m.exemplar_frame_index));
  if (shape.size() != 3) throw ValidationError("frames must be [h,w,c] tensors");
  if (!box_within_grid(m.exemplar_box, shape[0], shape[1]))
    throw ValidationError("exemplar_box lies outside the exemplar frame extent");
  return m;
}

void write_track_csv(std::ostream& os, const std::vector<TrackRecord>& records, std::size_t k) {
  os << "frame,x,y,w,h,conf";
  for (std::size_t i = 0; i < k; ++i) os << ",sx_" << i << ",sy_" << i << ",sval_" << i;
  os << '\n';
  for (const auto& r : records) {
    if (!std::isfinite(r.confidence)) throw ContractError("track record confidence must be finite");
    if (r.saliencies.size() > k) throw ContractError("track record has more saliencies than CSV columns");
    os << r.frame << ',' << format_number(r.box.x) << ',' << format_number(r.box.y) << ','
       << format_number(r.box.w) << ',' << format_number(r.box.h) << ',' << format_number(r.confidence);
    for (std::size_t i = 0; i < k; ++i) {
      if (i < r.saliencies.size()) {
        const auto& s = r.saliencies[i];
        os << ',' << format_number(s.x) << ',' << format_number(s.y) << ',' << format_number(s.value);
      } else {
        os << ",,,";
      }
    }
    os << '\n';
  }
}

void write_track_csv(const fs::path& path, const std::vector<TrackRecord>& records, std::size_t k) {
  auto os = open_out(path);
  write_track_csv(os, records, k);
}

std::vector<TrackRecord> read_track_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("track CSV is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 6 || header[0] != "frame" || (header.size() - 6) % 3 != 0)
    throw ValidationError("track CSV header malformed");
  const std::size_t k = (header.size() - 6) / 3;
  std::vector<TrackRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("track CSV line " + std::to_string(line_no) + " has wrong column count");
    TrackRecord r;
    r.frame = static_cast<std::size_t>(parse_number(cells[0], line_no));
    r.box = {parse_number(cells[1], line_no), parse_number(cells[2], line_no), parse_number(cells[3], line_no),
             parse_number(cells[4], line_no)};
    r.confidence = parse_number(cells[5], line_no);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& sx = cells[6 + 3 * i];
      if (sx.empty()) break;
      r.saliencies.push_back({parse_number(sx, line_no), parse_number(cells[7 + 3 * i], line_no),
                              parse_number(cells[8 + 3 * i], line_no)});
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TrackRecord> read_track_csv(const fs::path& path) {
  auto is = open_in(path);
  return read_track_csv(is);
}

std::vector<std::uint8_t> pgm_pixels(const Tensor<float>& map) {
  if (!map.all_finite()) throw ValidationError("dump_pgm needs finite values");
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double mn = *lo, mx = *hi;
  std::vector<std::uint8_t> px(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mx == mn) {
      px[i] = 128;
    } else {
      const double s = (static_cast<double>(map[i]) - mn) / (mx - mn) * 255.0;
      px[i] = static_cast<std::uint8_t>(std::clamp(std::lround(s), 0L, 255L));
    }
  }
  return px;
}

void dump_pgm(const Tensor<float>& map, const fs::path& path) {
  if (map.rank() != 2) throw DimensionError("dump_pgm expects a [h,w] map");
  const auto px = pgm_pixels(map);
  auto os = open_out(path);
  os << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw IoError("PGM write failed: " + path.string());
}

}  // namespace saot::io
