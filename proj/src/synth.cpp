#include "saot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

namespace saot::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Nonnegative vector with `active` random channels drawn as |N(0, scale)|.
std::vector<double> sparse_rectified(std::size_t c, std::size_t active, double scale, Rng& rng) {
  std::vector<std::size_t> idx(c);
  for (std::size_t i = 0; i < c; ++i) idx[i] = i;
  for (std::size_t i = 0; i < active; ++i) std::swap(idx[i], idx[i + rng.below(c - i)]);
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < active; ++i) v[idx[i]] = std::abs(rng.normal()) * scale;
  return v;
}

std::vector<double> unit_feature(std::size_t c, std::size_t active, Rng& rng) {
  for (;;) {
    auto v = sparse_rectified(c, active, 1.0, rng);
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-3) continue;
    for (double& x : v) x /= n;
    return v;
  }
}

long cell_of(double coord, std::size_t extent) {
  return std::clamp<long>(std::lround(coord), 0, static_cast<long>(extent) - 1);
}

Point centroid(const std::vector<Point>& pts) {
  Point c;
  for (const auto& p : pts) {
    c.x += p.x;
    c.y += p.y;
  }
  c.x /= static_cast<double>(pts.size());
  c.y /= static_cast<double>(pts.size());
  return c;
}

json config_json(const WorldConfig& cfg) {
  json occ = json::array();
  for (const auto& o : cfg.occlusions) occ.push_back({o.first_frame, o.last_frame, o.fraction});
  return {{"height", cfg.height},
          {"width", cfg.width},
          {"channels", cfg.channels},
          {"frames", cfg.frames},
          {"n_parts", cfg.n_parts},
          {"n_duplicated_parts", cfg.n_duplicated_parts},
          {"clones_per_duplicate", cfg.clones_per_duplicate},
          {"background_noise_std", cfg.background_noise_std},
          {"clutter_probability", cfg.clutter_probability},
          {"n_distractors", cfg.n_distractors},
          {"motion", {cfg.motion.dx, cfg.motion.dy, cfg.motion.rotation, cfg.motion.jitter_std}},
          {"occlusions", occ},
          {"seed", cfg.seed},
          {"rng", Rng::kAlgorithm}};
}

}  // namespace

void WorldConfig::validate() const {
  if (height < 12 || width < 12) throw ValidationError("world grid must be at least 12x12");
  if (channels < 1) throw ValidationError("world needs at least one channel");
  if (frames < 1) throw ValidationError("world needs at least one frame");
  if (n_parts < 1) throw ValidationError("world needs at least one part");
  if (n_duplicated_parts > n_parts) throw ValidationError("n_duplicated_parts exceeds n_parts");
  if (active_channels < 1 || active_channels > channels) throw ValidationError("active_channels out of range");
  if (part_spread < 0 || background_noise_std < 0 || part_noise_std < 0 || motion.jitter_std < 0)
    throw ValidationError("spreads and noise levels must be nonnegative");
  if (distractor_speed < 0) throw ValidationError("distractor_speed must be nonnegative");
  if (clutter_probability < 0 || clutter_probability > 1) throw ValidationError("clutter_probability not in [0,1]");
  // cells that lround can reach from start +- part_spread, per axis
  auto reach = [&](std::size_t extent) {
    const double s = (static_cast<double>(extent) - 1) / 2;
    return std::ceil(s + part_spread - 0.5) - std::floor(s - part_spread + 0.5) + 1;
  };
  if (reach(width) * reach(height) < static_cast<double>(n_parts))
    throw ValidationError("part_spread too small to give every part its own cell");
  // Distractor centres are drawn at least 8 cells from the start, inside the margin.
  const double m = 2.0 + part_spread;
  if (n_distractors > 0 && std::hypot((width - 1) / 2.0 - m, (height - 1) / 2.0 - m) < 8.0)
    throw ValidationError("grid too small to place distractors away from the target");
  for (const auto& o : occlusions)
    if (o.first_frame > o.last_frame || o.fraction < 0 || o.fraction > 1)
      throw ValidationError("malformed occlusion range");
}

bool deform_step(std::vector<Point>& positions, Point center, const Motion& motion, Rng& rng, std::size_t height,
                 std::size_t width) {
  const double cr = std::cos(motion.rotation), sr = std::sin(motion.rotation);
  bool clamped = false;
  for (auto& p : positions) {
    const double ox = p.x - center.x, oy = p.y - center.y;
    double x = center.x + cr * ox - sr * oy + motion.dx;
    double y = center.y + sr * ox + cr * oy + motion.dy;
    if (motion.jitter_std > 0) {
      x += rng.normal(0.0, motion.jitter_std);
      y += rng.normal(0.0, motion.jitter_std);
    }
    const double cx = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(height - 1));
    clamped = clamped || cx != x || cy != y;
    p = {cx, cy};
  }
  return clamped;
}

Box padded_box(const std::vector<Point>& points, double pad, std::size_t height, std::size_t width) {
  if (points.empty()) throw ContractError("padded_box of no points");
  double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  x0 = std::max(x0 - pad, -0.5);
  y0 = std::max(y0 - pad, -0.5);
  x1 = std::min(x1 + pad, static_cast<double>(width) - 0.5);
  y1 = std::min(y1 + pad, static_cast<double>(height) - 0.5);
  return {x0, y0, x1 - x0, y1 - y0};
}

Sequence gen_sequence(const WorldConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng part_rng = root.split(1);
  Rng clone_rng = root.split(2);
  Rng motion_rng = root.split(3);
  const std::size_t H = cfg.height, W = cfg.width, C = cfg.channels;

  Sequence seq;
  const Point start{(static_cast<double>(W) - 1) / 2, (static_cast<double>(H) - 1) / 2};
  std::set<std::pair<long, long>> used;
  while (seq.parts.size() < cfg.n_parts) {
    PartSpec part;
    part.offset = {part_rng.uniform(-cfg.part_spread, cfg.part_spread),
                   part_rng.uniform(-cfg.part_spread, cfg.part_spread)};
    const auto cell = std::make_pair(cell_of(start.y + part.offset.y, H), cell_of(start.x + part.offset.x, W));
    if (!used.insert(cell).second) continue;
    part.feature = unit_feature(C, cfg.active_channels, part_rng);
    part.distinct = seq.parts.size() >= cfg.n_duplicated_parts;
    seq.parts.push_back(std::move(part));
  }

  // Clones sit outside a band around the starting target position.
  const long r = static_cast<long>(cfg.clone_radius);
  for (std::size_t d = 0; d < cfg.n_duplicated_parts; ++d) {
    std::vector<GridPos> cells;
    while (cells.size() < cfg.clones_per_duplicate) {
      const long row = r + static_cast<long>(clone_rng.below(H - 2 * r));
      const long col = r + static_cast<long>(clone_rng.below(W - 2 * r));
      if (std::abs(row - static_cast<long>(start.y)) <= 4 && std::abs(col - static_cast<long>(start.x)) <= 4) continue;
      cells.push_back({static_cast<std::size_t>(row), static_cast<std::size_t>(col)});
    }
    seq.clone_cells.push_back(std::move(cells));
  }

  std::vector<Point> pos;
  for (const auto& p : seq.parts) pos.push_back({start.x + p.offset.x, start.y + p.offset.y});
  Motion motion = cfg.motion;

  // Distractors: same construction as the target, unrelated features, own drift.
  struct Distractor {
    std::vector<std::vector<double>> features;
    std::vector<Point> pos;
    Motion motion;
  };
  Rng dis_rng = root.split(4);
  std::vector<Distractor> distractors(cfg.n_distractors);
  const double margin = 2.0 + cfg.part_spread;
  for (auto& d : distractors) {
    Point c;
    do {
      c = {dis_rng.uniform(margin, W - 1 - margin), dis_rng.uniform(margin, H - 1 - margin)};
    } while (std::hypot(c.x - start.x, c.y - start.y) < 8.0);
    std::set<std::pair<long, long>> cells;
    while (d.pos.size() < cfg.n_parts) {
      const Point p{c.x + dis_rng.uniform(-cfg.part_spread, cfg.part_spread),
                    c.y + dis_rng.uniform(-cfg.part_spread, cfg.part_spread)};
      if (!cells.insert({cell_of(p.y, H), cell_of(p.x, W)}).second) continue;
      d.pos.push_back(p);
      d.features.push_back(unit_feature(C, cfg.active_channels, dis_rng));
    }
    const double heading = dis_rng.uniform(0.0, 2 * std::numbers::pi);
    d.motion.dx = cfg.distractor_speed * std::cos(heading);
    d.motion.dy = cfg.distractor_speed * std::sin(heading);
  }
  auto bounce = [&](const std::vector<Point>& pts, Motion& m) {
    const Point c = centroid(pts);
    if ((c.x + m.dx < margin && m.dx < 0) || (c.x + m.dx > W - 1 - margin && m.dx > 0)) m.dx = -m.dx;
    if ((c.y + m.dy < margin && m.dy < 0) || (c.y + m.dy > H - 1 - margin && m.dy > 0)) m.dy = -m.dy;
    return c;
  };

  for (std::size_t t = 0; t < cfg.frames; ++t) {
    if (t > 0) {
      // Translations bounce off a margin before reaching the border.
      const Point c = bounce(pos, motion);
      if (deform_step(pos, c, motion, motion_rng, H, W))
        seq.warnings.push_back("motion clamped to grid at frame " + std::to_string(t));
      for (auto& d : distractors) deform_step(d.pos, bounce(d.pos, d.motion), d.motion, dis_rng, H, W);
    }

    Rng frame_rng = root.split(100 + t);
    FrameSample fs;
    fs.features = Tensor<float>({H, W, C});
    auto& F = fs.features;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        if (frame_rng.uniform() >= cfg.clutter_probability) continue;
        const auto v = sparse_rectified(C, cfg.active_channels, cfg.background_noise_std, frame_rng);
        for (std::size_t ch = 0; ch < C; ++ch) F.at(i, j, ch) = static_cast<float>(v[ch]);
      }
    for (std::size_t d = 0; d < seq.clone_cells.size(); ++d)
      for (const auto& cc : seq.clone_cells[d])
        for (long di = -r; di <= r; ++di)
          for (long dj = -r; dj <= r; ++dj)
            for (std::size_t ch = 0; ch < C; ++ch)
              F.at(cc.row + di, cc.col + dj, ch) += static_cast<float>(seq.parts[d].feature[ch]);

    std::vector<Point> dpos;
    for (const auto& d : distractors)
      for (std::size_t k = 0; k < d.pos.size(); ++k) {
        const std::size_t i = static_cast<std::size_t>(cell_of(d.pos[k].y, H));
        const std::size_t j = static_cast<std::size_t>(cell_of(d.pos[k].x, W));
        for (std::size_t ch = 0; ch < C; ++ch) F.at(i, j, ch) += static_cast<float>(d.features[k][ch]);
        dpos.push_back(d.pos[k]);
      }
    seq.distractor_positions.push_back(std::move(dpos));

    std::size_t hidden = 0;
    for (const auto& o : cfg.occlusions)
      if (t >= o.first_frame && t <= o.last_frame)
        hidden = std::max(hidden, static_cast<std::size_t>(std::lround(o.fraction * cfg.n_parts)));
    hidden = std::min(hidden, cfg.n_parts - 1);
    if (hidden > 0) {
      // Hidden parts are a deterministic function of (seed, frame).
      std::vector<std::size_t> ids(cfg.n_parts);
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
      for (std::size_t i = 0; i < hidden; ++i) std::swap(ids[i], ids[i + frame_rng.below(ids.size() - i)]);
      fs.occluded_part_ids.assign(ids.begin(), ids.begin() + static_cast<long>(hidden));
      std::sort(fs.occluded_part_ids.begin(), fs.occluded_part_ids.end());
    }

    std::vector<Point> visible;
    for (std::size_t k = 0; k < seq.parts.size(); ++k) {
      const std::size_t i = static_cast<std::size_t>(cell_of(pos[k].y, H));
      const std::size_t j = static_cast<std::size_t>(cell_of(pos[k].x, W));
      const bool occluded =
          std::binary_search(fs.occluded_part_ids.begin(), fs.occluded_part_ids.end(), k);
      if (occluded) {
        for (std::size_t ch = 0; ch < C; ++ch) F.at(i, j, ch) = 0.0f;
        continue;
      }
      for (std::size_t ch = 0; ch < C; ++ch) {
        double v = seq.parts[k].feature[ch];
        if (v > 0 && cfg.part_noise_std > 0) v = std::max(0.0, v + frame_rng.normal(0.0, cfg.part_noise_std));
        F.at(i, j, ch) += static_cast<float>(v);
      }
      visible.push_back(pos[k]);
    }
    // Occluders are drawn last so a visible part sharing the cell does not leak through.
    for (std::size_t k : fs.occluded_part_ids) {
      const std::size_t i = static_cast<std::size_t>(cell_of(pos[k].y, H));
      const std::size_t j = static_cast<std::size_t>(cell_of(pos[k].x, W));
      for (std::size_t ch = 0; ch < C; ++ch) F.at(i, j, ch) = 0.0f;
    }
    fs.gt_part_positions = pos;
    fs.gt_box = padded_box(visible, 1.0, H, W);
    seq.frames.push_back(std::move(fs));
  }

  auto& m = seq.manifest;
  std::vector<Box> gt;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.tensor", t);
    m.frames.emplace_back(name);
    gt.push_back(seq.frames[t].gt_box);
  }
  m.exemplar_frame_index = 0;
  m.exemplar_box = gt[0];
  m.gt_boxes = gt;
  json parts = json::array();
  for (const auto& p : seq.parts) parts.push_back({{"offset", {p.offset.x, p.offset.y}}, {"distinct", p.distinct}});
  json clones = json::array();
  for (const auto& cells : seq.clone_cells) {
    json c = json::array();
    for (const auto& g : cells) c.push_back({g.row, g.col});
    clones.push_back(c);
  }
  m.meta = {{"generator", "saot-synth"}, {"config", config_json(cfg)}, {"parts", parts},
            {"clone_cells", clones}, {"warnings", seq.warnings}};
  return seq;
}

void write_sequence(const fs::path& dir, const Sequence& seq) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  for (std::size_t t = 0; t < seq.frames.size(); ++t)
    io::write_tensor(dir / seq.manifest.frames[t], seq.frames[t].features);
  io::write_manifest(dir / "manifest.json", seq.manifest);
}

Suite parse_suite(const std::string& name) {
  if (name == "rigid") return Suite::Rigid;
  if (name == "deform") return Suite::Deform;
  throw ValidationError("unknown suite '" + name + "' (expected rigid or deform)");
}

const char* suite_name(Suite s) { return s == Suite::Rigid ? "rigid" : "deform"; }

WorldConfig suite_config(Suite suite, std::uint64_t seed) {
  WorldConfig cfg;
  cfg.seed = seed;
  Rng rng = Rng(seed).split(7);
  const double speed = rng.uniform(0.3, 1.0);
  const double heading = rng.uniform(0.0, 2 * std::numbers::pi);
  cfg.motion.dx = speed * std::cos(heading);
  cfg.motion.dy = speed * std::sin(heading);
  if (suite == Suite::Deform) {
    cfg.motion.rotation = rng.uniform(-0.04, 0.04);
    cfg.motion.jitter_std = 0.15;
    const std::size_t first = 6 + rng.below(8);
    cfg.occlusions.push_back({first, first + 2, 0.25});
  }
  return cfg;
}

}  // namespace saot::synth
