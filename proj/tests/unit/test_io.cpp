#include <cstring>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "saot/io.hpp"
#include "saot/synth.hpp"
#include "tmpdir.hpp"

using namespace saot;

namespace {

std::string tensor_bytes(const Tensor<float>& t) {
  std::ostringstream os;
  io::write_tensor(os, t);
  return os.str();
}

ParseErrorKind parse_kind(const std::string& bytes) {
  std::istringstream is(bytes);
  try {
    io::read_tensor(is, true);
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("no parse error");
  return ParseErrorKind::MalformedHeader;
}

}  // namespace

TEST_CASE("tensor round trip") {
  const Tensor<float> t({2, 3}, {1.f, -2.5f, 3e-8f, 0.f, -0.f, 1e30f});
  std::istringstream is(tensor_bytes(t));
  const auto back = io::read_tensor(is, true);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), 6 * sizeof(float)) == 0);
}

TEST_CASE("tensor header format") {
  CHECK(io::tensor_header({2, 3}) == R"({"dtype":"f32","shape":[2,3],"layout":"row-major","endian":"little"})");
}

TEST_CASE("tensor parse errors") {
  const std::string hdr = io::tensor_header({2, 2}) + "\n";
  CHECK(parse_kind(hdr + std::string(12, '\0')) == ParseErrorKind::Truncated);
  CHECK(parse_kind(hdr + std::string(20, '\0')) == ParseErrorKind::TrailingData);
  CHECK(parse_kind("not json\n") == ParseErrorKind::MalformedHeader);
  CHECK(parse_kind(R"({"dtype":"f64","shape":[1],"layout":"row-major","endian":"little"})"
                   "\n12345678") == ParseErrorKind::DtypeMismatch);
  CHECK(parse_kind(R"({"dtype":"f32","shape":[0],"layout":"row-major","endian":"little"})"
                   "\n") == ParseErrorKind::MalformedHeader);
  CHECK(parse_kind("") == ParseErrorKind::Truncated);
}

TEST_CASE("1000 random tensors round trip bit-exact") {
  Rng rng(11);
  for (int n = 0; n < 1000; ++n) {
    Shape shape(1 + rng.below(3));
    for (auto& d : shape) d = 1 + rng.below(5);
    Tensor<float> t(shape);
    for (auto& v : t.data()) {
      const auto bits = static_cast<std::uint32_t>(rng.next_u64());
      std::memcpy(&v, &bits, 4);
    }
    const std::string bytes = tensor_bytes(t);
    std::istringstream is(bytes);
    const auto back = io::read_tensor(is, true);
    REQUIRE(back.shape() == t.shape());
    REQUIRE(std::memcmp(back.data().data(), t.data().data(), t.size() * 4) == 0);
    REQUIRE(tensor_bytes(back) == bytes);
  }
}

TEST_CASE("missing tensor file is an IoError") {
  CHECK_THROWS_AS(io::read_tensor(std::filesystem::path("/nonexistent/x.tensor")), IoError);
}

TEST_CASE("manifests") {
  testing::TempDir dir("manifest");
  io::write_tensor(dir / "f0.tensor", Tensor<float>({4, 5, 2}));

  SUBCASE("minimal one-frame manifest parses") {
    std::ofstream(dir / "manifest.json") << R"({"frames":["f0.tensor"],"exemplar_frame_index":0,)"
                                            R"("exemplar_box":[0.5,0.5,2,2]})";
    const auto m = io::read_manifest(dir / "manifest.json");
    CHECK(m.frames.size() == 1);
    CHECK(m.exemplar_box == Box{0.5, 0.5, 2, 2});
    CHECK_FALSE(m.gt_boxes.has_value());
  }
  SUBCASE("exemplar box beyond the frame is rejected") {
    std::ofstream(dir / "manifest.json") << R"({"frames":["f0.tensor"],"exemplar_frame_index":0,)"
                                            R"("exemplar_box":[2,1,4,2]})";
    CHECK_THROWS_AS(io::read_manifest(dir / "manifest.json"), ValidationError);
  }
  SUBCASE("structural errors") {
    CHECK_THROWS_AS(io::manifest_from_json(nlohmann::json::parse(R"({"frames":[]})")), ValidationError);
    CHECK_THROWS_AS(io::manifest_from_json(nlohmann::json::parse(
                        R"({"frames":["a"],"exemplar_frame_index":1,"exemplar_box":[0,0,1,1]})")),
                    ValidationError);
    CHECK_THROWS_AS(io::manifest_from_json(nlohmann::json::parse(
                        R"({"frames":["a"],"exemplar_frame_index":0,"exemplar_box":[0,0,1]})")),
                    ValidationError);
  }
  SUBCASE("missing frame file") {
    std::ofstream(dir / "manifest.json") << R"({"frames":["nope.tensor"],"exemplar_frame_index":0,)"
                                            R"("exemplar_box":[0,0,1,1]})";
    CHECK_THROWS_AS(io::read_manifest(dir / "manifest.json"), IoError);
  }
}

TEST_CASE("generated manifest round trips unchanged") {
  testing::TempDir dir("manifest_rt");
  auto cfg = synth::suite_config(synth::Suite::Deform, 3);
  cfg.frames = 4;
  const auto seq = synth::gen_sequence(cfg);
  synth::write_sequence(dir.path, seq);
  const auto back = io::read_manifest(dir / "manifest.json");
  CHECK(back == seq.manifest);
  io::write_manifest(dir / "copy.json", back);
  CHECK(io::read_manifest(dir / "copy.json") == back);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) CHECK(io::read_tensor(back.frame_path(t)) == seq.frames[t].features);
}

TEST_CASE("parameter bundles") {
  testing::TempDir dir("bundle");
  ParamSet<float> p;
  Rng rng(5);
  p.add("a.k", random_normal<float>({3, 3, 2, 4}, rng));
  p.add("b", random_normal<float>({7}, rng));
  io::write_param_bundle(dir / "p.bin", p, {{"variant", "saot"}});
  nlohmann::json meta;
  CHECK(io::read_param_bundle(dir / "p.bin", &meta) == p);
  CHECK(meta["variant"] == "saot");
  std::ofstream(dir / "junk.bin") << "{\"bundle\":\"other\"}\n";
  CHECK_THROWS_AS(io::read_param_bundle(dir / "junk.bin"), ParseError);
}

TEST_CASE("track CSV round trip") {
  std::vector<io::TrackRecord> recs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    recs[i].frame = i;
    recs[i].box = {1.25 + i, 2.0 / 3.0, 3.5, 4.0};
    recs[i].confidence = 0.1 * static_cast<double>(i);
  }
  recs[1].saliencies = {{1, 2, 0.5}, {3, 4, 0.25}};
  std::stringstream ss;
  io::write_track_csv(ss, recs, 2);
  const std::string text = ss.str();
  CHECK(text.rfind("frame,x,y,w,h,conf,sx_0,sy_0,sval_0,sx_1,sy_1,sval_1\n", 0) == 0);
  CHECK(io::read_track_csv(ss) == recs);
  std::stringstream too_few;
  CHECK_THROWS_AS(io::write_track_csv(too_few, recs, 1), ContractError);
}

TEST_CASE("pgm scaling") {
  CHECK(io::pgm_pixels(Tensor<float>({2, 2}, 0.3f)) == std::vector<std::uint8_t>(4, 128));
  CHECK(io::pgm_pixels(Tensor<float>({1, 2}, {0.f, 1.f})) == std::vector<std::uint8_t>{0, 255});
  Rng rng(8);
  const auto m = random_normal<float>({5, 5}, rng);
  const auto px = io::pgm_pixels(m);
  for (std::size_t i = 0; i < 25; ++i)
    for (std::size_t j = 0; j < 25; ++j)
      if (m[i] < m[j]) CHECK(px[i] <= px[j]);
  testing::TempDir dir("pgm");
  io::dump_pgm(m, dir / "m.pgm");
  std::ifstream is(dir / "m.pgm", std::ios::binary);
  std::string magic;
  is >> magic;
  CHECK(magic == "P5");
}
