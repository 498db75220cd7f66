// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "stylemotion/data.hpp"
#include "stylemotion/synthgen.hpp"
#include "test_util.hpp"

using namespace stylemotion;
using stylemotion::testing::TempDir;
using stylemotion::testing::bitwise_equal;
using stylemotion::testing::tiny_gen_config;

namespace {

// Corpus shared by the manifest tests; generated once.
const DatasetManifest& tiny_corpus() {
  static TempDir dir;
  static DatasetManifest m = generate_dataset(tiny_gen_config(), dir.path);
  return m;
}

Sample make_sample(int frames, float fm, float fw, int vertices) {
  Sample s;
  s.stem = "synthetic";
  s.identity_id = 0;
  s.motion.vertex_count = vertices;
  s.motion.frame_rate = fm;
  s.motion.frames.resize(frames, vertices * 3);
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < vertices * 3; ++j)
      s.motion.frames(t, j) = static_cast<float>(t + 0.01 * j);
  s.waveform.sample_rate = fw;
  const int n = static_cast<int>(std::lround(frames / fm * fw));
  s.waveform.samples.resize(n);
  for (int i = 0; i < n; ++i) s.waveform.samples[i] = (i % 100) / 100.0f;
  ContentScript cs;
  cs.tokens = {{0, 0, frames / 2}, {1, frames / 2, frames}};
  s.script = cs;
  return s;
}

nlohmann::json load_manifest_json(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  nlohmann::json j;
  is >> j;
  return j;
}

DatasetManifest load_edited(const DatasetManifest& base,
                            const nlohmann::json& j) {
  const auto path = base.root / "edited_manifest.json";
  std::ofstream os(path);
  os << j.dump(1);
  os.close();
  return load_manifest(path);
}

}  // namespace

TEST_CASE("motion ndarray conversion round-trips") {
  Sample s = make_sample(10, 25.0f, 1600.0f, 4);
  const NdArray a = motion_to_ndarray(s.motion);
  REQUIRE(a.shape == std::vector<uint32_t>({10, 4, 3}));
  const MotionSequence m = ndarray_to_motion(a, 25.0f);
  CHECK(m.vertex_count == 4);
  CHECK(m.frame_rate == 25.0f);
  CHECK(bitwise_equal(m.frames, s.motion.frames));

  NdArray bad = NdArray::zeros({10, 4});
  CHECK_THROWS_AS(ndarray_to_motion(bad, 25.0f), ShapeError);
  NdArray bad3 = NdArray::zeros({10, 4, 2});
  CHECK_THROWS_AS(ndarray_to_motion(bad3, 25.0f), ShapeError);
}

TEST_CASE("content script validation enforces exact coverage") {
  ContentScript ok;
  ok.tokens = {{0, 0, 5}, {2, 5, 9}};
  CHECK_NOTHROW(ok.validate(9, 3));
  CHECK(ok.token_at(0) == 0);
  CHECK(ok.token_at(4) == 0);
  CHECK(ok.token_at(5) == 2);
  CHECK(ok.token_at(8) == 2);
  CHECK(ok.token_at(9) == -1);

  ContentScript gap;
  gap.tokens = {{0, 0, 4}, {1, 5, 9}};
  CHECK_THROWS_AS(gap.validate(9, 3), ConfigError);

  ContentScript overlap;
  overlap.tokens = {{0, 0, 6}, {1, 5, 9}};
  CHECK_THROWS_AS(overlap.validate(9, 3), ConfigError);

  ContentScript short_cover;
  short_cover.tokens = {{0, 0, 5}};
  CHECK_THROWS_AS(short_cover.validate(9, 3), ConfigError);

  ContentScript bad_id;
  bad_id.tokens = {{3, 0, 9}};
  CHECK_THROWS_AS(bad_id.validate(9, 3), ConfigError);

  ContentScript empty_tok;
  empty_tok.tokens = {{0, 0, 0}, {1, 0, 9}};
  CHECK_THROWS_AS(empty_tok.validate(9, 3), ConfigError);
}

TEST_CASE("split names round-trip") {
  for (Split s : {Split::train, Split::test_seen, Split::test_unseen})
    CHECK(split_from_name(split_name(s)) == s);
  CHECK_THROWS_AS(split_from_name("validation"), ConfigError);
}

TEST_CASE("window of 6 s at 25/1600 Hz gives 150 frames, 9600 samples") {
  Sample s = make_sample(200, 25.0f, 1600.0f, 2);  // 8 s clip
  const Sample w = window(s, 1.0, 6.0);
  CHECK(w.motion.frame_count() == 150);
  CHECK(w.waveform.sample_count() == 9600);
  CHECK(w.identity_id == s.identity_id);
  // Crop starts at frame 25 and sample 1600.
  CHECK(bitwise_equal(w.motion.frames, s.motion.frames.middleRows(25, 150)));
  CHECK(w.waveform.samples[0] == s.waveform.samples[1600]);
}

TEST_CASE("full-duration window is the identity") {
  Sample s = make_sample(50, 25.0f, 1600.0f, 2);
  const Sample w = window(s, 0.0, s.motion.duration());
  CHECK(bitwise_equal(w.motion.frames, s.motion.frames));
  CHECK(w.waveform.samples == s.waveform.samples);
  REQUIRE(w.script.has_value());
  CHECK(w.script->tokens.size() == s.script->tokens.size());
  CHECK(w.script->tokens[1].end_frame == 50);
}

TEST_CASE("window rejects out-of-range requests") {
  Sample s = make_sample(50, 25.0f, 1600.0f, 2);  // 2 s clip
  CHECK_THROWS_AS(window(s, 0.0, 2.5), ConfigError);
  CHECK_THROWS_AS(window(s, 1.0, 1.5), ConfigError);
  CHECK_THROWS_AS(window(s, -0.5, 1.0), ConfigError);
  CHECK_THROWS_AS(window(s, 0.0, 0.0), ConfigError);
}

TEST_CASE("window composes and re-bases scripts") {
  Sample s = make_sample(100, 25.0f, 1600.0f, 2);  // tokens at [0,50),[50,100)
  const Sample a = window(s, 1.0, 2.0);            // frames [25, 75)
  REQUIRE(a.script.has_value());
  REQUIRE(a.script->tokens.size() == 2);
  CHECK(a.script->tokens[0].token_id == 0);
  CHECK(a.script->tokens[0].start_frame == 0);
  CHECK(a.script->tokens[0].end_frame == 25);
  CHECK(a.script->tokens[1].token_id == 1);
  CHECK(a.script->tokens[1].start_frame == 25);
  CHECK(a.script->tokens[1].end_frame == 50);
  CHECK_NOTHROW(a.script->validate(a.motion.frame_count(), 2));

  // window(window(x, a, b), 0, b) == window(x, a, b)
  const Sample b = window(a, 0.0, 2.0);
  CHECK(bitwise_equal(b.motion.frames, a.motion.frames));
  CHECK(b.waveform.samples == a.waveform.samples);
}

TEST_CASE("add_template is elementwise and linear") {
  TemplateMesh tpl;
  tpl.vertices.resize(1, 3);
  tpl.vertices << 1.0f, 1.0f, 1.0f;

  MotionSequence m;
  m.vertex_count = 1;
  m.frame_rate = 25.0f;
  m.frames.resize(1, 3);
  m.frames << 0.5f, 0.0f, -1.0f;

  const Eigen::MatrixXf abs = add_template(tpl, m);
  CHECK(abs(0, 0) == 1.5f);
  CHECK(abs(0, 1) == 1.0f);
  CHECK(abs(0, 2) == 0.0f);

  // Zero motion reproduces the template; zero template reproduces motion.
  MotionSequence zero = m;
  zero.frames.setZero();
  CHECK(bitwise_equal(add_template(tpl, zero).row(0), tpl.flat()));
  TemplateMesh zt;
  zt.vertices = Eigen::MatrixXf::Zero(1, 3);
  CHECK(bitwise_equal(add_template(zt, m), m.frames));

  // Linearity: add_template(tpl, m1 + m2) == add_template(tpl, m1) + m2.
  MotionSequence m2 = m;
  m2.frames << 0.25f, -0.5f, 2.0f;
  MotionSequence sum = m;
  sum.frames = m.frames + m2.frames;
  CHECK(bitwise_equal(add_template(tpl, sum),
                      Eigen::MatrixXf(add_template(tpl, m) + m2.frames)));

  MotionSequence wrong = m;
  wrong.vertex_count = 2;
  wrong.frames.resize(1, 6);
  CHECK_THROWS_AS(add_template(tpl, wrong), ShapeError);
}

TEST_CASE("template flattening is row-major per vertex") {
  TemplateMesh tpl;
  tpl.vertices.resize(2, 3);
  tpl.vertices << 1, 2, 3, 4, 5, 6;
  const Eigen::RowVectorXf f = tpl.flat();
  for (int i = 0; i < 6; ++i) CHECK(f(i) == static_cast<float>(i + 1));
}

TEST_CASE("generated manifest loads and is fully indexed") {
  const DatasetManifest& m = tiny_corpus();
  const GenConfig cfg = tiny_gen_config();
  CHECK(m.identity_count() == cfg.speakers);
  CHECK(m.token_count == cfg.tokens);
  CHECK(m.motion_rate == cfg.motion_rate);
  CHECK(m.audio_rate == cfg.audio_rate);
  CHECK(static_cast<int>(m.samples.size()) ==
        cfg.speakers * cfg.clips_per_speaker);
  CHECK(m.face_template.vertex_count() == cfg.vertices);
  CHECK_FALSE(m.lip_mask.empty());
  CHECK(m.lip_upper >= 0);
  CHECK(m.lip_lower >= 0);

  // Train identities exclude unseen speakers and come back ascending.
  const std::vector<int> train_ids = m.train_identities();
  CHECK(train_ids == std::vector<int>({0, 1}));

  // The three splits partition the samples.
  const auto tr = m.sample_indices(Split::train);
  const auto ts = m.sample_indices(Split::test_seen);
  const auto tu = m.sample_indices(Split::test_unseen);
  CHECK(tr.size() + ts.size() + tu.size() == m.samples.size());
  CHECK(static_cast<int>(tu.size()) == cfg.clips_per_speaker);

  // Samples load with consistent shapes and scripts.
  const Sample s = m.load_sample(tr[0]);
  CHECK(s.motion.vertex_count == cfg.vertices);
  CHECK(s.motion.frame_count() ==
        static_cast<int>(std::lround(cfg.clip_seconds * cfg.motion_rate)));
  REQUIRE(s.script.has_value());
  CHECK_NOTHROW(s.script->validate(s.motion.frame_count(), m.token_count));
}

TEST_CASE("manifest rejects out-of-range identity") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["samples"][0]["identity"] = m.identity_count();
  CHECK_THROWS_AS(load_edited(m, j), ConfigError);
}

TEST_CASE("manifest rejects duplicate stems") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["samples"][1]["stem"] = j["samples"][0]["stem"];
  CHECK_THROWS_AS(load_edited(m, j), ConfigError);
}

TEST_CASE("manifest error names a missing motion file") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["samples"][0]["motion"] = "clips/does_not_exist.mimt";
  try {
    load_edited(m, j);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("does_not_exist.mimt") !=
          std::string::npos);
  }
}

TEST_CASE("manifest rejects duration mismatch") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["samples"][0]["duration"] = 99.0;
  CHECK_THROWS_AS(load_edited(m, j), ConfigError);
}

TEST_CASE("manifest rejects bad identity table") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["identities"][1]["id"] = 0;  // duplicate id
  CHECK_THROWS_AS(load_edited(m, j), ConfigError);
}

TEST_CASE("manifest rejects a lip pair outside the lip mask") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["lip_pair"] = {0, 1};  // shell vertices, not lips
  CHECK_THROWS_AS(load_edited(m, j), ConfigError);
}

TEST_CASE("manifest rejects unknown split tags") {
  const DatasetManifest& m = tiny_corpus();
  nlohmann::json j = load_manifest_json(m.root);
  j["samples"][0]["split"] = "dev";
  CHECK_THROWS_AS(load_edited(m, j), ConfigError);
}

TEST_CASE("missing manifest path is a ConfigError") {
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), ConfigError);
}

TEST_CASE("save_manifest round-trips through load_manifest") {
  const DatasetManifest& m = tiny_corpus();
  save_manifest(m, m.root / "resaved_manifest.json");
  const DatasetManifest r = load_manifest(m.root / "resaved_manifest.json");
  CHECK(r.identity_names == m.identity_names);
  CHECK(r.token_count == m.token_count);
  CHECK(r.lip_mask == m.lip_mask);
  CHECK(r.lip_upper == m.lip_upper);
  CHECK(r.lip_lower == m.lip_lower);
  REQUIRE(r.samples.size() == m.samples.size());
  for (size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(r.samples[i].stem == m.samples[i].stem);
    CHECK(r.samples[i].split == m.samples[i].split);
    CHECK(r.samples[i].identity_id == m.samples[i].identity_id);
  }
}
