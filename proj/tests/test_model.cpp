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

#include <vector>

#include <doctest.h>

#include "stylemotion/model.hpp"
#include "test_util.hpp"

using namespace stylemotion;
using namespace stylemotion::testing;
using FMat = ag::Mat<float>;

namespace {

// Tiny model shared across forward-only cases (building is the slow part).
const Model<float>& tiny_model() {
  static Model<float> m =
      Model<float>::build(tiny_model_config(30), /*n_style_classes=*/2, 42);
  return m;
}

}  // namespace

TEST_CASE("model config validation rejects each inconsistency") {
  const ModelConfig base = tiny_model_config(30);
  CHECK_NOTHROW(base.validate());
  auto broken = [&](auto mut) {
    ModelConfig c = base;
    mut(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](ModelConfig& c) { c.vertices = 0; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](ModelConfig& c) { c.d_model = 15; }).validate(),
                  ConfigError);  // not divisible by heads
  CHECK_THROWS_AS(broken([](ModelConfig& c) { c.d_audio = 4; }).validate(),
                  ConfigError);  // decoder memory projection is shared
  CHECK_THROWS_AS(broken([](ModelConfig& c) { c.tcn_kernel = 4; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(
      broken([](ModelConfig& c) { c.frontend_strides = {4, 2, 2, 4}; })
          .validate(),
      ConfigError);  // stride product != audio/token rate
  CHECK_THROWS_AS(
      broken([](ModelConfig& c) { c.frontend_kernels = {8, 4, 4}; })
          .validate(),
      ConfigError);
  CHECK_THROWS_AS(broken([](ModelConfig& c) { c.align_kernel = 3; }).validate(),
                  ConfigError);  // violates the length law
  CHECK_THROWS_AS(broken([](ModelConfig& c) { c.token_rate = 40; }).validate(),
                  ConfigError);

  // The default desk configuration is itself valid once vertices are set.
  ModelConfig desk;
  desk.vertices = 120;
  CHECK_NOTHROW(desk.validate());
}

TEST_CASE("length laws: 6 s of audio becomes exactly 150 motion frames") {
  ModelConfig c;
  c.vertices = 120;
  CHECK(c.token_frames(9600) == 300);
  CHECK(c.aligned_frames(300) == 150);
  CHECK(c.token_frames(19200) == 600);
  CHECK(c.aligned_frames(600) == 300);
  CHECK(c.frontend_receptive_field() == 124);

  // motion frames = token frames * motion_rate / token_rate wherever the
  // product is integral.
  for (int L = 2; L <= 512; L += 2) CHECK(c.aligned_frames(L) == L / 2);

  // The tiny test geometry obeys the same laws.
  const ModelConfig tiny = tiny_model_config(30);
  CHECK(tiny.token_frames(9600) == 300);
  CHECK(tiny.token_frames(3200) == 100);
  CHECK(tiny.aligned_frames(100) == 50);
}

TEST_CASE("model config json round-trips") {
  ModelConfig c = tiny_model_config(30);
  c.pretrained_frontend = "warm.mckp";
  const ModelConfig r = ModelConfig::from_json(c.to_json());
  CHECK(r.d_style == c.d_style);
  CHECK(r.d_model == c.d_model);
  CHECK(r.layers == c.layers);
  CHECK(r.heads == c.heads);
  CHECK(r.tcn_channels == c.tcn_channels);
  CHECK(r.proj_dim == c.proj_dim);
  CHECK(r.vertices == c.vertices);
  CHECK(r.frontend_channels == c.frontend_channels);
  CHECK(r.frontend_kernels == c.frontend_kernels);
  CHECK(r.frontend_strides == c.frontend_strides);
  CHECK(r.frontend_pads == c.frontend_pads);
  CHECK(r.pretrained_frontend == c.pretrained_frontend);
  CHECK_THROWS_AS(ModelConfig::from_json("{oops"), ParseError);
}

TEST_CASE("model building is deterministic in the seed") {
  const ModelConfig cfg = tiny_model_config(30);
  const Model<float> a = Model<float>::build(cfg, 2, 7);
  const Model<float> b = Model<float>::build(cfg, 2, 7);
  const Model<float> c = Model<float>::build(cfg, 2, 8);

  REQUIRE(a.params.count() == b.params.count());
  REQUIRE(a.params.count() == c.params.count());
  auto ia = a.params.all().begin();
  auto ib = b.params.all().begin();
  auto ic = c.params.all().begin();
  bool any_diff_seed = false;
  for (; ia != a.params.all().end(); ++ia, ++ib, ++ic) {
    CHECK(ia->name == ib->name);
    CHECK(bitwise_equal(ia->value, ib->value));
    if (!bitwise_equal(ia->value, ic->value)) any_diff_seed = true;
  }
  CHECK(any_diff_seed);

  CHECK_THROWS_AS(Model<float>::build(cfg, 0, 7), ConfigError);
  ModelConfig bad = cfg;
  bad.vertices = 0;
  CHECK_THROWS_AS(Model<float>::build(bad, 2, 7), ConfigError);
}

TEST_CASE("encoders produce the contracted shapes") {
  const Model<float>& m = tiny_model();
  Rng rng(21);
  const FMat motion = randm<float>(50, 90, rng);  // 2 s at 25 Hz, 30 vertices

  const FMat s = m.style_encode(motion);
  CHECK(s.rows() == 1);
  CHECK(s.cols() == 8);

  const FMat c = m.content_encode(motion);
  CHECK(c.rows() == 50);
  CHECK(c.cols() == 8);

  const FMat wave = randm<float>(3200, 1, rng, 0.1);  // 2 s at 1600 Hz
  const FMat a = m.audio_encode(wave);
  CHECK(a.rows() == 50);
  CHECK(a.cols() == 8);

  // 6 s of audio comes out as exactly 150 aligned frames.
  const FMat wave6 = randm<float>(9600, 1, rng, 0.1);
  CHECK(m.audio_encode(wave6).rows() == 150);

  // Clips shorter than the temporal receptive field are rejected.
  const FMat tiny_motion = randm<float>(4, 90, rng);
  ag::Tape<float> t(false);
  CHECK_THROWS_AS(m.style_encode(t, t.constant(tiny_motion)), ShapeError);
  CHECK_THROWS_AS(m.content_encode(t, t.constant(tiny_motion)), ShapeError);
}

TEST_CASE("decoder never looks at future motion or future memory") {
  const Model<float>& m = tiny_model();
  Rng rng(22);
  const int T = 8;
  const FMat style = randm<float>(1, 8, rng);
  const FMat kv = randm<float>(T, 8, rng);
  const FMat gt = randm<float>(T, 90, rng);

  const FMat base = m.decode_teacher_forced_fwd(style, kv, gt);
  REQUIRE(base.rows() == T);
  REQUIRE(base.cols() == 90);

  for (int p = 0; p < T; ++p) {
    // Memory position p influences outputs at t >= p only.
    FMat kvp = kv;
    kvp.row(p).array() += 2.0f;
    const FMat ym = m.decode_teacher_forced_fwd(style, kvp, gt);
    for (int r = 0; r < p; ++r)
      CHECK(bitwise_equal(Eigen::MatrixXf(ym.row(r)),
                          Eigen::MatrixXf(base.row(r))));
    CHECK_FALSE(bitwise_equal(Eigen::MatrixXf(ym.row(p)),
                              Eigen::MatrixXf(base.row(p))));

    // Ground-truth frame p feeds the decoder input at position p+1, so
    // outputs up to and including p are untouched.
    FMat gtp = gt;
    gtp.row(p).array() -= 3.0f;
    const FMat yg = m.decode_teacher_forced_fwd(style, kv, gtp);
    for (int r = 0; r <= p; ++r)
      CHECK(bitwise_equal(Eigen::MatrixXf(yg.row(r)),
                          Eigen::MatrixXf(base.row(r))));
    if (p + 1 < T)
      CHECK_FALSE(bitwise_equal(Eigen::MatrixXf(yg.row(p + 1)),
                                Eigen::MatrixXf(base.row(p + 1))));
  }
}

TEST_CASE("autoregressive decoding is a bitwise fixed point") {
  const Model<float>& m = tiny_model();
  Rng rng(23);
  const FMat style = randm<float>(1, 8, rng);
  const FMat kv = randm<float>(6, 8, rng);

  const FMat out = m.decode_autoregressive(style, kv);
  REQUIRE(out.rows() == 6);
  REQUIRE(out.cols() == 90);

  // Feeding the result back through teacher forcing reproduces it exactly.
  const FMat again = m.decode_teacher_forced_fwd(style, kv, out);
  CHECK(bitwise_equal(again, out));

  // Deterministic.
  CHECK(bitwise_equal(m.decode_autoregressive(style, kv), out));

  // A different style changes the trajectory.
  FMat style2 = style;
  style2.array() += 1.0f;
  CHECK_FALSE(bitwise_equal(m.decode_autoregressive(style2, kv), out));
}

TEST_CASE("decoder rejects mismatched memory and motion lengths") {
  const Model<float>& m = tiny_model();
  Rng rng(24);
  const FMat style = randm<float>(1, 8, rng);
  const FMat kv = randm<float>(6, 8, rng);
  const FMat gt = randm<float>(5, 90, rng);
  ag::Tape<float> t(false);
  CHECK_THROWS_AS(m.decode_teacher_forced(t, t.constant(style),
                                          t.constant(kv), t.constant(gt)),
                  ShapeError);
}

TEST_CASE("temperature is exp(log_tau) clamped to [0.01, 1]") {
  ModelConfig cfg = tiny_model_config(30);
  Model<float> m = Model<float>::build(cfg, 2, 5);
  ag::Tape<float> t(false);
  // Default is log(0.07).
  CHECK(t.val(m.temperature(t))(0, 0) == doctest::Approx(0.07).epsilon(1e-5));

  m.log_tau->value(0, 0) = 10.0f;  // exp >> 1
  CHECK(t.val(m.temperature(t))(0, 0) == 1.0f);
  m.log_tau->value(0, 0) = -20.0f;  // exp << 0.01
  CHECK(t.val(m.temperature(t))(0, 0) == 0.01f);
}
