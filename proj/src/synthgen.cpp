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

#include "stylemotion/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "stylemotion/error.hpp"
#include "stylemotion/rng.hpp"

namespace stylemotion {

using nlohmann::json;

namespace {

// Sub-seed stream tags.
enum : uint64_t {
  kVisemeStream = 1,
  kScriptStream = 2,
  kSpeakerStream = 3,
  kMotionNoiseStream = 4,
  kWavNoiseStream = 5,
  kToneStream = 6,
};

constexpr float kWaveToneAmp = 0.2f;     // per tone; two tones total 0.4
constexpr float kWaveNoiseStd = 0.01f;
constexpr float kVisemeStd = 1.5f;       // mm, lip displacement scale

}  // namespace

void GenConfig::validate() const {
  if (speakers < 3) throw ConfigError("speakers must be >= 3");
  if (unseen_speakers < 0 || speakers - unseen_speakers < 2)
    throw ConfigError("need at least 2 seen speakers");
  if (tokens < 2) throw ConfigError("tokens must be >= 2");
  if (vertices < 30) throw ConfigError("vertices must be >= 30");
  if (motion_rate <= 0 || audio_rate <= 0)
    throw ConfigError("rates must be positive");
  if (clips_per_speaker < 1) throw ConfigError("clips_per_speaker must be >= 1");
  if (test_seen_clips < 0 || test_seen_clips >= clips_per_speaker)
    throw ConfigError("test_seen_clips must leave train clips");
  if (clip_seconds <= 0.5) throw ConfigError("clip_seconds too short");
  if (noise_std < 0) throw ConfigError("noise_std must be >= 0");
}

std::string GenConfig::to_json() const {
  json j = {{"speakers", speakers},
            {"tokens", tokens},
            {"vertices", vertices},
            {"motion_rate", motion_rate},
            {"audio_rate", audio_rate},
            {"clips_per_speaker", clips_per_speaker},
            {"clip_seconds", clip_seconds},
            {"noise_std", noise_std},
            {"seed", seed},
            {"unseen_speakers", unseen_speakers},
            {"test_seen_clips", test_seen_clips}};
  return j.dump(1);
}

GenConfig GenConfig::from_json(const std::string& text) {
  GenConfig c;
  try {
    const json j = json::parse(text);
    c.speakers = j.value("speakers", c.speakers);
    c.tokens = j.value("tokens", c.tokens);
    c.vertices = j.value("vertices", c.vertices);
    c.motion_rate = j.value("motion_rate", c.motion_rate);
    c.audio_rate = j.value("audio_rate", c.audio_rate);
    c.clips_per_speaker = j.value("clips_per_speaker", c.clips_per_speaker);
    c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.seed = j.value("seed", c.seed);
    c.unseen_speakers = j.value("unseen_speakers", c.unseen_speakers);
    c.test_seen_clips = j.value("test_seen_clips", c.test_seen_clips);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad generator config: ") + e.what());
  }
  c.validate();
  return c;
}

FaceRig make_face_rig(int vertices) {
  if (vertices < 30) throw ConfigError("vertices must be >= 30");
  FaceRig rig;
  rig.mesh.vertices.resize(vertices, 3);

  int n_lip = std::max(8, vertices / 5);
  if (n_lip % 2) ++n_lip;
  const int lip_start = vertices / 3;
  const int half = n_lip / 2;

  // Non-lip vertices on a golden-angle spiral over a head-sized sphere.
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  int placed = 0;
  const int n_shell = vertices - n_lip;
  for (int v = 0; v < vertices; ++v) {
    if (v >= lip_start && v < lip_start + n_lip) continue;
    const double u = n_shell > 1
                         ? 1.0 - 2.0 * placed / static_cast<double>(n_shell - 1)
                         : 0.0;
    const double r = std::sqrt(std::max(0.0, 1.0 - u * u));
    const double th = golden * placed;
    rig.mesh.vertices(v, 0) = static_cast<float>(80.0 * r * std::cos(th));
    rig.mesh.vertices(v, 1) = static_cast<float>(80.0 * u);
    rig.mesh.vertices(v, 2) = static_cast<float>(80.0 * r * std::sin(th));
    ++placed;
  }

  // Lips: two arcs in front of the sphere, upper then lower.
  for (int i = 0; i < n_lip; ++i) {
    const int v = lip_start + i;
    const bool upper = i < half;
    const int k = upper ? i : i - half;
    const double x = -18.0 + 36.0 * k / std::max(1, half - 1);
    rig.mesh.vertices(v, 0) = static_cast<float>(x);
    rig.mesh.vertices(v, 1) = static_cast<float>(upper ? -20.0 : -30.0);
    rig.mesh.vertices(v, 2) =
        static_cast<float>(55.0 - 6.0 * (x / 18.0) * (x / 18.0));
    rig.lip_mask.push_back(v);
  }
  rig.lip_upper = lip_start + half / 2;
  rig.lip_lower = lip_start + half + half / 2;

  const int cols = vertices * 3;
  rig.jaw_field = Eigen::RowVectorXf::Zero(cols);
  rig.pout_field = Eigen::RowVectorXf::Zero(cols);
  for (int i = 0; i < n_lip; ++i) {
    const int v = lip_start + i;
    const double x = rig.mesh.vertices(v, 0) / 18.0;
    const float w = static_cast<float>(1.0 - 0.5 * x * x);
    if (i >= half) {  // lower lip follows the jaw
      rig.jaw_field(3 * v + 1) = -1.0f * w;
      rig.jaw_field(3 * v + 2) = -0.25f * w;
    }
    rig.pout_field(3 * v + 2) = w;
  }
  rig.jaw_field /= rig.jaw_field.norm();
  rig.pout_field /= rig.pout_field.norm();
  return rig;
}

VisemeTable make_viseme_table(uint64_t seed, int tokens, const FaceRig& rig) {
  const int cols = rig.mesh.vertex_count() * 3;
  Rng rng(Rng::derive(seed, {kVisemeStream}));
  VisemeTable t;
  t.patterns = Eigen::MatrixXf::Zero(tokens, cols);
  for (int p = 0; p < tokens; ++p)
    for (int v : rig.lip_mask)
      for (int c = 0; c < 3; ++c)
        t.patterns(p, 3 * v + c) =
            static_cast<float>(kVisemeStd * rng.normal());
  return t;
}

SpeakerStyleParams sample_speaker(uint64_t seed, int speaker) {
  Rng rng(Rng::derive(seed, {kSpeakerStream, static_cast<uint64_t>(speaker)}));
  SpeakerStyleParams s;
  s.amplitude_scale = static_cast<float>(rng.uniform(0.5, 2.0));
  s.pout_coeff = static_cast<float>(rng.uniform(0.0, 1.0));
  s.jaw_open_bias = static_cast<float>(rng.uniform(-1.0, 1.0));
  s.smooth_tau = static_cast<float>(rng.uniform(1.0, 4.0));
  return s;
}

ContentScript make_script(uint64_t seed, int frames, int tokens,
                          float motion_rate) {
  Rng rng(seed);
  ContentScript s;
  int cursor = 0;
  while (cursor < frames) {
    const double len_s = rng.uniform(0.2, 0.6);
    int len = std::max(1, static_cast<int>(std::lround(len_s * motion_rate)));
    len = std::min(len, frames - cursor);
    s.tokens.push_back({rng.uniform_int(tokens), cursor, cursor + len});
    cursor += len;
  }
  return s;
}

std::pair<int, int> token_tones(uint64_t seed, int token, int tokens) {
  Rng rng(Rng::derive(seed, {kToneStream, static_cast<uint64_t>(token)}));
  const double step = 700.0 / tokens;
  const double base = 60.0 + token * step;
  const int f1 = static_cast<int>(std::lround(base + rng.uniform() * 0.15 * step));
  const int f2 = static_cast<int>(
      std::lround(base + 0.45 * step + rng.uniform() * 0.15 * step));
  return {f1, f2};
}

MotionSequence render_motion(const SpeakerStyleParams& style,
                             const ContentScript& script,
                             const VisemeTable& table, const FaceRig& rig,
                             const GenConfig& cfg, uint64_t noise_seed) {
  if (script.tokens.empty()) throw ConfigError("script is empty");
  const int frames = script.tokens.back().end_frame;
  script.validate(frames, cfg.tokens);

  const int cols = rig.mesh.vertex_count() * 3;
  MotionSequence m;
  m.vertex_count = rig.mesh.vertex_count();
  m.frame_rate = cfg.motion_rate;
  m.frames.resize(frames, cols);

  const Eigen::RowVectorXf offset =
      style.pout_coeff * rig.pout_field + style.jaw_open_bias * rig.jaw_field;

  Eigen::RowVectorXf state(cols);
  for (int t = 0; t < frames; ++t) {
    const int tok = script.token_at(t);
    const Eigen::RowVectorXf target =
        style.amplitude_scale * table.patterns.row(tok) + offset;
    if (t == 0)
      state = target;
    else
      state += (target - state) / style.smooth_tau;
    m.frames.row(t) = state;
  }

  if (cfg.noise_std > 0) {
    Rng rng(noise_seed);
    for (int t = 0; t < frames; ++t)
      for (int j = 0; j < cols; ++j)
        m.frames(t, j) += static_cast<float>(cfg.noise_std * rng.normal());
  }
  return m;
}

Waveform render_waveform(const ContentScript& script, const GenConfig& cfg,
                         uint64_t noise_seed) {
  const int frames = script.tokens.empty() ? 0 : script.tokens.back().end_frame;
  const double seconds = frames / static_cast<double>(cfg.motion_rate);
  const int n = static_cast<int>(std::lround(seconds * cfg.audio_rate));

  Waveform w;
  w.sample_rate = cfg.audio_rate;
  w.samples.assign(n, 0.0f);

  const double fw = cfg.audio_rate;
  for (const auto& t : script.tokens) {
    const auto [f1, f2] = token_tones(cfg.seed, t.token_id, cfg.tokens);
    const int a = static_cast<int>(
        std::lround(t.start_frame / static_cast<double>(cfg.motion_rate) * fw));
    const int b = std::min(
        n, static_cast<int>(std::lround(
               t.end_frame / static_cast<double>(cfg.motion_rate) * fw)));
    for (int i = a; i < b; ++i) {
      const double ts = i / fw;
      w.samples[i] = static_cast<float>(
          kWaveToneAmp * std::sin(2.0 * M_PI * f1 * ts) +
          kWaveToneAmp * std::sin(2.0 * M_PI * f2 * ts));
    }
  }

  if (cfg.noise_std > 0) {
    Rng rng(noise_seed);
    for (auto& s : w.samples)
      s += static_cast<float>(kWaveNoiseStd * rng.normal());
  }
  for (auto& s : w.samples) s = std::clamp(s, -1.0f, 1.0f);
  return w;
}

DatasetManifest generate_dataset(const GenConfig& cfg,
                                 const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "clips", ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());

  const FaceRig rig = make_face_rig(cfg.vertices);
  const VisemeTable table = make_viseme_table(cfg.seed, cfg.tokens, rig);

  {
    NdArray tmpl;
    tmpl.shape = {static_cast<uint32_t>(cfg.vertices), 3u};
    tmpl.data.resize(tmpl.size());
    for (int v = 0; v < cfg.vertices; ++v)
      for (int c = 0; c < 3; ++c)
        tmpl.data[3 * v + c] = rig.mesh.vertices(v, c);
    write_tensor(out_dir / "template.mimt", tmpl);

    NdArray mask;
    mask.shape = {static_cast<uint32_t>(rig.lip_mask.size())};
    for (int v : rig.lip_mask) mask.data.push_back(static_cast<float>(v));
    write_tensor(out_dir / "lip_mask.mimt", mask);
  }

  DatasetManifest m;
  m.root = out_dir;
  m.motion_rate = cfg.motion_rate;
  m.audio_rate = cfg.audio_rate;
  m.token_count = cfg.tokens;
  m.face_template = rig.mesh;
  m.lip_mask = rig.lip_mask;
  m.lip_upper = rig.lip_upper;
  m.lip_lower = rig.lip_lower;
  for (int k = 0; k < cfg.speakers; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "spk%02d", k);
    m.identity_names.emplace_back(name);
  }

  const int frames =
      static_cast<int>(std::lround(cfg.clip_seconds * cfg.motion_rate));
  const int first_unseen = cfg.speakers - cfg.unseen_speakers;
  for (int k = 0; k < cfg.speakers; ++k) {
    const SpeakerStyleParams style = sample_speaker(cfg.seed, k);
    for (int i = 0; i < cfg.clips_per_speaker; ++i) {
      const uint64_t uk = static_cast<uint64_t>(k);
      const uint64_t ui = static_cast<uint64_t>(i);
      const ContentScript script =
          make_script(Rng::derive(cfg.seed, {kScriptStream, uk, ui}), frames,
                      cfg.tokens, cfg.motion_rate);
      const MotionSequence motion =
          render_motion(style, script, table, rig, cfg,
                        Rng::derive(cfg.seed, {kMotionNoiseStream, uk, ui}));
      const Waveform wave = render_waveform(
          script, cfg, Rng::derive(cfg.seed, {kWavNoiseStream, uk, ui}));

      char stem[32];
      std::snprintf(stem, sizeof(stem), "spk%02d_clip%03d", k, i);
      SampleEntry e;
      e.stem = stem;
      e.identity_id = k;
      e.duration = frames / static_cast<double>(cfg.motion_rate);
      e.motion_path = std::string("clips/") + stem + "_motion.mimt";
      e.audio_path = std::string("clips/") + stem + ".wav";
      e.script_path = std::string("clips/") + stem + "_script.json";
      if (k >= first_unseen)
        e.split = Split::test_unseen;
      else if (i >= cfg.clips_per_speaker - cfg.test_seen_clips)
        e.split = Split::test_seen;
      else
        e.split = Split::train;

      write_tensor(out_dir / e.motion_path, motion_to_ndarray(motion));
      write_wav(out_dir / e.audio_path, wave);
      {
        std::ofstream os(out_dir / e.script_path);
        if (!os) throw IoError("cannot write script for " + e.stem);
        nlohmann::json js;
        js["tokens"] = nlohmann::json::array();
        for (const auto& t : script.tokens)
          js["tokens"].push_back({{"id", t.token_id},
                                  {"start", t.start_frame},
                                  {"end", t.end_frame}});
        os << js.dump(1) << '\n';
      }
      m.samples.push_back(std::move(e));
    }
  }

  save_manifest(m, out_dir / "manifest.json");
  {
    std::ofstream os(out_dir / "gen_config.json");
    os << cfg.to_json() << '\n';
  }
  // Reload through the validating loader so generated data is known-good.
  return load_manifest(out_dir / "manifest.json");
}

}  // namespace stylemotion
