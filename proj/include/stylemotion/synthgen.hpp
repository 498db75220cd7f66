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

#ifndef STYLEMOTION_SYNTHGEN_HPP_
#define STYLEMOTION_SYNTHGEN_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "stylemotion/data.hpp"

namespace stylemotion {

// Synthetic stylized corpus generator. Speaking content is a sequence of
// viseme tokens; speaking style is a per-speaker transform of how those
// visemes are realized (gain, static offsets, temporal smoothing).
struct GenConfig {
  int speakers = 8;
  int tokens = 12;
  int vertices = 120;
  float motion_rate = 25.0f;   // Hz
  float audio_rate = 1600.0f;  // Hz
  int clips_per_speaker = 40;
  double clip_seconds = 6.0;
  float noise_std = 0.05f;  // motion noise, millimeters; 0 disables all noise
  uint64_t seed = 1234;
  int unseen_speakers = 2;   // highest ids, held out entirely
  int test_seen_clips = 4;   // per seen speaker, last clips

  void validate() const;
  std::string to_json() const;
  static GenConfig from_json(const std::string& text);
};

// Per-speaker style parameters.
struct SpeakerStyleParams {
  float amplitude_scale = 1.0f;  // [0.5, 2]
  float pout_coeff = 0.0f;       // [0, 1], scales the unit pout field
  float jaw_open_bias = 0.0f;    // [-1, 1] mm, scales the unit jaw field
  float smooth_tau = 1.0f;       // [1, 4] frames
};

// Deterministic face geometry plus the two unit-norm style offset fields.
struct FaceRig {
  TemplateMesh mesh;
  std::vector<int> lip_mask;
  int lip_upper = -1;
  int lip_lower = -1;
  Eigen::RowVectorXf jaw_field;   // 3V, unit L2 norm, lower lip only
  Eigen::RowVectorXf pout_field;  // 3V, unit L2 norm, lips only
};

// Per-token lip displacement patterns, P x 3V, zero outside the lip mask.
struct VisemeTable {
  Eigen::MatrixXf patterns;
};

FaceRig make_face_rig(int vertices);
VisemeTable make_viseme_table(uint64_t seed, int tokens, const FaceRig& rig);
SpeakerStyleParams sample_speaker(uint64_t seed, int speaker);
ContentScript make_script(uint64_t seed, int frames, int tokens,
                          float motion_rate);
// The two pure tone frequencies (integer Hz, distinct, within [60, 760])
// that voice a token.
std::pair<int, int> token_tones(uint64_t seed, int token, int tokens);

MotionSequence render_motion(const SpeakerStyleParams& style,
                             const ContentScript& script,
                             const VisemeTable& table, const FaceRig& rig,
                             const GenConfig& cfg, uint64_t noise_seed);
Waveform render_waveform(const ContentScript& script, const GenConfig& cfg,
                         uint64_t noise_seed);

// Writes the full corpus (tensors, wavs, scripts, manifest.json) under
// out_dir and returns the validated manifest.
DatasetManifest generate_dataset(const GenConfig& cfg,
                                 const std::filesystem::path& out_dir);

}  // namespace stylemotion

#endif  // STYLEMOTION_SYNTHGEN_HPP_
