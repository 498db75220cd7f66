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

#ifndef STYLEMOTION_DATA_HPP_
#define STYLEMOTION_DATA_HPP_

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stylemotion/tensor.hpp"
#include "stylemotion/wav.hpp"

namespace stylemotion {

// Neutral-face vertex positions, millimeters.
struct TemplateMesh {
  Eigen::MatrixXf vertices;  // V x 3

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  // Row-major flattening [v0x v0y v0z v1x ...], matching motion frame layout.
  Eigen::RowVectorXf flat() const;
};

// Per-frame vertex displacements from the template, millimeters.
// frames is T x 3V with the same row-major vertex layout as TemplateMesh.
struct MotionSequence {
  Eigen::MatrixXf frames;
  int vertex_count = 0;
  float frame_rate = 0.0f;

  int frame_count() const { return static_cast<int>(frames.rows()); }
  double duration() const {
    return frame_rate > 0 ? frame_count() / static_cast<double>(frame_rate)
                          : 0.0;
  }
};

NdArray motion_to_ndarray(const MotionSequence& m);
MotionSequence ndarray_to_motion(const NdArray& a, float frame_rate);

// Half-open frame range [start, end) labeled with a speech token id.
struct ScriptToken {
  int token_id = 0;
  int start_frame = 0;
  int end_frame = 0;
};

// Frame-aligned token annotation. Tokens are ordered, non-overlapping and,
// when attached to a motion clip, must cover every frame.
struct ContentScript {
  std::vector<ScriptToken> tokens;

  // Checks ordering/bounds; requires exact coverage of [0, frame_count).
  void validate(int frame_count, int token_count) const;
  int token_at(int frame) const;  // -1 when uncovered
};

enum class Split { train, test_seen, test_unseen };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Sample {
  std::string stem;
  int identity_id = 0;
  Split split = Split::train;
  MotionSequence motion;
  Waveform waveform;
  std::optional<ContentScript> script;
};

struct SampleEntry {
  std::string stem;
  int identity_id = 0;
  Split split = Split::train;
  double duration = 0.0;
  std::string motion_path;  // relative to manifest root
  std::string audio_path;
  std::string script_path;  // empty when absent
};

// Dataset index. load_manifest validates everything eagerly: file existence,
// tensor shapes, rate/duration consistency, script coverage, id ranges.
struct DatasetManifest {
  std::filesystem::path root;
  float motion_rate = 0.0f;
  float audio_rate = 0.0f;
  int token_count = 0;
  std::vector<std::string> identity_names;  // index == identity id
  std::vector<SampleEntry> samples;
  TemplateMesh face_template;
  std::vector<int> lip_mask;  // vertex indices
  int lip_upper = -1;         // vertex pair used for mouth-opening curves
  int lip_lower = -1;

  int identity_count() const { return static_cast<int>(identity_names.size()); }
  std::vector<int> sample_indices(Split split) const;
  // Identity ids that occur in the train split, ascending. Classifier and
  // probe class indices are positions in this list.
  std::vector<int> train_identities() const;
  Sample load_sample(int index) const;
};

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const DatasetManifest& m,
                   const std::filesystem::path& manifest_path);

// Crops motion, waveform and script to [start_s, start_s + length_s).
Sample window(const Sample& s, double start_s, double length_s);

// Displacements -> absolute vertex positions, T x 3V.
Eigen::MatrixXf add_template(const TemplateMesh& t, const MotionSequence& m);

}  // namespace stylemotion

#endif  // STYLEMOTION_DATA_HPP_
