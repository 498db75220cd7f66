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

#ifndef STYLEMOTION_TRAINING_HPP_
#define STYLEMOTION_TRAINING_HPP_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylemotion/data.hpp"
#include "stylemotion/losses.hpp"
#include "stylemotion/model.hpp"

namespace stylemotion {

struct TrainConfig {
  std::string preset = "desk";  // "paper" (full-scale) or "desk"
  int batch = 4;
  double lr = 1e-4;
  int epochs = 12;
  double window_seconds = 6.0;
  uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // epochs between snapshots; 0 = final only
  // Cycle decode is teacher-forced on the first-pass reconstruction when
  // true, on the ground-truth motion when false.
  bool cycle_teacher_forced = true;
  int workers = 1;  // reserved; loading is in-process
  // Negative values inherit the preset; >= 0 overrides (used by ablations).
  double lambda_r = -1, lambda_s = -1, lambda_c = -1, lambda_con = -1;
  double lambda_cycle_s = -1, lambda_cycle_c = -1;
  double grl_lambda = -1;
  double contrastive_mix = -1;

  void validate() const;
  LossWeights<float> weights() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct LossBreakdown {
  double r = 0, s = 0, c = 0, con = 0, cycle_s = 0, cycle_c = 0;
  double total = 0;
  bool cycle_active = false;
};

struct BatchSample {
  Eigen::MatrixXf motion;  // T x 3V displacements
  Eigen::MatrixXf wave;    // N x 1 samples
  int identity = 0;        // dataset identity id
  int class_index = 0;     // position in train_identities()
};

Eigen::MatrixXf wave_to_matrix(const Waveform& w);

// Style-switching permutation for the cycle pass: a uniformly sampled
// permutation with donor identity != own identity for every element.
// Falls back to a rotation; sets cycle_ok=false when no valid assignment
// exists (batch of one, or a single identity in the batch).
std::vector<int> switch_styles(const std::vector<int>& identities, Rng& rng,
                               bool& cycle_ok);

class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ag::ParamStore<float>& params);
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  double learning_rate() const { return lr_; }

  std::map<std::string, std::pair<Eigen::MatrixXf, Eigen::MatrixXf>>& state() {
    return state_;
  }
  const std::map<std::string, std::pair<Eigen::MatrixXf, Eigen::MatrixXf>>&
  state() const {
    return state_;
  }

 private:
  double lr_ = 1e-4, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::map<std::string, std::pair<Eigen::MatrixXf, Eigen::MatrixXf>> state_;
};

// One optimization step over a batch of equal-length windows.
LossBreakdown train_step(Model<float>& model,
                         const std::vector<BatchSample>& batch,
                         const LossWeights<float>& w, Adam& adam, Rng& rng,
                         const TrainConfig& tc);

struct CheckpointMeta {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  int n_style_classes = 0;
  std::vector<int> train_identity_ids;
  int epoch = 0;
  int64_t adam_step = 0;
  std::string rng_state;
};

void save_checkpoint(const std::filesystem::path& path,
                     const Model<float>& model, const Adam& adam,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model<float> model;
  Adam adam;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies audio_enc/frontend/* tensors from a checkpoint-format container
// into the model (weight-ingestion hook for pretrained front ends).
void load_pretrained_frontend(Model<float>& model,
                              const std::filesystem::path& path);

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  LossBreakdown last_epoch;
  int epochs = 0;
};

// Full training loop over the train split. Writes a JSON-lines log (one
// deterministic line per epoch) and checkpoints under out_dir; progress
// chatter goes to console when given.
TrainResult train(const DatasetManifest& data, ModelConfig model_cfg,
                  const TrainConfig& train_cfg,
                  const std::filesystem::path& out_dir,
                  std::ostream* console = nullptr);

}  // namespace stylemotion

#endif  // STYLEMOTION_TRAINING_HPP_
