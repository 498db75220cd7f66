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

#ifndef STYLEMOTION_METRICS_HPP_
#define STYLEMOTION_METRICS_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "stylemotion/data.hpp"
#include "stylemotion/model.hpp"
#include "stylemotion/training.hpp"

namespace stylemotion {

// Lip-vertex columns of a T x 3V frame matrix, T x 3L.
Eigen::MatrixXf select_lip(const Eigen::MatrixXf& frames,
                           const std::vector<int>& lip_mask);

// Mean over frames and vertices of the per-vertex Euclidean error.
double fve(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt);

// Mean over frames of the maximal per-lip-vertex Euclidean error.
double lve(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt,
           const std::vector<int>& lip_mask);

// Dynamic-time-warping distance between two sequences of row vectors with
// per-node cost ||x_i - y_j||. Steps are (1,0), (0,1), (1,1); among
// minimal-cost alignments the one with the fewest nodes is chosen, and the
// cost is normalized by that node count.
double dtw_distance(const Eigen::MatrixXf& x, const Eigen::MatrixXf& y);

// DTW distance on lip-vertex trajectories.
double ldtw(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt,
            const std::vector<int>& lip_mask);

// Lip dynamics deviation: mean over lip vertices of the absolute difference
// between the temporal standard deviations of displacement magnitude.
double ldd(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt,
           const std::vector<int>& lip_mask);

// Mean silhouette coefficient of points grouped by label (Euclidean).
double silhouette(const Eigen::MatrixXf& points,
                  const std::vector<int>& labels);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// Two-component PCA projection of row vectors. Component signs are fixed by
// making the largest-magnitude loading positive.
Eigen::MatrixXf pca2(const Eigen::MatrixXf& rows);

// ------------------------------------------------------------------ probe

struct StyleProbeConfig {
  int tcn_layers = 2;
  int tcn_kernel = 3;
  int channels = 64;
  int heads = 4;
  int ffn = 128;
  int epochs = 12;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 99;
};

// Independent style classifier used for the style consistency score and as
// a check that ground-truth motions carry identity. Trained on the train
// split only.
struct StyleProbe {
  StyleProbeConfig cfg;
  std::vector<int> class_identities;  // class index -> identity id
  ag::ParamStore<float> params;
  nn::TcnStack<float> tcn;
  nn::EncoderLayer<float> layer;
  nn::LayerNorm<float> final_ln;
  nn::Linear<float> head;

  StyleProbe() = default;
  StyleProbe(StyleProbe&&) = default;
  StyleProbe& operator=(StyleProbe&&) = default;
  StyleProbe(const StyleProbe&) = delete;
  StyleProbe& operator=(const StyleProbe&) = delete;

  static StyleProbe train(const DatasetManifest& data,
                          const StyleProbeConfig& cfg,
                          std::ostream* console = nullptr);

  // Pooled embedding (before the classification head).
  Eigen::VectorXf embed(const Eigen::MatrixXf& motion) const;
  int classify(const Eigen::MatrixXf& motion) const;
  // Classification accuracy on ground-truth motions of a split; samples
  // whose identity is not a probe class are an error.
  double accuracy(const DatasetManifest& data, Split split) const;
};

// Style consistency score: cosine similarity of probe embeddings.
double scs(const StyleProbe& probe, const Eigen::MatrixXf& pred,
           const Eigen::MatrixXf& gt);

// ----------------------------------------------------------- linear probes

struct LinearProbeResult {
  double train_acc = 0;
  double eval_acc = 0;
};

LinearProbeResult train_linear_probe(const Eigen::MatrixXf& x_train,
                                     const std::vector<int>& y_train,
                                     const Eigen::MatrixXf& x_eval,
                                     const std::vector<int>& y_eval,
                                     int classes, uint64_t seed,
                                     int iters = 300, double lr = 0.05);

struct ProbeReport {
  double style_identity_acc = 0;    // style code -> identity
  double content_identity_acc = 0;  // averaged content code -> identity
  double content_token_acc = 0;     // frame content code -> token
};

// Linear probes over per-clip latents of every identity in the dataset
// (seen and unseen). Per identity, the test_seen clips are held out for
// evaluation; identities without any hold out their last clips instead.
ProbeReport probe_disentanglement(const Model<float>& model,
                                  const DatasetManifest& data, uint64_t seed,
                                  std::ostream* console = nullptr);

// -------------------------------------------------------------- evaluation

struct PathMetrics {
  double fve = 0, lve = 0, ldtw = 0, ldd = 0, scs = 0;
};

struct ClipReport {
  std::string stem;
  int identity = 0;
  PathMetrics content;  // decode from content codes
  PathMetrics audio;    // decode from audio features
};

struct EvalReport {
  std::string split;
  int clips = 0;
  PathMetrics content_mean;
  PathMetrics audio_mean;
  double style_probe_acc_gt = -1;  // -1 when not computed
  bool has_probes = false;
  ProbeReport probes;
  std::vector<ClipReport> per_clip;

  std::string to_json() const;
};

// Runs both decoding paths over every clip of a split. The style vector for
// each clip comes from another clip of the same identity (next by stem,
// cyclic). A probe enables the SCS columns; with_probes adds the linear
// disentanglement probes (train -> test_seen).
EvalReport evaluate(const Model<float>& model, const DatasetManifest& data,
                    Split split, const StyleProbe* probe, bool with_probes,
                    uint64_t seed, std::ostream* console = nullptr);

void write_clip_csv(const EvalReport& report,
                    const std::filesystem::path& path);

// Style codes for every clip of a split, one row per clip.
Eigen::MatrixXf style_codes(const Model<float>& model,
                            const DatasetManifest& data, Split split,
                            std::vector<int>* identities_out = nullptr);

}  // namespace stylemotion

#endif  // STYLEMOTION_METRICS_HPP_
