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

#ifndef STYLEMOTION_INFERENCE_HPP_
#define STYLEMOTION_INFERENCE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "stylemotion/data.hpp"
#include "stylemotion/model.hpp"

namespace stylemotion {

// Style vector from a reference motion clip (>= 1 s).
Eigen::VectorXf extract_style(const Model<float>& model,
                              const MotionSequence& motion);

struct Animation {
  MotionSequence displacement;  // T x 3V displacements
  Eigen::MatrixXf absolute;     // T x 3V vertex positions
};

// Speech-driven animation: audio features -> autoregressive decode in the
// given style, plus the template for absolute positions. Deterministic.
Animation animate(const Model<float>& model, const Waveform& wave,
                  const Eigen::VectorXf& style, const TemplateMesh& temp);

// omega * a + (1 - omega) * b. omega outside [0, 1] extrapolates.
Eigen::VectorXf interpolate_styles(const Eigen::VectorXf& a,
                                   const Eigen::VectorXf& b, double omega);

// Vertical mouth opening: per-frame distance between the upper and lower
// lip vertices of an absolute-position frame matrix.
std::vector<double> lip_distance_curve(const Eigen::MatrixXf& absolute,
                                       int lip_upper, int lip_lower);

struct LatentExport {
  std::vector<std::string> stems;
  std::vector<int> identities;
  Eigen::MatrixXf styles;         // N x d_style
  Eigen::MatrixXf content_means;  // N x d_content
};

// Per-clip style codes and averaged content codes for a split. When
// csv_path is non-empty, writes one row per (clip, kind) plus a separate
// two-component PCA file <csv_path>.pca.csv per kind.
LatentExport export_latents(const Model<float>& model,
                            const DatasetManifest& data, Split split,
                            const std::filesystem::path& csv_path);

// Minimal multi-curve SVG line plot (time on x).
void write_curve_svg(
    const std::filesystem::path& path, const std::string& title,
    const std::vector<std::pair<std::string, std::vector<double>>>& curves,
    double frame_rate);

}  // namespace stylemotion

#endif  // STYLEMOTION_INFERENCE_HPP_
