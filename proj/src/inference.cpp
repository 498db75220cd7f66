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

#include "stylemotion/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "stylemotion/error.hpp"
#include "stylemotion/metrics.hpp"

namespace stylemotion {

Eigen::VectorXf extract_style(const Model<float>& model,
                              const MotionSequence& motion) {
  if (std::abs(motion.frame_rate - model.cfg.motion_rate) > 1e-6f)
    throw ConfigError("reference motion frame rate does not match the model");
  if (motion.vertex_count != model.cfg.vertices)
    throw ShapeError("reference motion vertex count does not match the model");
  const int min_frames =
      static_cast<int>(std::lround(model.cfg.motion_rate));
  if (motion.frame_count() < min_frames)
    throw ConfigError("reference motion must be at least 1 s long");
  return model.style_encode(motion.frames).row(0).transpose();
}

Animation animate(const Model<float>& model, const Waveform& wave,
                  const Eigen::VectorXf& style, const TemplateMesh& temp) {
  if (std::lround(static_cast<double>(wave.sample_rate)) !=
      std::lround(static_cast<double>(model.cfg.audio_rate)))
    throw ConfigError("waveform sample rate does not match the model");
  if (wave.duration() < 1.0 - 1e-9)
    throw ConfigError("driving audio must be at least 1 s long");
  if (style.size() != model.cfg.d_style)
    throw ShapeError("style vector width does not match the model");
  if (temp.vertex_count() != model.cfg.vertices)
    throw ShapeError("template vertex count does not match the model");

  const Eigen::MatrixXf features =
      model.audio_encode(wave_to_matrix(wave));
  if (features.rows() < 1)
    throw ConfigError("audio too short for the front end");
  Animation out;
  out.displacement.frames = model.decode_autoregressive(
      style.transpose(), features);
  out.displacement.vertex_count = model.cfg.vertices;
  out.displacement.frame_rate = model.cfg.motion_rate;
  out.absolute = add_template(temp, out.displacement);
  return out;
}

Eigen::VectorXf interpolate_styles(const Eigen::VectorXf& a,
                                   const Eigen::VectorXf& b, double omega) {
  if (a.size() != b.size())
    throw ShapeError("style vectors must have equal width");
  const float w = static_cast<float>(omega);
  return w * a + (1.0f - w) * b;
}

std::vector<double> lip_distance_curve(const Eigen::MatrixXf& absolute,
                                       int lip_upper, int lip_lower) {
  const int V = static_cast<int>(absolute.cols()) / 3;
  if (absolute.cols() % 3 != 0) throw ShapeError("frames must have 3V columns");
  if (lip_upper < 0 || lip_upper >= V || lip_lower < 0 || lip_lower >= V)
    throw ConfigError("lip vertex index out of range");
  if (lip_upper == lip_lower)
    throw ConfigError("upper and lower lip vertices must differ");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(absolute.rows()));
  for (int t = 0; t < static_cast<int>(absolute.rows()); ++t)
    out.push_back((absolute.block<1, 3>(t, 3 * lip_upper) -
                   absolute.block<1, 3>(t, 3 * lip_lower))
                      .norm());
  return out;
}

LatentExport export_latents(const Model<float>& model,
                            const DatasetManifest& data, Split split,
                            const std::filesystem::path& csv_path) {
  const std::vector<int> idx = data.sample_indices(split);
  if (idx.empty()) throw ConfigError("split has no samples");
  LatentExport ex;
  const int n = static_cast<int>(idx.size());
  ex.styles.resize(n, model.cfg.d_style);
  ex.content_means.resize(n, model.cfg.d_content);
  for (int k = 0; k < n; ++k) {
    Sample s = data.load_sample(idx[static_cast<size_t>(k)]);
    ex.stems.push_back(s.stem);
    ex.identities.push_back(s.identity_id);
    ex.styles.row(k) = model.style_encode(s.motion.frames).row(0);
    ex.content_means.row(k) =
        model.content_encode(s.motion.frames).colwise().mean();
  }

  if (!csv_path.empty()) {
    const int width = std::max(model.cfg.d_style, model.cfg.d_content);
    std::ofstream os(csv_path);
    if (!os) throw IoError("cannot write " + csv_path.string());
    os << "stem,identity,kind,dim";
    for (int c = 0; c < width; ++c) os << ",c" << c;
    os << '\n';
    char buf[64];
    auto row = [&](const std::string& stem, int identity, const char* kind,
                   const Eigen::RowVectorXf& v) {
      os << stem << ',' << identity << ',' << kind << ',' << v.size();
      for (int c = 0; c < width; ++c) {
        if (c < v.size()) {
          std::snprintf(buf, sizeof(buf), ",%.9g",
                        static_cast<double>(v(c)));
          os << buf;
        } else {
          os << ',';
        }
      }
      os << '\n';
    };
    for (int k = 0; k < n; ++k) {
      row(ex.stems[static_cast<size_t>(k)],
          ex.identities[static_cast<size_t>(k)], "style", ex.styles.row(k));
      row(ex.stems[static_cast<size_t>(k)],
          ex.identities[static_cast<size_t>(k)], "content_mean",
          ex.content_means.row(k));
    }
    if (!os) throw IoError("write failed for " + csv_path.string());

    const std::filesystem::path pca_path = csv_path.string() + ".pca.csv";
    std::ofstream ps(pca_path);
    if (!ps) throw IoError("cannot write " + pca_path.string());
    ps << "stem,identity,kind,pc1,pc2\n";
    const Eigen::MatrixXf sp = pca2(ex.styles);
    const Eigen::MatrixXf cp = pca2(ex.content_means);
    auto prow = [&](int k, const char* kind, const Eigen::MatrixXf& p) {
      std::snprintf(buf, sizeof(buf), ",%.9g,%.9g",
                    static_cast<double>(p(k, 0)),
                    static_cast<double>(p(k, 1)));
      ps << ex.stems[static_cast<size_t>(k)] << ','
         << ex.identities[static_cast<size_t>(k)] << ',' << kind << buf
         << '\n';
    };
    for (int k = 0; k < n; ++k) prow(k, "style", sp);
    for (int k = 0; k < n; ++k) prow(k, "content_mean", cp);
    if (!ps) throw IoError("write failed for " + pca_path.string());
  }
  return ex;
}

void write_curve_svg(
    const std::filesystem::path& path, const std::string& title,
    const std::vector<std::pair<std::string, std::vector<double>>>& curves,
    double frame_rate) {
  if (curves.empty()) throw ConfigError("nothing to plot");
  size_t frames = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, c] : curves) {
    if (c.empty()) throw ConfigError("empty curve: " + name);
    frames = std::max(frames, c.size());
    for (double v : c) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double W = 900, H = 420, ml = 60, mr = 20, mt = 40, mb = 40;
  const double pw = W - ml - mr, ph = H - mt - mb;
  const double dur = frame_rate > 0 ? static_cast<double>(frames - 1) /
                                          frame_rate
                                    : static_cast<double>(frames - 1);
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#ff7f0e", "#8c564b"};
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
     << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.3g", lo);
  os << "<text x=\"" << ml - 6 << "\" y=\"" << mt + ph
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
     << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g", hi);
  os << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 10
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
     << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g s", dur);
  os << "<text x=\"" << ml + pw << "\" y=\"" << mt + ph + 16
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
     << buf << "</text>\n";
  int ci = 0;
  for (const auto& [name, c] : curves) {
    const char* color = kPalette[ci % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < c.size(); ++i) {
      const double x =
          ml + (c.size() > 1
                    ? pw * static_cast<double>(i) /
                          static_cast<double>(c.size() - 1)
                    : 0.0);
      const double y = mt + ph - ph * (c[i] - lo) / (hi - lo);
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
      os << buf;
    }
    os << "\"/>\n";
    os << "<text x=\"" << ml + 8 << "\" y=\"" << mt + 16 + 16 * ci
       << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color
       << "\">" << name << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace stylemotion
