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

#include "stylemotion/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "stylemotion/error.hpp"

namespace stylemotion {

using nlohmann::json;

namespace {

json load_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ParseError("bad json in " + path.string() + ": " + e.what());
  }
  return j;
}

ContentScript load_script(const std::filesystem::path& path) {
  const json j = load_json(path);
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw ParseError("script missing tokens array: " + path.string());
  ContentScript s;
  for (const auto& t : j["tokens"]) {
    ScriptToken tok;
    tok.token_id = t.at("id").get<int>();
    tok.start_frame = t.at("start").get<int>();
    tok.end_frame = t.at("end").get<int>();
    s.tokens.push_back(tok);
  }
  return s;
}

void save_script(const ContentScript& s, const std::filesystem::path& path) {
  json j;
  j["tokens"] = json::array();
  for (const auto& t : s.tokens)
    j["tokens"].push_back(
        {{"id", t.token_id}, {"start", t.start_frame}, {"end", t.end_frame}});
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << j.dump(1) << '\n';
  if (!os) throw IoError("script write failed: " + path.string());
}

MotionSequence load_motion(const std::filesystem::path& path,
                           float frame_rate) {
  return ndarray_to_motion(read_tensor(path), frame_rate);
}

}  // namespace

Eigen::RowVectorXf TemplateMesh::flat() const {
  Eigen::RowVectorXf f(vertices.rows() * 3);
  for (int v = 0; v < vertices.rows(); ++v)
    for (int c = 0; c < 3; ++c) f(3 * v + c) = vertices(v, c);
  return f;
}

NdArray motion_to_ndarray(const MotionSequence& m) {
  NdArray a;
  a.shape = {static_cast<uint32_t>(m.frame_count()),
             static_cast<uint32_t>(m.vertex_count), 3u};
  a.data.resize(a.size());
  for (int t = 0; t < m.frame_count(); ++t)
    for (int j = 0; j < m.frames.cols(); ++j)
      a.data[static_cast<size_t>(t) * m.frames.cols() + j] = m.frames(t, j);
  return a;
}

MotionSequence ndarray_to_motion(const NdArray& a, float frame_rate) {
  if (a.rank() != 3 || a.dim(2) != 3)
    throw ShapeError("motion tensor must have shape [T, V, 3]");
  MotionSequence m;
  m.vertex_count = static_cast<int>(a.dim(1));
  m.frame_rate = frame_rate;
  const int cols = m.vertex_count * 3;
  m.frames.resize(a.dim(0), cols);
  for (int t = 0; t < m.frames.rows(); ++t)
    for (int j = 0; j < cols; ++j)
      m.frames(t, j) = a.data[static_cast<size_t>(t) * cols + j];
  return m;
}

void ContentScript::validate(int frame_count, int token_count) const {
  int cursor = 0;
  for (const auto& t : tokens) {
    if (t.token_id < 0 || t.token_id >= token_count)
      throw ConfigError("script token id " + std::to_string(t.token_id) +
                        " out of range");
    if (t.start_frame != cursor)
      throw ConfigError("script has a gap or overlap at frame " +
                        std::to_string(t.start_frame));
    if (t.end_frame <= t.start_frame)
      throw ConfigError("script token has non-positive length");
    cursor = t.end_frame;
  }
  if (cursor != frame_count)
    throw ConfigError("script covers " + std::to_string(cursor) +
                      " frames, motion has " + std::to_string(frame_count));
}

int ContentScript::token_at(int frame) const {
  for (const auto& t : tokens)
    if (frame >= t.start_frame && frame < t.end_frame) return t.token_id;
  return -1;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_seen: return "test_seen";
    case Split::test_unseen: return "test_unseen";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test_seen") return Split::test_seen;
  if (name == "test_unseen") return Split::test_unseen;
  throw ConfigError("unknown split: " + name);
}

std::vector<int> DatasetManifest::sample_indices(Split split) const {
  std::vector<int> out;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> DatasetManifest::train_identities() const {
  std::set<int> ids;
  for (const auto& s : samples)
    if (s.split == Split::train) ids.insert(s.identity_id);
  return {ids.begin(), ids.end()};
}

Sample DatasetManifest::load_sample(int index) const {
  const SampleEntry& e = samples.at(index);
  Sample s;
  s.stem = e.stem;
  s.identity_id = e.identity_id;
  s.split = e.split;
  s.motion = load_motion(root / e.motion_path, motion_rate);
  s.waveform = read_wav(root / e.audio_path);
  if (!e.script_path.empty()) {
    s.script = load_script(root / e.script_path);
    s.script->validate(s.motion.frame_count(), token_count);
  }
  return s;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path))
    throw ConfigError("manifest not found: " + manifest_path.string());
  const json j = load_json(manifest_path);

  DatasetManifest m;
  m.root = manifest_path.parent_path();
  try {
    m.motion_rate = j.at("motion_rate").get<float>();
    m.audio_rate = j.at("audio_rate").get<float>();
    m.token_count = j.value("tokens", 0);

    const auto& ids = j.at("identities");
    m.identity_names.resize(ids.size());
    std::unordered_set<int> seen_ids;
    for (const auto& e : ids) {
      const int id = e.at("id").get<int>();
      if (id < 0 || id >= static_cast<int>(ids.size()) || seen_ids.count(id))
        throw ConfigError("identity ids must be unique in 0..N-1");
      seen_ids.insert(id);
      m.identity_names[id] = e.at("name").get<std::string>();
    }

    m.face_template.vertices = [&] {
      const NdArray a = read_tensor(m.root / j.at("template").get<std::string>());
      if (a.rank() != 2 || a.dim(1) != 3)
        throw ShapeError("template tensor must have shape [V, 3]");
      Eigen::MatrixXf v(a.dim(0), 3);
      for (int r = 0; r < v.rows(); ++r)
        for (int c = 0; c < 3; ++c) v(r, c) = a.data[r * 3 + c];
      return v;
    }();
    const int V = m.face_template.vertex_count();

    {
      const NdArray a = read_tensor(m.root / j.at("lip_mask").get<std::string>());
      if (a.rank() != 1) throw ShapeError("lip mask tensor must be rank 1");
      std::unordered_set<int> seen;
      for (float f : a.data) {
        const int idx = static_cast<int>(std::lround(f));
        if (idx < 0 || idx >= V)
          throw ConfigError("lip mask index out of vertex range");
        if (!seen.insert(idx).second)
          throw ConfigError("lip mask has duplicate indices");
        m.lip_mask.push_back(idx);
      }
      if (m.lip_mask.empty()) throw ConfigError("lip mask is empty");
    }

    if (j.contains("lip_pair")) {
      const auto& p = j["lip_pair"];
      m.lip_upper = p.at(0).get<int>();
      m.lip_lower = p.at(1).get<int>();
      const auto in_mask = [&](int v) {
        return std::find(m.lip_mask.begin(), m.lip_mask.end(), v) !=
               m.lip_mask.end();
      };
      if (m.lip_upper == m.lip_lower || !in_mask(m.lip_upper) ||
          !in_mask(m.lip_lower))
        throw ConfigError("lip pair must be two distinct lip-mask vertices");
    }

    std::unordered_set<std::string> stems;
    for (const auto& e : j.at("samples")) {
      SampleEntry s;
      s.stem = e.at("stem").get<std::string>();
      s.identity_id = e.at("identity").get<int>();
      s.split = split_from_name(e.at("split").get<std::string>());
      s.duration = e.at("duration").get<double>();
      s.motion_path = e.at("motion").get<std::string>();
      s.audio_path = e.at("audio").get<std::string>();
      s.script_path = e.value("script", "");
      if (!stems.insert(s.stem).second)
        throw ConfigError("duplicate sample stem: " + s.stem);
      if (s.identity_id < 0 || s.identity_id >= m.identity_count())
        throw ConfigError("sample " + s.stem + " references unknown identity");
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ParseError("bad manifest " + manifest_path.string() + ": " +
                     e.what());
  }

  // Eager validation of every referenced file.
  const double frame_tol = 1.0 / m.motion_rate;
  for (size_t i = 0; i < m.samples.size(); ++i) {
    const SampleEntry& e = m.samples[i];
    const Sample s = m.load_sample(static_cast<int>(i));
    if (s.motion.vertex_count != m.face_template.vertex_count())
      throw ShapeError("sample " + e.stem +
                       " vertex count differs from template");
    if (std::lround(s.waveform.sample_rate) != std::lround(m.audio_rate))
      throw ConfigError("sample " + e.stem + " has wrong audio rate");
    if (std::abs(s.motion.duration() - e.duration) > frame_tol ||
        std::abs(s.waveform.duration() - e.duration) > frame_tol)
      throw ConfigError("sample " + e.stem +
                        " duration mismatch between manifest, motion, audio");
  }
  return m;
}

void save_manifest(const DatasetManifest& m,
                   const std::filesystem::path& manifest_path) {
  json j;
  j["format_version"] = 1;
  j["motion_rate"] = m.motion_rate;
  j["audio_rate"] = m.audio_rate;
  j["tokens"] = m.token_count;
  j["template"] = "template.mimt";
  j["lip_mask"] = "lip_mask.mimt";
  if (m.lip_upper >= 0) j["lip_pair"] = {m.lip_upper, m.lip_lower};
  j["identities"] = json::array();
  for (size_t i = 0; i < m.identity_names.size(); ++i)
    j["identities"].push_back(
        {{"id", static_cast<int>(i)}, {"name", m.identity_names[i]}});
  j["samples"] = json::array();
  for (const auto& s : m.samples) {
    json e = {{"stem", s.stem},
              {"identity", s.identity_id},
              {"split", split_name(s.split)},
              {"duration", s.duration},
              {"motion", s.motion_path},
              {"audio", s.audio_path}};
    if (!s.script_path.empty()) e["script"] = s.script_path;
    j["samples"].push_back(e);
  }
  std::ofstream os(manifest_path);
  if (!os) throw IoError("cannot open for writing: " + manifest_path.string());
  os << j.dump(1) << '\n';
  if (!os) throw IoError("manifest write failed: " + manifest_path.string());
}

Sample window(const Sample& s, double start_s, double length_s) {
  const double dur = s.motion.duration();
  if (start_s < 0 || length_s <= 0 || start_s + length_s > dur + 1e-9)
    throw ConfigError("window [" + std::to_string(start_s) + ", " +
                      std::to_string(start_s + length_s) +
                      ") outside clip of " + std::to_string(dur) + " s");

  const float fm = s.motion.frame_rate;
  const float fw = s.waveform.sample_rate;
  const int t0 = static_cast<int>(std::lround(start_s * fm));
  const int tn = static_cast<int>(std::lround(length_s * fm));
  const int w0 = static_cast<int>(std::lround(start_s * fw));
  const int wn = static_cast<int>(std::lround(length_s * fw));
  if (tn < 1 || t0 + tn > s.motion.frame_count() ||
      w0 + wn > s.waveform.sample_count())
    throw ConfigError("window rounds outside clip bounds");

  Sample out;
  out.stem = s.stem;
  out.identity_id = s.identity_id;
  out.split = s.split;
  out.motion.vertex_count = s.motion.vertex_count;
  out.motion.frame_rate = fm;
  out.motion.frames = s.motion.frames.middleRows(t0, tn);
  out.waveform.sample_rate = fw;
  out.waveform.samples.assign(s.waveform.samples.begin() + w0,
                              s.waveform.samples.begin() + w0 + wn);
  if (s.script) {
    ContentScript cs;
    for (const auto& t : s.script->tokens) {
      const int a = std::max(t.start_frame, t0);
      const int b = std::min(t.end_frame, t0 + tn);
      if (a < b) cs.tokens.push_back({t.token_id, a - t0, b - t0});
    }
    out.script = std::move(cs);
  }
  return out;
}

Eigen::MatrixXf add_template(const TemplateMesh& t, const MotionSequence& m) {
  if (t.vertex_count() != m.vertex_count)
    throw ShapeError("template and motion vertex counts differ");
  Eigen::MatrixXf abs = m.frames;
  abs.rowwise() += t.flat();
  return abs;
}

}  // namespace stylemotion
