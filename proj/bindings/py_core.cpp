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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stylemotion/inference.hpp"
#include "stylemotion/metrics.hpp"
#include "stylemotion/synthgen.hpp"
#include "stylemotion/training.hpp"

namespace py = pybind11;
namespace sm = stylemotion;

namespace {

py::array nd_to_numpy(const sm::NdArray& a) {
  std::vector<py::ssize_t> shape;
  for (uint32_t i = 0; i < a.rank(); ++i)
    shape.push_back(static_cast<py::ssize_t>(a.dim(i)));
  py::array_t<float> out(shape);
  std::copy(a.data.begin(), a.data.end(), out.mutable_data());
  return out;
}

sm::NdArray numpy_to_nd(const py::array& arr) {
  py::array_t<float, py::array::c_style | py::array::forcecast> a(arr);
  sm::NdArray nd;
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    nd.shape.push_back(static_cast<uint32_t>(a.shape(i)));
  nd.data.assign(a.data(), a.data() + a.size());
  return nd;
}

// Checkpointed model with forward-only entry points.
struct PyModel {
  sm::LoadedCheckpoint lc;

  static PyModel load(const std::string& path) { return {sm::load_checkpoint(path)}; }

  Eigen::VectorXf extract_style(const Eigen::MatrixXf& motion) const {
    sm::MotionSequence seq;
    seq.frames = motion;
    seq.vertex_count = static_cast<int>(motion.cols()) / 3;
    seq.frame_rate = lc.model.cfg.motion_rate;
    return sm::extract_style(lc.model, seq);
  }

  Eigen::MatrixXf animate(const std::vector<float>& wave, float sample_rate,
                          const Eigen::VectorXf& style,
                          const Eigen::MatrixXf& template_vertices) const {
    sm::Waveform w;
    w.samples = wave;
    w.sample_rate = sample_rate;
    sm::TemplateMesh t;
    t.vertices = template_vertices;
    return sm::animate(lc.model, w, style, t).absolute;
  }

  Eigen::MatrixXf content_encode(const Eigen::MatrixXf& motion) const {
    return lc.model.content_encode(motion);
  }
  Eigen::MatrixXf audio_encode(const std::vector<float>& wave) const {
    Eigen::MatrixXf m(static_cast<Eigen::Index>(wave.size()), 1);
    for (size_t i = 0; i < wave.size(); ++i)
      m(static_cast<Eigen::Index>(i), 0) = wave[i];
    return lc.model.audio_encode(m);
  }
};

}  // namespace

PYBIND11_MODULE(stylemotion_core, m) {
  m.doc() = "Style/content disentangled speech-driven 3D facial animation";

  py::register_exception<sm::ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<sm::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<sm::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<sm::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<sm::NumericError>(m, "NumericError",
                                           PyExc_ArithmeticError);

  m.def("read_tensor",
        [](const std::string& p) { return nd_to_numpy(sm::read_tensor(p)); },
        py::arg("path"));
  m.def("write_tensor",
        [](const std::string& p, const py::array& a) {
          sm::write_tensor(p, numpy_to_nd(a));
        },
        py::arg("path"), py::arg("array"));
  m.def("read_wav",
        [](const std::string& p) {
          const sm::Waveform w = sm::read_wav(p);
          return py::make_tuple(w.samples, w.sample_rate);
        },
        py::arg("path"));
  m.def("write_wav",
        [](const std::string& p, const std::vector<float>& samples,
           float rate) {
          sm::Waveform w;
          w.samples = samples;
          w.sample_rate = rate;
          sm::write_wav(p, w);
        },
        py::arg("path"), py::arg("samples"), py::arg("sample_rate"));

  m.def("default_gen_config", [] { return sm::GenConfig().to_json(); });
  m.def("generate_dataset",
        [](const std::string& config_json, const std::string& out_dir) {
          const sm::DatasetManifest man = sm::generate_dataset(
              sm::GenConfig::from_json(config_json), out_dir);
          return (man.root / "manifest.json").string();
        },
        py::arg("config_json"), py::arg("out_dir"));

  m.def("default_train_config", [] { return sm::TrainConfig().to_json(); });
  m.def("train",
        [](const std::string& manifest, const std::string& out_dir,
           const std::string& train_config_json,
           const std::string& model_config_json) {
          const sm::DatasetManifest data = sm::load_manifest(manifest);
          sm::TrainConfig tc = train_config_json.empty()
                                   ? sm::TrainConfig()
                                   : sm::TrainConfig::from_json(train_config_json);
          sm::ModelConfig mc = model_config_json.empty()
                                   ? sm::ModelConfig()
                                   : sm::ModelConfig::from_json(model_config_json);
          return sm::train(data, mc, tc, out_dir).checkpoint_path.string();
        },
        py::arg("manifest"), py::arg("out_dir"),
        py::arg("train_config_json") = "", py::arg("model_config_json") = "");

  py::class_<PyModel>(m, "Checkpoint")
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("extract_style", &PyModel::extract_style, py::arg("motion"),
           "Style vector from a (T, 3V) displacement matrix")
      .def("animate", &PyModel::animate, py::arg("wave"),
           py::arg("sample_rate"), py::arg("style"), py::arg("template"),
           "Absolute vertex positions (T, 3V) from audio and a style vector")
      .def("content_encode", &PyModel::content_encode, py::arg("motion"))
      .def("audio_encode", &PyModel::audio_encode, py::arg("wave"))
      .def_property_readonly(
          "vertices", [](const PyModel& p) { return p.lc.model.cfg.vertices; })
      .def_property_readonly(
          "motion_rate",
          [](const PyModel& p) { return p.lc.model.cfg.motion_rate; })
      .def_property_readonly(
          "audio_rate",
          [](const PyModel& p) { return p.lc.model.cfg.audio_rate; })
      .def_property_readonly("d_style", [](const PyModel& p) {
        return p.lc.model.cfg.d_style;
      });

  m.def("interpolate_styles", &sm::interpolate_styles, py::arg("a"),
        py::arg("b"), py::arg("omega"));
  m.def("fve", &sm::fve, py::arg("pred"), py::arg("gt"));
  m.def("lve", &sm::lve, py::arg("pred"), py::arg("gt"), py::arg("lip_mask"));
  m.def("dtw_distance", &sm::dtw_distance, py::arg("x"), py::arg("y"));
  m.def("ldtw", &sm::ldtw, py::arg("pred"), py::arg("gt"),
        py::arg("lip_mask"));
  m.def("ldd", &sm::ldd, py::arg("pred"), py::arg("gt"), py::arg("lip_mask"));
}
