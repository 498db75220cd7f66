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

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "stylemotion/inference.hpp"
#include "stylemotion/metrics.hpp"
#include "stylemotion/synthgen.hpp"
#include "stylemotion/training.hpp"

namespace sm = stylemotion;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw sm::IoError("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

sm::MotionSequence load_motion(const std::filesystem::path& path,
                               float frame_rate) {
  return sm::ndarray_to_motion(sm::read_tensor(path), frame_rate);
}

void write_motion(const std::filesystem::path& path,
                  const Eigen::MatrixXf& frames) {
  sm::NdArray a;
  a.shape = {static_cast<uint32_t>(frames.rows()),
             static_cast<uint32_t>(frames.cols()) / 3, 3};
  a.data.resize(static_cast<size_t>(frames.size()));
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>;
  Eigen::Map<RowMajor>(a.data.data(), frames.rows(), frames.cols()) = frames;
  sm::write_tensor(path, a);
}

sm::TemplateMesh load_template(const std::filesystem::path& path) {
  const sm::NdArray a = sm::read_tensor(path);
  if (a.rank() != 2 || a.dim(1) != 3)
    throw sm::ShapeError("template tensor must be V x 3");
  sm::TemplateMesh t;
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>;
  t.vertices = Eigen::Map<const RowMajor>(a.data.data(), a.dim(0), 3);
  return t;
}

// ----------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config;
  std::string out;
  int64_t seed = -1;
};

int cmd_gen_data(const GenDataArgs& a) {
  sm::GenConfig cfg;
  if (!a.config.empty()) cfg = sm::GenConfig::from_json(read_text(a.config));
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  const sm::DatasetManifest m = sm::generate_dataset(cfg, a.out);
  std::cout << (m.root / "manifest.json").string() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string model_config;
  std::string data;
  std::string out;
  std::string preset;
  int64_t seed = -1;
  int epochs = 0;
};

int cmd_train(const TrainArgs& a) {
  sm::TrainConfig tc;
  if (!a.config.empty()) tc = sm::TrainConfig::from_json(read_text(a.config));
  if (!a.preset.empty()) tc.preset = a.preset;
  if (a.seed >= 0) tc.seed = static_cast<uint64_t>(a.seed);
  if (a.epochs > 0) tc.epochs = a.epochs;
  sm::ModelConfig mc;
  if (!a.model_config.empty())
    mc = sm::ModelConfig::from_json(read_text(a.model_config));
  const sm::DatasetManifest data = sm::load_manifest(a.data);
  const sm::TrainResult r = sm::train(data, mc, tc, a.out, &std::cout);
  std::cout << r.checkpoint_path.string() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------------- infer

struct InferArgs {
  std::string ckpt;
  std::string audio;
  std::string style_ref;
  std::string temp;
  std::string out;
};

int cmd_infer(const InferArgs& a) {
  const sm::LoadedCheckpoint lc = sm::load_checkpoint(a.ckpt);
  const sm::Waveform wave = sm::read_wav(a.audio);
  const sm::MotionSequence ref =
      load_motion(a.style_ref, lc.model.cfg.motion_rate);
  const sm::TemplateMesh temp = load_template(a.temp);
  const Eigen::VectorXf style = sm::extract_style(lc.model, ref);
  const sm::Animation anim = sm::animate(lc.model, wave, style, temp);
  write_motion(a.out, anim.absolute);

  nlohmann::ordered_json meta;
  meta["frames"] = anim.displacement.frame_count();
  meta["vertices"] = anim.displacement.vertex_count;
  meta["frame_rate"] = anim.displacement.frame_rate;
  meta["values"] = "absolute_mm";
  meta["checkpoint"] = a.ckpt;
  meta["audio"] = a.audio;
  meta["style_ref"] = a.style_ref;
  std::ofstream js(a.out + ".json");
  if (!js) throw sm::IoError("cannot write " + a.out + ".json");
  js << meta.dump(1) << '\n';
  std::cout << a.out << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- interpolate

struct InterpArgs {
  std::string ckpt;
  std::string ref_a;
  std::string ref_b;
  std::string audio;
  std::string temp;
  std::string out;
  std::vector<double> omegas;
  int lip_upper = -1;
  int lip_lower = -1;
};

int cmd_interpolate(const InterpArgs& a) {
  if (a.omegas.empty()) throw sm::ConfigError("need at least one --omega");
  const sm::LoadedCheckpoint lc = sm::load_checkpoint(a.ckpt);
  const sm::Waveform wave = sm::read_wav(a.audio);
  const sm::TemplateMesh temp = load_template(a.temp);
  const Eigen::VectorXf sa =
      sm::extract_style(lc.model, load_motion(a.ref_a, lc.model.cfg.motion_rate));
  const Eigen::VectorXf sb =
      sm::extract_style(lc.model, load_motion(a.ref_b, lc.model.cfg.motion_rate));
  std::filesystem::create_directories(a.out);

  const bool lips = a.lip_upper >= 0 && a.lip_lower >= 0;
  std::ofstream csv;
  if (lips) {
    csv.open(std::filesystem::path(a.out) / "lip_distance.csv");
    if (!csv) throw sm::IoError("cannot write lip_distance.csv");
    csv << "omega,frame,distance_mm\n";
  }
  for (double w : a.omegas) {
    if (w < 0.0 || w > 1.0)
      std::cerr << "warning: omega " << w << " extrapolates outside [0, 1]\n";
    const Eigen::VectorXf s = sm::interpolate_styles(sa, sb, w);
    const sm::Animation anim = sm::animate(lc.model, wave, s, temp);
    char name[64];
    std::snprintf(name, sizeof(name), "anim_omega_%0.3f.mimt", w);
    write_motion(std::filesystem::path(a.out) / name, anim.absolute);
    if (lips) {
      const std::vector<double> curve =
          sm::lip_distance_curve(anim.absolute, a.lip_upper, a.lip_lower);
      for (size_t f = 0; f < curve.size(); ++f)
        csv << w << ',' << f << ',' << curve[f] << '\n';
    }
  }
  std::cout << a.out << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test_seen";
  std::string out;
  bool no_probes = false;
  int64_t seed = 7;
};

int cmd_eval(const EvalArgs& a) {
  const sm::LoadedCheckpoint lc = sm::load_checkpoint(a.ckpt);
  const sm::DatasetManifest data = sm::load_manifest(a.data);
  const sm::Split split = sm::split_from_name(a.split);
  sm::StyleProbeConfig pc;
  pc.seed = static_cast<uint64_t>(a.seed);
  const sm::StyleProbe probe = sm::StyleProbe::train(data, pc, &std::cerr);
  const sm::EvalReport rep =
      sm::evaluate(lc.model, data, split, &probe, !a.no_probes,
                   static_cast<uint64_t>(a.seed), &std::cerr);
  std::ofstream os(a.out);
  if (!os) throw sm::IoError("cannot write " + a.out);
  os << rep.to_json() << '\n';
  if (!os) throw sm::IoError("write failed for " + a.out);
  sm::write_clip_csv(rep, a.out + ".csv");
  std::cout << a.out << "\n";
  return kExitOk;
}

// ----------------------------------------------------------- export-latents

struct ExportArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test_seen";
  std::string out;
};

int cmd_export_latents(const ExportArgs& a) {
  const sm::LoadedCheckpoint lc = sm::load_checkpoint(a.ckpt);
  const sm::DatasetManifest data = sm::load_manifest(a.data);
  sm::export_latents(lc.model, data, sm::split_from_name(a.split), a.out);
  std::cout << a.out << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- plot-lip

struct PlotArgs {
  std::vector<std::string> motions;
  int lip_upper = 0;
  int lip_lower = 0;
  double fps = 25.0;
  std::string title = "lip distance";
  std::string out;
};

int cmd_plot_lip(const PlotArgs& a) {
  std::vector<std::pair<std::string, std::vector<double>>> curves;
  for (const std::string& m : a.motions) {
    const sm::NdArray t = sm::read_tensor(m);
    if (t.rank() != 3 || t.dim(2) != 3)
      throw sm::ShapeError("animation tensor must be T x V x 3: " + m);
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>;
    const Eigen::MatrixXf frames = Eigen::Map<const RowMajor>(
        t.data.data(), t.dim(0), 3 * t.dim(1));
    curves.emplace_back(std::filesystem::path(m).stem().string(),
                        sm::lip_distance_curve(frames, a.lip_upper,
                                               a.lip_lower));
  }
  sm::write_curve_svg(a.out, a.title, curves, a.fps);
  std::cout << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style/content disentangled speech-driven 3D facial animation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* c_gen =
      app.add_subcommand("gen-data", "Generate the synthetic stylized corpus");
  c_gen->add_option("--config", gen.config, "Generator config JSON");
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--seed", gen.seed, "Override the config seed");

  TrainArgs tr;
  CLI::App* c_tr = app.add_subcommand("train", "Train a model on a corpus");
  c_tr->add_option("--config", tr.config, "Train config JSON");
  c_tr->add_option("--model-config", tr.model_config, "Model config JSON");
  c_tr->add_option("--data", tr.data, "Dataset manifest.json")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--preset", tr.preset, "Loss preset: paper or desk")
      ->check(CLI::IsMember({"paper", "desk"}));
  c_tr->add_option("--seed", tr.seed, "Training seed");
  c_tr->add_option("--epochs", tr.epochs, "Override epoch count");

  InferArgs inf;
  CLI::App* c_inf =
      app.add_subcommand("infer", "Animate a face from audio and a style");
  c_inf->add_option("--ckpt", inf.ckpt, "Checkpoint path")->required();
  c_inf->add_option("--audio", inf.audio, "Driving WAV")->required();
  c_inf->add_option("--style-ref", inf.style_ref,
                    "Reference motion tensor (T x V x 3, model frame rate)")
      ->required();
  c_inf->add_option("--template", inf.temp, "Template tensor (V x 3)")
      ->required();
  c_inf->add_option("--out", inf.out, "Output animation tensor")->required();

  InterpArgs itp;
  CLI::App* c_itp = app.add_subcommand(
      "interpolate", "Animate with styles blended between two references");
  c_itp->add_option("--ckpt", itp.ckpt, "Checkpoint path")->required();
  c_itp->add_option("--ref-a", itp.ref_a, "Reference motion tensor A")
      ->required();
  c_itp->add_option("--ref-b", itp.ref_b, "Reference motion tensor B")
      ->required();
  c_itp->add_option("--audio", itp.audio, "Driving WAV")->required();
  c_itp->add_option("--template", itp.temp, "Template tensor (V x 3)")
      ->required();
  c_itp->add_option("--omega", itp.omegas,
                    "Blend weights; 1 = pure A, 0 = pure B")
      ->required();
  c_itp->add_option("--out", itp.out, "Output directory")->required();
  c_itp->add_option("--lip-upper", itp.lip_upper,
                    "Upper lip vertex for the distance CSV");
  c_itp->add_option("--lip-lower", itp.lip_lower,
                    "Lower lip vertex for the distance CSV");

  EvalArgs ev;
  CLI::App* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_ev->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  c_ev->add_option("--data", ev.data, "Dataset manifest.json")->required();
  c_ev->add_option("--split", ev.split, "train, test_seen or test_unseen");
  c_ev->add_option("--out", ev.out, "Report JSON path")->required();
  c_ev->add_flag("--no-probes", ev.no_probes,
                 "Skip the linear disentanglement probes");
  c_ev->add_option("--seed", ev.seed, "Probe training seed");

  ExportArgs ex;
  CLI::App* c_ex = app.add_subcommand(
      "export-latents", "Write per-clip style/content codes as CSV + PCA");
  c_ex->add_option("--ckpt", ex.ckpt, "Checkpoint path")->required();
  c_ex->add_option("--data", ex.data, "Dataset manifest.json")->required();
  c_ex->add_option("--split", ex.split, "train, test_seen or test_unseen");
  c_ex->add_option("--out", ex.out, "Output CSV path")->required();

  PlotArgs pl;
  CLI::App* c_pl = app.add_subcommand(
      "plot-lip", "Plot mouth-opening curves of animation tensors as SVG");
  c_pl->add_option("--motion", pl.motions, "Animation tensor (repeatable)")
      ->required();
  c_pl->add_option("--lip-upper", pl.lip_upper, "Upper lip vertex")
      ->required();
  c_pl->add_option("--lip-lower", pl.lip_lower, "Lower lip vertex")
      ->required();
  c_pl->add_option("--fps", pl.fps, "Frame rate for the time axis");
  c_pl->add_option("--title", pl.title, "Plot title");
  c_pl->add_option("--out", pl.out, "Output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(gen);
    if (c_tr->parsed()) return cmd_train(tr);
    if (c_inf->parsed()) return cmd_infer(inf);
    if (c_itp->parsed()) return cmd_interpolate(itp);
    if (c_ev->parsed()) return cmd_eval(ev);
    if (c_ex->parsed()) return cmd_export_latents(ex);
    if (c_pl->parsed()) return cmd_plot_lip(pl);
    std::cerr << "error: no subcommand\n";
    return kExitUsage;
  } catch (const sm::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const sm::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const sm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
