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

// End-to-end tests for the stylemotion command-line tool. Each test runs
// the real binary as a subprocess and checks exit codes, printed paths and
// the artifacts written to disk. The binary path arrives via --cli-path,
// which the custom main strips before handing the rest to doctest.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemotion/data.hpp"
#include "stylemotion/inference.hpp"
#include "stylemotion/synthgen.hpp"
#include "stylemotion/tensor.hpp"
#include "stylemotion/training.hpp"
#include "stylemotion/wav.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
namespace sm = stylemotion;
using sm::testing::files_equal;
using sm::testing::TempDir;

namespace {

std::string g_cli_path;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'')
      q += "'\\''";
    else
      q += c;
  }
  q += "'";
  return q;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  REQUIRE(bool(os));
}

RunResult run_cli(const std::vector<std::string>& args) {
  static TempDir capture;
  static int n = 0;
  const fs::path out_file = capture / ("out" + std::to_string(n));
  const fs::path err_file = capture / ("err" + std::to_string(n));
  ++n;
  std::string cmd = shell_quote(g_cli_path);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " > " + shell_quote(out_file.string());
  cmd += " 2> " + shell_quote(err_file.string());
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

int count_of(const std::string& text, const std::string& needle) {
  int n = 0;
  for (size_t at = text.find(needle); at != std::string::npos;
       at = text.find(needle, at + needle.size()))
    ++n;
  return n;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  return lines;
}

// Corpus plus one trained checkpoint, both produced through the CLI and
// shared by every test case.
struct CliWorld {
  TempDir dir;
  fs::path gen_cfg, model_cfg, train_cfg;
  fs::path corpus, manifest, run, ckpt;
  std::string train_stdout;
  sm::DatasetManifest data;

  fs::path clip(const std::string& name) const {
    return corpus / "clips" / name;
  }
};

const CliWorld& world() {
  static CliWorld* w = [] {
    auto* s = new CliWorld;
    s->gen_cfg = s->dir / "gen.json";
    write_text(s->gen_cfg, sm::testing::tiny_gen_config().to_json());
    s->corpus = s->dir / "corpus";
    const RunResult g = run_cli({"gen-data", "--config", s->gen_cfg.string(),
                                 "--out", s->corpus.string()});
    REQUIRE(g.code == 0);
    s->manifest = s->corpus / "manifest.json";
    s->data = sm::load_manifest(s->manifest);

    s->model_cfg = s->dir / "model.json";
    write_text(s->model_cfg, sm::testing::tiny_model_config(0).to_json());
    sm::TrainConfig tc;
    tc.batch = 2;
    tc.lr = 1e-3;
    tc.epochs = 2;
    tc.window_seconds = 2.0;
    tc.seed = 11;
    s->train_cfg = s->dir / "train.json";
    write_text(s->train_cfg, tc.to_json());

    s->run = s->dir / "run";
    const RunResult t = run_cli({"train", "--config", s->train_cfg.string(),
                                 "--model-config", s->model_cfg.string(),
                                 "--data", s->manifest.string(), "--out",
                                 s->run.string()});
    REQUIRE(t.code == 0);
    s->train_stdout = t.out;
    s->ckpt = s->run / "checkpoint.mckp";
    REQUIRE(fs::exists(s->ckpt));
    return s;
  }();
  return *w;
}

// Lazily run `infer` once; several cases reuse the animation it writes.
const fs::path& infer_anim() {
  static fs::path anim = [] {
    const CliWorld& w = world();
    const fs::path out = w.dir / "anim.mimt";
    const RunResult r = run_cli(
        {"infer", "--ckpt", w.ckpt.string(), "--audio",
         w.clip("spk00_clip000.wav").string(), "--style-ref",
         w.clip("spk01_clip000_motion.mimt").string(), "--template",
         (w.corpus / "template.mimt").string(), "--out", out.string()});
    REQUIRE(r.code == 0);
    REQUIRE(r.out == out.string() + "\n");
    return out;
  }();
  return anim;
}

}  // namespace

TEST_CASE("cli: usage, help and unknown arguments") {
  const RunResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gen-data") != std::string::npos);
  CHECK(help.out.find("interpolate") != std::string::npos);
  CHECK(help.out.find("plot-lip") != std::string::npos);

  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"zap"}).code == 2);
  CHECK(run_cli({"gen-data"}).code == 2);               // missing --out
  CHECK(run_cli({"gen-data", "--bogus", "1"}).code == 2);
  CHECK(run_cli({"train", "--preset", "huge", "--data", "x", "--out", "y"})
            .code == 2);
}

TEST_CASE("cli: gen-data writes a deterministic corpus") {
  const CliWorld& w = world();
  CHECK(w.data.samples.size() == 15);
  CHECK(w.data.identity_count() == 3);

  // Same config into a second directory: identical bytes, path echoed.
  const fs::path again = w.dir / "corpus_again";
  const RunResult r = run_cli(
      {"gen-data", "--config", w.gen_cfg.string(), "--out", again.string()});
  CHECK(r.code == 0);
  CHECK(r.out == (again / "manifest.json").string() + "\n");
  for (const char* rel :
       {"manifest.json", "template.mimt", "clips/spk00_clip000_motion.mimt",
        "clips/spk00_clip000.wav", "clips/spk02_clip004_script.json"})
    CHECK(files_equal(w.corpus / rel, again / rel));

  // --seed overrides the config seed and changes the data.
  const fs::path seeded = w.dir / "corpus_seeded";
  const RunResult r2 =
      run_cli({"gen-data", "--config", w.gen_cfg.string(), "--out",
               seeded.string(), "--seed", "123"});
  CHECK(r2.code == 0);
  const auto gen_json =
      nlohmann::json::parse(slurp(seeded / "gen_config.json"));
  CHECK(gen_json.at("seed").get<int64_t>() == 123);
  CHECK_FALSE(files_equal(w.corpus / "clips/spk00_clip000_motion.mimt",
                          seeded / "clips/spk00_clip000_motion.mimt"));

  // Unwritable output directory maps to the io exit code.
  const RunResult bad = run_cli({"gen-data", "--out", "/dev/null/corpus"});
  CHECK(bad.code == 3);
  CHECK(bad.err.find("io error") != std::string::npos);
}

TEST_CASE("cli: train writes checkpoint, sidecar and log") {
  const CliWorld& w = world();
  CHECK(w.train_stdout.find(w.ckpt.string()) != std::string::npos);
  CHECK(fs::exists(w.run / "checkpoint.mckp.json"));
  CHECK(fs::exists(w.run / "train_log.jsonl"));

  const auto log_lines = lines_of(slurp(w.run / "train_log.jsonl"));
  REQUIRE(log_lines.size() == 2);
  for (size_t i = 0; i < log_lines.size(); ++i) {
    const auto e = nlohmann::json::parse(log_lines[i]);
    CHECK(e.at("epoch").get<int>() == static_cast<int>(i) + 1);
    CHECK(std::isfinite(e.at("total").get<double>()));
    CHECK(std::isfinite(e.at("r").get<double>()));
  }

  sm::LoadedCheckpoint loaded = sm::load_checkpoint(w.ckpt);
  CHECK(loaded.meta.epoch == 2);
  CHECK(loaded.meta.n_style_classes == 2);
  CHECK(loaded.model.cfg.vertices == 30);  // auto-filled from the template

  // Same configs, fresh output directory: byte-identical artifacts.
  const fs::path rerun = w.dir / "run_again";
  const RunResult r = run_cli({"train", "--config", w.train_cfg.string(),
                               "--model-config", w.model_cfg.string(),
                               "--data", w.manifest.string(), "--out",
                               rerun.string()});
  CHECK(r.code == 0);
  CHECK(files_equal(w.ckpt, rerun / "checkpoint.mckp"));
  CHECK(files_equal(w.run / "checkpoint.mckp.json",
                    rerun / "checkpoint.mckp.json"));
  CHECK(files_equal(w.run / "train_log.jsonl", rerun / "train_log.jsonl"));

  // --epochs and --seed override the config file.
  const fs::path shorter = w.dir / "run_short";
  const RunResult r2 = run_cli({"train", "--config", w.train_cfg.string(),
                                "--model-config", w.model_cfg.string(),
                                "--data", w.manifest.string(), "--out",
                                shorter.string(), "--epochs", "1", "--seed",
                                "5"});
  CHECK(r2.code == 0);
  CHECK(lines_of(slurp(shorter / "train_log.jsonl")).size() == 1);
  const auto side =
      nlohmann::json::parse(slurp(shorter / "checkpoint.mckp.json"));
  CHECK(side.at("epoch").get<int>() == 1);
  CHECK(side.at("train_config").at("seed").get<uint64_t>() == 5);
}

TEST_CASE("cli: train rejects bad inputs with the usage exit code") {
  const CliWorld& w = world();
  CHECK(run_cli({"train", "--data", (w.dir / "nope.json").string(), "--out",
                 (w.dir / "x").string()})
            .code == 2);

  const fs::path broken = w.dir / "broken.json";
  write_text(broken, "{");
  CHECK(run_cli({"train", "--config", broken.string(), "--data",
                 w.manifest.string(), "--out", (w.dir / "x").string()})
            .code == 2);

  const fs::path unknown = w.dir / "unknown.json";
  write_text(unknown, "{\"bogus\": 1}");
  CHECK(run_cli({"train", "--config", unknown.string(), "--data",
                 w.manifest.string(), "--out", (w.dir / "x").string()})
            .code == 2);

  // Window longer than every clip in the corpus.
  sm::TrainConfig tc;
  tc.batch = 2;
  tc.epochs = 1;
  tc.window_seconds = 3.0;
  const fs::path wide = w.dir / "wide.json";
  write_text(wide, tc.to_json());
  const RunResult r = run_cli({"train", "--config", wide.string(),
                               "--model-config", w.model_cfg.string(),
                               "--data", w.manifest.string(), "--out",
                               (w.dir / "x").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("shorter than the window") != std::string::npos);
}

TEST_CASE("cli: train surfaces numeric blowups with its own exit code") {
  const CliWorld& w = world();
  sm::TrainConfig tc;
  tc.batch = 2;
  tc.lr = 1e20;  // first step throws parameters far outside float range
  tc.epochs = 1;
  tc.window_seconds = 2.0;
  const fs::path cfg = w.dir / "blowup.json";
  write_text(cfg, tc.to_json());
  const RunResult r = run_cli({"train", "--config", cfg.string(),
                               "--model-config", w.model_cfg.string(),
                               "--data", w.manifest.string(), "--out",
                               (w.dir / "blowup_run").string()});
  CHECK(r.code == 4);
  CHECK(r.err.find("numeric error") != std::string::npos);
  CHECK(r.err.find("non-finite training loss") != std::string::npos);
}

TEST_CASE("cli: infer writes an absolute animation with metadata") {
  const CliWorld& w = world();
  const fs::path anim = infer_anim();

  const sm::NdArray t = sm::read_tensor(anim);
  REQUIRE(t.rank() == 3);
  CHECK(t.dim(0) == 50);
  CHECK(t.dim(1) == 30);
  CHECK(t.dim(2) == 3);

  const auto meta = nlohmann::json::parse(slurp(anim.string() + ".json"));
  CHECK(meta.at("frames").get<int>() == 50);
  CHECK(meta.at("vertices").get<int>() == 30);
  CHECK(meta.at("frame_rate").get<double>() == 25.0);
  CHECK(meta.at("values").get<std::string>() == "absolute_mm");
  CHECK(meta.at("checkpoint").get<std::string>() == w.ckpt.string());
  CHECK(meta.at("audio").get<std::string>() ==
        w.clip("spk00_clip000.wav").string());
  CHECK(meta.at("style_ref").get<std::string>() ==
        w.clip("spk01_clip000_motion.mimt").string());

  // The CLI path must match the library called directly.
  sm::LoadedCheckpoint loaded = sm::load_checkpoint(w.ckpt);
  const sm::MotionSequence ref = sm::ndarray_to_motion(
      sm::read_tensor(w.clip("spk01_clip000_motion.mimt")),
      loaded.model.cfg.motion_rate);
  const Eigen::VectorXf style = sm::extract_style(loaded.model, ref);
  const sm::Waveform wave = sm::read_wav(w.clip("spk00_clip000.wav"));
  const sm::Animation a =
      sm::animate(loaded.model, wave, style, w.data.face_template);
  int mismatches = 0;
  for (int fr = 0; fr < 50; ++fr)
    for (int c = 0; c < 90; ++c)
      if (t.data[static_cast<size_t>(fr) * 90 + c] != a.absolute(fr, c))
        ++mismatches;
  CHECK(mismatches == 0);

  // Re-running is bitwise reproducible (sidecar included).
  const fs::path anim2 = w.dir / "anim_again.mimt";
  const RunResult r = run_cli(
      {"infer", "--ckpt", w.ckpt.string(), "--audio",
       w.clip("spk00_clip000.wav").string(), "--style-ref",
       w.clip("spk01_clip000_motion.mimt").string(), "--template",
       (w.corpus / "template.mimt").string(), "--out", anim2.string()});
  CHECK(r.code == 0);
  CHECK(files_equal(anim, anim2));
  CHECK(files_equal(anim.string() + ".json", anim2.string() + ".json"));

  // Missing audio file maps to the io exit code.
  CHECK(run_cli({"infer", "--ckpt", w.ckpt.string(), "--audio",
                 (w.dir / "nope.wav").string(), "--style-ref",
                 w.clip("spk01_clip000_motion.mimt").string(), "--template",
                 (w.corpus / "template.mimt").string(), "--out",
                 (w.dir / "x.mimt").string()})
            .code == 3);

  // Style reference shorter than one second is a usage error.
  sm::NdArray crop = sm::read_tensor(w.clip("spk01_clip000_motion.mimt"));
  crop.shape[0] = 20;
  crop.data.resize(static_cast<size_t>(20) * 30 * 3);
  const fs::path short_ref = w.dir / "short_ref.mimt";
  sm::write_tensor(short_ref, crop);
  CHECK(run_cli({"infer", "--ckpt", w.ckpt.string(), "--audio",
                 w.clip("spk00_clip000.wav").string(), "--style-ref",
                 short_ref.string(), "--template",
                 (w.corpus / "template.mimt").string(), "--out",
                 (w.dir / "x.mimt").string()})
            .code == 2);

  // A motion tensor is not a V x 3 template.
  CHECK(run_cli({"infer", "--ckpt", w.ckpt.string(), "--audio",
                 w.clip("spk00_clip000.wav").string(), "--style-ref",
                 w.clip("spk01_clip000_motion.mimt").string(), "--template",
                 w.clip("spk00_clip001_motion.mimt").string(), "--out",
                 (w.dir / "x.mimt").string()})
            .code == 2);
}

TEST_CASE("cli: interpolate sweeps styles and logs lip distance") {
  const CliWorld& w = world();
  const fs::path anim = infer_anim();
  const fs::path out = w.dir / "sweep";
  const RunResult r = run_cli(
      {"interpolate", "--ckpt", w.ckpt.string(), "--ref-a",
       w.clip("spk01_clip000_motion.mimt").string(), "--ref-b",
       w.clip("spk00_clip001_motion.mimt").string(), "--audio",
       w.clip("spk00_clip000.wav").string(), "--template",
       (w.corpus / "template.mimt").string(), "--omega", "1", "--omega",
       "0.5", "--omega", "0", "--omega", "2", "--lip-upper",
       std::to_string(w.data.lip_upper), "--lip-lower",
       std::to_string(w.data.lip_lower), "--out", out.string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("extrapolates") != std::string::npos);

  for (const char* name :
       {"anim_omega_1.000.mimt", "anim_omega_0.500.mimt",
        "anim_omega_0.000.mimt", "anim_omega_2.000.mimt"}) {
    const sm::NdArray t = sm::read_tensor(out / name);
    REQUIRE(t.rank() == 3);
    CHECK(t.dim(0) == 50);
  }

  // omega = 1 is exactly the style of ref-a, i.e. the plain infer output.
  CHECK(files_equal(out / "anim_omega_1.000.mimt", anim));
  CHECK_FALSE(files_equal(out / "anim_omega_0.000.mimt", anim));

  const auto csv = lines_of(slurp(out / "lip_distance.csv"));
  REQUIRE(csv.size() == 1 + 4 * 50);
  CHECK(csv[0] == "omega,frame,distance_mm");
  CHECK(csv[1].rfind("1,0,", 0) == 0);
  for (size_t i = 1; i < csv.size(); ++i) {
    const auto last = csv[i].rfind(',');
    CHECK(std::stod(csv[i].substr(last + 1)) > 0.0);
  }

  CHECK(run_cli({"interpolate", "--ckpt", w.ckpt.string(), "--ref-a", "a",
                 "--ref-b", "b", "--audio", "c", "--template", "d",
                 "--omega", "abc", "--out", (w.dir / "x").string()})
            .code == 2);
}

TEST_CASE("cli: eval writes a report and a per-clip table") {
  const CliWorld& w = world();
  const fs::path report = w.dir / "report.json";
  const RunResult r = run_cli({"eval", "--ckpt", w.ckpt.string(), "--data",
                               w.manifest.string(), "--out",
                               report.string()});
  CHECK(r.code == 0);
  CHECK(r.out == report.string() + "\n");

  const auto j = nlohmann::json::parse(slurp(report));
  CHECK(j.at("split").get<std::string>() == "test_seen");
  CHECK(j.at("clips").get<int>() == 4);
  CHECK(std::isfinite(j.at("content").at("fve").get<double>()));
  CHECK(j.at("audio").at("lve").get<double>() >= 0.0);
  const double acc_gt = j.at("style_probe_acc_gt").get<double>();
  CHECK(acc_gt >= 0.0);
  CHECK(acc_gt <= 1.0);
  REQUIRE(j.contains("probes"));
  for (const char* key :
       {"style_identity_acc", "content_identity_acc", "content_token_acc"}) {
    const double v = j.at("probes").at(key).get<double>();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  REQUIRE(j.at("per_clip").size() == 4);
  CHECK(std::isfinite(
      j.at("per_clip")[0].at("content").at("scs").get<double>()));

  const auto csv = lines_of(slurp(report.string() + ".csv"));
  REQUIRE(csv.size() == 5);
  CHECK(csv[0] ==
        "stem,identity,fve_content,lve_content,ldtw_content,ldd_content,"
        "scs_content,fve_audio,lve_audio,ldtw_audio,ldd_audio,scs_audio");

  // --no-probes drops the probe block; the style probe itself still runs,
  // so per-clip scs stays populated.
  const fs::path plain = w.dir / "report_plain.json";
  const RunResult r2 = run_cli({"eval", "--ckpt", w.ckpt.string(), "--data",
                                w.manifest.string(), "--out", plain.string(),
                                "--no-probes"});
  CHECK(r2.code == 0);
  const auto j2 = nlohmann::json::parse(slurp(plain));
  CHECK_FALSE(j2.contains("probes"));
  CHECK(std::isfinite(
      j2.at("per_clip")[0].at("content").at("scs").get<double>()));

  CHECK(run_cli({"eval", "--ckpt", w.ckpt.string(), "--data",
                 w.manifest.string(), "--out", (w.dir / "x.json").string(),
                 "--split", "validation"})
            .code == 2);
}

TEST_CASE("cli: export-latents writes style and content tables") {
  const CliWorld& w = world();
  const fs::path csv_path = w.dir / "latents.csv";
  const RunResult r =
      run_cli({"export-latents", "--ckpt", w.ckpt.string(), "--data",
               w.manifest.string(), "--out", csv_path.string()});
  CHECK(r.code == 0);

  const auto csv = lines_of(slurp(csv_path));
  REQUIRE(csv.size() == 9);  // header + 4 clips x {style, content_mean}
  CHECK(csv[0] == "stem,identity,kind,dim,c0,c1,c2,c3,c4,c5,c6,c7");
  CHECK(count_of(slurp(csv_path), ",style,") == 4);
  CHECK(count_of(slurp(csv_path), ",content_mean,") == 4);

  const auto pca = lines_of(slurp(csv_path.string() + ".pca.csv"));
  REQUIRE(pca.size() == 9);
  CHECK(pca[0] == "stem,identity,kind,pc1,pc2");
}

TEST_CASE("cli: plot-lip renders an svg with one polyline per input") {
  const CliWorld& w = world();
  const fs::path anim = infer_anim();
  const fs::path svg_path = w.dir / "lips.svg";
  const RunResult r = run_cli(
      {"plot-lip", "--motion", anim.string(), "--motion",
       (w.dir / "sweep" / "anim_omega_0.000.mimt").string(), "--lip-upper",
       std::to_string(w.data.lip_upper), "--lip-lower",
       std::to_string(w.data.lip_lower), "--fps", "25", "--title",
       "mouth opening", "--out", svg_path.string()});
  CHECK(r.code == 0);

  const std::string svg = slurp(svg_path);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(svg.find("mouth opening") != std::string::npos);
  CHECK(svg.find(">anim<") != std::string::npos);
  CHECK(svg.find(">anim_omega_0.000<") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);

  // A V x 3 template tensor is not an animation.
  CHECK(run_cli({"plot-lip", "--motion",
                 (w.corpus / "template.mimt").string(), "--lip-upper", "0",
                 "--lip-lower", "1", "--out", (w.dir / "x.svg").string()})
            .code == 2);
}

int main(int argc, char** argv) {
  std::vector<char*> rest;
  rest.push_back(argv[0]);
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--cli-path" && i + 1 < argc) {
      g_cli_path = argv[++i];
      continue;
    }
    rest.push_back(argv[i]);
  }
  if (g_cli_path.empty()) {
    std::fprintf(stderr, "usage: test_cli --cli-path <stylemotion binary>\n");
    return 1;
  }
  doctest::Context ctx(static_cast<int>(rest.size()), rest.data());
  return ctx.run();
}
