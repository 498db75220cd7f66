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

#include "stylemotion/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "stylemotion/error.hpp"
#include "stylemotion/tensor.hpp"

namespace stylemotion {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown " + what + " key: " + it.key());
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json model_cfg_json(const ModelConfig& c) {
  json j;
  j["d_style"] = c.d_style;
  j["d_content"] = c.d_content;
  j["d_audio"] = c.d_audio;
  j["d_model"] = c.d_model;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ffn_mult"] = c.ffn_mult;
  j["tcn_layers"] = c.tcn_layers;
  j["tcn_kernel"] = c.tcn_kernel;
  j["tcn_channels"] = c.tcn_channels;
  j["proj_dim"] = c.proj_dim;
  j["vertices"] = c.vertices;
  j["motion_rate"] = c.motion_rate;
  j["audio_rate"] = c.audio_rate;
  j["token_rate"] = c.token_rate;
  j["align_kernel"] = c.align_kernel;
  j["align_stride"] = c.align_stride;
  j["align_pad"] = c.align_pad;
  j["frontend_channels"] = c.frontend_channels;
  j["frontend_kernels"] = c.frontend_kernels;
  j["frontend_strides"] = c.frontend_strides;
  j["frontend_pads"] = c.frontend_pads;
  j["norm_eps"] = c.norm_eps;
  j["pretrained_frontend"] = c.pretrained_frontend;
  return j;
}

ModelConfig model_cfg_from(const json& j) {
  static const std::set<std::string> allowed = {
      "d_style",        "d_content",       "d_audio",
      "d_model",        "layers",          "heads",
      "ffn_mult",       "tcn_layers",      "tcn_kernel",
      "tcn_channels",   "proj_dim",        "vertices",
      "motion_rate",    "audio_rate",      "token_rate",
      "align_kernel",   "align_stride",    "align_pad",
      "frontend_channels", "frontend_kernels", "frontend_strides",
      "frontend_pads",  "norm_eps",        "pretrained_frontend"};
  check_keys(j, allowed, "model config");
  ModelConfig c;
  get_if(j, "d_style", c.d_style);
  get_if(j, "d_content", c.d_content);
  get_if(j, "d_audio", c.d_audio);
  get_if(j, "d_model", c.d_model);
  get_if(j, "layers", c.layers);
  get_if(j, "heads", c.heads);
  get_if(j, "ffn_mult", c.ffn_mult);
  get_if(j, "tcn_layers", c.tcn_layers);
  get_if(j, "tcn_kernel", c.tcn_kernel);
  get_if(j, "tcn_channels", c.tcn_channels);
  get_if(j, "proj_dim", c.proj_dim);
  get_if(j, "vertices", c.vertices);
  get_if(j, "motion_rate", c.motion_rate);
  get_if(j, "audio_rate", c.audio_rate);
  get_if(j, "token_rate", c.token_rate);
  get_if(j, "align_kernel", c.align_kernel);
  get_if(j, "align_stride", c.align_stride);
  get_if(j, "align_pad", c.align_pad);
  get_if(j, "frontend_channels", c.frontend_channels);
  get_if(j, "frontend_kernels", c.frontend_kernels);
  get_if(j, "frontend_strides", c.frontend_strides);
  get_if(j, "frontend_pads", c.frontend_pads);
  get_if(j, "norm_eps", c.norm_eps);
  get_if(j, "pretrained_frontend", c.pretrained_frontend);
  return c;
}

json train_cfg_json(const TrainConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["window_seconds"] = c.window_seconds;
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["checkpoint_every"] = c.checkpoint_every;
  j["cycle_teacher_forced"] = c.cycle_teacher_forced;
  j["workers"] = c.workers;
  j["lambda_r"] = c.lambda_r;
  j["lambda_s"] = c.lambda_s;
  j["lambda_c"] = c.lambda_c;
  j["lambda_con"] = c.lambda_con;
  j["lambda_cycle_s"] = c.lambda_cycle_s;
  j["lambda_cycle_c"] = c.lambda_cycle_c;
  j["grl_lambda"] = c.grl_lambda;
  j["contrastive_mix"] = c.contrastive_mix;
  return j;
}

TrainConfig train_cfg_from(const json& j) {
  static const std::set<std::string> allowed = {
      "preset",         "batch",          "lr",
      "epochs",         "window_seconds", "seed",
      "beta1",          "beta2",          "adam_eps",
      "checkpoint_every", "cycle_teacher_forced", "workers",
      "lambda_r",       "lambda_s",       "lambda_c",
      "lambda_con",     "lambda_cycle_s", "lambda_cycle_c",
      "grl_lambda",     "contrastive_mix"};
  check_keys(j, allowed, "train config");
  TrainConfig c;
  get_if(j, "preset", c.preset);
  get_if(j, "batch", c.batch);
  get_if(j, "lr", c.lr);
  get_if(j, "epochs", c.epochs);
  get_if(j, "window_seconds", c.window_seconds);
  get_if(j, "seed", c.seed);
  get_if(j, "beta1", c.beta1);
  get_if(j, "beta2", c.beta2);
  get_if(j, "adam_eps", c.adam_eps);
  get_if(j, "checkpoint_every", c.checkpoint_every);
  get_if(j, "cycle_teacher_forced", c.cycle_teacher_forced);
  get_if(j, "workers", c.workers);
  get_if(j, "lambda_r", c.lambda_r);
  get_if(j, "lambda_s", c.lambda_s);
  get_if(j, "lambda_c", c.lambda_c);
  get_if(j, "lambda_con", c.lambda_con);
  get_if(j, "lambda_cycle_s", c.lambda_cycle_s);
  get_if(j, "lambda_cycle_c", c.lambda_cycle_c);
  get_if(j, "grl_lambda", c.grl_lambda);
  get_if(j, "contrastive_mix", c.contrastive_mix);
  return c;
}

json parse_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad ") + what + " json: " + e.what());
  }
}

using RowMajor =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

NdArray mat_to_ndarray(const Eigen::MatrixXf& m) {
  NdArray a;
  a.shape = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
  a.data.resize(static_cast<size_t>(m.size()));
  Eigen::Map<RowMajor>(a.data.data(), m.rows(), m.cols()) = m;
  return a;
}

Eigen::MatrixXf ndarray_to_mat(const NdArray& a, const std::string& name) {
  if (a.rank() != 2)
    throw ParseError("checkpoint tensor " + name + " must have rank 2");
  return Eigen::Map<const RowMajor>(a.data.data(), a.dim(0), a.dim(1));
}

constexpr char kCkptMagic[4] = {'M', 'C', 'K', 'P'};
constexpr uint32_t kCkptVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw ParseError(std::string("truncated checkpoint: ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void write_entry(std::ostream& os, const std::string& name,
                 const Eigen::MatrixXf& value) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_tensor(os, mat_to_ndarray(value));
}

std::vector<std::pair<std::string, NdArray>> read_container(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw ParseError("bad magic, not a checkpoint file: " + path.string());
  const uint32_t version = read_u32(is, "version");
  if (version != kCkptVersion)
    throw ParseError("unsupported checkpoint version " +
                     std::to_string(version));
  const uint32_t count = read_u32(is, "entry count");
  std::vector<std::pair<std::string, NdArray>> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = read_u32(is, "name length");
    if (len == 0 || len > 4096)
      throw ParseError("bad checkpoint entry name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len))
      throw ParseError("truncated checkpoint: entry name");
    entries.emplace_back(std::move(name), read_tensor(is));
  }
  return entries;
}

json load_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw IoError(std::string("cannot open ") + what + ": " +
                         path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad json in ") + path.string() + ": " +
                     e.what());
  }
  return j;
}

}  // namespace

std::string ModelConfig::to_json() const { return model_cfg_json(*this).dump(1); }

ModelConfig ModelConfig::from_json(const std::string& text) {
  return model_cfg_from(parse_text(text, "model config"));
}

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (window_seconds <= 0) throw ConfigError("window_seconds must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("adam betas must lie in [0, 1)");
  if (adam_eps <= 0) throw ConfigError("adam_eps must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (contrastive_mix >= 0 && contrastive_mix > 1)
    throw ConfigError("contrastive_mix must lie in [0, 1]");
  (void)weights();
}

LossWeights<float> TrainConfig::weights() const {
  LossWeights<float> w = LossWeights<float>::preset(preset);
  if (lambda_r >= 0) w.r = static_cast<float>(lambda_r);
  if (lambda_s >= 0) w.s = static_cast<float>(lambda_s);
  if (lambda_c >= 0) w.c = static_cast<float>(lambda_c);
  if (lambda_con >= 0) w.con = static_cast<float>(lambda_con);
  if (lambda_cycle_s >= 0) w.cycle_s = static_cast<float>(lambda_cycle_s);
  if (lambda_cycle_c >= 0) w.cycle_c = static_cast<float>(lambda_cycle_c);
  if (grl_lambda >= 0) w.grl = static_cast<float>(grl_lambda);
  if (contrastive_mix >= 0) w.mix = static_cast<float>(contrastive_mix);
  if (w.r <= 0 && w.s <= 0 && w.c <= 0 && w.con <= 0 && w.cycle_s <= 0 &&
      w.cycle_c <= 0)
    throw ConfigError("all loss weights are zero");
  return w;
}

std::string TrainConfig::to_json() const { return train_cfg_json(*this).dump(1); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  return train_cfg_from(parse_text(text, "train config"));
}

Eigen::MatrixXf wave_to_matrix(const Waveform& w) {
  Eigen::MatrixXf m(static_cast<Eigen::Index>(w.samples.size()), 1);
  for (size_t i = 0; i < w.samples.size(); ++i)
    m(static_cast<Eigen::Index>(i), 0) = w.samples[i];
  return m;
}

std::vector<int> switch_styles(const std::vector<int>& identities, Rng& rng,
                               bool& cycle_ok) {
  const int B = static_cast<int>(identities.size());
  std::vector<int> perm(static_cast<size_t>(B));
  std::iota(perm.begin(), perm.end(), 0);
  cycle_ok = false;
  if (B < 2) return perm;

  auto valid = [&](const std::vector<int>& p) {
    for (int b = 0; b < B; ++b)
      if (identities[p[static_cast<size_t>(b)]] ==
          identities[static_cast<size_t>(b)])
        return false;
    return true;
  };

  std::vector<int> cand = perm;
  for (int tries = 0; tries < 200; ++tries) {
    rng.shuffle(cand);
    if (valid(cand)) {
      cycle_ok = true;
      return cand;
    }
  }
  // Deterministic fallback: the first rotation that avoids every identity.
  for (int r = 1; r < B; ++r) {
    for (int b = 0; b < B; ++b)
      cand[static_cast<size_t>(b)] = (b + r) % B;
    if (valid(cand)) {
      cycle_ok = true;
      return cand;
    }
  }
  return perm;
}

void Adam::step(ag::ParamStore<float>& params) {
  ++t_;
  const float b1 = static_cast<float>(b1_);
  const float b2 = static_cast<float>(b2_);
  const float bc1 =
      1.0f - std::pow(b1, static_cast<float>(t_));
  const float bc2 =
      1.0f - std::pow(b2, static_cast<float>(t_));
  const float lr = static_cast<float>(lr_);
  const float eps = static_cast<float>(eps_);
  for (auto& p : params.all()) {
    auto& mv = state_[p.name];
    if (mv.first.size() == 0) {
      mv.first.setZero(p.value.rows(), p.value.cols());
      mv.second.setZero(p.value.rows(), p.value.cols());
    }
    mv.first = b1 * mv.first + (1.0f - b1) * p.grad;
    mv.second =
        (b2 * mv.second.array() + (1.0f - b2) * p.grad.array().square())
            .matrix();
    p.value.array() -= lr * (mv.first.array() / bc1) /
                       ((mv.second.array() / bc2).sqrt() + eps);
  }
}

LossBreakdown train_step(Model<float>& model,
                         const std::vector<BatchSample>& batch,
                         const LossWeights<float>& w, Adam& adam, Rng& rng,
                         const TrainConfig& tc) {
  if (batch.empty()) throw ConfigError("empty batch");
  const int B = static_cast<int>(batch.size());
  const int T = static_cast<int>(batch[0].motion.rows());
  for (const auto& b : batch)
    if (b.motion.rows() != T)
      throw ShapeError("all windows in a batch must have equal length");

  ag::Tape<float> t(true);
  using V = ag::Var<float>;
  std::vector<V> gts, styles, contents, audios, recons_c;
  std::vector<int> labels;
  V reg_acc, con_acc;
  for (const auto& bs : batch) {
    V gt = t.constant(bs.motion);
    V s = model.style_encode(t, gt);
    V c = model.content_encode(t, gt);
    V a = model.audio_encode(t, t.constant(bs.wave));
    if (t.val(a).rows() != T)
      throw ShapeError("audio features have " +
                       std::to_string(t.val(a).rows()) + " frames but motion has " +
                       std::to_string(T) + "; check rates and window length");
    V mc = model.decode_teacher_forced(t, s, c, gt);
    V ma = model.decode_teacher_forced(t, s, a, gt);
    V reg = regression_loss(t, mc, ma, gt);
    reg_acc = reg_acc.valid() ? t.add(reg_acc, reg) : reg;
    V con = content_audio_contrastive(t, model, c, a, w.mix);
    con_acc = con_acc.valid() ? t.add(con_acc, con) : con;
    gts.push_back(gt);
    styles.push_back(s);
    contents.push_back(c);
    audios.push_back(a);
    recons_c.push_back(mc);
    labels.push_back(bs.class_index);
  }

  LossTerms<float> terms;
  terms.r = t.scale(reg_acc, 1.0f / static_cast<float>(B));
  terms.s = style_class_loss(t, model, styles, labels);
  terms.c = content_adversarial_loss(t, model, contents, labels, w.grl);
  terms.con = t.scale(con_acc, 1.0f / static_cast<float>(B));

  LossBreakdown out;
  const bool want_cycle = w.cycle_s > 0 || w.cycle_c > 0;
  if (want_cycle) {
    std::vector<int> ids;
    for (const auto& bs : batch) ids.push_back(bs.identity);
    bool cycle_ok = false;
    std::vector<int> donor = switch_styles(ids, rng, cycle_ok);
    if (cycle_ok) {
      std::vector<std::pair<V, V>> style_pairs;
      V cyc_acc;
      for (int b = 0; b < B; ++b) {
        V s_sw = styles[static_cast<size_t>(donor[static_cast<size_t>(b)])];
        V prefix = tc.cycle_teacher_forced ? recons_c[static_cast<size_t>(b)]
                                           : gts[static_cast<size_t>(b)];
        V cross = model.decode_teacher_forced(
            t, s_sw, contents[static_cast<size_t>(b)], prefix);
        V s_hat = model.style_encode(t, cross);
        style_pairs.emplace_back(s_sw, s_hat);
        if (w.cycle_c > 0) {
          V c_hat = model.content_encode(t, cross);
          V lcc = content_cycle_loss(t, model,
                                     contents[static_cast<size_t>(b)], c_hat,
                                     w.mix);
          cyc_acc = cyc_acc.valid() ? t.add(cyc_acc, lcc) : lcc;
        }
      }
      terms.cycle_s = style_cycle_loss(t, style_pairs);
      if (cyc_acc.valid())
        terms.cycle_c = t.scale(cyc_acc, 1.0f / static_cast<float>(B));
      out.cycle_active = true;
    }
  }

  V total = total_loss(t, terms, w);

  auto read = [&](V v) -> double {
    return v.valid() ? static_cast<double>(t.val(v)(0, 0)) : 0.0;
  };
  out.r = read(terms.r);
  out.s = read(terms.s);
  out.c = read(terms.c);
  out.con = read(terms.con);
  out.cycle_s = read(terms.cycle_s);
  out.cycle_c = read(terms.cycle_c);
  out.total = read(total);
  if (!std::isfinite(out.total))
    throw NumericError("non-finite training loss: r=" + std::to_string(out.r) +
                       " s=" + std::to_string(out.s) + " c=" +
                       std::to_string(out.c) + " con=" + std::to_string(out.con) +
                       " cycle_s=" + std::to_string(out.cycle_s) +
                       " cycle_c=" + std::to_string(out.cycle_c));

  model.params.zero_grad();
  t.backward(total);
  adam.step(model.params);
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const Model<float>& model, const Adam& adam,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCkptMagic, 4);
  write_u32(os, kCkptVersion);
  uint32_t count = static_cast<uint32_t>(model.params.count());
  for (const auto& p : model.params.all())
    if (adam.state().count(p.name)) count += 2;
  write_u32(os, count);
  for (const auto& p : model.params.all()) write_entry(os, p.name, p.value);
  for (const auto& p : model.params.all()) {
    auto it = adam.state().find(p.name);
    if (it == adam.state().end()) continue;
    write_entry(os, "adam_m/" + p.name, it->second.first);
    write_entry(os, "adam_v/" + p.name, it->second.second);
  }
  if (!os) throw IoError("write failed for checkpoint " + path.string());
  os.close();

  json j;
  j["format"] = "checkpoint";
  j["version"] = kCkptVersion;
  j["epoch"] = meta.epoch;
  j["adam_step"] = meta.adam_step;
  j["n_style_classes"] = meta.n_style_classes;
  j["train_identity_ids"] = meta.train_identity_ids;
  j["rng_state"] = meta.rng_state;
  j["model_config"] = model_cfg_json(meta.model_cfg);
  j["train_config"] = train_cfg_json(meta.train_cfg);
  const std::filesystem::path side = path.string() + ".json";
  std::ofstream js(side);
  if (!js) throw IoError("cannot write checkpoint sidecar " + side.string());
  js << j.dump(1) << '\n';
  if (!js) throw IoError("write failed for " + side.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::filesystem::path side = path.string() + ".json";
  const json j = load_json_file(side, "checkpoint sidecar");
  LoadedCheckpoint lc;
  try {
    lc.meta.epoch = j.at("epoch").get<int>();
    lc.meta.adam_step = j.at("adam_step").get<int64_t>();
    lc.meta.n_style_classes = j.at("n_style_classes").get<int>();
    lc.meta.train_identity_ids =
        j.at("train_identity_ids").get<std::vector<int>>();
    lc.meta.rng_state = j.at("rng_state").get<std::string>();
    lc.meta.model_cfg = model_cfg_from(j.at("model_config"));
    lc.meta.train_cfg = train_cfg_from(j.at("train_config"));
  } catch (const json::exception& e) {
    throw ParseError("bad checkpoint sidecar " + side.string() + ": " +
                     e.what());
  }

  lc.model = Model<float>::build(lc.meta.model_cfg, lc.meta.n_style_classes,
                                 lc.meta.train_cfg.seed);
  lc.adam = Adam(lc.meta.train_cfg.lr, lc.meta.train_cfg.beta1,
                 lc.meta.train_cfg.beta2, lc.meta.train_cfg.adam_eps);
  lc.adam.set_step_count(lc.meta.adam_step);

  std::set<std::string> seen;
  for (auto& [name, arr] : read_container(path)) {
    if (!seen.insert(name).second)
      throw ParseError("duplicate checkpoint tensor " + name);
    std::string target = name;
    int kind = 0;  // 0 = weight, 1 = adam m, 2 = adam v
    if (name.rfind("adam_m/", 0) == 0) {
      target = name.substr(7);
      kind = 1;
    } else if (name.rfind("adam_v/", 0) == 0) {
      target = name.substr(7);
      kind = 2;
    }
    ag::Param<float>* p = lc.model.params.find(target);
    if (!p) throw ParseError("checkpoint tensor " + name +
                             " does not match any model parameter");
    Eigen::MatrixXf m = ndarray_to_mat(arr, name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw ParseError("checkpoint tensor " + name + " has shape " +
                       std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + ", expected " +
                       std::to_string(p->value.rows()) + "x" +
                       std::to_string(p->value.cols()));
    if (kind == 0)
      p->value = m;
    else if (kind == 1)
      lc.adam.state()[target].first = m;
    else
      lc.adam.state()[target].second = m;
  }
  for (const auto& p : lc.model.params.all())
    if (!seen.count(p.name))
      throw ParseError("checkpoint is missing tensor " + p.name);
  return lc;
}

void load_pretrained_frontend(Model<float>& model,
                              const std::filesystem::path& path) {
  const std::string prefix = "audio_enc/frontend/";
  int copied = 0;
  for (auto& [name, arr] : read_container(path)) {
    if (name.rfind(prefix, 0) != 0) continue;
    ag::Param<float>* p = model.params.find(name);
    if (!p) throw ParseError("front-end tensor " + name +
                             " does not match any model parameter");
    Eigen::MatrixXf m = ndarray_to_mat(arr, name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw ParseError("front-end tensor " + name + " has wrong shape");
    p->value = m;
    ++copied;
  }
  if (copied == 0)
    throw ConfigError("no audio_enc/frontend tensors in " + path.string());
}

TrainResult train(const DatasetManifest& data, ModelConfig model_cfg,
                  const TrainConfig& train_cfg,
                  const std::filesystem::path& out_dir, std::ostream* console) {
  train_cfg.validate();
  if (model_cfg.vertices == 0)
    model_cfg.vertices = data.face_template.vertex_count();
  if (model_cfg.vertices != data.face_template.vertex_count())
    throw ConfigError("model vertices do not match the dataset template");
  if (std::abs(model_cfg.motion_rate - data.motion_rate) > 1e-6f ||
      std::abs(model_cfg.audio_rate - data.audio_rate) > 1e-6f)
    throw ConfigError("model rates do not match the dataset");
  model_cfg.validate();

  const std::vector<int> train_idx = data.sample_indices(Split::train);
  if (train_idx.empty()) throw ConfigError("dataset has no train samples");
  const std::vector<int> identities = data.train_identities();
  auto class_of = [&](int identity) {
    auto it = std::find(identities.begin(), identities.end(), identity);
    if (it == identities.end())
      throw ConfigError("train sample with identity outside train split");
    return static_cast<int>(it - identities.begin());
  };

  std::vector<Sample> cache;
  cache.reserve(train_idx.size());
  for (int i : train_idx) {
    Sample s = data.load_sample(i);
    if (s.motion.duration() < train_cfg.window_seconds - 1e-9)
      throw ConfigError("clip " + s.stem + " is shorter than the window");
    cache.push_back(std::move(s));
  }

  Model<float> model = Model<float>::build(
      model_cfg, static_cast<int>(identities.size()), train_cfg.seed);
  if (!model_cfg.pretrained_frontend.empty())
    load_pretrained_frontend(model, model_cfg.pretrained_frontend);
  const LossWeights<float> w = train_cfg.weights();
  Adam adam(train_cfg.lr, train_cfg.beta1, train_cfg.beta2,
            train_cfg.adam_eps);
  Rng rng(Rng::derive(train_cfg.seed, {0x7261117}));

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path log_path = out_dir / "train_log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path.string());

  TrainResult result;
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(cache.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    LossBreakdown sums;
    int batches = 0, cycle_batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(train_cfg.batch)) {
      const size_t n = std::min(static_cast<size_t>(train_cfg.batch),
                                order.size() - start);
      std::vector<BatchSample> batch;
      batch.reserve(n);
      for (size_t k = 0; k < n; ++k) {
        const Sample& s = cache[static_cast<size_t>(order[start + k])];
        const double max_off = s.motion.duration() - train_cfg.window_seconds;
        const double off = max_off <= 0 ? 0.0 : rng.uniform(0.0, max_off);
        Sample win = window(s, off, train_cfg.window_seconds);
        BatchSample bs;
        bs.motion = std::move(win.motion.frames);
        bs.wave = wave_to_matrix(win.waveform);
        bs.identity = s.identity_id;
        bs.class_index = class_of(s.identity_id);
        batch.push_back(std::move(bs));
      }
      LossBreakdown b;
      try {
        b = train_step(model, batch, w, adam, rng, train_cfg);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + ")");
      }
      sums.r += b.r;
      sums.s += b.s;
      sums.c += b.c;
      sums.con += b.con;
      sums.cycle_s += b.cycle_s;
      sums.cycle_c += b.cycle_c;
      sums.total += b.total;
      if (b.cycle_active) ++cycle_batches;
      ++batches;
    }

    LossBreakdown mean;
    if (batches > 0) {
      mean.r = sums.r / batches;
      mean.s = sums.s / batches;
      mean.c = sums.c / batches;
      mean.con = sums.con / batches;
      mean.cycle_s = sums.cycle_s / batches;
      mean.cycle_c = sums.cycle_c / batches;
      mean.total = sums.total / batches;
      mean.cycle_active = cycle_batches > 0;
    }
    nlohmann::ordered_json line;
    line["epoch"] = epoch;
    line["r"] = mean.r;
    line["s"] = mean.s;
    line["c"] = mean.c;
    line["con"] = mean.con;
    line["cycle_s"] = mean.cycle_s;
    line["cycle_c"] = mean.cycle_c;
    line["total"] = mean.total;
    line["cycle_batches"] = cycle_batches;
    log << line.dump() << '\n';
    log.flush();
    if (!log) throw IoError("write failed for " + log_path.string());

    if (console) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      (*console) << "epoch " << epoch << "/" << train_cfg.epochs
                 << "  total " << mean.total << "  r " << mean.r << "  ("
                 << secs << " s)\n";
      console->flush();
    }
    result.last_epoch = mean;

    if (train_cfg.checkpoint_every > 0 &&
        epoch % train_cfg.checkpoint_every == 0 && epoch != train_cfg.epochs) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "checkpoint_epoch%03d.mckp", epoch);
      CheckpointMeta meta{model_cfg, train_cfg,
                          static_cast<int>(identities.size()), identities,
                          epoch, adam.step_count(), rng.serialize()};
      save_checkpoint(out_dir / buf, model, adam, meta);
    }
  }

  CheckpointMeta meta{model_cfg,          train_cfg,
                      static_cast<int>(identities.size()),
                      identities,         train_cfg.epochs,
                      adam.step_count(),  rng.serialize()};
  const std::filesystem::path ckpt = out_dir / "checkpoint.mckp";
  save_checkpoint(ckpt, model, adam, meta);
  result.checkpoint_path = ckpt;
  result.log_path = log_path;
  result.epochs = train_cfg.epochs;
  return result;
}

}  // namespace stylemotion
