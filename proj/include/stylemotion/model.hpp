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

#ifndef STYLEMOTION_MODEL_HPP_
#define STYLEMOTION_MODEL_HPP_

#include <string>
#include <vector>

#include "stylemotion/nn.hpp"

namespace stylemotion {

// Architecture hyperparameters. The defaults are the desk-scale setup; the
// audio stack maps audio_rate to token_rate through strided convolutions,
// and the align convolution maps token_rate to motion_rate.
struct ModelConfig {
  int d_style = 64;
  int d_content = 64;
  int d_audio = 64;
  int d_model = 128;
  int layers = 2;
  int heads = 4;
  int ffn_mult = 2;
  int tcn_layers = 3;
  int tcn_kernel = 3;
  int tcn_channels = 128;
  int proj_dim = 64;  // contrastive projection width
  int vertices = 0;   // set from the dataset
  float motion_rate = 25.0f;
  float audio_rate = 1600.0f;
  float token_rate = 50.0f;
  int align_kernel = 2;
  int align_stride = 2;
  int align_pad = 0;
  std::vector<int> frontend_channels = {32, 64, 64, 128};
  std::vector<int> frontend_kernels = {8, 4, 4, 4};
  std::vector<int> frontend_strides = {4, 2, 2, 2};
  std::vector<int> frontend_pads = {2, 1, 1, 1};
  float norm_eps = 1e-5f;
  // Optional checkpoint whose audio_enc/frontend/* tensors seed the front
  // end before training (see load_pretrained_frontend).
  std::string pretrained_frontend;

  int ffn_dim() const { return d_model * ffn_mult; }
  void validate() const;
  // Motion frames produced from token_rate features of a given length.
  int aligned_frames(int token_frames) const;
  // token_rate feature count for a waveform length, after the front end.
  int token_frames(int samples) const;
  int frontend_receptive_field() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

inline void ModelConfig::validate() const {
  if (d_style < 1 || d_content < 1 || d_audio < 1 || d_model < 1 ||
      proj_dim < 1)
    throw ConfigError("latent widths must be positive");
  if (vertices < 1) throw ConfigError("vertices must be set from data");
  if (layers < 1 || heads < 1) throw ConfigError("bad transformer geometry");
  if (d_model % heads != 0)
    throw ConfigError("d_model must be divisible by heads");
  if (d_content != d_audio)
    throw ConfigError(
        "d_content must equal d_audio (decoder memory projection is shared)");
  if (tcn_layers < 1 || tcn_kernel < 1 || tcn_kernel % 2 == 0)
    throw ConfigError("tcn needs an odd kernel and >= 1 layer");
  const size_t n = frontend_channels.size();
  if (n == 0 || frontend_kernels.size() != n ||
      frontend_strides.size() != n || frontend_pads.size() != n)
    throw ConfigError("front-end layer lists must have equal length");
  if (motion_rate <= 0 || audio_rate <= 0 || token_rate <= 0)
    throw ConfigError("rates must be positive");

  // The strided front end must downsample audio_rate to token_rate exactly.
  double prod = 1;
  for (int s : frontend_strides) prod *= s;
  if (std::abs(audio_rate / token_rate - prod) > 1e-6)
    throw ConfigError("front-end stride product must equal audio/token rate");

  // The align convolution must turn L token-rate frames into
  // L * motion_rate / token_rate motion frames: for every L with an
  // integral target, floor((L + 2p - k) / s) + 1 == L * fm / fa.
  if (align_kernel < 1 || align_stride < 1 || align_pad < 0)
    throw ConfigError("bad align convolution geometry");
  for (int L = align_kernel; L <= 256 * align_stride; ++L) {
    const double target = L * static_cast<double>(motion_rate) / token_rate;
    if (std::abs(target - std::round(target)) > 1e-9) continue;
    const int got = (L + 2 * align_pad - align_kernel) / align_stride + 1;
    if (got != static_cast<int>(std::round(target)))
      throw ConfigError(
          "align convolution violates the length law at L=" +
          std::to_string(L) + ": floor((L+2p-k)/s)+1=" + std::to_string(got) +
          " but motion frames=" + std::to_string(target));
  }
}

inline int ModelConfig::aligned_frames(int token_frames) const {
  return (token_frames + 2 * align_pad - align_kernel) / align_stride + 1;
}

inline int ModelConfig::token_frames(int samples) const {
  int L = samples;
  for (size_t i = 0; i < frontend_channels.size(); ++i)
    L = (L + 2 * frontend_pads[i] - frontend_kernels[i]) /
            frontend_strides[i] +
        1;
  return L;
}

inline int ModelConfig::frontend_receptive_field() const {
  int rf = 1, prod = 1;
  for (size_t i = 0; i < frontend_channels.size(); ++i) {
    rf += (frontend_kernels[i] - 1) * prod;
    prod *= frontend_strides[i];
  }
  rf += (align_kernel - 1) * prod;
  return rf;
}

template <typename S>
struct StyleEncoder {
  nn::TcnStack<S> tcn;
  std::vector<nn::EncoderLayer<S>> layers;
  nn::LayerNorm<S> final_ln;
  nn::Linear<S> out;

  static StyleEncoder create(ag::ParamStore<S>& ps, const ModelConfig& c,
                             Rng& rng) {
    StyleEncoder e;
    e.tcn = nn::TcnStack<S>::create(ps, "style_enc/tcn", c.vertices * 3,
                                    c.tcn_channels, c.tcn_layers,
                                    c.tcn_kernel, nn::TcnNorm::layer,
                                    S(c.norm_eps), rng);
    for (int i = 0; i < c.layers; ++i)
      e.layers.push_back(nn::EncoderLayer<S>::create(
          ps, "style_enc/layer" + std::to_string(i), c.d_model, c.heads,
          c.ffn_dim(), S(c.norm_eps), rng));
    e.final_ln = nn::LayerNorm<S>::create(ps, "style_enc/final_ln", c.d_model,
                                          S(c.norm_eps));
    e.out = nn::Linear<S>::create(ps, "style_enc/out", c.d_model, c.d_style,
                                  rng);
    return e;
  }

  ag::Var<S> apply(ag::Tape<S>& t, ag::Var<S> motion) const {
    if (t.val(motion).rows() < tcn.receptive_field())
      throw ShapeError("motion too short for the style encoder");
    ag::Var<S> x = tcn.apply(t, motion);
    const int T = static_cast<int>(t.val(x).rows());
    x = t.add(x, t.constant(nn::sinusoidal_pe<S>(
                     T, static_cast<int>(t.val(x).cols()))));
    for (const auto& l : layers) x = l.apply(t, x);
    x = final_ln.apply(t, x);
    return out.apply(t, t.mean_rows(x));
  }
};

template <typename S>
struct ContentEncoder {
  nn::TcnStack<S> tcn;
  std::vector<nn::EncoderLayer<S>> layers;
  nn::LayerNorm<S> final_ln;
  nn::Linear<S> out;

  static ContentEncoder create(ag::ParamStore<S>& ps, const ModelConfig& c,
                               Rng& rng) {
    ContentEncoder e;
    // Instance norm strips per-clip channel statistics, which carry style.
    e.tcn = nn::TcnStack<S>::create(ps, "content_enc/tcn", c.vertices * 3,
                                    c.tcn_channels, c.tcn_layers,
                                    c.tcn_kernel, nn::TcnNorm::instance,
                                    S(c.norm_eps), rng);
    for (int i = 0; i < c.layers; ++i)
      e.layers.push_back(nn::EncoderLayer<S>::create(
          ps, "content_enc/layer" + std::to_string(i), c.d_model, c.heads,
          c.ffn_dim(), S(c.norm_eps), rng));
    e.final_ln = nn::LayerNorm<S>::create(ps, "content_enc/final_ln",
                                          c.d_model, S(c.norm_eps));
    e.out = nn::Linear<S>::create(ps, "content_enc/out", c.d_model,
                                  c.d_content, rng);
    return e;
  }

  ag::Var<S> apply(ag::Tape<S>& t, ag::Var<S> motion) const {
    if (t.val(motion).rows() < tcn.receptive_field())
      throw ShapeError("motion too short for the content encoder");
    ag::Var<S> x = tcn.apply(t, motion);
    const int T = static_cast<int>(t.val(x).rows());
    x = t.add(x, t.constant(nn::sinusoidal_pe<S>(
                     T, static_cast<int>(t.val(x).cols()))));
    for (const auto& l : layers) x = l.apply(t, x);
    x = final_ln.apply(t, x);
    return out.apply(t, x);
  }
};

template <typename S>
struct AudioEncoder {
  std::vector<nn::Conv1d<S>> fe_convs;
  std::vector<nn::LayerNorm<S>> fe_norms;
  nn::Conv1d<S> align;
  std::vector<nn::EncoderLayer<S>> layers;
  nn::LayerNorm<S> final_ln;
  nn::Linear<S> out;

  static AudioEncoder create(ag::ParamStore<S>& ps, const ModelConfig& c,
                             Rng& rng) {
    AudioEncoder e;
    int cin = 1;
    for (size_t i = 0; i < c.frontend_channels.size(); ++i) {
      e.fe_convs.push_back(nn::Conv1d<S>::create(
          ps, "audio_enc/frontend/conv" + std::to_string(i), cin,
          c.frontend_channels[i], c.frontend_kernels[i],
          c.frontend_strides[i], c.frontend_pads[i], rng));
      e.fe_norms.push_back(nn::LayerNorm<S>::create(
          ps, "audio_enc/frontend/ln" + std::to_string(i),
          c.frontend_channels[i], S(c.norm_eps)));
      cin = c.frontend_channels[i];
    }
    e.align = nn::Conv1d<S>::create(ps, "audio_enc/align", cin, c.d_model,
                                    c.align_kernel, c.align_stride,
                                    c.align_pad, rng);
    for (int i = 0; i < c.layers; ++i)
      e.layers.push_back(nn::EncoderLayer<S>::create(
          ps, "audio_enc/layer" + std::to_string(i), c.d_model, c.heads,
          c.ffn_dim(), S(c.norm_eps), rng));
    e.final_ln = nn::LayerNorm<S>::create(ps, "audio_enc/final_ln", c.d_model,
                                          S(c.norm_eps));
    e.out = nn::Linear<S>::create(ps, "audio_enc/out", c.d_model, c.d_audio,
                                  rng);
    return e;
  }

  // wave is N x 1 raw samples.
  ag::Var<S> apply(ag::Tape<S>& t, ag::Var<S> wave) const {
    ag::Var<S> x = wave;
    for (size_t i = 0; i < fe_convs.size(); ++i) {
      x = fe_convs[i].apply(t, x);
      x = fe_norms[i].apply(t, x);
      x = t.gelu(x);
    }
    x = align.apply(t, x);
    const int T = static_cast<int>(t.val(x).rows());
    x = t.add(x, t.constant(nn::sinusoidal_pe<S>(
                     T, static_cast<int>(t.val(x).cols()))));
    for (const auto& l : layers) x = l.apply(t, x);
    x = final_ln.apply(t, x);
    return out.apply(t, x);
  }
};

// Autoregressive motion decoder conditioned on a style vector through
// style-adaptive norms and on content/audio features through causal
// cross-attention.
template <typename S>
struct MotionDecoder {
  nn::Linear<S> embed;
  ag::Param<S>* start = nullptr;
  nn::Linear<S> kv_proj;
  std::vector<nn::DecoderLayer<S>> layers;
  nn::Saln<S> final_norm;
  nn::Linear<S> head;

  static MotionDecoder create(ag::ParamStore<S>& ps, const ModelConfig& c,
                              Rng& rng) {
    MotionDecoder d;
    d.embed = nn::Linear<S>::create(ps, "decoder/embed", c.vertices * 3,
                                    c.d_model, rng);
    d.start = &ps.add("decoder/start",
                      nn::xavier_uniform<S>(1, c.d_model, rng));
    d.kv_proj = nn::Linear<S>::create(ps, "decoder/kv_proj", c.d_content,
                                      c.d_model, rng);
    for (int i = 0; i < c.layers; ++i)
      d.layers.push_back(nn::DecoderLayer<S>::create(
          ps, "decoder/layer" + std::to_string(i), c.d_style, c.d_model,
          c.heads, c.ffn_dim(), S(c.norm_eps), rng));
    d.final_norm = nn::Saln<S>::create(ps, "decoder/final_norm", c.d_style,
                                       c.d_model, S(c.norm_eps), rng);
    d.head = nn::Linear<S>::create(ps, "decoder/head", c.d_model,
                                   c.vertices * 3, rng);
    return d;
  }

  // Predicts frame t from ground-truth frames < t (shifted right, with a
  // learned start token at position 0).
  ag::Var<S> teacher_forced(ag::Tape<S>& t, ag::Var<S> style, ag::Var<S> kv,
                            ag::Var<S> gt) const {
    const int T = static_cast<int>(t.val(gt).rows());
    if (t.val(kv).rows() != T)
      throw ShapeError("decoder memory length must match motion length");
    ag::Var<S> shifted = t.slice_rows(gt, 0, T - 1);
    ag::Var<S> x = t.concat_rows({t.leaf(*start), embed.apply(t, shifted)});
    x = t.add(x, t.constant(nn::sinusoidal_pe<S>(
                     T, static_cast<int>(t.val(x).cols()))));
    ag::Var<S> memory = kv_proj.apply(t, kv);
    for (const auto& l : layers) x = l.apply(t, x, memory, style);
    x = final_norm.apply(t, x, style);
    return head.apply(t, x);
  }
};

// Full model: three encoders, the shared decoder, classification heads used
// by the disentanglement losses, contrastive projections and temperature.
template <typename S>
struct Model {
  ModelConfig cfg;
  int n_style_classes = 0;
  ag::ParamStore<S> params;
  StyleEncoder<S> style_enc;
  ContentEncoder<S> content_enc;
  AudioEncoder<S> audio_enc;
  MotionDecoder<S> decoder;
  nn::Linear<S> cls_style;    // style code -> identity logits
  nn::Linear<S> cls_content;  // averaged content code -> identity logits
  nn::Linear<S> proj_audio;   // h_a
  nn::Linear<S> proj_content; // h_c
  ag::Param<S>* log_tau = nullptr;

  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  static Model build(const ModelConfig& cfg, int n_style_classes,
                     uint64_t seed) {
    cfg.validate();
    if (n_style_classes < 1)
      throw ConfigError("need at least one style class");
    Model m;
    m.cfg = cfg;
    m.n_style_classes = n_style_classes;
    Rng rng(Rng::derive(seed, {0x11117}));
    m.style_enc = StyleEncoder<S>::create(m.params, cfg, rng);
    m.content_enc = ContentEncoder<S>::create(m.params, cfg, rng);
    m.audio_enc = AudioEncoder<S>::create(m.params, cfg, rng);
    m.decoder = MotionDecoder<S>::create(m.params, cfg, rng);
    m.cls_style = nn::Linear<S>::create(m.params, "heads/cls_style",
                                        cfg.d_style, n_style_classes, rng);
    m.cls_content = nn::Linear<S>::create(m.params, "heads/cls_content",
                                          cfg.d_content, n_style_classes,
                                          rng);
    m.proj_audio = nn::Linear<S>::create(m.params, "heads/proj_audio",
                                         cfg.d_audio, cfg.proj_dim, rng);
    m.proj_content = nn::Linear<S>::create(m.params, "heads/proj_content",
                                           cfg.d_content, cfg.proj_dim, rng);
    ag::Mat<S> lt(1, 1);
    lt(0, 0) = static_cast<S>(std::log(0.07));
    m.log_tau = &m.params.add("heads/log_tau", lt);
    return m;
  }

  ag::Var<S> style_encode(ag::Tape<S>& t, ag::Var<S> motion) const {
    return style_enc.apply(t, motion);
  }
  ag::Var<S> content_encode(ag::Tape<S>& t, ag::Var<S> motion) const {
    return content_enc.apply(t, motion);
  }
  ag::Var<S> audio_encode(ag::Tape<S>& t, ag::Var<S> wave) const {
    return audio_enc.apply(t, wave);
  }
  ag::Var<S> decode_teacher_forced(ag::Tape<S>& t, ag::Var<S> style,
                                   ag::Var<S> kv, ag::Var<S> gt) const {
    return decoder.teacher_forced(t, style, kv, gt);
  }

  ag::Var<S> classify_style(ag::Tape<S>& t, ag::Var<S> s) const {
    return cls_style.apply(t, s);
  }
  ag::Var<S> classify_content(ag::Tape<S>& t, ag::Var<S> cbar) const {
    return cls_content.apply(t, cbar);
  }
  ag::Var<S> project_audio(ag::Tape<S>& t, ag::Var<S> a) const {
    return proj_audio.apply(t, a);
  }
  ag::Var<S> project_content(ag::Tape<S>& t, ag::Var<S> c) const {
    return proj_content.apply(t, c);
  }
  // Learnable softmax temperature, clamped to [0.01, 1].
  ag::Var<S> temperature(ag::Tape<S>& t) const {
    return t.clamp(t.exp_op(t.leaf(*log_tau)), S(0.01), S(1));
  }

  // ------------------------------------------------- forward-only helpers

  ag::Mat<S> style_encode(const ag::Mat<S>& motion) const {
    ag::Tape<S> t(false);
    return t.val(style_encode(t, t.constant(motion)));
  }
  ag::Mat<S> content_encode(const ag::Mat<S>& motion) const {
    ag::Tape<S> t(false);
    return t.val(content_encode(t, t.constant(motion)));
  }
  ag::Mat<S> audio_encode(const ag::Mat<S>& wave) const {
    ag::Tape<S> t(false);
    return t.val(audio_encode(t, t.constant(wave)));
  }
  ag::Mat<S> decode_teacher_forced_fwd(const ag::Mat<S>& style,
                                       const ag::Mat<S>& kv,
                                       const ag::Mat<S>& gt) const {
    ag::Tape<S> t(false);
    return t.val(decode_teacher_forced(t, t.constant(style), t.constant(kv),
                                       t.constant(gt)));
  }

  // Autoregressive decoding by iterated teacher forcing on the model's own
  // outputs: pass i fills frame i, and because frame i never attends to
  // frames > i the already-fixed prefix is reproduced bit-for-bit. The
  // result is therefore an exact fixed point of the teacher-forced pass.
  ag::Mat<S> decode_autoregressive(const ag::Mat<S>& style,
                                   const ag::Mat<S>& kv) const {
    const int T = static_cast<int>(kv.rows());
    ag::Mat<S> out = ag::Mat<S>::Zero(T, cfg.vertices * 3);
    for (int i = 0; i < T; ++i) {
      ag::Mat<S> pass = decode_teacher_forced_fwd(style, kv, out);
      out.row(i) = pass.row(i);
    }
    return out;
  }
};

}  // namespace stylemotion

#endif  // STYLEMOTION_MODEL_HPP_
