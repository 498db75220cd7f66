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

#ifndef STYLEMOTION_NN_HPP_
#define STYLEMOTION_NN_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "stylemotion/autograd.hpp"
#include "stylemotion/rng.hpp"

namespace stylemotion::nn {

using ag::Mat;
using ag::Param;
using ag::ParamStore;
using ag::Tape;
using ag::Var;

template <typename S>
Mat<S> xavier_uniform(int rows, int cols, Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / (rows + cols));
  Mat<S> m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = static_cast<S>(rng.uniform(-limit, limit));
  return m;
}

template <typename S>
Mat<S> sinusoidal_pe(int length, int dim) {
  Mat<S> pe(length, dim);
  for (int t = 0; t < length; ++t)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -2.0 * (i / 2) / dim);
      const double angle = t * freq;
      pe(t, i) = static_cast<S>((i % 2 == 0) ? std::sin(angle)
                                             : std::cos(angle));
    }
  return pe;
}

template <typename S>
struct Linear {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;

  static Linear create(ParamStore<S>& ps, const std::string& prefix, int in,
                       int out, Rng& rng, bool bias = true,
                       double gain = 1.0) {
    Linear l;
    l.w = &ps.add(prefix + "/w", xavier_uniform<S>(in, out, rng, gain));
    if (bias) l.b = &ps.add(prefix + "/b", Mat<S>::Zero(1, out));
    return l;
  }

  Var<S> apply(Tape<S>& t, Var<S> x) const {
    Var<S> y = t.matmul(x, t.leaf(*w));
    if (b) y = t.add_rowvec(y, t.leaf(*b));
    return y;
  }
};

template <typename S>
struct Conv1d {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;
  int kernel = 1, stride = 1, pad = 0;

  static Conv1d create(ParamStore<S>& ps, const std::string& prefix, int cin,
                       int cout, int kernel, int stride, int pad, Rng& rng) {
    Conv1d c;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    c.w = &ps.add(prefix + "/w", xavier_uniform<S>(cin * kernel, cout, rng));
    c.b = &ps.add(prefix + "/b", Mat<S>::Zero(1, cout));
    return c;
  }

  Var<S> apply(Tape<S>& t, Var<S> x) const {
    return t.conv1d(x, t.leaf(*w), t.leaf(*b), kernel, stride, pad);
  }

  int out_len(int in_len) const {
    return (in_len + 2 * pad - kernel) / stride + 1;
  }
};

template <typename S>
struct LayerNorm {
  Param<S>* g = nullptr;
  Param<S>* b = nullptr;
  S eps = S(1e-5);

  static LayerNorm create(ParamStore<S>& ps, const std::string& prefix,
                          int dim, S eps) {
    LayerNorm n;
    n.eps = eps;
    n.g = &ps.add(prefix + "/g", Mat<S>::Ones(1, dim));
    n.b = &ps.add(prefix + "/b", Mat<S>::Zero(1, dim));
    return n;
  }

  Var<S> apply(Tape<S>& t, Var<S> x) const {
    Var<S> y = t.layer_norm_rows(x, eps);
    return t.add_rowvec(t.mul_rowvec(y, t.leaf(*g)), t.leaf(*b));
  }
};

// Style-adaptive layer norm: standardize per frame, then scale and shift
// with gain g(s) and bias b(s) predicted from the style vector.
template <typename S>
struct Saln {
  Linear<S> gain;
  Linear<S> bias;
  S eps = S(1e-5);

  static Saln create(ParamStore<S>& ps, const std::string& prefix,
                     int d_style, int dim, S eps, Rng& rng) {
    Saln n;
    n.eps = eps;
    n.gain = Linear<S>::create(ps, prefix + "/gain", d_style, dim, rng, true,
                               0.1);
    n.bias = Linear<S>::create(ps, prefix + "/bias", d_style, dim, rng, true,
                               0.1);
    // Gain starts near one so early training behaves like plain layer norm.
    n.gain.b->value.setOnes();
    return n;
  }

  Var<S> apply(Tape<S>& t, Var<S> x, Var<S> style) const {
    Var<S> g = gain.apply(t, style);
    Var<S> b = bias.apply(t, style);
    Var<S> y = t.layer_norm_rows(x, eps);
    return t.add_rowvec(t.mul_rowvec(y, g), b);
  }
};

template <typename S>
struct Mha {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;
  int d_model = 0;

  static Mha create(ParamStore<S>& ps, const std::string& prefix, int d_model,
                    int heads, Rng& rng) {
    if (d_model % heads != 0)
      throw ConfigError("d_model must be divisible by heads");
    Mha m;
    m.heads = heads;
    m.d_model = d_model;
    m.wq = Linear<S>::create(ps, prefix + "/wq", d_model, d_model, rng);
    m.wk = Linear<S>::create(ps, prefix + "/wk", d_model, d_model, rng);
    m.wv = Linear<S>::create(ps, prefix + "/wv", d_model, d_model, rng);
    m.wo = Linear<S>::create(ps, prefix + "/wo", d_model, d_model, rng);
    return m;
  }

  Var<S> apply(Tape<S>& t, Var<S> q_in, Var<S> kv_in, bool causal) const {
    Var<S> q = wq.apply(t, q_in);
    Var<S> k = wk.apply(t, kv_in);
    Var<S> v = wv.apply(t, kv_in);
    const int dk = d_model / heads;
    const S sc = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
    std::vector<Var<S>> ctx;
    for (int h = 0; h < heads; ++h) {
      Var<S> qh = t.slice_cols(q, h * dk, dk);
      Var<S> kh = t.slice_cols(k, h * dk, dk);
      Var<S> vh = t.slice_cols(v, h * dk, dk);
      Var<S> scores = t.scale(t.matmul_nt(qh, kh), sc);
      Var<S> attn =
          causal ? t.softmax_rows_causal(scores) : t.softmax_rows(scores);
      ctx.push_back(t.matmul(attn, vh));
    }
    return wo.apply(t, t.concat_cols(ctx));
  }
};

// Pre-norm transformer encoder layer (bidirectional self-attention).
template <typename S>
struct EncoderLayer {
  LayerNorm<S> ln1, ln2;
  Mha<S> attn;
  Linear<S> ff1, ff2;

  static EncoderLayer create(ParamStore<S>& ps, const std::string& prefix,
                             int d_model, int heads, int ffn, S eps,
                             Rng& rng) {
    EncoderLayer l;
    l.ln1 = LayerNorm<S>::create(ps, prefix + "/ln1", d_model, eps);
    l.attn = Mha<S>::create(ps, prefix + "/attn", d_model, heads, rng);
    l.ln2 = LayerNorm<S>::create(ps, prefix + "/ln2", d_model, eps);
    l.ff1 = Linear<S>::create(ps, prefix + "/ff1", d_model, ffn, rng);
    l.ff2 = Linear<S>::create(ps, prefix + "/ff2", ffn, d_model, rng);
    return l;
  }

  Var<S> apply(Tape<S>& t, Var<S> x) const {
    Var<S> h = ln1.apply(t, x);
    x = t.add(x, attn.apply(t, h, h, false));
    Var<S> f = ff2.apply(t, t.gelu(ff1.apply(t, ln2.apply(t, x))));
    return t.add(x, f);
  }
};

// Pre-norm transformer decoder layer. All norms are style-adaptive, the
// self-attention is causal and the cross-attention is causal as well so
// output frame i only sees memory frames 0..i.
template <typename S>
struct DecoderLayer {
  Saln<S> sn1, sn2, sn3;
  Mha<S> self_attn, cross_attn;
  Linear<S> ff1, ff2;

  static DecoderLayer create(ParamStore<S>& ps, const std::string& prefix,
                             int d_style, int d_model, int heads, int ffn,
                             S eps, Rng& rng) {
    DecoderLayer l;
    l.sn1 = Saln<S>::create(ps, prefix + "/sn1", d_style, d_model, eps, rng);
    l.self_attn =
        Mha<S>::create(ps, prefix + "/self_attn", d_model, heads, rng);
    l.sn2 = Saln<S>::create(ps, prefix + "/sn2", d_style, d_model, eps, rng);
    l.cross_attn =
        Mha<S>::create(ps, prefix + "/cross_attn", d_model, heads, rng);
    l.sn3 = Saln<S>::create(ps, prefix + "/sn3", d_style, d_model, eps, rng);
    l.ff1 = Linear<S>::create(ps, prefix + "/ff1", d_model, ffn, rng);
    l.ff2 = Linear<S>::create(ps, prefix + "/ff2", ffn, d_model, rng);
    return l;
  }

  Var<S> apply(Tape<S>& t, Var<S> x, Var<S> memory, Var<S> style) const {
    Var<S> h = sn1.apply(t, x, style);
    x = t.add(x, self_attn.apply(t, h, h, true));
    x = t.add(x, cross_attn.apply(t, sn2.apply(t, x, style), memory, true));
    Var<S> f = ff2.apply(t, t.gelu(ff1.apply(t, sn3.apply(t, x, style))));
    return t.add(x, f);
  }
};

enum class TcnNorm { layer, instance };

// Stack of stride-1 same-padded temporal convolutions with norm + ReLU.
template <typename S>
struct TcnStack {
  std::vector<Conv1d<S>> convs;
  std::vector<LayerNorm<S>> norms;  // only populated for TcnNorm::layer
  TcnNorm norm = TcnNorm::layer;
  S eps = S(1e-5);

  static TcnStack create(ParamStore<S>& ps, const std::string& prefix,
                         int cin, int channels, int layers, int kernel,
                         TcnNorm norm, S eps, Rng& rng) {
    if (kernel % 2 == 0) throw ConfigError("tcn kernel must be odd");
    TcnStack s;
    s.norm = norm;
    s.eps = eps;
    for (int i = 0; i < layers; ++i) {
      const int in = i == 0 ? cin : channels;
      s.convs.push_back(Conv1d<S>::create(ps, prefix + "/conv" +
                                              std::to_string(i),
                                          in, channels, kernel, 1,
                                          (kernel - 1) / 2, rng));
      if (norm == TcnNorm::layer)
        s.norms.push_back(LayerNorm<S>::create(
            ps, prefix + "/ln" + std::to_string(i), channels, eps));
    }
    return s;
  }

  int receptive_field() const {
    int rf = 1;
    for (const auto& c : convs) rf += c.kernel - 1;
    return rf;
  }

  Var<S> apply(Tape<S>& t, Var<S> x) const {
    for (size_t i = 0; i < convs.size(); ++i) {
      x = convs[i].apply(t, x);
      x = norm == TcnNorm::layer ? norms[i].apply(t, x)
                                 : t.instance_norm_cols(x, eps);
      x = t.relu(x);
    }
    return x;
  }
};

}  // namespace stylemotion::nn

#endif  // STYLEMOTION_NN_HPP_
