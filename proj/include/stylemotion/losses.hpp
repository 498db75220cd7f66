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

#ifndef STYLEMOTION_LOSSES_HPP_
#define STYLEMOTION_LOSSES_HPP_

#include <numeric>
#include <utility>
#include <vector>

#include "stylemotion/model.hpp"

namespace stylemotion {

// Weights of the composite training objective plus the gradient-reversal
// strength and the contrastive direction mix.
template <typename S>
struct LossWeights {
  S r = 1;
  S s = 0;
  S c = 0;
  S con = 0;
  S cycle_s = 0;
  S cycle_c = 0;
  S grl = 1;
  S mix = S(0.5);

  // Full-scale preset.
  static LossWeights paper() {
    LossWeights w;
    w.r = 1;
    w.s = S(2.5e-7);
    w.c = S(5.0e-7);
    w.con = S(5.0e-7);
    w.cycle_s = S(2.5e-5);
    w.cycle_c = S(5.0e-6);
    return w;
  }

  // Desk-scale preset: auxiliary terms rescaled so they shape the latents
  // within a few hundred steps on the small synthetic corpus.
  static LossWeights desk() {
    LossWeights w;
    w.r = 1;
    w.s = S(0.1);
    w.c = S(0.1);
    w.con = S(0.1);
    w.cycle_s = S(0.05);
    w.cycle_c = S(0.05);
    return w;
  }

  static LossWeights preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw ConfigError("unknown preset: " + name);
  }
};

constexpr double kCosineEps = 1e-8;

// Sum of the two reconstruction MSEs (content-driven and audio-driven).
template <typename S>
ag::Var<S> regression_loss(ag::Tape<S>& t, ag::Var<S> m_content,
                           ag::Var<S> m_audio, ag::Var<S> gt) {
  return t.add(t.mse(m_content, gt), t.mse(m_audio, gt));
}

// Cross-entropy of the style classifier on a batch of style codes.
template <typename S>
ag::Var<S> style_class_loss(ag::Tape<S>& t, const Model<S>& m,
                            const std::vector<ag::Var<S>>& styles,
                            const std::vector<int>& labels) {
  return t.cross_entropy_rows(m.classify_style(t, t.concat_rows(styles)),
                              labels);
}

// Adversarial identity loss on temporally averaged content codes. The
// gradient-reversal layer makes the encoder erase identity while the
// classifier still learns to find it.
template <typename S>
ag::Var<S> content_adversarial_loss(ag::Tape<S>& t, const Model<S>& m,
                                    const std::vector<ag::Var<S>>& contents,
                                    const std::vector<int>& labels,
                                    S grl_lambda) {
  std::vector<ag::Var<S>> avgs;
  avgs.reserve(contents.size());
  for (ag::Var<S> c : contents) avgs.push_back(t.mean_rows(c));
  ag::Var<S> cbar = t.grl(t.concat_rows(avgs), grl_lambda);
  return t.cross_entropy_rows(m.classify_content(t, cbar), labels);
}

// Symmetric frame-wise contrastive loss between two projected sequences.
// Matching frames are positives, all other frames of the same sequence pair
// are negatives; similarities are cosines scaled by 1/tau.
template <typename S>
ag::Var<S> contrastive_pair_loss(ag::Tape<S>& t, ag::Var<S> first,
                                 ag::Var<S> second, ag::Var<S> tau, S mix) {
  const int T = static_cast<int>(t.val(first).rows());
  if (static_cast<int>(t.val(second).rows()) != T)
    throw ShapeError("contrastive sequences must have equal length");
  ag::Var<S> fn = t.normalize_rows(first, S(kCosineEps));
  ag::Var<S> sn = t.normalize_rows(second, S(kCosineEps));
  ag::Var<S> inv_tau = t.recip(tau);
  std::vector<int> diag(static_cast<size_t>(T));
  std::iota(diag.begin(), diag.end(), 0);
  ag::Var<S> l_fs =
      t.cross_entropy_rows(t.mul_scalarvar(t.matmul_nt(fn, sn), inv_tau), diag);
  ag::Var<S> l_sf =
      t.cross_entropy_rows(t.mul_scalarvar(t.matmul_nt(sn, fn), inv_tau), diag);
  return t.add(t.scale(l_fs, mix), t.scale(l_sf, S(1) - mix));
}

// Audio-content alignment: h_a(audio) vs h_c(content), mix * (a->c) +
// (1 - mix) * (c->a).
template <typename S>
ag::Var<S> content_audio_contrastive(ag::Tape<S>& t, const Model<S>& m,
                                     ag::Var<S> content, ag::Var<S> audio,
                                     S mix) {
  return contrastive_pair_loss(t, m.project_audio(t, audio),
                               m.project_content(t, content),
                               m.temperature(t), mix);
}

// Content cycle consistency: both the original and the cyclic content codes
// go through h_c, sharing the temperature.
template <typename S>
ag::Var<S> content_cycle_loss(ag::Tape<S>& t, const Model<S>& m,
                              ag::Var<S> content, ag::Var<S> content_cyclic,
                              S mix) {
  return contrastive_pair_loss(t, m.project_content(t, content),
                               m.project_content(t, content_cyclic),
                               m.temperature(t), mix);
}

// Mean over the batch of 1 - cos(switched style, re-extracted style).
template <typename S>
ag::Var<S> style_cycle_loss(
    ag::Tape<S>& t,
    const std::vector<std::pair<ag::Var<S>, ag::Var<S>>>& pairs) {
  if (pairs.empty()) throw ShapeError("style cycle loss needs pairs");
  ag::Var<S> acc;
  for (const auto& [s, s_hat] : pairs) {
    ag::Var<S> one_minus = t.add_scalar(
        t.scale(t.cosine_pair(s, s_hat, S(kCosineEps)), S(-1)), S(1));
    acc = acc.valid() ? t.add(acc, one_minus) : one_minus;
  }
  return t.scale(acc, S(1) / static_cast<S>(pairs.size()));
}

template <typename S>
struct LossTerms {
  ag::Var<S> r, s, c, con, cycle_s, cycle_c;
};

// Weighted sum; terms with zero weight are skipped entirely so their heads
// receive no gradient.
template <typename S>
ag::Var<S> total_loss(ag::Tape<S>& t, const LossTerms<S>& terms,
                      const LossWeights<S>& w) {
  ag::Var<S> total;
  auto accumulate = [&](ag::Var<S> term, S weight) {
    if (!term.valid() || weight == S(0)) return;
    ag::Var<S> scaled = t.scale(term, weight);
    total = total.valid() ? t.add(total, scaled) : scaled;
  };
  accumulate(terms.r, w.r);
  accumulate(terms.s, w.s);
  accumulate(terms.c, w.c);
  accumulate(terms.con, w.con);
  accumulate(terms.cycle_s, w.cycle_s);
  accumulate(terms.cycle_c, w.cycle_c);
  if (!total.valid()) throw ConfigError("all loss weights are zero");
  return total;
}

}  // namespace stylemotion

#endif  // STYLEMOTION_LOSSES_HPP_
