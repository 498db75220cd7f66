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

#include "stylemotion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "stylemotion/error.hpp"

namespace stylemotion {

namespace {

using nlohmann::json;

void check_pair(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("metric inputs must have equal shape");
  if (pred.rows() == 0) throw ShapeError("metric inputs are empty");
  if (pred.cols() % 3 != 0)
    throw ShapeError("frame matrices must have 3V columns");
}

void check_lip(const std::vector<int>& lip_mask, int vertices) {
  if (lip_mask.empty()) throw ConfigError("empty lip mask");
  for (int v : lip_mask)
    if (v < 0 || v >= vertices)
      throw ConfigError("lip mask index out of range");
}

// Temporal std (population) of per-vertex displacement magnitude.
double magnitude_std(const Eigen::MatrixXf& frames, int v) {
  const int T = static_cast<int>(frames.rows());
  double mean = 0;
  std::vector<double> mag(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    mag[static_cast<size_t>(t)] = frames.block<1, 3>(t, 3 * v).norm();
    mean += mag[static_cast<size_t>(t)];
  }
  mean /= T;
  double var = 0;
  for (double m : mag) var += (m - mean) * (m - mean);
  return std::sqrt(var / T);
}

std::vector<double> ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

json path_json(const PathMetrics& p) {
  json j;
  j["fve"] = p.fve;
  j["lve"] = p.lve;
  j["ldtw"] = p.ldtw;
  j["ldd"] = p.ldd;
  j["scs"] = p.scs;
  return j;
}

}  // namespace

Eigen::MatrixXf select_lip(const Eigen::MatrixXf& frames,
                           const std::vector<int>& lip_mask) {
  check_lip(lip_mask, static_cast<int>(frames.cols()) / 3);
  Eigen::MatrixXf out(frames.rows(), 3 * static_cast<int>(lip_mask.size()));
  for (size_t i = 0; i < lip_mask.size(); ++i)
    out.middleCols(3 * static_cast<int>(i), 3) =
        frames.middleCols(3 * lip_mask[i], 3);
  return out;
}

double fve(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt) {
  check_pair(pred, gt);
  const int T = static_cast<int>(pred.rows());
  const int V = static_cast<int>(pred.cols()) / 3;
  double acc = 0;
  for (int t = 0; t < T; ++t)
    for (int v = 0; v < V; ++v)
      acc += (pred.block<1, 3>(t, 3 * v) - gt.block<1, 3>(t, 3 * v)).norm();
  return acc / (static_cast<double>(T) * V);
}

double lve(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt,
           const std::vector<int>& lip_mask) {
  check_pair(pred, gt);
  check_lip(lip_mask, static_cast<int>(pred.cols()) / 3);
  const int T = static_cast<int>(pred.rows());
  double acc = 0;
  for (int t = 0; t < T; ++t) {
    double worst = 0;
    for (int v : lip_mask)
      worst = std::max(
          worst,
          static_cast<double>(
              (pred.block<1, 3>(t, 3 * v) - gt.block<1, 3>(t, 3 * v)).norm()));
    acc += worst;
  }
  return acc / T;
}

double dtw_distance(const Eigen::MatrixXf& x, const Eigen::MatrixXf& y) {
  if (x.rows() == 0 || y.rows() == 0)
    throw ShapeError("dtw inputs must be non-empty");
  if (x.cols() != y.cols())
    throw ShapeError("dtw inputs must have equal feature width");
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(y.rows());
  using Cell = std::pair<double, long long>;  // (cost, path nodes)
  std::vector<Cell> prev(static_cast<size_t>(m)), cur(static_cast<size_t>(m));
  const Cell inf{std::numeric_limits<double>::infinity(),
                 std::numeric_limits<long long>::max()};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double d = (x.row(i) - y.row(j)).norm();
      Cell best = inf;
      if (i == 0 && j == 0) {
        best = {0.0, 0};
      } else {
        if (i > 0) best = std::min(best, prev[static_cast<size_t>(j)]);
        if (j > 0) best = std::min(best, cur[static_cast<size_t>(j - 1)]);
        if (i > 0 && j > 0)
          best = std::min(best, prev[static_cast<size_t>(j - 1)]);
      }
      cur[static_cast<size_t>(j)] = {best.first + d, best.second + 1};
    }
    std::swap(prev, cur);
  }
  const Cell& end = prev[static_cast<size_t>(m - 1)];
  return end.first / static_cast<double>(end.second);
}

double ldtw(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt,
            const std::vector<int>& lip_mask) {
  check_pair(pred, gt);
  return dtw_distance(select_lip(pred, lip_mask), select_lip(gt, lip_mask));
}

double ldd(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& gt,
           const std::vector<int>& lip_mask) {
  check_pair(pred, gt);
  check_lip(lip_mask, static_cast<int>(pred.cols()) / 3);
  double acc = 0;
  for (int v : lip_mask)
    acc += std::abs(magnitude_std(pred, v) - magnitude_std(gt, v));
  return acc / static_cast<double>(lip_mask.size());
}

double silhouette(const Eigen::MatrixXf& points,
                  const std::vector<int>& labels) {
  const int n = static_cast<int>(points.rows());
  if (n != static_cast<int>(labels.size()))
    throw ShapeError("silhouette needs one label per point");
  std::map<int, std::vector<int>> clusters;
  for (int i = 0; i < n; ++i) clusters[labels[static_cast<size_t>(i)]].push_back(i);
  if (clusters.size() < 2)
    throw ConfigError("silhouette needs at least two clusters");
  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      dist(i, j) = (points.row(i) - points.row(j)).norm();
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    const auto& own = clusters[labels[static_cast<size_t>(i)]];
    if (own.size() < 2) continue;  // singleton clusters score 0
    double a = 0;
    for (int j : own)
      if (j != i) a += dist(i, j);
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, members] : clusters) {
      if (label == labels[static_cast<size_t>(i)]) continue;
      double m = 0;
      for (int j : members) m += dist(i, j);
      b = std::min(b, m / static_cast<double>(members.size()));
    }
    const double denom = std::max(a, b);
    if (denom > 0) acc += (b - a) / denom;
  }
  return acc / n;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ConfigError("spearman needs two equal series of length >= 2");
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0 || vb <= 0) return 0;
  return cov / std::sqrt(va * vb);
}

Eigen::MatrixXf pca2(const Eigen::MatrixXf& rows) {
  const int n = static_cast<int>(rows.rows());
  const int d = static_cast<int>(rows.cols());
  if (n < 2 || d < 2) throw ShapeError("pca2 needs at least 2x2 input");
  Eigen::MatrixXd x = rows.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca decomposition failed");
  Eigen::MatrixXd basis(d, 2);
  basis.col(0) = es.eigenvectors().col(d - 1);  // eigenvalues ascend
  basis.col(1) = es.eigenvectors().col(d - 2);
  for (int c = 0; c < 2; ++c) {
    int arg = 0;
    basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, c) < 0) basis.col(c) = -basis.col(c);
  }
  return (x * basis).cast<float>();
}

// ------------------------------------------------------------------ probe

StyleProbe StyleProbe::train(const DatasetManifest& data,
                             const StyleProbeConfig& cfg,
                             std::ostream* console) {
  StyleProbe p;
  p.cfg = cfg;
  p.class_identities = data.train_identities();
  const int classes = static_cast<int>(p.class_identities.size());
  if (classes < 2) throw ConfigError("style probe needs >= 2 train identities");

  Rng rng(Rng::derive(cfg.seed, {0x5b0be}));
  const int in_dim = data.face_template.vertex_count() * 3;
  p.tcn = nn::TcnStack<float>::create(p.params, "probe/tcn", in_dim,
                                      cfg.channels, cfg.tcn_layers,
                                      cfg.tcn_kernel, nn::TcnNorm::layer,
                                      1e-5f, rng);
  p.layer = nn::EncoderLayer<float>::create(p.params, "probe/layer",
                                            cfg.channels, cfg.heads, cfg.ffn,
                                            1e-5f, rng);
  p.final_ln = nn::LayerNorm<float>::create(p.params, "probe/final_ln",
                                            cfg.channels, 1e-5f);
  p.head = nn::Linear<float>::create(p.params, "probe/head", cfg.channels,
                                     classes, rng);

  const std::vector<int> idx = data.sample_indices(Split::train);
  std::vector<Eigen::MatrixXf> motions;
  std::vector<int> labels;
  for (int i : idx) {
    Sample s = data.load_sample(i);
    auto it = std::find(p.class_identities.begin(), p.class_identities.end(),
                        s.identity_id);
    labels.push_back(static_cast<int>(it - p.class_identities.begin()));
    motions.push_back(std::move(s.motion.frames));
  }

  Adam adam(cfg.lr, 0.9, 0.999, 1e-8);
  std::vector<int> order(motions.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch)) {
      const size_t n =
          std::min(static_cast<size_t>(cfg.batch), order.size() - start);
      ag::Tape<float> t(true);
      std::vector<ag::Var<float>> pooled;
      std::vector<int> batch_labels;
      for (size_t k = 0; k < n; ++k) {
        const int s = order[start + k];
        ag::Var<float> x = t.constant(motions[static_cast<size_t>(s)]);
        x = p.tcn.apply(t, x);
        const int T = static_cast<int>(t.val(x).rows());
        x = t.add(x, t.constant(nn::sinusoidal_pe<float>(T, cfg.channels)));
        x = p.layer.apply(t, x);
        x = p.final_ln.apply(t, x);
        pooled.push_back(t.mean_rows(x));
        batch_labels.push_back(labels[static_cast<size_t>(s)]);
      }
      ag::Var<float> logits = p.head.apply(t, t.concat_rows(pooled));
      ag::Var<float> loss = t.cross_entropy_rows(logits, batch_labels);
      sum += t.val(loss)(0, 0);
      ++batches;
      p.params.zero_grad();
      t.backward(loss);
      adam.step(p.params);
    }
    if (console)
      (*console) << "probe epoch " << epoch << "/" << cfg.epochs << "  ce "
                 << (batches ? sum / batches : 0.0) << "\n";
  }
  return p;
}

Eigen::VectorXf StyleProbe::embed(const Eigen::MatrixXf& motion) const {
  ag::Tape<float> t(false);
  ag::Var<float> x = t.constant(motion);
  x = tcn.apply(t, x);
  const int T = static_cast<int>(t.val(x).rows());
  x = t.add(x, t.constant(nn::sinusoidal_pe<float>(T, cfg.channels)));
  x = layer.apply(t, x);
  x = final_ln.apply(t, x);
  return t.val(t.mean_rows(x)).row(0).transpose();
}

int StyleProbe::classify(const Eigen::MatrixXf& motion) const {
  const Eigen::VectorXf e = embed(motion);
  ag::Tape<float> t(false);
  const Eigen::MatrixXf logits =
      t.val(head.apply(t, t.constant(e.transpose())));
  int arg = 0;
  logits.row(0).maxCoeff(&arg);
  return arg;
}

double StyleProbe::accuracy(const DatasetManifest& data, Split split) const {
  const std::vector<int> idx = data.sample_indices(split);
  if (idx.empty()) throw ConfigError("split has no samples");
  int hits = 0;
  for (int i : idx) {
    Sample s = data.load_sample(i);
    auto it = std::find(class_identities.begin(), class_identities.end(),
                        s.identity_id);
    if (it == class_identities.end())
      throw ConfigError("probe accuracy asked on an identity outside train");
    if (classify(s.motion.frames) ==
        static_cast<int>(it - class_identities.begin()))
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double scs(const StyleProbe& probe, const Eigen::MatrixXf& pred,
           const Eigen::MatrixXf& gt) {
  const Eigen::VectorXf a = probe.embed(pred);
  const Eigen::VectorXf b = probe.embed(gt);
  const double denom = std::max(static_cast<double>(a.norm()) * b.norm(), 1e-12);
  return a.dot(b) / denom;
}

// ----------------------------------------------------------- linear probes

LinearProbeResult train_linear_probe(const Eigen::MatrixXf& x_train,
                                     const std::vector<int>& y_train,
                                     const Eigen::MatrixXf& x_eval,
                                     const std::vector<int>& y_eval,
                                     int classes, uint64_t seed, int iters,
                                     double lr) {
  if (x_train.rows() == 0 || x_train.rows() != static_cast<Eigen::Index>(y_train.size()))
    throw ShapeError("probe training data and labels disagree");
  if (x_eval.rows() != static_cast<Eigen::Index>(y_eval.size()))
    throw ShapeError("probe eval data and labels disagree");
  // Standardize per dimension (fit on train) so the fixed-step probe
  // converges regardless of the scale of the codes it is probing.
  const Eigen::RowVectorXf mu = x_train.colwise().mean();
  const Eigen::RowVectorXf sd =
      ((x_train.rowwise() - mu).array().square().colwise().mean().sqrt() +
       1e-6f)
          .matrix();
  const Eigen::MatrixXf x_tr =
      (x_train.rowwise() - mu).array().rowwise() / sd.array();
  const Eigen::MatrixXf x_ev =
      x_eval.rows() > 0
          ? Eigen::MatrixXf(
                (x_eval.rowwise() - mu).array().rowwise() / sd.array())
          : x_eval;
  ag::ParamStore<float> ps;
  Rng rng(Rng::derive(seed, {0x11bea}));
  nn::Linear<float> lin = nn::Linear<float>::create(
      ps, "linear_probe", static_cast<int>(x_train.cols()), classes, rng);
  Adam adam(lr, 0.9, 0.999, 1e-8);
  for (int it = 0; it < iters; ++it) {
    ag::Tape<float> t(true);
    ag::Var<float> loss =
        t.cross_entropy_rows(lin.apply(t, t.constant(x_train)), y_train);
    ps.zero_grad();
    t.backward(loss);
    adam.step(ps);
  }
  auto acc = [&](const Eigen::MatrixXf& x, const std::vector<int>& y) {
    if (x.rows() == 0) return 0.0;
    ag::Tape<float> t(false);
    const Eigen::MatrixXf logits = t.val(lin.apply(t, t.constant(x)));
    int hits = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      int arg = 0;
      logits.row(i).maxCoeff(&arg);
      if (arg == y[static_cast<size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
  };
  LinearProbeResult r;
  r.train_acc = acc(x_train, y_train);
  r.eval_acc = acc(x_eval, y_eval);
  return r;
}

namespace {

struct LatentBundle {
  std::vector<Eigen::RowVectorXf> styles;
  std::vector<Eigen::RowVectorXf> content_means;
  std::vector<Eigen::MatrixXf> content_frames;
  std::vector<int> identity_class;
  std::vector<int> frame_tokens;

  Eigen::MatrixXf style_matrix() const { return stack_rows(styles); }
  Eigen::MatrixXf content_mean_matrix() const {
    return stack_rows(content_means);
  }
  Eigen::MatrixXf frame_matrix() const {
    Eigen::Index total = 0;
    for (const auto& f : content_frames) total += f.rows();
    if (total == 0) return Eigen::MatrixXf();
    Eigen::MatrixXf m(total, content_frames.front().cols());
    Eigen::Index at = 0;
    for (const auto& f : content_frames) {
      m.middleRows(at, f.rows()) = f;
      at += f.rows();
    }
    return m;
  }
  std::vector<int> clip_labels_per_frame() const {
    std::vector<int> out;
    for (size_t k = 0; k < content_frames.size(); ++k)
      out.insert(out.end(), static_cast<size_t>(content_frames[k].rows()),
                 identity_class[k]);
    return out;
  }

 private:
  static Eigen::MatrixXf stack_rows(const std::vector<Eigen::RowVectorXf>& v) {
    if (v.empty()) return Eigen::MatrixXf();
    Eigen::MatrixXf m(static_cast<Eigen::Index>(v.size()), v.front().size());
    for (size_t i = 0; i < v.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = v[i];
    return m;
  }
};

}  // namespace

// Probe split: every identity in the dataset is a class. Held-out clips are
// the test_seen clips; identities without any (the unseen speakers) hold out
// their lexicographically last clips, matching the per-identity held-out
// count of the seen speakers.
ProbeReport probe_disentanglement(const Model<float>& model,
                                  const DatasetManifest& data, uint64_t seed,
                                  std::ostream* console) {
  std::map<int, std::vector<int>> by_identity;
  for (size_t i = 0; i < data.samples.size(); ++i)
    by_identity[data.samples[i].identity_id].push_back(static_cast<int>(i));
  if (by_identity.size() < 2)
    throw ConfigError("disentanglement probes need >= 2 identities");

  int heldout = 0;
  size_t min_clips = std::numeric_limits<size_t>::max();
  for (auto& [id, v] : by_identity) {
    std::sort(v.begin(), v.end(), [&](int a, int b) {
      return data.samples[static_cast<size_t>(a)].stem <
             data.samples[static_cast<size_t>(b)].stem;
    });
    min_clips = std::min(min_clips, v.size());
    int n = 0;
    for (int i : v)
      if (data.samples[static_cast<size_t>(i)].split == Split::test_seen) ++n;
    heldout = std::max(heldout, n);
  }
  if (heldout == 0)
    heldout = std::max<int>(1, static_cast<int>(min_clips) / 10);
  if (static_cast<size_t>(heldout) >= min_clips)
    throw ConfigError("not enough clips per identity for a probe split");

  std::vector<int> classes;
  for (const auto& [id, v] : by_identity) classes.push_back(id);

  LatentBundle tr, ev;
  for (const auto& [id, v] : by_identity) {
    const int cls = static_cast<int>(
        std::find(classes.begin(), classes.end(), id) - classes.begin());
    int seen_count = 0;
    for (int i : v)
      if (data.samples[static_cast<size_t>(i)].split == Split::test_seen)
        ++seen_count;
    for (size_t k = 0; k < v.size(); ++k) {
      const SampleEntry& entry = data.samples[static_cast<size_t>(v[k])];
      const bool held =
          seen_count > 0 ? entry.split == Split::test_seen
                         : k + static_cast<size_t>(heldout) >= v.size();
      LatentBundle& dst = held ? ev : tr;
      Sample s = data.load_sample(v[k]);
      if (!s.script)
        throw ConfigError("token probe needs scripts for every clip");
      dst.styles.push_back(model.style_encode(s.motion.frames).row(0));
      const Eigen::MatrixXf c = model.content_encode(s.motion.frames);
      dst.content_means.push_back(c.colwise().mean());
      dst.identity_class.push_back(cls);
      for (int f = 0; f < static_cast<int>(c.rows()); ++f) {
        const int tok = s.script->token_at(f);
        if (tok < 0) throw ConfigError("script does not cover frame");
        dst.frame_tokens.push_back(tok);
      }
      dst.content_frames.push_back(c);
    }
  }

  ProbeReport r;
  r.style_identity_acc =
      train_linear_probe(tr.style_matrix(), tr.identity_class,
                         ev.style_matrix(), ev.identity_class,
                         static_cast<int>(classes.size()), seed)
          .eval_acc;
  r.content_identity_acc =
      train_linear_probe(tr.content_mean_matrix(), tr.identity_class,
                         ev.content_mean_matrix(), ev.identity_class,
                         static_cast<int>(classes.size()), seed + 1)
          .eval_acc;
  r.content_token_acc =
      train_linear_probe(tr.frame_matrix(), tr.frame_tokens, ev.frame_matrix(),
                         ev.frame_tokens, data.token_count, seed + 2)
          .eval_acc;
  if (console)
    (*console) << "probes: style->id " << r.style_identity_acc
               << "  content->id " << r.content_identity_acc
               << "  content->token " << r.content_token_acc << "\n";
  return r;
}

// -------------------------------------------------------------- evaluation

std::string EvalReport::to_json() const {
  json j;
  j["split"] = split;
  j["clips"] = clips;
  j["content"] = path_json(content_mean);
  j["audio"] = path_json(audio_mean);
  if (style_probe_acc_gt >= 0) j["style_probe_acc_gt"] = style_probe_acc_gt;
  if (has_probes) {
    json p;
    p["style_identity_acc"] = probes.style_identity_acc;
    p["content_identity_acc"] = probes.content_identity_acc;
    p["content_token_acc"] = probes.content_token_acc;
    j["probes"] = p;
  }
  j["per_clip"] = json::array();
  for (const auto& c : per_clip) {
    json e;
    e["stem"] = c.stem;
    e["identity"] = c.identity;
    e["content"] = path_json(c.content);
    e["audio"] = path_json(c.audio);
    j["per_clip"].push_back(e);
  }
  return j.dump(1);
}

EvalReport evaluate(const Model<float>& model, const DatasetManifest& data,
                    Split split, const StyleProbe* probe, bool with_probes,
                    uint64_t seed, std::ostream* console) {
  const std::vector<int> idx = data.sample_indices(split);
  if (idx.empty()) throw ConfigError("split has no samples");

  // Reference clip for each sample: next clip of the same identity, cyclic.
  std::map<int, std::vector<int>> by_identity;
  for (int i : idx) by_identity[data.samples[static_cast<size_t>(i)].identity_id].push_back(i);
  for (auto& [id, v] : by_identity) {
    if (v.size() < 2)
      throw ConfigError("identity " + std::to_string(id) +
                        " needs >= 2 clips in the split for style references");
    std::sort(v.begin(), v.end(), [&](int a, int b) {
      return data.samples[static_cast<size_t>(a)].stem <
             data.samples[static_cast<size_t>(b)].stem;
    });
  }
  std::map<int, int> ref_of;
  for (const auto& [id, v] : by_identity)
    for (size_t k = 0; k < v.size(); ++k)
      ref_of[v[k]] = v[(k + 1) % v.size()];

  EvalReport rep;
  rep.split = split_name(split);
  PathMetrics csum, asum;
  for (int i : idx) {
    Sample s = data.load_sample(i);
    Sample ref = data.load_sample(ref_of.at(i));
    const Eigen::MatrixXf style = model.style_encode(ref.motion.frames);
    const Eigen::MatrixXf& gt = s.motion.frames;
    const int T = static_cast<int>(gt.rows());

    const Eigen::MatrixXf content = model.content_encode(gt);
    const Eigen::MatrixXf pred_c = model.decode_autoregressive(style, content);

    const Eigen::MatrixXf audio =
        model.audio_encode(wave_to_matrix(s.waveform));
    if (static_cast<int>(audio.rows()) != T)
      throw ShapeError("audio features have " + std::to_string(audio.rows()) +
                       " frames but motion has " + std::to_string(T));
    const Eigen::MatrixXf pred_a = model.decode_autoregressive(style, audio);

    ClipReport c;
    c.stem = s.stem;
    c.identity = s.identity_id;
    auto fill = [&](const Eigen::MatrixXf& pred, PathMetrics& p) {
      p.fve = fve(pred, gt);
      p.lve = lve(pred, gt, data.lip_mask);
      p.ldtw = ldtw(pred, gt, data.lip_mask);
      p.ldd = ldd(pred, gt, data.lip_mask);
      p.scs = probe ? scs(*probe, pred, gt)
                    : std::numeric_limits<double>::quiet_NaN();
    };
    fill(pred_c, c.content);
    fill(pred_a, c.audio);
    rep.per_clip.push_back(c);

    csum.fve += c.content.fve;
    csum.lve += c.content.lve;
    csum.ldtw += c.content.ldtw;
    csum.ldd += c.content.ldd;
    csum.scs += c.content.scs;
    asum.fve += c.audio.fve;
    asum.lve += c.audio.lve;
    asum.ldtw += c.audio.ldtw;
    asum.ldd += c.audio.ldd;
    asum.scs += c.audio.scs;
    if (console)
      (*console) << "eval " << s.stem << "  fve_a " << c.audio.fve
                 << "  lve_a " << c.audio.lve << "\n";
  }
  const double n = static_cast<double>(idx.size());
  rep.clips = static_cast<int>(idx.size());
  rep.content_mean = {csum.fve / n, csum.lve / n, csum.ldtw / n, csum.ldd / n,
                      csum.scs / n};
  rep.audio_mean = {asum.fve / n, asum.lve / n, asum.ldtw / n, asum.ldd / n,
                    asum.scs / n};

  if (probe) {
    const std::vector<int>& cls = probe->class_identities;
    bool all_seen = true;
    for (const auto& [id, v] : by_identity)
      if (std::find(cls.begin(), cls.end(), id) == cls.end()) all_seen = false;
    if (all_seen) rep.style_probe_acc_gt = probe->accuracy(data, split);
  }
  if (with_probes) {
    rep.probes = probe_disentanglement(model, data, seed, console);
    rep.has_probes = true;
  }
  return rep;
}

void write_clip_csv(const EvalReport& report,
                    const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "stem,identity,fve_content,lve_content,ldtw_content,ldd_content,"
        "scs_content,fve_audio,lve_audio,ldtw_audio,ldd_audio,scs_audio\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    os << buf;
  };
  for (const auto& c : report.per_clip) {
    os << c.stem << ',' << c.identity;
    put(c.content.fve);
    put(c.content.lve);
    put(c.content.ldtw);
    put(c.content.ldd);
    put(c.content.scs);
    put(c.audio.fve);
    put(c.audio.lve);
    put(c.audio.ldtw);
    put(c.audio.ldd);
    put(c.audio.scs);
    os << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

Eigen::MatrixXf style_codes(const Model<float>& model,
                            const DatasetManifest& data, Split split,
                            std::vector<int>* identities_out) {
  const std::vector<int> idx = data.sample_indices(split);
  if (idx.empty()) throw ConfigError("split has no samples");
  Eigen::MatrixXf codes(static_cast<int>(idx.size()), model.cfg.d_style);
  if (identities_out) identities_out->clear();
  for (size_t k = 0; k < idx.size(); ++k) {
    Sample s = data.load_sample(idx[k]);
    codes.row(static_cast<Eigen::Index>(k)) =
        model.style_encode(s.motion.frames).row(0);
    if (identities_out) identities_out->push_back(s.identity_id);
  }
  return codes;
}

}  // namespace stylemotion
