// SPDX-License-Identifier: Apache-2.0
#include "caps/models.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "caps/errors.hpp"
#include "caps/io.hpp"

namespace caps::models {

using ad::Tensor;
using ad::Var;
using data::kCells;
using data::kClasses;
using data::kFrames;
using data::kWeeks;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
constexpr int kChunk = 512;  // batch size for chunked inference/generation

Tensor gauss_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = stddev * rng.gauss();
  return t;
}

int conv_out_len(int t, int k, int s, int p) { return (t + 2 * p - k) / s + 1; }

// one-hot labels (B, num_classes)
Tensor labels_to_onehot(const std::vector<int>& ys, int num_classes) {
  Tensor t({static_cast<int>(ys.size()), num_classes});
  for (size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] < 0 || ys[i] >= num_classes)
      throw std::invalid_argument("label " + std::to_string(ys[i]) +
                                  " not in [0," + std::to_string(num_classes) +
                                  ")");
    t.v[i * num_classes + static_cast<size_t>(ys[i])] = 1.0;
  }
  return t;
}

// closed-form KL(N(mu, diag(exp(logsig)^2)) || N(0, I)) summed per row
Var kl_rows(const Var& mu, const Var& logsig) {
  // 0.5 * sum(mu^2 + exp(2 ls) - 2 ls - 1)
  return ad::scale(
      ad::sum_last(ad::add(ad::add(ad::mul(mu, mu),
                                   ad::exp(ad::scale(logsig, 2.0))),
                           ad::affine(logsig, -2.0, -1.0))),
      0.5);
}

}  // namespace

// ---- construction ----------------------------------------------------------

M1Model M1Model::init(const M1Config& cfg, Rng& rng) {
  M1Model m;
  m.cfg = cfg;
  const int ch_in = kFrames * kClasses;
  m.t1 = conv_out_len(kWeeks, cfg.kernel, cfg.stride, cfg.padding);
  m.t2 = conv_out_len(m.t1, cfg.kernel, cfg.stride, cfg.padding);
  if (m.t1 < 1 || m.t2 < 1)
    throw config_error("m1: conv stack collapses the time axis");
  // the transposed stack must reproduce the 17-week extent exactly
  const int back1 = (m.t2 - 1) * cfg.stride - 2 * cfg.padding + cfg.kernel;
  const int back2 = (m.t1 - 1) * cfg.stride - 2 * cfg.padding + cfg.kernel;
  if (back1 != m.t1 || back2 != kWeeks)
    throw config_error("m1: kernel/stride/padding do not invert the conv stack");
  m.flat = cfg.conv2_channels * m.t2;

  const int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels, k = cfg.kernel;
  auto w = [&](int fan_in) { return std::sqrt(2.0 / fan_in); };
  m.params.add("enc_conv1_w", gauss_tensor({c1, ch_in, k}, w(ch_in * k), rng));
  m.params.add("enc_conv1_b", Tensor({c1}));
  m.params.add("enc_conv2_w", gauss_tensor({c2, c1, k}, w(c1 * k), rng));
  m.params.add("enc_conv2_b", Tensor({c2}));
  m.params.add("enc_mu_w",
               gauss_tensor({cfg.latent_dim, m.flat}, w(m.flat), rng));
  m.params.add("enc_mu_b", Tensor({cfg.latent_dim}));
  m.params.add("enc_logsig_w",
               gauss_tensor({cfg.latent_dim, m.flat}, w(m.flat), rng));
  m.params.add("enc_logsig_b", Tensor({cfg.latent_dim}));
  m.params.add("dec_fc_w",
               gauss_tensor({m.flat, cfg.latent_dim}, w(cfg.latent_dim), rng));
  m.params.add("dec_fc_b", Tensor({m.flat}));
  m.params.add("dec_tconv1_w", gauss_tensor({c2, c1, k}, w(c2 * k), rng));
  m.params.add("dec_tconv1_b", Tensor({c1}));
  m.params.add("dec_tconv2_w", gauss_tensor({c1, ch_in, k}, w(c1 * k), rng));
  m.params.add("dec_tconv2_b", Tensor({ch_in}));
  return m;
}

M1Model M1Model::clone() const {
  M1Model c;
  c.cfg = cfg;
  c.t1 = t1;
  c.t2 = t2;
  c.flat = flat;
  c.params = params.clone();
  return c;
}

M2Model M2Model::init(const M2Config& cfg, Rng& rng) {
  M2Model m;
  m.cfg = cfg;
  const int in_enc = cfg.num_classes + cfg.z1_dim;
  const int in_dec = cfg.num_classes + cfg.latent_dim;
  auto w = [&](int fan_in) { return std::sqrt(1.0 / fan_in); };
  m.params.add("enc_mu_w", gauss_tensor({cfg.latent_dim, in_enc}, w(in_enc), rng));
  m.params.add("enc_mu_b", Tensor({cfg.latent_dim}));
  m.params.add("enc_logsig_w",
               gauss_tensor({cfg.latent_dim, in_enc}, w(in_enc), rng));
  m.params.add("enc_logsig_b", Tensor({cfg.latent_dim}));
  m.params.add("dec_w", gauss_tensor({cfg.z1_dim, in_dec}, w(in_dec), rng));
  m.params.add("dec_b", Tensor({cfg.z1_dim}));
  // zero-initialized classifier head: an untrained model predicts uniformly
  m.params.add("cls_w", Tensor({cfg.num_classes, cfg.z1_dim}));
  m.params.add("cls_b", Tensor({cfg.num_classes}));
  return m;
}

M2Model M2Model::clone() const {
  M2Model c;
  c.cfg = cfg;
  c.params = params.clone();
  return c;
}

// ---- input encodings -------------------------------------------------------

Tensor series_to_channels(const data::EngagementSeries& s) {
  Tensor t({kFrames * kClasses, kWeeks});
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w)
      t.v[static_cast<size_t>(f * kClasses + s.get(f, w)) * kWeeks + w] = 1.0;
  return t;
}

Tensor batch_to_channels(const std::vector<data::EngagementSeries>& xs) {
  if (xs.empty()) throw std::invalid_argument("batch_to_channels: empty batch");
  Tensor t({static_cast<int>(xs.size()), kFrames * kClasses, kWeeks});
  const size_t stride = static_cast<size_t>(kFrames * kClasses) * kWeeks;
  for (size_t i = 0; i < xs.size(); ++i)
    for (int f = 0; f < kFrames; ++f)
      for (int w = 0; w < kWeeks; ++w)
        t.v[i * stride +
            static_cast<size_t>(f * kClasses + xs[i].get(f, w)) * kWeeks + w] =
            1.0;
  return t;
}

Tensor series_to_cells(const data::EngagementSeries& s) {
  Tensor t({kCells, kClasses});
  for (int c = 0; c < kCells; ++c)
    t.v[static_cast<size_t>(c) * kClasses + s.cells[c]] = 1.0;
  return t;
}

Tensor batch_to_cells(const std::vector<data::EngagementSeries>& xs) {
  if (xs.empty()) throw std::invalid_argument("batch_to_cells: empty batch");
  Tensor t({static_cast<int>(xs.size()), kCells, kClasses});
  for (size_t i = 0; i < xs.size(); ++i)
    for (int c = 0; c < kCells; ++c)
      t.v[(i * kCells + static_cast<size_t>(c)) * kClasses + xs[i].cells[c]] =
          1.0;
  return t;
}

Tensor onehot_to_channels(const ad::Tensor& onehot) {
  if (onehot.shape != std::vector<int>{kFrames, kWeeks, kClasses})
    throw std::invalid_argument("one-hot input must be (4,17,3), got " +
                                onehot.shape_str());
  Tensor t({kFrames * kClasses, kWeeks});
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w) {
      double sum = 0;
      int hot = -1;
      for (int k = 0; k < kClasses; ++k) {
        const double v =
            onehot.v[(static_cast<size_t>(f) * kWeeks + w) * kClasses + k];
        if (v != 0.0 && v != 1.0)
          throw std::invalid_argument("malformed one-hot: value " +
                                      std::to_string(v));
        sum += v;
        if (v == 1.0) hot = k;
      }
      if (sum != 1.0)
        throw std::invalid_argument(
            "malformed one-hot: cell (" + std::to_string(f) + "," +
            std::to_string(w) + ") sums to " + std::to_string(sum));
      t.v[static_cast<size_t>(f * kClasses + hot) * kWeeks + w] = 1.0;
    }
  return t;
}

// ---- M1 graphs -------------------------------------------------------------

M1Encoded m1_encode_graph(const M1Model& m, const Var& x_channels, Rng& rng,
                          bool training) {
  const auto& p = m.params;
  const int s = m.cfg.stride, pad = m.cfg.padding;
  Var h1 = ad::relu(ad::conv1d(x_channels, p.get("enc_conv1_w"),
                               p.get("enc_conv1_b"), s, pad));
  h1 = ad::dropout(h1, m.cfg.dropout_encoder, rng, training);
  Var h2 = ad::relu(
      ad::conv1d(h1, p.get("enc_conv2_w"), p.get("enc_conv2_b"), s, pad));
  h2 = ad::dropout(h2, m.cfg.dropout_encoder, rng, training);
  const bool batched = x_channels.val().rank() == 3;
  Var flat = ad::reshape(
      h2, batched ? std::vector<int>{x_channels.val().dim(0), m.flat}
                  : std::vector<int>{m.flat});
  return {ad::dense(flat, p.get("enc_mu_w"), p.get("enc_mu_b")),
          ad::dense(flat, p.get("enc_logsig_w"), p.get("enc_logsig_b"))};
}

Var m1_decode_graph(const M1Model& m, const Var& z, Rng& rng, bool training) {
  const auto& p = m.params;
  const int s = m.cfg.stride, pad = m.cfg.padding;
  const bool batched = z.val().rank() == 2;
  const int bsz = batched ? z.val().dim(0) : 1;
  Var h = ad::relu(ad::dense(z, p.get("dec_fc_w"), p.get("dec_fc_b")));
  h = ad::dropout(h, m.cfg.dropout_decoder, rng, training);
  h = ad::reshape(h, batched ? std::vector<int>{bsz, m.cfg.conv2_channels, m.t2}
                             : std::vector<int>{m.cfg.conv2_channels, m.t2});
  Var g1 = ad::relu(ad::conv1d_transpose(h, p.get("dec_tconv1_w"),
                                         p.get("dec_tconv1_b"), s, pad));
  g1 = ad::dropout(g1, m.cfg.dropout_decoder, rng, training);
  Var logits_ch = ad::conv1d_transpose(g1, p.get("dec_tconv2_w"),
                                       p.get("dec_tconv2_b"), s, pad);
  return ad::channels_to_cells(logits_ch, kFrames, kClasses);
}

M1ElboParts m1_batch_elbo(const M1Model& m, const Tensor& x_channels,
                          const Tensor& x_cells, double beta_effective,
                          Rng& rng, bool training) {
  if (beta_effective < 0)
    throw std::invalid_argument("m1_batch_elbo: negative beta");
  const int bsz = x_channels.rank() == 3 ? x_channels.dim(0) : 1;
  Var x = Var::constant(x_channels);
  auto [mu, logsig] = m1_encode_graph(m, x, rng, training);
  Tensor eps = gauss_tensor(mu.val().shape, 1.0, rng);
  Var z = ad::add(mu, ad::mul(ad::exp(logsig), Var::constant(eps)));
  Var logits = m1_decode_graph(m, z, rng, training);
  Var recon_total = ad::scale(
      ad::sum(ad::mul(ad::log_softmax(logits), Var::constant(x_cells))), -1.0);
  Var kl_total = ad::sum(kl_rows(mu, logsig));

  M1ElboParts parts;
  parts.recon = recon_total.val()[0] / bsz;
  parts.kl = kl_total.val()[0] / bsz;
  parts.loss = ad::scale(
      ad::add(recon_total, ad::scale(kl_total, beta_effective)),
      1.0 / bsz);
  return parts;
}

// ---- M1 operations ---------------------------------------------------------

LatentCode m1_encode(const M1Model& m, const Tensor& x_onehot, Rng& rng) {
  Tensor channels = onehot_to_channels(x_onehot);
  Var x = Var::constant(channels);
  auto [mu, logsig] = m1_encode_graph(m, x, rng, /*training=*/false);
  LatentCode code;
  code.mean = mu.val().v;
  code.log_std = logsig.val().v;
  code.sample.resize(code.mean.size());
  for (size_t i = 0; i < code.mean.size(); ++i)
    code.sample[i] = code.mean[i] + std::exp(code.log_std[i]) * rng.gauss();
  return code;
}

LatentCode m1_encode(const M1Model& m, const data::EngagementSeries& x,
                     Rng& rng) {
  Tensor onehot({kFrames, kWeeks, kClasses});
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w)
      onehot.v[(static_cast<size_t>(f) * kWeeks + w) * kClasses +
               x.get(f, w)] = 1.0;
  return m1_encode(m, onehot, rng);
}

Tensor m1_decode(const M1Model& m, const std::vector<double>& z1) {
  if (static_cast<int>(z1.size()) != m.cfg.latent_dim)
    throw std::invalid_argument("m1_decode: z1 has dimension " +
                                std::to_string(z1.size()));
  for (double x : z1)
    if (!std::isfinite(x))
      throw std::invalid_argument("m1_decode: non-finite z1");
  Rng unused(0);
  Var z = Var::constant(Tensor::from({m.cfg.latent_dim}, z1));
  Var probs = ad::softmax(m1_decode_graph(m, z, unused, /*training=*/false));
  Tensor out;
  out.shape = {kFrames, kWeeks, kClasses};
  out.v = probs.val().v;
  return out;
}

M1ElboParts m1_elbo(const M1Model& m, const data::EngagementSeries& x,
                    double beta_effective, Rng& rng) {
  return m1_batch_elbo(m, batch_to_channels({x}), batch_to_cells({x}),
                       beta_effective, rng, /*training=*/false);
}

std::vector<std::vector<double>> encode_means(
    const M1Model& m, const std::vector<data::EngagementSeries>& xs) {
  std::vector<std::vector<double>> out;
  out.reserve(xs.size());
  Rng unused(0);
  for (size_t off = 0; off < xs.size(); off += kChunk) {
    const size_t n = std::min<size_t>(kChunk, xs.size() - off);
    std::vector<data::EngagementSeries> chunk(xs.begin() + off,
                                              xs.begin() + off + n);
    Var x = Var::constant(batch_to_channels(chunk));
    auto [mu, logsig] = m1_encode_graph(m, x, unused, /*training=*/false);
    const int d = m.cfg.latent_dim;
    for (size_t i = 0; i < n; ++i)
      out.emplace_back(mu.val().v.begin() + static_cast<long>(i) * d,
                       mu.val().v.begin() + static_cast<long>(i + 1) * d);
  }
  return out;
}

data::EngagementSeries reconstruct(const M1Model& m,
                                   const data::EngagementSeries& x) {
  Rng unused(0);
  Var xin = Var::constant(batch_to_channels({x}));
  auto [mu, logsig] = m1_encode_graph(m, xin, unused, /*training=*/false);
  Tensor probs = m1_decode(m, mu.val().v);
  data::EngagementSeries out;
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w) {
      const double* cell =
          probs.v.data() + (static_cast<size_t>(f) * kWeeks + w) * kClasses;
      int best = 0;
      for (int k = 1; k < kClasses; ++k)
        if (cell[k] > cell[best]) best = k;
      out.set(f, w, best);
    }
  return out;
}

// ---- M2 graphs -------------------------------------------------------------

Var m2_labelled_loss_graph(const M2Model& m, const Var& z1,
                           const std::vector<int>& ys, double beta_effective,
                           Rng& rng, bool training) {
  if (beta_effective < 0)
    throw std::invalid_argument("m2_labelled_loss: negative beta");
  const int bsz = static_cast<int>(ys.size());
  if (z1.val().rank() != 2 || z1.val().dim(0) != bsz)
    throw std::invalid_argument("m2_labelled_loss: z1 batch shape " +
                                z1.val().shape_str());
  const auto& p = m.params;
  Var y1h = Var::constant(labels_to_onehot(ys, m.cfg.num_classes));
  Var z1d = ad::dropout(z1, m.cfg.dropout_encoder, rng, training);
  Var enc_in = ad::concat(y1h, z1d);
  Var mu = ad::dense(enc_in, p.get("enc_mu_w"), p.get("enc_mu_b"));
  Var ls = ad::dense(enc_in, p.get("enc_logsig_w"), p.get("enc_logsig_b"));
  Tensor eps = gauss_tensor(mu.val().shape, 1.0, rng);
  Var z2 = ad::add(mu, ad::mul(ad::exp(ls), Var::constant(eps)));
  Var z2d = ad::dropout(z2, m.cfg.dropout_decoder, rng, training);
  Var mean = ad::dense(ad::concat(y1h, z2d), p.get("dec_w"), p.get("dec_b"));
  Var diff = ad::sub(z1, mean);
  // unit-variance Gaussian NLL: 0.5*(||z1-mean||^2 + dim*log(2*pi))
  Var nll = ad::affine(ad::sum_last(ad::mul(diff, diff)), 0.5,
                       0.5 * m.cfg.z1_dim * kLog2Pi);
  return ad::add(nll, ad::scale(kl_rows(mu, ls), beta_effective));
}

Var m2_unlabelled_loss_graph(const M2Model& m, const Var& z1,
                             double beta_effective, Rng& rng, bool training) {
  if (z1.val().rank() != 2)
    throw std::invalid_argument("m2_unlabelled_loss: z1 must be (B,d)");
  const int bsz = z1.val().dim(0);
  const auto& p = m.params;
  Var z1c = ad::dropout(z1, m.cfg.dropout_encoder, rng, training);
  Var logits = ad::dense(z1c, p.get("cls_w"), p.get("cls_b"));
  Var q = ad::softmax(logits);
  Var lsm = ad::log_softmax(logits);
  // Shannon entropy H(q) = -sum q log q, added per the model's objective
  Var out = ad::scale(ad::sum_last(ad::mul(q, lsm)), -1.0);
  for (int y = 0; y < m.cfg.num_classes; ++y) {
    Var ly = m2_labelled_loss_graph(m, z1, std::vector<int>(bsz, y),
                                    beta_effective, rng, training);
    Var qy = ad::reshape(ad::slice_last(q, y, 1), {bsz});
    out = ad::add(out, ad::mul(qy, ly));
  }
  return out;
}

Var m2_class_ce_graph(const M2Model& m, const Var& z1,
                      const std::vector<int>& ys, Rng& rng, bool training) {
  const int bsz = static_cast<int>(ys.size());
  if (z1.val().rank() != 2 || z1.val().dim(0) != bsz)
    throw std::invalid_argument("m2_class_ce: z1 batch shape " +
                                z1.val().shape_str());
  const auto& p = m.params;
  Var z1d = ad::dropout(z1, m.cfg.dropout_encoder, rng, training);
  Var lsm = ad::log_softmax(ad::dense(z1d, p.get("cls_w"), p.get("cls_b")));
  Var y1h = Var::constant(labels_to_onehot(ys, m.cfg.num_classes));
  return ad::scale(ad::sum_last(ad::mul(y1h, lsm)), -1.0);
}

namespace {
Var single_row(const std::vector<double>& z1, int dim) {
  if (static_cast<int>(z1.size()) != dim)
    throw std::invalid_argument("z1 has dimension " + std::to_string(z1.size()) +
                                ", want " + std::to_string(dim));
  Tensor t({1, dim});
  t.v = z1;
  return Var::constant(t);
}
}  // namespace

double m2_labelled_loss(const M2Model& m, const std::vector<double>& z1, int y,
                        double beta_effective, Rng& rng) {
  return m2_labelled_loss_graph(m, single_row(z1, m.cfg.z1_dim), {y},
                                beta_effective, rng, /*training=*/false)
      .val()[0];
}

double m2_unlabelled_loss(const M2Model& m, const std::vector<double>& z1,
                          double beta_effective, Rng& rng) {
  return m2_unlabelled_loss_graph(m, single_row(z1, m.cfg.z1_dim),
                                  beta_effective, rng, /*training=*/false)
      .val()[0];
}

double m2_objective(const M2Model& m,
                    const std::vector<std::vector<double>>& z1_labelled,
                    const std::vector<int>& ys,
                    const std::vector<std::vector<double>>& z1_unlabelled,
                    double alpha, double beta_effective, Rng& rng) {
  if (z1_labelled.size() != ys.size())
    throw std::invalid_argument("m2_objective: labelled batch/label mismatch");
  if (z1_labelled.empty() && z1_unlabelled.empty())
    throw std::invalid_argument("m2_objective: both batches empty");
  double total = 0;
  for (size_t i = 0; i < z1_labelled.size(); ++i)
    total += m2_labelled_loss(m, z1_labelled[i], ys[i], beta_effective, rng);
  for (const auto& z1 : z1_unlabelled)
    total += m2_unlabelled_loss(m, z1, beta_effective, rng);
  if (!z1_labelled.empty() && alpha != 0) {
    double ce = 0;
    for (size_t i = 0; i < z1_labelled.size(); ++i) {
      Rng unused(0);
      ce += m2_class_ce_graph(m, single_row(z1_labelled[i], m.cfg.z1_dim),
                              {ys[i]}, unused, /*training=*/false)
                .val()[0];
    }
    total += alpha * ce / static_cast<double>(z1_labelled.size());
  }
  return total;
}

// ---- inference & generation ------------------------------------------------

std::vector<double> classify_z1(const std::vector<double>& z1,
                                const M2Model& m2) {
  Rng unused(0);
  Var logits = ad::dense(single_row(z1, m2.cfg.z1_dim), m2.params.get("cls_w"),
                         m2.params.get("cls_b"));
  return ad::softmax(logits).val().v;
}

std::vector<double> classify(const data::EngagementSeries& x,
                             const M1Model& m1, const M2Model& m2) {
  Rng unused(0);
  Var xin = Var::constant(batch_to_channels({x}));
  auto [mu, logsig] = m1_encode_graph(m1, xin, unused, /*training=*/false);
  return classify_z1(mu.val().v, m2);
}

namespace {

// sample one class per cell from batched per-cell probabilities (B,68,3)
std::vector<data::EngagementSeries> sample_cells(const Tensor& probs,
                                                 Rng& rng) {
  const int bsz = probs.dim(0);
  std::vector<data::EngagementSeries> out(static_cast<size_t>(bsz));
  for (int b = 0; b < bsz; ++b)
    for (int c = 0; c < kCells; ++c) {
      const double* p =
          probs.v.data() + (static_cast<size_t>(b) * kCells + c) * kClasses;
      const double u = rng.uniform();
      double acc = 0;
      int cls = kClasses - 1;
      for (int k = 0; k < kClasses; ++k) {
        acc += p[k];
        if (u < acc) {
          cls = k;
          break;
        }
      }
      out[static_cast<size_t>(b)].cells[c] = static_cast<uint8_t>(cls);
    }
  return out;
}

std::vector<data::EngagementSeries> decode_and_sample(const M1Model& m1,
                                                      const Tensor& z_batch,
                                                      Rng& rng) {
  Rng unused(0);
  Var probs = ad::softmax(
      m1_decode_graph(m1, Var::constant(z_batch), unused, /*training=*/false));
  return sample_cells(probs.val(), rng);
}

}  // namespace

std::vector<data::EngagementSeries> generate_unconditional(const M1Model& m1,
                                                           int count,
                                                           Rng& rng) {
  if (count < 1) throw std::invalid_argument("generate: count must be >= 1");
  std::vector<data::EngagementSeries> out;
  out.reserve(static_cast<size_t>(count));
  for (int off = 0; off < count; off += kChunk) {
    const int n = std::min(kChunk, count - off);
    Tensor z = gauss_tensor({n, m1.cfg.latent_dim}, 1.0, rng);
    auto chunk = decode_and_sample(m1, z, rng);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

namespace {
std::vector<data::EngagementSeries> generate_from_labels(
    const M1Model& m1, const M2Model& m2, const std::vector<int>& ys,
    Rng& rng) {
  Rng unused(0);
  std::vector<data::EngagementSeries> out;
  out.reserve(ys.size());
  for (size_t off = 0; off < ys.size(); off += kChunk) {
    const size_t n = std::min<size_t>(kChunk, ys.size() - off);
    std::vector<int> chunk_ys(ys.begin() + off, ys.begin() + off + n);
    Tensor z2 = gauss_tensor({static_cast<int>(n), m2.cfg.latent_dim}, 1.0, rng);
    Var y1h = Var::constant(labels_to_onehot(chunk_ys, m2.cfg.num_classes));
    // deterministic decode: z1 is the conditional Gaussian's mean
    Var z1 = ad::dense(ad::concat(y1h, Var::constant(z2)),
                       m2.params.get("dec_w"), m2.params.get("dec_b"));
    auto chunk = decode_and_sample(m1, z1.val(), rng);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}
}  // namespace

std::vector<data::EngagementSeries> generate_conditional(const M1Model& m1,
                                                         const M2Model& m2,
                                                         int y, int count,
                                                         Rng& rng) {
  if (count < 1) throw std::invalid_argument("generate: count must be >= 1");
  if (y < 0 || y >= m2.cfg.num_classes)
    throw std::invalid_argument("generate_conditional: invalid label " +
                                std::to_string(y));
  return generate_from_labels(m1, m2, std::vector<int>(count, y), rng);
}

std::vector<data::EngagementSeries> generate_stacked(const M1Model& m1,
                                                     const M2Model& m2,
                                                     int count, Rng& rng) {
  if (count < 1) throw std::invalid_argument("generate: count must be >= 1");
  std::vector<int> ys(static_cast<size_t>(count));
  for (auto& y : ys)
    y = static_cast<int>(rng.uniform_int(m2.cfg.num_classes));
  return generate_from_labels(m1, m2, ys, rng);
}

// ---- checkpoints -----------------------------------------------------------

namespace {

using nlohmann::json;

json params_to_json(const ad::ParamSet& p) {
  json j = json::object();
  for (const auto& name : p.names()) {
    const Tensor& t = p.get(name).val();
    j[name] = {{"shape", t.shape}, {"values", t.v}};
  }
  return j;
}

void params_from_json(ad::ParamSet& p, const json& j) {
  for (const auto& name : p.names()) {
    if (!j.contains(name))
      throw config_error("checkpoint missing parameter: " + name);
    const auto& e = j.at(name);
    p.set(name, Tensor::from(e.at("shape").get<std::vector<int>>(),
                             e.at("values").get<std::vector<double>>()));
  }
  if (j.size() != p.count())
    throw config_error("checkpoint has unexpected extra parameters");
}

json header(const char* kind) {
  return {{"kind", kind}, {"version", 1}};
}

json load_checkpoint(const std::string& path, const char* kind) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw config_error(path + ": invalid checkpoint JSON: " + e.what());
  }
  if (j.value("kind", "") != kind || j.value("version", 0) != 1)
    throw config_error(path + ": not a version-1 '" + kind + "' checkpoint");
  return j;
}

}  // namespace

void save_m1(const M1Model& m, const std::string& path) {
  json j = header("m1");
  j["config"] = {{"latent_dim", m.cfg.latent_dim},
                 {"conv1_channels", m.cfg.conv1_channels},
                 {"conv2_channels", m.cfg.conv2_channels},
                 {"kernel", m.cfg.kernel},
                 {"stride", m.cfg.stride},
                 {"padding", m.cfg.padding},
                 {"dropout_encoder", m.cfg.dropout_encoder},
                 {"dropout_decoder", m.cfg.dropout_decoder},
                 {"beta1", m.cfg.beta1}};
  j["params"] = params_to_json(m.params);
  io::write_text_file(path, j.dump(1));
}

M1Model load_m1(const std::string& path) {
  json j = load_checkpoint(path, "m1");
  const auto& c = j.at("config");
  M1Config cfg;
  cfg.latent_dim = c.at("latent_dim");
  cfg.conv1_channels = c.at("conv1_channels");
  cfg.conv2_channels = c.at("conv2_channels");
  cfg.kernel = c.at("kernel");
  cfg.stride = c.at("stride");
  cfg.padding = c.at("padding");
  cfg.dropout_encoder = c.at("dropout_encoder");
  cfg.dropout_decoder = c.at("dropout_decoder");
  cfg.beta1 = c.at("beta1");
  Rng rng(0);
  M1Model m = M1Model::init(cfg, rng);
  params_from_json(m.params, j.at("params"));
  return m;
}

void save_m2(const M2Model& m, const std::string& path) {
  json j = header("m2");
  j["config"] = {{"latent_dim", m.cfg.latent_dim},
                 {"z1_dim", m.cfg.z1_dim},
                 {"num_classes", m.cfg.num_classes},
                 {"alpha", m.cfg.alpha},
                 {"beta2", m.cfg.beta2},
                 {"dropout_encoder", m.cfg.dropout_encoder},
                 {"dropout_decoder", m.cfg.dropout_decoder}};
  j["params"] = params_to_json(m.params);
  io::write_text_file(path, j.dump(1));
}

M2Model load_m2(const std::string& path) {
  json j = load_checkpoint(path, "m2");
  const auto& c = j.at("config");
  M2Config cfg;
  cfg.latent_dim = c.at("latent_dim");
  cfg.z1_dim = c.at("z1_dim");
  cfg.num_classes = c.at("num_classes");
  cfg.alpha = c.at("alpha");
  cfg.beta2 = c.at("beta2");
  cfg.dropout_encoder = c.at("dropout_encoder");
  cfg.dropout_decoder = c.at("dropout_decoder");
  Rng rng(0);
  M2Model m = M2Model::init(cfg, rng);
  params_from_json(m.params, j.at("params"));
  return m;
}

}  // namespace caps::models
