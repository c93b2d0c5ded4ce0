// SPDX-License-Identifier: Apache-2.0
#include "caps/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "caps/errors.hpp"

namespace caps::train {

using ad::GradSet;
using ad::ParamSet;
using ad::Tensor;
using ad::Var;

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw config_error("train: learning rate <= 0");
  if (!(rho1 > 0 && rho1 < 1 && rho2 > 0 && rho2 < 1))
    throw config_error("train: decay rates must be in (0,1)");
  if (!(eps_stable > 0)) throw config_error("train: stability constant <= 0");
  if (epochs < 1) throw config_error("train: epochs < 1");
  if (batch_public < 1 || batch_private < 1)
    throw config_error("train: batch sizes must be >= 1");
  if (!(clipping_norm > 0)) throw config_error("train: clipping norm <= 0");
  if (noise_multiplier < 0) throw config_error("train: sigma < 0");
  if (anneal_cycles < 1) throw config_error("train: anneal cycles < 1");
}

OptimizerState OptimizerState::init(const ParamSet& params) {
  OptimizerState s;
  s.m = GradSet::zeros_like(params);
  s.v = GradSet::zeros_like(params);
  s.k = 0;
  return s;
}

double beta_multiplier(long step, const AnnealSchedule& schedule) {
  if (schedule.total_steps < 1 || schedule.cycles < 1)
    throw std::invalid_argument("beta_multiplier: bad schedule");
  if (step < 0 || step >= schedule.total_steps)
    throw std::invalid_argument(
        "beta_multiplier: step " + std::to_string(step) + " outside [0," +
        std::to_string(schedule.total_steps) + ")");
  const double cycle_len =
      static_cast<double>(schedule.total_steps) / schedule.cycles;
  const double pos = std::fmod(static_cast<double>(step), cycle_len) / cycle_len;
  return std::min(1.0, 2.0 * pos);
}

void adam_step(ParamSet& params, const GradSet& grad, OptimizerState& state,
               const TrainConfig& cfg) {
  if (!grad.congruent_with(params))
    throw std::invalid_argument("adam_step: gradient not congruent with params");
  state.k += 1;
  const double bc1 = 1.0 - std::pow(cfg.rho1, static_cast<double>(state.k));
  const double bc2 = 1.0 - std::pow(cfg.rho2, static_cast<double>(state.k));
  for (size_t t = 0; t < grad.tensors.size(); ++t) {
    Tensor& m = state.m.tensors[t];
    Tensor& v = state.v.tensors[t];
    Tensor& p = const_cast<Tensor&>(params.get(grad.names[t]).val());
    const Tensor& g = grad.tensors[t];
    for (size_t i = 0; i < g.v.size(); ++i) {
      m.v[i] = cfg.rho1 * m.v[i] + (1 - cfg.rho1) * g.v[i];
      v.v[i] = cfg.rho2 * v.v[i] + (1 - cfg.rho2) * g.v[i] * g.v[i];
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      p.v[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps_stable);
    }
  }
}

DpStepResult dp_adam_step(ParamSet& params, OptimizerState& state,
                          const TrainConfig& cfg, int n_private,
                          const std::function<Var(int, Rng&)>& private_loss,
                          const std::function<Var(Rng&)>& public_loss,
                          Rng& rng) {
  if (cfg.noise_multiplier < 0)
    throw std::invalid_argument("dp_adam_step: sigma < 0");
  if (!(cfg.clipping_norm > 0))
    throw std::invalid_argument("dp_adam_step: clipping norm <= 0");
  if (cfg.noise_multiplier > 0 && std::isinf(cfg.clipping_norm))
    throw std::invalid_argument(
        "dp_adam_step: infinite clipping norm with positive sigma");
  if (n_private < 1)
    throw std::invalid_argument("dp_adam_step: empty private dataset");

  const double q =
      static_cast<double>(cfg.batch_private) / static_cast<double>(n_private);
  std::vector<int> batch;
  for (int i = 0; i < n_private; ++i)
    if (rng.uniform() < q) batch.push_back(i);

  DpStepResult res;
  res.realized_private_batch = static_cast<int>(batch.size());

  GradSet noisy_sum = GradSet::zeros_like(params);
  for (int i : batch) {
    Var loss = private_loss(i, rng);
    res.private_loss_sum += loss.val()[0];
    GradSet g = ad::backward(loss, params);
    const double norm = g.l2_norm();
    const double clip = 1.0 / std::max(1.0, norm / cfg.clipping_norm);
    noisy_sum.add_scaled(g, clip);
  }
  if (cfg.noise_multiplier > 0) {
    const double scale = cfg.noise_multiplier * cfg.clipping_norm;
    for (auto& t : noisy_sum.tensors)
      for (auto& x : t.v) x += scale * rng.gauss();
  }
  noisy_sum.scale(1.0 / static_cast<double>(cfg.batch_private));

  Var pub = public_loss(rng);
  res.public_loss = pub.val()[0];
  GradSet g_pub = ad::backward(pub, params);
  noisy_sum.add_scaled(g_pub, 1.0);

  adam_step(params, noisy_sum, state, cfg);
  return res;
}

// ---- M1 --------------------------------------------------------------------

namespace {

std::vector<EpochStat> run_m1_epochs(models::M1Model& model,
                                     const std::vector<data::EngagementSeries>& data,
                                     const TrainConfig& cfg, Rng& rng) {
  const int n = static_cast<int>(data.size());
  if (n < 1) throw std::invalid_argument("train_m1: empty dataset");
  const int bsz = std::min(cfg.batch_public, n);
  const long steps_per_epoch = (n + bsz - 1) / bsz;
  const AnnealSchedule sched{cfg.epochs * steps_per_epoch, cfg.anneal_cycles};

  OptimizerState state = OptimizerState::init(model.params);
  std::vector<EpochStat> trace;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < n - 1; ++i) {
      const auto j = i + rng.uniform_int(n - i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    EpochStat stat{epoch, 0, 0, 0};
    for (int off = 0; off < n; off += bsz, ++step) {
      const int cur = std::min(bsz, n - off);
      std::vector<data::EngagementSeries> batch;
      batch.reserve(static_cast<size_t>(cur));
      for (int i = 0; i < cur; ++i)
        batch.push_back(data[static_cast<size_t>(order[static_cast<size_t>(off + i)])]);
      const double beta_eff =
          model.cfg.beta1 * beta_multiplier(step, sched);
      auto parts = models::m1_batch_elbo(model, models::batch_to_channels(batch),
                                         models::batch_to_cells(batch),
                                         beta_eff, rng, /*training=*/true);
      const double loss = parts.loss.val()[0];
      if (!std::isfinite(loss)) {
        std::vector<double> losses;
        for (const auto& row : trace) losses.push_back(row.loss);
        throw numerical_error("train_m1: non-finite loss at epoch " +
                                  std::to_string(epoch) + ", step " +
                                  std::to_string(step),
                              losses);
      }
      stat.loss += loss * cur;
      stat.recon += parts.recon * cur;
      stat.kl += parts.kl * cur;
      adam_step(model.params, ad::backward(parts.loss, model.params), state,
                cfg);
    }
    stat.loss /= n;
    stat.recon /= n;
    stat.kl /= n;
    trace.push_back(stat);
  }
  return trace;
}

}  // namespace

M1TrainResult train_m1(const std::vector<data::EngagementSeries>& public_data,
                       const models::M1Config& mcfg, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  M1TrainResult res{models::M1Model::init(mcfg, rng), {}};
  res.trace = run_m1_epochs(res.model, public_data, cfg, rng);
  return res;
}

std::vector<EpochStat> train_m1_on(models::M1Model& model,
                                   const std::vector<data::EngagementSeries>& data,
                                   const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  return run_m1_epochs(model, data, cfg, rng);
}

// ---- M2 (SPSSL) ------------------------------------------------------------

SpsslResult train_m2_spssl(const data::LabelledDataset& private_data,
                           const models::M1Model& m1,
                           const models::M2Config& mcfg,
                           const TrainConfig& cfg,
                           const privacy::PrivacySpec& privacy,
                           int unlabelled_count) {
  cfg.validate();
  const int n_priv = static_cast<int>(private_data.size());
  if (n_priv < 1) throw config_error("train_m2: empty private dataset");
  for (const auto& r : private_data.records)
    if (r.label < 0 || r.label >= mcfg.num_classes)
      throw config_error("train_m2: record " + r.student_id +
                         " is unlabelled or out of range");
  if (cfg.batch_private >= n_priv)
    throw config_error("train_m2: B_priv must be < N_priv");
  if (unlabelled_count < 1)
    throw config_error("train_m2: unlabelled pool must be nonempty");

  const long steps_per_epoch =
      (n_priv + cfg.batch_private - 1) / cfg.batch_private;
  const long total_steps = cfg.epochs * steps_per_epoch;
  const double q =
      static_cast<double>(cfg.batch_private) / static_cast<double>(n_priv);

  // privacy feasibility is settled before any training touches the data
  SpsslResult res{models::M2Model{}, {}, {}, privacy.non_private(), 0.0, q,
                  total_steps};
  TrainConfig run_cfg = cfg;
  if (privacy.non_private()) {
    run_cfg.noise_multiplier = 0;
    run_cfg.clipping_norm = std::numeric_limits<double>::infinity();
  } else {
    privacy.validate();
    run_cfg.noise_multiplier = privacy::calibrate_noise(
        privacy.epsilon_target, privacy.delta, q, total_steps);
    run_cfg.clipping_norm = privacy.clipping_norm;
    res.sigma = run_cfg.noise_multiplier;
    res.accounting = privacy::account(
        {run_cfg.noise_multiplier, q, total_steps}, privacy.delta);
  }

  Rng rng(cfg.seed);
  const auto unlabelled =
      models::generate_unconditional(m1, unlabelled_count, rng);

  std::vector<data::EngagementSeries> priv_xs;
  std::vector<int> priv_ys;
  for (const auto& r : private_data.records) {
    priv_xs.push_back(r.x);
    priv_ys.push_back(r.label);
  }
  const auto z1_priv = models::encode_means(m1, priv_xs);
  const auto z1_pub = models::encode_means(m1, unlabelled);

  res.model = models::M2Model::init(mcfg, rng);
  models::M2Model& m2 = res.model;
  OptimizerState state = OptimizerState::init(m2.params);
  const AnnealSchedule sched{total_steps, cfg.anneal_cycles};

  auto z1_row = [](const std::vector<double>& z) {
    Tensor t({1, static_cast<int>(z.size())});
    t.v = z;
    return Var::constant(t);
  };

  std::vector<EpochStat> trace;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStat stat{epoch, 0, 0, 0};
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      const double beta_eff = mcfg.beta2 * beta_multiplier(step, sched);
      auto private_loss = [&](int i, Rng& r) {
        Var z1 = z1_row(z1_priv[static_cast<size_t>(i)]);
        Var l = models::m2_labelled_loss_graph(m2, z1, {priv_ys[static_cast<size_t>(i)]},
                                               beta_eff, r, /*training=*/true);
        Var ce = models::m2_class_ce_graph(m2, z1, {priv_ys[static_cast<size_t>(i)]},
                                           r, /*training=*/true);
        return ad::sum(ad::add(l, ad::scale(ce, mcfg.alpha)));
      };
      auto public_loss = [&](Rng& r) {
        const int bsz = std::min<int>(cfg.batch_public,
                                      static_cast<int>(z1_pub.size()));
        Tensor zb({bsz, mcfg.z1_dim});
        for (int i = 0; i < bsz; ++i) {
          const auto idx =
              static_cast<size_t>(r.uniform_int(static_cast<int64_t>(z1_pub.size())));
          std::copy(z1_pub[idx].begin(), z1_pub[idx].end(),
                    zb.v.begin() + static_cast<long>(i) * mcfg.z1_dim);
        }
        Var u = models::m2_unlabelled_loss_graph(m2, Var::constant(zb),
                                                 beta_eff, r, /*training=*/true);
        return ad::mean(u);
      };
      DpStepResult sr = dp_adam_step(m2.params, state, run_cfg, n_priv,
                                     private_loss, public_loss, rng);
      const double step_loss =
          sr.public_loss + sr.private_loss_sum / cfg.batch_private;
      if (!std::isfinite(step_loss)) {
        std::vector<double> losses;
        for (const auto& row : trace) losses.push_back(row.loss);
        throw numerical_error("train_m2: non-finite loss at step " +
                                  std::to_string(step),
                              losses);
      }
      stat.loss += step_loss;
      stat.recon += sr.private_loss_sum / cfg.batch_private;
      stat.kl += sr.public_loss;
    }
    stat.loss /= static_cast<double>(steps_per_epoch);
    stat.recon /= static_cast<double>(steps_per_epoch);
    stat.kl /= static_cast<double>(steps_per_epoch);
    trace.push_back(stat);
  }
  res.trace = std::move(trace);
  return res;
}

// ---- generative replay ------------------------------------------------------

std::vector<data::EngagementSeries> build_replay_pool(
    const models::M1Model& m1_current, const models::M1Model& m1_pretrained,
    const models::M2Model& m2, const ReplayConfig& cfg, Rng& rng) {
  if (!(m1_current.cfg == m1_pretrained.cfg))
    throw std::invalid_argument(
        "replay: current and pretrained M1 architectures differ");
  if (m2.cfg.z1_dim != m1_current.cfg.latent_dim)
    throw std::invalid_argument("replay: M2 z1 dimension does not match M1");
  if (cfg.samples_each < 1)
    throw std::invalid_argument("replay: samples_each must be >= 1");

  auto pool = models::generate_stacked(m1_current, m2, cfg.samples_each, rng);
  auto from_pretrained =
      models::generate_unconditional(m1_pretrained, cfg.samples_each, rng);
  pool.insert(pool.end(), from_pretrained.begin(), from_pretrained.end());
  for (size_t i = 0; i + 1 < pool.size(); ++i) {
    const auto j =
        i + static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(pool.size() - i)));
    std::swap(pool[i], pool[j]);
  }
  return pool;
}

ReplayResult replay_update_m1(const models::M1Model& m1_current,
                              const models::M1Model& m1_pretrained,
                              const models::M2Model& m2,
                              const ReplayConfig& cfg) {
  cfg.train.validate();
  Rng rng(cfg.train.seed);
  const auto pool = build_replay_pool(m1_current, m1_pretrained, m2, cfg, rng);
  ReplayResult res{m1_current.clone(), {}};
  res.trace = train_m1_on(res.model, pool, cfg.train, rng);
  return res;
}

// ---- hyperparameter search --------------------------------------------------

TrainConfig random_search(const HyperRanges& ranges, int trials,
                          const std::function<double(const TrainConfig&)>& objective,
                          const TrainConfig& base, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("random_search: trials < 1");
  if (!(ranges.lr_min > 0 && ranges.lr_min <= ranges.lr_max) ||
      ranges.batch_pub_min > ranges.batch_pub_max ||
      ranges.batch_priv_min > ranges.batch_priv_max ||
      ranges.epochs_min > ranges.epochs_max ||
      !(ranges.clip_min > 0 && ranges.clip_min <= ranges.clip_max))
    throw std::invalid_argument("random_search: empty range");

  auto draw_stepped = [&](int lo, int hi, int step) {
    const int64_t count = (hi - lo) / step + 1;
    return lo + step * static_cast<int>(rng.uniform_int(count));
  };

  TrainConfig best = base;
  double best_score = 0;
  for (int t = 0; t < trials; ++t) {
    TrainConfig cand = base;
    const double lo = std::log(ranges.lr_min), hi = std::log(ranges.lr_max);
    cand.learning_rate = std::exp(lo + (hi - lo) * rng.uniform());
    cand.batch_public = draw_stepped(ranges.batch_pub_min,
                                     ranges.batch_pub_max, ranges.batch_pub_step);
    cand.batch_private =
        draw_stepped(ranges.batch_priv_min, ranges.batch_priv_max, 1);
    cand.epochs = draw_stepped(ranges.epochs_min, ranges.epochs_max, 1);
    const int clip_steps =
        static_cast<int>(std::llround((ranges.clip_max - ranges.clip_min) /
                                      ranges.clip_step));
    cand.clipping_norm =
        ranges.clip_min +
        ranges.clip_step * static_cast<double>(rng.uniform_int(clip_steps + 1));
    const double score = objective(cand);
    if (t == 0 || score < best_score) {
      best_score = score;
      best = cand;
    }
  }
  return best;
}

}  // namespace caps::train
