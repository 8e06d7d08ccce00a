#pragma once

#include <algorithm>
#include <chrono>

#include "dfyp/adam.hpp"
#include "dfyp/data.hpp"
#include "dfyp/model.hpp"

namespace dfyp {
namespace train {

struct TrainConfig {
  double lr = 1e-3;
  int batch = 16;
  int epochs = 50;        // desk-scale cap
  long steps = 25000;     // minibatch step budget
  int patience = 10;      // consecutive non-improving epochs before stopping
  std::uint64_t seed = 7;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, val_rmse = 0;
  double alpha = 0, beta = 0, gamma = 0, lambda = 0;
  std::string selected_operator;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_loss = 0;
  long steps_done = 0;
  std::uint64_t shuffle_seed = 0;  // recorded for exact replay
  edge::OperatorGateState gate;
};

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<double> truth, pred;
  fusion::MetricsReport report;
};

namespace detail {

// Stacks dataset samples into one [N,C,H,W] batch plus raw targets.
inline std::pair<Tensor<float>, std::vector<double>> make_batch(
    const data::Dataset& ds, const std::vector<int>& idx, std::size_t from, std::size_t to) {
  const auto& first = ds.samples[idx[from]].x;
  if (first.rank() != 3) throw ShapeError("make_batch: sample rank " + std::to_string(first.rank()));
  const int c = first.extent(0), h = first.extent(1), w = first.extent(2);
  const int n = static_cast<int>(to - from);
  auto x = Tensor<float>::zeros({n, c, h, w});
  std::vector<double> y(n);
  const std::size_t chw = first.size();
  for (int b = 0; b < n; ++b) {
    const auto& s = ds.samples[idx[from + b]];
    if (s.x.size() != chw) throw ShapeError("make_batch: ragged sample shapes");
    std::copy(s.x.data(), s.x.data() + chw, x.data() + b * chw);
    y[b] = s.label;
  }
  return {std::move(x), std::move(y)};
}

inline Tensor<float> target_tensor(const std::vector<double>& y, const model::DfypModel<float>& m) {
  auto t = Tensor<float>::zeros({static_cast<int>(y.size())});
  for (std::size_t i = 0; i < y.size(); ++i)
    t.data()[i] = static_cast<float>(m.standardize_target(y[i]));
  return t;
}

}  // namespace detail

// Per-channel input statistics and target statistics over the training split.
inline void fit_standardizer(model::DfypModel<float>& m, const data::Dataset& ds,
                             const std::vector<int>& train_idx) {
  if (train_idx.empty()) throw ParamError("fit_standardizer: empty training split");
  const int c = ds.samples[train_idx[0]].x.extent(0);
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  std::size_t per_ch = 0;
  double tsum = 0, tsq = 0;
  for (int i : train_idx) {
    const auto& s = ds.samples[i];
    const std::size_t hw = s.x.size() / c;
    per_ch += hw;
    for (int ch = 0; ch < c; ++ch) {
      const float* p = s.x.data() + ch * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        sum[ch] += p[k];
        sq[ch] += static_cast<double>(p[k]) * p[k];
      }
    }
    tsum += s.label;
    tsq += s.label * s.label;
  }
  m.std_.in_mean.assign(c, 0.0);
  m.std_.in_std.assign(c, 1.0);
  for (int ch = 0; ch < c; ++ch) {
    const double mu = sum[ch] / per_ch;
    const double var = std::max(0.0, sq[ch] / per_ch - mu * mu);
    m.std_.in_mean[ch] = mu;
    m.std_.in_std[ch] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  const double n = static_cast<double>(train_idx.size());
  m.std_.t_mean = tsum / n;
  const double tvar = std::max(0.0, tsq / n - m.std_.t_mean * m.std_.t_mean);
  m.std_.t_std = tvar > 1e-12 ? std::sqrt(tvar) : 1.0;
}

// Batched inference over one split; predictions in original target units.
inline EvalResult evaluate(model::DfypModel<float>& m, const data::Dataset& ds,
                           const std::string& split, int batch = 32) {
  EvalResult r;
  const auto idx = ds.split_indices(split);
  if (idx.empty()) throw ParamError("evaluate: empty split '" + split + "'");
  std::mt19937_64 dummy(0);  // dropout disabled in eval mode
  for (std::size_t at = 0; at < idx.size(); at += batch) {
    const std::size_t to = std::min(at + batch, idx.size());
    auto [x, y] = detail::make_batch(ds, idx, at, to);
    auto preds = m.forward(m.standardize_batch(x), false, dummy);
    for (std::size_t b = 0; b < to - at; ++b) {
      const auto& s = ds.samples[idx[at + b]];
      r.ids.push_back(s.id);
      r.truth.push_back(s.label);
      r.pred.push_back(m.unstandardize(preds.data()[b]));
    }
  }
  if (r.pred.size() >= 2) {
    r.report = fusion::metrics(r.pred, r.truth);
  } else {
    // Single-sample split: R^2 is undefined, rmse/mae still meaningful.
    const double d = r.pred[0] - r.truth[0];
    r.report.rmse = std::abs(d);
    r.report.mae = std::abs(d);
    r.report.r2 = std::numeric_limits<double>::quiet_NaN();
    r.report.r2_defined = false;
    r.report.n = 1;
  }
  return r;
}

// Joint end-to-end loop: each epoch the gate fixes the operator, Adam updates
// every registered parameter over shuffled minibatches, and the validation
// pass feeds -RMSE back to the gate. Early stop after `patience` epochs
// without a strict best-validation-loss improvement, or at the step budget.
// The model is left at its best-validation snapshot.
inline TrainResult train(model::DfypModel<float>& m, const data::Dataset& ds,
                         const TrainConfig& tc) {
  auto train_idx = ds.split_indices("train");
  const auto val_idx = ds.split_indices("val");
  if (train_idx.empty() || val_idx.empty())
    throw ParamError("train: train/val splits must be non-empty");
  if (tc.batch < 1 || tc.epochs < 1 || tc.steps < 1)
    throw ParamError("train: batch, epochs and steps must be positive");

  fit_standardizer(m, ds, train_idx);
  TrainResult res;
  res.shuffle_seed = tc.seed;
  auto params = m.parameters();
  AdamState<float> opt(tc.lr);
  std::mt19937_64 drop_rng(tc.seed ^ 0x9E3779B97F4A7C15ULL);
  auto best = model::ModelSnapshot<float>::capture(m);
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  bool budget_hit = false;

  for (int epoch = 0; epoch < tc.epochs && !budget_hit; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (m.cfg.has_aol() && !m.pinned_operator) m.active_operator = res.gate.select(epoch);
    const std::string selected = m.operator_for_epoch();

    std::mt19937_64 shuffle_rng(data::detail::mix_seed(tc.seed, epoch, 0x5E0FFULL));
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);

    double loss_sum = 0;
    std::size_t seen = 0;
    int batch_no = 0;
    for (std::size_t at = 0; at < train_idx.size(); at += tc.batch, ++batch_no) {
      const std::size_t to = std::min(at + tc.batch, train_idx.size());
      auto [x, y] = detail::make_batch(ds, train_idx, at, to);
      auto xs = m.standardize_batch(x);
      auto yt = detail::target_tensor(y, m);
      double lval = 0;
      try {
        Tape<float> tape;
        TapeScope<float> scope(tape);
        auto preds = m.forward(xs, true, drop_rng);
        auto loss = fusion::mse_loss(preds, yt);
        lval = loss.item();
        if (!std::isfinite(lval)) throw NumericError("non-finite training loss");
        for (auto& p : params) p.zero_grad();
        tape.backward(loss);
        opt.step(params);
      } catch (const NumericError& e) {
        std::string w = e.what();
        const std::string prefix = "numeric error: ";
        if (w.rfind(prefix, 0) == 0) w = w.substr(prefix.size());
        throw NumericError(w + " (epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + ")");
      }
      loss_sum += lval * static_cast<double>(to - at);
      seen += to - at;
      ++res.steps_done;
      if (res.steps_done >= tc.steps) {
        budget_hit = true;
        break;
      }
    }

    auto val = evaluate(m, ds, "val", tc.batch);
    double vloss = 0;
    for (std::size_t i = 0; i < val.pred.size(); ++i) {
      const double d = m.standardize_target(val.pred[i]) - m.standardize_target(val.truth[i]);
      vloss += d * d;
    }
    vloss /= static_cast<double>(val.pred.size());
    if (m.cfg.has_aol() && !m.pinned_operator) res.gate.update(selected, -val.report.rmse);

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1));
    log.val_loss = vloss;
    log.val_rmse = val.report.rmse;
    log.alpha = m.alpha_value();
    log.beta = m.beta_value();
    log.gamma = m.gamma_value();
    log.lambda = m.lambda_value();
    log.selected_operator = m.cfg.has_aol() ? selected : "";
    log.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.epochs.push_back(log);

    if (vloss < best_val) {
      best_val = vloss;
      res.best_epoch = epoch;
      best = model::ModelSnapshot<float>::capture(m);
      bad_epochs = 0;
    } else if (++bad_epochs >= tc.patience) {
      break;
    }
  }
  res.best_val_loss = best_val;
  best.restore(m);
  return res;
}

}  // namespace train
}  // namespace dfyp
