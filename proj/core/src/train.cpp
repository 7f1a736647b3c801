#include "regtr/train.hpp"

#include "regtr/dataset.hpp"
#include "regtr/error.hpp"
#include "regtr/log.hpp"
#include "regtr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace regtr {

template <typename T>
NamedTensors<T> named_parameters(ModelParams<T>& params) {
  NamedTensors<T> out;
  params.for_each([&](const std::string& name, ad::Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
void adamw_step(const NamedTensors<T>& params, AdamWState& state, const TrainConfig& cfg, double lr) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw InvalidArgument("adamw_step: optimizer state does not match parameters");
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (const T g : t.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericalError("adamw_step: non-finite gradient in " + name);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = params[k].second;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != t.size()) throw InvalidArgument("adamw_step: shape changed for " + params[k].first);
    auto p = t.mutable_values();
    const bool has = t.has_grad();
    const auto g = t.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      const double pi = static_cast<double>(p[i]);
      p[i] = static_cast<T>(pi - lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * pi));
    }
  }
}

template <typename T>
double clip_gradients(const NamedTensors<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (const T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (T& g : t.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * s);
    }
  }
  return norm;
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.lr_halving_period == 0) return cfg.lr;
  return cfg.lr * std::ldexp(1.0, -static_cast<int>(epoch / cfg.lr_halving_period));
}

namespace {

struct PairOutcome {
  double total = 0, c = 0, o = 0, f = 0;
};

PairOutcome run_pair(const synth::PairSample& pair, const ModelConfig& mcfg, const ModelParams<float>& params,
                     double weight) {
  const CloudGeometry gx = prepare_geometry(pair.source, mcfg);
  const CloudGeometry gy = prepare_geometry(pair.target, mcfg);
  const PairTargets targets = make_targets(pair.source, pair.target, gx, gy, pair.gt_transform, mcfg);
  const PairLoss<float> loss = pair_loss(gx, gy, targets, mcfg, params);
  PairOutcome out{static_cast<double>(loss.total.item()), loss.correspondence, loss.overlap, loss.feature};
  if (std::isfinite(out.total)) ad::scale(loss.total, static_cast<float>(weight)).backward();
  return out;
}

}  // namespace

TrainResult train(const std::vector<TrainPair>& pairs, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  return train(pairs, model_cfg, cfg, init_params<float>(model_cfg, cfg.seed), on_epoch);
}

TrainResult train(const std::vector<TrainPair>& pairs, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  ModelParams<float> init, const EpochCallback& on_epoch) {
  if (pairs.empty()) throw InvalidArgument("train: empty dataset");
  model_cfg.validate();
  cfg.validate();
  TrainResult result;
  result.params = std::move(init);
  const NamedTensors<float> named = named_parameters(result.params);
  for (const auto& [name, t] : named) t.zero_grad();
  AdamWState state;
  const std::size_t threads = resolve_threads(cfg.threads, cfg.deterministic);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    synth::Rng shuffle_rng(data::derive_seed(cfg.seed ^ 0x5eed5eedull, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = learning_rate(cfg, epoch);
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;

    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(e - b);
      std::vector<synth::PairSample> batch;
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t idx = order[k];
        if (cfg.resample_pose) {
          synth::Rng rng(data::derive_seed(cfg.seed + pairs[idx].seed, epoch));
          batch.push_back(synth::repose_pair(pairs[idx].pair, rng, 45.0, 0.5));
        } else {
          batch.push_back(pairs[idx].pair);
        }
      }

      std::vector<PairOutcome> outcomes(batch.size());
      if (threads == 1 || batch.size() == 1) {
        for (std::size_t k = 0; k < batch.size(); ++k) outcomes[k] = run_pair(batch[k], model_cfg, result.params, weight);
      } else {
        std::vector<ModelParams<float>> clones;
        for (std::size_t k = 0; k < batch.size(); ++k) clones.push_back(clone_params(result.params));
        std::vector<std::exception_ptr> errors(batch.size());
        for (std::size_t start = 0; start < batch.size(); start += threads) {
          std::vector<std::thread> workers;
          for (std::size_t k = start; k < std::min(batch.size(), start + threads); ++k) {
            workers.emplace_back([&, k] {
              try {
                outcomes[k] = run_pair(batch[k], model_cfg, clones[k], weight);
              } catch (...) {
                errors[k] = std::current_exception();
              }
            });
          }
          for (auto& w : workers) w.join();
        }
        for (const auto& err : errors) {
          if (err) std::rethrow_exception(err);
        }
        for (std::size_t k = 0; k < batch.size(); ++k) {
          const NamedTensors<float> cn = named_parameters(clones[k]);
          for (std::size_t p = 0; p < named.size(); ++p) {
            if (!cn[p].second.has_grad()) continue;
            auto dst = named[p].second.mutable_grad();
            const auto src = cn[p].second.grad();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
          }
        }
      }

      for (std::size_t k = 0; k < outcomes.size(); ++k) {
        if (!std::isfinite(outcomes[k].total)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch + 1 << " for pair with manifest seed " << pairs[order[b + k]].seed
              << " (L_c=" << outcomes[k].c << ", L_o=" << outcomes[k].o << ", L_f=" << outcomes[k].f << ")";
          throw NumericalError(msg.str());
        }
        stats.loss_total += outcomes[k].total;
        stats.loss_c += outcomes[k].c;
        stats.loss_o += outcomes[k].o;
        stats.loss_f += outcomes[k].f;
      }
      clip_gradients(named, cfg.grad_clip);
      adamw_step(named, state, cfg, lr);
      for (const auto& [name, t] : named) t.zero_grad();
    }

    const double n = static_cast<double>(pairs.size());
    stats.loss_total /= n;
    stats.loss_c /= n;
    stats.loss_o /= n;
    stats.loss_f /= n;
    result.curve.push_back(stats);
    std::ostringstream line;
    line << "epoch " << stats.epoch << " loss " << stats.loss_total << " (c " << stats.loss_c << ", o " << stats.loss_o
         << ", f " << stats.loss_f << ") lr " << lr;
    log::info(line.str());
    if (on_epoch) on_epoch(stats, result.params);
  }
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<EpochStats>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write loss curve: " + path.string());
  out << "epoch,loss_total,loss_c,loss_o,loss_f,lr\n" << std::setprecision(9);
  for (const auto& s : curve) {
    out << s.epoch << ',' << s.loss_total << ',' << s.loss_c << ',' << s.loss_o << ',' << s.loss_f << ',' << s.lr << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

template NamedTensors<float> named_parameters(ModelParams<float>&);
template NamedTensors<double> named_parameters(ModelParams<double>&);
template void adamw_step(const NamedTensors<float>&, AdamWState&, const TrainConfig&, double);
template void adamw_step(const NamedTensors<double>&, AdamWState&, const TrainConfig&, double);
template double clip_gradients(const NamedTensors<float>&, double);
template double clip_gradients(const NamedTensors<double>&, double);

}  // namespace regtr
