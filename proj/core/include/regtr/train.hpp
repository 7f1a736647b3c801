#pragma once

#include "regtr/config.hpp"
#include "regtr/params.hpp"
#include "regtr/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace regtr {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, ad::Tensor<T>>>;

template <typename T>
NamedTensors<T> named_parameters(ModelParams<T>& params);

/// First and second moment buffers, aligned with the parameter list.
struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One AdamW update from each tensor's gradient:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
/// Throws NumericalError naming the parameter if a gradient is not finite.
template <typename T>
void adamw_step(const NamedTensors<T>& params, AdamWState& state, const TrainConfig& cfg, double lr);

/// Global-norm clipping in place. Returns the norm before clipping.
template <typename T>
double clip_gradients(const NamedTensors<T>& params, double max_norm);

/// lr * 0.5^floor(epoch / lr_halving_period), epochs counted from 0.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

struct TrainPair {
  synth::PairSample pair;
  std::uint64_t seed = 0;  // manifest seed, reported on failures
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss_total = 0;
  double loss_c = 0;
  double loss_o = 0;
  double loss_f = 0;
  double lr = 0;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochStats> curve;
};

using EpochCallback = std::function<void(const EpochStats&, const ModelParams<float>&)>;

/// Mini-batch training. Pair order is reshuffled every epoch from the seed.
/// The batch loss is the mean of the pair losses. With threads > 1 the pairs
/// of a batch run on parameter clones and gradients are summed in batch order,
/// so results do not depend on scheduling. A non-finite loss aborts with
/// NumericalError naming the epoch and the pair's manifest seed.
TrainResult train(const std::vector<TrainPair>& pairs, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Same, continuing from existing parameters.
TrainResult train(const std::vector<TrainPair>& pairs, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  ModelParams<float> init, const EpochCallback& on_epoch = {});

/// CSV `epoch,loss_total,loss_c,loss_o,loss_f,lr`.
void write_loss_curve(const std::filesystem::path& path, const std::vector<EpochStats>& curve);

}  // namespace regtr
