#include "neurovit/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "neurovit/transfer.hpp"

namespace neurovit {

void TrainConfig::validate() const {
  if (!(lr > 0.0f)) throw Error(Errc::BadConfig, "train: lr must be positive");
  if (epochs < 0) throw Error(Errc::BadConfig, "train: epochs must be >= 0");
  if (batch_size < 1) throw Error(Errc::BadConfig, "train: batch_size must be >= 1");
  if (loss_weights.bce < 0.0f || loss_weights.dice < 0.0f || !(loss_weights.bce + loss_weights.dice > 0.0f)) {
    throw Error(Errc::BadConfig, "train: loss weights must be >= 0 with a positive sum");
  }
  if (checkpoint_every < 0) throw Error(Errc::BadConfig, "train: checkpoint_every must be >= 0");
  if (weight_decay < 0.0f) throw Error(Errc::BadConfig, "train: weight_decay must be >= 0");
}

template <class T>
LossResult<T> seg_loss(std::span<const T> logits, std::span<const T> target, const LossWeights& weights) {
  if (logits.size() != target.size() || logits.empty()) {
    throw Error(Errc::ShapeMismatch, "seg_loss: logits and target sizes differ");
  }
  const std::size_t n = logits.size();
  LossResult<T> r;
  r.dlogits.resize(n);
  std::vector<double> p(n);
  double bce = 0.0, inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double t = target[i];
    bce += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    p[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    inter += p[i] * t;
    sum_p += p[i];
    sum_t += t;
  }
  bce /= static_cast<double>(n);
  const double denom = sum_p + sum_t + 1.0;
  const double dice_ratio = (2.0 * inter + 1.0) / denom;
  r.bce = bce;
  r.dice_term = 1.0 - dice_ratio;
  r.loss = weights.bce * bce + weights.dice * r.dice_term;

  const double wb = weights.bce / static_cast<double>(n);
  const double wd = weights.dice;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = target[i];
    const double d_bce = p[i] - t;
    // d(1 - ratio)/dp_i = -(2 t_i * denom - (2I + 1)) / denom^2
    const double d_dice_dp = -(2.0 * t * denom - (2.0 * inter + 1.0)) / (denom * denom);
    r.dlogits[i] = static_cast<T>(wb * d_bce + wd * d_dice_dp * p[i] * (1.0 - p[i]));
  }
  return r;
}

template LossResult<float> seg_loss<float>(std::span<const float>, std::span<const float>, const LossWeights&);
template LossResult<double> seg_loss<double>(std::span<const double>, std::span<const double>, const LossWeights&);

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"dice", e.dice}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

double hard_dice(std::span<const float> logits, std::span<const float> labels) {
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool p = logits[i] >= 0.0f;
    const bool t = labels[i] >= 0.5f;
    inter += p && t;
    a += p;
    b += t;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

FitResult fit(const VitConfig& cfg, VitParams init, std::span<const TrainingPair> dataset, const TrainConfig& train,
              const EpochCallback& on_epoch) {
  cfg.validate();
  train.validate();
  check_params(init, cfg);
  if (dataset.empty()) throw Error(Errc::EmptyDataset, "training set is empty (after foreground filtering?)");
  const Dims3 want = cfg.block_dims();
  for (const auto& pair : dataset) {
    if (pair.image.size != want || pair.label.size != want || cfg.in_channels != 1) {
      throw Error(Errc::ShapeMismatch, "training block size does not match the model input");
    }
  }

  const auto start = std::chrono::steady_clock::now();
  FitResult out{std::move(init), {}};
  VitParams& params = out.params;
  auto tensors = params.flat_tensors();
  std::vector<AdamState> adam(tensors.size());
  AdamOptions opt;
  opt.lr = train.lr;
  opt.weight_decay = train.weight_decay;

  VitParams grads = params.zeros_like();
  auto grad_tensors = grads.flat_tensors();
  ForwardTrace<float> trace;
  const std::size_t n = dataset.size();
  const std::size_t bs = static_cast<std::size_t>(train.batch_size);

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    Rng rng(derive_seed(train.seed, static_cast<std::uint64_t>(epoch)));
    const auto order = rng.permutation(n);
    double loss_sum = 0.0;
    double dice_sum = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      for (auto* g : grad_tensors) std::fill(g->values().begin(), g->values().end(), 0.0f);
      std::size_t inter = 0, pred = 0, truth = 0;
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainingPair& item = dataset[order[k]];
        const Tensor logits = forward_train<float>(params, cfg, item.image.data, trace);
        auto loss = seg_loss<float>(logits.data(), item.label.data, train.loss_weights);
        if (!std::isfinite(loss.loss)) {
          throw Error(Errc::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                               std::to_string(batches));
        }
        loss_sum += loss.loss;
        backward<float>(params, cfg, trace, Tensor(logits.shape(), std::move(loss.dlogits)), grads);
        for (std::size_t i = 0; i < logits.size(); ++i) {
          const bool p = logits[i] >= 0.0f;
          const bool t = item.label.data[i] >= 0.5f;
          inter += p && t;
          pred += p;
          truth += t;
        }
      }
      dice_sum += pred + truth == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(pred + truth);
      for (std::size_t t = 0; t < tensors.size(); ++t) {
        adam_step(tensors[t]->data(), grad_tensors[t]->data(), adam[t], opt);
      }
      ++batches;
    }
    EpochStats stats{epoch + 1, loss_sum / static_cast<double>(n), dice_sum / batches};
    out.report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (train.checkpoint_every > 0 && !train.checkpoint_dir.empty() && (epoch + 1) % train.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.nwa", epoch + 1);
      save_checkpoint(params, train.checkpoint_dir / name);
    }
  }
  out.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

WeightArchive pretrain_2d(const VitConfig& cfg2d, std::span<const TrainingPair> slices, const TrainConfig& train,
                          TrainReport* report, const EpochCallback& on_epoch) {
  if (cfg2d.kind != ModelKind::TwoD) throw Error(Errc::BadConfig, "pretrain_2d needs a 2D model config");
  Rng rng(derive_seed(train.seed, 0x707265ULL));
  auto result = fit(cfg2d, init_params(cfg2d, rng), slices, train, on_epoch);
  if (report) *report = result.report;
  return to_archive(result.params);
}

void save_checkpoint(const VitParams& params, const std::filesystem::path& path) {
  write_archive(to_archive(params), path);
}

VitParams load_checkpoint(const std::filesystem::path& path, const VitConfig& cfg) {
  return from_archive(read_archive(path), cfg);
}

}  // namespace neurovit
