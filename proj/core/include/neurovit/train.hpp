#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neurovit/archive.hpp"
#include "neurovit/volume.hpp"
#include "neurovit/vit.hpp"

namespace neurovit {

struct LossWeights {
  float bce = 0.5f;
  float dice = 0.5f;
};

struct TrainConfig {
  float lr = 1e-4f;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 0;
  float tau = 0.01f;  // foreground-ratio threshold for training blocks
  LossWeights loss_weights;
  float weight_decay = 0.0f;
  /// Save a checkpoint every N epochs into checkpoint_dir (0 = never).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

template <class T>
struct LossResult {
  double loss = 0.0;
  double bce = 0.0;
  double dice_term = 0.0;
  std::vector<T> dlogits;
};

/// w_bce * mean BCE(sigmoid(z), t) + w_dice * (1 - (2 sum(p t) + 1) / (sum p + sum t + 1)),
/// with BCE in its stable logit form. Returns the loss and d(loss)/d(logits).
template <class T>
LossResult<T> seg_loss(std::span<const T> logits, std::span<const T> target, const LossWeights& weights);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // mean item loss
  double dice = 0.0;  // mean hard Dice over batches
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;

  /// One {"epoch","loss","dice"} object per line.
  std::string to_jsonl() const;
};

struct FitResult {
  VitParams params;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch Adam training. Each epoch visits the pairs in a seeded
/// permutation; per-batch gradients are summed over items in index order,
/// so a fixed seed reproduces parameters bit for bit. Throws EmptyDataset
/// and NonFiniteLoss (with epoch and batch in the message).
FitResult fit(const VitConfig& cfg, VitParams init, std::span<const TrainingPair> dataset, const TrainConfig& train,
              const EpochCallback& on_epoch = {});

/// Trains a 2D model from a seeded random init on (slice, label) pairs and
/// exports it in canonical naming.
WeightArchive pretrain_2d(const VitConfig& cfg2d, std::span<const TrainingPair> slices, const TrainConfig& train,
                          TrainReport* report = nullptr, const EpochCallback& on_epoch = {});

void save_checkpoint(const VitParams& params, const std::filesystem::path& path);
VitParams load_checkpoint(const std::filesystem::path& path, const VitConfig& cfg);

/// Hard Dice of logits >= 0 against labels >= 0.5; 1 when both are empty.
double hard_dice(std::span<const float> logits, std::span<const float> labels);

}  // namespace neurovit
