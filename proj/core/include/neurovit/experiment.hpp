#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurovit/groundtruth.hpp"
#include "neurovit/metrics.hpp"
#include "neurovit/train.hpp"
#include "neurovit/transfer.hpp"

namespace neurovit {

/// Everything one experiment needs, read from TOML. Every key is optional;
/// unknown keys are rejected so typos do not silently fall back.
///
///   [synth]    seed, width, height, depth, trees, steps, step_len,
///              branch_prob, radius_min, radius_max, noise_sigma, psf_sigma,
///              foreground, background, max_turn, z_heading_scale,
///              label_mode ("binary" | "soft")
///   [data]     train_volumes, test_volumes, pretrain_volumes
///   [model]    img_h, img_w, patch, depth, in_channels, embed_dim, layers, heads, mlp_ratio
///   [train]    lr, epochs, batch_size, seed, tau, w_bce, w_dice, weight_decay,
///              checkpoint_every, checkpoint_dir
///   [pretrain] same keys as [train]
///   [transfer] strategy ("average" | "center")
///   [eval]     threshold
///   [bench]    seeds
///   [paths]    data_dir, pretrained, out_dir
struct ExperimentConfig {
  SynthParams synth;
  LabelMode label_mode = LabelMode::Binary;
  int train_volumes = 2;
  int test_volumes = 2;
  int pretrain_volumes = 16;

  /// Shared encoder geometry; model2d()/model3d() pick the kind.
  VitConfig model;
  TrainConfig train;
  TrainConfig pretrain;
  TransferStrategy strategy = TransferStrategy::Center;
  float threshold = 0.5f;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  std::filesystem::path data_dir = "data";
  std::filesystem::path pretrained = "pretrained_2d.nwa";
  std::filesystem::path out_dir = "out";

  ExperimentConfig();

  VitConfig model2d() const;
  VitConfig model3d() const;

  /// Throws BadConfig (or the component's own error) on any inconsistency.
  void validate() const;
};

ExperimentConfig parse_experiment_config(std::string_view toml_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Tiles image and label with blocks of `block` and keeps pairs whose label
/// foreground ratio is >= tau. A depth-1 block yields 2D slice pairs.
std::vector<TrainingPair> make_pairs(const Volume3D& image, const Volume3D& label, Dims3 block, float tau);

/// Synthetic samples [first, first + count) of `params`.
std::vector<SyntheticSample> synthesize_range(const SynthParams& params, int first, int count, LabelMode mode);

/// Writes sample_NNN.{raw,json,swc} and sample_NNN_label.{raw,json} plus a
/// manifest.json listing them. Returns the manifest.
nlohmann::ordered_json write_synthetic_dataset(const SynthParams& params, int count, LabelMode mode,
                                               const std::filesystem::path& dir);

/// Slice-stacked 2D pairs for pre-training, drawn from a stream independent
/// of every benchmark seed.
std::vector<TrainingPair> pretrain_slices(const ExperimentConfig& cfg);

/// The pre-trained 2D archive the benchmark transfers from.
WeightArchive build_pretrained(const ExperimentConfig& cfg, TrainReport* report = nullptr);

enum class BenchInit { Scratch, Pretrained };

struct BenchRowSpec {
  ModelKind kind;
  BenchInit init;
  std::optional<TransferStrategy> strategy;  // 3D transfer only
};

/// The five rows of the comparison, in report order.
std::vector<BenchRowSpec> bench_rows();

struct SeedScore {
  std::uint64_t seed = 0;
  EvalResult eval;
};

struct BenchRow {
  BenchRowSpec spec;
  int input_depth = 1;
  std::vector<SeedScore> per_seed;
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;  // over volumes where hd95 is defined
  int hd95_failures = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;

  nlohmann::ordered_json to_json(const ExperimentConfig& cfg) const;
  std::string to_markdown() const;
};

/// Train volumes, test volumes for one benchmark seed.
struct SeedData {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> test;
};
SeedData bench_data(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trains and scores one row on one seed.
EvalResult run_bench_cell(const ExperimentConfig& cfg, const WeightArchive& pretrained, const BenchRowSpec& row,
                          std::uint64_t seed, const SeedData& data);

using BenchProgress = std::function<void(const BenchRowSpec&, std::uint64_t seed, const EvalResult&)>;

/// Runs every row on every seed against one shared pre-trained archive.
BenchResult run_bench(const ExperimentConfig& cfg, const WeightArchive& pretrained, const BenchProgress& progress = {});

std::string row_model_name(const BenchRowSpec& row);
std::string row_pretrained_name(const BenchRowSpec& row);
std::string row_strategy_name(const BenchRowSpec& row);

}  // namespace neurovit
