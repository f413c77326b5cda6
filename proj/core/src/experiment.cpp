#include "neurovit/experiment.hpp"

#include <cstdio>
#include <set>

#include <toml.hpp>

#include "neurovit/io.hpp"

namespace neurovit {
namespace {

constexpr std::uint64_t kPretrainStream = 0x707265747261696eULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;
constexpr std::uint64_t kFitStream = 0x666974ULL;

[[noreturn]] void bad(const std::string& msg) { throw Error(Errc::BadConfig, msg); }

// Typed access to one TOML table that remembers which keys were consumed.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value_exact<bool>();
      if (!v) fail(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value_exact<std::int64_t>();
      if (!v) fail(key, "an integer");
      if (std::is_unsigned_v<T> && *v < 0) fail(key, "a non-negative integer");
      if (*v > static_cast<std::int64_t>(std::numeric_limits<int>::max()) && sizeof(T) <= sizeof(int)) {
        fail(key, "a smaller integer");
      }
      out = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();  // integers are accepted for floats
      if (!v) fail(key, "a number");
      out = static_cast<T>(*v);
    } else {
      auto v = node->value_exact<std::string>();
      if (!v) fail(key, "a string");
      out = T(*v);
    }
  }

  void read_seeds(const char* key, std::vector<std::uint64_t>& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr) fail(key, "an array of integers");
    out.clear();
    for (const auto& el : *arr) {
      auto v = el.value_exact<std::int64_t>();
      if (!v || *v < 0) fail(key, "an array of non-negative integers");
      out.push_back(static_cast<std::uint64_t>(*v));
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.contains(std::string(k.str()))) bad("unknown key '" + name_ + "." + std::string(k.str()) + "'");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* what) const {
    bad("'" + name_ + "." + key + "' must be " + what);
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_train(Section& s, TrainConfig& t) {
  s.read("lr", t.lr);
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("seed", t.seed);
  s.read("tau", t.tau);
  s.read("w_bce", t.loss_weights.bce);
  s.read("w_dice", t.loss_weights.dice);
  s.read("weight_decay", t.weight_decay);
  s.read("checkpoint_every", t.checkpoint_every);
  s.read("checkpoint_dir", t.checkpoint_dir);
  s.finish();
}

nlohmann::ordered_json train_json(const TrainConfig& t) {
  return {{"lr", t.lr},          {"epochs", t.epochs}, {"batch_size", t.batch_size},
          {"seed", t.seed},      {"tau", t.tau},       {"w_bce", t.loss_weights.bce},
          {"w_dice", t.loss_weights.dice}, {"weight_decay", t.weight_decay}};
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  model.img_h = 16;
  model.img_w = 16;
  model.patch = 4;
  model.depth = 5;
  model.embed_dim = 32;
  model.layers = 2;
  model.heads = 4;
  model.mlp_ratio = 4;
  train.lr = 1e-3f;
  train.epochs = 40;
  train.batch_size = 8;
  pretrain = train;
  pretrain.epochs = 10;
}

VitConfig ExperimentConfig::model2d() const {
  VitConfig c = model;
  c.kind = ModelKind::TwoD;
  return c;
}

VitConfig ExperimentConfig::model3d() const {
  VitConfig c = model;
  c.kind = ModelKind::ThreeD;
  return c;
}

void ExperimentConfig::validate() const {
  synth.validate();
  model2d().validate();
  model3d().validate();
  train.validate();
  pretrain.validate();
  if (model.in_channels != 1) bad("model.in_channels must be 1 for single-channel volumes");
  if (train_volumes < 1 || test_volumes < 1 || pretrain_volumes < 1) bad("data volume counts must be >= 1");
  if (!(threshold > 0.0f && threshold < 1.0f)) bad("eval.threshold must be in (0, 1)");
  if (seeds.empty()) bad("bench.seeds must not be empty");
  if (model.img_w > synth.dims.w || model.img_h > synth.dims.h || model.depth > synth.dims.d) {
    bad("model block is larger than the synthetic volume");
  }
}

ExperimentConfig parse_experiment_config(std::string_view toml_text) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    const auto& src = e.source();
    throw Error(Errc::BadConfig, "toml: " + std::string(e.description()), static_cast<std::int64_t>(src.begin.line));
  }
  ExperimentConfig cfg;
  static const std::set<std::string> sections{"synth", "data", "model", "train", "pretrain",
                                              "transfer", "eval", "bench", "paths"};
  for (const auto& [k, v] : doc) {
    if (!sections.contains(std::string(k.str()))) bad("unknown section '" + std::string(k.str()) + "'");
    if (!v.is_table()) bad("'" + std::string(k.str()) + "' must be a table");
  }

  {
    Section s(doc["synth"].as_table(), "synth");
    auto& p = cfg.synth;
    s.read("seed", p.seed);
    s.read("width", p.dims.w);
    s.read("height", p.dims.h);
    s.read("depth", p.dims.d);
    s.read("trees", p.n_trees);
    s.read("steps", p.steps);
    s.read("step_len", p.step_len);
    s.read("branch_prob", p.branch_prob);
    s.read("radius_min", p.radius_range.first);
    s.read("radius_max", p.radius_range.second);
    s.read("noise_sigma", p.noise_sigma);
    s.read("psf_sigma", p.psf_sigma);
    s.read("foreground", p.foreground_intensity);
    s.read("background", p.background_intensity);
    s.read("max_turn", p.max_turn);
    s.read("z_heading_scale", p.z_heading_scale);
    std::string mode = "binary";
    s.read("label_mode", mode);
    if (mode == "binary") {
      cfg.label_mode = LabelMode::Binary;
    } else if (mode == "soft") {
      cfg.label_mode = LabelMode::Soft;
    } else {
      bad("synth.label_mode must be \"binary\" or \"soft\"");
    }
    s.finish();
  }
  {
    Section s(doc["data"].as_table(), "data");
    s.read("train_volumes", cfg.train_volumes);
    s.read("test_volumes", cfg.test_volumes);
    s.read("pretrain_volumes", cfg.pretrain_volumes);
    s.finish();
  }
  {
    Section s(doc["model"].as_table(), "model");
    auto& m = cfg.model;
    s.read("img_h", m.img_h);
    s.read("img_w", m.img_w);
    s.read("patch", m.patch);
    s.read("depth", m.depth);
    s.read("in_channels", m.in_channels);
    s.read("embed_dim", m.embed_dim);
    s.read("layers", m.layers);
    s.read("heads", m.heads);
    s.read("mlp_ratio", m.mlp_ratio);
    s.finish();
  }
  {
    Section s(doc["train"].as_table(), "train");
    read_train(s, cfg.train);
  }
  {
    Section s(doc["pretrain"].as_table(), "pretrain");
    read_train(s, cfg.pretrain);
  }
  {
    Section s(doc["transfer"].as_table(), "transfer");
    std::string name(strategy_name(cfg.strategy));
    s.read("strategy", name);
    cfg.strategy = parse_strategy(name);
    s.finish();
  }
  {
    Section s(doc["eval"].as_table(), "eval");
    s.read("threshold", cfg.threshold);
    s.finish();
  }
  {
    Section s(doc["bench"].as_table(), "bench");
    s.read_seeds("seeds", cfg.seeds);
    s.finish();
  }
  {
    Section s(doc["paths"].as_table(), "paths");
    s.read("data_dir", cfg.data_dir);
    s.read("pretrained", cfg.pretrained);
    s.read("out_dir", cfg.out_dir);
    s.finish();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_text_file(path));
}

std::vector<TrainingPair> make_pairs(const Volume3D& image, const Volume3D& label, Dims3 block, float tau) {
  const auto spec = BlockGridSpec::tiling(block);
  const auto images = blockify(image, spec);
  const auto labels = blockify(label, spec);
  return filter_training_blocks(images, labels, tau);
}

std::vector<SyntheticSample> synthesize_range(const SynthParams& params, int first, int count, LabelMode mode) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(synthesize_sample(params, first + i, mode));
  return out;
}

nlohmann::ordered_json write_synthetic_dataset(const SynthParams& params, int count, LabelMode mode,
                                               const std::filesystem::path& dir) {
  nlohmann::ordered_json manifest;
  manifest["seed"] = params.seed;
  manifest["dims"] = {params.dims.w, params.dims.h, params.dims.d};
  manifest["label_mode"] = mode == LabelMode::Binary ? "binary" : "soft";
  auto& samples = manifest["samples"] = nlohmann::ordered_json::array();
  for (int i = 0; i < count; ++i) {
    const auto s = synthesize_sample(params, i, mode);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%03d", i);
    const std::string base = stem;
    save_raw(s.image, dir / (base + ".raw"), dir / (base + ".json"));
    save_raw(s.label, dir / (base + "_label.raw"), dir / (base + "_label.json"));
    save_swc(s.morphology, dir / (base + ".swc"));
    samples.push_back({{"image", base + ".raw"}, {"label", base + "_label.raw"}, {"swc", base + ".swc"}});
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file_atomic(dir / "manifest.json", std::string_view(text));
  return manifest;
}

std::vector<TrainingPair> pretrain_slices(const ExperimentConfig& cfg) {
  SynthParams p = cfg.synth;
  p.seed = derive_seed(cfg.synth.seed, kPretrainStream);
  const Dims3 slice = cfg.model2d().block_dims();
  std::vector<TrainingPair> pairs;
  for (const auto& s : synthesize_range(p, 0, cfg.pretrain_volumes, cfg.label_mode)) {
    auto more = make_pairs(s.image, s.label, slice, cfg.pretrain.tau);
    pairs.insert(pairs.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return pairs;
}

WeightArchive build_pretrained(const ExperimentConfig& cfg, TrainReport* report) {
  const auto slices = pretrain_slices(cfg);
  return pretrain_2d(cfg.model2d(), slices, cfg.pretrain, report);
}

std::vector<BenchRowSpec> bench_rows() {
  return {
      {ModelKind::TwoD, BenchInit::Scratch, std::nullopt},
      {ModelKind::TwoD, BenchInit::Pretrained, std::nullopt},
      {ModelKind::ThreeD, BenchInit::Scratch, std::nullopt},
      {ModelKind::ThreeD, BenchInit::Pretrained, TransferStrategy::Average},
      {ModelKind::ThreeD, BenchInit::Pretrained, TransferStrategy::Center},
  };
}

std::string row_model_name(const BenchRowSpec& row) { return row.kind == ModelKind::TwoD ? "2D ViT" : "3D ViT"; }

std::string row_pretrained_name(const BenchRowSpec& row) {
  return row.init == BenchInit::Scratch ? "none" : "2D synthetic";
}

std::string row_strategy_name(const BenchRowSpec& row) {
  return row.strategy ? std::string(strategy_name(*row.strategy)) : "-";
}

SeedData bench_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SynthParams p = cfg.synth;
  p.seed = derive_seed(cfg.synth.seed, seed);
  SeedData d;
  d.train = synthesize_range(p, 0, cfg.train_volumes, cfg.label_mode);
  d.test = synthesize_range(p, cfg.train_volumes, cfg.test_volumes, cfg.label_mode);
  return d;
}

EvalResult run_bench_cell(const ExperimentConfig& cfg, const WeightArchive& pretrained, const BenchRowSpec& row,
                          std::uint64_t seed, const SeedData& data) {
  const VitConfig model = row.kind == ModelKind::TwoD ? cfg.model2d() : cfg.model3d();
  std::vector<TrainingPair> pairs;
  for (const auto& s : data.train) {
    auto more = make_pairs(s.image, s.label, model.block_dims(), cfg.train.tau);
    pairs.insert(pairs.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  Rng init_rng(derive_seed(seed, kInitStream));
  VitParams init = row.init == BenchInit::Scratch
                       ? init_params(model, init_rng)
                       : transfer_weights(pretrained, model, row.strategy.value_or(cfg.strategy), init_rng);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, kFitStream);
  tc.checkpoint_every = 0;
  const FitResult fitted = fit(model, std::move(init), pairs, tc);

  std::vector<VolumeEval> scores;
  for (const auto& s : data.test) {
    const Volume3D prob = predict_volume(fitted.params, model, s.image);
    scores.push_back(evaluate_masks(BinaryMask::from_volume(prob, cfg.threshold), BinaryMask::from_volume(s.label)));
  }
  return aggregate(std::move(scores));
}

BenchResult run_bench(const ExperimentConfig& cfg, const WeightArchive& pretrained, const BenchProgress& progress) {
  cfg.validate();
  BenchResult result;
  for (const auto& spec : bench_rows()) {
    BenchRow row;
    row.spec = spec;
    row.input_depth = spec.kind == ModelKind::TwoD ? 1 : cfg.model.depth;
    result.rows.push_back(std::move(row));
  }
  for (const auto seed : cfg.seeds) {
    const SeedData data = bench_data(cfg, seed);
    for (auto& row : result.rows) {
      EvalResult r = run_bench_cell(cfg, pretrained, row.spec, seed, data);
      if (progress) progress(row.spec, seed, r);
      row.per_seed.push_back({seed, std::move(r)});
    }
  }
  for (auto& row : result.rows) {
    double dice_sum = 0.0, hd_sum = 0.0;
    int vols = 0, hd_n = 0;
    for (const auto& s : row.per_seed) {
      for (const auto& v : s.eval.per_volume) {
        dice_sum += v.dice;
        ++vols;
        if (v.hd95) {
          hd_sum += *v.hd95;
          ++hd_n;
        } else {
          ++row.hd95_failures;
        }
      }
    }
    row.mean_dice = vols > 0 ? dice_sum / vols : 0.0;
    if (hd_n > 0) row.mean_hd95 = hd_sum / hd_n;
  }
  return result;
}

nlohmann::ordered_json BenchResult::to_json(const ExperimentConfig& cfg) const {
  using J = nlohmann::ordered_json;
  J j;
  const auto& m = cfg.model;
  const auto& p = cfg.synth;
  j["config"] = {
      {"seeds", cfg.seeds},
      {"synth", {{"seed", p.seed}, {"dims", {p.dims.w, p.dims.h, p.dims.d}}, {"trees", p.n_trees}, {"steps", p.steps}}},
      {"data",
       {{"train_volumes", cfg.train_volumes}, {"test_volumes", cfg.test_volumes},
        {"pretrain_volumes", cfg.pretrain_volumes}}},
      {"model",
       {{"img_h", m.img_h}, {"img_w", m.img_w}, {"patch", m.patch}, {"depth", m.depth}, {"embed_dim", m.embed_dim},
        {"layers", m.layers}, {"heads", m.heads}, {"mlp_ratio", m.mlp_ratio}}},
      {"train", train_json(cfg.train)},
      {"pretrain", train_json(cfg.pretrain)},
      {"threshold", cfg.threshold},
  };
  auto& rows_j = j["rows"] = J::array();
  for (const auto& r : rows) {
    J row;
    row["model"] = row_model_name(r.spec);
    row["pretrained_weights"] = row_pretrained_name(r.spec);
    row["transferring_strategy"] = row_strategy_name(r.spec);
    row["input_depth"] = r.input_depth;
    row["mean_dice"] = r.mean_dice;
    row["mean_hd95"] = r.mean_hd95 ? J(*r.mean_hd95) : J(nullptr);
    row["hd95_failures"] = r.hd95_failures;
    auto& seeds = row["per_seed"] = J::array();
    for (const auto& s : r.per_seed) {
      seeds.push_back({{"seed", s.seed},
                       {"dice", s.eval.dice},
                       {"hd95", s.eval.hd95 ? J(*s.eval.hd95) : J(nullptr)},
                       {"hd95_failures", s.eval.hd95_failures}});
    }
    rows_j.push_back(std::move(row));
  }
  return j;
}

std::string BenchResult::to_markdown() const {
  std::string out =
      "| Model | Pre-trained Weights | Transferring Strategy | Input Depth | Mean Dice | Mean Hd95 |\n"
      "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string hd = r.mean_hd95 ? fixed(*r.mean_hd95, 3) : "n/a";
    if (r.hd95_failures > 0) hd += " (" + std::to_string(r.hd95_failures) + " undefined)";
    out += "| " + row_model_name(r.spec) + " | " + row_pretrained_name(r.spec) + " | " + row_strategy_name(r.spec) +
           " | " + std::to_string(r.input_depth) + " | " + fixed(r.mean_dice, 4) + " | " + hd + " |\n";
  }
  return out;
}

}  // namespace neurovit
