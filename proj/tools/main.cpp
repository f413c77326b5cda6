// neurovit: command-line driver for synthesis, training, transfer and scoring.

#include <charconv>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "neurovit/experiment.hpp"
#include "neurovit/io.hpp"

namespace fs = std::filesystem;
using namespace neurovit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string strategy;
  std::string init = "scratch";
  float threshold = 0.5f;
  std::string input;
  std::string data_dir;
  std::string checkpoint;
  std::string volume;
  std::string pred;
  std::string gt;
  std::string swc;
  std::string dims;
  std::string mode = "binary";
  std::string pretrained;
  std::vector<std::uint64_t> seeds;
  int count = 0;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (!o.strategy.empty()) cfg.strategy = parse_strategy(o.strategy);
  return cfg;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw CLI::RequiredError("--out");
  return o.out;
}

Volume3D read_volume(const fs::path& p) { return load_raw(p, meta_path_for(p)); }
void write_volume(const Volume3D& v, const fs::path& p) { save_raw(v, p, meta_path_for(p)); }

// Model kind of a stored parameter set, from the rank of its patch kernel.
VitConfig model_for_archive(const ExperimentConfig& cfg, const WeightArchive& a) {
  return a.get("patch_embed.w").rank() == 4 ? cfg.model2d() : cfg.model3d();
}

Dims3 parse_dims(const std::string& text) {
  int v[3];
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, v[i]);
    if (ec != std::errc() || v[i] < 1) throw Error(Errc::BadConfig, "--dims must look like W,H,D with positive values");
    p = next;
    if (i < 2) {
      if (p == end || *p != ',') throw Error(Errc::BadConfig, "--dims must look like W,H,D");
      ++p;
    }
  }
  if (p != end) throw Error(Errc::BadConfig, "--dims must look like W,H,D");
  return {v[0], v[1], v[2]};
}

std::vector<TrainingPair> pairs_from_dir(const fs::path& dir, Dims3 block, float tau) {
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("samples") || !manifest["samples"].is_array()) {
    throw Error(Errc::BadMeta, (dir / "manifest.json").string() + ": missing or malformed samples list");
  }
  std::vector<TrainingPair> pairs;
  for (const auto& s : manifest["samples"]) {
    if (!s.contains("image") || !s.contains("label")) throw Error(Errc::BadMeta, "manifest entry lacks image/label");
    const Volume3D image = read_volume(dir / s["image"].get<std::string>());
    const Volume3D label = read_volume(dir / s["label"].get<std::string>());
    auto more = make_pairs(image, label, block, tau);
    pairs.insert(pairs.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return pairs;
}

void print_jsonl(const EpochStats& e) {
  nlohmann::ordered_json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"dice", e.dice}};
  std::cout << j.dump() << '\n' << std::flush;
}

int cmd_synth(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  if (o.seed) cfg.synth.seed = *o.seed;
  const fs::path dir = o.out.empty() ? cfg.data_dir : fs::path(o.out);
  const int n = o.count > 0 ? o.count : cfg.train_volumes + cfg.test_volumes;
  const auto manifest = write_synthetic_dataset(cfg.synth, n, cfg.label_mode, dir);
  std::cout << manifest.dump(2) << '\n';
  return kExitOk;
}

int cmd_labelgen(const Options& o) {
  const auto m = load_swc(o.swc);
  LabelMode mode;
  if (o.mode == "binary") {
    mode = LabelMode::Binary;
  } else if (o.mode == "soft") {
    mode = LabelMode::Soft;
  } else {
    throw Error(Errc::BadConfig, "--mode must be binary or soft");
  }
  write_volume(rasterize_labels(m, parse_dims(o.dims), mode), require_out(o));
  return kExitOk;
}

int cmd_pretrain2d(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  if (o.seed) cfg.pretrain.seed = *o.seed;
  const fs::path out = o.out.empty() ? cfg.pretrained : fs::path(o.out);
  const auto slices = o.data_dir.empty() ? pretrain_slices(cfg)
                                         : pairs_from_dir(o.data_dir, cfg.model2d().block_dims(), cfg.pretrain.tau);
  write_archive(pretrain_2d(cfg.model2d(), slices, cfg.pretrain, nullptr, print_jsonl), out);
  return kExitOk;
}

int cmd_transfer(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  const auto src = read_archive(o.input);
  Rng rng(derive_seed(o.seed.value_or(cfg.train.seed), 0x696e6974ULL));
  std::vector<TransferEntry> report;
  const VitParams p = transfer_weights(src, cfg.model3d(), cfg.strategy, rng, &report);
  write_archive(to_archive(p), require_out(o));
  std::printf("%-24s %-16s %-18s %s\n", "tensor", "provenance", "source", "target");
  for (const auto& e : report) {
    const std::string from = e.source_shape.empty() ? "-" : shape_string(e.source_shape);
    std::printf("%-24s %-16s %-18s %s\n", e.name.c_str(), std::string(provenance_name(e.how)).c_str(), from.c_str(),
                shape_string(e.target_shape).c_str());
  }
  return kExitOk;
}

int cmd_train3d(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  if (o.seed) cfg.train.seed = *o.seed;
  const VitConfig model = cfg.model3d();
  const fs::path data = o.data_dir.empty() ? cfg.data_dir : fs::path(o.data_dir);
  const auto pairs = pairs_from_dir(data, model.block_dims(), cfg.train.tau);
  Rng rng(derive_seed(cfg.train.seed, 0x696e6974ULL));
  VitParams init;
  if (o.init == "scratch") {
    init = init_params(model, rng);
  } else if (o.init.rfind("archive:", 0) == 0) {
    const auto src = read_archive(o.init.substr(8));
    init = src.get("patch_embed.w").rank() == 5 ? from_archive(src, model)
                                               : transfer_weights(src, model, cfg.strategy, rng);
  } else {
    throw CLI::ValidationError("--init", "expected scratch or archive:<path>");
  }
  const auto result = fit(model, std::move(init), pairs, cfg.train, print_jsonl);
  save_checkpoint(result.params, require_out(o));
  return kExitOk;
}

int cmd_infer(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const auto archive = read_archive(o.checkpoint);
  const VitConfig model = model_for_archive(cfg, archive);
  const VitParams params = from_archive(archive, model);
  write_volume(predict_volume(params, model, read_volume(o.volume)), require_out(o));
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const auto pred = BinaryMask::from_volume(read_volume(o.pred), o.threshold);
  const auto truth = BinaryMask::from_volume(read_volume(o.gt), 0.5f);
  const VolumeEval r = evaluate_masks(pred, truth);
  nlohmann::ordered_json j;
  j["dice"] = static_cast<double>(r.dice);
  j["hd95"] = r.hd95 ? nlohmann::ordered_json(static_cast<double>(*r.hd95)) : nlohmann::ordered_json(nullptr);
  if (!r.failure.empty()) j["hd95_failure"] = r.failure;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_bench(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.seed) cfg.synth.seed = *o.seed;
  cfg.validate();
  const fs::path out = o.out.empty() ? cfg.out_dir : fs::path(o.out);

  WeightArchive pretrained;
  if (!o.pretrained.empty()) {
    pretrained = read_archive(o.pretrained);
  } else {
    std::cerr << "pre-training 2D model on " << cfg.pretrain_volumes << " volumes\n";
    pretrained = build_pretrained(cfg);
    write_archive(pretrained, out / "pretrained_2d.nwa");
  }
  const auto result = run_bench(cfg, pretrained, [](const BenchRowSpec& row, std::uint64_t seed, const EvalResult& r) {
    std::cerr << "seed " << seed << "  " << row_model_name(row) << " / " << row_pretrained_name(row) << " / "
              << row_strategy_name(row) << "  dice " << r.dice << '\n';
  });
  write_file_atomic(out / "bench.json", result.to_json(cfg).dump(2) + "\n");
  const std::string md = result.to_markdown();
  write_file_atomic(out / "bench.md", md);
  std::cout << md;
  return kExitOk;
}

int cmd_inspect(const Options& o) {
  const auto a = read_archive(o.input);
  std::size_t total = 0;
  for (const auto& [name, t] : a) {
    std::printf("%-24s %s\n", name.c_str(), shape_string(t.shape()).c_str());
    total += t.size();
  }
  std::printf("%zu tensors, %zu values\n", a.size(), total);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neurovit: 2D-to-3D ViT transfer for neuron segmentation"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "experiment TOML")->check(CLI::ExistingFile); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "override the relevant seed"); };

  auto* synth = app.add_subcommand("synth", "write synthetic volumes, labels and SWC files");
  add_config(synth);
  add_seed(synth);
  synth->add_option("--out", o.out, "output directory (default paths.data_dir)");
  synth->add_option("--count", o.count, "number of samples (default train + test volumes)");

  auto* labelgen = app.add_subcommand("labelgen", "rasterize an SWC file into a label volume");
  labelgen->add_option("--swc", o.swc)->required()->check(CLI::ExistingFile);
  labelgen->add_option("--dims", o.dims, "W,H,D")->required();
  labelgen->add_option("--mode", o.mode, "binary or soft");
  labelgen->add_option("--out", o.out, "output .raw (sidecar .json is written next to it)")->required();

  auto* pretrain = app.add_subcommand("pretrain2d", "train the 2D model on z-slices and export an archive");
  add_config(pretrain);
  add_seed(pretrain);
  pretrain->add_option("--data", o.data_dir, "dataset directory (default: synthesize from the config)");
  pretrain->add_option("--out", o.out, "archive path (default paths.pretrained)");

  auto* transfer = app.add_subcommand("transfer", "inflate a 2D archive into 3D parameters");
  add_config(transfer);
  add_seed(transfer);
  transfer->add_option("--in", o.input, "2D archive")->required()->check(CLI::ExistingFile);
  transfer->add_option("--strategy", o.strategy, "average or center")->check(CLI::IsMember({"average", "center"}));
  transfer->add_option("--out", o.out)->required();

  auto* train3d = app.add_subcommand("train3d", "train the 3D model; prints one JSON line per epoch");
  add_config(train3d);
  add_seed(train3d);
  train3d->add_option("--init", o.init, "scratch or archive:<path>");
  train3d->add_option("--strategy", o.strategy, "average or center")->check(CLI::IsMember({"average", "center"}));
  train3d->add_option("--data", o.data_dir, "dataset directory (default paths.data_dir)");
  train3d->add_option("--out", o.out, "checkpoint path")->required();

  auto* infer = app.add_subcommand("infer", "predict a probability volume");
  add_config(infer);
  infer->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  infer->add_option("--volume", o.volume)->required()->check(CLI::ExistingFile);
  infer->add_option("--out", o.out)->required();

  auto* eval = app.add_subcommand("eval", "Dice and Hd95 of a prediction; JSON on stdout");
  eval->add_option("--pred", o.pred)->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", o.gt)->required()->check(CLI::ExistingFile);
  eval->add_option("--threshold", o.threshold, "foreground threshold for the prediction");

  auto* bench = app.add_subcommand("bench", "run the scratch/transfer comparison over several seeds");
  add_config(bench);
  add_seed(bench);
  bench->add_option("--seeds", o.seeds, "benchmark seeds (default bench.seeds)")->delimiter(',');
  bench->add_option("--pretrained", o.pretrained, "reuse this 2D archive instead of pre-training")
      ->check(CLI::ExistingFile);
  bench->add_option("--out", o.out, "output directory (default paths.out_dir)");

  auto* inspect = app.add_subcommand("inspect", "list the tensors of an archive");
  inspect->add_option("archive", o.input)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[Usage]: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*labelgen) return cmd_labelgen(o);
    if (*pretrain) return cmd_pretrain2d(o);
    if (*transfer) return cmd_transfer(o);
    if (*train3d) return cmd_train3d(o);
    if (*infer) return cmd_infer(o);
    if (*eval) return cmd_eval(o);
    if (*bench) return cmd_bench(o);
    if (*inspect) return cmd_inspect(o);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[Usage]: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error[" << errc_name(e.code()) << "]: ";
    if (e.line() > 0) std::cerr << "line " << e.line() << ": ";
    std::cerr << e.what() << '\n';
    return is_numeric_failure(e.code()) ? kExitNumeric : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error[Io]: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
