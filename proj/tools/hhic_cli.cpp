// Command-line entry point: generate-data, train, eval, sweep.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hhic/data_synth.hpp"
#include "hhic/error.hpp"
#include "hhic/harness.hpp"
#include "hhic/logging.hpp"

namespace fs = std::filesystem;
using namespace hhic;

namespace {

constexpr int kExitError = 1;
constexpr int kExitDiverged = 3;

std::string sibling_csv(const std::string& json_path) {
  return fs::path(json_path).replace_extension(".csv").string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

int cmd_generate(const std::string& spec_path, const std::string& out,
                 std::optional<std::uint64_t> seed) {
  DatasetSpec spec = DatasetSpec::from_config(KeyValueConfig::load(spec_path));
  if (seed) spec.seed = *seed;
  const std::string manifest = generate_dataset(spec, out);
  spdlog::info("wrote {} / {} / {} scenes, manifest {}", spec.scenes_per_split[0],
               spec.scenes_per_split[1], spec.scenes_per_split[2], manifest);
  std::cout << manifest << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::vector<std::string>& overrides, const std::string& resume) {
  KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
  for (const auto& o : overrides) kv.set_assignment(o);
  const TrainConfig cfg = TrainConfig::from_config(kv);
  const Manifest manifest = load_manifest(data);
  LoadedSplit train = LoadedSplit::load(manifest.load_split("train"));
  std::optional<LoadedSplit> val;
  if (cfg.eval_each_epoch && manifest.splits.count(cfg.eval_split))
    val = LoadedSplit::load(manifest.load_split(cfg.eval_split));
  fs::create_directories(out);
  {
    std::ofstream f(fs::path(out) / "config.txt");
    f << cfg.to_config_text();
  }
  spdlog::info("training on {} scenes, {} classes, {} epochs", train.size(), train.num_classes,
               cfg.epochs);
  Trainer::Options opts;
  opts.out_dir = out;
  Trainer trainer(cfg, std::move(train), std::move(val), opts);
  if (!resume.empty()) {
    trainer.resume(resume);
    spdlog::info("resumed from {} at epoch {}", resume, trainer.next_epoch());
  }
  try {
    const TrainResult result = trainer.run();
    nlohmann::ordered_json summary;
    summary["last_checkpoint"] = result.last_checkpoint;
    summary["best_checkpoint"] = result.best_checkpoint;
    summary["best_val_ap50"] = result.best_val_ap50;
    summary["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : result.epochs) {
      nlohmann::ordered_json row{{"epoch", e.epoch}, {"mean_total", e.mean_total}};
      if (e.val) {
        row["val_ap50"] = e.val->ap50;
        row["val_ap"] = e.val->ap;
      }
      summary["epochs"].push_back(row);
    }
    std::ofstream(fs::path(out) / "train_summary.json") << summary.dump(2) << "\n";
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    std::cerr << "last good checkpoint: "
              << (e.last_good_checkpoint().empty() ? "<none>" : e.last_good_checkpoint()) << "\n";
    return kExitDiverged;
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out,
             const std::string& split) {
  const Manifest manifest = load_manifest(data);
  const LoadedSplit scenes = LoadedSplit::load(manifest.load_split(split));
  const EvalReport report = evaluate_checkpoint(checkpoint, scenes);
  ensure_parent(out);
  report.write_json(out);
  report.write_csv(sibling_csv(out));
  spdlog::info("{} split: AP50 {:.4f} AP75 {:.4f} AP {:.4f} AR {:.4f}", split, report.ap50,
               report.ap75, report.ap, report.ar);
  return 0;
}

int cmd_sweep(const std::string& grid_path, const std::string& data, const std::string& out,
              const std::string& work_dir, const std::string& split,
              const std::vector<std::string>& overrides) {
  SweepGrid grid = SweepGrid::load(grid_path);
  for (const auto& o : overrides) grid.base.set_assignment(o);
  const Manifest manifest = load_manifest(data);
  ensure_parent(out);
  const std::string work =
      work_dir.empty() ? (fs::path(out).parent_path() / (fs::path(out).stem().string() + "_cells")).string()
                       : work_dir;
  const auto rows = run_sweep(grid, manifest, work, split);
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out);
  f << sweep_csv(grid, rows);
  int failed = 0;
  for (const auto& r : rows) failed += r.ok ? 0 : 1;
  spdlog::info("sweep wrote {} rows to {} ({} failed)", rows.size(), out, failed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging_from_env();
  CLI::App app{"Instance-comparison cell detector: data generation, training, evaluation, sweeps"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-data", "Render a synthetic dataset");
  std::string spec_path, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", spec_path, "Dataset spec (key = value)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  auto* train = app.add_subcommand("train", "Train a detector");
  std::string train_cfg, train_data, train_out, resume;
  std::vector<std::string> train_set;
  train->add_option("--config", train_cfg, "Training config (key = value)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", train_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--set", train_set, "Override a config entry, key=value (repeatable)");
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt, eval_data, eval_out, eval_split = "test";
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", eval_out, "Report JSON path (CSV written alongside)")->required();
  ev->add_option("--split", eval_split, "Split to evaluate");

  auto* sw = app.add_subcommand("sweep", "Train and evaluate a parameter grid");
  std::string grid, sweep_data, sweep_out, work_dir, sweep_split = "test";
  std::vector<std::string> sweep_set;
  sw->add_option("--grid", grid, "Grid file")->required()->check(CLI::ExistingFile);
  sw->add_option("--data", sweep_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  sw->add_option("--out", sweep_out, "Output CSV")->required();
  sw->add_option("--work-dir", work_dir, "Directory for per-cell runs");
  sw->add_option("--split", sweep_split, "Split to evaluate each cell on");
  sw->add_option("--set", sweep_set, "Override a fixed setting, key=value (repeatable)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(spec_path, gen_out, gen_seed);
    if (*train) return cmd_train(train_cfg, train_data, train_out, train_set, resume);
    if (*ev) return cmd_eval(ckpt, eval_data, eval_out, eval_split);
    if (*sw) return cmd_sweep(grid, sweep_data, sweep_out, work_dir, sweep_split, sweep_set);
  } catch (const hhic::Error& e) {
    spdlog::error("{}", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return kExitError;
  }
  return 0;
}
