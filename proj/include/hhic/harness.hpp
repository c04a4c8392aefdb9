#pragma once

// Training orchestration: configuration, loss composition, the SGD loop with
// warm-up gating and memory-bank updates, checkpoints, evaluation and grid
// sweeps.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hhic/data_synth.hpp"
#include "hhic/detector.hpp"
#include "hhic/evaluation.hpp"
#include "hhic/kv_config.hpp"
#include "hhic/memory_bank.hpp"

namespace hhic {

enum class BankMode { Sampled, Full };

struct TrainConfig {
  double lambda_roi = 1.0;
  double lambda_cls = 0.1;
  double tau_roi = 6.0;
  double tau_cls = 6.0;
  int Q = 80;
  double k0 = 8.0;
  int k = 256;
  std::vector<double> tau_c = {0.7};  // one value broadcasts to every class
  int warmup_epochs = 1;
  int epochs = 24;
  double lr = 0.005;
  double momentum = 0.9;
  std::vector<int> lr_decay_epochs = {8, 14};
  double lr_decay_factor = 0.1;
  HeadLossMode head_loss_mode = HeadLossMode::CrossEntropy;
  std::uint64_t seed = 0;

  int batch_size = 2;
  double weight_decay = 1e-4;
  int lr_warmup_steps = 0;  // linear ramp from lr/10 over the first steps
  bool enable_ric = true;
  bool enable_aug = true;
  bool enable_cic = true;
  bool normalize_positives = false;
  BankMode bank_mode = BankMode::Sampled;
  int bank_per_class = 16;
  int aug_per_gt = 1;
  double flip_prob = 0.5;
  double divergence_threshold = 1e4;
  bool eval_each_epoch = true;
  std::string eval_split = "val";

  // Detector dimensions; empty/zero keeps the DetectorConfig default.
  std::vector<int> backbone_channels;
  int roi_channels = 0;
  int rpn_channels = 0;
  int hidden_dim = 0;

  void validate() const;
  static TrainConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  std::string to_config_text() const;

  DetectorConfig detector_config(int num_classes) const;
  std::vector<double> class_thresholds(int num_classes) const;
  bool comparison_active(int epoch) const { return epoch >= warmup_epochs; }
};

std::string to_string(BankMode m);

// Learning rate in effect during an epoch, before step-level warm-up.
double lr_at_epoch(const TrainConfig& cfg, int epoch);
double lr_at_step(const TrainConfig& cfg, int epoch, std::int64_t global_step);

struct BaseLosses {
  double rpn = 0;  // objectness + RPN box regression
  double reg = 0;
  double cls = 0;
  double sum() const { return rpn + reg + cls; }
};

// Which comparison terms take part. A term whose inputs were empty is off.
struct ComparisonGate {
  bool roi = true;
  bool cls = true;
};

// total = lambda_roi * l_roi + lambda_cls * l_cls + (rpn + reg + cls), with
// gated-off terms contributing 0. Throws NonFiniteLossError naming the first
// non-finite component.
double compose_loss(const BaseLosses& base, double l_roi, double l_cls, const TrainConfig& cfg,
                    ComparisonGate gate = {});

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0;
  BaseLosses base;
  double rpn_objectness = 0;
  double rpn_box = 0;
  double roi_com = 0;
  double cls_com = 0;
  double weighted_roi_com = 0;
  double weighted_cls_com = 0;
  double total = 0;
  bool roi_active = false;
  bool cls_active = false;
  int num_foreground = 0;
  int roi_queries = 0;
  int cls_keys = 0;
  std::size_t bank_size = 0;
  std::uint64_t bank_inserted = 0;

  std::string to_json() const;
};

struct EpochSummary {
  int epoch = 0;
  double mean_total = 0;
  std::optional<EvalReport> val;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  std::string last_checkpoint;
  std::string best_checkpoint;
  double best_val_ap50 = -1;
};

// Scenes with decoded pixels, kept in memory for the whole run.
struct LoadedSplit {
  std::vector<Image> images;
  std::vector<std::vector<LabeledBox>> gts;
  std::vector<std::string> ids;
  int num_classes = 0;

  static LoadedSplit load(const AnnotatedSplit& split);
  std::size_t size() const { return images.size(); }
};

class Trainer {
 public:
  struct Options {
    std::string out_dir;                // empty: no files written
    bool write_checkpoints = true;
    std::function<void(const StepRecord&)> on_step;  // optional observer
  };

  Trainer(TrainConfig cfg, LoadedSplit train, std::optional<LoadedSplit> val, Options options);
  ~Trainer();

  // Continues from a checkpoint written by a run with the same config.
  void resume(const std::string& checkpoint_path);

  // Runs the remaining epochs. Throws DivergenceError on a non-finite or
  // exploding total loss.
  TrainResult run();

  // One epoch; exposed for tests.
  EpochSummary run_epoch();

  const TrainConfig& config() const noexcept { return cfg_; }
  const Detector<float>& detector() const noexcept { return *detector_; }
  const MemoryBank* bank() const noexcept { return bank_.get(); }
  int next_epoch() const noexcept { return epoch_; }
  std::int64_t global_step() const noexcept { return step_; }

  void save_checkpoint(const std::string& path) const;

 private:
  StepRecord train_step(const std::vector<std::size_t>& batch);

  TrainConfig cfg_;
  LoadedSplit train_;
  std::optional<LoadedSplit> val_;
  Options options_;
  std::unique_ptr<Detector<float>> detector_;
  std::vector<Tensor<float>> momentum_;
  std::unique_ptr<MemoryBank> bank_;
  // Independent streams so that toggling one feature never shifts another.
  std::mt19937_64 order_rng_, sampler_rng_, flip_rng_, box_aug_rng_, bank_rng_;
  int epoch_ = 0;
  std::int64_t step_ = 0;
  double best_val_ap50_ = -1;
  std::string last_good_checkpoint_;
  std::vector<StepRecord> log_;
};

struct Checkpoint {
  TrainConfig config;
  int num_classes = 0;
  int next_epoch = 0;
  std::int64_t global_step = 0;
  double best_val_ap50 = -1;
  std::vector<std::string> param_names;
  std::vector<Tensor<float>> params;
  std::vector<Tensor<float>> momentum;
  std::optional<MemoryBank> bank;
  std::vector<std::string> rng_states;  // order, sampler, flip, box_aug, bank

  static Checkpoint read(const std::string& path);
  void write(const std::string& path) const;
  Detector<float> make_detector() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::vector<Detection>> run_inference(const Detector<float>& detector,
                                                  const LoadedSplit& split);

// Runs inference on every scene of the split and evaluates. Throws
// ConfigError when the checkpoint's class count differs from the dataset's.
EvalReport evaluate_checkpoint(const std::string& checkpoint_path, const LoadedSplit& split);

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct SweepGrid {
  KeyValueConfig base;  // fixed settings applied to every cell
  std::vector<SweepAxis> axes;

  // "grid.<key> = v1, v2, ..." lines define axes in file order; any other
  // key is a fixed setting. base_config = <path> loads a config first.
  static SweepGrid load(const std::string& path);
  static SweepGrid parse_string(const std::string& text, const std::string& base_dir = ".");
  std::size_t num_cells() const;
  // Assignments of cell i; the last axis varies fastest.
  std::vector<std::pair<std::string, std::string>> cell(std::size_t i) const;
};

struct SweepRow {
  std::vector<std::pair<std::string, std::string>> assignment;
  bool ok = false;
  std::string error;
  EvalReport report;
};

// Trains and evaluates every cell on the manifest's train and eval splits.
// A failing cell is recorded and the sweep moves on. "tau" sets both
// temperatures.
std::vector<SweepRow> run_sweep(const SweepGrid& grid, const Manifest& manifest,
                                const std::string& work_dir, const std::string& eval_split = "test");
std::string sweep_csv(const SweepGrid& grid, const std::vector<SweepRow>& rows);

// Applies one sweep assignment to a key-value config.
void apply_assignment(KeyValueConfig& cfg, const std::string& key, const std::string& value);

}  // namespace hhic
