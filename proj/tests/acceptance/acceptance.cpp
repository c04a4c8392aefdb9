// Acceptance checks, one per criterion. Usage: hhic_acceptance <1..9|all>
// [--work <dir>]. Prints one "PASS criterion N: ..." or "FAIL criterion N:
// ..." line per criterion and exits non-zero if any selected one fails.
// Every tolerance lives in the Tol namespace below.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "../oracles/finite_difference.hpp"
#include "../oracles/naive_contrast.hpp"
#include "../oracles/replay_bank.hpp"
#include "../support/detector_gradcheck.hpp"
#include "../support/random_scenes.hpp"
#include "../support/tiny_training.hpp"
#include "hhic/embedding_compare.hpp"
#include "hhic/evaluation.hpp"
#include "hhic/geometry.hpp"
#include "hhic/harness.hpp"
#include "hhic/logging.hpp"
#include "hhic/memory_bank.hpp"

#ifndef HHIC_SOURCE_DIR
#error "HHIC_SOURCE_DIR must point at the repository root"
#endif

using namespace hhic;
namespace fs = std::filesystem;

namespace Tol {
constexpr double kLossRelative = 1e-6;      // 1: vectorized vs naive
constexpr double kGradRelative = 1e-4;      // 2: contrast gradient vs central difference
constexpr double kGradFloor = 1e-6;         // 2: denominator floor for tiny gradients
constexpr double kGradStep = 1e-5;          // 2: central-difference step
constexpr double kDetectorRelative = 1e-3;  // 2: detector spot check
constexpr double kHandValue = 1e-6;         // 3
constexpr double kBalanced = 0.02;          // 4: |frequency - 1/n|, absolute
constexpr double kSignFrequency = 0.05;     // 5: |frequency - 0.5|
}  // namespace Tol

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Batch = LabeledEmbeddingBatch<double>;

const fs::path kSource = HHIC_SOURCE_DIR;
fs::path g_work = "acceptance_work";

Batch random_batch(int n, int d, int classes, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  std::uniform_int_distribution<int> l(0, classes - 1);
  Batch b;
  b.embeddings.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) b.embeddings(i, j) = g(rng);
    b.labels.push_back(l(rng));
  }
  return b;
}

std::vector<oracle::Vec> rows_of(const Batch& b) {
  std::vector<oracle::Vec> out(b.size());
  for (std::size_t r = 0; r < b.size(); ++r)
    for (int c = 0; c < b.dim(); ++c) out[r].push_back(b.embeddings(r, c));
  return out;
}

Batch make(std::vector<std::vector<double>> rows, std::vector<int> labels) {
  Batch b;
  b.embeddings.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) b.embeddings(r, c) = rows[r][c];
  b.labels = std::move(labels);
  return b;
}

Outcome criterion1() {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> n(1, 16), d(1, 32), c(1, 4);
  std::uniform_real_distribution<double> tau(0.5, 10);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const int classes = c(rng), dim = d(rng);
    const Batch q = random_batch(n(rng), dim, classes, rng);
    const Batch k = random_batch(n(rng), dim, classes, rng);
    const double tv = tau(rng);
    const bool norm = t % 2 == 1;
    const double want = oracle::naive_contrast_loss(rows_of(q), q.labels, rows_of(k), k.labels, tv, norm);
    for (const double got : {roi_contrast_loss(q, k, {tv, norm}).loss,
                             cls_contrast_loss(q, k, {tv, norm}).loss}) {
      const double err = want == 0 ? std::abs(got) : std::abs(got - want) / std::abs(want);
      worst = std::max(worst, err);
    }
  }
  return {worst <= Tol::kLossRelative,
          fmt::format("200 instances (N<=16, D<=32, C<=4), both losses, max relative error {:.3g} (tol {:g})",
                      worst, Tol::kLossRelative)};
}

Outcome criterion2() {
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> n(1, 8), d(2, 8), c(1, 3);
  std::uniform_real_distribution<double> tau(0.5, 8);
  double worst = 0;
  std::size_t coords = 0;
  for (int t = 0; t < 20; ++t) {
    const int classes = c(rng), dim = d(rng);
    Batch q = random_batch(n(rng), dim, classes, rng), k = random_batch(n(rng), dim, classes, rng);
    const ContrastOptions opt{tau(rng), t % 2 == 1};
    const auto res = supervised_contrast_loss(q, k, opt);
    auto f = [&] { return supervised_contrast_loss(q, k, opt).loss; };
    for (Eigen::Index i = 0; i < q.embeddings.size(); ++i, ++coords) {
      const double fd = oracle::central_difference(f, q.embeddings.data()[i], Tol::kGradStep);
      worst = std::max(worst, oracle::relative_error(fd, res.grad_queries.data()[i], Tol::kGradFloor));
    }
    for (Eigen::Index i = 0; i < k.embeddings.size(); ++i, ++coords) {
      const double fd = oracle::central_difference(f, k.embeddings.data()[i], Tol::kGradStep);
      worst = std::max(worst, oracle::relative_error(fd, res.grad_keys.data()[i], Tol::kGradFloor));
    }
  }
  const auto det = support::detector_gradcheck(7, 60, Tol::kDetectorRelative);
  const bool ok = worst <= Tol::kGradRelative && det.checked >= 50 && det.failures == 0 &&
                  det.roi_term_active && det.cls_term_active;
  return {ok, fmt::format("contrast: 20 instances, {} coordinates, max relative error {:.3g} (tol {:g}); "
                          "detector: {} parameters, {} failures, max relative error {:.3g} (tol {:g})",
                          coords, worst, Tol::kGradRelative, det.checked, det.failures,
                          det.max_rel_error, Tol::kDetectorRelative)};
}

Outcome criterion3() {
  const double single =
      supervised_contrast_loss(make({{1, 0}}, {0}), make({{1, 0}, {0, 1}}, {0, 1}), {1.0}).loss;
  const double twin =
      supervised_contrast_loss(make({{1, 0}}, {0}), make({{1, 0}, {1, 0}}, {0, 0}), {1.0}).loss;
  const double e1 = std::abs(single - 0.31326168752), e2 = std::abs(twin - 1.38629436112);
  return {e1 <= Tol::kHandValue && e2 <= Tol::kHandValue,
          fmt::format("single positive {:.11f} (want 0.31326168752), two positives {:.11f} (want 1.38629436112)",
                      single, twin)};
}

Outcome criterion4() {
  std::mt19937_64 rng(1004);
  std::uniform_int_distribution<int> cls_d(0, 3), q_d(1, 40), n_d(0, 400);
  std::uniform_real_distribution<double> score_d(0, 1), thr_d(0.1, 0.95);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int Q = q_d(rng);
    std::vector<double> thr(4);
    for (auto& t : thr) t = thr_d(rng);
    MemoryBank bank(4, Q, 2, thr);
    std::vector<oracle::InsertEvent> log;
    const int n = n_d(rng);
    for (int i = 0; i < n; ++i) {
      const int c = cls_d(rng);
      const double s = score_d(rng);
      const std::vector<double> e{static_cast<double>(i), 1.0};
      bank.insert_confident<double>(e, c, s);
      log.push_back({c, s, i});
      for (int k = 0; k < 4; ++k) {
        if (bank.queue_length(k) > static_cast<std::size_t>(Q)) ++violations;
        for (const auto& entry : bank.queue(k))
          if (entry.score < thr[k]) ++violations;
      }
    }
    const auto want = oracle::replay_bank(log, thr, Q);
    for (int k = 0; k < 4; ++k) {
      std::vector<int> got;
      for (const auto& e : bank.queue(k)) got.push_back(static_cast<int>(e.embedding[0]));
      if (got != want[k]) ++violations;
    }
  }
  // Balanced sampling: 8 of 20 entries per draw, so each is drawn with p = 0.4.
  MemoryBank bank(2, 20, 2, 0.5);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> e{static_cast<double>(i), 1.0};
    bank.insert_confident<double>(e, 0, 1.0);
  }
  for (int i = 0; i < 3; ++i) {
    const std::vector<double> e{100.0 + i, 1.0};
    bank.insert_confident<double>(e, 1, 1.0);
  }
  std::vector<int> freq(20, 0);
  int minority_rows = 0;
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    const auto s = bank.sample_balanced<double>(8, rng);
    for (std::size_t r = 0; r < s.size(); ++r) {
      if (s.labels[r] == 0) ++freq[static_cast<int>(s.embeddings(r, 0))];
      else ++minority_rows;
    }
  }
  double worst = 0;
  for (int f : freq) worst = std::max(worst, std::abs(static_cast<double>(f) / draws - 0.4));
  const bool ok = violations == 0 && worst <= Tol::kBalanced && minority_rows == 3 * draws;
  return {ok, fmt::format("1000 random sequences, {} violations (capacity, threshold, replay); "
                          "balanced sampling max |freq - 0.4| = {:.4f} over 10k draws (tol {:g})",
                          violations, worst, Tol::kBalanced)};
}

Outcome criterion5() {
  std::mt19937_64 rng(1005);
  // Dyadic coordinates and k0 make every offset exactly representable.
  std::uniform_int_distribution<int> coord(0, 400), size(8, 256);
  const double k0 = 8;
  int inexact = 0;
  for (int t = 0; t < 2000; ++t) {
    const Box b{coord(rng) / 4.0, coord(rng) / 4.0, 0, 0};
    const Box box{b.x0, b.y0, b.x0 + size(rng) / 4.0, b.y0 + size(rng) / 4.0};
    const double dx = box.width() / k0, dy = box.height() / k0;
    for (int mask = 0; mask < 16; ++mask) {
      const CornerSigns s{mask & 1 ? 1 : -1, mask & 2 ? 1 : -1, mask & 4 ? 1 : -1, mask & 8 ? 1 : -1};
      const Box out = augment_box_with_signs(box, k0, s);
      if (out.x0 - box.x0 != s[0] * dx || out.y0 - box.y0 != s[1] * dy ||
          out.x1 - box.x1 != s[2] * dx || out.y1 - box.y1 != s[3] * dy)
        ++inexact;
    }
  }
  std::array<int, 4> plus{};
  const int draws = 10000;
  const Box box{10, 20, 58, 60};
  int bad_offsets = 0;
  for (int t = 0; t < draws; ++t) {
    const Box out = augment_box(box, k0, rng);
    const double d[4] = {out.x0 - box.x0, out.y0 - box.y0, out.x1 - box.x1, out.y1 - box.y1};
    const double mag[4] = {box.width() / k0, box.height() / k0, box.width() / k0, box.height() / k0};
    for (int i = 0; i < 4; ++i) {
      if (std::abs(d[i]) != mag[i]) ++bad_offsets;
      plus[i] += d[i] > 0 ? 1 : 0;
    }
  }
  double worst = 0;
  for (int p : plus) worst = std::max(worst, std::abs(static_cast<double>(p) / draws - 0.5));
  return {inexact == 0 && bad_offsets == 0 && worst <= Tol::kSignFrequency,
          fmt::format("2000 boxes x 16 sign vectors, {} inexact offsets; 10k random draws, {} off-magnitude "
                      "offsets, max |P(+) - 0.5| = {:.4f} (tol {:g})",
                      inexact, bad_offsets, worst, Tol::kSignFrequency)};
}

Outcome criterion6() {
  std::mt19937_64 rng(1006);
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const auto s = support::random_tiny_scenes(rng, 3, 5, 8, 3);
    const auto got = evaluate(s.dets, s.gts, s.num_classes);
    const auto want = oracle::brute_evaluate(s.odets, s.ogts, s.num_classes);
    if (got.ap != want.ap || got.ap50 != want.ap50 || got.ap75 != want.ap75 || got.ar != want.ar ||
        got.per_class_ap50 != want.per_class_ap50)
      ++mismatches;
  }
  // Perfect and empty detectors on scenes with GT in every class.
  std::vector<std::vector<LabeledBox>> gts;
  std::vector<std::vector<Detection>> perfect, empty;
  for (int im = 0; im < 4; ++im) {
    gts.emplace_back();
    perfect.emplace_back();
    empty.emplace_back();
    for (int c = 0; c < 3; ++c) {
      const Box b{10.0 * c + im, 5.0 * c, 10.0 * c + im + 6, 5.0 * c + 4};
      gts.back().push_back({b, c});
      perfect.back().push_back({{b, c}, 0.9 - 0.1 * c});
    }
  }
  const auto p = evaluate(perfect, gts, 3), e = evaluate(empty, gts, 3);
  bool perfect_ok = p.ap == 1 && p.ap50 == 1 && p.ap75 == 1 && p.ar == 1;
  for (const auto& [c, v] : p.per_class_ap50) perfect_ok &= v == 1.0;
  bool empty_ok = e.ap == 0 && e.ap50 == 0 && e.ap75 == 0 && e.ar == 0;
  for (const auto& [c, v] : e.per_class_ap50) empty_ok &= v == 0.0;
  return {mismatches == 0 && perfect_ok && empty_ok,
          fmt::format("500 random scenes, {} differ from brute force (exact); perfect detector all 1.0: {}; "
                      "empty detections all 0.0: {}",
                      mismatches, perfect_ok ? "yes" : "no", empty_ok ? "yes" : "no")};
}

TrainConfig desk_config() {
  return TrainConfig::from_config(KeyValueConfig::load((kSource / "configs" / "train_desk.cfg").string()));
}

TrainConfig baseline_of(TrainConfig cfg) {
  cfg.enable_ric = cfg.enable_aug = cfg.enable_cic = false;
  return cfg;
}

std::vector<StepRecord> train_steps(const TrainConfig& cfg, const LoadedSplit& split) {
  Trainer t(cfg, split, std::nullopt, {"", false, nullptr});
  return t.run().steps;
}

Outcome criterion7() {
  omp_set_num_threads(1);
  const LoadedSplit split = support::synthetic_split(8, 77, 128);
  TrainConfig zero = desk_config();
  zero.epochs = 3;
  zero.lr_decay_epochs = {2};
  zero.eval_each_epoch = false;
  zero.tau_c = {0.01};  // the bank fills, so the class term really runs
  zero.lambda_roi = zero.lambda_cls = 0;
  const auto a = train_steps(zero, split), b = train_steps(baseline_of(zero), split);
  std::size_t differing = a.size() == b.size() ? 0 : std::max(a.size(), b.size());
  int roi_active = 0, cls_active = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    differing += a[i].total != b[i].total ? 1 : 0;
    roi_active += a[i].roi_active ? 1 : 0;
    cls_active += a[i].cls_active ? 1 : 0;
  }
  return {differing == 0 && !a.empty() && roi_active > 0 && cls_active > 0,
          fmt::format("{} steps ({} with the RoI term computed, {} with the class term computed), {} totals "
                      "differ (tolerance 0, 1 thread)",
                      a.size(), roi_active, cls_active, differing)};
}

Manifest ensure_dataset(const std::string& spec_file, const std::string& name) {
  const DatasetSpec spec = DatasetSpec::from_config(KeyValueConfig::load((kSource / "configs" / spec_file).string()));
  const fs::path dir = g_work / name;
  return load_manifest(generate_dataset(spec, dir.string()));
}

Outcome criterion8() {
  const Manifest m = ensure_dataset("dataset_default.cfg", "data_default");
  const LoadedSplit train = LoadedSplit::load(m.load_split("train"));
  const LoadedSplit test = LoadedSplit::load(m.load_split("test"));
  const DatasetSpec spec = DatasetSpec::from_config(
      KeyValueConfig::load((kSource / "configs" / "dataset_default.cfg").string()));
  // The two classes with the lowest frequency.
  std::vector<int> order(spec.num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return spec.class_frequencies[a] < spec.class_frequencies[b];
  });
  const std::vector<int> minority(order.begin(), order.begin() + 2);

  std::map<std::string, std::vector<double>> ap50, minority_ap50;
  std::string table;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const bool full : {false, true}) {
      TrainConfig cfg = desk_config();
      if (!full) cfg = baseline_of(cfg);
      cfg.seed = seed;
      cfg.eval_each_epoch = false;
      Trainer t(cfg, train, std::nullopt, {"", false, nullptr});
      t.run();
      const auto r = evaluate(run_inference(t.detector(), test), test.gts, test.num_classes);
      double mi = 0;
      for (int c : minority) mi += r.per_class_ap50.count(c) ? r.per_class_ap50.at(c) : 0.0;
      mi /= minority.size();
      const std::string key = full ? "full" : "base";
      ap50[key].push_back(r.ap50);
      minority_ap50[key].push_back(mi);
      table += fmt::format(" {}/s{}: AP50 {:.4f} minority {:.4f};", key, seed, r.ap50, mi);
      std::printf("  criterion 8 progress: seed %llu %s AP50 %.4f minority AP50 %.4f\n",
                  static_cast<unsigned long long>(seed), key.c_str(), r.ap50, mi);
      std::fflush(stdout);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double b = mean(ap50["base"]), f = mean(ap50["full"]);
  const double bm = mean(minority_ap50["base"]), fm = mean(minority_ap50["full"]);
  return {f > b && fm > bm,
          fmt::format("mean AP50 full {:.4f} vs base {:.4f}; mean minority (classes {},{}) AP50 full {:.4f} vs "
                      "base {:.4f};{}",
                      f, b, minority[0], minority[1], fm, bm, table)};
}

Outcome criterion9() {
  const Manifest m = ensure_dataset("dataset_sweep.cfg", "data_sweep");
  const SweepGrid grid = SweepGrid::load((kSource / "configs" / "sweep_tau_q.cfg").string());
  std::vector<std::string> csv;
  std::size_t ok_rows = 0;
  for (int run = 0; run < 2; ++run) {
    const auto rows = run_sweep(grid, m, (g_work / ("sweep" + std::to_string(run))).string());
    csv.push_back(sweep_csv(grid, rows));
    if (run == 0)
      for (const auto& r : rows) ok_rows += r.ok ? 1 : 0;
    std::ofstream((g_work / ("sweep" + std::to_string(run) + ".csv"))) << csv.back();
  }
  const auto lines = std::count(csv[0].begin(), csv[0].end(), '\n');
  const bool ok = grid.num_cells() == 12 && lines == 13 && ok_rows == 12 && csv[0] == csv[1];
  return {ok, fmt::format("{} cells, {} data rows, {} completed, CSVs byte-identical: {}", grid.num_cells(),
                          lines - 1, ok_rows, csv[0] == csv[1] ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging_from_env();
  if (!std::getenv(kVerbosityEnv)) spdlog::set_level(spdlog::level::warn);
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (a == "all") {
      for (int c = 1; c <= 9; ++c) selected.push_back(c);
    } else {
      selected.push_back(std::stoi(a));
    }
  }
  if (selected.empty()) {
    std::fprintf(stderr, "usage: %s <1..9|all>... [--work <dir>]\n", argv[0]);
    return 2;
  }
  fs::create_directories(g_work);
  const std::map<int, std::function<Outcome()>> checks = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}};
  int failed = 0;
  for (int c : selected) {
    Outcome o;
    try {
      o = checks.at(c)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", c, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
