#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "../support/random_scenes.hpp"
#include "hhic/error.hpp"
#include "hhic/evaluation.hpp"

using namespace hhic;

namespace {

Detection det(Box b, int c, double s) { return {{b, c}, s}; }

void expect_report_eq(const EvalReport& r, const oracle::OReport& o) {
  EXPECT_EQ(r.ap, o.ap);
  EXPECT_EQ(r.ap50, o.ap50);
  EXPECT_EQ(r.ap75, o.ap75);
  EXPECT_EQ(r.ar, o.ar);
  EXPECT_EQ(r.per_class_ap50, o.per_class_ap50);
}

}  // namespace

TEST(IouThreshold, TenLevels) {
  EXPECT_EQ(iou_threshold(0), 0.5);
  EXPECT_EQ(iou_threshold(5), 0.75);
  EXPECT_EQ(iou_threshold(9), 0.95);
}

TEST(MatchDetections, Examples) {
  const std::vector<LabeledBox> gt{{{0, 0, 10, 10}, 0}};
  EXPECT_EQ(match_detections({det({0, 0, 10, 10}, 0, 0.9)}, gt, 0.5), (std::vector<bool>{true}));
  EXPECT_EQ(match_detections({det({0, 0, 10, 10}, 0, 0.4), det({0, 0, 10, 10}, 0, 0.9)}, gt, 0.5),
            (std::vector<bool>{false, true}));
  EXPECT_EQ(match_detections({det({0, 0, 10, 10}, 1, 0.9)}, gt, 0.5), (std::vector<bool>{false}));
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({true, true}, {0.9, 0.8}, 2), 1.0);
  EXPECT_EQ(average_precision({}, {}, 3), 0.0);
  EXPECT_EQ(average_precision({false}, {0.3}, 0), 0.0);
  EXPECT_FALSE(average_precision({}, {}, 0).has_value());
}

TEST(AveragePrecision, InterleavedFalsePositiveFrozenValue) {
  // TP, FP, TP, TP over 3 GT: precision 1 up to recall 1/3, then 3/4.
  const std::vector<bool> flags{true, false, true, true};
  const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
  const double v = *average_precision(flags, scores, 3);
  EXPECT_DOUBLE_EQ(v, (34.0 + 67.0 * 0.75) / 101.0);
  EXPECT_NEAR(v, 0.8341584158, 1e-10);
  EXPECT_EQ(v, *oracle::brute_ap(flags, 3));
}

TEST(Evaluate, PerfectDetectorScoresOne) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto s = support::random_tiny_scenes(rng);
    std::vector<std::vector<Detection>> perfect(s.gts.size());
    bool any = false;
    for (std::size_t im = 0; im < s.gts.size(); ++im)
      for (const auto& g : s.gts[im]) {
        perfect[im].push_back({g, 0.9});
        any = true;
      }
    if (!any) continue;
    const auto r = evaluate(perfect, s.gts, s.num_classes);
    EXPECT_EQ(r.ap, 1.0);
    EXPECT_EQ(r.ap50, 1.0);
    EXPECT_EQ(r.ap75, 1.0);
    EXPECT_EQ(r.ar, 1.0);
  }
}

TEST(Evaluate, EmptyDetectionsScoreZero) {
  const std::vector<std::vector<LabeledBox>> gts{{{{0, 0, 5, 5}, 0}, {{6, 6, 9, 9}, 1}}};
  const auto r = evaluate({{}}, gts, 2);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.ap50, 0.0);
  EXPECT_EQ(r.ar, 0.0);
  EXPECT_EQ(r.per_class_ap50.size(), 2u);
}

TEST(Evaluate, ClassWithoutGtButWithDetectionsCountsAsZero) {
  const std::vector<std::vector<LabeledBox>> gts{{{{0, 0, 5, 5}, 0}}};
  const auto r = evaluate({{det({0, 0, 5, 5}, 0, 0.9), det({7, 7, 9, 9}, 1, 0.5)}}, gts, 3);
  EXPECT_EQ(r.ap50, 0.5);
  EXPECT_EQ(r.ar, 1.0);
  EXPECT_EQ(r.per_class_ap50.count(1), 0u);
  EXPECT_EQ(r.per_class_ap50.at(0), 1.0);
}

TEST(Evaluate, UnknownClassIsRejected) {
  EXPECT_THROW(evaluate({{det({0, 0, 5, 5}, 3, 0.9)}}, {{}}, 2), ValidationError);
  EXPECT_THROW(evaluate({{}}, {{{{0, 0, 5, 5}, -1}}}, 2), ValidationError);
}

TEST(Evaluate, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 500; ++t) {
    const auto s = support::random_tiny_scenes(rng);
    SCOPED_TRACE(t);
    expect_report_eq(evaluate(s.dets, s.gts, s.num_classes),
                     oracle::brute_evaluate(s.odets, s.ogts, s.num_classes));
  }
}

TEST(Evaluate, AddingUnmatchedTruePositiveNeverHurts) {
  std::mt19937_64 rng(3);
  int tried = 0;
  for (int t = 0; t < 300; ++t) {
    auto s = support::random_tiny_scenes(rng);
    // A GT that no detection of its class overlaps at IoU >= 0.5.
    for (std::size_t im = 0; im < s.gts.size(); ++im)
      for (const auto& g : s.gts[im]) {
        bool covered = false;
        for (const auto& d : s.dets[im])
          covered |= d.box.class_id == g.class_id && iou(d.box.box, g.box) >= 0.5;
        for (const auto& o : s.gts[im]) covered |= !(o == g) && o.box == g.box;
        if (covered) continue;
        const auto before = evaluate(s.dets, s.gts, s.num_classes);
        auto more = s.dets;
        more[im].push_back({g, (rng() % 6 + 1) / 6.0});
        const auto after = evaluate(more, s.gts, s.num_classes);
        EXPECT_GE(after.ap, before.ap);
        EXPECT_GE(after.ap50, before.ap50);
        EXPECT_GE(after.ap75, before.ap75);
        EXPECT_GE(after.ar, before.ar);
        ++tried;
        goto next;
      }
  next:;
  }
  EXPECT_GT(tried, 50);
}

TEST(Evaluate, InputOrderIrrelevantForDistinctScores) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    auto s = support::random_tiny_scenes(rng);
    double bump = 0;
    for (auto& im : s.dets)
      for (auto& d : im) d.score = 0.01 + (bump += 0.01);
    const auto base = evaluate(s.dets, s.gts, s.num_classes);
    for (auto& im : s.dets) std::shuffle(im.begin(), im.end(), rng);
    const auto perm = evaluate(s.dets, s.gts, s.num_classes);
    EXPECT_EQ(base.ap, perm.ap);
    EXPECT_EQ(base.ar, perm.ar);
    EXPECT_EQ(base.per_class_ap50, perm.per_class_ap50);
  }
}

TEST(Evaluate, TopHundredPerImage) {
  std::vector<Detection> dets;
  for (int i = 0; i < 150; ++i) dets.push_back(det({50, 50, 60, 60}, 0, 0.9));
  dets.push_back(det({0, 0, 5, 5}, 0, 0.1));  // rank 151: dropped
  const auto r = evaluate({dets}, {{{{0, 0, 5, 5}, 0}}}, 1);
  EXPECT_EQ(r.per_class[0].num_detections, 100);
  EXPECT_EQ(r.ar, 0.0);
}

TEST(EvalReport, JsonAndCsv) {
  const auto r = evaluate({{det({0, 0, 5, 5}, 0, 0.9)}}, {{{{0, 0, 5, 5}, 0}, {{6, 6, 9, 9}, 1}}}, 2);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["ap50"].get<double>(), r.ap50);
  EXPECT_EQ(j["per_class_ap50"]["1"].get<double>(), 0.0);
  const std::string csv = r.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);  // header, 2 classes, all
}
