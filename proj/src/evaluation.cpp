#include "hhic/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hhic/error.hpp"

namespace hhic {

double iou_threshold(int i) { return (50.0 + 5.0 * i) / 100.0; }

namespace {

std::vector<std::size_t> rank_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::vector<bool> match_detections(const std::vector<Detection>& detections,
                                   const std::vector<LabeledBox>& gts, double iou_thresh) {
  std::vector<double> scores(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) scores[i] = detections[i].score;
  std::vector<bool> flags(detections.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : rank_by_score(scores)) {
    const auto& det = detections[d].box;
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != det.class_id) continue;
      const double v = iou(det.box, gts[g].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      flags[d] = true;
    }
  }
  return flags;
}

std::optional<double> average_precision(const std::vector<bool>& flags,
                                        const std::vector<double>& scores, int num_gt) {
  if (flags.size() != scores.size()) throw ShapeError("average_precision: flags/scores length mismatch");
  if (num_gt < 0) throw ValidationError("average_precision: num_gt < 0");
  if (num_gt == 0) {
    if (flags.empty()) return std::nullopt;
    return 0.0;
  }
  const auto order = rank_by_score(scores);
  const std::size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (flags[order[i]]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  std::size_t idx = 0;
  for (int r = 0; r <= 100; ++r) {
    const double thr = r / 100.0;
    while (idx < n && recall[idx] < thr) ++idx;
    if (idx < n) sum += precision[idx];
  }
  return sum / 101.0;
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<LabeledBox>>& gts, int num_classes) {
  if (detections.size() != gts.size())
    throw ValidationError("evaluate: detections and ground truth cover different image counts");
  if (num_classes < 1) throw ValidationError("evaluate: num_classes must be >= 1");
  const std::size_t num_images = gts.size();

  // Top-100 per image, then split by class.
  std::vector<std::vector<std::vector<Detection>>> dets(
      num_classes, std::vector<std::vector<Detection>>(num_images));
  std::vector<std::vector<std::vector<LabeledBox>>> truth(
      num_classes, std::vector<std::vector<LabeledBox>>(num_images));
  for (std::size_t im = 0; im < num_images; ++im) {
    for (const auto& g : gts[im]) {
      if (g.class_id < 0 || g.class_id >= num_classes)
        throw ValidationError("evaluate: ground-truth class " + std::to_string(g.class_id) +
                              " outside the class universe");
      truth[g.class_id][im].push_back(g);
    }
    std::vector<double> scores;
    for (const auto& d : detections[im]) {
      if (d.box.class_id < 0 || d.box.class_id >= num_classes)
        throw ValidationError("evaluate: detection class " + std::to_string(d.box.class_id) +
                              " outside the class universe");
      scores.push_back(d.score);
    }
    auto order = rank_by_score(scores);
    if (order.size() > static_cast<std::size_t>(kMaxDetectionsPerImage))
      order.resize(kMaxDetectionsPerImage);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) dets[detections[im][i].box.class_id][im].push_back(detections[im][i]);
  }

  EvalReport report;
  report.num_images = static_cast<int>(num_images);
  report.per_class.resize(num_classes);
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < num_classes; ++c) {
    ClassMetrics& m = report.per_class[c];
    for (std::size_t im = 0; im < num_images; ++im) {
      m.num_gt += static_cast<int>(truth[c][im].size());
      m.num_detections += static_cast<int>(dets[c][im].size());
    }
    for (int t = 0; t < kNumIouThresholds; ++t) {
      std::vector<bool> flags;
      std::vector<double> scores;
      int tp = 0;
      for (std::size_t im = 0; im < num_images; ++im) {
        const auto f = match_detections(dets[c][im], truth[c][im], iou_threshold(t));
        for (std::size_t d = 0; d < f.size(); ++d) {
          flags.push_back(f[d]);
          scores.push_back(dets[c][im][d].score);
          tp += f[d] ? 1 : 0;
        }
      }
      const auto ap = average_precision(flags, scores, m.num_gt);
      m.has_ap = ap.has_value();
      m.ap[t] = ap.value_or(0.0);
      m.recall[t] = m.num_gt > 0 ? static_cast<double>(tp) / m.num_gt : 0.0;
    }
  }

  double ap_sum = 0, ap50_sum = 0, ap75_sum = 0, ar_sum = 0;
  int ap_classes = 0, ar_classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    const ClassMetrics& m = report.per_class[c];
    if (m.has_ap) {
      ++ap_classes;
      ap_sum += std::accumulate(m.ap.begin(), m.ap.end(), 0.0) / kNumIouThresholds;
      ap50_sum += m.ap[0];
      ap75_sum += m.ap[5];
    }
    if (m.num_gt > 0) {
      ++ar_classes;
      ar_sum += std::accumulate(m.recall.begin(), m.recall.end(), 0.0) / kNumIouThresholds;
      report.per_class_ap50[c] = m.ap[0];
    }
  }
  if (ap_classes > 0) {
    report.ap = ap_sum / ap_classes;
    report.ap50 = ap50_sum / ap_classes;
    report.ap75 = ap75_sum / ap_classes;
  }
  if (ar_classes > 0) report.ar = ar_sum / ar_classes;
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["ap"] = ap;
  j["ap50"] = ap50;
  j["ap75"] = ap75;
  j["ar"] = ar;
  j["num_images"] = num_images;
  j["per_class_ap50"] = nlohmann::ordered_json::object();
  for (const auto& [c, v] : per_class_ap50) j["per_class_ap50"][std::to_string(c)] = v;
  j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    nlohmann::ordered_json row;
    row["class_id"] = c;
    row["num_gt"] = m.num_gt;
    row["num_detections"] = m.num_detections;
    if (m.has_ap) row["ap_by_iou"] = m.ap;
    if (m.num_gt > 0) row["recall_by_iou"] = m.recall;
    j["per_class"].push_back(row);
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "class,num_gt,num_detections,ap,ap50,ap75,ar\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    if (m.num_gt == 0) continue;
    const double ap_c = std::accumulate(m.ap.begin(), m.ap.end(), 0.0) / kNumIouThresholds;
    const double ar_c = std::accumulate(m.recall.begin(), m.recall.end(), 0.0) / kNumIouThresholds;
    os << c << ',' << m.num_gt << ',' << m.num_detections << ',' << ap_c << ',' << m.ap[0] << ','
       << m.ap[5] << ',' << ar_c << '\n';
  }
  int gt = 0, nd = 0;
  for (const auto& m : per_class) {
    gt += m.num_gt;
    nd += m.num_detections;
  }
  os << "all," << gt << ',' << nd << ',' << ap << ',' << ap50 << ',' << ap75 << ',' << ar << '\n';
  return os.str();
}

namespace {
void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}
}  // namespace

void EvalReport::write_json(const std::string& path) const { write_text(path, to_json() + "\n"); }
void EvalReport::write_csv(const std::string& path) const { write_text(path, to_csv()); }

}  // namespace hhic
