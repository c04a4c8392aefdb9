#include <algorithm>
#include <cmath>
#include <numeric>

#include "hhic/detector.hpp"
#include "hhic/error.hpp"

namespace hhic {

HeadLossMode parse_head_loss_mode(const std::string& s) {
  if (s == "cross_entropy") return HeadLossMode::CrossEntropy;
  if (s == "focal") return HeadLossMode::Focal;
  throw ConfigError("unknown head loss mode '" + s + "' (expected cross_entropy or focal)");
}

std::string to_string(HeadLossMode m) {
  return m == HeadLossMode::Focal ? "focal" : "cross_entropy";
}

void DetectorConfig::validate() const {
  if (num_classes < 1) throw ConfigError("detector: num_classes must be >= 1");
  if (backbone_channels.size() < 2) throw ConfigError("detector: need at least two backbone stages");
  for (int c : backbone_channels)
    if (c < 1) throw ConfigError("detector: backbone channels must be positive");
  if (roi_channels < 1 || rpn_channels < 1 || hidden_dim < 1)
    throw ConfigError("detector: layer widths must be positive");
  if (pooled < 1 || sampling_ratio < 1) throw ConfigError("detector: bad RoIAlign settings");
  if (anchor_sizes.empty()) throw ConfigError("detector: zero anchors configured");
  for (double s : anchor_sizes)
    if (!(s > 0)) throw ConfigError("detector: anchor sizes must be positive");
  if (!(roi_fg_fraction > 0 && roi_fg_fraction <= 1))
    throw ConfigError("detector: roi_fg_fraction must be in (0, 1]");
  if (max_detections < 1) throw ConfigError("detector: max_detections must be >= 1");
}

RpnTargets assign_anchors(const std::vector<Box>& anchors, const std::vector<LabeledBox>& gts,
                          double fg_iou, double bg_iou) {
  RpnTargets t;
  t.labels.assign(anchors.size(), 0);
  t.matched.assign(anchors.size(), -1);
  if (gts.empty()) return t;
  std::fill(t.labels.begin(), t.labels.end(), -1);
  const std::size_t g = gts.size();
  std::vector<double> best_for_gt(g, 0.0);
  std::vector<double> ious(anchors.size() * g);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = -1;
    for (std::size_t j = 0; j < g; ++j) {
      const double v = iou(anchors[a], gts[j].box);
      ious[a * g + j] = v;
      if (v > best) {
        best = v;
        t.matched[a] = static_cast<int>(j);
      }
      best_for_gt[j] = std::max(best_for_gt[j], v);
    }
    if (best < bg_iou) t.labels[a] = 0;
    if (best >= fg_iou) t.labels[a] = 1;
  }
  for (std::size_t a = 0; a < anchors.size(); ++a)
    for (std::size_t j = 0; j < g; ++j)
      if (best_for_gt[j] > 0 && ious[a * g + j] == best_for_gt[j]) {
        t.labels[a] = 1;
        // Low-quality match: regress towards the GT this anchor is best for.
        if (ious[a * g + t.matched[a]] < fg_iou) t.matched[a] = static_cast<int>(j);
      }
  return t;
}

std::vector<int> sample_anchor_labels(const std::vector<int>& labels, int batch,
                                      double positive_fraction, std::mt19937_64& rng) {
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(static_cast<int>(i));
    if (labels[i] == 0) neg.push_back(static_cast<int>(i));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const std::size_t num_pos =
      std::min(pos.size(), static_cast<std::size_t>(batch * positive_fraction));
  const std::size_t num_neg = std::min(neg.size(), static_cast<std::size_t>(batch) - num_pos);
  std::vector<int> out(labels.size(), -1);
  for (std::size_t i = 0; i < num_pos; ++i) out[pos[i]] = 1;
  for (std::size_t i = 0; i < num_neg; ++i) out[neg[i]] = 0;
  return out;
}

namespace {
const double kMaxLogScale = std::log(1000.0 / 16.0);
}

std::array<double, 4> encode_box(const Box& reference, const Box& target,
                                 const std::array<double, 4>& weights) {
  const double pw = reference.width(), ph = reference.height();
  const double gw = target.width(), gh = target.height();
  return {weights[0] * (target.center_x() - reference.center_x()) / pw,
          weights[1] * (target.center_y() - reference.center_y()) / ph,
          weights[2] * std::log(gw / pw), weights[3] * std::log(gh / ph)};
}

Box decode_box(const Box& reference, const std::array<double, 4>& deltas,
               const std::array<double, 4>& weights) {
  const double pw = reference.width(), ph = reference.height();
  const double dx = deltas[0] / weights[0], dy = deltas[1] / weights[1];
  const double dw = std::min(deltas[2] / weights[2], kMaxLogScale);
  const double dh = std::min(deltas[3] / weights[3], kMaxLogScale);
  const double cx = reference.center_x() + dx * pw;
  const double cy = reference.center_y() + dy * ph;
  const double w = pw * std::exp(dw), h = ph * std::exp(dh);
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<SampledRoI> sample_proposals(const std::vector<Proposal>& proposals,
                                         const std::vector<LabeledBox>& gts, int k,
                                         int num_classes, std::mt19937_64& rng, double fg_iou,
                                         double fg_fraction) {
  if (k < 1) throw ConfigError("sample_proposals: k must be >= 1");
  std::vector<Box> candidates;
  candidates.reserve(proposals.size() + gts.size());
  for (const auto& g : gts) candidates.push_back(g.box);
  for (const auto& p : proposals) candidates.push_back(p.box);

  std::vector<int> best_gt(candidates.size(), -1);
  std::vector<double> best_iou(candidates.size(), 0.0);
  for (std::size_t c = 0; c < candidates.size(); ++c)
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double v = iou(candidates[c], gts[j].box);
      if (v > best_iou[c] || best_gt[c] < 0) {
        best_iou[c] = v;
        best_gt[c] = static_cast<int>(j);
      }
    }

  std::vector<std::size_t> fg, bg;
  for (std::size_t c = 0; c < candidates.size(); ++c)
    (best_gt[c] >= 0 && best_iou[c] >= fg_iou ? fg : bg).push_back(c);
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  const std::size_t num_fg =
      std::min(fg.size(), static_cast<std::size_t>(std::floor(k * fg_fraction)));
  const std::size_t num_bg = std::min(bg.size(), static_cast<std::size_t>(k) - num_fg);

  std::vector<SampledRoI> out;
  out.reserve(num_fg + num_bg);
  for (std::size_t i = 0; i < num_fg; ++i) {
    const std::size_t c = fg[i];
    SampledRoI r;
    r.box = candidates[c];
    r.assigned_gt_index = best_gt[c];
    r.assigned_class = gts[best_gt[c]].class_id;
    r.regression_target = encode_box(r.box, gts[best_gt[c]].box, kRoiBoxWeights);
    out.push_back(r);
  }
  for (std::size_t i = 0; i < num_bg; ++i) {
    SampledRoI r;
    r.box = candidates[bg[i]];
    r.assigned_class = num_classes;
    out.push_back(r);
  }
  return out;
}

std::vector<SampledRoI> filter_background(const std::vector<SampledRoI>& rois, int num_classes) {
  std::vector<SampledRoI> out;
  std::copy_if(rois.begin(), rois.end(), std::back_inserter(out),
               [&](const SampledRoI& r) { return r.assigned_class != num_classes; });
  return out;
}

}  // namespace hhic
