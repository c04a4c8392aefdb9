#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "hhic/error.hpp"
#include "hhic/harness.hpp"

namespace hhic {

namespace fs = std::filesystem;

namespace {

enum Stream : std::uint32_t { kInit = 0, kOrder, kSampler, kFlip, kBoxAug, kBank };

std::mt19937_64 make_stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), id, 0x9e3779b9u};
  return std::mt19937_64(seq);
}

std::uint64_t init_seed(std::uint64_t seed) { return make_stream(seed, kInit)(); }

bool nonzero_row(const EmbeddingMatrix<float>& m, Eigen::Index r) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    if (m(r, c) != 0.0f) return true;
  return false;
}

struct RowRef {
  std::size_t image;
  Eigen::Index row;
};

// Stacks the selected rows (as double) and remembers where each came from.
LabeledEmbeddingBatch<double> gather(const std::vector<const EmbeddingMatrix<float>*>& sources,
                                     const std::vector<std::vector<int>>& rows,
                                     const std::vector<std::vector<int>>& labels,
                                     std::vector<RowRef>& refs) {
  refs.clear();
  Eigen::Index dim = 0;
  for (std::size_t b = 0; b < sources.size(); ++b)
    for (std::size_t i = 0; i < rows[b].size(); ++i)
      if (nonzero_row(*sources[b], rows[b][i])) {
        refs.push_back({b, rows[b][i]});
        dim = sources[b]->cols();
      }
  LabeledEmbeddingBatch<double> out;
  out.embeddings.resize(static_cast<Eigen::Index>(refs.size()), dim);
  std::size_t n = 0;
  for (std::size_t b = 0; b < sources.size(); ++b)
    for (std::size_t i = 0; i < rows[b].size(); ++i)
      if (nonzero_row(*sources[b], rows[b][i])) {
        out.embeddings.row(static_cast<Eigen::Index>(n++)) =
            sources[b]->row(rows[b][i]).cast<double>();
        out.labels.push_back(labels[b][i]);
      }
  return out;
}

// Adds scale * grad rows back into per-image R x D matrices.
void scatter(const EmbeddingMatrix<double>& grad, const std::vector<RowRef>& refs, double scale,
             std::vector<EmbeddingMatrix<float>>& dst) {
  for (std::size_t i = 0; i < refs.size(); ++i)
    dst[refs[i].image].row(refs[i].row) +=
        (grad.row(static_cast<Eigen::Index>(i)) * scale).cast<float>();
}

LabeledBox flip_box(const LabeledBox& b, int width) {
  return {Box{width - b.box.x1, b.box.y0, width - b.box.x0, b.box.y1}, b.class_id};
}

}  // namespace

LoadedSplit LoadedSplit::load(const AnnotatedSplit& split) {
  LoadedSplit out;
  out.num_classes = split.num_classes();
  const std::size_t n = split.scenes.size();
  out.images.resize(n);
  out.gts.resize(n);
  out.ids.resize(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      out.images[i] = split.scenes[i].load_image();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
    out.gts[i] = split.scenes[i].gt;
    out.ids[i] = split.scenes[i].scene_id;
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError(e);
  return out;
}

Trainer::Trainer(TrainConfig cfg, LoadedSplit train, std::optional<LoadedSplit> val,
                 Options options)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)),
      options_(std::move(options)) {
  cfg_.validate();
  if (train_.num_classes < 1) throw ConfigError("training split has no categories");
  if (val_ && val_->num_classes != train_.num_classes)
    throw ConfigError("validation split class count differs from training split");
  const DetectorConfig dc = cfg_.detector_config(train_.num_classes);
  detector_ = std::make_unique<Detector<float>>(dc, init_seed(cfg_.seed));
  for (const auto& p : detector_->parameters()) momentum_.emplace_back(p.value.shape());
  if (cfg_.enable_cic)
    bank_ = std::make_unique<MemoryBank>(train_.num_classes, cfg_.Q, dc.hidden_dim,
                                         cfg_.class_thresholds(train_.num_classes));
  order_rng_ = make_stream(cfg_.seed, kOrder);
  sampler_rng_ = make_stream(cfg_.seed, kSampler);
  flip_rng_ = make_stream(cfg_.seed, kFlip);
  box_aug_rng_ = make_stream(cfg_.seed, kBoxAug);
  bank_rng_ = make_stream(cfg_.seed, kBank);
  if (!options_.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options_.out_dir, ec);
    if (ec) throw IoError("cannot create " + options_.out_dir + ": " + ec.message());
  }
}

Trainer::~Trainer() = default;

StepRecord Trainer::train_step(const std::vector<std::size_t>& batch) {
  const bool active = cfg_.comparison_active(epoch_);
  const bool ric = cfg_.enable_ric && active;
  const bool cic = cfg_.enable_cic && active;
  const std::size_t bs = batch.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<ImageState<float>> states(bs);
  for (std::size_t b = 0; b < bs; ++b) {
    const std::size_t idx = batch[b];
    const bool flip = unit(flip_rng_) < cfg_.flip_prob;
    const Image& source = train_.images[idx];
    std::vector<LabeledBox> gts = train_.gts[idx];
    Image flipped;
    if (flip) {
      flipped = source.flipped_horizontally();
      for (auto& g : gts) g = flip_box(g, source.width);
    }
    const Image& img = flip ? flipped : source;
    std::vector<LabeledBox> comparison;
    if (ric) {
      comparison = gts;
      if (cfg_.enable_aug)
        for (const auto& g : gts)
          for (int a = 0; a < cfg_.aug_per_gt; ++a) {
            try {
              comparison.push_back(
                  {augment_box(g.box, cfg_.k0, box_aug_rng_, ImageSize{img.width, img.height}),
                   g.class_id});
            } catch (const DegenerateAugmentationError&) {
            } catch (const DegenerateBoxError&) {
            }
          }
    }
    states[b] = detector_->forward_train(img, gts, cfg_.k, sampler_rng_, comparison);
  }

  StepRecord rec;
  rec.step = step_;
  rec.epoch = epoch_;
  rec.lr = lr_at_step(cfg_, epoch_, step_);
  for (const auto& st : states) {
    rec.rpn_objectness += st.rpn_cls_loss;
    rec.rpn_box += st.rpn_reg_loss;
    rec.base.reg += st.head.reg;
    rec.base.cls += st.head.cls;
    rec.num_foreground += static_cast<int>(st.num_foreground());
  }
  const double inv_bs = 1.0 / static_cast<double>(bs);
  rec.rpn_objectness *= inv_bs;
  rec.rpn_box *= inv_bs;
  rec.base.rpn = rec.rpn_objectness + rec.rpn_box;
  rec.base.reg *= inv_bs;
  rec.base.cls *= inv_bs;

  std::vector<std::vector<int>> fg_rows(bs), fg_labels(bs);
  for (std::size_t b = 0; b < bs; ++b) {
    fg_rows[b] = states[b].foreground_rows();
    for (int r : fg_rows[b]) fg_labels[b].push_back(states[b].plan.rois[r].assigned_class);
  }

  // RoI-level comparison: GT and jittered GT embeddings query foreground RoIs.
  ContrastResult<double> roi_res;
  std::vector<RowRef> roi_q_refs, roi_k_refs;
  roi_res.skipped = true;
  if (ric) {
    std::vector<const EmbeddingMatrix<float>*> qsrc, ksrc;
    std::vector<std::vector<int>> qrows(bs), qlabels(bs);
    for (std::size_t b = 0; b < bs; ++b) {
      qsrc.push_back(&states[b].comparison_embeddings);
      ksrc.push_back(&states[b].out.roi_embeddings);
      for (std::size_t i = 0; i < states[b].comparison_boxes.size(); ++i) {
        qrows[b].push_back(static_cast<int>(i));
        qlabels[b].push_back(states[b].comparison_boxes[i].class_id);
      }
    }
    const auto queries = gather(qsrc, qrows, qlabels, roi_q_refs);
    const auto keys = gather(ksrc, fg_rows, fg_labels, roi_k_refs);
    roi_res = roi_contrast_loss(queries, keys, {cfg_.tau_roi, cfg_.normalize_positives});
    rec.roi_queries = static_cast<int>(queries.size());
  }

  // Class-level comparison: current class embeddings query the bank view,
  // which was fixed by the previous step.
  ContrastResult<double> cls_res;
  std::vector<RowRef> cls_refs;
  cls_res.skipped = true;
  if (cic) {
    std::vector<const EmbeddingMatrix<float>*> src;
    for (const auto& st : states) src.push_back(&st.out.class_embeddings);
    const auto queries = gather(src, fg_rows, fg_labels, cls_refs);
    const auto view = cfg_.bank_mode == BankMode::Full
                          ? bank_->snapshot<double>()
                          : bank_->sample_balanced<double>(cfg_.bank_per_class, bank_rng_);
    cls_res = cls_contrast_loss(queries, view, {cfg_.tau_cls, cfg_.normalize_positives});
    rec.cls_keys = static_cast<int>(view.size());
  }

  rec.roi_active = ric && !roi_res.skipped;
  rec.cls_active = cic && !cls_res.skipped;
  rec.roi_com = rec.roi_active ? roi_res.loss : 0.0;
  rec.cls_com = rec.cls_active ? cls_res.loss : 0.0;
  rec.weighted_roi_com = rec.roi_active ? cfg_.lambda_roi * rec.roi_com : 0.0;
  rec.weighted_cls_com = rec.cls_active ? cfg_.lambda_cls * rec.cls_com : 0.0;
  try {
    rec.total = compose_loss(rec.base, rec.roi_com, rec.cls_com, cfg_,
                             ComparisonGate{rec.roi_active, rec.cls_active});
  } catch (const NonFiniteLossError& e) {
    throw DivergenceError(std::string("training diverged at step ") + std::to_string(step_) +
                              ": " + e.what() + "; last good checkpoint: " +
                              (last_good_checkpoint_.empty() ? "<none>" : last_good_checkpoint_),
                          last_good_checkpoint_);
  }
  if (!(rec.total <= cfg_.divergence_threshold))
    throw DivergenceError("training diverged at step " + std::to_string(step_) + ": total loss " +
                              std::to_string(rec.total) + " exceeds " +
                              std::to_string(cfg_.divergence_threshold) +
                              "; last good checkpoint: " +
                              (last_good_checkpoint_.empty() ? "<none>" : last_good_checkpoint_),
                          last_good_checkpoint_);

  // Backward. Comparison gradients are routed into the embedding rows they
  // came from; the base losses are averaged over the batch.
  detector_->zero_grad();
  const DetectorConfig& dc = detector_->config();
  std::vector<EmbeddingMatrix<float>> g_cls(bs), g_roi(bs), g_cmp(bs);
  for (std::size_t b = 0; b < bs; ++b) {
    const Eigen::Index rows = static_cast<Eigen::Index>(states[b].plan.rois.size());
    if (rec.cls_active) g_cls[b] = EmbeddingMatrix<float>::Zero(rows, dc.hidden_dim);
    if (rec.roi_active) {
      g_roi[b] = EmbeddingMatrix<float>::Zero(rows, dc.roi_embedding_dim());
      g_cmp[b] = EmbeddingMatrix<float>::Zero(
          static_cast<Eigen::Index>(states[b].comparison_boxes.size()), dc.roi_embedding_dim());
    }
  }
  if (rec.cls_active) scatter(cls_res.grad_queries, cls_refs, cfg_.lambda_cls, g_cls);
  if (rec.roi_active) {
    scatter(roi_res.grad_keys, roi_k_refs, cfg_.lambda_roi, g_roi);
    scatter(roi_res.grad_queries, roi_q_refs, cfg_.lambda_roi, g_cmp);
  }
  for (std::size_t b = 0; b < bs; ++b)
    detector_->backward(states[b], static_cast<float>(inv_bs), g_cls[b], g_roi[b], g_cmp[b]);

  // SGD with momentum and L2 weight decay.
  const float lr = static_cast<float>(rec.lr);
  const float mom = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  auto& params = detector_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value;
    const auto& g = params[i].grad;
    auto& v = momentum_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = mom * v[j] + (g[j] + wd * w[j]);
      w[j] -= lr * v[j];
    }
  }

  // Bank update from this step's (pre-update) class embeddings.
  if (cic) {
    for (std::size_t b = 0; b < bs; ++b) {
      const auto& st = states[b];
      LabeledEmbeddingBatch<float> cand;
      std::vector<double> scores;
      std::vector<int> keep;
      for (std::size_t i = 0; i < fg_rows[b].size(); ++i)
        if (nonzero_row(st.out.class_embeddings, fg_rows[b][i])) keep.push_back(static_cast<int>(i));
      cand.embeddings.resize(static_cast<Eigen::Index>(keep.size()), dc.hidden_dim);
      for (std::size_t n = 0; n < keep.size(); ++n) {
        const int r = fg_rows[b][keep[n]];
        const int c = fg_labels[b][keep[n]];
        cand.embeddings.row(static_cast<Eigen::Index>(n)) = st.out.class_embeddings.row(r);
        cand.labels.push_back(c);
        scores.push_back(static_cast<double>(st.out.class_scores(r, c)));
      }
      bank_->update_from_batch(cand, scores);
    }
  }
  if (bank_) {
    rec.bank_size = bank_->size();
    rec.bank_inserted = bank_->total_inserted();
  }
  ++step_;
  return rec;
}

EpochSummary Trainer::run_epoch() {
  if (epoch_ >= cfg_.epochs) throw ConfigError("training already finished");
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), order_rng_);

  std::ofstream metrics;
  if (!options_.out_dir.empty()) {
    const auto path = fs::path(options_.out_dir) / "metrics.jsonl";
    metrics.open(path, std::ios::app);
    if (!metrics) throw IoError("cannot open " + path.string());
  }

  EpochSummary summary;
  summary.epoch = epoch_;
  double total = 0;
  int steps = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::vector<std::size_t> batch(
        order.begin() + start,
        order.begin() + std::min(order.size(), start + std::size_t(cfg_.batch_size)));
    const StepRecord rec = train_step(batch);
    if (metrics.is_open()) metrics << rec.to_json() << "\n" << std::flush;
    if (options_.on_step) options_.on_step(rec);
    spdlog::debug("step {} epoch {} lr {:.6g} total {:.5f} rpn {:.4f} reg {:.4f} cls {:.4f} roi_com {:.4f} cls_com {:.4f}",
                  rec.step, rec.epoch, rec.lr, rec.total, rec.base.rpn, rec.base.reg,
                  rec.base.cls, rec.roi_com, rec.cls_com);
    log_.push_back(rec);
    total += rec.total;
    ++steps;
  }
  summary.mean_total = steps ? total / steps : 0.0;
  ++epoch_;

  if (val_ && cfg_.eval_each_epoch) {
    const auto dets = run_inference(*detector_, *val_);
    summary.val = evaluate(dets, val_->gts, val_->num_classes);
  }
  spdlog::info("epoch {}/{} mean loss {:.4f}{}", summary.epoch + 1, cfg_.epochs, summary.mean_total,
               summary.val ? fmt::format(" val AP50 {:.4f} AP {:.4f}", summary.val->ap50, summary.val->ap)
                           : std::string());

  const bool improved = summary.val && summary.val->ap50 > best_val_ap50_;
  if (improved) best_val_ap50_ = summary.val->ap50;
  if (!options_.out_dir.empty() && options_.write_checkpoints) {
    const std::string last = (fs::path(options_.out_dir) / "last.ckpt").string();
    save_checkpoint(last);
    last_good_checkpoint_ = last;
    if (improved) save_checkpoint((fs::path(options_.out_dir) / "best.ckpt").string());
  }
  return summary;
}

TrainResult Trainer::run() {
  TrainResult result;
  while (epoch_ < cfg_.epochs) result.epochs.push_back(run_epoch());
  result.steps = log_;
  result.best_val_ap50 = best_val_ap50_;
  if (!options_.out_dir.empty() && options_.write_checkpoints) {
    result.last_checkpoint = (fs::path(options_.out_dir) / "last.ckpt").string();
    const auto best = fs::path(options_.out_dir) / "best.ckpt";
    result.best_checkpoint = fs::exists(best) ? best.string() : result.last_checkpoint;
  }
  return result;
}

namespace {

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_restore(std::mt19937_64& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw ParseError("corrupt random-state record in checkpoint");
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.num_classes = train_.num_classes;
  ck.next_epoch = epoch_;
  ck.global_step = step_;
  ck.best_val_ap50 = best_val_ap50_;
  for (const auto& p : detector_->parameters()) {
    ck.param_names.push_back(p.name);
    ck.params.push_back(p.value);
  }
  ck.momentum = momentum_;
  if (bank_) ck.bank = *bank_;
  ck.rng_states = {rng_text(order_rng_), rng_text(sampler_rng_), rng_text(flip_rng_),
                   rng_text(box_aug_rng_), rng_text(bank_rng_)};
  ck.write(path);
}

void Trainer::resume(const std::string& path) {
  const Checkpoint ck = Checkpoint::read(path);
  if (ck.num_classes != train_.num_classes)
    throw ConfigError("checkpoint has " + std::to_string(ck.num_classes) +
                      " classes, dataset has " + std::to_string(train_.num_classes));
  KeyValueConfig a = ck.config.to_config(), b = cfg_.to_config();
  a.set("epochs", "0");
  b.set("epochs", "0");
  if (a.values() != b.values())
    throw ConfigError("checkpoint " + path + " was written with a different training config");
  auto& params = detector_->parameters();
  if (ck.params.size() != params.size() || ck.momentum.size() != params.size())
    throw ConfigError("checkpoint parameter layout does not match the detector");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ck.param_names[i] != params[i].name || ck.params[i].shape() != params[i].value.shape())
      throw ConfigError("checkpoint parameter '" + ck.param_names[i] + "' does not match");
    params[i].value = ck.params[i];
    momentum_[i] = ck.momentum[i];
  }
  if (bank_) {
    if (!ck.bank) throw ConfigError("checkpoint has no memory bank");
    *bank_ = *ck.bank;
  }
  if (ck.rng_states.size() != 5) throw ParseError("checkpoint random-state count mismatch");
  rng_restore(order_rng_, ck.rng_states[0]);
  rng_restore(sampler_rng_, ck.rng_states[1]);
  rng_restore(flip_rng_, ck.rng_states[2]);
  rng_restore(box_aug_rng_, ck.rng_states[3]);
  rng_restore(bank_rng_, ck.rng_states[4]);
  epoch_ = ck.next_epoch;
  step_ = ck.global_step;
  best_val_ap50_ = ck.best_val_ap50;
  last_good_checkpoint_ = path;
}

std::vector<std::vector<Detection>> run_inference(const Detector<float>& detector,
                                                  const LoadedSplit& split) {
  std::vector<std::vector<Detection>> out(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) out[i] = detector.inference(split.images[i]);
  return out;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path, const LoadedSplit& split) {
  const Checkpoint ck = Checkpoint::read(checkpoint_path);
  if (ck.num_classes != split.num_classes)
    throw ConfigError("checkpoint " + checkpoint_path + " has " + std::to_string(ck.num_classes) +
                      " classes, dataset has " + std::to_string(split.num_classes));
  const Detector<float> detector = ck.make_detector();
  return evaluate(run_inference(detector, split), split.gts, split.num_classes);
}

}  // namespace hhic
