#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hhic/error.hpp"
#include "hhic/harness.hpp"

namespace hhic {

std::string to_string(BankMode m) { return m == BankMode::Full ? "full" : "sampled"; }

namespace {

BankMode parse_bank_mode(const std::string& s) {
  if (s == "sampled") return BankMode::Sampled;
  if (s == "full") return BankMode::Full;
  throw ConfigError("unknown bank_mode '" + s + "' (expected sampled or full)");
}

template <typename V>
std::string join(const std::vector<V>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(tau_roi > 0) || !(tau_cls > 0)) throw ConfigError("temperatures must be > 0");
  if (!(lambda_roi >= 0) || !(lambda_cls >= 0)) throw ConfigError("lambda values must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > epochs)
    throw ConfigError("warmup_epochs must lie in [0, epochs]");
  if (Q < 1) throw ConfigError("Q must be >= 1");
  if (!(k0 > 0)) throw ConfigError("k0 must be > 0");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (tau_c.empty()) throw ConfigError("tau_c needs at least one value");
  for (double t : tau_c)
    if (!(t > 0 && t < 1)) throw ConfigError("tau_c values must lie in (0, 1)");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(lr_decay_factor > 0)) throw ConfigError("lr_decay_factor must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (lr_warmup_steps < 0) throw ConfigError("lr_warmup_steps must be >= 0");
  if (bank_per_class < 1) throw ConfigError("bank_per_class must be >= 1");
  if (aug_per_gt < 0) throw ConfigError("aug_per_gt must be >= 0");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("flip_prob must lie in [0, 1]");
  if (!(divergence_threshold > 0)) throw ConfigError("divergence_threshold must be > 0");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  kv.check_known({"lambda_roi", "lambda_cls", "tau_roi", "tau_cls", "tau", "Q", "k0", "k", "tau_c",
                  "warmup_epochs", "epochs", "lr", "momentum", "lr_decay_epochs",
                  "lr_decay_factor", "head_loss_mode", "seed", "batch_size", "weight_decay",
                  "lr_warmup_steps", "enable_ric", "enable_aug", "enable_cic",
                  "normalize_positives", "bank_mode", "bank_per_class", "aug_per_gt", "flip_prob",
                  "divergence_threshold", "eval_each_epoch", "eval_split", "backbone_channels",
                  "roi_channels", "rpn_channels", "hidden_dim"});
  TrainConfig c;
  c.lambda_roi = kv.get_double("lambda_roi", c.lambda_roi);
  c.lambda_cls = kv.get_double("lambda_cls", c.lambda_cls);
  if (kv.has("tau")) c.tau_roi = c.tau_cls = kv.get_double("tau", 6.0);
  c.tau_roi = kv.get_double("tau_roi", c.tau_roi);
  c.tau_cls = kv.get_double("tau_cls", c.tau_cls);
  c.Q = static_cast<int>(kv.get_int("Q", c.Q));
  c.k0 = kv.get_double("k0", c.k0);
  c.k = static_cast<int>(kv.get_int("k", c.k));
  c.tau_c = kv.get_doubles("tau_c", c.tau_c);
  c.warmup_epochs = static_cast<int>(kv.get_int("warmup_epochs", c.warmup_epochs));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.lr = kv.get_double("lr", c.lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.lr_decay_epochs = kv.get_ints("lr_decay_epochs", c.lr_decay_epochs);
  c.lr_decay_factor = kv.get_double("lr_decay_factor", c.lr_decay_factor);
  c.head_loss_mode = parse_head_loss_mode(kv.get_string("head_loss_mode", to_string(c.head_loss_mode)));
  const auto seed = kv.get_int("seed", 0);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.lr_warmup_steps = static_cast<int>(kv.get_int("lr_warmup_steps", c.lr_warmup_steps));
  c.enable_ric = kv.get_bool("enable_ric", c.enable_ric);
  c.enable_aug = kv.get_bool("enable_aug", c.enable_aug);
  c.enable_cic = kv.get_bool("enable_cic", c.enable_cic);
  c.normalize_positives = kv.get_bool("normalize_positives", c.normalize_positives);
  c.bank_mode = parse_bank_mode(kv.get_string("bank_mode", to_string(c.bank_mode)));
  c.bank_per_class = static_cast<int>(kv.get_int("bank_per_class", c.bank_per_class));
  c.aug_per_gt = static_cast<int>(kv.get_int("aug_per_gt", c.aug_per_gt));
  c.flip_prob = kv.get_double("flip_prob", c.flip_prob);
  c.divergence_threshold = kv.get_double("divergence_threshold", c.divergence_threshold);
  c.eval_each_epoch = kv.get_bool("eval_each_epoch", c.eval_each_epoch);
  c.eval_split = kv.get_string("eval_split", c.eval_split);
  c.backbone_channels = kv.get_ints("backbone_channels", c.backbone_channels);
  c.roi_channels = static_cast<int>(kv.get_int("roi_channels", c.roi_channels));
  c.rpn_channels = static_cast<int>(kv.get_int("rpn_channels", c.rpn_channels));
  c.hidden_dim = static_cast<int>(kv.get_int("hidden_dim", c.hidden_dim));
  c.validate();
  return c;
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("lambda_roi", num(lambda_roi));
  kv.set("lambda_cls", num(lambda_cls));
  kv.set("tau_roi", num(tau_roi));
  kv.set("tau_cls", num(tau_cls));
  kv.set("Q", std::to_string(Q));
  kv.set("k0", num(k0));
  kv.set("k", std::to_string(k));
  kv.set("tau_c", join(tau_c));
  kv.set("warmup_epochs", std::to_string(warmup_epochs));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lr", num(lr));
  kv.set("momentum", num(momentum));
  kv.set("lr_decay_epochs", join(lr_decay_epochs));
  kv.set("lr_decay_factor", num(lr_decay_factor));
  kv.set("head_loss_mode", to_string(head_loss_mode));
  kv.set("seed", std::to_string(seed));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("weight_decay", num(weight_decay));
  kv.set("lr_warmup_steps", std::to_string(lr_warmup_steps));
  kv.set("enable_ric", enable_ric ? "true" : "false");
  kv.set("enable_aug", enable_aug ? "true" : "false");
  kv.set("enable_cic", enable_cic ? "true" : "false");
  kv.set("normalize_positives", normalize_positives ? "true" : "false");
  kv.set("bank_mode", to_string(bank_mode));
  kv.set("bank_per_class", std::to_string(bank_per_class));
  kv.set("aug_per_gt", std::to_string(aug_per_gt));
  kv.set("flip_prob", num(flip_prob));
  kv.set("divergence_threshold", num(divergence_threshold));
  kv.set("eval_each_epoch", eval_each_epoch ? "true" : "false");
  kv.set("eval_split", eval_split);
  if (!backbone_channels.empty()) kv.set("backbone_channels", join(backbone_channels));
  if (roi_channels > 0) kv.set("roi_channels", std::to_string(roi_channels));
  if (rpn_channels > 0) kv.set("rpn_channels", std::to_string(rpn_channels));
  if (hidden_dim > 0) kv.set("hidden_dim", std::to_string(hidden_dim));
  return kv;
}

std::string TrainConfig::to_config_text() const {
  std::ostringstream os;
  const KeyValueConfig kv = to_config();
  for (const auto& [k, v] : kv.values()) os << k << " = " << v << "\n";
  return os.str();
}

DetectorConfig TrainConfig::detector_config(int num_classes) const {
  DetectorConfig d;
  d.num_classes = num_classes;
  if (!backbone_channels.empty()) d.backbone_channels = backbone_channels;
  if (roi_channels > 0) d.roi_channels = roi_channels;
  if (rpn_channels > 0) d.rpn_channels = rpn_channels;
  if (hidden_dim > 0) d.hidden_dim = hidden_dim;
  d.head_loss_mode = head_loss_mode;
  d.validate();
  return d;
}

std::vector<double> TrainConfig::class_thresholds(int num_classes) const {
  if (tau_c.size() == 1) return std::vector<double>(num_classes, tau_c[0]);
  if (tau_c.size() != static_cast<std::size_t>(num_classes))
    throw ConfigError("tau_c has " + std::to_string(tau_c.size()) + " values for " +
                      std::to_string(num_classes) + " classes");
  return tau_c;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int e : cfg.lr_decay_epochs)
    if (epoch >= e) lr *= cfg.lr_decay_factor;
  return lr;
}

double lr_at_step(const TrainConfig& cfg, int epoch, std::int64_t global_step) {
  const double lr = lr_at_epoch(cfg, epoch);
  if (global_step >= cfg.lr_warmup_steps) return lr;
  const double t = static_cast<double>(global_step) / cfg.lr_warmup_steps;
  return lr * (0.1 + 0.9 * t);
}

double compose_loss(const BaseLosses& base, double l_roi, double l_cls, const TrainConfig& cfg,
                    ComparisonGate gate) {
  const std::pair<const char*, double> parts[] = {
      {"l_rpn", base.rpn}, {"l_reg", base.reg}, {"l_cls_head", base.cls},
      {"l_roi_com", gate.roi ? l_roi : 0.0}, {"l_cls_com", gate.cls ? l_cls : 0.0}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss component " << name << " = " << v << " (l_rpn=" << base.rpn
         << ", l_reg=" << base.reg << ", l_cls_head=" << base.cls << ", l_roi_com=" << l_roi
         << ", l_cls_com=" << l_cls << ")";
      throw NonFiniteLossError(name, os.str());
    }
  double total = base.sum();
  if (gate.roi) total = cfg.lambda_roi * l_roi + total;
  if (gate.cls) total = cfg.lambda_cls * l_cls + total;
  return total;
}

std::string StepRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["l_rpn"] = base.rpn;
  j["l_rpn_objectness"] = rpn_objectness;
  j["l_rpn_box"] = rpn_box;
  j["l_reg"] = base.reg;
  j["l_cls_head"] = base.cls;
  j["l_roi_com"] = roi_com;
  j["l_cls_com"] = cls_com;
  j["weighted_roi_com"] = weighted_roi_com;
  j["weighted_cls_com"] = weighted_cls_com;
  j["total"] = total;
  j["roi_com_active"] = roi_active;
  j["cls_com_active"] = cls_active;
  j["num_foreground"] = num_foreground;
  j["roi_queries"] = roi_queries;
  j["cls_keys"] = cls_keys;
  j["bank_size"] = bank_size;
  j["bank_inserted"] = bank_inserted;
  return j.dump();
}

}  // namespace hhic
