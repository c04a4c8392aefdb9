#include <filesystem>
#include <fstream>
#include <sstream>
#include <algorithm>

#include <spdlog/spdlog.h>

#include "hhic/error.hpp"
#include "hhic/harness.hpp"

namespace hhic {

namespace fs = std::filesystem;

namespace {
constexpr const char* kAxisPrefix = "grid.";
}

void apply_assignment(KeyValueConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "tau") {
    cfg.set("tau_roi", value);
    cfg.set("tau_cls", value);
  } else {
    cfg.set(key, value);
  }
}

SweepGrid SweepGrid::parse_string(const std::string& text, const std::string& base_dir) {
  // Axis order follows the file, so scan lines directly rather than the
  // sorted key-value map.
  const KeyValueConfig kv = KeyValueConfig::parse_string(text, "<grid>");
  SweepGrid grid;
  if (kv.has("base_config")) {
    fs::path p = kv.get_string("base_config", "");
    if (p.is_relative()) p = fs::path(base_dir) / p;
    grid.base = KeyValueConfig::load(p.string());
  }
  std::istringstream lines(text);
  std::string line;
  std::vector<std::string> axis_order;
  while (std::getline(lines, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    if (key.rfind(kAxisPrefix, 0) == 0 &&
        std::find(axis_order.begin(), axis_order.end(), key) == axis_order.end())
      axis_order.push_back(key);
  }
  for (const auto& [key, value] : kv.values()) {
    if (key == "base_config" || key.rfind(kAxisPrefix, 0) == 0) continue;
    apply_assignment(grid.base, key, value);
  }
  for (const auto& full : axis_order) {
    SweepAxis axis{full.substr(std::string(kAxisPrefix).size()), kv.get_strings(full)};
    if (axis.key.empty()) throw ConfigError("grid: empty axis name in '" + full + "'");
    if (axis.values.empty()) throw ConfigError("grid: axis '" + axis.key + "' has no values");
    grid.axes.push_back(std::move(axis));
  }
  if (grid.axes.empty()) throw ConfigError("grid has no axes (expected grid.<key> = v1,v2,... lines)");
  return grid;
}

SweepGrid SweepGrid::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), fs::path(path).parent_path().string());
}

std::size_t SweepGrid::num_cells() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.values.size();
  return n;
}

std::vector<std::pair<std::string, std::string>> SweepGrid::cell(std::size_t i) const {
  std::vector<std::pair<std::string, std::string>> out(axes.size());
  for (std::size_t a = axes.size(); a-- > 0;) {
    const std::size_t n = axes[a].values.size();
    out[a] = {axes[a].key, axes[a].values[i % n]};
    i /= n;
  }
  return out;
}

std::vector<SweepRow> run_sweep(const SweepGrid& grid, const Manifest& manifest,
                                const std::string& work_dir, const std::string& eval_split) {
  const LoadedSplit train = LoadedSplit::load(manifest.load_split("train"));
  const LoadedSplit eval = LoadedSplit::load(manifest.load_split(eval_split));
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < grid.num_cells(); ++i) {
    SweepRow row;
    row.assignment = grid.cell(i);
    std::string name = "cell" + std::to_string(i);
    for (const auto& [k, v] : row.assignment) name += "_" + k + "-" + v;
    try {
      KeyValueConfig kv = grid.base;
      for (const auto& [k, v] : row.assignment) apply_assignment(kv, k, v);
      TrainConfig cfg = TrainConfig::from_config(kv);
      cfg.eval_each_epoch = false;
      Trainer::Options opts;
      opts.out_dir = work_dir.empty() ? std::string() : (fs::path(work_dir) / name).string();
      if (!opts.out_dir.empty()) fs::remove_all(opts.out_dir);
      Trainer trainer(cfg, train, std::nullopt, opts);
      trainer.run();
      row.report = evaluate(run_inference(trainer.detector(), eval), eval.gts, eval.num_classes);
      row.ok = true;
      spdlog::info("sweep {} / {} ({}) AP50 {:.4f}", i + 1, grid.num_cells(), name, row.report.ap50);
    } catch (const std::exception& e) {
      row.error = e.what();
      spdlog::warn("sweep {} / {} ({}) failed: {}", i + 1, grid.num_cells(), name, row.error);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const SweepGrid& grid, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "config";
  for (const auto& a : grid.axes) os << ',' << a.key;
  os << ",ap50,ap75,ap,ar,status\n";
  for (const auto& r : rows) {
    std::string config;
    for (const auto& [k, v] : r.assignment) config += (config.empty() ? "" : ";") + k + "=" + v;
    os << config;
    for (const auto& kv : r.assignment) os << ',' << kv.second;
    if (r.ok) {
      os << ',' << r.report.ap50 << ',' << r.report.ap75 << ',' << r.report.ap << ',' << r.report.ar
         << ",ok\n";
    } else {
      std::string msg = r.error;
      for (char& c : msg)
        if (c == '"' || c == '\n' || c == ',') c = ' ';
      os << ",,,,,\"failed: " << msg << "\"\n";
    }
  }
  return os.str();
}

}  // namespace hhic
