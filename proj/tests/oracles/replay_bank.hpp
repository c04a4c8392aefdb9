#pragma once

// Replays an insertion log into the set each class queue should hold: the
// newest Q confident entries, oldest first.

#include <vector>

namespace oracle {

struct InsertEvent {
  int cls;
  double score;
  int id;  // caller-side identity of the embedding
};

inline std::vector<std::vector<int>> replay_bank(const std::vector<InsertEvent>& log,
                                                 const std::vector<double>& thresholds, int Q) {
  std::vector<std::vector<int>> confident(thresholds.size());
  for (const auto& e : log)
    if (e.score >= thresholds[e.cls]) confident[e.cls].push_back(e.id);
  for (auto& ids : confident)
    if (static_cast<int>(ids.size()) > Q) ids.erase(ids.begin(), ids.end() - Q);
  return confident;
}

}  // namespace oracle
