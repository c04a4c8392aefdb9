#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "hhic/embedding_compare.hpp"

namespace hhic {

// Per-class FIFO store of historical class embeddings. An embedding enters
// its class queue only if its score reaches that class's confidence
// threshold; a full queue evicts its oldest entry.
//
// The bank only changes through insert_confident/update_from_batch, so a
// view taken between updates stays valid for the whole loss computation.
class MemoryBank {
 public:
  struct Entry {
    std::vector<double> embedding;
    double score = 0;
    std::uint64_t sequence = 0;  // global insertion counter at insert time
  };

  MemoryBank(int num_classes, int capacity, int dim, std::vector<double> thresholds);
  MemoryBank(int num_classes, int capacity, int dim, double threshold = 0.7);

  int num_classes() const noexcept { return static_cast<int>(queues_.size()); }
  int capacity() const noexcept { return capacity_; }
  int dim() const noexcept { return dim_; }
  double threshold(int class_id) const;
  std::size_t queue_length(int class_id) const;
  std::size_t size() const noexcept;
  bool empty() const noexcept { return size() == 0; }
  const std::deque<Entry>& queue(int class_id) const;

  // Confident insertions so far (evicted ones included).
  std::uint64_t total_inserted() const noexcept { return next_sequence_; }
  std::uint64_t inserted(int class_id) const;

  // Throws ShapeError on a dimension mismatch, IndexError on a bad class id.
  template <typename T>
  bool insert_confident(std::span<const T> embedding, int class_id, double score);

  // Inserts row by row in batch order; returns the number inserted.
  template <typename T>
  int update_from_batch(const LabeledEmbeddingBatch<T>& batch, std::span<const double> scores);

  // Up to per_class entries from every nonempty queue, drawn uniformly
  // without replacement. Rows are grouped by class in ascending class order.
  template <typename T>
  LabeledEmbeddingBatch<T> sample_balanced(int per_class, std::mt19937_64& rng) const;

  // Every entry, classes ascending, each queue oldest first.
  template <typename T>
  LabeledEmbeddingBatch<T> snapshot() const;

  void write(std::ostream& out) const;
  static MemoryBank read(std::istream& in);

  friend bool operator==(const MemoryBank& a, const MemoryBank& b);

 private:
  void check_class(int class_id) const;

  int capacity_;
  int dim_;
  std::vector<double> thresholds_;
  std::vector<std::deque<Entry>> queues_;
  std::vector<std::uint64_t> per_class_inserted_;
  std::uint64_t next_sequence_ = 0;
};

bool operator==(const MemoryBank::Entry& a, const MemoryBank::Entry& b);

}  // namespace hhic
