#include "hhic/memory_bank.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include "hhic/binary_io.hpp"
#include "hhic/error.hpp"

namespace hhic {

MemoryBank::MemoryBank(int num_classes, int capacity, int dim, std::vector<double> thresholds)
    : capacity_(capacity), dim_(dim), thresholds_(std::move(thresholds)) {
  if (num_classes <= 0) throw ConfigError("memory bank: num_classes must be positive");
  if (capacity <= 0) throw ConfigError("memory bank: capacity must be positive");
  if (dim <= 0) throw ConfigError("memory bank: dim must be positive");
  if (thresholds_.size() != static_cast<std::size_t>(num_classes))
    throw ConfigError("memory bank: need one threshold per class");
  queues_.resize(num_classes);
  per_class_inserted_.assign(num_classes, 0);
}

MemoryBank::MemoryBank(int num_classes, int capacity, int dim, double threshold)
    : MemoryBank(num_classes, capacity, dim,
                 std::vector<double>(std::max(num_classes, 0), threshold)) {}

void MemoryBank::check_class(int class_id) const {
  if (class_id < 0 || class_id >= num_classes())
    throw IndexError("memory bank: class id " + std::to_string(class_id) + " out of range");
}

double MemoryBank::threshold(int class_id) const {
  check_class(class_id);
  return thresholds_[class_id];
}

std::size_t MemoryBank::queue_length(int class_id) const {
  check_class(class_id);
  return queues_[class_id].size();
}

const std::deque<MemoryBank::Entry>& MemoryBank::queue(int class_id) const {
  check_class(class_id);
  return queues_[class_id];
}

std::uint64_t MemoryBank::inserted(int class_id) const {
  check_class(class_id);
  return per_class_inserted_[class_id];
}

std::size_t MemoryBank::size() const noexcept {
  std::size_t n = 0;
  for (const auto& q : queues_) n += q.size();
  return n;
}

template <typename T>
bool MemoryBank::insert_confident(std::span<const T> embedding, int class_id, double score) {
  check_class(class_id);
  if (embedding.size() != static_cast<std::size_t>(dim_))
    throw ShapeError("memory bank: embedding dimension " + std::to_string(embedding.size()) +
                     " != " + std::to_string(dim_));
  if (!(score >= thresholds_[class_id])) return false;
  auto& q = queues_[class_id];
  if (q.size() == static_cast<std::size_t>(capacity_)) q.pop_front();
  Entry e;
  e.embedding.assign(embedding.begin(), embedding.end());
  e.score = score;
  e.sequence = next_sequence_++;
  q.push_back(std::move(e));
  ++per_class_inserted_[class_id];
  return true;
}

template <typename T>
int MemoryBank::update_from_batch(const LabeledEmbeddingBatch<T>& batch,
                                  std::span<const double> scores) {
  if (scores.size() != batch.size())
    throw ShapeError("memory bank: score count does not match batch size");
  int inserted = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const T* row = batch.embeddings.data() + r * batch.embeddings.cols();
    if (insert_confident<T>(std::span<const T>(row, batch.embeddings.cols()), batch.labels[r],
                            scores[r]))
      ++inserted;
  }
  return inserted;
}

template <typename T>
LabeledEmbeddingBatch<T> MemoryBank::sample_balanced(int per_class, std::mt19937_64& rng) const {
  if (per_class < 1) throw ConfigError("memory bank: per_class must be >= 1");
  std::vector<std::pair<int, const Entry*>> picked;
  for (int c = 0; c < num_classes(); ++c) {
    const auto& q = queues_[c];
    if (q.empty()) continue;
    std::vector<std::size_t> all(q.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> chosen;
    chosen.reserve(std::min<std::size_t>(per_class, q.size()));
    std::sample(all.begin(), all.end(), std::back_inserter(chosen),
                std::min<std::size_t>(per_class, q.size()), rng);
    for (std::size_t i : chosen) picked.emplace_back(c, &q[i]);
  }
  LabeledEmbeddingBatch<T> out;
  out.embeddings.resize(static_cast<Eigen::Index>(picked.size()), dim_);
  out.labels.reserve(picked.size());
  for (std::size_t r = 0; r < picked.size(); ++r) {
    for (int d = 0; d < dim_; ++d) out.embeddings(r, d) = T(picked[r].second->embedding[d]);
    out.labels.push_back(picked[r].first);
  }
  return out;
}

template <typename T>
LabeledEmbeddingBatch<T> MemoryBank::snapshot() const {
  LabeledEmbeddingBatch<T> out;
  out.embeddings.resize(static_cast<Eigen::Index>(size()), dim_);
  Eigen::Index r = 0;
  for (int c = 0; c < num_classes(); ++c)
    for (const auto& e : queues_[c]) {
      for (int d = 0; d < dim_; ++d) out.embeddings(r, d) = T(e.embedding[d]);
      out.labels.push_back(c);
      ++r;
    }
  return out;
}

void MemoryBank::write(std::ostream& out) const {
  io::write_pod<std::int32_t>(out, num_classes());
  io::write_pod<std::int32_t>(out, capacity_);
  io::write_pod<std::int32_t>(out, dim_);
  io::write_pod<std::uint64_t>(out, next_sequence_);
  for (int c = 0; c < num_classes(); ++c) {
    io::write_pod<double>(out, thresholds_[c]);
    io::write_pod<std::uint64_t>(out, per_class_inserted_[c]);
    io::write_pod<std::uint64_t>(out, queues_[c].size());
    for (const auto& e : queues_[c]) {
      io::write_pod<double>(out, e.score);
      io::write_pod<std::uint64_t>(out, e.sequence);
      io::write_array<double>(out, e.embedding);
    }
  }
}

MemoryBank MemoryBank::read(std::istream& in) {
  const auto classes = io::read_pod<std::int32_t>(in);
  const auto capacity = io::read_pod<std::int32_t>(in);
  const auto dim = io::read_pod<std::int32_t>(in);
  MemoryBank bank(classes, capacity, dim, 0.0);
  bank.next_sequence_ = io::read_pod<std::uint64_t>(in);
  for (int c = 0; c < classes; ++c) {
    bank.thresholds_[c] = io::read_pod<double>(in);
    bank.per_class_inserted_[c] = io::read_pod<std::uint64_t>(in);
    const auto n = io::read_pod<std::uint64_t>(in);
    if (n > static_cast<std::uint64_t>(capacity)) throw ParseError("memory bank: queue exceeds capacity");
    for (std::uint64_t i = 0; i < n; ++i) {
      Entry e;
      e.score = io::read_pod<double>(in);
      e.sequence = io::read_pod<std::uint64_t>(in);
      e.embedding = io::read_array<double>(in, static_cast<std::size_t>(dim));
      bank.queues_[c].push_back(std::move(e));
    }
  }
  return bank;
}

bool operator==(const MemoryBank::Entry& a, const MemoryBank::Entry& b) {
  return a.embedding == b.embedding && a.score == b.score && a.sequence == b.sequence;
}

bool operator==(const MemoryBank& a, const MemoryBank& b) {
  return a.capacity_ == b.capacity_ && a.dim_ == b.dim_ && a.thresholds_ == b.thresholds_ &&
         a.queues_ == b.queues_ && a.per_class_inserted_ == b.per_class_inserted_ &&
         a.next_sequence_ == b.next_sequence_;
}

template bool MemoryBank::insert_confident<float>(std::span<const float>, int, double);
template bool MemoryBank::insert_confident<double>(std::span<const double>, int, double);
template int MemoryBank::update_from_batch<float>(const LabeledEmbeddingBatch<float>&,
                                                  std::span<const double>);
template int MemoryBank::update_from_batch<double>(const LabeledEmbeddingBatch<double>&,
                                                   std::span<const double>);
template LabeledEmbeddingBatch<float> MemoryBank::sample_balanced<float>(int, std::mt19937_64&) const;
template LabeledEmbeddingBatch<double> MemoryBank::sample_balanced<double>(int,
                                                                           std::mt19937_64&) const;
template LabeledEmbeddingBatch<float> MemoryBank::snapshot<float>() const;
template LabeledEmbeddingBatch<double> MemoryBank::snapshot<double>() const;

}  // namespace hhic
