#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <sstream>

#include "../oracles/replay_bank.hpp"
#include "hhic/error.hpp"
#include "hhic/memory_bank.hpp"

using namespace hhic;

namespace {

// Embedding whose first coordinate carries an id, so entries can be traced.
std::vector<double> tagged(int id, int dim = 3) {
  std::vector<double> e(dim, 1.0);
  e[0] = id;
  return e;
}

int id_of(const MemoryBank::Entry& e) { return static_cast<int>(e.embedding[0]); }

bool insert(MemoryBank& bank, int id, int cls, double score) {
  const auto e = tagged(id, bank.dim());
  return bank.insert_confident<double>(e, cls, score);
}

}  // namespace

TEST(MemoryBank, GateAndFifo) {
  MemoryBank bank(2, 2, 3, 0.7);
  EXPECT_TRUE(insert(bank, 1, 0, 0.9));
  EXPECT_EQ(bank.queue_length(0), 1u);
  EXPECT_FALSE(insert(bank, 2, 0, 0.5));
  EXPECT_EQ(bank.queue_length(0), 1u);
  EXPECT_TRUE(insert(bank, 2, 0, 0.7));  // equality passes the gate
  EXPECT_TRUE(insert(bank, 3, 0, 0.8));
  ASSERT_EQ(bank.queue_length(0), 2u);
  EXPECT_EQ(id_of(bank.queue(0)[0]), 2);
  EXPECT_EQ(id_of(bank.queue(0)[1]), 3);
}

TEST(MemoryBank, Errors) {
  MemoryBank bank(2, 4, 3, 0.7);
  const std::vector<double> short_row{1, 2};
  EXPECT_THROW(bank.insert_confident<double>(short_row, 0, 0.9), ShapeError);
  EXPECT_THROW(insert(bank, 1, 2, 0.9), IndexError);
  EXPECT_THROW(insert(bank, 1, -1, 0.9), IndexError);
}

TEST(MemoryBank, UpdateFromBatchCountsConfident) {
  MemoryBank bank(1, 10, 2, 0.7);
  EmbeddingMatrix<double> m(3, 2);
  m << 1, 0, 0, 1, 1, 1;
  const std::vector<double> scores{0.9, 0.2, 0.8};
  EXPECT_EQ(bank.update_from_batch(LabeledEmbeddingBatch<double>(m, {0, 0, 0}), scores), 2);
  const std::vector<double> none;
  EXPECT_EQ(bank.update_from_batch(LabeledEmbeddingBatch<double>{}, none), 0);
  EXPECT_EQ(bank.size(), 2u);
}

TEST(MemoryBank, HundredInsertsKeepNewestEighty) {
  MemoryBank bank(1, 80, 3, 0.7);
  std::vector<oracle::InsertEvent> log;
  for (int i = 0; i < 100; ++i) {
    insert(bank, i, 0, 0.95);
    log.push_back({0, 0.95, i});
  }
  const auto want = oracle::replay_bank(log, {0.7}, 80);
  ASSERT_EQ(bank.queue_length(0), 80u);
  for (int i = 0; i < 80; ++i) EXPECT_EQ(id_of(bank.queue(0)[i]), want[0][i]);
  EXPECT_EQ(id_of(bank.queue(0).front()), 20);
}

TEST(MemoryBank, RandomStreamsMatchReplayOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> cls_d(0, 2), q_d(1, 12), n_d(0, 200);
    std::uniform_real_distribution<double> score_d(0, 1);
    const int Q = q_d(rng);
    const std::vector<double> thr{0.3, 0.7, 0.9};
    MemoryBank bank(3, Q, 3, thr);
    std::vector<oracle::InsertEvent> log;
    const int n = n_d(rng);
    for (int i = 0; i < n; ++i) {
      const int c = cls_d(rng);
      const double s = score_d(rng);
      insert(bank, i, c, s);
      log.push_back({c, s, i});
      for (int k = 0; k < 3; ++k) ASSERT_LE(bank.queue_length(k), static_cast<std::size_t>(Q));
    }
    const auto want = oracle::replay_bank(log, thr, Q);
    for (int k = 0; k < 3; ++k) {
      ASSERT_EQ(bank.queue_length(k), want[k].size());
      for (std::size_t i = 0; i < want[k].size(); ++i) EXPECT_EQ(id_of(bank.queue(k)[i]), want[k][i]);
    }
  }
}

TEST(MemoryBank, SampleBalancedMinRule) {
  MemoryBank bank(3, 200, 3, 0.5);
  std::mt19937_64 rng(32);
  EXPECT_TRUE(bank.sample_balanced<double>(10, rng).empty());
  for (int i = 0; i < 5; ++i) insert(bank, i, 0, 1.0);
  for (int i = 0; i < 100; ++i) insert(bank, 1000 + i, 1, 1.0);
  const auto s = bank.sample_balanced<double>(10, rng);
  ASSERT_EQ(s.size(), 15u);
  std::map<int, int> counts;
  for (int l : s.labels) ++counts[l];
  EXPECT_EQ(counts[0], 5);
  EXPECT_EQ(counts[1], 10);
  EXPECT_EQ(counts.count(2), 0u);
  // Grouped by class, ascending, and every row is a stored entry.
  EXPECT_TRUE(std::is_sorted(s.labels.begin(), s.labels.end()));
  std::set<int> stored;
  for (int k = 0; k < 2; ++k)
    for (const auto& e : bank.queue(k)) stored.insert(id_of(e));
  std::set<int> seen;
  for (std::size_t r = 0; r < s.size(); ++r) {
    const int id = static_cast<int>(s.embeddings(r, 0));
    EXPECT_TRUE(stored.count(id));
    EXPECT_TRUE(seen.insert(id).second) << "drawn twice";
  }
}

TEST(MemoryBank, SampleBalancedIsUniform) {
  MemoryBank bank(1, 10, 3, 0.5);
  for (int i = 0; i < 10; ++i) insert(bank, i, 0, 1.0);
  std::mt19937_64 rng(33);
  std::vector<int> freq(10, 0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) ++freq[static_cast<int>(bank.sample_balanced<double>(1, rng).embeddings(0, 0))];
  for (int f : freq) EXPECT_NEAR(static_cast<double>(f) / draws, 0.1, 0.02);
}

TEST(MemoryBank, MinorityCompensation) {
  MemoryBank bank(2, 80, 3, 0.5);
  std::mt19937_64 rng(34);
  int id = 0;
  for (int round = 0; round < 16; ++round) {
    for (int i = 0; i < 100; ++i) insert(bank, id++, 0, 1.0);
    insert(bank, id++, 1, 1.0);
  }
  ASSERT_GE(bank.queue_length(1), 16u);
  const auto s = bank.sample_balanced<double>(16, rng);
  const auto minority = std::count(s.labels.begin(), s.labels.end(), 1);
  EXPECT_EQ(minority, 16);
  EXPECT_EQ(static_cast<long>(s.size()) - minority, 16);
}

TEST(MemoryBank, SnapshotPreservesOrderAndConserves) {
  MemoryBank bank(2, 4, 3, 0.5);
  EXPECT_TRUE(bank.snapshot<double>().empty());
  insert(bank, 1, 0, 1.0);
  insert(bank, 2, 1, 1.0);
  auto s = bank.snapshot<double>();
  EXPECT_EQ(s.labels, (std::vector<int>{0, 1}));
  for (int i = 3; i < 9; ++i) insert(bank, i, i % 2, 1.0);
  s = bank.snapshot<double>();
  EXPECT_EQ(s.size(), bank.queue_length(0) + bank.queue_length(1));
  EXPECT_EQ(s.size(), bank.size());
}

TEST(MemoryBank, ViewIsStableUntilNextUpdate) {
  MemoryBank bank(1, 3, 3, 0.5);
  insert(bank, 1, 0, 1.0);
  const auto view = bank.snapshot<double>();
  insert(bank, 2, 0, 1.0);
  EXPECT_EQ(view.size(), 1u);
  EXPECT_EQ(view.embeddings(0, 0), 1.0);
}

TEST(MemoryBank, SerializationRoundTrip) {
  MemoryBank bank(3, 5, 4, std::vector<double>{0.1, 0.5, 0.9});
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 40; ++i) insert(bank, i, i % 3, u(rng));
  std::stringstream ss;
  bank.write(ss);
  const MemoryBank back = MemoryBank::read(ss);
  EXPECT_TRUE(back == bank);
  EXPECT_EQ(back.total_inserted(), bank.total_inserted());
}
