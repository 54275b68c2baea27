#include <gtest/gtest.h>

#include <set>

#include "vdd/core/rng.hpp"
#include "vdd/task.hpp"

using vdd::GmdaTask;
using vdd::ProtocolError;

TEST(BuildTask, UnionAndCount) {
  auto t = GmdaTask::build({{0, 1, 2}, {1, 2, 3}}, true, 7);
  EXPECT_EQ(t.num_known_classes(), 4);
  EXPECT_EQ(t.unknown_index(), 4);
  EXPECT_EQ(t.num_sources(), 2);
  EXPECT_EQ(t.num_domains(), 3);
  EXPECT_EQ(t.label_space().known_classes, (std::vector<int>{0, 1, 2, 3}));
}

TEST(BuildTask, RemapsToContiguousIndices) {
  auto t = GmdaTask::build({{5, 9}, {5, 9}}, true, 0);
  EXPECT_EQ(t.num_known_classes(), 2);
  EXPECT_EQ(t.unknown_index(), 2);
  EXPECT_EQ(t.to_internal(5), 0);
  EXPECT_EQ(t.to_internal(9), 1);
  EXPECT_EQ(t.source_classes(0), (std::vector<int>{0, 1}));
  EXPECT_EQ(t.source_classes(1), (std::vector<int>{0, 1}));
}

TEST(BuildTask, DisjointSourcesAllPrivate) {
  auto t = GmdaTask::build({{0, 1}, {2, 3}, {4, 5}}, true, 0);
  EXPECT_EQ(t.num_known_classes(), 6);
  // Brute-force check: every pairwise intersection is empty.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      auto [shared, priv] = t.shared_and_private(i, j);
      EXPECT_TRUE(shared.empty()) << i << "," << j;
      EXPECT_EQ(priv.size(), 2u);
    }
}

TEST(BuildTask, Errors) {
  EXPECT_THROW(GmdaTask::build({{0, 1}}, true, 0), ProtocolError);
  EXPECT_THROW(GmdaTask::build({{0, 1}, {}}, true, 0), ProtocolError);
  EXPECT_THROW(GmdaTask::build({{0}, {1}}, true, 0, {"a", "a", "t"}), ProtocolError);
  EXPECT_THROW(GmdaTask::build({{0}, {1}}, true, 0, {"a", "b"}), ProtocolError);
}

TEST(SharedAndPrivate, Basic) {
  auto t = GmdaTask::build({{0, 1, 2}, {1, 2, 3}}, true, 0);
  auto [shared, priv] = t.shared_and_private(0, 1);
  EXPECT_EQ(shared, (std::vector<int>{1, 2}));
  EXPECT_EQ(priv, (std::vector<int>{0}));
}

TEST(SharedAndPrivate, IdenticalAndDisjoint) {
  auto same = GmdaTask::build({{3, 4}, {3, 4}}, true, 0);
  auto [s1, p1] = same.shared_and_private(0, 1);
  EXPECT_EQ(s1.size(), 2u);
  EXPECT_TRUE(p1.empty());

  auto disjoint = GmdaTask::build({{0, 1}, {2, 3}}, true, 0);
  auto [s2, p2] = disjoint.shared_and_private(0, 1);
  EXPECT_TRUE(s2.empty());
  EXPECT_EQ(p2, disjoint.source_classes(0));
}

TEST(SharedAndPrivate, Errors) {
  auto t = GmdaTask::build({{0, 1}, {1, 2}}, true, 0);
  EXPECT_THROW(t.shared_and_private(0, 5), ProtocolError);
  EXPECT_THROW(t.shared_and_private(0, 0), ProtocolError);
}

// Property checks over a family of random tasks.
TEST(TaskProperties, UnionSymmetryBijection) {
  vdd::Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    const int n_sources = 2 + static_cast<int>(rng.uniform_int(3));
    std::vector<std::vector<int>> sets(n_sources);
    std::set<int> want_union;
    for (auto& s : sets) {
      const int k = 1 + static_cast<int>(rng.uniform_int(5));
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < k)
        chosen.insert(static_cast<int>(rng.uniform_int(20)) * 3 + 1);  // sparse raw ids
      s.assign(chosen.begin(), chosen.end());
      want_union.insert(s.begin(), s.end());
    }
    auto t = GmdaTask::build(sets, true, trial);

    // Union of source sets equals known_classes exactly.
    EXPECT_EQ(t.label_space().known_classes,
              (std::vector<int>(want_union.begin(), want_union.end())));
    std::set<int> remapped_union;
    for (int i = 0; i < t.num_sources(); ++i)
      remapped_union.insert(t.source_classes(i).begin(), t.source_classes(i).end());
    EXPECT_EQ(static_cast<int>(remapped_union.size()), t.num_known_classes());

    // shared(i, j) == shared(j, i).
    for (int i = 0; i < n_sources; ++i)
      for (int j = i + 1; j < n_sources; ++j)
        EXPECT_EQ(t.shared_and_private(i, j).first, t.shared_and_private(j, i).first);

    // Remapping round-trips.
    for (int raw : t.label_space().known_classes)
      EXPECT_EQ(t.to_raw(t.to_internal(raw)), raw);
    for (int idx = 0; idx < t.num_known_classes(); ++idx)
      EXPECT_EQ(t.to_internal(t.to_raw(idx)), idx);
  }
}

TEST(TaskSerialization, RoundTrip) {
  auto t = GmdaTask::build({{0, 2, 5}, {2, 7}}, true, 42, {"mm", "sv", "mt"});
  auto j = t.to_json();
  auto back = GmdaTask::from_json(j);
  EXPECT_EQ(back.num_known_classes(), t.num_known_classes());
  EXPECT_EQ(back.domain_names(), t.domain_names());
  EXPECT_EQ(back.source_classes(), t.source_classes());
  EXPECT_EQ(back.seed(), t.seed());
}
