// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "test_util.hpp"

namespace dst {
namespace {

using namespace dst::testing;
using nlohmann::json;
namespace fs = std::filesystem;

json log_turn(int index, const std::string& system, const std::string& live, const std::string& batch) {
  return {{"turn-index", index},
          {"output", {{"transcript", system}}},
          {"input",
           {{"live", {{"asr-hyps", json::array({{{"asr-hyp", live}, {"score", -0.1}},
                                               {{"asr-hyp", "noise"}, {"score", -2.0}}})}}},
            {"batch", {{"asr-hyps", json::array({{{"asr-hyp", batch}, {"score", -0.2}}})}}}}}};
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump();
}

// Three turns; area set at turn 1, food at turn 2, area kept by carry-forward.
void write_fixture_call(const fs::path& dir) {
  write_json(dir / "log.json",
             {{"session-id", "voip-fixture"},
              {"turns", json::array({log_turn(0, "Hello, welcome!", "hi", "hi there"),
                                     log_turn(1, "What part of town?", "West part of town.", "west"),
                                     log_turn(2, "What kind of food?", "Indian", "indian food")})}});
  write_json(dir / "label.json",
             {{"session-id", "voip-fixture"},
              {"turns", json::array({{{"turn-index", 0}, {"goal-labels", json::object()}},
                                     {{"turn-index", 1}, {"goal-labels", {{"area", "west"}}}},
                                     {{"turn-index", 2}, {"goal-labels", {{"food", "Indian"}}}}})}});
}

TEST(LoadDstc2, ReadsTurnsAndCarriesGoalForward) {
  TempDir tmp("load");
  write_fixture_call(tmp.path / "data" / "call1");
  const auto d = load_dstc2_call(tmp.path / "data" / "call1", "call1", AsrSource::live);
  EXPECT_EQ(d.id, "voip-fixture");
  ASSERT_EQ(d.turns.size(), 3u);
  EXPECT_EQ(d.turns[1].system_words, (std::vector<std::string>{"what", "part", "of", "town"}));
  EXPECT_EQ(d.turns[1].user_words, (std::vector<std::string>{"west", "part", "of", "town"}));
  EXPECT_EQ(d.turns[0].gold, GoalState());
  EXPECT_EQ(d.turns[1].gold, GoalState("none", "west", "none"));
  EXPECT_EQ(d.turns[2].gold, GoalState("indian", "west", "none"));
}

TEST(LoadDstc2, BatchAsrSource) {
  TempDir tmp("batch");
  write_fixture_call(tmp.path / "c");
  const auto d = load_dstc2_call(tmp.path / "c", "c", AsrSource::batch);
  EXPECT_EQ(d.turns[2].user_words, (std::vector<std::string>{"indian", "food"}));
}

TEST(LoadDstc2, OneTurnFixture) {
  TempDir tmp("one");
  write_json(tmp.path / "c" / "log.json", {{"turns", json::array({log_turn(0, "hello", "indian", "")})}});
  write_json(tmp.path / "c" / "label.json",
             {{"turns", json::array({{{"goal-labels", {{"food", "indian"}}}}})}});
  const auto d = load_dstc2_call(tmp.path / "c", "c", AsrSource::live);
  ASSERT_EQ(d.turns.size(), 1u);
  EXPECT_EQ(d.turns[0].gold.food(), "indian");
  EXPECT_EQ(d.id, "c");
}

TEST(LoadDstc2, FileListResolvesRelativeToRoot) {
  TempDir tmp("flist");
  write_fixture_call(tmp.path / "data" / "a");
  write_fixture_call(tmp.path / "data" / "b");
  std::ofstream(tmp.path / "list.flist") << "data/a\n\ndata/b\n";
  const auto ds = load_dstc2(tmp.path, tmp.path / "list.flist");
  EXPECT_EQ(ds.size(), 2u);
}

TEST(LoadDstc2, MissingFileNamesCall) {
  TempDir tmp("missing");
  fs::create_directories(tmp.path / "gone");
  try {
    load_dstc2_call(tmp.path / "gone", "voip-gone", AsrSource::live);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("voip-gone"), std::string::npos) << e.what();
  }
}

TEST(LoadDstc2, MalformedRecordReportsPathAndTurn) {
  TempDir tmp("malformed");
  write_fixture_call(tmp.path / "c");
  write_json(tmp.path / "c" / "label.json",
             {{"turns", json::array({{{"goal-labels", json::object()}},
                                     {{"goal-labels", {{"food", 42}}}},
                                     {{"goal-labels", json::object()}}})}});
  try {
    load_dstc2_call(tmp.path / "c", "c", AsrSource::live);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("label.json"), std::string::npos) << msg;
    EXPECT_NE(msg.find("turn 1"), std::string::npos) << msg;
  }
}

TEST(LoadDstc2, WriterRoundTrip) {
  TempDir tmp("roundtrip");
  const auto corpus = micro_corpus(4, 5);
  for (const auto& d : corpus.dialogues) {
    write_dstc2_call(tmp.path / d.id, d);
    const auto back = load_dstc2_call(tmp.path / d.id, d.id, AsrSource::live);
    ASSERT_EQ(back.turns.size(), d.turns.size());
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      EXPECT_EQ(back.turns[t].system_words, d.turns[t].system_words);
      EXPECT_EQ(back.turns[t].user_words, d.turns[t].user_words);
      EXPECT_EQ(back.turns[t].gold, d.turns[t].gold);
    }
  }
}

TEST(Ontology, MissingSlotIsConfigError) {
  EXPECT_THROW(Ontology::from_json({{"informable", {{"food", {"indian"}}, {"area", {"west"}}}}}),
               ConfigError);
  EXPECT_THROW(Ontology::from_json(json::object()), ConfigError);
}

TEST(Vocabularies, SlotVocabularyLayout) {
  Ontology o;
  o.values = {{{"indian", "chinese"}, {"west"}, {"cheap", "expensive"}}};
  const auto v = build_vocabularies({}, o);
  EXPECT_TRUE(v.slots[2].contains("none"));
  EXPECT_EQ(v.slots[0].size(), 2u + 2u);
  EXPECT_EQ(v.slots[0].value(0), "none");
  EXPECT_EQ(v.slots[0].value(1), "dontcare");
  EXPECT_EQ(v.slots[1].size(), 3u);
}

TEST(Vocabularies, WordCountsComeFromTrainingDialogues) {
  const auto corpus = micro_corpus(6, 1);
  const auto once = build_vocabularies(corpus.dialogues, corpus.ontology, 1);
  const auto twice = build_vocabularies(corpus.dialogues, corpus.ontology, 2);
  EXPECT_TRUE(once.words.contains("restaurant"));
  EXPECT_LT(twice.words.size(), once.words.size());
  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus.dialogues)
    for (const auto& t : d.turns) {
      for (const auto& w : t.system_words) ++counts[w];
      for (const auto& w : t.user_words) ++counts[w];
    }
  for (const auto& [w, n] : counts) EXPECT_EQ(twice.words.contains(w), n >= 2) << w;
}

TEST(Examples, PrefixPropertyAndTargets) {
  TempDir tmp("examples");
  write_fixture_call(tmp.path / "c");
  const auto d = load_dstc2_call(tmp.path / "c", "c", AsrSource::live);
  const Database db(std::vector<DatabaseRecord>{{{"india house", "indian", "expensive", "west", "1", "x"}}});
  const auto vocab = build_vocabularies({d}, Ontology{{{{"indian"}, {"west"}, {"cheap"}}}});
  const auto ex = build_examples(d, db, vocab.words);
  ASSERT_EQ(ex.size(), 3u);
  for (std::size_t t = 1; t < ex.size(); ++t) {
    ASSERT_GT(ex[t].tokens.size(), ex[t - 1].tokens.size());
    EXPECT_TRUE(std::equal(ex[t - 1].tokens.begin(), ex[t - 1].tokens.end(), ex[t].tokens.begin()));
  }
  EXPECT_EQ(ex[2].target, GoalState("indian", "west", "none"));
  EXPECT_EQ(ex[2].turn_boundaries, (std::vector<std::size_t>{3, 11, 16}));
  EXPECT_EQ(ex[2].last_turn_start(), 11u);
  EXPECT_EQ(ex[0].last_turn_start(), 0u);
  // System words precede user words within a turn.
  EXPECT_EQ(ex[0].tokens[0].role_bit, 1);
  EXPECT_EQ(ex[0].tokens.back().role_bit, 0);
}

TEST(Buckets, DecilePartition) {
  std::vector<std::size_t> lengths;
  for (std::size_t i = 1; i <= 100; ++i) lengths.push_back(i);
  const auto buckets = bucket_examples(lengths, 10);
  ASSERT_EQ(buckets.size(), 10u);
  std::set<std::size_t> seen;
  for (const auto& b : buckets) {
    EXPECT_NEAR(static_cast<double>(b.examples.size()), 10.0, 1.0);
    for (std::size_t i : b.examples) {
      EXPECT_GT(lengths[i], b.min_exclusive);
      EXPECT_LE(lengths[i], b.max_inclusive);
      EXPECT_TRUE(seen.insert(i).second);
    }
  }
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Buckets, EqualLengthsCollapseToOne) {
  const auto buckets = bucket_examples(std::vector<std::size_t>(37, 12), 10);
  ASSERT_EQ(buckets.size(), 1u);
  EXPECT_EQ(buckets[0].examples.size(), 37u);
}

TEST(Buckets, UniformLengthBoundariesAtDeciles) {
  std::vector<std::size_t> lengths;
  for (std::size_t i = 1; i <= 1000; ++i) lengths.push_back(1001 - i);
  const auto buckets = bucket_examples(lengths, 10);
  ASSERT_EQ(buckets.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(buckets[k].max_inclusive, 100 * (k + 1));
}

TEST(Buckets, SkewedLengthsMergeDuplicateBoundaries) {
  std::vector<std::size_t> lengths(90, 5);
  for (std::size_t i = 0; i < 10; ++i) lengths.push_back(50 + i);
  const auto buckets = bucket_examples(lengths, 10);
  EXPECT_EQ(buckets.size(), 2u);
  EXPECT_EQ(buckets[0].examples.size(), 90u);
}

TEST(Buckets, EmptyInputThrows) { EXPECT_THROW(bucket_examples(std::vector<std::size_t>{}, 10), ConfigError); }

TEST(Resplit, StandardCountsGiveFloorAllocation) {
  const auto s = split_sizes(1612 + 506 + 1117, {0.8, 0.1, 0.1});
  EXPECT_EQ(s.train, 2589u);
  EXPECT_EQ(s.dev, 323u);
  EXPECT_EQ(s.test, 323u);
}

TEST(Resplit, PartitionDeterministicBySeed) {
  std::vector<int> ids(3235);
  std::iota(ids.begin(), ids.end(), 0);
  const auto a = resplit_items(ids, {0.8, 0.1, 0.1}, 42);
  const auto b = resplit_items(ids, {0.8, 0.1, 0.1}, 42);
  const auto c = resplit_items(ids, {0.8, 0.1, 0.1}, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::vector<int> all;
  for (const auto& part : a) all.insert(all.end(), part.begin(), part.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, ids);
  EXPECT_EQ(a[0].size(), 2589u);
}

TEST(Resplit, AllToTrain) {
  const auto corpus = micro_corpus(7, 2);
  const auto s = resplit(corpus.dialogues, {1, 0, 0}, 1);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_TRUE(s.dev.empty());
  EXPECT_TRUE(s.test.empty());
}

TEST(Resplit, InvalidInputs) {
  EXPECT_THROW(split_sizes(10, {0.5, 0.5, 0.5}), ConfigError);
  EXPECT_THROW(split_sizes(10, {1.2, -0.1, -0.1}), ConfigError);
  EXPECT_THROW(resplit({}, {0.8, 0.1, 0.1}, 0), ConfigError);
}

TEST(TripleFrequency, IdenticalTargetsShareOneEntry) {
  TrainingExample a, b;
  a.target = b.target = GoalState("indian", "west", "none");
  const auto h = triple_frequency(std::vector<TrainingExample>{a, b});
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].count, 2u);
  EXPECT_TRUE(triple_frequency(std::vector<TrainingExample>{}).empty());
}

TEST(TripleFrequency, AscendingWithUnseenHeldOut) {
  Dialogue train{"t", {}};
  for (const auto& g : {GoalState("a", "b", "c"), GoalState("a", "b", "c"), GoalState("x", "y", "z"),
                        GoalState("a", "b", "c")})
    train.turns.push_back({train.turns.size(), {}, {}, g});
  Dialogue dev{"d", {}};
  for (const auto& g : {GoalState("x", "y", "z"), GoalState("q", "q", "q"), GoalState("q", "q", "q")})
    dev.turns.push_back({dev.turns.size(), {}, {}, g});
  const auto h = triple_frequency({train}, {dev});
  ASSERT_EQ(h.entries.size(), 2u);
  EXPECT_EQ(h.entries[0].count, 1u);
  EXPECT_EQ(h.entries[1].count, 3u);
  EXPECT_EQ(h.unseen_distinct, 1u);
  EXPECT_EQ(h.unseen_turns, 2u);
}

TEST(HistoryLength, NearestRankPercentile) {
  std::vector<std::size_t> v;
  for (std::size_t i = 1; i <= 20; ++i) v.push_back(i);
  EXPECT_EQ(percentile(v, 95.0), 19u);
  EXPECT_EQ(percentile(v, 100.0), 20u);
  EXPECT_EQ(percentile({}, 50.0), 0u);
}

TEST(HistoryLength, CumulativePerTurn) {
  Dialogue d{"d", {}};
  d.turns.push_back({0, {"a", "b"}, {"c"}, {}});
  d.turns.push_back({1, {"d"}, {}, {}});
  EXPECT_EQ(history_lengths({d}), (std::vector<std::size_t>{3, 4}));
}

TEST(SyntheticCorpus, ShapeAndDeterminism) {
  const auto a = micro_corpus();
  const auto b = micro_corpus();
  ASSERT_EQ(a.dialogues.size(), 20u);
  for (std::size_t s = 0; s < kGoalSlots; ++s) EXPECT_EQ(a.ontology.values[s].size(), 3u);
  for (std::size_t i = 0; i < a.dialogues.size(); ++i) {
    ASSERT_EQ(a.dialogues[i].turns.size(), b.dialogues[i].turns.size());
    for (std::size_t t = 0; t < a.dialogues[i].turns.size(); ++t) {
      EXPECT_EQ(a.dialogues[i].turns[t].user_words, b.dialogues[i].turns[t].user_words);
      EXPECT_EQ(a.dialogues[i].turns[t].turn_index, t);
    }
  }
}

TEST(SyntheticCorpus, BundledCopyMatchesGenerator) {
  const std::filesystem::path root = DST_MICRO_CORPUS;
  const auto loaded = load_dstc2(root, root / "dstc2_train.flist", AsrSource::live);
  const auto generated = micro_corpus();
  ASSERT_EQ(loaded.size(), generated.dialogues.size());
  for (std::size_t d = 0; d < loaded.size(); ++d) {
    ASSERT_EQ(loaded[d].turns.size(), generated.dialogues[d].turns.size());
    for (std::size_t t = 0; t < loaded[d].turns.size(); ++t) {
      EXPECT_EQ(loaded[d].turns[t].system_words, generated.dialogues[d].turns[t].system_words);
      EXPECT_EQ(loaded[d].turns[t].user_words, generated.dialogues[d].turns[t].user_words);
      EXPECT_EQ(loaded[d].turns[t].gold, generated.dialogues[d].turns[t].gold);
    }
  }
}

}  // namespace
}  // namespace dst
