// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dst {
namespace {

using namespace dst::testing;

const GoalState kEmpty;

EvaluationReport score(const ScoringFixture& f, ScheduleMode mode = ScheduleMode::joint_onset) {
  ScoreAccumulator acc(mode);
  for (std::size_t d = 0; d < f.golds.size(); ++d) acc.add_dialogue(f.preds[d], f.golds[d]);
  return acc.report("fixture", "hand");
}

TEST(Schedule2, SkipsTurnsBeforeFirstGoal) {
  const std::vector<GoalState> golds = {kEmpty, kEmpty, GoalState("indian", "none", "none"),
                                        GoalState("indian", "west", "none"), kEmpty};
  EXPECT_EQ(schedule2_scored_turns(golds), (std::set<std::size_t>{2, 3, 4}));
}

TEST(Schedule2, DontcareCountsAsTracked) {
  EXPECT_EQ(schedule2_scored_turns({kEmpty, GoalState("none", "dontcare", "none")}), (std::set<std::size_t>{1}));
}

TEST(Schedule2, AllNoneDialogueScoresNothing) {
  ScoreAccumulator acc;
  acc.add_dialogue({kEmpty, GoalState("indian", "none", "none")}, {kEmpty, kEmpty});
  const auto r = acc.report();
  EXPECT_EQ(r.n_scored_turns, 0u);
  EXPECT_EQ(r.n_skipped_turns, 2u);
  EXPECT_EQ(r.joint_goal_accuracy, 0.0);
}

TEST(Accuracy, CraftedFixtureJoint) {
  const auto r = score(crafted_scoring_fixture());
  EXPECT_EQ(r.joint_goal_accuracy, 0.625);
  EXPECT_EQ(r.n_scored_turns, 8u);
  EXPECT_EQ(r.n_skipped_turns, 3u);
}

TEST(Accuracy, CraftedFixturePerSlotJointOnset) {
  const auto r = score(crafted_scoring_fixture());
  EXPECT_EQ(r.per_slot_accuracy[0], 1.0);
  EXPECT_EQ(r.per_slot_accuracy[1], 0.75);
  EXPECT_EQ(r.per_slot_accuracy[2], 0.875);
}

TEST(Accuracy, CraftedFixturePerSlotOwnOnset) {
  const auto r = score(crafted_scoring_fixture(), ScheduleMode::per_slot_onset);
  EXPECT_EQ(r.joint_goal_accuracy, 0.625);
  EXPECT_EQ(r.per_slot_accuracy[1], 0.6);
}

TEST(Accuracy, JointHelperAgreesWithAccumulator) {
  const auto f = crafted_scoring_fixture();
  EXPECT_EQ(joint_accuracy(f.preds[2], f.golds[2], schedule2_scored_turns(f.golds[2])), 1.0 / 3.0);
  EXPECT_THROW(joint_accuracy(f.preds[0], f.golds[2], {}), DimensionError);
}

TEST(Accuracy, OneWrongSlotMakesTurnJointlyWrong) {
  ScoreAccumulator acc;
  acc.add_dialogue({GoalState("indian", "west", "cheap")}, {GoalState("indian", "west", "moderate")});
  const auto r = acc.report();
  EXPECT_EQ(r.joint_goal_accuracy, 0.0);
  EXPECT_EQ(r.per_slot_accuracy[0], 1.0);
  EXPECT_EQ(r.per_slot_accuracy[2], 0.0);
}

TEST(Accuracy, JointNeverExceedsAnySlot) {
  const auto slots = tiny_slots();
  Rng rng(1);
  const auto random_state = [&] {
    GoalState g;
    for (std::size_t s = 0; s < kGoalSlots; ++s)
      g.values[s] = slots[s].value(static_cast<int>(rng.below(slots[s].size())));
    return g;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    ScoreAccumulator acc;
    for (std::size_t d = 0, n = 1 + rng.below(4); d < n; ++d) {
      std::vector<GoalState> preds, golds;
      for (std::size_t t = 0, len = 1 + rng.below(6); t < len; ++t) {
        golds.push_back(random_state());
        preds.push_back(rng.bernoulli(0.5) ? golds.back() : random_state());
      }
      acc.add_dialogue(preds, golds);
    }
    const auto r = acc.report();
    for (double a : r.per_slot_accuracy) ASSERT_LE(r.joint_goal_accuracy, a);
  }
}

TEST(Evaluate, UnknownGoldValueIsConfigError) {
  const auto corpus = micro_corpus(4, 2);
  const Tracker m(ModelConfig{ModelKind::independent, 4, 4, 1.0, 1}, tiny_words(5), tiny_slots());
  auto dialogues = corpus.dialogues;
  dialogues[0].turns[0].gold = GoalState("klingon", "none", "none");
  EXPECT_THROW(evaluate(m, dialogues, corpus.db), ConfigError);
}

TEST(Evaluate, DeterministicAndOrderIndependent) {
  const auto corpus = micro_corpus(10, 3);
  const auto vocab = build_vocabularies(corpus.dialogues, corpus.ontology);
  for (ModelKind kind : {ModelKind::independent, ModelKind::encdec}) {
    const Tracker m(ModelConfig{kind, 8, 8, 1.0, 4}, vocab.words, vocab.slots);
    const auto a = evaluate(m, corpus.dialogues, corpus.db);
    const auto b = evaluate(m, corpus.dialogues, corpus.db);
    auto reversed = corpus.dialogues;
    std::reverse(reversed.begin(), reversed.end());
    const auto c = evaluate(m, reversed, corpus.db);
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_EQ(a.joint_goal_accuracy, c.joint_goal_accuracy);
    EXPECT_EQ(a.per_slot_accuracy, c.per_slot_accuracy);
    if (kind == ModelKind::encdec) {
      EXPECT_GT(a.n_decoded, 0u);
    }
  }
}

TEST(Evaluate, PerTurnPredictionsMatchPrefixEncoding) {
  const auto corpus = micro_corpus(3, 5);
  const auto vocab = build_vocabularies(corpus.dialogues, corpus.ontology);
  const Tracker m(ModelConfig{ModelKind::independent, 8, 8, 1.0, 6}, vocab.words, vocab.slots);
  const auto examples = build_examples({corpus.dialogues[0]}, corpus.db, vocab.words);
  const auto preds = predict_dialogue(m, corpus.dialogues[0], corpus.db);
  ASSERT_EQ(preds.size(), examples.size());
  for (std::size_t t = 0; t < preds.size(); ++t)
    EXPECT_EQ(preds[t].state, m.predict(m.encode(examples[t].tokens)).state);
}

TEST(Report, TableAndJson) {
  const auto r = score(crafted_scoring_fixture());
  const auto table = r.to_table();
  EXPECT_NE(table.find("0.625"), std::string::npos);
  EXPECT_NE(table.find("fixture"), std::string::npos);
  const auto j = r.to_json();
  EXPECT_EQ(j.at("per_slot_accuracy").at("area"), 0.75);
  EXPECT_FALSE(j.contains("structural_validity"));
}

}  // namespace
}  // namespace dst
