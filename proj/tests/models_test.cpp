// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

namespace dst {
namespace {

using namespace dst::testing;

ModelConfig micro_config(ModelKind kind, std::uint64_t seed = 3) {
  return ModelConfig{kind, 5, 4, 1.0, seed};
}

std::vector<GoalState> micro_triples() {
  std::vector<GoalState> t = {GoalState("indian", "west", "none"), GoalState("none", "none", "none"),
                              GoalState("chinese", "north", "cheap")};
  std::sort(t.begin(), t.end());
  return t;
}

template <class T>
void randomize(TrackerModel<T>& m, Rng& rng, double scale) {
  testing::randomize(m.params(), rng, scale);
}

TrainingExample example_of(std::vector<TokenInput> tokens, GoalState target,
                           std::vector<std::size_t> boundaries = {}) {
  TrainingExample ex;
  ex.tokens = std::move(tokens);
  ex.target = std::move(target);
  ex.turn_boundaries = boundaries.empty() ? std::vector<std::size_t>{ex.tokens.size()} : boundaries;
  return ex;
}

TEST(SequenceToGoalState, PositionalReadBack) {
  const auto slots = tiny_slots();
  EXPECT_EQ(sequence_to_goalstate({"indian", "west", "none", "<eos>"}, slots),
            GoalState("indian", "west", "none"));
  EXPECT_EQ(sequence_to_goalstate({"<eos>"}, slots), GoalState());
  EXPECT_EQ(sequence_to_goalstate({"west", "indian", "cheap", "<eos>"}, slots),
            GoalState("none", "none", "cheap"));
  EXPECT_EQ(sequence_to_goalstate({"indian", "<eos>", "cheap"}, slots), GoalState("indian", "none", "none"));
  EXPECT_EQ(sequence_to_goalstate({}, slots), GoalState());
}

TEST(SequenceToGoalState, StructuralValidity) {
  const auto slots = tiny_slots();
  EXPECT_TRUE(is_structurally_valid({"indian", "west", "none", "<eos>"}, slots));
  EXPECT_TRUE(is_structurally_valid({"dontcare", "none", "cheap", "<eos>"}, slots));
  EXPECT_FALSE(is_structurally_valid({"west", "indian", "none", "<eos>"}, slots));
  EXPECT_FALSE(is_structurally_valid({"indian", "west", "<eos>"}, slots));
  EXPECT_FALSE(is_structurally_valid({"indian", "west", "none", "none"}, slots));
}

TEST(DecoderVocabulary, UnionOfSlotValuesPlusEos) {
  const DecoderVocabulary v(tiny_slots());
  // none and dontcare are shared across slots.
  EXPECT_EQ(v.size(), 2u + 9u + 1u);
  EXPECT_EQ(v.token(v.eos()), "<eos>");
  EXPECT_EQ(v.go(), static_cast<int>(v.size()));
  EXPECT_THROW(v.id("mexican"), IndexError);
}

TEST(Model, KindDeterminesParameters) {
  const Tracker indep(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  const Tracker encdec(micro_config(ModelKind::encdec), tiny_words(11), tiny_slots());
  const Tracker joint(micro_config(ModelKind::joint), tiny_words(11), tiny_slots(), micro_triples());
  const auto names = [](const Tracker& m) {
    std::vector<std::string> out;
    for (const auto& p : m.params().all()) out.push_back(p.name);
    return out;
  };
  const auto has_prefix = [](const std::vector<std::string>& v, const std::string& prefix) {
    return std::any_of(v.begin(), v.end(), [&](const auto& n) { return n.rfind(prefix, 0) == 0; });
  };
  EXPECT_TRUE(has_prefix(names(indep), "head.food"));
  EXPECT_FALSE(has_prefix(names(indep), "decoder"));
  EXPECT_TRUE(has_prefix(names(encdec), "attention"));
  EXPECT_FALSE(has_prefix(names(encdec), "head."));
  EXPECT_TRUE(has_prefix(names(joint), "joint"));
  EXPECT_EQ(joint.params().at("joint.W").value.shape, (Shape{3, 4}));
  EXPECT_EQ(indep.params().at("encoder.W_z").value.shape, (Shape{4, 5 + 7}));
}

TEST(Model, KindMismatchIsConfigError) {
  const Tracker indep(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  const auto s = indep.initial_state();
  EXPECT_THROW(indep.decode_encdec(s), ConfigError);
  EXPECT_THROW(indep.predict_joint(s), ConfigError);
  const Tracker encdec(micro_config(ModelKind::encdec), tiny_words(11), tiny_slots());
  EXPECT_THROW(encdec.predict_independent(s), ConfigError);
  EXPECT_THROW(Tracker(micro_config(ModelKind::joint), tiny_words(11), tiny_slots()), ConfigError);
}

TEST(Encoder, EmptyInputIsZeroState) {
  const Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  const auto s = m.encode({});
  EXPECT_EQ(s.h.data, std::vector<float>(4, 0.0f));
  EXPECT_TRUE(s.all_states.empty());
}

TEST(Encoder, ZeroGruWithOneTokenStaysZero) {
  Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  for (auto& p : m.params().all())
    if (p.name.rfind("encoder.", 0) == 0) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  Rng rng(1);
  const auto tokens = random_tokens(1, 11, rng);
  const auto s = m.encode(tokens);
  EXPECT_EQ(s.h.data, std::vector<float>(4, 0.0f));
  EXPECT_EQ(s.all_states.size(), 1u);
}

TEST(Encoder, IncrementalEqualsBatchBitExact) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tracker m(micro_config(ModelKind::encdec, 10 + trial), tiny_words(11), tiny_slots());
    randomize(m, rng, 1.0);
    const auto tokens = random_tokens(1 + rng.below(12), 11, rng);
    const auto inc = m.encode(tokens);

    ad::Tape<float> tape;
    const auto b = m.bind(tape, false);
    const std::vector<const std::vector<TokenInput>*> seqs = {&tokens};
    Rng unused(0);
    const auto batch = m.encode_batch(tape, b, seqs, Mode::eval, unused);
    ASSERT_EQ(batch.states.size(), inc.all_states.size());
    for (std::size_t t = 0; t < inc.all_states.size(); ++t)
      ASSERT_EQ(batch.states[t].value().data, inc.all_states[t].data);
    ASSERT_EQ(batch.final.value().data, inc.h.data);
  }
}

TEST(Encoder, PaddedBatchRowsEqualUnbatched) {
  Rng rng(3);
  Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  randomize(m, rng, 1.0);
  std::vector<std::vector<TokenInput>> seqs;
  for (std::size_t n : {5u, 2u, 7u, 1u}) seqs.push_back(random_tokens(n, 11, rng));
  std::vector<const std::vector<TokenInput>*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  ad::Tape<float> tape;
  const auto b = m.bind(tape, false);
  Rng unused(0);
  const auto batch = m.encode_batch(tape, b, ptrs, Mode::eval, unused);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const auto inc = m.encode(seqs[r]);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(batch.final.value()(r, c), inc.h.data[c]);
  }
}

TEST(Heads, ZeroWeightsGiveUniformDistributions) {
  Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  for (auto& p : m.params().all())
    if (p.name.rfind("head.", 0) == 0) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  Rng rng(4);
  const auto p = m.predict(m.encode(random_tokens(3, 11, rng)));
  ASSERT_EQ(p.distributions.size(), 3u);
  for (const auto& d : p.distributions)
    for (float v : d.data) EXPECT_FLOAT_EQ(v, 1.0f / 5.0f);
}

TEST(Heads, DistributionsSumToOne) {
  Rng rng(5);
  Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  randomize(m, rng, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = m.predict(m.encode(random_tokens(1 + rng.below(6), 11, rng)));
    for (const auto& d : p.distributions)
      EXPECT_NEAR(std::accumulate(d.data.begin(), d.data.end(), 0.0), 1.0, 1e-6);
  }
}

TEST(Heads, SlotHeadsAreIndependentOfEachOther) {
  Rng rng(6);
  Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  randomize(m, rng, 2.0);
  const auto s = m.encode(random_tokens(4, 11, rng));
  const auto before = m.predict(s);
  for (auto& v : m.params().at("head.area.W").value.data) v = -v;
  const auto after = m.predict(s);
  EXPECT_EQ(before.distributions[0], after.distributions[0]);
  EXPECT_EQ(before.distributions[2], after.distributions[2]);
}

TEST(Joint, SingleTripleAlwaysPredicted) {
  Rng rng(7);
  Tracker m(micro_config(ModelKind::joint), tiny_words(11), tiny_slots(), {GoalState("indian", "west", "none")});
  randomize(m, rng, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = m.predict(m.encode(random_tokens(1 + rng.below(5), 11, rng)));
    EXPECT_EQ(p.state, GoalState("indian", "west", "none"));
    EXPECT_NEAR(p.distributions[0].data[0], 1.0f, 1e-6);
  }
}

TEST(Joint, UnseenTripleCanNeverBePredicted) {
  Rng rng(8);
  Tracker m(micro_config(ModelKind::joint), tiny_words(11), tiny_slots(), micro_triples());
  randomize(m, rng, 2.0);
  const GoalState unseen("italian", "south", "expensive");
  EXPECT_EQ(m.find_triple(unseen), -1);
  for (int trial = 0; trial < 20; ++trial)
    EXPECT_NE(m.predict(m.encode(random_tokens(1 + rng.below(5), 11, rng))).state, unseen);
}

TEST(EncDec, DecodeNeverExceedsFourSteps) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    Tracker m(micro_config(ModelKind::encdec, 100 + trial), tiny_words(11), tiny_slots());
    randomize(m, rng, 2.0);
    const auto p = m.predict(m.encode(random_tokens(rng.below(6), 11, rng)));
    EXPECT_LE(p.decoded.size(), 4u);
    EXPECT_EQ(p.distributions.size(), p.decoded.size());
    EXPECT_EQ(p.state, sequence_to_goalstate(p.decoded, m.slots()));
  }
}

TEST(EncDec, TeacherForcingTarget) {
  const Tracker m(micro_config(ModelKind::encdec), tiny_words(11), tiny_slots());
  const GoalState g("indian", "west", "none");
  std::vector<std::string> target;
  for (std::size_t k = 0; k < 4; ++k) target.push_back(m.decoder_vocab().token(m.decoder_target(g, k)));
  EXPECT_EQ(target, (std::vector<std::string>{"indian", "west", "none", "<eos>"}));
  EXPECT_THROW(m.decoder_target(GoalState("west", "none", "none"), 0), IndexError);
}

TEST(EncDec, FirstBatchStepMatchesGreedyFirstStep) {
  Rng rng(10);
  Tracker m(micro_config(ModelKind::encdec), tiny_words(11), tiny_slots());
  randomize(m, rng, 1.0);
  const auto ex = example_of(random_tokens(6, 11, rng), GoalState("indian", "west", "none"));
  const auto greedy = m.predict(m.encode(ex.tokens));
  ad::Tape<float> tape;
  const auto b = m.bind(tape, false);
  const TrainingExample* batch[] = {&ex};
  Rng unused(0);
  const auto out = m.forward_batch(tape, b, batch, Mode::eval, unused);
  ASSERT_EQ(out.probs.size(), 4u);
  EXPECT_EQ(out.probs[0].value().data, greedy.distributions[0].data);
}

TEST(Independent, BatchForwardMatchesPredict) {
  Rng rng(11);
  Tracker m(micro_config(ModelKind::independent), tiny_words(11), tiny_slots());
  randomize(m, rng, 1.0);
  const auto ex = example_of(random_tokens(5, 11, rng), GoalState("chinese", "none", "cheap"));
  const auto pred = m.predict(m.encode(ex.tokens));
  ad::Tape<float> tape;
  const auto b = m.bind(tape, false);
  const TrainingExample* batch[] = {&ex};
  Rng unused(0);
  const auto out = m.forward_batch(tape, b, batch, Mode::eval, unused);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(out.probs[s].value().data, pred.distributions[s].data);
  EXPECT_EQ(out.gold[1][0], m.slots()[1].id("none"));
}

// ---- finite-difference checks of the complete models -------------------------

void full_model_gradient_check(ModelKind kind) {
  Rng rng(20 + static_cast<int>(kind));
  std::vector<GoalState> triples;
  if (kind == ModelKind::joint) triples = micro_triples();
  TrackerModel<double> m(ModelConfig{kind, 3, 4, 1.0, 5}, tiny_words(11), tiny_slots(), triples);
  randomize(m, rng, 0.5);
  const auto a = example_of(random_tokens(6, 11, rng), GoalState("indian", "west", "none"), {2, 4, 6});
  const auto b = example_of(random_tokens(3, 11, rng), GoalState("chinese", "north", "cheap"), {1, 3});
  std::vector<DParam*> params;
  for (auto& p : m.params().all()) params.push_back(&p);
  const auto r = check_gradients(params, [&](DTape& tape) {
    const auto bound = m.bind(tape, true);
    const TrainingExample* batch[] = {&a, &b};
    Rng unused(0);
    return batch_loss(m.forward_batch(tape, bound, batch, Mode::train, unused));
  });
  EXPECT_TRUE(r.ok) << to_string(kind) << ": " << r.worst_entry;
  EXPECT_GT(r.checked, 100u);
}

TEST(FullModelGradients, Independent) { full_model_gradient_check(ModelKind::independent); }
TEST(FullModelGradients, Joint) { full_model_gradient_check(ModelKind::joint); }
TEST(FullModelGradients, EncDec) { full_model_gradient_check(ModelKind::encdec); }

// Detachment changes only the backward pass.
TEST(LastTurnScope, ForwardLossUnchanged) {
  Rng rng(31);
  for (ModelKind kind : {ModelKind::independent, ModelKind::encdec}) {
    TrackerModel<double> m(ModelConfig{kind, 3, 4, 1.0, 5}, tiny_words(11), tiny_slots());
    randomize(m, rng, 0.5);
    const auto a = example_of(random_tokens(6, 11, rng), GoalState("indian", "west", "none"), {2, 4, 6});
    const auto b = example_of(random_tokens(3, 11, rng), GoalState("chinese", "north", "cheap"), {1, 3});
    const TrainingExample* batch[] = {&a, &b};
    const auto loss = [&](bool last_turn) {
      DTape tape;
      const auto bound = m.bind(tape, false);
      Rng unused(0);
      return batch_loss(m.forward_batch(tape, bound, batch, Mode::train, unused, last_turn)).value()[0];
    };
    EXPECT_EQ(loss(true), loss(false)) << to_string(kind);
  }
}

TEST(LastTurnScope, EarlierWordsReceiveNoGradient) {
  Rng rng(30);
  TrackerModel<double> m(ModelConfig{ModelKind::independent, 3, 4, 1.0, 5}, tiny_words(11), tiny_slots());
  randomize(m, rng, 0.5);
  auto tokens = random_tokens(4, 11, rng);
  tokens[0].word_id = 1;
  tokens[1].word_id = 2;
  tokens[2].word_id = 3;
  tokens[3].word_id = 4;
  const auto ex = example_of(tokens, GoalState("indian", "west", "none"), {2, 4});
  DTape tape;
  const auto b = m.bind(tape, true);
  Rng unused(0);
  m.params().zero_grad();
  tape.backward(turn_loss(tape, m, b, ex, Mode::train, unused, LossScope::last_turn));
  const auto& g = m.params().at("embedding").grad;
  const auto row_norm = [&](std::size_t r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += std::abs(g[r * 3 + c]);
    return s;
  };
  EXPECT_EQ(row_norm(1), 0.0);
  EXPECT_EQ(row_norm(2), 0.0);
  EXPECT_GT(row_norm(3), 0.0);
  EXPECT_GT(row_norm(4), 0.0);
}

// ---- incremental session -----------------------------------------------------

TEST(Session, TrackingEqualsEncodeThenPredict) {
  const auto corpus = micro_corpus(3, 4);
  const auto vocab = build_vocabularies(corpus.dialogues, corpus.ontology);
  Rng rng(12);
  Tracker m(ModelConfig{ModelKind::encdec, 8, 6, 1.0, 1}, vocab.words, vocab.slots);
  randomize(m, rng, 1.0);
  TrackerSession<float> session(m, corpus.db);
  std::vector<TokenInput> consumed;
  for (const auto& t : corpus.dialogues[0].turns) {
    for (const auto& w : t.system_words) {
      const auto g = session.track_word(w, Role::system);
      consumed.push_back(featurize_word(w, Role::system, corpus.db, m.words()));
      const auto direct = m.predict(m.encode(consumed));
      ASSERT_EQ(g, direct.state);
      ASSERT_EQ(session.state().h, m.encode(consumed).h);
    }
    for (const auto& w : t.user_words) {
      session.track_word(w, Role::user);
      consumed.push_back(featurize_word(w, Role::user, corpus.db, m.words()));
    }
  }
  EXPECT_EQ(session.words_consumed(), consumed.size());
  EXPECT_EQ(session.state().h, m.encode(consumed).h);
}

TEST(Session, FreshStateIsConstantAndResetRestoresIt) {
  const Tracker m(ModelConfig{ModelKind::independent, 8, 6, 1.0, 1}, tiny_words(11), tiny_slots());
  const Database db;
  TrackerSession<float> session(m, db);
  const auto fresh = session.current();
  EXPECT_EQ(fresh, m.predict(m.initial_state()).state);
  session.track_word("w3", Role::user);
  session.track_word("w4", Role::user);
  session.reset();
  EXPECT_EQ(session.current(), fresh);
  EXPECT_EQ(session.words_consumed(), 0u);
}

TEST(Session, UnknownWordsUseUnk) {
  const Tracker m(ModelConfig{ModelKind::independent, 8, 6, 1.0, 1}, tiny_words(11), tiny_slots());
  const Database db;
  TrackerSession<float> a(m, db), b(m, db);
  a.track_word("never-seen", Role::user);
  b.track_word("<unk>", Role::user);
  EXPECT_EQ(a.state().h, b.state().h);
}

}  // namespace
}  // namespace dst
