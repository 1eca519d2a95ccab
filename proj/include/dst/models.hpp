// SPDX-License-Identifier: Apache-2.0
//
// Tracker architectures over one shared GRU word encoder:
//   independent  three softmax heads (food, area, pricerange) on h_T
//   joint        one softmax over the (food, area, pricerange) triples seen in training
//   encdec       GRU decoder with additive attention emitting food, area,
//                pricerange, <eos> as a token sequence
//
// Two execution paths share the same primitives. forward_batch() runs a padded
// mini-batch on a caller-owned tape for training. EncoderState + advance() run
// one word at a time on short evaluation tapes for incremental tracking and
// evaluation; with B = 1 both paths perform identical arithmetic.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dst/data.hpp"
#include "dst/features.hpp"
#include "dst/layers.hpp"

namespace dst {

enum class ModelKind { independent, joint, encdec };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::independent: return "indep";
    case ModelKind::joint: return "joint";
    case ModelKind::encdec: return "encdec";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "indep" || s == "independent") return ModelKind::independent;
  if (s == "joint") return ModelKind::joint;
  if (s == "encdec") return ModelKind::encdec;
  throw ConfigError("unknown model kind '" + s + "' (expected indep, joint or encdec)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::independent;
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 100;
  double dropout_keep = 0.7;
  std::uint64_t seed = 0;
};

/// Decoder output tokens: every value of every goal slot (deduplicated, slot
/// order) followed by <eos>. The GO input token is one row past the outputs.
class DecoderVocabulary {
 public:
  static constexpr std::string_view kEos = "<eos>";

  DecoderVocabulary() = default;
  explicit DecoderVocabulary(const SlotVocabularies& slots) {
    for (const auto& sv : slots)
      for (const auto& v : sv.values())
        if (std::find(tokens_.begin(), tokens_.end(), v) == tokens_.end()) tokens_.push_back(v);
    tokens_.emplace_back(kEos);
  }

  std::size_t size() const { return tokens_.size(); }
  int eos() const { return static_cast<int>(tokens_.size()) - 1; }
  int go() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& token) const {
    const auto it = std::find(tokens_.begin(), tokens_.end(), token);
    if (it == tokens_.end()) throw IndexError("'" + token + "' is not a decoder token");
    return static_cast<int>(it - tokens_.begin());
  }

 private:
  std::vector<std::string> tokens_;
};

/// Positional read-back of a decoded sequence (food, area, pricerange). A token
/// that is not a value of its position's slot, or a position at/after <eos>,
/// reads as none.
inline GoalState sequence_to_goalstate(const std::vector<std::string>& tokens,
                                       const SlotVocabularies& slots) {
  GoalState g;
  for (std::size_t k = 0; k < kGoalSlots && k < tokens.size(); ++k) {
    if (tokens[k] == DecoderVocabulary::kEos) break;
    if (slots[k].contains(tokens[k])) g.values[k] = tokens[k];
  }
  return g;
}

/// True for exactly (food value, area value, pricerange value, <eos>).
inline bool is_structurally_valid(const std::vector<std::string>& tokens,
                                  const SlotVocabularies& slots) {
  if (tokens.size() != kGoalSlots + 1 || tokens.back() != DecoderVocabulary::kEos) return false;
  for (std::size_t k = 0; k < kGoalSlots; ++k)
    if (!slots[k].contains(tokens[k])) return false;
  return true;
}

/// Encoder summary after some number of words.
template <class T>
struct EncoderState {
  BasicTensor<T> h;                          // [1×hidden]
  std::vector<BasicTensor<T>> all_states;    // one [1×hidden] per consumed word
};

template <class T>
struct Prediction {
  GoalState state;
  std::vector<BasicTensor<T>> distributions;  // indep: per slot; joint: one; encdec: per step
  std::vector<std::string> decoded;           // encdec only
};

/// Padded mini-batch forward output: one probability matrix per prediction
/// site with the matching gold class ids.
template <class T>
struct BatchOutput {
  std::vector<ad::Var<T>> probs;
  std::vector<std::vector<int>> gold;
};

template <class T>
class TrackerModel {
 public:
  static constexpr std::size_t kFeatureBits = 1 + kDbColumns;
  static constexpr std::size_t kMaxDecodeSteps = kGoalSlots + 1;

  struct Bound {
    ad::Var<T> embedding;
    typename GruCell<T>::Bound encoder;
    std::array<typename Dense<T>::Bound, kGoalSlots> heads;
    typename Dense<T>::Bound joint;
    ad::Var<T> dec_embedding;
    typename GruCell<T>::Bound decoder;
    typename Attention<T>::Bound attention;
    typename Dense<T>::Bound output;
  };

  TrackerModel(ModelConfig config, Vocabulary words, SlotVocabularies slots,
               std::vector<GoalState> triples = {})
      : config_(config),
        words_(std::move(words)),
        slots_(std::move(slots)),
        triples_(std::move(triples)),
        decoder_vocab_(slots_) {
    if (config_.embed_dim == 0 || config_.hidden_dim == 0) {
      throw ConfigError("embedding and hidden sizes must be positive");
    }
    if (config_.kind == ModelKind::joint && triples_.empty()) {
      throw ConfigError("joint model needs a non-empty triple vocabulary");
    }
    Rng rng(config_.seed);
    const std::size_t hid = config_.hidden_dim;
    embedding_ = Embedding<T>(params_, "embedding", words_.size(), config_.embed_dim, rng);
    encoder_ = GruCell<T>(params_, "encoder", input_dim(), hid, rng);
    switch (config_.kind) {
      case ModelKind::independent:
        for (std::size_t s = 0; s < kGoalSlots; ++s)
          heads_[s] = Dense<T>(params_, "head." + std::string(kSlotNames[s]), hid,
                               slots_[s].size(), rng);
        break;
      case ModelKind::joint:
        joint_ = Dense<T>(params_, "joint", hid, triples_.size(), rng);
        break;
      case ModelKind::encdec:
        dec_embedding_ = Embedding<T>(params_, "decoder.embedding", decoder_vocab_.size() + 1,
                                      config_.embed_dim, rng);
        decoder_ = GruCell<T>(params_, "decoder", config_.embed_dim + hid, hid, rng);
        attention_ = Attention<T>(params_, "attention", hid, hid, hid, rng);
        output_ = Dense<T>(params_, "output", 2 * hid, decoder_vocab_.size(), rng);
        break;
    }
  }

  // Parameters point into params_, so copies would alias the source.
  TrackerModel(const TrackerModel&) = delete;
  TrackerModel& operator=(const TrackerModel&) = delete;

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  std::size_t input_dim() const { return config_.embed_dim + kFeatureBits; }
  std::size_t hidden_dim() const { return config_.hidden_dim; }
  const Vocabulary& words() const { return words_; }
  const SlotVocabularies& slots() const { return slots_; }
  const std::vector<GoalState>& triples() const { return triples_; }
  const DecoderVocabulary& decoder_vocab() const { return decoder_vocab_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  Bound bind(ad::Tape<T>& tape, bool trainable) const {
    Bound b;
    b.embedding = embedding_.bind(tape, trainable);
    b.encoder = encoder_.bind(tape, trainable);
    switch (config_.kind) {
      case ModelKind::independent:
        for (std::size_t s = 0; s < kGoalSlots; ++s) b.heads[s] = heads_[s].bind(tape, trainable);
        break;
      case ModelKind::joint:
        b.joint = joint_.bind(tape, trainable);
        break;
      case ModelKind::encdec:
        b.dec_embedding = dec_embedding_.bind(tape, trainable);
        b.decoder = decoder_.bind(tape, trainable);
        b.attention = attention_.bind(tape, trainable);
        b.output = output_.bind(tape, trainable);
        break;
    }
    return b;
  }

  /// Encoder input X_t for a batch of tokens: [B × (embed + 7)].
  ad::Var<T> input_step(ad::Tape<T>& tape, const Bound& b, std::span<const TokenInput> tokens) const {
    std::vector<int> ids;
    BasicTensor<T> features({tokens.size(), kFeatureBits});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      ids.push_back(tokens[i].word_id);
      features(i, 0) = static_cast<T>(tokens[i].role_bit);
      for (std::size_t c = 0; c < kDbColumns; ++c) features(i, 1 + c) = static_cast<T>(tokens[i].db_bits[c]);
    }
    return ad::concat<T>({embed(b.embedding, std::span<const int>(ids)),
                          tape.constant(std::move(features))},
                         1);
  }

  // ---- incremental (evaluation) path -----------------------------------

  EncoderState<T> initial_state() const {
    return {BasicTensor<T>({1, config_.hidden_dim}), {}};
  }

  /// Consumes one word in eval mode.
  void advance(EncoderState<T>& state, const TokenInput& token) const {
    ad::Tape<T> tape;
    const Bound b = bind(tape, false);
    const auto x = input_step(tape, b, std::span<const TokenInput>(&token, 1));
    const auto h = gru_step(x, tape.constant(state.h), b.encoder);
    state.h = h.value();
    state.all_states.push_back(state.h);
  }

  EncoderState<T> encode(std::span<const TokenInput> tokens) const {
    EncoderState<T> s = initial_state();
    for (const auto& tok : tokens) advance(s, tok);
    return s;
  }

  Prediction<T> predict(const EncoderState<T>& enc) const {
    switch (config_.kind) {
      case ModelKind::independent: return predict_independent(enc);
      case ModelKind::joint: return predict_joint(enc);
      case ModelKind::encdec: return decode_encdec(enc);
    }
    throw ConfigError("unknown model kind");
  }

  Prediction<T> predict_independent(const EncoderState<T>& enc) const {
    require_kind(ModelKind::independent, "predict_independent");
    ad::Tape<T> tape;
    const Bound b = bind(tape, false);
    const auto h = tape.constant(enc.h);
    Prediction<T> p;
    for (std::size_t s = 0; s < kGoalSlots; ++s) {
      const auto probs = dense_softmax(h, b.heads[s]);
      p.distributions.push_back(probs.value());
      p.state.values[s] = slots_[s].value(argmax(probs.value().data));
    }
    return p;
  }

  Prediction<T> predict_joint(const EncoderState<T>& enc) const {
    require_kind(ModelKind::joint, "predict_joint");
    ad::Tape<T> tape;
    const Bound b = bind(tape, false);
    const auto probs = dense_softmax(tape.constant(enc.h), b.joint);
    Prediction<T> p;
    p.distributions.push_back(probs.value());
    p.state = triples_[static_cast<std::size_t>(argmax(probs.value().data))];
    return p;
  }

  /// Greedy decoding, at most four steps, stopping at <eos>.
  Prediction<T> decode_encdec(const EncoderState<T>& enc) const {
    require_kind(ModelKind::encdec, "decode_encdec");
    ad::Tape<T> tape;
    const Bound b = bind(tape, false);
    std::vector<ad::Var<T>> states;
    if (enc.all_states.empty()) {
      states.push_back(tape.constant(enc.h));
    } else {
      for (const auto& s : enc.all_states) states.push_back(tape.constant(s));
    }
    const auto mem = make_attention_memory<T>(states, b.attention);
    ad::Var<T> dec = tape.constant(enc.h);
    int prev = decoder_vocab_.go();
    Prediction<T> p;
    for (std::size_t k = 0; k < kMaxDecodeSteps; ++k) {
      const auto probs = decoder_step(b, mem, dec, std::span<const int>(&prev, 1));
      p.distributions.push_back(probs.value());
      prev = argmax(probs.value().data);
      p.decoded.push_back(decoder_vocab_.token(prev));
      if (prev == decoder_vocab_.eos()) break;
    }
    p.state = sequence_to_goalstate(p.decoded, slots_);
    return p;
  }

  // ---- batched (training) path -----------------------------------------

  struct EncodedBatch {
    std::vector<ad::Var<T>> states;  // one [B×hidden] per step
    ad::Var<T> final;                // [B×hidden], each row at its own last real step
    std::vector<std::size_t> lengths;
  };

  /// Runs the encoder over left-aligned padded sequences. Rows past their
  /// length copy h forward unchanged. `cut_at` (optional, per row) detaches the
  /// incoming state at that step so no gradient reaches earlier words.
  EncodedBatch encode_batch(ad::Tape<T>& tape, const Bound& b,
                            std::span<const std::vector<TokenInput>* const> seqs, Mode mode,
                            Rng& rng, std::span<const std::size_t> cut_at = {}) const {
    const std::size_t batch = seqs.size();
    EncodedBatch out;
    std::size_t max_len = 0;
    for (const auto* s : seqs) {
      out.lengths.push_back(s->size());
      max_len = std::max(max_len, s->size());
    }
    ad::Var<T> h = tape.constant(BasicTensor<T>({batch, config_.hidden_dim}));
    std::vector<TokenInput> step(batch);
    for (std::size_t t = 0; t < max_len; ++t) {
      if (!cut_at.empty()) h = cut_rows(tape, h, cut_at, t);
      bool all_active = true;
      for (std::size_t r = 0; r < batch; ++r) {
        const bool active = t < out.lengths[r];
        all_active = all_active && active;
        step[r] = active ? (*seqs[r])[t] : TokenInput{};
      }
      auto x = input_step(tape, b, step);
      x = dropout(x, config_.dropout_keep, mode, rng);
      const auto h_new = gru_step(x, h, b.encoder);
      if (all_active) {
        h = h_new;
      } else {
        BasicTensor<T> keep({batch, config_.hidden_dim});
        BasicTensor<T> hold({batch, config_.hidden_dim});
        for (std::size_t r = 0; r < batch; ++r) {
          const T k = t < out.lengths[r] ? T(1) : T(0);
          for (std::size_t c = 0; c < config_.hidden_dim; ++c) {
            keep(r, c) = k;
            hold(r, c) = T(1) - k;
          }
        }
        h = h_new * tape.constant(std::move(keep)) + h * tape.constant(std::move(hold));
      }
      out.states.push_back(h);
    }
    out.final = h;
    return out;
  }

  /// Forward pass of the model's head(s) for a batch of examples; teacher
  /// forcing for encdec.
  BatchOutput<T> forward_batch(ad::Tape<T>& tape, const Bound& b,
                               std::span<const TrainingExample* const> batch, Mode mode, Rng& rng,
                               bool last_turn_only = false) const {
    std::vector<const std::vector<TokenInput>*> seqs;
    std::vector<std::size_t> cuts;
    for (const auto* ex : batch) {
      seqs.push_back(&ex->tokens);
      cuts.push_back(ex->last_turn_start());
    }
    const auto enc = encode_batch(tape, b, seqs, mode, rng,
                                  last_turn_only ? std::span<const std::size_t>(cuts)
                                                 : std::span<const std::size_t>());
    const auto h_out = dropout(enc.final, config_.dropout_keep, mode, rng);
    BatchOutput<T> out;
    switch (config_.kind) {
      case ModelKind::independent:
        for (std::size_t s = 0; s < kGoalSlots; ++s) {
          out.probs.push_back(dense_softmax(h_out, b.heads[s]));
          std::vector<int> gold;
          for (const auto* ex : batch) gold.push_back(slot_target(ex->target, s));
          out.gold.push_back(std::move(gold));
        }
        break;
      case ModelKind::joint: {
        out.probs.push_back(dense_softmax(h_out, b.joint));
        std::vector<int> gold;
        for (const auto* ex : batch) gold.push_back(triple_id(ex->target));
        out.gold.push_back(std::move(gold));
        break;
      }
      case ModelKind::encdec: {
        std::vector<ad::Var<T>> states = enc.states;
        std::vector<int> mask;
        const std::size_t steps = std::max<std::size_t>(states.size(), 1);
        if (states.empty()) states.push_back(enc.final);
        bool padded = false;
        for (std::size_t r = 0; r < batch.size(); ++r)
          padded = padded || enc.lengths[r] != steps;
        if (padded) {
          mask.assign(batch.size() * steps, 0);
          for (std::size_t r = 0; r < batch.size(); ++r)
            for (std::size_t t = 0; t < std::max<std::size_t>(enc.lengths[r], 1); ++t)
              mask[r * steps + t] = 1;
        }
        const auto mem = make_attention_memory<T>(states, b.attention, std::move(mask));
        ad::Var<T> dec = h_out;
        std::vector<int> prev(batch.size(), decoder_vocab_.go());
        for (std::size_t k = 0; k < kMaxDecodeSteps; ++k) {
          out.probs.push_back(decoder_step(b, mem, dec, prev));
          std::vector<int> gold;
          for (const auto* ex : batch) gold.push_back(decoder_target(ex->target, k));
          prev = gold;
          out.gold.push_back(std::move(gold));
        }
        break;
      }
    }
    return out;
  }

  /// Class id of slot s's value within its vocabulary.
  int slot_target(const GoalState& g, std::size_t s) const {
    if (auto id = slots_[s].find(g.values[s])) return *id;
    throw IndexError("gold " + std::string(kSlotNames[s]) + " value '" + g.values[s] +
                     "' is not in the slot vocabulary");
  }

  /// Index in the joint triple vocabulary, or -1 if absent.
  int find_triple(const GoalState& g) const {
    const auto it = std::lower_bound(triples_.begin(), triples_.end(), g);
    if (it == triples_.end() || !(*it == g)) return -1;
    return static_cast<int>(it - triples_.begin());
  }

  /// Gold decoder token at step k: food, area, pricerange, <eos>.
  int decoder_target(const GoalState& g, std::size_t k) const {
    if (k >= kGoalSlots) return decoder_vocab_.eos();
    slot_target(g, k);  // validates membership
    return decoder_vocab_.id(g.values[k]);
  }

 private:
  static int argmax(const std::vector<T>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }

  void require_kind(ModelKind k, const char* op) const {
    if (config_.kind != k) {
      throw ConfigError(std::string(op) + " called on a " + to_string(config_.kind) + " model");
    }
  }

  int triple_id(const GoalState& g) const {
    const int id = find_triple(g);
    if (id < 0) throw IndexError("target triple (" + g.to_string() + ") not in the joint vocabulary");
    return id;
  }

  ad::Var<T> cut_rows(ad::Tape<T>& tape, ad::Var<T> h, std::span<const std::size_t> cut_at,
                      std::size_t t) const {
    const std::size_t batch = cut_at.size();
    bool any = false, all = true;
    for (std::size_t r = 0; r < batch; ++r) {
      const bool cut = t > 0 && cut_at[r] == t;
      any = any || cut;
      all = all && cut;
    }
    if (!any) return h;
    const auto frozen = tape.detach(h);
    if (all) return frozen;
    BasicTensor<T> sel({batch, config_.hidden_dim});
    BasicTensor<T> rest({batch, config_.hidden_dim});
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t c = 0; c < config_.hidden_dim; ++c) {
        sel(r, c) = cut_at[r] == t ? T(1) : T(0);
        rest(r, c) = T(1) - sel(r, c);
      }
    return frozen * tape.constant(std::move(sel)) + h * tape.constant(std::move(rest));
  }

  /// One decoder step: attend with the previous decoder state, feed
  /// [embedding(prev) ; context] to the decoder GRU, project [state ; context].
  ad::Var<T> decoder_step(const Bound& b, const typename Attention<T>::Memory& mem,
                          ad::Var<T>& dec, std::span<const int> prev) const {
    const auto ctx = attention<T>(dec, mem, b.attention).context;
    const auto x = ad::concat<T>({embed(b.dec_embedding, prev), ctx}, 1);
    dec = gru_step(x, dec, b.decoder);
    return dense_softmax(ad::concat<T>({dec, ctx}, 1), b.output);
  }

  ModelConfig config_;
  Vocabulary words_;
  SlotVocabularies slots_;
  std::vector<GoalState> triples_;  // sorted
  DecoderVocabulary decoder_vocab_;
  ParameterStore<T> params_;
  Embedding<T> embedding_;
  GruCell<T> encoder_;
  std::array<Dense<T>, kGoalSlots> heads_;
  Dense<T> joint_;
  Embedding<T> dec_embedding_;
  GruCell<T> decoder_;
  Attention<T> attention_;
  Dense<T> output_;
};

using Tracker = TrackerModel<float>;

/// Sorted distinct target triples of the training examples.
inline std::vector<GoalState> build_triple_vocabulary(const std::vector<TrainingExample>& examples) {
  std::set<GoalState> seen;
  for (const auto& ex : examples) seen.insert(ex.target);
  return {seen.begin(), seen.end()};
}

/// Word-by-word tracking over a frozen model. Sessions are independent; many
/// may share one model.
template <class T>
class TrackerSession {
 public:
  TrackerSession(const TrackerModel<T>& model, const Database& db)
      : model_(&model), db_(&db), state_(model.initial_state()) {}

  /// Feeds one (already tokenized) word and returns the current estimate.
  GoalState track_word(const std::string& word, Role role) {
    role_ = role;
    model_->advance(state_, featurize_word(word, role, *db_, model_->words()));
    ++words_consumed_;
    return current();
  }

  GoalState current() const { return model_->predict(state_).state; }

  void reset() {
    state_ = model_->initial_state();
    words_consumed_ = 0;
    role_ = Role::system;
  }

  const EncoderState<T>& state() const { return state_; }
  std::size_t words_consumed() const { return words_consumed_; }
  Role role() const { return role_; }

 private:
  const TrackerModel<T>* model_;
  const Database* db_;
  EncoderState<T> state_;
  std::size_t words_consumed_ = 0;
  Role role_ = Role::system;
};

}  // namespace dst
