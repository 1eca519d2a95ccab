// SPDX-License-Identifier: Apache-2.0
//
// Schedule-2 goal accuracy.
//
// Default (joint onset): a turn is scored once any goal slot has a non-none
// gold value at or before it; joint and per-slot accuracy share that turn set.
// Per-slot onset: each slot's accuracy is scored from the first turn where that
// slot's own gold value is set; joint accuracy keeps the joint-onset turn set.
#pragma once

#include <array>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dst/data.hpp"
#include "dst/models.hpp"

namespace dst {

enum class ScheduleMode { joint_onset, per_slot_onset };

/// Scored-turn flags for one dialogue under the joint-onset rule.
inline std::vector<bool> schedule2_mask(const std::vector<GoalState>& golds) {
  std::vector<bool> scored(golds.size(), false);
  bool on = false;
  for (std::size_t t = 0; t < golds.size(); ++t) {
    on = on || golds[t].any_tracked();
    scored[t] = on;
  }
  return scored;
}

inline std::set<std::size_t> schedule2_scored_turns(const std::vector<GoalState>& golds) {
  std::set<std::size_t> out;
  const auto mask = schedule2_mask(golds);
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) out.insert(t);
  return out;
}

inline std::vector<GoalState> gold_states(const Dialogue& d) {
  std::vector<GoalState> out;
  for (const auto& t : d.turns) out.push_back(t.gold);
  return out;
}

/// Fraction of scored turns with all three slots correct (0 when none scored).
inline double joint_accuracy(const std::vector<GoalState>& predictions,
                             const std::vector<GoalState>& golds,
                             const std::set<std::size_t>& scored) {
  if (predictions.size() != golds.size()) {
    throw DimensionError("joint_accuracy: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(golds.size()) + " gold turns");
  }
  if (scored.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t t : scored) {
    if (t >= golds.size()) throw IndexError("scored turn index out of range");
    if (predictions[t] == golds[t]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scored.size());
}

struct EvaluationReport {
  double joint_goal_accuracy = 0.0;
  std::array<double, kGoalSlots> per_slot_accuracy{};
  std::size_t n_scored_turns = 0;
  std::size_t n_skipped_turns = 0;
  std::size_t n_valid_sequences = 0;  // encdec: structurally valid decodes
  std::size_t n_decoded = 0;          // encdec: total decodes
  std::string dataset_id;
  std::string model_id;

  double structural_validity() const {
    return n_decoded == 0 ? 0.0 : static_cast<double>(n_valid_sequences) / static_cast<double>(n_decoded);
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"dataset", dataset_id},
                     {"model", model_id},
                     {"joint_goal_accuracy", joint_goal_accuracy},
                     {"scored_turns", n_scored_turns},
                     {"skipped_turns", n_skipped_turns}};
    for (std::size_t s = 0; s < kGoalSlots; ++s)
      j["per_slot_accuracy"][std::string(kSlotNames[s])] = per_slot_accuracy[s];
    if (n_decoded > 0) j["structural_validity"] = structural_validity();
    return j;
  }

  /// Aligned one-row table: model, dataset, joint and per-slot accuracy.
  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "Model" << std::setw(14) << "Set" << std::right
       << std::setw(8) << "Joint" << std::setw(8) << "Food" << std::setw(8) << "Area"
       << std::setw(8) << "Price" << std::setw(9) << "Scored" << '\n';
    os << std::left << std::setw(10) << model_id << std::setw(14) << dataset_id << std::right
       << std::fixed << std::setprecision(3) << std::setw(8) << joint_goal_accuracy;
    for (double a : per_slot_accuracy) os << std::setw(8) << a;
    os << std::setw(9) << n_scored_turns << '\n';
    return os.str();
  }
};

/// Aggregates per-dialogue predictions against gold labels.
class ScoreAccumulator {
 public:
  explicit ScoreAccumulator(ScheduleMode mode = ScheduleMode::joint_onset) : mode_(mode) {}

  void add_dialogue(const std::vector<GoalState>& predictions, const std::vector<GoalState>& golds) {
    if (predictions.size() != golds.size()) {
      throw DimensionError("prediction/gold length mismatch");
    }
    const auto joint_mask = schedule2_mask(golds);
    std::array<bool, kGoalSlots> slot_on{};
    for (std::size_t t = 0; t < golds.size(); ++t) {
      ++total_;
      if (joint_mask[t]) {
        ++scored_;
        if (predictions[t] == golds[t]) ++joint_correct_;
      }
      for (std::size_t s = 0; s < kGoalSlots; ++s) {
        slot_on[s] = slot_on[s] || golds[t].values[s] != kNone;
        const bool scored = mode_ == ScheduleMode::joint_onset ? joint_mask[t] : slot_on[s];
        if (!scored) continue;
        ++slot_scored_[s];
        if (predictions[t].values[s] == golds[t].values[s]) ++slot_correct_[s];
      }
    }
  }

  void add_decode(bool valid) {
    ++decoded_;
    if (valid) ++valid_;
  }

  EvaluationReport report(std::string dataset_id = {}, std::string model_id = {}) const {
    EvaluationReport r;
    const auto ratio = [](std::size_t a, std::size_t b) {
      return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
    };
    r.joint_goal_accuracy = ratio(joint_correct_, scored_);
    for (std::size_t s = 0; s < kGoalSlots; ++s)
      r.per_slot_accuracy[s] = ratio(slot_correct_[s], slot_scored_[s]);
    r.n_scored_turns = scored_;
    r.n_skipped_turns = total_ - scored_;
    r.n_decoded = decoded_;
    r.n_valid_sequences = valid_;
    r.dataset_id = std::move(dataset_id);
    r.model_id = std::move(model_id);
    return r;
  }

 private:
  ScheduleMode mode_;
  std::size_t total_ = 0, scored_ = 0, joint_correct_ = 0;
  std::array<std::size_t, kGoalSlots> slot_scored_{}, slot_correct_{};
  std::size_t decoded_ = 0, valid_ = 0;
};

/// Per-turn predictions for one dialogue: the history is encoded once, word by
/// word, and the model's head is read at every turn end.
template <class T>
std::vector<Prediction<T>> predict_dialogue(const TrackerModel<T>& model, const Dialogue& d,
                                            const Database& db) {
  std::vector<Prediction<T>> out;
  EncoderState<T> state = model.initial_state();
  for (const auto& turn : d.turns) {
    for (const auto& tok : featurize_turn(turn.system_words, Role::system, db, model.words()))
      model.advance(state, tok);
    for (const auto& tok : featurize_turn(turn.user_words, Role::user, db, model.words()))
      model.advance(state, tok);
    out.push_back(model.predict(state));
  }
  return out;
}

/// Gold values must be known to the model's slot vocabularies.
template <class T>
void check_vocabulary(const TrackerModel<T>& model, const std::vector<Dialogue>& dialogues) {
  for (const auto& d : dialogues)
    for (const auto& t : d.turns)
      for (std::size_t s = 0; s < kGoalSlots; ++s)
        if (!model.slots()[s].contains(t.gold.values[s])) {
          throw ConfigError("vocabulary mismatch: gold " + std::string(kSlotNames[s]) + " value '" +
                            t.gold.values[s] + "' in dialogue " + d.id +
                            " is unknown to the model");
        }
}

template <class T>
EvaluationReport evaluate(const TrackerModel<T>& model, const std::vector<Dialogue>& dialogues,
                          const Database& db, ScheduleMode mode = ScheduleMode::joint_onset,
                          std::string dataset_id = {}) {
  check_vocabulary(model, dialogues);
  ScoreAccumulator acc(mode);
  for (const auto& d : dialogues) {
    const auto preds = predict_dialogue(model, d, db);
    std::vector<GoalState> states;
    for (const auto& p : preds) {
      states.push_back(p.state);
      if (model.kind() == ModelKind::encdec) acc.add_decode(is_structurally_valid(p.decoded, model.slots()));
    }
    acc.add_dialogue(states, gold_states(d));
  }
  return acc.report(std::move(dataset_id), to_string(model.kind()));
}

}  // namespace dst
