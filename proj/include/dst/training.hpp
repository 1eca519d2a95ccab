// SPDX-License-Identifier: Apache-2.0
//
// Cross-entropy training over per-turn full-history examples with Adam,
// length-bucketed mini-batches and top-k early stopping.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dst/data.hpp"
#include "dst/evaluation.hpp"
#include "dst/models.hpp"
#include "dst/optim.hpp"

namespace dst {

enum class LossScope {
  full_history,  // gradients flow through the whole history
  last_turn      // history state is detached at the start of the final turn
};

inline std::string to_string(LossScope s) {
  return s == LossScope::full_history ? "full_history" : "last_turn";
}

inline LossScope parse_loss_scope(const std::string& s) {
  if (s == "full_history" || s == "full") return LossScope::full_history;
  if (s == "last_turn" || s == "last") return LossScope::last_turn;
  throw ConfigError("unknown loss scope '" + s + "' (expected full_history or last_turn)");
}

struct TrainConfig {
  std::size_t batch_size = 10;
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 100;
  double dropout_keep = 0.7;
  std::size_t n_buckets = 10;
  std::size_t max_epochs = 40;
  std::size_t patience_epochs = 4;
  std::size_t top_k = 3;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  LossScope loss_scope = LossScope::full_history;
  double clip_norm = 0.0;  // 0 disables; 5.0 is the suggested value
  std::size_t min_count = 1;

  void validate() const {
    if (batch_size == 0 || embed_dim == 0 || hidden_dim == 0 || n_buckets == 0 ||
        max_epochs == 0 || patience_epochs == 0 || top_k == 0) {
      throw ConfigError("training sizes and counts must be positive");
    }
    if (!(dropout_keep > 0.0) || dropout_keep > 1.0) {
      throw ConfigError("dropout keep probability must lie in (0, 1]");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},     {"embed_dim", embed_dim},
            {"hidden_dim", hidden_dim},     {"dropout_keep", dropout_keep},
            {"n_buckets", n_buckets},       {"max_epochs", max_epochs},
            {"patience_epochs", patience_epochs}, {"top_k", top_k},
            {"learning_rate", learning_rate}, {"seed", seed},
            {"loss_scope", to_string(loss_scope)}, {"clip_norm", clip_norm},
            {"min_count", min_count}};
  }

  /// Overrides fields present in `j`; unknown keys are rejected.
  void merge_json(const nlohmann::json& j) {
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") batch_size = value.get<std::size_t>();
      else if (key == "embed_dim") embed_dim = value.get<std::size_t>();
      else if (key == "hidden_dim") hidden_dim = value.get<std::size_t>();
      else if (key == "dropout_keep") dropout_keep = value.get<double>();
      else if (key == "n_buckets") n_buckets = value.get<std::size_t>();
      else if (key == "max_epochs") max_epochs = value.get<std::size_t>();
      else if (key == "patience_epochs") patience_epochs = value.get<std::size_t>();
      else if (key == "top_k") top_k = value.get<std::size_t>();
      else if (key == "learning_rate") learning_rate = value.get<double>();
      else if (key == "seed") seed = value.get<std::uint64_t>();
      else if (key == "loss_scope") loss_scope = parse_loss_scope(value.get<std::string>());
      else if (key == "clip_norm") clip_norm = value.get<double>();
      else if (key == "min_count") min_count = value.get<std::size_t>();
      else throw ConfigError("unknown training config key '" + key + "'");
    }
  }
};

/// Top-k dev accuracies for early stopping.
///
/// While fewer than k entries are held every result enters. Once full, a
/// result enters only if it beats the current k-th entry and ties no entry
/// already held; the lowest entry then drops out. Any change resets the
/// patience counter, otherwise it increments.
class EarlyStopTracker {
 public:
  struct Entry {
    double accuracy = 0.0;
    std::size_t epoch = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  struct Update {
    bool changed = false;
    bool entered = false;
    std::vector<std::size_t> evicted;  // epochs that left the top-k
    bool stop = false;
  };

  EarlyStopTracker(std::size_t top_k = 3, std::size_t patience = 4)
      : top_k_(top_k), patience_(patience) {}

  Update update(double accuracy, std::size_t epoch) {
    Update u;
    const bool ties = std::any_of(entries_.begin(), entries_.end(),
                                  [&](const Entry& e) { return e.accuracy == accuracy; });
    if (entries_.size() < top_k_) {
      u.entered = true;
    } else if (accuracy > entries_.back().accuracy && !ties) {
      u.entered = true;
      u.evicted.push_back(entries_.back().epoch);
      entries_.pop_back();
    }
    if (u.entered) {
      // Stable position: after every entry with accuracy >= this one.
      const auto pos = std::find_if(entries_.begin(), entries_.end(),
                                    [&](const Entry& e) { return e.accuracy < accuracy; });
      entries_.insert(pos, {accuracy, epoch});
      epochs_since_change_ = 0;
      u.changed = true;
    } else {
      ++epochs_since_change_;
    }
    u.stop = epochs_since_change_ >= patience_;
    return u;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t epochs_since_change() const { return epochs_since_change_; }
  const Entry& best() const { return entries_.front(); }

 private:
  std::size_t top_k_;
  std::size_t patience_;
  std::vector<Entry> entries_;
  std::size_t epochs_since_change_ = 0;
};

template <class T>
std::vector<Parameter<T>*> parameter_list(TrackerModel<T>& model) {
  std::vector<Parameter<T>*> out;
  for (auto& p : model.params().all()) out.push_back(&p);
  return out;
}

/// Summed cross-entropy of a batch forward, rows weighted by `weights`
/// (empty = all ones).
template <class T>
ad::Var<T> batch_loss(const BatchOutput<T>& out, std::span<const T> weights = {}) {
  ad::Var<T> total;
  for (std::size_t k = 0; k < out.probs.size(); ++k) {
    const auto ce = cross_entropy<T>(out.probs[k], out.gold[k], weights);
    total = total.valid() ? total + ce : ce;
  }
  return total;
}

/// Loss of a single example (batch of one).
template <class T>
ad::Var<T> turn_loss(ad::Tape<T>& tape, const TrackerModel<T>& model,
                     const typename TrackerModel<T>::Bound& bound, const TrainingExample& example,
                     Mode mode, Rng& rng, LossScope scope = LossScope::full_history) {
  const TrainingExample* one[] = {&example};
  const auto out = model.forward_batch(tape, bound, one, mode, rng, scope == LossScope::last_turn);
  return batch_loss(out);
}

/// Per-example losses of a batch, read from the forward values.
template <class T>
std::vector<double> example_losses(const BatchOutput<T>& out) {
  const std::size_t rows = out.gold.front().size();
  std::vector<double> losses(rows, 0.0);
  for (std::size_t k = 0; k < out.probs.size(); ++k) {
    const auto& p = out.probs[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = p(r, static_cast<std::size_t>(out.gold[k][r]));
      losses[r] -= std::log(std::max(v, ad::kProbabilityFloor));
    }
  }
  return losses;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::vector<EarlyStopTracker::Entry> top;

  nlohmann::json to_json() const {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& e : top) t.push_back({{"epoch", e.epoch}, {"dev_accuracy", e.accuracy}});
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"dev_accuracy", dev_accuracy},
            {"wall_seconds", wall_seconds},
            {"top", t}};
  }
};

template <class T>
struct TrainResult {
  std::unique_ptr<TrackerModel<T>> model;  // restored to the best-dev epoch
  double best_dev_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;
};

/// Shuffles within each bucket, cuts batches, then shuffles the batch order.
/// Bucket membership never changes.
inline std::vector<std::vector<std::size_t>> make_batches(std::vector<Bucket>& buckets,
                                                          std::size_t batch_size, Rng& rng) {
  std::vector<std::vector<std::size_t>> batches;
  for (auto& b : buckets) {
    rng.shuffle(b.examples);
    for (std::size_t i = 0; i < b.examples.size(); i += batch_size) {
      const std::size_t end = std::min(i + batch_size, b.examples.size());
      batches.emplace_back(b.examples.begin() + static_cast<std::ptrdiff_t>(i),
                           b.examples.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  rng.shuffle(batches);
  return batches;
}

template <class T = float>
TrainResult<T> train(ModelKind kind, const std::vector<Dialogue>& train_set,
                     const std::vector<Dialogue>& dev_set, const Database& db,
                     const Ontology& ontology, const TrainConfig& config,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  const Vocabularies vocab = build_vocabularies(train_set, ontology, config.min_count);
  const std::vector<TrainingExample> examples = build_examples(train_set, db, vocab.words);
  std::vector<GoalState> triples;
  if (kind == ModelKind::joint) triples = build_triple_vocabulary(examples);

  TrainResult<T> result;
  result.model = std::make_unique<TrackerModel<T>>(
      ModelConfig{kind, config.embed_dim, config.hidden_dim, config.dropout_keep, config.seed},
      vocab.words, vocab.slots, triples);
  TrackerModel<T>& model = *result.model;
  check_vocabulary(model, dev_set);

  auto params = parameter_list(model);
  AdamState<T> adam(AdamConfig{config.learning_rate}, params);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Bucket> buckets = bucket_examples(examples, config.n_buckets);
  EarlyStopTracker stopper(config.top_k, config.patience_epochs);
  std::map<std::size_t, std::vector<BasicTensor<T>>> snapshots;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (const auto& batch_ids : make_batches(buckets, config.batch_size, rng)) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t i : batch_ids) batch.push_back(&examples[i]);
      ad::Tape<T> tape;
      const auto bound = model.bind(tape, true);
      const auto out = model.forward_batch(tape, bound, batch, Mode::train, rng,
                                           config.loss_scope == LossScope::last_turn);
      const auto total = batch_loss(out);
      loss_sum += static_cast<double>(total.value()[0]);
      const auto loss = ad::scale(total, T(1) / static_cast<T>(batch.size()));
      model.params().zero_grad();
      tape.backward(loss);
      if (config.clip_norm > 0.0) clip_global_norm<T>(params, config.clip_norm);
      adam_step<T>(params, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(examples.size());
    rec.dev_accuracy = evaluate(model, dev_set, db).joint_goal_accuracy;
    if (!std::isfinite(rec.dev_accuracy) || !std::isfinite(rec.train_loss)) {
      throw NumericError("non-finite training loss or dev accuracy at epoch " +
                         std::to_string(epoch));
    }
    const auto u = stopper.update(rec.dev_accuracy, epoch);
    if (u.entered) {
      std::vector<BasicTensor<T>> snap;
      for (const auto* p : params) snap.push_back(p->value);
      snapshots[epoch] = std::move(snap);
    }
    for (std::size_t e : u.evicted) snapshots.erase(e);
    rec.top = stopper.entries();
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (u.stop) break;
  }

  result.best_epoch = stopper.best().epoch;
  result.best_dev_accuracy = stopper.best().accuracy;
  const auto& best = snapshots.at(result.best_epoch);
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  return result;
}

}  // namespace dst
