// SPDX-License-Identifier: Apache-2.0
//
// DSTC2-layout ingestion, goal labels, per-turn full-history examples,
// vocabularies, length buckets, re-splitting and label statistics.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dst/error.hpp"
#include "dst/features.hpp"
#include "dst/random.hpp"

namespace dst {

inline constexpr std::size_t kGoalSlots = 3;
/// Canonical slot order, also the decoder's output order.
inline constexpr std::array<std::string_view, kGoalSlots> kSlotNames = {"food", "area",
                                                                       "pricerange"};
inline constexpr std::string_view kNone = "none";
inline constexpr std::string_view kDontcare = "dontcare";

struct DialogueActItem {
  std::string act_type;
  std::string slot_name;
  std::optional<std::string> slot_value;

  friend bool operator==(const DialogueActItem&, const DialogueActItem&) = default;
};

/// The tracked (food, area, pricerange) triple. Untracked slots hold "none".
struct GoalState {
  std::array<std::string, kGoalSlots> values{std::string(kNone), std::string(kNone),
                                             std::string(kNone)};

  GoalState() = default;
  GoalState(std::string food, std::string area, std::string pricerange)
      : values{std::move(food), std::move(area), std::move(pricerange)} {}

  const std::string& food() const { return values[0]; }
  const std::string& area() const { return values[1]; }
  const std::string& pricerange() const { return values[2]; }

  bool any_tracked() const {
    return std::any_of(values.begin(), values.end(), [](const auto& v) { return v != kNone; });
  }

  /// inform items for every tracked slot.
  std::vector<DialogueActItem> items() const {
    std::vector<DialogueActItem> out;
    for (std::size_t s = 0; s < kGoalSlots; ++s)
      if (values[s] != kNone) out.push_back({"inform", std::string(kSlotNames[s]), values[s]});
    return out;
  }

  std::string to_string() const {
    return "food=" + values[0] + " area=" + values[1] + " pricerange=" + values[2];
  }

  friend bool operator==(const GoalState&, const GoalState&) = default;
  friend auto operator<=>(const GoalState& a, const GoalState& b) { return a.values <=> b.values; }
};

struct Turn {
  std::size_t turn_index = 0;
  std::vector<std::string> system_words;
  std::vector<std::string> user_words;  // ASR 1-best
  GoalState gold;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

/// Informable values per goal slot, in file order.
struct Ontology {
  std::array<std::vector<std::string>, kGoalSlots> values;

  static Ontology from_json(const nlohmann::json& doc) {
    const auto inf = doc.find("informable");
    if (inf == doc.end() || !inf->is_object()) {
      throw ConfigError("ontology: missing 'informable' object");
    }
    Ontology o;
    for (std::size_t s = 0; s < kGoalSlots; ++s) {
      const auto it = inf->find(std::string(kSlotNames[s]));
      if (it == inf->end() || !it->is_array()) {
        throw ConfigError("ontology: goal slot '" + std::string(kSlotNames[s]) + "' missing");
      }
      for (const auto& v : *it) o.values[s].push_back(normalize_value(v.get<std::string>()));
    }
    return o;
  }

  static Ontology load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open ontology file " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("ontology file " + path + ": " + e.what());
    }
    return from_json(doc);
  }

  nlohmann::json to_json() const {
    nlohmann::json inf;
    for (std::size_t s = 0; s < kGoalSlots; ++s) inf[std::string(kSlotNames[s])] = values[s];
    return {{"informable", inf}};
  }
};

/// Per-slot value list: none, dontcare, then the ontology values.
class SlotVocabulary {
 public:
  SlotVocabulary() = default;
  explicit SlotVocabulary(std::vector<std::string> values) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.size(); ++i) ids_.emplace(values_[i], static_cast<int>(i));
  }

  static SlotVocabulary from_ontology(const std::vector<std::string>& ontology_values) {
    std::vector<std::string> v{std::string(kNone), std::string(kDontcare)};
    for (const auto& x : ontology_values)
      if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
    return SlotVocabulary(std::move(v));
  }

  std::optional<int> find(const std::string& value) const {
    const auto it = ids_.find(value);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  int id(const std::string& value) const {
    if (auto i = find(value)) return *i;
    throw IndexError("value '" + value + "' is not in the slot vocabulary");
  }

  bool contains(const std::string& value) const { return ids_.contains(value); }
  const std::string& value(int i) const { return values_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& values() const { return values_; }

  friend bool operator==(const SlotVocabulary& a, const SlotVocabulary& b) {
    return a.values_ == b.values_;
  }

 private:
  std::vector<std::string> values_;
  std::map<std::string, int> ids_;
};

using SlotVocabularies = std::array<SlotVocabulary, kGoalSlots>;

struct Vocabularies {
  Vocabulary words;
  SlotVocabularies slots;
};

struct TrainingExample {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::vector<TokenInput> tokens;            // turns 0..t, system then user words
  std::vector<std::size_t> turn_boundaries;  // token offset after each turn
  GoalState target;

  /// Offset of the first token of the final turn.
  std::size_t last_turn_start() const {
    return turn_boundaries.size() < 2 ? 0 : turn_boundaries[turn_boundaries.size() - 2];
  }
};

/// Which ASR hypothesis list supplies the user's 1-best transcription.
enum class AsrSource { live, batch };

namespace detail {

inline nlohmann::json read_json(const std::filesystem::path& path, const std::string& call_id) {
  std::ifstream in(path);
  if (!in) throw LoadError("call " + call_id + ": missing file " + path.string());
  try {
    nlohmann::json doc;
    in >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline std::string one_best(const nlohmann::json& turn, AsrSource source) {
  const auto input = turn.find("input");
  if (input == turn.end()) return {};
  const auto src = input->find(source == AsrSource::live ? "live" : "batch");
  if (src == input->end()) return {};
  const auto hyps = src->find("asr-hyps");
  if (hyps == src->end() || !hyps->is_array() || hyps->empty()) return {};
  return hyps->front().value("asr-hyp", std::string());
}

}  // namespace detail

/// Loads one call directory (log.json + label.json).
inline Dialogue load_dstc2_call(const std::filesystem::path& dir, const std::string& call_id,
                                AsrSource source = AsrSource::live) {
  const auto log = detail::read_json(dir / "log.json", call_id);
  const auto label = detail::read_json(dir / "label.json", call_id);
  const std::string log_path = (dir / "log.json").string();
  const std::string label_path = (dir / "label.json").string();
  if (!log.contains("turns") || !log["turns"].is_array()) {
    throw ParseError(log_path + ": missing 'turns' array");
  }
  if (!label.contains("turns") || !label["turns"].is_array()) {
    throw ParseError(label_path + ": missing 'turns' array");
  }
  const auto& log_turns = log["turns"];
  const auto& label_turns = label["turns"];
  if (log_turns.size() != label_turns.size()) {
    throw ParseError(label_path + ": " + std::to_string(label_turns.size()) +
                     " label turns for " + std::to_string(log_turns.size()) + " log turns");
  }
  if (log_turns.empty()) throw ParseError(log_path + ": dialogue has no turns");

  Dialogue d;
  d.id = log.value("session-id", call_id);
  GoalState carried;
  for (std::size_t t = 0; t < log_turns.size(); ++t) {
    const auto& lt = log_turns[t];
    const auto& bt = label_turns[t];
    try {
      Turn turn;
      turn.turn_index = t;
      if (lt.contains("output")) {
        turn.system_words = tokenize(lt["output"].value("transcript", std::string()));
      }
      turn.user_words = tokenize(detail::one_best(lt, source));
      if (const auto gl = bt.find("goal-labels"); gl != bt.end()) {
        if (!gl->is_object()) throw ParseError("'goal-labels' is not an object");
        for (std::size_t s = 0; s < kGoalSlots; ++s) {
          const auto it = gl->find(std::string(kSlotNames[s]));
          if (it != gl->end()) carried.values[s] = normalize_value(it->get<std::string>());
        }
      }
      turn.gold = carried;
      d.turns.push_back(std::move(turn));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(label_path + " turn " + std::to_string(t) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(label_path + " turn " + std::to_string(t) + ": " + e.what());
    }
  }
  return d;
}

inline std::vector<std::string> read_file_list(const std::filesystem::path& file_list) {
  std::ifstream in(file_list);
  if (!in) throw LoadError("cannot open file list " + file_list.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    while (!line.empty() && line.back() == '/') line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    line.erase(0, b);
    if (line.empty() || line.front() == '#') continue;
    ids.push_back(line);
  }
  return ids;
}

inline void write_file_list(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write file list " + path.string());
  for (const auto& id : ids) out << id << '\n';
}

/// Loads every call named in `file_list`; entries are paths relative to
/// `data_root`.
inline std::vector<Dialogue> load_dstc2(const std::filesystem::path& data_root,
                                        const std::filesystem::path& file_list,
                                        AsrSource source = AsrSource::live) {
  std::vector<Dialogue> out;
  for (const auto& id : read_file_list(file_list)) {
    const auto dir = data_root / id;
    if (!std::filesystem::is_directory(dir)) {
      throw LoadError("call " + id + ": directory not found under " + data_root.string());
    }
    out.push_back(load_dstc2_call(dir, id, source));
  }
  return out;
}

/// Writes a dialogue in DSTC2 layout; words are joined with spaces.
inline void write_dstc2_call(const std::filesystem::path& dir, const Dialogue& d) {
  std::filesystem::create_directories(dir);
  const auto join = [](const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return s;
  };
  nlohmann::json log{{"session-id", d.id}, {"turns", nlohmann::json::array()}};
  nlohmann::json label{{"session-id", d.id}, {"turns", nlohmann::json::array()}};
  for (const auto& t : d.turns) {
    nlohmann::json hyp{{"asr-hyp", join(t.user_words)}, {"score", 0.0}};
    log["turns"].push_back(
        {{"turn-index", t.turn_index},
         {"output", {{"transcript", join(t.system_words)}}},
         {"input", {{"live", {{"asr-hyps", nlohmann::json::array({hyp})}}},
                    {"batch", {{"asr-hyps", nlohmann::json::array({hyp})}}}}}});
    nlohmann::json goal = nlohmann::json::object();
    for (std::size_t s = 0; s < kGoalSlots; ++s)
      if (t.gold.values[s] != kNone) goal[std::string(kSlotNames[s])] = t.gold.values[s];
    label["turns"].push_back({{"turn-index", t.turn_index},
                              {"transcription", join(t.user_words)},
                              {"goal-labels", goal}});
  }
  std::ofstream(dir / "log.json") << log.dump(2) << '\n';
  std::ofstream(dir / "label.json") << label.dump(2) << '\n';
}

/// One example per turn: the featurized history through that turn, system
/// words before user words within each turn.
inline std::vector<TrainingExample> build_examples(const Dialogue& d, const Database& db,
                                                   const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  std::vector<TokenInput> history;
  std::vector<std::size_t> boundaries;
  for (const auto& turn : d.turns) {
    for (auto& tok : featurize_turn(turn.system_words, Role::system, db, vocab))
      history.push_back(tok);
    for (auto& tok : featurize_turn(turn.user_words, Role::user, db, vocab))
      history.push_back(tok);
    boundaries.push_back(history.size());
    TrainingExample ex;
    ex.dialogue_id = d.id;
    ex.turn_index = turn.turn_index;
    ex.tokens = history;
    ex.turn_boundaries = boundaries;
    ex.target = turn.gold;
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TrainingExample> build_examples(const std::vector<Dialogue>& dialogues,
                                                   const Database& db, const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  for (const auto& d : dialogues)
    for (auto& ex : build_examples(d, db, vocab)) out.push_back(std::move(ex));
  return out;
}

/// Word vocabulary from training dialogues only; slot vocabularies from the
/// ontology plus none and dontcare.
inline Vocabularies build_vocabularies(const std::vector<Dialogue>& train, const Ontology& ontology,
                                       std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : train)
    for (const auto& t : d.turns) {
      for (const auto& w : t.system_words) ++counts[w];
      for (const auto& w : t.user_words) ++counts[w];
    }
  Vocabularies v;
  v.words = Vocabulary::from_counts(counts, min_count);
  for (std::size_t s = 0; s < kGoalSlots; ++s) {
    if (ontology.values[s].empty()) {
      throw ConfigError("ontology has no values for goal slot " + std::string(kSlotNames[s]));
    }
    v.slots[s] = SlotVocabulary::from_ontology(ontology.values[s]);
  }
  return v;
}

/// Examples whose token count lies in (min_exclusive, max_inclusive].
struct Bucket {
  std::size_t min_exclusive = 0;
  std::size_t max_inclusive = 0;
  std::vector<std::size_t> examples;  // indices into the example list
};

/// Equal-frequency length buckets with boundaries at length quantiles.
/// Duplicate boundaries merge, so fewer than n_buckets may come back.
inline std::vector<Bucket> bucket_examples(const std::vector<std::size_t>& lengths,
                                           std::size_t n_buckets) {
  if (lengths.empty()) throw ConfigError("cannot bucket an empty example list");
  if (n_buckets == 0) throw ConfigError("bucket count must be positive");
  std::vector<std::size_t> sorted = lengths;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<std::size_t> upper;
  for (std::size_t k = 1; k < n_buckets; ++k) {
    const std::size_t rank = (k * n) / n_buckets;
    if (rank == 0) continue;
    const std::size_t b = sorted[rank - 1];
    if (upper.empty() || b > upper.back()) upper.push_back(b);
  }
  if (upper.empty() || upper.back() < sorted.back()) upper.push_back(sorted.back());

  std::vector<Bucket> buckets(upper.size());
  std::size_t lo = 0;
  for (std::size_t k = 0; k < upper.size(); ++k) {
    buckets[k].min_exclusive = k == 0 ? (sorted.front() > 0 ? sorted.front() - 1 : 0) : lo;
    buckets[k].max_inclusive = upper[k];
    lo = upper[k];
  }
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const auto it = std::lower_bound(upper.begin(), upper.end(), lengths[i]);
    buckets[static_cast<std::size_t>(it - upper.begin())].examples.push_back(i);
  }
  std::erase_if(buckets, [](const Bucket& b) { return b.examples.empty(); });
  return buckets;
}

inline std::vector<Bucket> bucket_examples(const std::vector<TrainingExample>& examples,
                                           std::size_t n_buckets) {
  std::vector<std::size_t> lengths;
  lengths.reserve(examples.size());
  for (const auto& ex : examples) lengths.push_back(ex.tokens.size());
  return bucket_examples(lengths, n_buckets);
}

struct Split {
  std::vector<Dialogue> train, dev, test;
};

struct SplitSizes {
  std::size_t train = 0, dev = 0, test = 0;
};

/// Floor allocation for dev and test; the remainder goes to train.
inline SplitSizes split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  for (double r : ratios)
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-6) {
    throw ConfigError("split ratios must sum to 1");
  }
  SplitSizes s;
  s.dev = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
  s.test = static_cast<std::size_t>(std::floor(ratios[2] * static_cast<double>(n) + 1e-9));
  s.train = n - s.dev - s.test;
  return s;
}

/// Dialogue-level seeded random partition.
template <class Item>
std::array<std::vector<Item>, 3> resplit_items(std::vector<Item> all,
                                               const std::array<double, 3>& ratios,
                                               std::uint64_t seed) {
  if (all.empty()) throw ConfigError("cannot re-split an empty dialogue set");
  const SplitSizes sizes = split_sizes(all.size(), ratios);
  Rng rng(seed);
  rng.shuffle(all);
  std::array<std::vector<Item>, 3> parts;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::size_t part = i < sizes.train ? 0 : (i < sizes.train + sizes.dev ? 1 : 2);
    parts[part].push_back(std::move(all[i]));
  }
  return parts;
}

inline Split resplit(std::vector<Dialogue> all, const std::array<double, 3>& ratios,
                     std::uint64_t seed) {
  auto parts = resplit_items(std::move(all), ratios, seed);
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

struct TripleCount {
  GoalState triple;
  std::size_t count = 0;
};

struct TripleHistogram {
  std::vector<TripleCount> entries;  // ascending by count, ties by triple
  std::size_t unseen_distinct = 0;   // distinct held-out triples absent from train
  std::size_t unseen_turns = 0;      // held-out turns whose triple is absent from train
};

inline std::map<GoalState, std::size_t> count_triples(const std::vector<Dialogue>& dialogues) {
  std::map<GoalState, std::size_t> counts;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns) ++counts[t.gold];
  return counts;
}

inline std::vector<TripleCount> sorted_ascending(const std::map<GoalState, std::size_t>& counts) {
  std::vector<TripleCount> out;
  for (const auto& [triple, n] : counts) out.push_back({triple, n});
  std::stable_sort(out.begin(), out.end(),
                   [](const TripleCount& a, const TripleCount& b) { return a.count < b.count; });
  return out;
}

inline std::vector<TripleCount> triple_frequency(const std::vector<TrainingExample>& examples) {
  std::map<GoalState, std::size_t> counts;
  for (const auto& ex : examples) ++counts[ex.target];
  return sorted_ascending(counts);
}

/// Histogram of training triples plus held-out triples never seen in train.
inline TripleHistogram triple_frequency(const std::vector<Dialogue>& train,
                                        const std::vector<Dialogue>& held_out) {
  TripleHistogram h;
  const auto train_counts = count_triples(train);
  h.entries = sorted_ascending(train_counts);
  for (const auto& [triple, n] : count_triples(held_out)) {
    if (train_counts.contains(triple)) continue;
    ++h.unseen_distinct;
    h.unseen_turns += n;
  }
  return h;
}

/// Token count of the full history at each turn.
inline std::vector<std::size_t> history_lengths(const std::vector<Dialogue>& dialogues) {
  std::vector<std::size_t> out;
  for (const auto& d : dialogues) {
    std::size_t n = 0;
    for (const auto& t : d.turns) {
      n += t.system_words.size() + t.user_words.size();
      out.push_back(n);
    }
  }
  return out;
}

/// Nearest-rank percentile, p in (0, 100].
inline std::size_t percentile(std::vector<std::size_t> values, double p) {
  if (values.empty()) return 0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

}  // namespace dst
